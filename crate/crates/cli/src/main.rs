use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stiffdiff::dataset::{Domain, GenConfig, DATA_ENV};
use stiffdiff::diffusion::{ScheduleKind, TrainConfig};
use stiffdiff::error::{Error, Result};
use stiffdiff::objectives::StiffnessSchedule;
use stiffdiff::scorenet::CoreKind;
use stiffdiff::Vec2;
use stiffdiff_cli::commands::{self, FitOptions, Mode};
use stiffdiff_cli::config::Config;
use stiffdiff_cli::harness::ModelSpec;

/// Stiffness-conditioned force prediction and robot-free stiffness optimization.
#[derive(Parser)]
#[command(name = "stiffdiff", version)]
struct Cli {
    /// Sectioned key=value file; each key mirrors a flag of its subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rollouts and sweep arms.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset root; overrides the STIFFDIFF_DATA environment variable.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Output directory (output file for `predict`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset and its manifest under the data root.
    GenData(GenArgs),
    /// Train a force model (`--steps-t 1` trains the regression baseline).
    Train(TrainArgs),
    /// Predict forces for one demonstration and stiffness schedule.
    Predict(PredictArgs),
    /// Optimize a stiffness schedule against the simulator or a trained model.
    Optimize(OptimizeArgs),
    /// Re-run an archive's front on the simulator and account the cost.
    Validate(ValidateArgs),
    /// Multi-run experiments emitting CSV tables and SVG plots.
    Report {
        #[command(subcommand)]
        kind: ReportCmd,
    },
    /// Architecture and noise-schedule ablations.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Test accuracy against the number of diffusion steps.
    #[command(name = "sweep-T", alias = "sweep-t")]
    SweepT(SweepArgs),
    /// Test accuracy against training-set size.
    DatasetSize(DatasetSizeArgs),
    /// Transfer to the shifted domain with and without adaptation.
    FineTune(FineTuneArgs),
    /// Robot-based against robot-free optimization cost and hypervolume.
    Table1(Table1Args),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    domain: Option<Domain>,
    #[arg(long)]
    skills: Option<usize>,
    #[arg(long)]
    val_skills: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Diffusion steps; 1 trains the single-pass baseline.
    #[arg(long)]
    steps_t: Option<usize>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    core: Option<CoreKind>,
    /// Token, hidden and embedding width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    bidirectional: Option<bool>,
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Fraction of the training split to keep.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    subsample_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Continue training from this checkpoint (keeps its architecture and normalization).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Demonstration to condition on.
    #[arg(long)]
    skill: Option<String>,
    /// Per-phase stiffness as `kx:kz` pairs, comma separated; one pair means constant.
    #[arg(long)]
    stiffness: Option<String>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    mode: Option<Mode>,
    /// Trial budget.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    skill: Option<String>,
    /// Suggestions scored per model call in robot-free mode.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    reference_seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Directory holding the archive and reference point written by `optimize`.
    #[arg(long)]
    archive: Option<PathBuf>,
    #[arg(long)]
    skill: Option<String>,
    /// Most front members re-run on the simulator.
    #[arg(long)]
    max: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Chain lengths, comma separated.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct DatasetSizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training fractions, comma separated; full data is always added.
    #[arg(long)]
    rates: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct FineTuneArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    shifted_root: Option<PathBuf>,
    #[arg(long)]
    tune_steps: Option<usize>,
    #[arg(long)]
    tune_lr: Option<f64>,
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    skill: Option<String>,
    #[arg(long)]
    robot_based_n: Option<usize>,
    #[arg(long)]
    robot_free_n: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max: Option<usize>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    reference_seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Cores for the architecture study, comma separated.
    #[arg(long)]
    cores: Option<String>,
    /// Noise schedules for the schedule study, comma separated.
    #[arg(long)]
    schedules: Option<String>,
    #[arg(long)]
    seeds: Option<u64>,
}

fn list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::InvalidConfig(format!("`{s}`: {e}"))))
        .collect()
}

struct Ctx {
    config: Config,
    seed: u64,
    data_root: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn data_root(&self) -> Result<PathBuf> {
        self.data_root
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("no dataset root: pass --data-root or set {DATA_ENV}")))
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn fit(&self, a: &ModelArgs, section: &str) -> Result<FitOptions> {
        let c = &self.config;
        let d = ModelSpec::default();
        let t = TrainConfig::default();
        let dim = c.pick(a.dim, section, "dim", d.hidden_dim)?;
        let spec = ModelSpec {
            steps_t: c.pick(a.steps_t, section, "steps-t", d.steps_t)?,
            schedule: c.pick(a.schedule, section, "schedule", d.schedule)?,
            core: c.pick(a.core, section, "core", d.core)?,
            token_dim: dim,
            hidden_dim: dim,
            embed_dim: dim,
            layers: c.pick(a.layers, section, "layers", d.layers)?,
            bidirectional: c.pick(a.bidirectional, section, "bidirectional", d.bidirectional)?,
        };
        let train = TrainConfig {
            steps: c.pick(a.steps, section, "steps", 2000)?,
            batch_size: c.pick(a.batch_size, section, "batch-size", t.batch_size)?,
            lr: c.pick(a.lr, section, "lr", t.lr)?,
            patience: c.pick(a.patience, section, "patience", t.patience)?,
            eval_every: c.pick(a.eval_every, section, "eval-every", t.eval_every)?,
            seed: self.seed,
            ..t
        };
        Ok(FitOptions {
            spec,
            train,
            rate: c.pick(a.rate, section, "rate", 1.0)?,
            subsample_seed: c.pick(a.subsample_seed, section, "subsample-seed", 0)?,
        })
    }
}

fn parse_stiffness(text: &str, horizon: usize) -> Result<StiffnessSchedule<f64>> {
    let pairs = text
        .split(',')
        .map(|p| {
            let (x, z) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::InvalidConfig(format!("stiffness `{p}` is not kx:kz")))?;
            let v = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("stiffness `{p}` is not numeric")));
            Ok(Vec2::new(v(x)?, v(z)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.len() == 1 {
        let phases = stiffdiff::moo::MotpeConfig::default().phases;
        return StiffnessSchedule::constant(pairs[0], phases, horizon);
    }
    StiffnessSchedule::new(pairs, horizon)
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let jobs = config.pick(cli.jobs, "global", "jobs", 1usize)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let env_root = std::env::var_os(DATA_ENV).map(PathBuf::from);
    let ctx = Ctx {
        seed: config.pick(cli.seed, "global", "seed", 0u64)?,
        data_root: config.pick_opt(cli.data_root, "global", "data-root")?.or(env_root),
        out: config.pick_opt(cli.out, "global", "out")?,
        config,
    };
    let c = &ctx.config;
    match cli.cmd {
        Cmd::GenData(a) => {
            let s = "gen-data";
            let domain = c.pick(a.domain, s, "domain", Domain::Nominal)?;
            let d = match domain {
                Domain::Nominal => GenConfig { seed: ctx.seed, ..GenConfig::default() },
                Domain::Shifted => GenConfig::shifted(ctx.seed),
            };
            let cfg = GenConfig {
                domain,
                skills: c.pick(a.skills, s, "skills", d.skills)?,
                val_skills: c.pick(a.val_skills, s, "val-skills", d.val_skills)?,
                trials: c.pick(a.trials, s, "trials", d.trials)?,
                test_trials: c.pick(a.test_trials, s, "test-trials", d.test_trials)?,
                horizon: c.pick(a.horizon, s, "horizon", d.horizon)?,
                seed: ctx.seed,
            };
            let root = ctx.out.clone().map_or_else(|| ctx.data_root(), Ok)?;
            commands::gen_data(&root, &cfg)?;
        }
        Cmd::Train(a) => {
            let opts = ctx.fit(&a.model, "train")?;
            let init = c.pick_opt(a.init, "train", "init")?;
            commands::train(&ctx.data_root()?, &ctx.out("model"), &opts, init.as_deref())?;
        }
        Cmd::Predict(a) => {
            let s = "predict";
            let root = ctx.data_root()?;
            let ckpt = c.pick(a.checkpoint, s, "checkpoint", PathBuf::from("model").join(commands::CHECKPOINT))?;
            let skill: String = c.pick(a.skill, s, "skill", "test".into())?;
            let stiffness: String = c.pick(a.stiffness, s, "stiffness", "400:400".into())?;
            let horizon = stiffdiff_cli::harness::load_task(&root, &skill)?.horizon();
            let schedule = parse_stiffness(&stiffness, horizon)?;
            commands::predict(&root, &ckpt, &skill, &schedule, &ctx.out("forces.csv"), ctx.seed)?;
        }
        Cmd::Optimize(a) => {
            let s = "optimize";
            let opts = commands::OptimizeOptions {
                mode: c.pick(a.mode, s, "mode", Mode::RobotBased)?,
                trials: c.pick(a.n, s, "n", 50)?,
                skill: c.pick(a.skill, s, "skill", "test".into())?,
                checkpoint: c.pick_opt(a.checkpoint, s, "checkpoint")?,
                batch: c.pick(a.batch, s, "batch", 50)?,
                seed: ctx.seed,
                reference_seed: c.pick(a.reference_seed, s, "reference-seed", 0)?,
            };
            commands::optimize(&ctx.data_root()?, &ctx.out("optimize"), &opts)?;
        }
        Cmd::Validate(a) => {
            let s = "validate";
            let dir = c.pick_opt(a.archive, s, "archive")?.unwrap_or_else(|| ctx.out("optimize"));
            let skill: String = c.pick(a.skill, s, "skill", "test".into())?;
            commands::validate(&ctx.data_root()?, &dir, &skill, c.pick(a.max, s, "max", 10)?)?;
        }
        Cmd::Report { kind } => report(&ctx, kind)?,
        Cmd::Ablate(a) => {
            let s = "ablate";
            let opts = commands::AblateOptions {
                fit: ctx.fit(&a.model, s)?,
                cores: list(&c.pick(a.cores, s, "cores", "gru,lstm,mlp".to_string())?)?,
                schedules: list(&c.pick(a.schedules, s, "schedules", "linear,squared-cosine".to_string())?)?,
                seeds: c.pick(a.seeds, s, "seeds", 3)?,
                seed: ctx.seed,
            };
            commands::ablate(&ctx.data_root()?, &ctx.out("ablate"), &opts)?;
        }
    }
    Ok(())
}

fn report(ctx: &Ctx, kind: ReportCmd) -> Result<()> {
    let c = &ctx.config;
    let root = ctx.data_root()?;
    let out = |name: &str| ctx.out("report").join(name);
    match kind {
        ReportCmd::SweepT(a) => {
            let s = "sweep-T";
            let opts = commands::SweepOptions {
                fit: ctx.fit(&a.model, s)?,
                steps: list(&c.pick(a.t, s, "t", "1,5,10,30,50".to_string())?)?,
                seeds: c.pick(a.seeds, s, "seeds", 8)?,
                seed: ctx.seed,
            };
            commands::report_sweep_t(&root, &out("sweep-T"), &opts)
        }
        ReportCmd::DatasetSize(a) => {
            let s = "dataset-size";
            let fit = ctx.fit(&a.model, s)?;
            let opts = commands::DatasetSizeOptions {
                steps_t: fit.spec.steps_t,
                fit,
                rates: list(&c.pick(a.rates, s, "rates", "0.1,0.25,0.5,1.0".to_string())?)?,
                seeds: c.pick(a.seeds, s, "seeds", 5)?,
                seed: ctx.seed,
            };
            commands::report_dataset_size(&root, &out("dataset-size"), &opts)
        }
        ReportCmd::FineTune(a) => {
            let s = "fine-tune";
            let fit = ctx.fit(&a.model, s)?;
            let shifted: Option<PathBuf> = c.pick_opt(a.shifted_root, s, "shifted-root")?;
            let opts = commands::FineTuneOptions {
                steps_t: fit.spec.steps_t,
                shifted_root: shifted.ok_or_else(|| Error::InvalidConfig("fine-tune needs --shifted-root".into()))?,
                tune_steps: c.pick(a.tune_steps, s, "tune-steps", 500)?,
                tune_lr: c.pick(a.tune_lr, s, "tune-lr", 1e-4)?,
                seeds: c.pick(a.seeds, s, "seeds", 5)?,
                seed: ctx.seed,
                fit,
            };
            commands::report_fine_tune(&root, &out("fine-tune"), &opts)
        }
        ReportCmd::Table1(a) => {
            let s = "table1";
            let ckpt: Option<PathBuf> = c.pick_opt(a.checkpoint, s, "checkpoint")?;
            let opts = commands::Table1Options {
                skill: c.pick(a.skill, s, "skill", "test".into())?,
                checkpoint: ckpt.ok_or_else(|| Error::InvalidConfig("table1 needs --checkpoint".into()))?,
                robot_based_trials: c.pick(a.robot_based_n, s, "robot-based-n", 50)?,
                robot_free_trials: c.pick(a.robot_free_n, s, "robot-free-n", 1000)?,
                batch: c.pick(a.batch, s, "batch", 50)?,
                max_validate: c.pick(a.max, s, "max", 10)?,
                seeds: c.pick(a.seeds, s, "seeds", 10)?,
                seed: ctx.seed,
                reference_seed: c.pick(a.reference_seed, s, "reference-seed", 0)?,
            };
            commands::report_table1(&root, &out("table1"), &opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

