//! Subcommand bodies. Options arrive fully resolved (flag, then config file, then default).

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use stiffdiff::dataset::{generate_dataset, Condition, GenConfig, Manifest, Split};
use stiffdiff::diffusion::{ForceModel, ScheduleKind, TrainConfig};
use stiffdiff::error::{Error, Result};
use stiffdiff::io::sha256_file;
use stiffdiff::moo::{Archive, Source};
use stiffdiff::objectives::{ObjectivePair, StiffnessSchedule};
use stiffdiff::scorenet::CoreKind;
use stiffdiff::Vec2;

use crate::harness::{self, mean, median, std_dev, ModelSpec, Prepared};
use crate::output::{num, read_csv, write_csv, write_csv_noted, write_json};
use crate::svg::{Plot, Series};

pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const ARCHIVE: &str = "archive.jsonl";
pub const REFERENCE: &str = "reference.json";

/// Training run shared by `train`, `report` and `ablate`.
#[derive(Clone, Debug, Serialize)]
pub struct FitOptions {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Fraction of the training split kept.
    pub rate: f64,
    pub subsample_seed: u64,
}

fn elapsed_note(start: Instant) -> String {
    format!("wall {:.1} s", start.elapsed().as_secs_f64())
}

pub fn gen_data(root: &Path, cfg: &GenConfig) -> Result<Manifest> {
    let m = generate_dataset(root, cfg)?;
    for s in &m.skipped {
        warn!("skipped {}: {}", s.skill, s.reason);
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        info!("{split}: {} trajectories", m.entries_in(split).count());
    }
    Ok(m)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    options: &'a FitOptions,
    steps_run: usize,
    best_step: usize,
    best_val: Option<f64>,
    stopped_early: bool,
    test_mse: f64,
    test_r: f64,
}

/// Trains one model into `out`: checkpoint, CSV log and a summary with test metrics.
pub fn train(root: &Path, out: &Path, opts: &FitOptions, init: Option<&Path>) -> Result<ForceModel> {
    let init = init.map(ForceModel::load).transpose()?;
    let prepared = harness::prepare(root, opts.rate, opts.subsample_seed, init.as_ref().map(|m| m.stats.clone()))?;
    info!("training on {} items, validating on {}", prepared.train.len(), prepared.val.len());
    let mut rows: Vec<[String; 4]> = Vec::new();
    let (model, outcome) = harness::fit(&opts.spec, &prepared, &opts.train, init.as_ref(), &mut |r| {
        info!("step {} train {:.5} val {:?}", r.step, r.train_loss, r.val_loss);
        rows.push([r.step.to_string(), num(r.train_loss), r.val_loss.map(num).unwrap_or_default(), r.wall_ms.to_string()]);
    })?;
    model.save(&out.join(CHECKPOINT))?;
    write_csv(&out.join(TRAIN_LOG), &["step", "train_loss", "val_loss", "wall_ms"], &rows)?;
    let (metrics, _) = harness::test_metrics(&model, &prepared.data, opts.train.seed)?;
    info!("test mse {:.5} r {:.3}", metrics.mse, metrics.r);
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            options: opts,
            steps_run: outcome.steps_run,
            best_step: outcome.best_step,
            best_val: outcome.best_val,
            stopped_early: outcome.stopped_early,
            test_mse: metrics.mse,
            test_r: metrics.r,
        },
    )?;
    Ok(model)
}

/// Predicted forces for one demonstration under `schedule`, written as `step,fx,fz`.
pub fn predict(root: &Path, checkpoint: &Path, skill: &str, schedule: &StiffnessSchedule<f64>, out: &Path, seed: u64) -> Result<Vec<Vec2<f64>>> {
    let model = ForceModel::load(checkpoint)?;
    let task = harness::load_task(root, skill)?;
    let cond = Condition::for_schedule(&task.demo, schedule, &task.sim.inertia)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forces = model.predict(&[&cond], &mut rng)?.remove(0);
    let rows: Vec<[String; 3]> = forces.iter().enumerate().map(|(t, f)| [t.to_string(), num(f.x), num(f.z)]).collect();
    write_csv(out, &["step", "fx", "fz"], &rows)?;
    Ok(forces)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    RobotBased,
    RobotFree,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "robot-based" => Ok(Self::RobotBased),
            "robot-free" => Ok(Self::RobotFree),
            other => Err(format!("unknown mode `{other}` (expected robot-based or robot-free)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RobotBased => "robot-based",
            Self::RobotFree => "robot-free",
        })
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    pub mode: Mode,
    pub trials: usize,
    pub skill: String,
    pub checkpoint: Option<PathBuf>,
    pub batch: usize,
    pub seed: u64,
    pub reference_seed: u64,
}

/// Runs one optimization into `out`: the archive and the task's reference point.
pub fn optimize(root: &Path, out: &Path, opts: &OptimizeOptions) -> Result<Archive> {
    let task = harness::load_task(root, &opts.skill)?;
    let reference = harness::task_reference(&task, opts.reference_seed)?;
    let archive = match opts.mode {
        Mode::RobotBased => harness::robot_based(&task, opts.trials, opts.seed)?,
        Mode::RobotFree => {
            let ckpt = opts
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("robot-free optimization needs --checkpoint".into()))?;
            harness::robot_free(&task, &ForceModel::load(ckpt)?, opts.trials, opts.batch, opts.seed)?
        }
    };
    for f in &archive.failures {
        warn!("failed trial: {f}");
    }
    info!(
        "{} trials, front of {}, hypervolume {:.4} against ({:.4}, {:.4})",
        archive.candidates.len(),
        archive.front().len(),
        archive.hypervolume(reference),
        reference.task,
        reference.comp
    );
    archive.save(&out.join(ARCHIVE))?;
    write_json(&out.join(REFERENCE), &reference)?;
    Ok(archive)
}

/// Cost accounting of one optimization after validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub mode: Mode,
    pub trials: usize,
    /// Trials scored by a learned model.
    pub virtual_trials: usize,
    /// Simulator rollouts, counting both optimization and validation.
    pub genuine_evaluations: usize,
    pub front_size: usize,
    pub genuine_hypervolume: f64,
}

impl CostRow {
    pub const HEADER: [&'static str; 6] = ["mode", "trials", "virtual_trials", "genuine_evaluations", "front_size", "genuine_hypervolume"];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.mode.to_string(),
            self.trials.to_string(),
            self.virtual_trials.to_string(),
            self.genuine_evaluations.to_string(),
            self.front_size.to_string(),
            num(self.genuine_hypervolume),
        ]
    }
}

/// Genuine hypervolume and evaluation cost of an archive.
///
/// Simulator archives are already genuine; model-scored fronts are re-run on the simulator,
/// at most `max` members.
pub fn assess(task: &stiffdiff::moo::Task, archive: &Archive, reference: ObjectivePair<f64>, max: usize) -> Result<(CostRow, Option<stiffdiff::moo::Validation>)> {
    let n = archive.candidates.len();
    let simulated = archive.candidates.iter().all(|c| c.source == Source::Simulator);
    if simulated {
        return Ok((
            CostRow {
                mode: Mode::RobotBased,
                trials: n,
                virtual_trials: 0,
                genuine_evaluations: n,
                front_size: archive.front().len(),
                genuine_hypervolume: archive.hypervolume(reference),
            },
            None,
        ));
    }
    let v = harness::validate_archive(task, archive, reference, max)?;
    Ok((
        CostRow {
            mode: Mode::RobotFree,
            trials: n,
            virtual_trials: n,
            genuine_evaluations: v.evaluations,
            front_size: archive.front().len(),
            genuine_hypervolume: v.hypervolume,
        },
        Some(v),
    ))
}

/// Validates the archive in `dir` and writes the genuine front and cost table next to it.
pub fn validate(root: &Path, dir: &Path, skill: &str, max: usize) -> Result<CostRow> {
    let archive = Archive::load(&dir.join(ARCHIVE))?;
    let text = std::fs::read_to_string(dir.join(REFERENCE)).map_err(|e| Error::io(format!("reading {}", dir.join(REFERENCE).display()), e))?;
    let reference: ObjectivePair<f64> = serde_json::from_str(&text)?;
    let task = harness::load_task(root, skill)?;
    let (row, validation) = assess(&task, &archive, reference, max)?;
    if let Some(v) = validation {
        let genuine = Archive {
            candidates: v.genuine,
            failures: Vec::new(),
        };
        genuine.save(&dir.join("validated.jsonl"))?;
    }
    info!(
        "{}: {} genuine evaluations for {} trials, genuine hypervolume {:.4}",
        row.mode, row.genuine_evaluations, row.trials, row.genuine_hypervolume
    );
    write_csv(&dir.join("cost.csv"), &CostRow::HEADER, &[row.record()])?;
    Ok(row)
}

/// Runs `f` over every arm on the current pool; results come back in arm order.
fn run_arms<A: Sync, R: Send>(arms: &[A], f: impl Fn(&A) -> Result<R> + Sync) -> Vec<Result<R>> {
    arms.par_iter().map(|a| f(a)).collect()
}

fn fit_and_test(prepared: &Prepared, opts: &FitOptions, seed: u64, init: Option<&ForceModel>) -> Result<(ForceModel, f64, f64)> {
    let cfg = TrainConfig { seed, ..opts.train.clone() };
    let (model, _) = harness::fit(&opts.spec, prepared, &cfg, init, &mut |_| {})?;
    let (m, _) = harness::test_metrics(&model, &prepared.data, seed)?;
    Ok((model, m.mse, m.r))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::InvalidConfig(format!("not a number in report data: `{s}`")))
}

/// Column `name` of a CSV read back with [`read_csv`].
fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidConfig(format!("report data lacks column `{name}`")))
}

#[derive(Serialize)]
struct ReportMeta<'a, C: Serialize> {
    experiment: &'a str,
    config: &'a C,
    /// sha256 of each raw file the tables were computed from.
    raw: Vec<(String, String)>,
}

fn write_meta<C: Serialize>(out: &Path, experiment: &str, config: &C, raw: &[&str]) -> Result<()> {
    let raw = raw
        .iter()
        .map(|f| Ok((f.to_string(), sha256_file(&out.join(f))?)))
        .collect::<Result<Vec<_>>>()?;
    write_json(&out.join("report.json"), &ReportMeta { experiment, config, raw })
}

fn write_svg(path: &Path, plot: &Plot) -> Result<()> {
    stiffdiff::io::write_atomic(path, plot.render(&crate::output::stamp()).as_bytes())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOptions {
    pub fit: FitOptions,
    pub steps: Vec<usize>,
    pub seeds: u64,
    pub seed: u64,
}

/// Prediction accuracy over the chain length: raw per-run rows, then mean/std per T.
pub fn report_sweep_t(root: &Path, out: &Path, opts: &SweepOptions) -> Result<()> {
    let start = Instant::now();
    let prepared = harness::prepare(root, opts.fit.rate, opts.fit.subsample_seed, None)?;
    let arms: Vec<(usize, u64)> = opts.steps.iter().flat_map(|&t| (0..opts.seeds).map(move |s| (t, s))).collect();
    let results = run_arms(&arms, |&(t, s)| {
        let fit = FitOptions {
            spec: ModelSpec { steps_t: t, ..opts.fit.spec.clone() },
            ..opts.fit.clone()
        };
        let seed = opts.seed + s;
        let (model, mse, r) = fit_and_test(&prepared, &fit, seed, None)?;
        model.save(&out.join("models").join(format!("t{t}-seed{seed}.ckpt")))?;
        info!("T={t} seed {seed}: mse {mse:.5} r {r:.3}");
        Ok((mse, r))
    });
    let mut rows = Vec::new();
    for (&(t, s), res) in arms.iter().zip(results) {
        let (mse, r) = res?;
        rows.push(vec![t.to_string(), (opts.seed + s).to_string(), num(mse), num(r)]);
    }
    write_csv_noted(&out.join("runs.csv"), &elapsed_note(start), &["T", "seed", "mse", "r"], &rows)?;

    let (header, rows) = read_csv(&out.join("runs.csv"))?;
    let (ct, cm, cr) = (column(&header, "T")?, column(&header, "mse")?, column(&header, "r")?);
    let mut table = Vec::new();
    let (mut mse_pts, mut r_pts) = (Vec::new(), Vec::new());
    for &t in &opts.steps {
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[ct] == t.to_string()).collect();
        let mse = mine.iter().map(|r| parse_f64(&r[cm])).collect::<Result<Vec<_>>>()?;
        let r = mine.iter().map(|r| parse_f64(&r[cr])).collect::<Result<Vec<_>>>()?;
        table.push(vec![t.to_string(), num(mean(&mse)), num(std_dev(&mse)), num(mean(&r))]);
        mse_pts.push((t as f64, mean(&mse)));
        r_pts.push((t as f64, mean(&r)));
    }
    write_csv(&out.join("sweep_t.csv"), &["T", "mse_mean", "mse_std", "r_mean"], &table)?;
    let plot = |title: &str, y: &str, name: &str, points| Plot {
        title: title.into(),
        x_label: "diffusion steps T".into(),
        y_label: y.into(),
        series: vec![Series { name: name.into(), points }],
        scatter: false,
    };
    write_svg(&out.join("sweep_t_mse.svg"), &plot("Test force MSE vs T", "normalized MSE", "mean MSE", mse_pts))?;
    write_svg(&out.join("sweep_t_r.svg"), &plot("Task-objective correlation vs T", "Pearson r", "mean r", r_pts))?;
    write_meta(out, "sweep-t", opts, &["runs.csv"])
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetSizeOptions {
    pub fit: FitOptions,
    pub rates: Vec<f64>,
    /// Chain length of the diffusion arm; the baseline arm always uses one step.
    pub steps_t: usize,
    pub seeds: u64,
    pub seed: u64,
}

/// Median over seeds of each arm's per-seed MSE ratio `mse(rate) / mse(full data)`.
pub fn degradation(rows: &[(String, f64, u64, f64)], arm: &str, rate: f64) -> f64 {
    let full = |seed: u64| rows.iter().find(|r| r.0 == arm && r.1 == 1.0 && r.2 == seed).map(|r| r.3);
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.0 == arm && r.1 == rate)
        .filter_map(|r| full(r.2).map(|f| r.3 / f))
        .collect();
    median(&ratios)
}

/// MSE of the baseline and the diffusion model as the training set shrinks.
pub fn report_dataset_size(root: &Path, out: &Path, opts: &DatasetSizeOptions) -> Result<()> {
    let start = Instant::now();
    let mut rates = opts.rates.clone();
    if !rates.contains(&1.0) {
        rates.push(1.0);
    }
    let arms_named = [("baseline", 1usize), ("dcm", opts.steps_t)];
    let mut rows = Vec::new();
    for &rate in &rates {
        let prepared = harness::prepare(root, rate, opts.fit.subsample_seed, None)?;
        info!("rate {rate}: {} training items", prepared.train.len());
        let arms: Vec<(&str, usize, u64)> = arms_named.iter().flat_map(|&(a, t)| (0..opts.seeds).map(move |s| (a, t, s))).collect();
        let results = run_arms(&arms, |&(_, t, s)| {
            let fit = FitOptions {
                spec: ModelSpec { steps_t: t, ..opts.fit.spec.clone() },
                ..opts.fit.clone()
            };
            fit_and_test(&prepared, &fit, opts.seed + s, None).map(|(_, mse, r)| (mse, r))
        });
        for (&(arm, _, s), res) in arms.iter().zip(results) {
            let (mse, r) = res?;
            info!("{arm} rate {rate} seed {}: mse {mse:.5}", opts.seed + s);
            rows.push(vec![arm.to_string(), num(rate), (opts.seed + s).to_string(), num(mse), num(r)]);
        }
    }
    write_csv_noted(&out.join("runs.csv"), &elapsed_note(start), &["arm", "rate", "seed", "mse", "r"], &rows)?;

    let (header, raw) = read_csv(&out.join("runs.csv"))?;
    let (ca, cr, cs, cm) = (column(&header, "arm")?, column(&header, "rate")?, column(&header, "seed")?, column(&header, "mse")?);
    let parsed = raw
        .iter()
        .map(|r| Ok((r[ca].clone(), parse_f64(&r[cr])?, parse_f64(&r[cs])? as u64, parse_f64(&r[cm])?)))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Vec::new();
    let mut series = Vec::new();
    for (arm, _) in arms_named {
        let mut pts = Vec::new();
        for &rate in &rates {
            let mse: Vec<f64> = parsed.iter().filter(|r| r.0 == arm && r.1 == rate).map(|r| r.3).collect();
            let deg = degradation(&parsed, arm, rate);
            table.push(vec![arm.to_string(), num(rate), num(median(&mse)), num(mean(&mse)), num(std_dev(&mse)), num(deg)]);
            pts.push((rate, median(&mse)));
        }
        series.push(Series { name: arm.into(), points: pts });
    }
    write_csv(&out.join("dataset_size.csv"), &["arm", "rate", "mse_median", "mse_mean", "mse_std", "degradation"], &table)?;
    write_svg(
        &out.join("dataset_size.svg"),
        &Plot {
            title: "Test force MSE vs training fraction".into(),
            x_label: "fraction of training data".into(),
            y_label: "median normalized MSE".into(),
            series,
            scatter: false,
        },
    )?;
    write_meta(out, "dataset-size", opts, &["runs.csv"])
}

#[derive(Clone, Debug, Serialize)]
pub struct FineTuneOptions {
    pub fit: FitOptions,
    pub shifted_root: PathBuf,
    pub steps_t: usize,
    /// Step count and learning rate of the adaptation phase.
    pub tune_steps: usize,
    pub tune_lr: f64,
    pub seeds: u64,
    pub seed: u64,
}

/// Transfer to the shifted domain: trained there from scratch, nominal-only, and nominal then
/// adapted. Every arm is scored on the shifted test split.
pub fn report_fine_tune(root: &Path, out: &Path, opts: &FineTuneOptions) -> Result<()> {
    let start = Instant::now();
    let nominal = harness::prepare(root, opts.fit.rate, opts.fit.subsample_seed, None)?;
    let shifted_own = harness::prepare(&opts.shifted_root, 1.0, 0, None)?;
    let models = [("baseline", 1usize), ("dcm", opts.steps_t)];
    let arms: Vec<(&str, usize, u64)> = models.iter().flat_map(|&(m, t)| (0..opts.seeds).map(move |s| (m, t, s))).collect();
    let results = run_arms(&arms, |&(_, t, s)| {
        let seed = opts.seed + s;
        let fit = FitOptions {
            spec: ModelSpec { steps_t: t, ..opts.fit.spec.clone() },
            ..opts.fit.clone()
        };
        let (_, scratch_mse, scratch_r) = fit_and_test(&shifted_own, &fit, seed, None)?;
        let cfg = TrainConfig { seed, ..fit.train.clone() };
        let (pre, _) = harness::fit(&fit.spec, &nominal, &cfg, None, &mut |_| {})?;
        // adaptation keeps the nominal normalization
        let shifted = harness::prepare(&opts.shifted_root, 1.0, 0, Some(pre.stats.clone()))?;
        let (pm, _) = harness::test_metrics(&pre, &shifted.data, seed)?;
        let tune = FitOptions {
            train: TrainConfig {
                steps: opts.tune_steps,
                lr: opts.tune_lr,
                ..fit.train.clone()
            },
            ..fit.clone()
        };
        let (_, tuned_mse, tuned_r) = fit_and_test(&shifted, &tune, seed, Some(&pre))?;
        Ok([("scratch", scratch_mse, scratch_r), ("pretrained", pm.mse, pm.r), ("fine-tuned", tuned_mse, tuned_r)])
    });
    let mut rows = Vec::new();
    for (&(model, _, s), res) in arms.iter().zip(results) {
        for (arm, mse, r) in res? {
            info!("{model} {arm} seed {}: mse {mse:.5} r {r:.3}", opts.seed + s);
            rows.push(vec![model.to_string(), arm.to_string(), (opts.seed + s).to_string(), num(mse), num(r)]);
        }
    }
    write_csv_noted(&out.join("runs.csv"), &elapsed_note(start), &["model", "arm", "seed", "mse", "r"], &rows)?;

    let (header, raw) = read_csv(&out.join("runs.csv"))?;
    let (cmod, carm, cm, cr) = (column(&header, "model")?, column(&header, "arm")?, column(&header, "mse")?, column(&header, "r")?);
    let mut table = Vec::new();
    for (model, _) in models {
        for arm in ["scratch", "pretrained", "fine-tuned"] {
            let mine: Vec<&Vec<String>> = raw.iter().filter(|r| r[cmod] == model && r[carm] == arm).collect();
            let mse = mine.iter().map(|r| parse_f64(&r[cm])).collect::<Result<Vec<_>>>()?;
            let r = mine.iter().map(|r| parse_f64(&r[cr])).collect::<Result<Vec<_>>>()?;
            table.push(vec![model.to_string(), arm.to_string(), num(mean(&mse)), num(std_dev(&mse)), num(mean(&r))]);
        }
    }
    write_csv(&out.join("fine_tune.csv"), &["model", "arm", "mse_mean", "mse_std", "r_mean"], &table)?;
    write_meta(out, "fine-tune", opts, &["runs.csv"])
}

#[derive(Clone, Debug, Serialize)]
pub struct Table1Options {
    pub skill: String,
    pub checkpoint: PathBuf,
    pub robot_based_trials: usize,
    pub robot_free_trials: usize,
    pub batch: usize,
    pub max_validate: usize,
    pub seeds: u64,
    pub seed: u64,
    pub reference_seed: u64,
}

/// Robot-based against robot-free optimization: genuine hypervolume and simulator cost per seed.
pub fn report_table1(root: &Path, out: &Path, opts: &Table1Options) -> Result<()> {
    let start = Instant::now();
    Manifest::load(root)?.verify(root)?;
    let task = harness::load_task(root, &opts.skill)?;
    let reference = harness::task_reference(&task, opts.reference_seed)?;
    let model = ForceModel::load(&opts.checkpoint)?;
    let arms: Vec<(Mode, u64)> = [Mode::RobotBased, Mode::RobotFree]
        .iter()
        .flat_map(|&m| (0..opts.seeds).map(move |s| (m, s)))
        .collect();
    let results = run_arms(&arms, |&(mode, s)| {
        let seed = opts.seed + s;
        let archive = match mode {
            Mode::RobotBased => harness::robot_based(&task, opts.robot_based_trials, seed)?,
            Mode::RobotFree => harness::robot_free(&task, &model, opts.robot_free_trials, opts.batch, seed)?,
        };
        archive.save(&out.join("archives").join(format!("{mode}-seed{seed}.jsonl")))?;
        let (row, _) = assess(&task, &archive, reference, opts.max_validate)?;
        info!("{mode} seed {seed}: genuine hypervolume {:.4} from {} simulator runs", row.genuine_hypervolume, row.genuine_evaluations);
        Ok(row)
    });
    let mut rows = Vec::new();
    for (&(_, s), res) in arms.iter().zip(results) {
        let mut rec = res?.record();
        rec.insert(1, (opts.seed + s).to_string());
        rows.push(rec);
    }
    let mut header: Vec<&str> = CostRow::HEADER.to_vec();
    header.insert(1, "seed");
    write_csv_noted(&out.join("runs.csv"), &elapsed_note(start), &header, &rows)?;
    write_json(&out.join(REFERENCE), &reference)?;

    let (header, raw) = read_csv(&out.join("runs.csv"))?;
    let col = |n| column(&header, n);
    let (cmode, cs, cv, cg, cf, ch) = (col("mode")?, col("seed")?, col("virtual_trials")?, col("genuine_evaluations")?, col("front_size")?, col("genuine_hypervolume")?);
    let mut table = Vec::new();
    let mut series = Vec::new();
    for mode in [Mode::RobotBased, Mode::RobotFree] {
        let mine: Vec<&Vec<String>> = raw.iter().filter(|r| r[cmode] == mode.to_string()).collect();
        let get = |c: usize| mine.iter().map(|r| parse_f64(&r[c])).collect::<Result<Vec<_>>>();
        let (virt, genuine, front, hv, seeds) = (get(cv)?, get(cg)?, get(cf)?, get(ch)?, get(cs)?);
        table.push(vec![
            mode.to_string(),
            num(median(&virt)),
            num(median(&genuine)),
            num(median(&front)),
            num(median(&hv)),
            num(mean(&hv)),
            num(std_dev(&hv)),
        ]);
        series.push(Series {
            name: mode.to_string(),
            points: seeds.into_iter().zip(hv).collect(),
        });
    }
    write_csv(
        &out.join("table1.csv"),
        &["mode", "virtual_trials", "genuine_evaluations", "front_size", "hv_median", "hv_mean", "hv_std"],
        &table,
    )?;
    write_svg(
        &out.join("table1_hv.svg"),
        &Plot {
            title: "Genuine hypervolume per seed".into(),
            x_label: "seed".into(),
            y_label: "hypervolume".into(),
            series,
            scatter: true,
        },
    )?;
    write_meta(out, "table1", opts, &["runs.csv"])
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateOptions {
    pub fit: FitOptions,
    pub cores: Vec<CoreKind>,
    pub schedules: Vec<ScheduleKind>,
    pub seeds: u64,
    pub seed: u64,
}

/// Recurrent core and noise schedule sweeps. Arms share seeds and data; a failing arm is
/// recorded and the rest continue.
pub fn ablate(root: &Path, out: &Path, opts: &AblateOptions) -> Result<()> {
    let start = Instant::now();
    let prepared = harness::prepare(root, opts.fit.rate, opts.fit.subsample_seed, None)?;
    let base = &opts.fit.spec;
    let mut arms: Vec<(&str, String, ModelSpec)> = Vec::new();
    for &core in &opts.cores {
        arms.push(("core", core.to_string(), ModelSpec { core, ..base.clone() }));
    }
    for &schedule in &opts.schedules {
        let name = serde_json::to_value(schedule)?.as_str().unwrap_or_default().to_string();
        arms.push(("schedule", name, ModelSpec { schedule, ..base.clone() }));
    }
    let runs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| (0..opts.seeds).map(move |s| (a, s))).collect();
    let results = run_arms(&runs, |&(a, s)| {
        let fit = FitOptions { spec: arms[a].2.clone(), ..opts.fit.clone() };
        fit_and_test(&prepared, &fit, opts.seed + s, None).map(|(_, mse, r)| (mse, r))
    });
    let mut rows = Vec::new();
    for (&(a, s), res) in runs.iter().zip(results) {
        let (study, arm, _) = &arms[a];
        let seed = (opts.seed + s).to_string();
        match res {
            Ok((mse, r)) => rows.push(vec![study.to_string(), arm.clone(), seed, "ok".into(), num(mse), num(r)]),
            Err(e) => {
                warn!("{study} arm {arm} seed {seed} failed: {e}");
                rows.push(vec![study.to_string(), arm.clone(), seed, format!("failed: {e}"), String::new(), String::new()]);
            }
        }
    }
    write_csv_noted(&out.join("runs.csv"), &elapsed_note(start), &["study", "arm", "seed", "status", "mse", "r"], &rows)?;

    let (header, raw) = read_csv(&out.join("runs.csv"))?;
    let col = |n| column(&header, n);
    let (cst, ca, cstat, cm, cr) = (col("study")?, col("arm")?, col("status")?, col("mse")?, col("r")?);
    let mut table = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for (i, (study, arm, _)) in arms.iter().enumerate() {
        let ok: Vec<&Vec<String>> = raw.iter().filter(|r| r[cst] == *study && r[ca] == *arm && r[cstat] == "ok").collect();
        let failed = raw.iter().filter(|r| r[cst] == *study && r[ca] == *arm).count() - ok.len();
        let mse = ok.iter().map(|r| parse_f64(&r[cm])).collect::<Result<Vec<_>>>()?;
        let r = ok.iter().map(|r| parse_f64(&r[cr])).collect::<Result<Vec<_>>>()?;
        table.push(vec![study.to_string(), arm.clone(), ok.len().to_string(), failed.to_string(), num(mean(&mse)), num(std_dev(&mse)), num(mean(&r))]);
        series.push(Series {
            name: format!("{study}: {arm}"),
            points: mse.iter().map(|&m| (i as f64, m)).collect(),
        });
    }
    write_csv(&out.join("ablate.csv"), &["study", "arm", "runs_ok", "runs_failed", "mse_mean", "mse_std", "r_mean"], &table)?;
    write_svg(
        &out.join("ablate.svg"),
        &Plot {
            title: "Test force MSE per arm".into(),
            x_label: "arm".into(),
            y_label: "normalized MSE".into(),
            series,
            scatter: true,
        },
    )?;
    write_meta(out, "ablate", opts, &["runs.csv"])
}
