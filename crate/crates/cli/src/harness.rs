//! Experiment building blocks shared by the subcommands and the acceptance suite.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stiffdiff::dataset::{Dataset, Manifest, NormStats, Split};
use stiffdiff::diffusion::{evaluate, train, DiffusionSchedule, Example, ForceModel, LogRow, ScheduleKind, TestPrediction, TrainConfig, TrainOutcome};
use stiffdiff::error::{Error, Result};
use stiffdiff::moo::{optimize, reference_point, select_for_validation, validate_front, Archive, MotpeConfig, OptimizeConfig, Source, Task, Validation};
use stiffdiff::objectives::{EvalMetrics, ObjectivePair};
use stiffdiff::scorenet::{CoreKind, ScoreNetConfig, ScoreNetwork};
use stiffdiff::sim::SimConfig;

/// Architecture and chain length of a force model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Diffusion steps; 1 selects the single-pass regression baseline.
    pub steps_t: usize,
    pub schedule: ScheduleKind,
    pub core: CoreKind,
    pub token_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub embed_dim: usize,
}

impl Default for ModelSpec {
    /// Desk-scale defaults: the paper-sized 128-wide model costs ~7x more per step.
    fn default() -> Self {
        Self {
            steps_t: 30,
            schedule: ScheduleKind::SquaredCosine,
            core: CoreKind::Gru,
            token_dim: 32,
            hidden_dim: 32,
            layers: 2,
            bidirectional: true,
            embed_dim: 32,
        }
    }
}

impl ModelSpec {
    pub fn is_baseline(&self) -> bool {
        self.steps_t == 1
    }

    pub fn net_config(&self) -> ScoreNetConfig {
        ScoreNetConfig {
            token_dim: self.token_dim,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            bidirectional: self.bidirectional,
            embed_dim: self.embed_dim,
            core: self.core,
            denoising: !self.is_baseline(),
            ..ScoreNetConfig::default()
        }
    }

    pub fn diffusion_schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.schedule, self.steps_t)
    }
}

/// A loaded dataset with its normalized training and validation examples.
pub struct Prepared {
    pub data: Dataset,
    pub stats: NormStats,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

/// Loads the dataset under `root`, keeping `rate` of the training split.
///
/// Statistics are fitted on the kept training items unless `stats` is given (fine-tuning keeps
/// the statistics the checkpoint was trained with).
pub fn prepare(root: &Path, rate: f64, subsample_seed: u64, stats: Option<NormStats>) -> Result<Prepared> {
    let manifest = Manifest::load(root)?;
    manifest.verify(root)?;
    let manifest = if rate < 1.0 { manifest.subsample(rate, subsample_seed)? } else { manifest };
    let data = Dataset::load(root, &manifest)?;
    let stats = match stats {
        Some(s) => s,
        None => data.norm_stats()?,
    };
    let examples = |split| data.samples(split).iter().map(|s| stats.example(s)).collect::<Result<Vec<_>>>();
    let (train, val) = (examples(Split::Train)?, examples(Split::Val)?);
    Ok(Prepared { data, stats, train, val })
}

/// Trains a fresh model, or continues from `init` when fine-tuning.
pub fn fit(
    spec: &ModelSpec,
    prepared: &Prepared,
    cfg: &TrainConfig,
    init: Option<&ForceModel>,
    on_row: &mut dyn FnMut(&LogRow),
) -> Result<(ForceModel, TrainOutcome)> {
    let (mut net, schedule) = match init {
        Some(m) => (m.net.clone(), m.schedule.clone()),
        None => (ScoreNetwork::new(spec.net_config(), cfg.seed)?, spec.diffusion_schedule()?),
    };
    let outcome = train(&mut net, &schedule, &prepared.train, &prepared.val, cfg, on_row)?;
    Ok((
        ForceModel {
            net,
            schedule,
            stats: prepared.stats.clone(),
        },
        outcome,
    ))
}

/// Test-split metrics; sampling noise is seeded by `seed`.
pub fn test_metrics(model: &ForceModel, data: &Dataset, seed: u64) -> Result<(EvalMetrics, Vec<TestPrediction>)> {
    let items = data.test_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_5eed);
    evaluate(model, &items, 32, &mut rng)
}

/// The simulator task that reproduces `skill`'s demonstration from a dataset.
pub fn load_task(root: &Path, skill: &str) -> Result<Task> {
    let manifest = Manifest::load(root)?;
    let entry = manifest
        .demo_for(skill)
        .ok_or_else(|| Error::InvalidConfig(format!("dataset has no demonstration named `{skill}`")))?;
    let demo = stiffdiff::dataset::read_trajectory(&root.join(&entry.path))?;
    if stiffdiff::io::sha256_file(&root.join(&entry.path))? != entry.sha256 {
        return Err(Error::HashMismatch { path: root.join(&entry.path) });
    }
    Ok(Task {
        sim: SimConfig::default(),
        surface: entry.spec.surface,
        demo,
    })
}

/// Fixed per-task reference point from the space-filling design, evaluated on the simulator.
pub fn task_reference(task: &Task, seed: u64) -> Result<ObjectivePair<f64>> {
    reference_point(&MotpeConfig::default(), task.horizon(), seed, &mut |s| task.simulate(s))
}

pub fn robot_based(task: &Task, trials: usize, seed: u64) -> Result<Archive> {
    optimize(&OptimizeConfig::new(trials, task.horizon(), seed), Source::Simulator, &mut |s| task.simulate(s))
}

/// Optimizes against forces predicted by `model`; suggestions are scored `batch` at a time.
pub fn robot_free(task: &Task, model: &ForceModel, trials: usize, batch: usize, seed: u64) -> Result<Archive> {
    let source = if model.is_baseline() { Source::Baseline } else { Source::Dcm };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff_5eed);
    let cfg = OptimizeConfig {
        batch_size: batch.max(1),
        ..OptimizeConfig::new(trials, task.horizon(), seed)
    };
    optimize(&cfg, source, &mut |s| task.predict(model, s, &mut rng))
}

/// Re-runs at most `max` front members on the simulator, chosen by hypervolume contribution.
pub fn validate_archive(task: &Task, archive: &Archive, reference: ObjectivePair<f64>, max: usize) -> Result<Validation> {
    let front = archive.front();
    let objs: Vec<ObjectivePair<f64>> = front.iter().map(|c| c.objectives).collect();
    let picked: Vec<_> = select_for_validation(&objs, reference, max).into_iter().map(|i| front[i]).collect();
    validate_front(&picked, reference, Source::Simulator, &mut |s| task.simulate(s))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}
