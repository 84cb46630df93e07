use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{baseline_predict, mean_squared_error, sample, DiffusionSchedule, ScheduleKind};
use crate::autodiff::checkpoint::{load_params, save_params};
use crate::dataset::{Condition, NormStats, Sample};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::num::Vec2;
use crate::objectives::{correlation_metric, task_objective, EvalMetrics};
use crate::scorenet::{ScoreNetConfig, ScoreNetwork};
use crate::sim::Trajectory;

/// Clean-estimate clamp used while sampling; training data is normalized into `[-1, 1]`.
pub const SAMPLE_X0_BOUND: f64 = 1.0;

/// Trained force predictor: a denoising chain, or a single-pass regression net when
/// `net.config().denoising` is off.
#[derive(Clone, Debug)]
pub struct ForceModel {
    pub net: ScoreNetwork,
    pub schedule: DiffusionSchedule,
    pub stats: NormStats,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ScoreNetConfig,
    schedule: ScheduleKind,
    steps: usize,
    stats: NormStats,
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

impl ForceModel {
    pub fn is_baseline(&self) -> bool {
        !self.net.config().denoising
    }

    /// Network calls per prediction batch.
    pub fn calls_per_prediction(&self) -> usize {
        if self.is_baseline() {
            1
        } else {
            self.schedule.steps()
        }
    }

    /// Normalized `[H, 2]` forces for already-encoded conditions.
    pub fn predict_normalized(&self, conditions: &[&[f64]], rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        if self.is_baseline() {
            baseline_predict(&self.net, conditions)
        } else {
            sample(&self.net, conditions, &self.schedule, Some(SAMPLE_X0_BOUND), rng)
        }
    }

    /// Forces in newtons, one trajectory per condition.
    pub fn predict(&self, conditions: &[&Condition], rng: &mut impl Rng) -> Result<Vec<Vec<Vec2<f64>>>> {
        let encoded = conditions.iter().map(|c| self.stats.encode_condition(c)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = encoded.iter().map(Vec::as_slice).collect();
        Ok(self
            .predict_normalized(&refs, rng)?
            .iter()
            .map(|f| self.stats.decode_forces(f))
            .collect())
    }

    /// Writes the parameters to `checkpoint` and the configuration and statistics next to it
    /// with a `.json` extension.
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        save_params(checkpoint, self.net.params())?;
        let side = Sidecar {
            config: self.net.config().clone(),
            schedule: self.schedule.kind(),
            steps: self.schedule.steps(),
            stats: self.stats.clone(),
        };
        let text = serde_json::to_string_pretty(&side)?;
        write_atomic(&sidecar_path(checkpoint), format!("{text}\n").as_bytes())
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = sidecar_path(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let net = ScoreNetwork::from_params(side.config, load_params(checkpoint)?)?;
        if !net.params().is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(Self {
            net,
            schedule: DiffusionSchedule::new(side.schedule, side.steps)?,
            stats: side.stats,
        })
    }
}

/// Per-item outcome of a test-set evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPrediction {
    /// Normalized force MSE.
    pub mse: f64,
    pub true_task: f64,
    pub predicted_task: f64,
}

/// Predicts every test item in batches of `batch` and compares against the observed forces.
pub fn evaluate(
    model: &ForceModel,
    items: &[(&Sample, &Trajectory<f64>)],
    batch: usize,
    rng: &mut impl Rng,
) -> Result<(EvalMetrics, Vec<TestPrediction>)> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let conds: Vec<&Condition> = chunk.iter().map(|(s, _)| &s.condition).collect();
        let preds = model.predict(&conds, rng)?;
        for ((s, demo), p) in chunk.iter().zip(preds) {
            let mse = mean_squared_error(&model.stats.encode_forces(&p), &model.stats.encode_forces(&s.forces))?;
            out.push(TestPrediction {
                mse,
                true_task: task_objective(&s.forces, &demo.forces)?,
                predicted_task: task_objective(&p, &demo.forces)?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    let mse = out.iter().map(|p| p.mse).sum::<f64>() / out.len() as f64;
    let truth: Vec<f64> = out.iter().map(|p| p.true_task).collect();
    let pred: Vec<f64> = out.iter().map(|p| p.predicted_task).collect();
    let r = correlation_metric(&pred, &truth).unwrap_or(0.0);
    Ok((EvalMetrics { mse, r }, out))
}
