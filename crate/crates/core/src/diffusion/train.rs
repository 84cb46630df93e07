use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{regression_loss, training_loss, DiffusionSchedule, Example, NoisedBatch};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::error::{Error, Result};
use crate::scorenet::ScoreNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop once validation loss has not improved for this many steps.
    pub patience: usize,
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Validation uses at most this many held-out items.
    pub val_limit: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 16,
            lr: 1e-3,
            patience: 500,
            eval_every: 100,
            clip_norm: Some(1.0),
            val_limit: 64,
            seed: 0,
        }
    }
}

/// One line of the training log; `val_loss` is present on evaluation steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub best_step: usize,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
    pub log: Vec<LogRow>,
}

fn batch_loss(net: &ScoreNetwork, tape: &mut Tape, batch: &NoisedBatch) -> Result<(Vec<crate::autodiff::Var>, crate::autodiff::Var)> {
    let vars = net.bind(tape)?;
    let loss = if net.config().denoising {
        training_loss(net, tape, &vars, batch)?
    } else {
        regression_loss(net, tape, &vars, batch)?
    };
    Ok((vars, loss))
}

/// Mean loss over the held-out items with a fixed noise draw, so evaluations are comparable.
fn validation_loss(net: &ScoreNetwork, schedule: &DiffusionSchedule, val: &[Example], cfg: &TrainConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_d47e);
    let items: Vec<&Example> = val.iter().take(cfg.val_limit).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in items.chunks(cfg.batch_size.max(1)) {
        let batch = NoisedBatch::draw(chunk, schedule, &mut rng)?;
        let mut tape = Tape::new();
        let (_, loss) = batch_loss(net, &mut tape, &batch)?;
        total += tape.scalar(loss) * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains `net` with Adam on minibatches drawn without replacement per epoch.
///
/// Denoising nets minimize the score-matching loss under `schedule`; regression nets fit the
/// clean forces directly and only use the schedule's step count for bookkeeping. With a
/// validation set the best-scoring parameters are restored at the end.
pub fn train(
    net: &mut ScoreNetwork,
    schedule: &DiffusionSchedule,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    on_row: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("batch size and evaluation interval must be positive".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(net.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut best = (0usize, f64::INFINITY, net.params().clone());
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut steps_run = 0;
    for step in 1..=cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&train[order[cursor]]);
            cursor += 1;
        }
        let batch = NoisedBatch::draw(&picked, schedule, &mut rng)?;
        let mut tape = Tape::new();
        let (vars, loss) = batch_loss(net, &mut tape, &batch)?;
        let train_loss = tape.scalar(loss);
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grads = tape.backward(loss)?;
        net.params_mut().collect_grads(&grads, &vars)?;
        if let Some(c) = cfg.clip_norm {
            net.params_mut().clip_grad_norm(c);
        }
        adam_step(net.params_mut(), &mut state, &adam);
        net.params_mut().zero_grads();
        steps_run = step;

        let val_loss = if !val.is_empty() && (step % cfg.eval_every == 0 || step == cfg.steps) {
            let v = validation_loss(net, schedule, val, cfg)?;
            if v < best.1 {
                best = (step, v, net.params().clone());
            }
            Some(v)
        } else {
            None
        };
        let row = LogRow {
            step,
            train_loss,
            val_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_row(&row);
        log.push(row);
        if val_loss.is_some() && step - best.0 >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let best_val = if val.is_empty() {
        None
    } else {
        *net.params_mut() = best.2;
        Some(best.1)
    };
    Ok(TrainOutcome {
        steps_run,
        best_step: if val.is_empty() { steps_run } else { best.0 },
        best_val,
        stopped_early,
        log,
    })
}
