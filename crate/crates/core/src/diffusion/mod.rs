//! Denoising diffusion over normalized force trajectories.
//!
//! Step indices are 1-based: `i = 1..=T`, with `i = 0` the clean trajectory.

mod model;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use model::{evaluate, ForceModel, TestPrediction, SAMPLE_X0_BOUND};
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scorenet::{NetInput, ScoreNetwork, CONDITION_DIM, FORCE_DIM};

/// Endpoints of the linear variance schedule.
pub const LINEAR_BETA: (f64, f64) = (1e-4, 0.02);
/// Upper clip of the squared-cosine variances.
pub const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    SquaredCosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "squared-cosine" | "cosine" => Ok(Self::SquaredCosine),
            other => Err(format!("unknown noise schedule `{other}` (expected linear or squared-cosine)")),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::SquaredCosine => "squared-cosine",
        })
    }
}

/// Variances `β_i` with `α_i = 1 - β_i` and `ᾱ_i = Π_{j≤i} α_j`; tables are indexed by `i - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidSteps(steps));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let (lo, hi) = LINEAR_BETA;
                (0..steps)
                    .map(|j| if steps == 1 { lo } else { lo + (hi - lo) * j as f64 / (steps - 1) as f64 })
                    .collect()
            }
            ScheduleKind::SquaredCosine => {
                let f = |i: usize| {
                    let x = (i as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps).map(|i| (1.0 - f(i) / f(i - 1)).min(MAX_BETA)).collect()
            }
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            kind,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    /// `ᾱ_i`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.alpha_bars[i - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Noises `clean` to step `i`: returns `(√ᾱ_i x + √(1-ᾱ_i) ε, ε)`.
pub fn forward_noise(clean: &[f64], i: usize, schedule: &DiffusionSchedule, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let eps = gaussian(rng, clean.len());
    (noise_with(clean, &eps, schedule.alpha_bar(i)), eps)
}

fn noise_with(clean: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    clean.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

/// One normalized training pair: condition rows `[H, 6]` and forces `[H, 2]`, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub condition: Vec<f64>,
    pub forces: Vec<f64>,
}

impl Example {
    pub fn horizon(&self) -> usize {
        self.forces.len() / FORCE_DIM
    }
}

/// Stacks per-item `[H, width]` buffers into one time-major `[H * B, width]` buffer.
pub fn interleave(items: &[&[f64]], width: usize) -> Result<Vec<f64>> {
    let Some(first) = items.first() else {
        return Ok(Vec::new());
    };
    let h = first.len() / width;
    if items.iter().any(|x| x.len() != h * width) {
        return Err(Error::LengthMismatch(h * width, items.iter().map(|x| x.len()).find(|&l| l != h * width).unwrap_or(0)));
    }
    let b = items.len();
    let mut out = vec![0.0; h * b * width];
    for (k, item) in items.iter().enumerate() {
        for t in 0..h {
            out[(t * b + k) * width..(t * b + k + 1) * width].copy_from_slice(&item[t * width..(t + 1) * width]);
        }
    }
    Ok(out)
}

/// Inverse of [`interleave`].
pub fn deinterleave(buf: &[f64], batch: usize, width: usize) -> Vec<Vec<f64>> {
    let h = buf.len() / (batch * width).max(1);
    (0..batch)
        .map(|k| (0..h).flat_map(|t| buf[(t * batch + k) * width..(t * batch + k + 1) * width].iter().copied()).collect())
        .collect()
}

/// A time-major batch with its noising draws.
#[derive(Clone, Debug)]
pub struct NoisedBatch {
    pub steps: usize,
    pub batch: usize,
    pub condition: Vec<f64>,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub eps: Vec<f64>,
    /// Per-item diffusion step, uniform in `1..=T`.
    pub step: Vec<usize>,
    pub total_steps: usize,
}

impl NoisedBatch {
    pub fn draw(examples: &[&Example], schedule: &DiffusionSchedule, rng: &mut impl Rng) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidConfig("empty training batch".into()));
        }
        let b = examples.len();
        let conds: Vec<&[f64]> = examples.iter().map(|e| e.condition.as_slice()).collect();
        let forces: Vec<&[f64]> = examples.iter().map(|e| e.forces.as_slice()).collect();
        let condition = interleave(&conds, CONDITION_DIM)?;
        let clean = interleave(&forces, FORCE_DIM)?;
        let steps = clean.len() / (b * FORCE_DIM);
        if condition.len() != steps * b * CONDITION_DIM {
            return Err(Error::LengthMismatch(condition.len(), steps * b * CONDITION_DIM));
        }
        let t = schedule.steps();
        let step: Vec<usize> = (0..b).map(|_| rng.random_range(1..=t)).collect();
        let eps = gaussian(rng, clean.len());
        let mut noisy = Vec::with_capacity(clean.len());
        for (r, (x, e)) in clean.chunks(FORCE_DIM).zip(eps.chunks(FORCE_DIM)).enumerate() {
            noisy.extend(noise_with(x, e, schedule.alpha_bar(step[r % b])));
        }
        Ok(Self {
            steps,
            batch: b,
            condition,
            clean,
            noisy,
            eps,
            step,
            total_steps: t,
        })
    }

    pub fn net_input(&self) -> NetInput<'_> {
        NetInput {
            steps: self.steps,
            batch: self.batch,
            condition: &self.condition,
            noisy: Some(&self.noisy),
            step: Some(&self.step),
            total_steps: self.total_steps,
        }
    }
}

/// Score-matching loss `mean ‖ε - ε_θ(noisy, condition, i)‖²` per element.
pub fn training_loss(net: &ScoreNetwork, tape: &mut Tape, vars: &[Var], batch: &NoisedBatch) -> Result<Var> {
    let out = net.forward(tape, vars, &batch.net_input())?;
    let target = tape.constant(batch.steps * batch.batch, FORCE_DIM, batch.eps.clone())?;
    tape.mse(out, target)
}

/// Direct regression loss `mean ‖F - net(condition)‖²` per element for the single-pass predictor.
pub fn regression_loss(net: &ScoreNetwork, tape: &mut Tape, vars: &[Var], batch: &NoisedBatch) -> Result<Var> {
    let input = NetInput {
        steps: batch.steps,
        batch: batch.batch,
        condition: &batch.condition,
        noisy: None,
        step: None,
        total_steps: 1,
    };
    let out = net.forward(tape, vars, &input)?;
    let target = tape.constant(batch.steps * batch.batch, FORCE_DIM, batch.clean.clone())?;
    tape.mse(out, target)
}

/// Anything that predicts the injected noise for a batched input.
pub trait NoisePredictor {
    fn predict_noise(&self, input: &NetInput) -> Result<Vec<f64>>;
}

impl NoisePredictor for ScoreNetwork {
    fn predict_noise(&self, input: &NetInput) -> Result<Vec<f64>> {
        self.predict(input)
    }
}

/// One reverse step from `x_i`: the posterior mean, plus `√β_i z` noise unless `i = 1`.
///
/// With `x0_bound`, the clean estimate implied by `eps_hat` is clamped to `±bound` before the
/// posterior mean is formed; without it the step is the plain noise-prediction update.
pub fn denoise_step(
    x: &[f64],
    eps_hat: &[f64],
    i: usize,
    schedule: &DiffusionSchedule,
    noise: Option<&[f64]>,
    x0_bound: Option<f64>,
) -> Vec<f64> {
    let (alpha, beta, ab) = (schedule.alpha(i), schedule.beta(i), schedule.alpha_bar(i));
    let ab_prev = if i > 1 { schedule.alpha_bar(i - 1) } else { 1.0 };
    let c = beta / (1.0 - ab).sqrt();
    let inv = 1.0 / alpha.sqrt();
    // posterior mean as a blend of the clean estimate and x_i
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ci = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let sigma = beta.sqrt();
    x.iter()
        .zip(eps_hat)
        .enumerate()
        .map(|(k, (xi, e))| {
            let mean = match x0_bound {
                None => inv * (xi - c * e),
                Some(b) => {
                    let x0 = ((xi - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-b, b);
                    c0 * x0 + ci * xi
                }
            };
            match noise {
                Some(z) if i > 1 => mean + sigma * z[k],
                _ => mean,
            }
        })
        .collect()
}

/// Runs the reverse chain for a batch of conditions (each `[H, 6]`, normalized).
///
/// Makes exactly `T` batched calls to `net` and returns one normalized `[H, 2]` force
/// trajectory per condition. `x0_bound` is forwarded to [`denoise_step`].
pub fn sample(
    net: &impl NoisePredictor,
    conditions: &[&[f64]],
    schedule: &DiffusionSchedule,
    x0_bound: Option<f64>,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let b = conditions.len();
    if b == 0 {
        return Ok(Vec::new());
    }
    let condition = interleave(conditions, CONDITION_DIM)?;
    let steps = condition.len() / (b * CONDITION_DIM);
    let n = steps * b * FORCE_DIM;
    let t = schedule.steps();
    let mut x = gaussian(rng, n);
    for i in (1..=t).rev() {
        let step = vec![i; b];
        let input = NetInput {
            steps,
            batch: b,
            condition: &condition,
            noisy: Some(&x),
            step: Some(&step),
            total_steps: t,
        };
        let eps_hat = net.predict_noise(&input)?;
        let z = if i > 1 { Some(gaussian(rng, n)) } else { None };
        x = denoise_step(&x, &eps_hat, i, schedule, z.as_deref(), x0_bound);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoising chain"));
        }
    }
    Ok(deinterleave(&x, b, FORCE_DIM))
}

/// Single forward pass of a regression net for a batch of conditions.
pub fn baseline_predict(net: &ScoreNetwork, conditions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let b = conditions.len();
    if b == 0 {
        return Ok(Vec::new());
    }
    if net.config().denoising {
        return Err(Error::InvalidConfig("baseline prediction needs a regression net".into()));
    }
    let condition = interleave(conditions, CONDITION_DIM)?;
    let input = NetInput {
        steps: condition.len() / (b * CONDITION_DIM),
        batch: b,
        condition: &condition,
        noisy: None,
        step: None,
        total_steps: 1,
    };
    Ok(deinterleave(&net.predict(&input)?, b, FORCE_DIM))
}

/// Per-element mean squared difference.
pub fn mean_squared_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64)
}
