//! Conditional noise predictor: per-step tokenizer, denoising-step embedding, sequence core
//! and a per-step output head.
//!
//! All sequence tensors are time-major: row `t * batch + b` holds step `t` of item `b`.

mod core;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use self::core::{CoreKind, PerStepMlp, Recurrent, SequenceCore};
use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Channels per step in the condition: demo pose, attractor, stiffness diagonal.
pub const CONDITION_DIM: usize = 6;
/// Channels per step in the force trajectory.
pub const FORCE_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetConfig {
    pub token_dim: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub bidirectional: bool,
    pub embed_dim: usize,
    pub core: CoreKind,
    /// `false` builds the single-pass regression predictor: no noisy-force input and no
    /// step embedding.
    pub denoising: bool,
    /// Seeds the Fourier frequencies of the step embedding.
    pub embed_seed: u64,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            token_dim: 128,
            layers: 2,
            hidden_dim: 128,
            bidirectional: true,
            embed_dim: 32,
            core: CoreKind::Gru,
            denoising: true,
            embed_seed: 0x5eed,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.token_dim, self.layers, self.hidden_dim];
        if dims.contains(&0) || (self.denoising && (self.embed_dim < 2 || self.embed_dim % 2 != 0)) {
            return Err(Error::InvalidConfig(format!(
                "score net dims must be >= 1 and the step embedding even: {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the per-step vector fed to the tokenizer.
    pub fn input_dim(&self) -> usize {
        if self.denoising {
            FORCE_DIM + CONDITION_DIM + self.embed_dim
        } else {
            CONDITION_DIM
        }
    }
}

/// Gaussian Fourier features of `i / T`: `[sin(2π ω_k i/T)..., cos(2π ω_k i/T)...]`.
pub fn embed_step(i: usize, total: usize, freqs: &[f64]) -> Vec<f64> {
    let x = i as f64 / total.max(1) as f64;
    let phase: Vec<f64> = freqs.iter().map(|w| 2.0 * std::f64::consts::PI * w * x).collect();
    phase.iter().map(|p| p.sin()).chain(phase.iter().map(|p| p.cos())).collect()
}

/// Frequencies `ω_k ~ 16 N(0, 1)` drawn from `seed`.
pub fn embedding_frequencies(embed_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..embed_dim / 2)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            16.0 * z
        })
        .collect()
}

/// One batched network call.
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a> {
    pub steps: usize,
    pub batch: usize,
    /// `[steps * batch, CONDITION_DIM]`, normalized.
    pub condition: &'a [f64],
    /// `[steps * batch, FORCE_DIM]` noisy forces; required by denoising nets.
    pub noisy: Option<&'a [f64]>,
    /// Denoising step of each batch item; required by denoising nets.
    pub step: Option<&'a [usize]>,
    pub total_steps: usize,
}

pub struct ScoreNetwork {
    config: ScoreNetConfig,
    params: ParamSet,
    freqs: Vec<f64>,
    tokenizer: [usize; 2],
    core: Box<dyn SequenceCore>,
    head: [usize; 2],
    evaluations: AtomicU64,
}

impl std::fmt::Debug for ScoreNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreNetwork")
            .field("config", &self.config)
            .field("parameters", &self.params.size())
            .finish()
    }
}

impl Clone for ScoreNetwork {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone()).expect("layout already validated")
    }
}

impl ScoreNetwork {
    pub fn new(config: ScoreNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let tokenizer = [
            params.insert_glorot("tokenizer.w", config.input_dim(), config.token_dim, &mut rng),
            params.insert_zeros("tokenizer.b", 1, config.token_dim),
        ];
        let core: Box<dyn SequenceCore> = match config.core {
            CoreKind::Gru => Box::new(Recurrent::gru(
                &mut params,
                "core",
                config.token_dim,
                config.hidden_dim,
                config.layers,
                config.bidirectional,
                &mut rng,
            )),
            CoreKind::Lstm => Box::new(Recurrent::lstm(
                &mut params,
                "core",
                config.token_dim,
                config.hidden_dim,
                config.layers,
                config.bidirectional,
                &mut rng,
            )),
            CoreKind::Mlp => Box::new(PerStepMlp::new(&mut params, "core", config.token_dim, config.hidden_dim, config.layers, &mut rng)),
        };
        // A zero head makes the untrained net predict zero noise.
        let head = [
            params.insert_zeros("head.w", core.out_dim(), FORCE_DIM),
            params.insert_zeros("head.b", 1, FORCE_DIM),
        ];
        Ok(Self {
            freqs: embedding_frequencies(config.embed_dim, config.embed_seed),
            config,
            params,
            tokenizer,
            core,
            head,
            evaluations: AtomicU64::new(0),
        })
    }

    /// Rebuilds the network around stored parameters, checking names and shapes.
    pub fn from_params(config: ScoreNetConfig, params: ParamSet) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if !net.params.same_layout(&params) {
            return Err(Error::Checkpoint("parameters do not match the network configuration".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    /// Forward calls made so far, counting one per batched call.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    /// Per-step tokenizer input rows `[noisy force, condition, step embedding]`.
    pub fn features(&self, input: &NetInput) -> Result<Vec<f64>> {
        let rows = input.steps * input.batch;
        if input.condition.len() != rows * CONDITION_DIM {
            return Err(Error::ShapeMismatch {
                op: "condition",
                lhs: vec![rows, CONDITION_DIM],
                rhs: vec![input.condition.len()],
            });
        }
        if !self.config.denoising {
            return Ok(input.condition.to_vec());
        }
        let (Some(noisy), Some(step)) = (input.noisy, input.step) else {
            return Err(Error::InvalidConfig("denoising net needs noisy forces and step indices".into()));
        };
        if noisy.len() != rows * FORCE_DIM || step.len() != input.batch {
            return Err(Error::ShapeMismatch {
                op: "noisy forces",
                lhs: vec![rows, FORCE_DIM],
                rhs: vec![noisy.len(), step.len()],
            });
        }
        let embeds: Vec<Vec<f64>> = step.iter().map(|&i| embed_step(i, input.total_steps, &self.freqs)).collect();
        let width = self.config.input_dim();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&noisy[r * FORCE_DIM..(r + 1) * FORCE_DIM]);
            out.extend_from_slice(&input.condition[r * CONDITION_DIM..(r + 1) * CONDITION_DIM]);
            out.extend_from_slice(&embeds[r % input.batch]);
        }
        Ok(out)
    }

    /// Tokens `[rows, token_dim]` for raw tokenizer input rows.
    pub fn tokenize(&self, tape: &mut Tape, vars: &[Var], features: &[f64]) -> Result<Var> {
        let width = self.config.input_dim();
        if features.len() % width != 0 {
            return Err(Error::ShapeMismatch {
                op: "tokenize",
                lhs: vec![features.len()],
                rhs: vec![width],
            });
        }
        let x = tape.constant(features.len() / width, width, features.to_vec())?;
        let z = tape.matmul(x, vars[self.tokenizer[0]])?;
        tape.add(z, vars[self.tokenizer[1]])
    }

    /// Records the forward pass; returns `[steps * batch, 2]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: &NetInput) -> Result<Var> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let features = self.features(input)?;
        let tokens = self.tokenize(tape, vars, &features)?;
        let hidden = self.core.forward(tape, vars, tokens, input.steps, input.batch)?;
        let out = tape.matmul(hidden, vars[self.head[0]])?;
        tape.add(out, vars[self.head[1]])
    }

    /// Forward pass with frozen parameters; returns the time-major `[steps * batch, 2]` buffer.
    pub fn predict(&self, input: &NetInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape)?;
        let out = self.forward(&mut tape, &vars, input)?;
        let values = tape.value(out).to_vec();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score network output"));
        }
        Ok(values)
    }

    /// Parameters recorded as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.bind(tape)
    }

    fn bind_frozen(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                let [r, c] = t.as_matrix_shape()?;
                tape.constant(r, c, t.data().to_vec())
            })
            .collect()
    }
}
