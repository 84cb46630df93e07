//! Sequence cores over time-major activations (row `t * batch + b`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoreKind {
    Gru,
    Lstm,
    /// Perceptron applied to each step on its own.
    Mlp,
}

impl std::str::FromStr for CoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gru" => Ok(Self::Gru),
            "lstm" => Ok(Self::Lstm),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown core `{other}` (expected gru, lstm or mlp)")),
        }
    }
}

impl std::fmt::Display for CoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gru => "gru",
            Self::Lstm => "lstm",
            Self::Mlp => "mlp",
        })
    }
}

/// A stack of layers mapping `[steps * batch, in_dim]` to `[steps * batch, out_dim]`.
pub trait SequenceCore: Send + Sync {
    fn out_dim(&self) -> usize;
    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, steps: usize, batch: usize) -> Result<Var>;
}

/// Parameter indices of one recurrent direction.
#[derive(Clone, Debug)]
struct Cell {
    w_in: usize,
    w_rec: usize,
    b_in: usize,
    b_rec: usize,
}

impl Cell {
    fn register(params: &mut ParamSet, prefix: &str, in_dim: usize, hidden: usize, gates: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_in: params.insert_glorot(format!("{prefix}.w_in"), in_dim, gates * hidden, rng),
            w_rec: params.insert_glorot(format!("{prefix}.w_rec"), hidden, gates * hidden, rng),
            b_in: params.insert_zeros(format!("{prefix}.b_in"), 1, gates * hidden),
            b_rec: params.insert_zeros(format!("{prefix}.b_rec"), 1, gates * hidden),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CellType {
    Gru,
    Lstm,
}

impl CellType {
    fn gates(self) -> usize {
        match self {
            Self::Gru => 3,
            Self::Lstm => 4,
        }
    }
}

/// Stacked recurrent layers, optionally bidirectional.
#[derive(Clone, Debug)]
pub struct Recurrent {
    kind: CellType,
    hidden: usize,
    bidirectional: bool,
    /// Per layer, one cell per direction.
    layers: Vec<Vec<Cell>>,
}

impl Recurrent {
    fn build(
        kind: CellType,
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut stack = Vec::with_capacity(layers);
        let mut d_in = in_dim;
        for l in 0..layers {
            let cells = (0..dirs)
                .map(|d| Cell::register(params, &format!("{prefix}.l{l}.d{d}"), d_in, hidden, kind.gates(), rng))
                .collect();
            stack.push(cells);
            d_in = hidden * dirs;
        }
        Self {
            kind,
            hidden,
            bidirectional,
            layers: stack,
        }
    }

    pub fn gru(params: &mut ParamSet, prefix: &str, in_dim: usize, hidden: usize, layers: usize, bidirectional: bool, rng: &mut impl Rng) -> Self {
        Self::build(CellType::Gru, params, prefix, in_dim, hidden, layers, bidirectional, rng)
    }

    pub fn lstm(params: &mut ParamSet, prefix: &str, in_dim: usize, hidden: usize, layers: usize, bidirectional: bool, rng: &mut impl Rng) -> Self {
        Self::build(CellType::Lstm, params, prefix, in_dim, hidden, layers, bidirectional, rng)
    }

    fn run_direction(&self, tape: &mut Tape, vars: &[Var], cell: &Cell, x: Var, steps: usize, batch: usize, reverse: bool) -> Result<Var> {
        let h = self.hidden;
        let proj = tape.matmul(x, vars[cell.w_in])?;
        let proj = tape.add(proj, vars[cell.b_in])?;
        if self.kind == CellType::Gru {
            return tape.gru_sequence(proj, vars[cell.w_rec], vars[cell.b_rec], batch, reverse);
        }
        let mut state = tape.constant(batch, h, vec![0.0; batch * h])?;
        let mut memory = state;
        let mut outputs = vec![state; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..steps).rev()) } else { Box::new(0..steps) };
        for t in order {
            let gi = tape.slice(proj, Axis::Rows, t * batch, (t + 1) * batch)?;
            let gh = tape.matmul(state, vars[cell.w_rec])?;
            let gh = tape.add(gh, vars[cell.b_rec])?;
            let pre = tape.add(gi, gh)?;
            let ifo = tape.slice(pre, Axis::Cols, 0, 3 * h)?;
            let ifo = tape.sigmoid(ifo);
            let g = tape.slice(pre, Axis::Cols, 3 * h, 4 * h)?;
            let g = tape.tanh(g);
            let i = tape.slice(ifo, Axis::Cols, 0, h)?;
            let f = tape.slice(ifo, Axis::Cols, h, 2 * h)?;
            let o = tape.slice(ifo, Axis::Cols, 2 * h, 3 * h)?;
            let kept = tape.mul(f, memory)?;
            let written = tape.mul(i, g)?;
            memory = tape.add(kept, written)?;
            let squashed = tape.tanh(memory);
            state = tape.mul(o, squashed)?;
            outputs[t] = state;
        }
        tape.concat(&outputs, Axis::Rows)
    }
}

impl SequenceCore for Recurrent {
    fn out_dim(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, steps: usize, batch: usize) -> Result<Var> {
        let mut cur = x;
        for cells in &self.layers {
            let fwd = self.run_direction(tape, vars, &cells[0], cur, steps, batch, false)?;
            cur = if self.bidirectional {
                let bwd = self.run_direction(tape, vars, &cells[1], cur, steps, batch, true)?;
                tape.concat(&[fwd, bwd], Axis::Cols)?
            } else {
                fwd
            };
        }
        Ok(cur)
    }
}

/// Stack of per-step layers `h = tanh(h W + b)` with no mixing across steps.
#[derive(Clone, Debug)]
pub struct PerStepMlp {
    hidden: usize,
    layers: Vec<[usize; 2]>,
}

impl PerStepMlp {
    pub fn new(params: &mut ParamSet, prefix: &str, in_dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut d_in = in_dim;
        let layers = (0..layers.max(1))
            .map(|l| {
                let w = params.insert_glorot(format!("{prefix}.l{l}.w"), d_in, hidden, rng);
                let b = params.insert_zeros(format!("{prefix}.l{l}.b"), 1, hidden);
                d_in = hidden;
                [w, b]
            })
            .collect();
        Self { hidden, layers }
    }
}

impl SequenceCore for PerStepMlp {
    fn out_dim(&self) -> usize {
        self.hidden
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, _steps: usize, _batch: usize) -> Result<Var> {
        let mut cur = x;
        for &[w, b] in &self.layers {
            let z = tape.matmul(cur, vars[w])?;
            let z = tape.add(z, vars[b])?;
            cur = tape.tanh(z);
        }
        Ok(cur)
    }
}
