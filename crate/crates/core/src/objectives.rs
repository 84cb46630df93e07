//! Stiffness schedules, the task/compliance objective pair, and prediction metrics.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{Real, Vec2};

/// Default number of constant-stiffness phases.
pub const DEFAULT_PHASES: usize = 10;
/// Lower bound of the searched stiffness range, N/m.
pub const K_MIN: f64 = 10.0;
/// Upper bound of the searched stiffness range, N/m.
pub const K_MAX: f64 = 2000.0;

/// Piecewise-constant diagonal stiffness over a horizon of `horizon` steps.
///
/// Phase `p` (0-based) covers the steps `floor(p H / P) .. floor((p + 1) H / P)`,
/// so the phases partition `0..H` for any `P <= H`.
#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessSchedule<T> {
    phases: Vec<Vec2<T>>,
    horizon: usize,
}

impl<T: Real> StiffnessSchedule<T> {
    pub fn new(phases: Vec<Vec2<T>>, horizon: usize) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidSchedule("needs at least one phase".into()));
        }
        if horizon < phases.len() {
            return Err(Error::InvalidSchedule(format!(
                "horizon {horizon} shorter than phase count {}",
                phases.len()
            )));
        }
        if phases
            .iter()
            .any(|k| !k.is_finite() || k.x < T::zero() || k.z < T::zero())
        {
            return Err(Error::InvalidSchedule("stiffness must be finite and >= 0".into()));
        }
        Ok(Self { phases, horizon })
    }

    /// The same diagonal stiffness in every phase.
    pub fn constant(k: Vec2<T>, phases: usize, horizon: usize) -> Result<Self> {
        Self::new(vec![k; phases.max(1)], horizon)
    }

    pub fn phases(&self) -> &[Vec2<T>] {
        &self.phases
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn phase_range(&self, p: usize) -> Range<usize> {
        let n = self.phases.len();
        (p * self.horizon / n)..((p + 1) * self.horizon / n)
    }

    pub fn phase_of_step(&self, t: usize) -> usize {
        // Smallest p with floor((p + 1) H / P) > t.
        let n = self.phases.len();
        let mut p = (t * n) / self.horizon;
        while self.phase_range(p).end <= t {
            p += 1;
        }
        while p > 0 && self.phase_range(p).start > t {
            p -= 1;
        }
        p
    }

    /// Per-step stiffness `K_1..K_H`.
    pub fn expand(&self) -> Vec<Vec2<T>> {
        let mut out = Vec::with_capacity(self.horizon);
        for (p, k) in self.phases.iter().enumerate() {
            let r = self.phase_range(p);
            out.extend(std::iter::repeat_n(*k, r.len()));
        }
        out
    }

    pub fn within_bounds(&self, k_min: T, k_max: T) -> bool {
        self.phases
            .iter()
            .all(|k| k.x >= k_min && k.x <= k_max && k.z >= k_min && k.z <= k_max)
    }

    /// Flattened `[ln kx_0, ln kz_0, ln kx_1, ...]`, the optimizer's search coordinates.
    pub fn to_log_vector(&self) -> Vec<f64> {
        self.phases
            .iter()
            .flat_map(|k| [k.x.as_f64().ln(), k.z.as_f64().ln()])
            .collect()
    }

    pub fn from_log_vector(v: &[f64], horizon: usize) -> Result<Self> {
        if v.len() % 2 != 0 || v.is_empty() {
            return Err(Error::InvalidSchedule(format!("log vector of length {}", v.len())));
        }
        let phases = v
            .chunks(2)
            .map(|c| Vec2::new(T::lit(c[0].exp()), T::lit(c[1].exp())))
            .collect();
        Self::new(phases, horizon)
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            phases: self.phases.iter().map(|k| k.scale(factor)).collect(),
            horizon: self.horizon,
        }
    }

    pub fn cast<U: Real>(&self) -> StiffnessSchedule<U> {
        StiffnessSchedule {
            phases: self.phases.iter().map(|k| Vec2::new(U::lit(k.x.as_f64()), U::lit(k.z.as_f64()))).collect(),
            horizon: self.horizon,
        }
    }

    pub fn to_record(&self) -> ScheduleRecord {
        ScheduleRecord {
            p: self.phases.len(),
            k: self.phases.iter().map(|k| k.to_array()).collect(),
        }
    }

    pub fn from_record(rec: &ScheduleRecord, horizon: usize) -> Result<Self> {
        if rec.p != rec.k.len() {
            return Err(Error::InvalidSchedule(format!(
                "P = {} but {} phase entries",
                rec.p,
                rec.k.len()
            )));
        }
        Self::new(rec.k.iter().map(|&a| Vec2::from_array(a)).collect(), horizon)
    }
}

/// Serialized schedule: `{"P": 10, "k": [[kx, kz], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    #[serde(rename = "P")]
    pub p: usize,
    pub k: Vec<[f64; 2]>,
}

/// `(L_task, L_comp)`, both minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair<T> {
    pub task: T,
    pub comp: T,
}

impl<T: Real> ObjectivePair<T> {
    pub fn new(task: T, comp: T) -> Self {
        Self { task, comp }
    }

    pub fn is_finite(&self) -> bool {
        self.task.is_finite() && self.comp.is_finite()
    }

    /// `self` is no worse in both objectives and strictly better in one.
    pub fn dominates(&self, other: &Self) -> bool {
        self.task <= other.task
            && self.comp <= other.comp
            && (self.task < other.task || self.comp < other.comp)
    }
}

/// Prediction quality over a test set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean squared error of normalized forces.
    pub mse: f64,
    /// Pearson correlation between predicted and true task objectives.
    pub r: f64,
}

/// RMSE over all steps and both force axes, in Newtons.
pub fn task_objective<T: Real>(observed: &[Vec2<T>], demo: &[Vec2<T>]) -> Result<T> {
    if observed.len() != demo.len() {
        return Err(Error::LengthMismatch(observed.len(), demo.len()));
    }
    if observed.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = observed
        .iter()
        .zip(demo)
        .map(|(a, b)| {
            let d = *a - *b;
            d.dot(d)
        })
        .sum();
    Ok((sum / T::lit((2 * observed.len()) as f64)).sqrt())
}

/// Per-step mean of the entrywise absolute stiffness sum over the expanded schedule.
pub fn compliance_objective<T: Real>(schedule: &StiffnessSchedule<T>) -> T {
    let h = schedule.horizon();
    let total: T = schedule
        .phases()
        .iter()
        .enumerate()
        .map(|(p, k)| (k.x.abs() + k.z.abs()) * T::lit(schedule.phase_range(p).len() as f64))
        .sum();
    total / T::lit(h as f64)
}

/// Pearson correlation coefficient.
pub fn correlation_metric<T: Real>(predicted: &[T], truth: &[T]) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    let n = predicted.len();
    if n < 2 {
        return Err(Error::DegenerateVariance);
    }
    let nf = T::lit(n as f64);
    let mp = predicted.iter().copied().sum::<T>() / nf;
    let mt = truth.iter().copied().sum::<T>() / nf;
    let (mut cov, mut vp, mut vt) = (T::zero(), T::zero(), T::zero());
    for (&p, &t) in predicted.iter().zip(truth) {
        cov = cov + (p - mp) * (t - mt);
        vp = vp + (p - mp) * (p - mp);
        vt = vt + (t - mt) * (t - mt);
    }
    if vp <= T::zero() || vt <= T::zero() {
        return Err(Error::DegenerateVariance);
    }
    let r = cov / (vp.sqrt() * vt.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}
