use serde::{Deserialize, Serialize};

use crate::diffusion::Example;
use crate::error::{Error, Result};
use crate::num::Vec2;
use crate::objectives::StiffnessSchedule;
use crate::scorenet::{CONDITION_DIM, FORCE_DIM};
use crate::sim::{compute_attractor, Inertia, Trajectory};

/// What the force model is conditioned on: demonstrated poses, attractors and stiffness.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub demo_poses: Vec<Vec2<f64>>,
    pub attractors: Vec<Vec2<f64>>,
    pub stiffness: Vec<Vec2<f64>>,
}

impl Condition {
    /// Condition for reproducing `demo` under `schedule`, without running the simulator.
    pub fn for_schedule(demo: &Trajectory<f64>, schedule: &StiffnessSchedule<f64>, inertia: &Inertia<f64>) -> Result<Self> {
        Ok(Self {
            demo_poses: demo.poses.clone(),
            attractors: compute_attractor(demo, schedule, inertia)?,
            stiffness: schedule.expand(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.demo_poses.len()
    }

    /// `K_t ⊙ (x_attr_t - x_demo_t)` per step.
    pub fn spring_forces(&self) -> impl Iterator<Item = Vec2<f64>> + '_ {
        self.stiffness
            .iter()
            .zip(&self.attractors)
            .zip(&self.demo_poses)
            .map(|((k, a), p)| Vec2::new(k.x * (a.x - p.x), k.z * (a.z - p.z)))
    }
}

/// A condition with the contact forces observed when it was rolled out.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub condition: Condition,
    pub forces: Vec<Vec2<f64>>,
}

impl Sample {
    pub fn from_rollout(demo: &Trajectory<f64>, rollout: &Trajectory<f64>) -> Result<Self> {
        let rec = rollout
            .meta
            .schedule
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("rollout carries no stiffness schedule".into()))?;
        let schedule = StiffnessSchedule::<f64>::from_record(rec, rollout.horizon())?;
        if demo.horizon() != rollout.horizon() {
            return Err(Error::LengthMismatch(demo.horizon(), rollout.horizon()));
        }
        Ok(Self {
            condition: Condition {
                demo_poses: demo.poses.clone(),
                attractors: rollout.attractors.clone(),
                stiffness: schedule.expand(),
            },
            forces: rollout.forces.clone(),
        })
    }
}

/// Observed range of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            // a constant channel still needs an invertible map
            let c = if min.is_finite() { min } else { 0.0 };
            return Self { min: c - 0.5, max: c + 0.5 };
        }
        Self { min, max }
    }

    /// Affine map of `[min, max]` onto `[-1, 1]`.
    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.min + (u + 1.0) * 0.5 * (self.max - self.min)
    }
}

/// Per-channel ranges from the training split; stiffness is handled in log space.
///
/// The attractor enters as the spring force it exerts at the demonstrated pose,
/// `K ⊙ (x_attr - x_demo)`, which keeps it invertible given pose and stiffness while putting
/// every stiffness level on the same force scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pose: [ChannelRange; 2],
    pub spring: [ChannelRange; 2],
    pub log_stiffness: [ChannelRange; 2],
    pub force: [ChannelRange; 2],
}

fn axes<'a>(v: impl Iterator<Item = &'a Vec2<f64>> + Clone) -> [ChannelRange; 2] {
    [ChannelRange::fit(v.clone().map(|p| p.x)), ChannelRange::fit(v.map(|p| p.z))]
}

impl NormStats {
    pub fn fit(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("normalization needs at least one sample".into()));
        }
        let log_k: Vec<Vec2<f64>> = samples
            .iter()
            .flat_map(|s| s.condition.stiffness.iter().map(|k| Vec2::new(k.x.ln(), k.z.ln())))
            .collect();
        Ok(Self {
            pose: axes(samples.iter().flat_map(|s| s.condition.demo_poses.iter())),
            spring: axes(samples.iter().flat_map(|s| s.condition.spring_forces()).collect::<Vec<_>>().iter()),
            log_stiffness: axes(log_k.iter()),
            force: axes(samples.iter().flat_map(|s| s.forces.iter())),
        })
    }

    /// Rows `[pose x, pose z, spring x, spring z, ln kx, ln kz]`, normalized.
    pub fn encode_condition(&self, c: &Condition) -> Result<Vec<f64>> {
        let h = c.horizon();
        if c.attractors.len() != h || c.stiffness.len() != h {
            return Err(Error::LengthMismatch(h, c.attractors.len().min(c.stiffness.len())));
        }
        let mut out = Vec::with_capacity(h * CONDITION_DIM);
        for t in 0..h {
            let (p, a, k) = (c.demo_poses[t], c.attractors[t], c.stiffness[t]);
            out.extend([
                self.pose[0].normalize(p.x),
                self.pose[1].normalize(p.z),
                self.spring[0].normalize(k.x * (a.x - p.x)),
                self.spring[1].normalize(k.z * (a.z - p.z)),
                self.log_stiffness[0].normalize(k.x.ln()),
                self.log_stiffness[1].normalize(k.z.ln()),
            ]);
        }
        report_out_of_range("condition", &out);
        Ok(out)
    }

    pub fn encode_forces(&self, forces: &[Vec2<f64>]) -> Vec<f64> {
        let out: Vec<f64> = forces
            .iter()
            .flat_map(|f| [self.force[0].normalize(f.x), self.force[1].normalize(f.z)])
            .collect();
        report_out_of_range("forces", &out);
        out
    }

    pub fn decode_forces(&self, normalized: &[f64]) -> Vec<Vec2<f64>> {
        normalized
            .chunks(FORCE_DIM)
            .map(|c| Vec2::new(self.force[0].denormalize(c[0]), self.force[1].denormalize(c[1])))
            .collect()
    }

    pub fn example(&self, s: &Sample) -> Result<Example> {
        Ok(Example {
            condition: self.encode_condition(&s.condition)?,
            forces: self.encode_forces(&s.forces),
        })
    }
}

/// Values outside `[-1, 1]` are expected on unseen data; they are logged, never clamped.
fn report_out_of_range(what: &str, v: &[f64]) {
    let n = v.iter().filter(|x| x.abs() > 1.0 + 1e-9).count();
    if n > 0 {
        log::debug!("{n} normalized {what} values fall outside [-1, 1]");
    }
}
