//! Objective evaluators for one task: simulator rollouts or a learned force model.

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::Condition;
use crate::diffusion::ForceModel;
use crate::error::{Error, Result};
use crate::objectives::{compliance_objective, task_objective, ObjectivePair, StiffnessSchedule};
use crate::sim::{rollout, SimConfig, SurfaceModel, Trajectory};

/// The demonstration to reproduce and the surface it was recorded on.
#[derive(Clone, Debug)]
pub struct Task {
    pub sim: SimConfig<f64>,
    pub surface: SurfaceModel<f64>,
    pub demo: Trajectory<f64>,
}

impl Task {
    pub fn horizon(&self) -> usize {
        self.demo.horizon()
    }

    /// Rolls every schedule out on the simulator, in parallel; results keep the input order.
    pub fn simulate(&self, schedules: &[StiffnessSchedule<f64>]) -> Vec<Result<ObjectivePair<f64>>> {
        schedules
            .par_iter()
            .map(|s| {
                let traj = rollout(&self.sim, &self.surface, s, &self.demo)?;
                Ok(ObjectivePair::new(task_objective(&traj.forces, &self.demo.forces)?, compliance_objective(s)))
            })
            .collect()
    }

    /// Scores every schedule with forces predicted by `model` in one batch.
    pub fn predict(&self, model: &ForceModel, schedules: &[StiffnessSchedule<f64>], rng: &mut impl Rng) -> Vec<Result<ObjectivePair<f64>>> {
        match self.predict_batch(model, schedules, rng) {
            Ok(v) => v.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                schedules.iter().map(|_| Err(Error::EvaluatorFailure(msg.clone()))).collect()
            }
        }
    }

    fn predict_batch(&self, model: &ForceModel, schedules: &[StiffnessSchedule<f64>], rng: &mut impl Rng) -> Result<Vec<ObjectivePair<f64>>> {
        let conds = schedules
            .iter()
            .map(|s| Condition::for_schedule(&self.demo, s, &self.sim.inertia))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Condition> = conds.iter().collect();
        let forces = model.predict(&refs, rng)?;
        forces
            .iter()
            .zip(schedules)
            .map(|(f, s)| Ok(ObjectivePair::new(task_objective(f, &self.demo.forces)?, compliance_objective(s))))
            .collect()
    }
}
