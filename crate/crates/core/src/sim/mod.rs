//! Planar impedance-controlled end-effector against a rigid height-field surface.
//!
//! The closed-loop dynamics are `Λ ẍ = K (x_attr - x) - D ẋ + F_drag(ẋ) + F_contact`
//! with `D = 2 K^{1/2}`, integrated by semi-implicit Euler with the damping term taken at
//! the step midpoint velocity `(v_t + v_{t+1}) / 2`. That makes the central-difference
//! velocity of recorded poses the one the plant actually damped. `F_drag` is a smooth Coulomb
//! drag internal to the plant that grows with the normal load of the previous step; it is not
//! observed by the force sensor, so attractors computed from recorded forces do not
//! compensate it.

mod contact;
mod demo;
mod surface;
mod trajectory;

pub use contact::{
    dual_objective, dual_system, project_cone, solve_contact, ContactProblem, ContactSolution, Inertia,
    SolverSettings,
};
pub use demo::{generate_demo, MotionKind, MotionParams, DEMO_STIFFNESS};
pub use surface::{SurfaceKind, SurfaceModel};
pub use trajectory::{finite_difference_accel, finite_difference_velocity, Trajectory, TrajectoryMeta};

use crate::error::{Error, Result};
use crate::num::{Real, Vec2};
use crate::objectives::StiffnessSchedule;

/// Smallest stiffness entry treated as invertible.
pub const MIN_INVERTIBLE_STIFFNESS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub dt: T,
    pub inertia: Inertia<T>,
    /// Diagonal entry of the contact regularizer `R`.
    pub regularizer: T,
    /// Magnitude of the unmodeled plant drag, N.
    pub plant_drag: T,
    /// Extra drag per newton of normal load from the previous step, dimensionless.
    pub load_drag: T,
    /// Velocity scale at which the drag saturates, m/s.
    pub drag_velocity: T,
    /// Contacts are assembled when the gap is below this distance, m.
    pub contact_margin: T,
    pub solver: SolverSettings,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(0.01),
            inertia: Inertia::new(T::one(), T::one()),
            regularizer: T::lit(1e-4),
            plant_drag: T::lit(0.1),
            load_drag: T::lit(0.15),
            drag_velocity: T::lit(0.01),
            contact_margin: T::lit(0.05),
            solver: SolverSettings::default(),
        }
    }
}

/// Damping `D = 2 K^{1/2}` on the diagonal.
pub fn critical_damping<T: Real>(k: Vec2<T>) -> Vec2<T> {
    Vec2::new(T::lit(2.0) * k.x.sqrt(), T::lit(2.0) * k.z.sqrt())
}

/// Impedance parameters for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceParams<T> {
    pub inertia: Inertia<T>,
    pub stiffness: Vec2<T>,
    pub damping: Vec2<T>,
    pub attractor: Vec2<T>,
}

impl<T: Real> ImpedanceParams<T> {
    pub fn new(inertia: Inertia<T>, stiffness: Vec2<T>, attractor: Vec2<T>) -> Self {
        Self {
            inertia,
            stiffness,
            damping: critical_damping(stiffness),
            attractor,
        }
    }

    /// Controller force `K (x_attr - x) - D ẋ`.
    pub fn actuated_force(&self, x: Vec2<T>, v: Vec2<T>) -> Vec2<T> {
        (self.attractor - x).hadamard(self.stiffness) - v.hadamard(self.damping)
    }
}

/// Per-step contact bookkeeping for property checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactRecord<T> {
    /// Signed gap at the pose reached by the step.
    pub gap_after: T,
    pub normal_force: T,
    pub tangent_force: T,
    pub friction_coefficient: T,
    pub in_contact: bool,
}

/// Integrates from `(x0, v0)` with per-step stiffness and attractors.
pub fn simulate<T: Real>(
    cfg: &SimConfig<T>,
    surface: &SurfaceModel<T>,
    x0: Vec2<T>,
    v0: Vec2<T>,
    stiffness: &[Vec2<T>],
    attractors: &[Vec2<T>],
) -> Result<(Trajectory<T>, Vec<ContactRecord<T>>)> {
    if stiffness.len() != attractors.len() {
        return Err(Error::LengthMismatch(stiffness.len(), attractors.len()));
    }
    let h = stiffness.len();
    let dt = cfg.dt;
    let mu = surface.friction_coefficient;
    let mut x = x0;
    let mut v = v0;
    let mut traj = Trajectory {
        dt,
        poses: Vec::with_capacity(h),
        velocities: Vec::with_capacity(h),
        attractors: attractors.to_vec(),
        forces: Vec::with_capacity(h),
        meta: TrajectoryMeta::new(surface.cast(), 0),
    };
    let mut records = Vec::with_capacity(h);
    let mut load = T::zero();
    for t in 0..h {
        let params = ImpedanceParams::new(cfg.inertia, stiffness[t], attractors[t]);
        let speed = (v.dot(v) + cfg.drag_velocity * cfg.drag_velocity).sqrt();
        let drag = v.scale(-(cfg.plant_drag + cfg.load_drag * load) / speed);
        let actuated = params.actuated_force(x, v) + drag;

        let (gap, normal) = surface.gap(x);
        // Midpoint damping folds dt D / 2 into the inertia of the step.
        let step_inertia = Inertia(cfg.inertia.0 + params.damping.scale(T::lit(0.5) * dt));
        let (sol, in_contact) = if gap < cfg.contact_margin {
            let geometry = ContactGeometry {
                normal,
                tangent: normal.perp(),
                gap,
                curvature: surface.curvature(x.x - gap * normal.x),
            };
            (solve_sliding_contact(cfg, &step_inertia, actuated, &geometry, v, mu)?, true)
        } else {
            (solve_contact(&ContactProblem::free(actuated), &step_inertia, &cfg.solver)?, false)
        };

        traj.poses.push(x);
        traj.velocities.push(v);
        traj.forces.push(sol.contact_force);

        v += sol.accel.scale(dt);
        x += v.scale(dt);
        if !x.is_finite() {
            return Err(Error::NonFinite("rollout state"));
        }
        load = sol.normal_force.max(T::zero());
        records.push(ContactRecord {
            gap_after: surface.gap(x).0,
            normal_force: sol.normal_force,
            tangent_force: sol.tangent_force,
            friction_coefficient: mu,
            in_contact,
        });
    }
    Ok((traj, records))
}

/// Local contact frame at the closest surface point.
struct ContactGeometry<T> {
    normal: Vec2<T>,
    tangent: Vec2<T>,
    gap: T,
    curvature: T,
}

/// Contact solve whose normal reference is refined until the post-step gap closes.
///
/// On the friction-cone boundary the cone-constrained optimum leaves a separating normal
/// residual of `mu |w_t|`, where `w_t` is the tangential residual. Feeding that residual
/// back into the normal reference removes the drift while every inner solve stays the
/// same convex problem. The same loop evaluates the curvature correction of the gap
/// prediction at the post-step tangential velocity.
fn solve_sliding_contact<T: Real>(
    cfg: &SimConfig<T>,
    inertia: &Inertia<T>,
    actuated: Vec2<T>,
    geo: &ContactGeometry<T>,
    v: Vec2<T>,
    mu: T,
) -> Result<ContactSolution<T>> {
    let dt = cfg.dt;
    let vn = v.dot(geo.normal);
    let vt = v.dot(geo.tangent);
    let a_tangent = -vt / dt;
    let a_normal = |vt_next: T, shift: T| {
        -(geo.gap / dt + vn) / dt + T::lit(0.5) * geo.curvature * vt_next * vt_next - shift
    };
    let problem = |a_n: T| {
        let (jac, a_star, reg) = if mu > T::zero() {
            (vec![geo.normal, geo.tangent], vec![a_n, a_tangent], vec![cfg.regularizer; 2])
        } else {
            (vec![geo.normal], vec![a_n], vec![cfg.regularizer])
        };
        ContactProblem {
            unconstrained_accel: a_star,
            actuated_force: actuated,
            jacobian: jac,
            regularizer: reg,
            friction_coefficient: mu,
        }
    };
    let mut a_n = a_normal(vt, T::zero());
    let mut sol = solve_contact(&problem(a_n), inertia, &cfg.solver)?;
    for _ in 0..MAX_DRIFT_ITERATIONS {
        if sol.normal_force <= T::zero() {
            break;
        }
        let vt_next = (v + sol.accel.scale(dt)).dot(geo.tangent);
        let shift = if mu > T::zero() {
            let w_t = sol.accel.dot(geo.tangent) - a_tangent + cfg.regularizer * sol.tangent_force;
            mu * w_t.abs()
        } else {
            T::zero()
        };
        let next = a_normal(vt_next, shift);
        if (next - a_n).abs() <= T::lit(1e-9) * (T::one() + next.abs()) {
            break;
        }
        a_n = next;
        sol = solve_contact(&problem(a_n), inertia, &cfg.solver)?;
    }
    Ok(sol)
}

const MAX_DRIFT_ITERATIONS: usize = 20;

/// Attractors `x_attr_t = x_demo_t + K_t⁻¹ (D_t ẋ_t + Λ ẍ_t - F_t)` with derivatives from
/// finite differences of the demonstrated poses.
pub fn compute_attractor<T: Real>(
    demo: &Trajectory<T>,
    schedule: &StiffnessSchedule<T>,
    inertia: &Inertia<T>,
) -> Result<Vec<Vec2<T>>> {
    if demo.horizon() != schedule.horizon() {
        return Err(Error::LengthMismatch(demo.horizon(), schedule.horizon()));
    }
    let ks = schedule.expand();
    let eps = T::lit(MIN_INVERTIBLE_STIFFNESS);
    if let Some((t, k)) = ks.iter().enumerate().find(|(_, k)| k.x < eps || k.z < eps) {
        return Err(Error::SingularStiffness {
            step: t,
            value: k.x.min(k.z).as_f64(),
        });
    }
    let vel = finite_difference_velocity(&demo.poses, demo.dt);
    let acc = finite_difference_accel(&demo.poses, demo.dt);
    Ok((0..demo.horizon())
        .map(|t| {
            let k = ks[t];
            let rhs = vel[t].hadamard(critical_damping(k)) + inertia.apply(acc[t]) - demo.forces[t];
            demo.poses[t] + Vec2::new(rhs.x / k.x, rhs.z / k.z)
        })
        .collect())
}

/// Reproduces `demo` under `schedule`; the result records the observed contact forces.
pub fn rollout<T: Real>(
    cfg: &SimConfig<T>,
    surface: &SurfaceModel<T>,
    schedule: &StiffnessSchedule<T>,
    demo: &Trajectory<T>,
) -> Result<Trajectory<T>> {
    rollout_detailed(cfg, surface, schedule, demo).map(|(t, _)| t)
}

pub fn rollout_detailed<T: Real>(
    cfg: &SimConfig<T>,
    surface: &SurfaceModel<T>,
    schedule: &StiffnessSchedule<T>,
    demo: &Trajectory<T>,
) -> Result<(Trajectory<T>, Vec<ContactRecord<T>>)> {
    let attractors = compute_attractor(demo, schedule, &cfg.inertia)?;
    let stiffness = schedule.expand();
    let (mut traj, records) = simulate(cfg, surface, demo.poses[0], demo.velocities[0], &stiffness, &attractors)?;
    traj.meta = demo.meta.clone();
    traj.meta.schedule = Some(schedule.to_record());
    Ok((traj, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_space() -> SurfaceModel<f64> {
        SurfaceModel::flat(-10.0, 0.3)
    }

    #[test]
    fn equilibrium_in_free_space() {
        let cfg = SimConfig::default();
        let start = Vec2::new(0.1, 0.2);
        let k = vec![Vec2::new(300.0, 800.0); 200];
        let (traj, records) = simulate(&cfg, &free_space(), start, Vec2::zero(), &k, &vec![start; 200]).unwrap();
        for p in &traj.poses {
            assert!((*p - start).norm() < 1e-6);
        }
        assert!(records.iter().all(|r| !r.in_contact));
    }

    #[test]
    fn critically_damped_step_response() {
        let cfg = SimConfig::default();
        for kval in [10.0, 100.0, 500.0, 2000.0] {
            let k = vec![Vec2::new(kval, kval); 400];
            let target = Vec2::new(0.05, -0.02);
            let (traj, _) = simulate(&cfg, &free_space(), Vec2::zero(), Vec2::zero(), &k, &vec![target; 400]).unwrap();
            let overshoot_x = traj.poses.iter().map(|p| p.x - target.x).fold(f64::MIN, f64::max);
            let overshoot_z = traj.poses.iter().map(|p| target.z - p.z).fold(f64::MIN, f64::max);
            assert!(overshoot_x <= 0.01 * 0.05, "K={kval}: x overshoot {overshoot_x}");
            assert!(overshoot_z <= 0.01 * 0.02, "K={kval}: z overshoot {overshoot_z}");
        }
    }

    #[test]
    fn step_response_tracks_closed_form() {
        // Without drag, x(t) = s (1 - (1 + w t) e^{-w t}) for Λ = 1, D = 2 sqrt(K).
        let cfg = SimConfig {
            plant_drag: 0.0,
            ..SimConfig::default()
        };
        let kval = 100.0;
        let w: f64 = (kval as f64).sqrt();
        let (traj, _) = simulate(
            &cfg,
            &free_space(),
            Vec2::zero(),
            Vec2::zero(),
            &vec![Vec2::new(kval, kval); 300],
            &vec![Vec2::new(0.1, 0.0); 300],
        )
        .unwrap();
        for (i, p) in traj.poses.iter().enumerate() {
            let t = i as f64 * cfg.dt;
            let exact = 0.1 * (1.0 - (1.0 + w * t) * (-w * t).exp());
            assert!((p.x - exact).abs() < 0.1 * 0.06, "t={t}: {} vs {exact}", p.x);
        }
    }

    #[test]
    fn static_demo_attractor() {
        let demo = Trajectory {
            dt: 0.01,
            poses: vec![Vec2::<f64>::new(0.2, 0.1); 5],
            velocities: vec![Vec2::zero(); 5],
            attractors: vec![Vec2::zero(); 5],
            forces: vec![Vec2::new(0.0, -5.0); 5],
            meta: TrajectoryMeta::new(free_space(), 0),
        };
        let sched = StiffnessSchedule::constant(Vec2::new(100.0, 100.0), 1, 5).unwrap();
        let attr = compute_attractor(&demo, &sched, &Inertia::new(2.0, 2.0)).unwrap();
        for a in &attr {
            assert!((a.x - 0.2).abs() < 1e-12 && (a.z - 0.15).abs() < 1e-12);
        }
        let mut zero_force = demo.clone();
        zero_force.forces = vec![Vec2::zero(); 5];
        let attr = compute_attractor(&zero_force, &sched, &Inertia::new(2.0, 2.0)).unwrap();
        assert!(attr.iter().all(|a| (*a - Vec2::new(0.2, 0.1)).norm() < 1e-12));
    }

    #[test]
    fn singular_stiffness_is_rejected() {
        let demo = Trajectory {
            dt: 0.01,
            poses: vec![Vec2::zero(); 4],
            velocities: vec![Vec2::zero(); 4],
            attractors: vec![Vec2::zero(); 4],
            forces: vec![Vec2::zero(); 4],
            meta: TrajectoryMeta::new(free_space(), 0),
        };
        let sched = StiffnessSchedule::new(vec![Vec2::new(10.0, 10.0), Vec2::new(1e-12, 5.0)], 4).unwrap();
        assert!(matches!(
            compute_attractor(&demo, &sched, &Inertia::new(1.0, 1.0)),
            Err(Error::SingularStiffness { step: 2, .. })
        ));
    }
}
