//! Per-step contact resolution.
//!
//! The step acceleration minimizes
//! `(Λa - F)ᵀ Λ⁻¹ (Λa - F) + (Ja - a*)ᵀ R⁻¹ (Ja - a*)`
//! with the contact impulses restricted to the Coulomb cone. It is solved through its
//! dual over contact-frame forces `f = (f_n, f_t)`:
//!
//! `min ½ fᵀ (J Λ⁻¹ Jᵀ + R) f + fᵀ (J Λ⁻¹ F - a*)  s.t.  f_n ≥ 0, |f_t| ≤ μ f_n`
//!
//! after which `a = Λ⁻¹ (F + Jᵀ f)`.

use crate::error::{Error, Result};
use crate::num::{Real, Vec2};

/// Diagonal task-space inertia, kg.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inertia<T>(pub Vec2<T>);

impl<T: Real> Inertia<T> {
    pub fn new(mx: T, mz: T) -> Self {
        Self(Vec2::new(mx, mz))
    }

    pub fn apply(&self, a: Vec2<T>) -> Vec2<T> {
        a.hadamard(self.0)
    }

    pub fn solve(&self, f: Vec2<T>) -> Vec2<T> {
        Vec2::new(f.x / self.0.x, f.z / self.0.z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactProblem<T> {
    /// Reference accelerations `a*`, one per Jacobian row.
    pub unconstrained_accel: Vec<T>,
    pub actuated_force: Vec2<T>,
    /// Row 0 is the contact normal, row 1 (optional) the tangent.
    pub jacobian: Vec<Vec2<T>>,
    /// Diagonal of `R`, one per Jacobian row.
    pub regularizer: Vec<T>,
    pub friction_coefficient: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactSolution<T> {
    pub accel: Vec2<T>,
    /// World-frame contact force `Jᵀ f`.
    pub contact_force: Vec2<T>,
    /// Normal component `f_n`.
    pub normal_force: T,
    /// Tangential component `f_t`.
    pub tangent_force: T,
    pub iterations: usize,
}

impl<T: Real> ContactProblem<T> {
    pub fn free(actuated_force: Vec2<T>) -> Self {
        Self {
            unconstrained_accel: vec![],
            actuated_force,
            jacobian: vec![],
            regularizer: vec![],
            friction_coefficient: T::zero(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.jacobian.len();
        if m > 2 {
            return Err(Error::InvalidProblem(format!("{m} Jacobian rows, at most 2")));
        }
        if self.unconstrained_accel.len() != m || self.regularizer.len() != m {
            return Err(Error::InvalidProblem("row counts disagree".into()));
        }
        if self.regularizer.iter().any(|&r| !(r > T::zero())) {
            return Err(Error::InvalidProblem("regularizer must be positive".into()));
        }
        if !(self.friction_coefficient >= T::zero()) {
            return Err(Error::InvalidProblem("negative friction coefficient".into()));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{f_n ≥ 0, |f_t| ≤ μ f_n}`; with one row, onto `f_n ≥ 0`.
pub fn project_cone<T: Real>(f: [T; 2], rows: usize, mu: T) -> [T; 2] {
    let (n, t) = (f[0], f[1]);
    if rows < 2 {
        return [n.max(T::zero()), T::zero()];
    }
    if t.abs() <= mu * n {
        return f;
    }
    if mu * t.abs() <= -n {
        return [T::zero(), T::zero()];
    }
    let s = (n + mu * t.abs()) / (T::one() + mu * mu);
    [s, mu * s * t.signum()]
}

/// Dual objective `½ fᵀ A f + bᵀ f`.
pub fn dual_objective<T: Real>(a: &[[T; 2]; 2], b: &[T; 2], f: &[T; 2]) -> T {
    let af0 = a[0][0] * f[0] + a[0][1] * f[1];
    let af1 = a[1][0] * f[0] + a[1][1] * f[1];
    T::lit(0.5) * (f[0] * af0 + f[1] * af1) + b[0] * f[0] + b[1] * f[1]
}

/// Assembles the dual `(A, b)` padded to 2×2.
pub fn dual_system<T: Real>(problem: &ContactProblem<T>, inertia: &Inertia<T>) -> ([[T; 2]; 2], [T; 2]) {
    let m = problem.jacobian.len();
    let mut a = [[T::zero(); 2]; 2];
    let mut b = [T::zero(); 2];
    let free = inertia.solve(problem.actuated_force);
    for i in 0..m {
        let ji = problem.jacobian[i];
        for j in 0..m {
            a[i][j] = ji.dot(inertia.solve(problem.jacobian[j]));
        }
        a[i][i] = a[i][i] + problem.regularizer[i];
        b[i] = ji.dot(free) - problem.unconstrained_accel[i];
    }
    if m < 2 {
        a[1][1] = T::one();
    }
    (a, b)
}

pub fn solve_contact<T: Real>(
    problem: &ContactProblem<T>,
    inertia: &Inertia<T>,
    settings: &SolverSettings,
) -> Result<ContactSolution<T>> {
    problem.validate()?;
    let m = problem.jacobian.len();
    if m == 0 {
        return Ok(ContactSolution {
            accel: inertia.solve(problem.actuated_force),
            contact_force: Vec2::zero(),
            normal_force: T::zero(),
            tangent_force: T::zero(),
            iterations: 0,
        });
    }
    let mu = problem.friction_coefficient;
    let (a, b) = dual_system(problem, inertia);
    // Largest eigenvalue of the symmetric 2×2 block bounds the gradient's Lipschitz constant.
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr * T::lit(0.25) - det).max(T::zero()).sqrt();
    let lipschitz = tr * T::lit(0.5) + disc;
    let step = T::one() / lipschitz;
    let tol = T::lit(settings.tolerance);

    let mut f = [T::zero(); 2];
    let mut obj = T::zero();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=settings.max_iterations {
        iterations = k;
        let g0 = a[0][0] * f[0] + a[0][1] * f[1] + b[0];
        let g1 = a[1][0] * f[0] + a[1][1] * f[1] + b[1];
        let next = project_cone([f[0] - step * g0, f[1] - step * g1], m, mu);
        let next_obj = dual_objective(&a, &b, &next);
        let decrease = obj - next_obj;
        f = next;
        obj = next_obj;
        if decrease <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    let mut contact_force = problem.jacobian[0].scale(f[0]);
    if m == 2 {
        contact_force += problem.jacobian[1].scale(f[1]);
    }
    let accel = inertia.solve(problem.actuated_force + contact_force);
    if !accel.is_finite() {
        return Err(Error::NonFinite("contact solve"));
    }
    Ok(ContactSolution {
        accel,
        contact_force,
        normal_force: f[0],
        tangent_force: f[1],
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Inertia<f64> {
        Inertia::new(1.0, 1.0)
    }

    fn flat_problem(force: Vec2<f64>, a_star: [f64; 2], mu: f64) -> ContactProblem<f64> {
        ContactProblem {
            unconstrained_accel: a_star.to_vec(),
            actuated_force: force,
            jacobian: vec![Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)],
            regularizer: vec![1e-4, 1e-4],
            friction_coefficient: mu,
        }
    }

    #[test]
    fn free_motion() {
        let inertia = Inertia::new(2.0, 4.0);
        let sol = solve_contact(&ContactProblem::free(Vec2::new(3.0, -8.0)), &inertia, &Default::default())
            .unwrap();
        assert_eq!(sol.accel, Vec2::new(1.5, -2.0));
        assert_eq!(sol.contact_force, Vec2::zero());
    }

    #[test]
    fn pressed_into_frictionless_plane() {
        let f = 7.5;
        let problem = ContactProblem {
            unconstrained_accel: vec![0.0],
            actuated_force: Vec2::new(0.0, -f),
            jacobian: vec![Vec2::new(0.0, 1.0)],
            regularizer: vec![1e-4],
            friction_coefficient: 0.0,
        };
        let sol = solve_contact(&problem, &unit(), &Default::default()).unwrap();
        // Soft constraint: f_n = f / (1 + R Λ).
        assert!((sol.normal_force - f / (1.0 + 1e-4)).abs() < 1e-9);
        assert!((sol.normal_force - f).abs() / f < 1e-3);
        assert!(sol.accel.z.abs() < 1e-3);
        assert!((sol.contact_force.z - sol.normal_force).abs() < 1e-15);
    }

    #[test]
    fn separating_force_gives_no_contact_force() {
        let sol = solve_contact(&flat_problem(Vec2::new(1.0, 5.0), [0.0, 0.0], 0.5), &unit(), &Default::default())
            .unwrap();
        assert_eq!(sol.contact_force, Vec2::zero());
        assert_eq!(sol.accel, Vec2::new(1.0, 5.0));
    }

    /// Brute-force minimum of the dual objective over a dense grid of the feasible cone.
    fn grid_oracle(a: &[[f64; 2]; 2], b: &[f64; 2], mu: f64, fmax: f64) -> ([f64; 2], f64) {
        let n = 1500;
        let mut best = ([0.0, 0.0], 0.0);
        for i in 0..=n {
            let fnorm = fmax * i as f64 / n as f64;
            for j in 0..=n {
                let ft = -mu * fnorm + 2.0 * mu * fnorm * j as f64 / n as f64;
                let f = [fnorm, ft];
                let o = dual_objective(a, b, &f);
                if o < best.1 {
                    best = (f, o);
                }
            }
        }
        best
    }

    #[test]
    fn sliding_push_lands_on_cone_boundary() {
        let mu = 0.4;
        // Pressed down with 10 N and pushed sideways with 9 N: sticking would need 9 N of
        // friction, the cone allows about 4 N.
        let problem = flat_problem(Vec2::new(9.0, -10.0), [0.0, 0.0], mu);
        let sol = solve_contact(&problem, &unit(), &Default::default()).unwrap();
        assert!((sol.tangent_force.abs() - mu * sol.normal_force).abs() <= 1e-8);
        assert!(sol.tangent_force < 0.0, "friction opposes the push");

        let (a, b) = dual_system(&problem, &unit());
        let (f_grid, obj_grid) = grid_oracle(&a, &b, mu, 15.0);
        let obj = dual_objective(&a, &b, &[sol.normal_force, sol.tangent_force]);
        assert!(obj <= obj_grid + 1e-9, "solver {obj} worse than grid {obj_grid}");
        assert!((sol.normal_force - f_grid[0]).abs() < 0.05);
        assert!((sol.tangent_force - f_grid[1]).abs() < 0.05);
    }

    #[test]
    fn tilted_anisotropic_contact_matches_grid() {
        let n = Vec2::new(-0.3, 1.0).scale(1.0 / 1.09f64.sqrt());
        let problem = ContactProblem {
            unconstrained_accel: vec![-0.5, -2.0],
            actuated_force: Vec2::new(6.0, -12.0),
            jacobian: vec![n, n.perp()],
            regularizer: vec![1e-4, 1e-4],
            friction_coefficient: 0.25,
        };
        let inertia = Inertia::new(1.0, 3.0);
        let sol = solve_contact(&problem, &inertia, &Default::default()).unwrap();
        let (a, b) = dual_system(&problem, &inertia);
        let (_, obj_grid) = grid_oracle(&a, &b, 0.25, 30.0);
        let obj = dual_objective(&a, &b, &[sol.normal_force, sol.tangent_force]);
        assert!(obj <= obj_grid + 1e-9);
        assert!(sol.tangent_force.abs() <= 0.25 * sol.normal_force + 1e-8);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let problem = flat_problem(Vec2::new(9.0, -10.0), [0.0, 0.0], 0.4);
        let tight = SolverSettings {
            max_iterations: 1,
            tolerance: -1.0,
        };
        assert!(matches!(
            solve_contact(&problem, &unit(), &tight),
            Err(Error::NonConvergence { iterations: 1 })
        ));
    }

    #[test]
    fn rejects_malformed_problems() {
        let mut p = flat_problem(Vec2::zero(), [0.0, 0.0], 0.1);
        p.regularizer[1] = 0.0;
        assert!(solve_contact(&p, &unit(), &Default::default()).is_err());
    }

    #[test]
    fn cone_projection_cases() {
        assert_eq!(project_cone([1.0, 0.2], 2, 0.5), [1.0, 0.2]);
        assert_eq!(project_cone([-1.0, 0.1], 2, 0.5), [0.0, 0.0]);
        let p = project_cone([1.0f64, 2.0], 2, 0.5);
        assert!((p[1] - 0.5 * p[0]).abs() < 1e-15);
        assert_eq!(project_cone([-3.0, 2.0], 1, 0.5), [0.0, 0.0]);
    }
}
