use serde::{Deserialize, Serialize};

use super::surface::SurfaceModel;
use crate::error::{Error, Result};
use crate::num::{Real, Vec2};
use crate::objectives::ScheduleRecord;

/// Provenance attached to every stored trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub surface: SurfaceModel<f64>,
    pub schedule: Option<ScheduleRecord>,
    pub seed: u64,
    /// Skill identifier the trajectory belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    /// File name of the demonstration a rollout reproduces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo: Option<String>,
}

impl TrajectoryMeta {
    pub fn new(surface: SurfaceModel<f64>, seed: u64) -> Self {
        Self {
            surface,
            schedule: None,
            seed,
            skill: None,
            demo: None,
        }
    }
}

/// Poses, velocities, attractors and external contact forces over `H` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub poses: Vec<Vec2<T>>,
    pub velocities: Vec<Vec2<T>>,
    pub attractors: Vec<Vec2<T>>,
    pub forces: Vec<Vec2<T>>,
    pub meta: TrajectoryMeta,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    dt: f64,
    poses: Vec<[f64; 2]>,
    velocities: Vec<[f64; 2]>,
    attractors: Vec<[f64; 2]>,
    forces: Vec<[f64; 2]>,
    meta: TrajectoryMeta,
}

fn to_rows<T: Real>(v: &[Vec2<T>]) -> Vec<[f64; 2]> {
    v.iter().map(|p| p.to_array()).collect()
}

fn from_rows<T: Real>(v: &[[f64; 2]]) -> Vec<Vec2<T>> {
    v.iter().map(|&a| Vec2::from_array(a)).collect()
}

impl<T: Real> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.poses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.poses.len();
        for len in [self.velocities.len(), self.attractors.len(), self.forces.len()] {
            if len != h {
                return Err(Error::LengthMismatch(h, len));
            }
        }
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        Ok(())
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> Result<String> {
        let rec = TrajectoryRecord {
            dt: self.dt.as_f64(),
            poses: to_rows(&self.poses),
            velocities: to_rows(&self.velocities),
            attractors: to_rows(&self.attractors),
            forces: to_rows(&self.forces),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: TrajectoryRecord = serde_json::from_str(line)?;
        let t = Self {
            dt: T::lit(rec.dt),
            poses: from_rows(&rec.poses),
            velocities: from_rows(&rec.velocities),
            attractors: from_rows(&rec.attractors),
            forces: from_rows(&rec.forces),
            meta: rec.meta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn cast<U: Real>(&self) -> Trajectory<U> {
        let c = |v: &[Vec2<T>]| -> Vec<Vec2<U>> {
            v.iter().map(|p| Vec2::new(U::lit(p.x.as_f64()), U::lit(p.z.as_f64()))).collect()
        };
        Trajectory {
            dt: U::lit(self.dt.as_f64()),
            poses: c(&self.poses),
            velocities: c(&self.velocities),
            attractors: c(&self.attractors),
            forces: c(&self.forces),
            meta: self.meta.clone(),
        }
    }
}

/// Central differences with second-order one-sided stencils at the ends.
pub fn finite_difference_velocity<T: Real>(x: &[Vec2<T>], dt: T) -> Vec<Vec2<T>> {
    let h = x.len();
    if h < 2 {
        return vec![Vec2::zero(); h];
    }
    let inv = T::one() / (T::lit(2.0) * dt);
    if h == 2 {
        let v = (x[1] - x[0]).scale(T::one() / dt);
        return vec![v, v];
    }
    (0..h)
        .map(|t| {
            if t == 0 {
                (x[1].scale(T::lit(4.0)) - x[0].scale(T::lit(3.0)) - x[2]).scale(inv)
            } else if t == h - 1 {
                (x[h - 1].scale(T::lit(3.0)) - x[h - 2].scale(T::lit(4.0)) + x[h - 3]).scale(inv)
            } else {
                (x[t + 1] - x[t - 1]).scale(inv)
            }
        })
        .collect()
}

/// Second central differences with four-point one-sided stencils at the ends.
pub fn finite_difference_accel<T: Real>(x: &[Vec2<T>], dt: T) -> Vec<Vec2<T>> {
    let h = x.len();
    if h < 3 {
        return vec![Vec2::zero(); h];
    }
    let inv = T::one() / (dt * dt);
    let central = |c: usize| (x[c + 1] - x[c].scale(T::lit(2.0)) + x[c - 1]).scale(inv);
    // 2 x0 - 5 x1 + 4 x2 - x3, mirrored at the far end.
    let one_sided = |a: usize, b: usize, c: usize, d: usize| {
        (x[a].scale(T::lit(2.0)) - x[b].scale(T::lit(5.0)) + x[c].scale(T::lit(4.0)) - x[d]).scale(inv)
    };
    (0..h)
        .map(|t| {
            if h >= 4 && t == 0 {
                one_sided(0, 1, 2, 3)
            } else if h >= 4 && t == h - 1 {
                one_sided(h - 1, h - 2, h - 3, h - 4)
            } else {
                central(t.clamp(1, h - 2))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_exact_on_quadratic() {
        let dt = 0.01;
        let x: Vec<Vec2<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * dt;
                Vec2::new(0.5 * 3.0 * t * t + 0.2 * t, -t)
            })
            .collect();
        let v = finite_difference_velocity(&x, dt);
        let a = finite_difference_accel(&x, dt);
        for t in 0..20 {
            assert!((v[t].x - (3.0 * t as f64 * dt + 0.2)).abs() < 1e-9);
            assert!((v[t].z + 1.0).abs() < 1e-9);
        }
        for acc in a {
            assert!((acc.x - 3.0).abs() < 1e-6);
            assert!(acc.z.abs() < 1e-6);
        }
    }

    #[test]
    fn endpoint_accel_exact_on_cubic() {
        let dt = 0.01;
        let x: Vec<Vec2<f64>> = (0..10).map(|i| Vec2::new((i as f64 * dt).powi(3), 0.0)).collect();
        let a = finite_difference_accel(&x, dt);
        assert!((a[0].x - 0.0).abs() < 1e-8, "{}", a[0].x);
        assert!((a[9].x - 6.0 * 9.0 * dt).abs() < 1e-8, "{}", a[9].x);
    }

    #[test]
    fn json_line_round_trip() {
        let surface = SurfaceModel::sinusoid(0.02, 0.5, 0.0, 0.3);
        let p = vec![Vec2::new(0.1, 0.2), Vec2::new(0.30000000000000004, -1e-17)];
        let t = Trajectory {
            dt: 0.01,
            poses: p.clone(),
            velocities: p.clone(),
            attractors: p.clone(),
            forces: p,
            meta: TrajectoryMeta::new(surface, 7),
        };
        let line = t.to_json_line().unwrap();
        assert!(!line.contains('\n'));
        assert!(line.starts_with(r#"{"dt":0.01,"poses":[[0.1,0.2],"#));
        let back = Trajectory::<f64>::from_json_line(&line).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_ragged_arrays() {
        let line = r#"{"dt":0.01,"poses":[[0,0]],"velocities":[],"attractors":[[0,0]],"forces":[[0,0]],
            "meta":{"surface":{"kind":"flat","amplitude":0,"wavelength":1,"offset":0,"friction_coefficient":0.1},"schedule":null,"seed":1}}"#;
        assert!(Trajectory::<f64>::from_json_line(line).is_err());
    }
}
