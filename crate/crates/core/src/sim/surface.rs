use serde::{Deserialize, Serialize};

use crate::num::{Real, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    /// `z = offset`
    Flat,
    /// `z = offset + amplitude * sin(2 pi x / wavelength)`
    Sinusoid,
    /// Bowl cross-section of radius `wavelength` with its lowest point at `(0, offset)`.
    /// `amplitude` is unused.
    CircularArc,
}

/// Rigid height-field surface `z = s(x)`; material lies below the curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel<T> {
    pub kind: SurfaceKind,
    pub amplitude: T,
    pub wavelength: T,
    pub offset: T,
    pub friction_coefficient: T,
}

/// Fraction of the bowl radius beyond which the arc continues along its tangent.
const ARC_LIMIT: f64 = 0.95;

impl<T: Real> SurfaceModel<T> {
    pub fn flat(offset: T, friction: T) -> Self {
        Self {
            kind: SurfaceKind::Flat,
            amplitude: T::zero(),
            wavelength: T::one(),
            offset,
            friction_coefficient: friction,
        }
    }

    pub fn sinusoid(amplitude: T, wavelength: T, offset: T, friction: T) -> Self {
        Self {
            kind: SurfaceKind::Sinusoid,
            amplitude,
            wavelength,
            offset,
            friction_coefficient: friction,
        }
    }

    pub fn circular_arc(radius: T, offset: T, friction: T) -> Self {
        Self {
            kind: SurfaceKind::CircularArc,
            amplitude: T::zero(),
            wavelength: radius,
            offset,
            friction_coefficient: friction,
        }
    }

    pub fn cast<U: Real>(&self) -> SurfaceModel<U> {
        SurfaceModel {
            kind: self.kind,
            amplitude: U::lit(self.amplitude.as_f64()),
            wavelength: U::lit(self.wavelength.as_f64()),
            offset: U::lit(self.offset.as_f64()),
            friction_coefficient: U::lit(self.friction_coefficient.as_f64()),
        }
    }

    /// Half-width of the region where `height`, `slope` and `gap` are meaningful.
    pub fn workspace_half_width(&self) -> T {
        match self.kind {
            SurfaceKind::CircularArc => self.wavelength * T::lit(1.5),
            _ => T::lit(5.0),
        }
    }

    pub fn height(&self, x: T) -> T {
        match self.kind {
            SurfaceKind::Flat => self.offset,
            SurfaceKind::Sinusoid => {
                self.offset + self.amplitude * (self.angular_wavenumber() * x).sin()
            }
            SurfaceKind::CircularArc => {
                let r = self.wavelength;
                let lim = r * T::lit(ARC_LIMIT);
                let xc = x.max(-lim).min(lim);
                let base = self.offset + r - (r * r - xc * xc).sqrt();
                base + self.arc_slope(xc) * (x - xc)
            }
        }
    }

    pub fn slope(&self, x: T) -> T {
        match self.kind {
            SurfaceKind::Flat => T::zero(),
            SurfaceKind::Sinusoid => {
                let k = self.angular_wavenumber();
                self.amplitude * k * (k * x).cos()
            }
            SurfaceKind::CircularArc => {
                let lim = self.wavelength * T::lit(ARC_LIMIT);
                self.arc_slope(x.max(-lim).min(lim))
            }
        }
    }

    /// Second derivative `s''(x)`.
    pub fn second_derivative(&self, x: T) -> T {
        match self.kind {
            SurfaceKind::Flat => T::zero(),
            SurfaceKind::Sinusoid => {
                let k = self.angular_wavenumber();
                -self.amplitude * k * k * (k * x).sin()
            }
            SurfaceKind::CircularArc => {
                let r = self.wavelength;
                if x.abs() > r * T::lit(ARC_LIMIT) {
                    T::zero()
                } else {
                    let q = r * r - x * x;
                    r * r / (q * q.sqrt())
                }
            }
        }
    }

    /// Signed curvature of the curve at `x`; positive where the surface is concave up.
    pub fn curvature(&self, x: T) -> T {
        let s1 = self.slope(x);
        let w = T::one() + s1 * s1;
        self.second_derivative(x) / (w * w.sqrt())
    }

    /// Upward unit normal of the curve at abscissa `x`.
    pub fn normal_at(&self, x: T) -> Vec2<T> {
        let s1 = self.slope(x);
        let n = (T::one() + s1 * s1).sqrt();
        Vec2::new(-s1 / n, T::one() / n)
    }

    /// Signed distance from `pose` to the curve (negative inside the material) and the
    /// unit normal at the closest point, pointing away from the material.
    pub fn gap(&self, pose: Vec2<T>) -> (T, Vec2<T>) {
        match self.kind {
            SurfaceKind::Flat => (pose.z - self.offset, Vec2::new(T::zero(), T::one())),
            SurfaceKind::CircularArc => {
                let r = self.wavelength;
                let center = Vec2::new(T::zero(), self.offset + r);
                let d = pose - center;
                let dist = d.norm();
                let lim = r * T::lit(ARC_LIMIT);
                // The closest point sits on the circular part iff the ray from the
                // center through `pose` crosses it inside the arc limits.
                if dist > T::lit(1e-12) && d.z < T::zero() && (d.x / dist * r).abs() <= lim {
                    let normal = -d.scale(T::one() / dist);
                    (r - dist, normal)
                } else {
                    self.closest_point_gap(pose)
                }
            }
            SurfaceKind::Sinusoid => self.closest_point_gap(pose),
        }
    }

    fn angular_wavenumber(&self) -> T {
        T::lit(2.0) * T::PI() / self.wavelength
    }

    fn arc_slope(&self, x: T) -> T {
        let r = self.wavelength;
        x / (r * r - x * x).sqrt()
    }

    /// Newton iteration on the squared distance `0.5 |p - (u, s(u))|^2`.
    fn closest_point_gap(&self, p: Vec2<T>) -> (T, Vec2<T>) {
        let mut u = p.x;
        for _ in 0..60 {
            let s = self.height(u);
            let s1 = self.slope(u);
            let s2 = self.second_derivative(u);
            let g = (u - p.x) + (s - p.z) * s1;
            let mut h = T::one() + s1 * s1 + (s - p.z) * s2;
            if h <= T::lit(1e-3) {
                h = T::one() + s1 * s1;
            }
            let step = g / h;
            u = u - step;
            if step.abs() < T::lit(1e-15) {
                break;
            }
        }
        let q = Vec2::new(u, self.height(u));
        let n = self.normal_at(u);
        ((p - q).dot(n), n)
    }
}
