pub mod autodiff;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod moo;
pub mod num;
pub mod objectives;
pub mod scorenet;
pub mod sim;

pub use error::{Error, Result};
pub use num::{Real, Vec2};

/// f64 instantiations of the scalar-generic types.
pub type Vec2d = Vec2<f64>;
pub type Trajectoryd = sim::Trajectory<f64>;
pub type SurfaceModeld = sim::SurfaceModel<f64>;
pub type SimConfigd = sim::SimConfig<f64>;
pub type StiffnessScheduled = objectives::StiffnessSchedule<f64>;
pub type ObjectivePaird = objectives::ObjectivePair<f64>;
