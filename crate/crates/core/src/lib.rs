//! Estimation and active sensing of attachment stiffness on deformable
//! thin-shell meshes.
//!
//! The crate simulates a quasi-static thin shell with extended
//! position-based dynamics, tracks a Gaussian belief over per-particle
//! boundary stiffness with an extended Kalman filter, and selects grasp
//! motions that trade information gain against boundary safety. All core
//! math is generic over the scalar type; `f64` aliases are exported at the
//! crate root for everyday use.

pub mod adam;
pub mod config;
pub mod control;
pub mod estimator;
pub mod experiment;
pub mod jacobian;
pub mod mesh;
pub mod metrics;
pub mod objectives;
pub mod registration;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod verify;

use nalgebra as na;
use num_traits as nt;

/// Scalar trait for all core math: `f32` and `f64` both qualify.
pub trait Real:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + nt::FromPrimitive
    + nt::FloatConst
    + na::RealField
    + 'static
{
    /// Shorthand for lossy conversion from `f64` literals.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl<T> Real for T where
    T: Copy
        + Send
        + Sync
        + std::fmt::Debug
        + std::fmt::Display
        + nt::FromPrimitive
        + nt::FloatConst
        + na::RealField
        + 'static
{
}

pub type Vec3<T> = na::Vector3<T>;
pub type DVec<T> = na::DVector<T>;
pub type DMat<T> = na::DMatrix<T>;

// Concrete aliases for the common double-precision configuration.
pub type Mesh64 = mesh::Mesh<f64>;
pub type SimState64 = sim::SimState<f64>;
pub type Simulator64 = sim::Simulator<f64>;
pub type Belief64 = estimator::BoundaryBelief<f64>;
pub type PointCloud64 = registration::PointCloud<f64>;

pub use estimator::{BoundaryBelief, NoiseConfig, TopologyEvent};
pub use mesh::{Mesh, ParticleMask};
pub use sim::{SimState, Simulator, SolverConfig};
