//! Dynamical stability of hierarchical triple and quadruple star systems.

pub mod criteria;
pub mod dataset;
pub mod error;
pub mod ghost;
pub mod hierarchy;
pub mod metrics;
pub mod mlp;
pub mod nbody;
pub mod orbit;
pub mod params;
pub mod real;
pub mod sampler;
pub mod slices;

pub use error::{Error, Result};
pub use hierarchy::Topology;
pub use real::Real;

pub type Vec3 = real::Vec3<f64>;
pub type OrbitElements = orbit::OrbitElements<f64>;
pub type HierarchySpec = hierarchy::HierarchySpec<f64>;
pub type CartesianSystem = hierarchy::CartesianSystem<f64>;
pub type Trajectory = nbody::Trajectory<f64>;
pub type MLPModel = mlp::Mlp<f64>;
pub type TripleView = criteria::TripleView<f64>;
