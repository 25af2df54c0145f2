//! Spacetime discontinuous Petrov-Galerkin solver for the first-order
//! acoustic wave system in one and two space dimensions.
//!
//! The numerical core is generic over the scalar type (see [`Real`]); the
//! aliases at the crate root fix it to `f64`, which is what the CLI and the
//! convergence studies use.

pub mod scalar;
pub mod mesh;
pub mod spaces;
pub mod problem;
pub mod assembly;
pub mod solve;
pub mod estimate;
pub mod vtk;
pub mod adapt;
pub mod cli;

pub use scalar::Real;

pub type SpaceTimeMesh = mesh::SpaceTimeMesh<f64>;
pub type SpaceLayout = spaces::SpaceLayout<f64>;
pub type WaveProblem = problem::WaveProblem<f64>;
pub type GlobalSystem = assembly::GlobalSystem<f64>;
pub type SolveReport = solve::SolveReport<f64>;
pub type ErrorBreakdown = estimate::ErrorBreakdown<f64>;
pub type AdaptiveOptions = adapt::AdaptiveOptions<f64>;
pub type AdaptiveHistory = adapt::AdaptiveHistory<f64>;

pub use mesh::ElementFamily;
pub use solve::Technique;
