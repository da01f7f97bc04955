//! Discrete-time simulation of flexible fork-join (DAG) processing networks and flexible
//! queueing networks under robust stochastic-gradient-projection scheduling, together
//! with the static planning LP that characterizes their capacity region.
//!
//! The numerical core is generic over [`Real`] (`f64` and `f32`); the aliases below fix
//! it to `f64`, which is what the simulator, presets and CLI use.

pub mod experiment;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod planner;
pub mod policies;
pub mod presets;
pub mod projection;
pub mod scalar;
pub mod sim;
pub mod verify;

pub use scalar::Real;

pub type NetworkSpec = model::NetworkSpec<f64>;
pub type DagNetworkSpec = model::DagNetworkSpec<f64>;
pub type FqnNetworkSpec = model::FqnNetworkSpec<f64>;
pub type ServiceModel = model::ServiceModel<f64>;
pub type StaticPlan = planner::StaticPlan<f64>;
pub type PolyhedronSpec = projection::PolyhedronSpec<f64>;
pub type ProjectionResult = projection::ProjectionResult<f64>;
pub type PolicyState = policies::PolicyState<f64>;
pub type PolicyConfig = policies::PolicyConfig<f64>;
pub type StepSizeSchedule = policies::StepSizeSchedule<f64>;
pub type ArrivalProcess = sim::ArrivalProcess<f64>;
pub type Simulator = sim::Simulator<f64>;
