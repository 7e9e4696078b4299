//! Driving noise, Heun flows with derivative flows, Cameron-Martin shifts,
//! the perturbation equation and the filtered derivative flow.

mod cameron_martin;
mod filtered;
mod noise;
mod path;
mod perturb;

pub use cameron_martin::CameronMartinPath;
pub use filtered::{filtered_derivative_flow, FilterVariant, FilteredFlow};
pub use noise::{sample_noise, DrivingNoise};
pub use path::{
    antidevelopment_martingale_increments, integrate_flow, integrate_points, FlowPath,
    PathObservation,
};
pub use perturb::{
    compose_check, girsanov_weight, perturbation_ode, shifted_flow, PerturbationMode,
};
