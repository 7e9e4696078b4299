//! Simulation of (possibly degenerate) Stratonovich diffusions on embedded
//! compact manifolds, the LeJan-Watanabe geometry induced by the diffusion
//! coefficient, and paired Monte Carlo checks of the integration by parts
//! identities on path space and on the diffeomorphism group.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] embedded manifolds, tangent projection, retraction and the
//!   induced Levi-Civita connection;
//! * [`ljw`] diffusion systems `(X, A)`, the image subbundle, the adjoint `Y`
//!   and the LeJan-Watanabe connection with its curvature;
//! * [`flow`] driving noise, Heun flows with their derivative flows, the
//!   perturbation ODE, Cameron-Martin shifts and the filtered derivative flow;
//! * [`ibp`] cylindrical functionals and the paired estimators;
//! * [`scenario`] and [`report`] the scenario registry and the `run` checks.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod ibp;
pub mod linalg;
pub mod ljw;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
pub use flow::{
    antidevelopment_martingale_increments, compose_check, filtered_derivative_flow,
    girsanov_weight, integrate_flow, integrate_points, perturbation_ode, sample_noise,
    shifted_flow, CameronMartinPath, DrivingNoise, FilterVariant, FilteredFlow, FlowPath,
    PathObservation, PerturbationMode,
};
pub use geometry::{Differentiation, EmbeddedManifold, VectorField};
pub use ibp::{
    conditional_flow_check, conditional_flow_check_at, estimate_eq4, estimate_eq5_multipoint,
    estimate_eq9, estimate_identities, filtering_consistency_check, girsanov_reweight_check,
    tau_derivative_check, ConditionalQuery, CylindricalFunctional, EstimatorResult, IdentitySet,
    McConfig, TauDerivativeResult,
};
pub use linalg::{Mat3, Vec3};
pub use ljw::{ConnectionOracle, CurvatureBackend, DiffusionSystem, SubbundlePoint};
pub use report::{run_check, Check, RunConfig, RunOutput, RunReport};
pub use scenario::{catalog, Scenario};

/// Version string written into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
