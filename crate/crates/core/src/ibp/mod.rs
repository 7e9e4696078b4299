//! Cylindrical functionals and paired Monte Carlo estimators for the
//! integration by parts, quasi-invariance and filtering identities.

mod functional;
mod harness;
mod mc;
mod stats;

pub use functional::{grid_index, CylindricalFunctional};
pub use harness::{
    conditional_flow_check, conditional_flow_check_at, estimate_eq4, estimate_eq5_multipoint,
    estimate_eq9, estimate_identities, filtering_consistency_check, girsanov_reweight_check,
    tau_derivative_check, ConditionalQuery, IdentitySet, TauDerivativeResult, TAU_BIAS_ALLOWANCE,
};
pub use mc::McConfig;
pub use stats::{EstimatorResult, PairedStats, SideStats};
