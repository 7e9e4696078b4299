use std::sync::Arc;

use super::{CylindricalFunctional, EstimatorResult, McConfig};
use crate::error::{Error, Result};
use crate::flow::{
    filtered_derivative_flow, integrate_flow, integrate_points, sample_noise, CameronMartinPath,
    DrivingNoise, FilterVariant, FlowPath,
};
use crate::geometry::VectorField;
use crate::linalg::{leading_columns, Mat3, Vec3};
use crate::ljw::{ConnectionOracle, DiffusionSystem};

/// Allowance added to `3 * stderr` for the `O(tau^2)` bias of the central difference.
pub const TAU_BIAS_ALLOWANCE: f64 = 0.01;

fn noise_for(
    sys: &DiffusionSystem,
    k: &CameronMartinPath,
    seed: u64,
    index: u64,
) -> Result<DrivingNoise> {
    sample_noise(k.horizon, k.steps, sys.noise_dim, seed, index)
}

/// `V_{t_i} = D_{t_i} int_0^{t_i} D_s^{-1} X(x_s) k'_s ds` at the requested
/// grid indices (increasing), with the time integral by the trapezoidal rule.
///
/// `maps` and `inverse_maps` are in the frames `frames`; the result is ambient.
pub(crate) fn transported_integral(
    sys: &DiffusionSystem,
    points: &[Vec3],
    frames: &[Mat3],
    maps: &[Mat3],
    inverse_maps: &[Mat3],
    n: usize,
    k: &CameronMartinPath,
    indices: &[usize],
) -> Vec<Vec3> {
    let dt = k.dt();
    // The integrand is linear in the velocity, so its matrix at the right end
    // of one step is reused as the left end of the next.
    let integrand = |j: usize| -> Mat3 {
        inverse_maps[j] * (leading_columns(&frames[j], n).transpose() * sys.coefficient(&points[j]))
    };
    let mut out = Vec::with_capacity(indices.len());
    let mut acc = Vec3::zeros();
    let mut next = 0;
    let last = indices.last().copied().unwrap_or(0);
    let mut left: Option<Mat3> = None;
    for j in 0..=last {
        while next < indices.len() && indices[next] == j {
            let v = leading_columns(&frames[j], n) * (maps[j] * acc);
            out.push(v);
            next += 1;
        }
        if j < last {
            let kd = k.velocity(j);
            if kd != Vec3::zeros() {
                let a = left.take().unwrap_or_else(|| integrand(j));
                let b = integrand(j + 1);
                acc += (a * kd + b * kd) * (0.5 * dt);
                left = Some(b);
            } else {
                left = None;
            }
        }
    }
    out
}

fn values_at(f: &CylindricalFunctional, paths: &[&[Vec3]], indices: &[usize]) -> Vec<Vec3> {
    let mut args = Vec::with_capacity(f.arity());
    for &i in indices {
        for p in paths {
            args.push(p[i]);
        }
    }
    args
}

fn require_single_point(f: &CylindricalFunctional) -> Result<()> {
    if f.base_points != 1 {
        return Err(Error::InvalidParameter(format!(
            "functional {} has {} base points; this estimator needs one",
            f.label, f.base_points
        )));
    }
    Ok(())
}

/// `dF(V)` along the derivative flow of each path, with all paths driven by
/// the same noise.
fn multipoint_sample(
    sys: &DiffusionSystem,
    flows: &[FlowPath],
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    indices: &[usize],
) -> (f64, f64) {
    let q = flows.len();
    let n = sys.manifold.intrinsic_dim();
    let per_point: Vec<Vec<Vec3>> = flows
        .iter()
        .map(|p| {
            transported_integral(
                sys,
                &p.points,
                &p.frames,
                &p.jacobians,
                &p.inverse_jacobians,
                n,
                k,
                indices,
            )
        })
        .collect();
    let mut vectors = Vec::with_capacity(f.arity());
    for i in 0..indices.len() {
        for v in per_point.iter().take(q) {
            vectors.push(v[i]);
        }
    }
    let slices: Vec<&[Vec3]> = flows.iter().map(|p| p.points.as_slice()).collect();
    let args = values_at(f, &slices, indices);
    let lhs = f.derivative(&args, &vectors);
    let rhs = f.eval(&args) * k.pairing(&flows[0].noise.increments);
    (lhs, rhs)
}

/// Paired estimate of `E dF(T xi int (T xi_s)^{-1} X k' ds)` against
/// `E F(xi) int <k', dB>`.
pub fn estimate_eq4(
    sys: &DiffusionSystem,
    x0: &Vec3,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    cfg: &McConfig,
) -> Result<EstimatorResult> {
    require_single_point(f)?;
    multipoint(sys, std::slice::from_ref(x0), f, k, cfg)
}

/// The multi-point identity for the flow of diffeomorphisms: all base points
/// are driven by the same noise. Requires `e -> X(.) e` to be injective.
pub fn estimate_eq5_multipoint(
    sys: &DiffusionSystem,
    points: &[Vec3],
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    cfg: &McConfig,
) -> Result<EstimatorResult> {
    if !sys.field_map_is_injective(&sys.manifold.quasi_random_points(256)) {
        return Err(Error::Unsupported(format!(
            "e -> X(.)e is not injective for {}",
            sys.scenario_id
        )));
    }
    multipoint(sys, points, f, k, cfg)
}

fn multipoint(
    sys: &DiffusionSystem,
    points: &[Vec3],
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    cfg: &McConfig,
) -> Result<EstimatorResult> {
    if points.len() != f.base_points {
        return Err(Error::InvalidParameter(format!(
            "{} base points given, functional {} expects {}",
            points.len(),
            f.label,
            f.base_points
        )));
    }
    for x in points {
        sys.manifold.check_point(x)?;
    }
    let indices = f.grid_indices(k.horizon, k.steps)?;
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        let flows = points
            .iter()
            .map(|x| integrate_flow(sys, x, &noise))
            .collect::<Result<Vec<_>>>()?;
        Ok(multipoint_sample(sys, &flows, f, k, &indices))
    })?;
    Ok(EstimatorResult::from_pairs(samples))
}

fn eq9_sample(
    oracle: &ConnectionOracle,
    path: &FlowPath,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    indices: &[usize],
    variant: FilterVariant,
) -> Result<(f64, f64, f64)> {
    let sys = oracle.system();
    let obs = path.observe(sys);
    let w = filtered_derivative_flow(oracle, &obs, variant)?;
    let n = obs.intrinsic_dim;
    let vectors = transported_integral(
        sys,
        &obs.points,
        &obs.frames,
        &w.maps,
        &w.inverse_maps,
        n,
        k,
        indices,
    );
    let args = values_at(f, &[&obs.points], indices);
    let lhs = f.derivative(&args, &vectors);
    let rhs = f.eval(&args) * k.pairing(&obs.increments);
    let tangent = transported_integral(
        sys,
        &path.points,
        &path.frames,
        &path.jacobians,
        &path.inverse_jacobians,
        n,
        k,
        indices,
    );
    Ok((lhs, rhs, f.derivative(&args, &tangent)))
}

/// Filtered identity: `dF` along the filtered flow against `F` times the Ito
/// integral of `k'` against the martingale increments `e(x) dB`.
pub fn estimate_eq9(
    oracle: &ConnectionOracle,
    x0: &Vec3,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    cfg: &McConfig,
    variant: FilterVariant,
) -> Result<EstimatorResult> {
    require_single_point(f)?;
    let sys = oracle.system();
    let indices = f.grid_indices(k.horizon, k.steps)?;
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        let path = integrate_flow(sys, x0, &noise)?;
        let (lhs, rhs, _) = eq9_sample(oracle, &path, f, k, &indices, variant)?;
        Ok((lhs, rhs))
    })?;
    Ok(EstimatorResult::from_pairs(samples))
}

/// The derivative-flow left side against the filtered-flow left side on the
/// same paths; equal in mean when the filtered flow is the conditional
/// expectation of the derivative flow.
pub fn filtering_consistency_check(
    oracle: &ConnectionOracle,
    x0: &Vec3,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    cfg: &McConfig,
    variant: FilterVariant,
) -> Result<EstimatorResult> {
    require_single_point(f)?;
    let sys = oracle.system();
    let indices = f.grid_indices(k.horizon, k.steps)?;
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        let path = integrate_flow(sys, x0, &noise)?;
        let (filtered, _, full) = eq9_sample(oracle, &path, f, k, &indices, variant)?;
        Ok((full, filtered))
    })?;
    Ok(EstimatorResult::from_pairs(samples))
}

/// Per-functional results of [`estimate_identities`].
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySet {
    pub label: String,
    /// Derivative-flow identity.
    pub eq4: EstimatorResult,
    /// Filtered-flow identity.
    pub eq9: EstimatorResult,
    /// `lhs` = derivative-flow left side, `rhs` = filtered-flow left side.
    pub consistency: EstimatorResult,
}

/// The derivative-flow identity, the filtered identity and their consistency
/// check for several single-point functionals, all on the same paths.
///
/// Each result is bit-identical to the corresponding single-functional
/// estimator with the same configuration.
pub fn estimate_identities(
    oracle: &ConnectionOracle,
    x0: &Vec3,
    functionals: &[CylindricalFunctional],
    k: &CameronMartinPath,
    cfg: &McConfig,
    variant: FilterVariant,
) -> Result<Vec<IdentitySet>> {
    let sys = oracle.system();
    sys.manifold.check_point(x0)?;
    let mut indices = Vec::with_capacity(functionals.len());
    for f in functionals {
        require_single_point(f)?;
        indices.push(f.grid_indices(k.horizon, k.steps)?);
    }
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        let path = integrate_flow(sys, x0, &noise)?;
        let obs = path.observe(sys);
        let w = filtered_derivative_flow(oracle, &obs, variant)?;
        let n = obs.intrinsic_dim;
        let pairing = k.pairing(&noise.increments);
        let filtered_pairing = k.pairing(&obs.increments);
        functionals
            .iter()
            .zip(&indices)
            .map(|(f, idx)| {
                let filtered = transported_integral(
                    sys,
                    &obs.points,
                    &obs.frames,
                    &w.maps,
                    &w.inverse_maps,
                    n,
                    k,
                    idx,
                );
                let full = transported_integral(
                    sys,
                    &path.points,
                    &path.frames,
                    &path.jacobians,
                    &path.inverse_jacobians,
                    n,
                    k,
                    idx,
                );
                let args = values_at(f, &[&path.points], idx);
                let value = f.eval(&args);
                Ok([
                    f.derivative(&args, &full),
                    value * pairing,
                    f.derivative(&args, &filtered),
                    value * filtered_pairing,
                ])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(functionals
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let pick = |a: usize, b: usize| {
                EstimatorResult::from_pairs(samples.iter().map(|s| (s[j][a], s[j][b])).collect())
            };
            IdentitySet {
                label: f.label.clone(),
                eq4: pick(0, 1),
                eq9: pick(2, 3),
                consistency: pick(0, 2),
            }
        })
        .collect())
}

/// `E F(xi^tau)` against `E[F(xi) * girsanov_weight]` on common noise.
pub fn girsanov_reweight_check(
    sys: &DiffusionSystem,
    x0: &Vec3,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    tau: f64,
    cfg: &McConfig,
) -> Result<EstimatorResult> {
    require_single_point(f)?;
    if tau.abs() > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|tau| = {} exceeds 1",
            tau.abs()
        )));
    }
    let indices = f.grid_indices(k.horizon, k.steps)?;
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        if tau == 0.0 {
            let base = integrate_points(sys, x0, &noise)?;
            let v = f.eval(&values_at(f, &[&base], &indices));
            return Ok((v, v));
        }
        let base = integrate_points(sys, x0, &noise)?;
        let shifted = integrate_points(sys, x0, &noise.shifted(k, tau)?)?;
        let weight = crate::flow::girsanov_weight(&noise, k, tau)?;
        let lhs = f.eval(&values_at(f, &[&shifted], &indices));
        let rhs = f.eval(&values_at(f, &[&base], &indices)) * weight;
        Ok((lhs, rhs))
    })?;
    Ok(EstimatorResult::from_pairs(samples))
}

/// Central difference in `tau` of `E F(xi^tau)` against the derivative-flow
/// left side, at `tau` and `tau / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauDerivativeResult {
    pub tau: f64,
    /// `lhs` = central difference at `tau`, `rhs` = derivative-flow left side.
    pub estimate: EstimatorResult,
    /// Same with step `tau / 2`.
    pub half_step: EstimatorResult,
    /// Richardson bound `4/3 |E cd(tau) - E cd(tau/2)|` on the `O(tau^2)` bias.
    pub bias_bound: f64,
    /// `E[cd(tau) - lhs] / E[cd(tau/2) - lhs]`; close to 4 for smooth problems.
    pub richardson_ratio: f64,
    pub pass: bool,
}

pub fn tau_derivative_check(
    sys: &DiffusionSystem,
    x0: &Vec3,
    f: &CylindricalFunctional,
    k: &CameronMartinPath,
    tau: f64,
    cfg: &McConfig,
) -> Result<TauDerivativeResult> {
    require_single_point(f)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau step must be positive, got {tau}"
        )));
    }
    let indices = f.grid_indices(k.horizon, k.steps)?;
    let n = sys.manifold.intrinsic_dim();
    let samples = cfg.run(|i| {
        let noise = noise_for(sys, k, cfg.seed, i)?;
        let path = integrate_flow(sys, x0, &noise)?;
        let eval_shift = |s: f64| -> Result<f64> {
            let p = integrate_points(sys, x0, &noise.shifted(k, s)?)?;
            Ok(f.eval(&values_at(f, &[&p], &indices)))
        };
        let cd = (eval_shift(tau)? - eval_shift(-tau)?) / (2.0 * tau);
        let cd_half = (eval_shift(0.5 * tau)? - eval_shift(-0.5 * tau)?) / tau;
        let vectors = transported_integral(
            sys,
            &path.points,
            &path.frames,
            &path.jacobians,
            &path.inverse_jacobians,
            n,
            k,
            &indices,
        );
        let lhs = f.derivative(&values_at(f, &[&path.points], &indices), &vectors);
        Ok((cd, cd_half, lhs))
    })?;
    let estimate = EstimatorResult::from_pairs(samples.iter().map(|s| (s.0, s.2)).collect());
    let half_step = EstimatorResult::from_pairs(samples.iter().map(|s| (s.1, s.2)).collect());
    let bias_bound = 4.0 / 3.0 * (estimate.lhs.mean - half_step.lhs.mean).abs();
    let richardson_ratio = estimate.paired.mean / half_step.paired.mean;
    let pass = estimate.paired.mean.abs() <= 3.0 * estimate.paired.stderr + TAU_BIAS_ALLOWANCE;
    Ok(TauDerivativeResult {
        tau,
        estimate,
        half_step,
        bias_bound,
        richardson_ratio,
        pass,
    })
}

/// Inputs of [`conditional_flow_check`].
#[derive(Clone)]
pub struct ConditionalQuery {
    pub v0: Vec3,
    pub weight: Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>,
    pub test_field: VectorField,
    pub time_fraction: f64,
    pub variant: FilterVariant,
}

impl std::fmt::Debug for ConditionalQuery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionalQuery")
            .field("v0", &self.v0)
            .field("time_fraction", &self.time_fraction)
            .field("variant", &self.variant)
            .finish()
    }
}

/// `E[g(x_t) <T xi_t v0, u(x_t)>]` against `E[g(x_t) <W_t v0, u(x_t)>]`.
pub fn conditional_flow_check(
    oracle: &ConnectionOracle,
    x0: &Vec3,
    query: &ConditionalQuery,
    horizon: f64,
    steps: usize,
    cfg: &McConfig,
) -> Result<EstimatorResult> {
    let mut out = conditional_flow_check_at(
        oracle,
        x0,
        query,
        &[query.time_fraction],
        horizon,
        steps,
        cfg,
    )?;
    Ok(out.remove(0))
}

/// [`conditional_flow_check`] at several times on the same paths; the
/// query's own `time_fraction` is ignored.
pub fn conditional_flow_check_at(
    oracle: &ConnectionOracle,
    x0: &Vec3,
    query: &ConditionalQuery,
    time_fractions: &[f64],
    horizon: f64,
    steps: usize,
    cfg: &McConfig,
) -> Result<Vec<EstimatorResult>> {
    let sys = oracle.system();
    sys.manifold.check_point(x0)?;
    let idx = time_fractions
        .iter()
        .map(|&t| super::functional::grid_index(t, horizon, steps))
        .collect::<Result<Vec<_>>>()?;
    let samples = cfg.run(|i| {
        let noise = sample_noise(horizon, steps, sys.noise_dim, cfg.seed, i)?;
        let path = integrate_flow(sys, x0, &noise)?;
        let w = filtered_derivative_flow(oracle, &path.observe(sys), query.variant)?;
        Ok(idx
            .iter()
            .map(|&j| {
                let x = path.points[j];
                let g = (query.weight)(&x);
                let u = query.test_field.eval(&x);
                let full = g * (path.derivative(j) * query.v0).dot(&u);
                let filtered = g * w.apply(j, &query.v0).dot(&u);
                (full, filtered)
            })
            .collect::<Vec<_>>())
    })?;
    Ok((0..idx.len())
        .map(|j| EstimatorResult::from_pairs(samples.iter().map(|s| s[j]).collect()))
        .collect())
}
