//! `run` checks and their machine-readable reports.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{compose_check, sample_noise, CameronMartinPath, PerturbationMode};
use crate::ibp::{self, EstimatorResult, McConfig};
use crate::linalg::Vec3;
use crate::scenario::{nearest, Scenario};

/// Threshold on the paired z-score of statistical checks.
pub const Z_THRESHOLD: f64 = 3.0;
/// Required coarse-to-fine deviation ratio of the composition check.
pub const COMPOSE_RATIO: f64 = 1.3;
/// Deviations below this count as exact composition.
pub const COMPOSE_EXACT: f64 = 1e-12;
pub const REPRODUCING_TOL: f64 = 1e-9;
pub const METRIC_TOL: f64 = 1e-5;

/// The checks `run` can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Check {
    Eq4,
    Eq5,
    Eq9,
    Girsanov,
    TauDerivative,
    Conditional,
    GeometryRicci,
    GeometryConnection,
    Compose,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Eq4,
        Check::Eq5,
        Check::Eq9,
        Check::Girsanov,
        Check::TauDerivative,
        Check::Conditional,
        Check::GeometryRicci,
        Check::GeometryConnection,
        Check::Compose,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Check::Eq4 => "eq4",
            Check::Eq5 => "eq5",
            Check::Eq9 => "eq9",
            Check::Girsanov => "girsanov",
            Check::TauDerivative => "tau-derivative",
            Check::Conditional => "conditional",
            Check::GeometryRicci => "geometry-ricci",
            Check::GeometryConnection => "geometry-connection",
            Check::Compose => "compose",
        }
    }

    pub fn default_paths(&self) -> usize {
        match self {
            Check::GeometryRicci | Check::GeometryConnection => 100,
            Check::Compose => 8,
            _ => 100_000,
        }
    }

    pub fn default_tau(&self) -> Option<f64> {
        match self {
            Check::Girsanov => Some(1.0),
            Check::TauDerivative => Some(0.01),
            Check::Compose => Some(0.1),
            _ => None,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Check {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnknownCheck {
                id: s.to_string(),
                hint: nearest(s, Check::ALL.iter().map(|c| c.as_str())),
            })
    }
}

/// Inputs of one `run`. `None` fields take the per-check defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub check: Check,
    pub paths: Option<usize>,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub tau: Option<f64>,
    pub workers: usize,
}

impl RunConfig {
    pub fn new(scenario: impl Into<String>, check: Check) -> Self {
        RunConfig {
            scenario: scenario.into(),
            check,
            paths: None,
            steps: 1024,
            horizon: 1.0,
            seed: 42,
            tau: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub tau: Option<f64>,
    pub workers: usize,
    pub k: String,
    pub functional: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub mean: f64,
    pub stderr: f64,
    /// `None` when the z-score is not finite.
    pub z: Option<f64>,
}

/// One flat record per check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub scenario: String,
    pub check: String,
    pub params: Params,
    pub lhs: Side,
    pub rhs: Side,
    pub paired: Paired,
    pub threshold: f64,
    pub pass: bool,
    pub wall_ms: u64,
    pub version: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with `wall_ms` zeroed: identical for identical inputs.
    pub fn canonical_json(&self) -> String {
        RunReport {
            wall_ms: 0,
            ..self.clone()
        }
        .to_json()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("report: {e}")))
    }
}

/// A report and the per-sample `(lhs, rhs)` values behind it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub samples: Vec<(f64, f64)>,
}

struct Outcome {
    lhs: Side,
    rhs: Side,
    paired: Paired,
    threshold: f64,
    pass: bool,
    samples: Vec<(f64, f64)>,
    functional: String,
    k: String,
}

fn side(mean: f64, stderr: f64) -> Side {
    Side { mean, stderr }
}

fn paired(mean: f64, stderr: f64, z: f64) -> Paired {
    Paired {
        mean,
        stderr,
        z: z.is_finite().then_some(z),
    }
}

fn statistical(r: EstimatorResult, functional: &str, k: &CameronMartinPath) -> Outcome {
    let pass = r.paired.z < Z_THRESHOLD;
    Outcome {
        lhs: side(r.lhs.mean, r.lhs.stderr),
        rhs: side(r.rhs.mean, r.rhs.stderr),
        paired: paired(r.paired.mean, r.paired.stderr, r.paired.z),
        threshold: Z_THRESHOLD,
        pass,
        samples: r.samples,
        functional: functional.to_string(),
        k: k.label.clone(),
    }
}

/// Both side means within `3 stderr + 0.01` of a known value.
fn near_exact(o: &Outcome, exact: f64) -> bool {
    let ok = |s: &Side| (s.mean - exact).abs() <= 3.0 * s.stderr + 0.01;
    ok(&o.lhs) && ok(&o.rhs)
}

/// Execute one check. Missing `paths` and `tau` take the check defaults.
pub fn run_check(config: &RunConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let scenario = Scenario::load(&config.scenario)?;
    let check = config.check;
    let paths = config.paths.unwrap_or_else(|| check.default_paths());
    let tau = config.tau.or_else(|| check.default_tau());
    let mc = McConfig {
        paths,
        seed: config.seed,
        workers: config.workers,
    };
    let k = CameronMartinPath::linear(scenario.k_direction, config.horizon, config.steps)?;
    let f = &scenario.functionals[0];
    let sys = scenario.system();
    let oracle = &scenario.oracle;
    let outcome = match check {
        Check::Eq4 => {
            let r = ibp::estimate_eq4(sys, &scenario.x0, f, &k, &mc)?;
            let mut o = statistical(r, &f.label, &k);
            if let (Some(exact), true) = (scenario.eq4_exact, config.horizon == 1.0) {
                o.pass &= near_exact(&o, exact);
            }
            o
        }
        Check::Eq5 => {
            let mf = &scenario.multipoint_functional;
            let r = ibp::estimate_eq5_multipoint(sys, &scenario.base_points, mf, &k, &mc)?;
            statistical(r, &mf.label, &k)
        }
        Check::Eq9 => {
            let r = ibp::estimate_eq9(oracle, &scenario.x0, f, &k, &mc, scenario.variant)?;
            statistical(r, &f.label, &k)
        }
        Check::Girsanov => {
            let t = tau.expect("girsanov has a default tau");
            let r = ibp::girsanov_reweight_check(sys, &scenario.x0, f, &k, t, &mc)?;
            let mut o = statistical(r, &f.label, &k);
            if let (Some(exact), true) =
                (scenario.girsanov_exact, t == 1.0 && config.horizon == 1.0)
            {
                o.pass &= near_exact(&o, exact);
            }
            o
        }
        Check::TauDerivative => {
            let t = tau.expect("tau-derivative has a default tau");
            let r = ibp::tau_derivative_check(sys, &scenario.x0, f, &k, t, &mc)?;
            let e = r.estimate;
            Outcome {
                lhs: side(e.lhs.mean, e.lhs.stderr),
                rhs: side(e.rhs.mean, e.rhs.stderr),
                paired: paired(e.paired.mean, e.paired.stderr, e.paired.z),
                threshold: ibp::TAU_BIAS_ALLOWANCE,
                pass: r.pass,
                samples: e.samples,
                functional: f.label.clone(),
                k: k.label.clone(),
            }
        }
        Check::Conditional => {
            let r = ibp::conditional_flow_check(
                oracle,
                &scenario.x0,
                &scenario.conditional,
                config.horizon,
                config.steps,
                &mc,
            )?;
            let mut o = statistical(r, "g(x_t)<v_t,u(x_t)>", &k);
            o.k = "none".into();
            o
        }
        Check::GeometryRicci => geometry_ricci(&scenario, paths)?,
        Check::GeometryConnection => geometry_connection(&scenario, paths, config.seed)?,
        Check::Compose => {
            let t = tau.expect("compose has a default tau");
            compose(&scenario, &k, t, &mc)?
        }
    };
    let report = RunReport {
        scenario: scenario.id.to_string(),
        check: check.as_str().to_string(),
        params: Params {
            horizon: config.horizon,
            steps: config.steps,
            paths,
            seed: config.seed,
            tau,
            workers: config.workers,
            k: outcome.k,
            functional: outcome.functional,
        },
        lhs: outcome.lhs,
        rhs: outcome.rhs,
        paired: outcome.paired,
        threshold: outcome.threshold,
        pass: outcome.pass,
        wall_ms: started.elapsed().as_millis() as u64,
        version: crate::VERSION.to_string(),
    };
    Ok(RunOutput {
        report,
        samples: outcome.samples,
    })
}

/// Ricci eigenvalues from the numerical curvature at quasi-random points.
fn geometry_ricci(s: &Scenario, points: usize) -> Result<Outcome> {
    let numeric = s.oracle.to_numerical();
    let mut samples = Vec::new();
    for x in s.manifold().quasi_random_points(points) {
        for ev in numeric.ricci_eigenvalues(&x)? {
            samples.push((ev, s.ricci_eigenvalue));
        }
    }
    let r = EstimatorResult::from_pairs(samples);
    let max_dev = r.max_abs_difference();
    Ok(Outcome {
        lhs: side(r.lhs.mean, r.lhs.stderr),
        rhs: side(s.ricci_eigenvalue, 0.0),
        paired: paired(max_dev, r.paired.stderr, f64::NAN),
        threshold: s.ricci_tolerance,
        pass: max_dev <= s.ricci_tolerance,
        samples: r.samples,
        functional: "none".into(),
        k: "none".into(),
    })
}

/// Reproducing property of `Y` and metric compatibility of the LeJan-Watanabe
/// connection, each scaled by its tolerance.
fn geometry_connection(s: &Scenario, points: usize, seed: u64) -> Result<Outcome> {
    use rand::{Rng, SeedableRng};
    let sys = s.system().clone();
    let m = *s.manifold();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(points);
    let mdim = sys.noise_dim;
    let mut coeffs = || {
        let mut c = Vec3::zeros();
        for i in 0..mdim {
            c[i] = rng.random::<f64>() * 2.0 - 1.0;
        }
        c
    };
    let numeric = crate::ljw::ConnectionOracle::numerical(sys.clone());
    for x in m.quasi_random_points(points) {
        let (c1, c2, c3) = (coeffs(), coeffs(), coeffs());
        let v = sys.coefficient(&x) * c3 + m.projector(&x) * Vec3::new(0.3, -0.2, 0.1);
        let w = sys.coefficient(&x) * c1;
        let y = sys.adjoint(&x)?;
        let repro = (sys.coefficient(&x) * (y * w) - w).norm();
        let s1 = sys.clone();
        let s2 = sys.clone();
        let z1 = crate::geometry::VectorField::new(move |p| s1.coefficient(p) * c1);
        let z2 = crate::geometry::VectorField::new(move |p| s2.coefficient(p) * c2);
        let metric = numeric.metric_compatibility_residual(&z1, &z2, &x, &v)?;
        samples.push((repro, metric));
    }
    let worst_repro = samples.iter().map(|p| p.0).fold(0.0, f64::max);
    let worst_metric = samples.iter().map(|p| p.1).fold(0.0, f64::max);
    let score = (worst_repro / REPRODUCING_TOL).max(worst_metric / METRIC_TOL);
    let r = EstimatorResult::from_pairs(samples);
    Ok(Outcome {
        lhs: side(worst_repro, r.lhs.stderr),
        rhs: side(worst_metric, r.rhs.stderr),
        paired: paired(score, 0.0, f64::NAN),
        threshold: 1.0,
        pass: score <= 1.0,
        samples: r.samples,
        functional: "none".into(),
        k: "none".into(),
    })
}

/// Mean composition deviation on the coarsened grid against the given grid.
fn compose(s: &Scenario, k: &CameronMartinPath, tau: f64, mc: &McConfig) -> Result<Outcome> {
    let sys = s.system();
    let kc = k.coarsen()?;
    let samples = mc.run(|i| {
        let fine = sample_noise(k.horizon, k.steps, sys.noise_dim, mc.seed, i)?;
        let coarse = fine.coarsen()?;
        let dc = compose_check(sys, &s.x0, &coarse, &kc, tau, PerturbationMode::Reference)?;
        let df = compose_check(sys, &s.x0, &fine, k, tau, PerturbationMode::Reference)?;
        Ok((dc, df))
    })?;
    let r = EstimatorResult::from_pairs(samples);
    let ratio = r.lhs.mean / r.rhs.mean;
    let exact = r.lhs.mean <= COMPOSE_EXACT && r.rhs.mean <= COMPOSE_EXACT;
    Ok(Outcome {
        lhs: side(r.lhs.mean, r.lhs.stderr),
        rhs: side(r.rhs.mean, r.rhs.stderr),
        paired: paired(if ratio.is_finite() { ratio } else { 0.0 }, 0.0, f64::NAN),
        threshold: COMPOSE_RATIO,
        pass: exact || ratio >= COMPOSE_RATIO,
        samples: r.samples,
        functional: "none".into(),
        k: k.label.clone(),
    })
}
