//! The registry of shipped scenarios.
//!
//! Every scenario registers closed forms for `Y`, `DX` and the curvature;
//! [`Scenario::load`] checks them against the numerical backends.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::FilterVariant;
use crate::geometry::{EmbeddedManifold, VectorField};
use crate::ibp::{ConditionalQuery, CylindricalFunctional};
use crate::linalg::{Mat3, Vec3};
use crate::ljw::{ConnectionOracle, CurvatureBackend, DiffusionSystem, TANGENCY_TOL};

/// Sample size of the constant-rank check at load.
pub const RANK_SAMPLES: usize = 1000;

/// A diffusion system with its default inputs and registered oracles.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: &'static str,
    pub description: &'static str,
    pub oracle: ConnectionOracle,
    pub x0: Vec3,
    /// Base points of the multi-point check.
    pub base_points: Vec<Vec3>,
    /// `k(t) = t * k_direction`.
    pub k_direction: Vec3,
    /// Single-point functionals; the first is the default.
    pub functionals: Vec<CylindricalFunctional>,
    pub multipoint_functional: CylindricalFunctional,
    pub conditional: ConditionalQuery,
    pub variant: FilterVariant,
    /// Eigenvalue of `Ric#` on `I(X)` when it is a multiple of the identity.
    pub ricci_eigenvalue: f64,
    pub ricci_tolerance: f64,
    /// Exact value of both sides of the default derivative identity.
    pub eq4_exact: Option<f64>,
    /// Exact `E F(xi^tau)` at `tau = 1` for the default functional.
    pub girsanov_exact: Option<f64>,
}

impl Scenario {
    pub fn system(&self) -> &DiffusionSystem {
        self.oracle.system()
    }

    pub fn manifold(&self) -> &EmbeddedManifold {
        self.oracle.manifold()
    }

    /// Look up a scenario by id without validating it.
    pub fn find(id: &str) -> Result<Scenario> {
        let all = catalog();
        if let Some(s) = all.iter().find(|s| s.id == id) {
            return Ok(s.clone());
        }
        Err(Error::UnknownScenario {
            id: id.to_string(),
            hint: nearest(id, all.iter().map(|s| s.id)),
        })
    }

    /// Look up and validate.
    pub fn load(id: &str) -> Result<Scenario> {
        let s = Scenario::find(id)?;
        s.validate()?;
        Ok(s)
    }

    /// Constant rank, tangency, and agreement of every registered closed form
    /// with its numerical counterpart.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system();
        let m = self.manifold();
        let pts = m.quasi_random_points(RANK_SAMPLES);
        sys.constant_rank(&pts)?;
        let t = sys.tangency_residual(&pts);
        if t > TANGENCY_TOL {
            return Err(Error::Validation(format!(
                "X is not tangent: residual {t:.3e}"
            )));
        }
        let drift_normal = pts
            .iter()
            .map(|x| {
                let a = sys.drift(x);
                (a - m.projector(x) * a).norm()
            })
            .fold(0.0, f64::max);
        if drift_normal > TANGENCY_TOL {
            return Err(Error::Validation(format!(
                "drift is not tangent: residual {drift_normal:.3e}"
            )));
        }
        let probe = &pts[..100];
        let numeric = self.oracle.to_numerical();
        for (i, x) in probe.iter().enumerate() {
            let y = sys.adjoint(x)?;
            let yn = sys.numerical_adjoint(x)?;
            check("adjoint", (y - yn).norm(), 1e-9)?;
            let frame = m.tangent_frame(x);
            for c in 0..m.intrinsic_dim() {
                let u = frame.column(c).into_owned();
                let d = sys.coefficient_derivative(x, &u);
                let dn = sys.numerical_coefficient_derivative(x, &u);
                check("coefficient derivative", (d - dn).norm(), 1e-6)?;
                let a = sys.drift_derivative(x, &u)?;
                let an = sys.drift.numerical_derivative(m, x, &u, &sys.diff);
                check("drift derivative", (a - an).norm(), 1e-6)?;
            }
            if i < 20 {
                let u1 = frame.column(0).into_owned();
                let u2 = if m.intrinsic_dim() > 1 {
                    frame.column(1).into_owned()
                } else {
                    Vec3::zeros()
                };
                let r = self.oracle.curvature(x, &u1, &u2)?;
                let rn = numeric.curvature(x, &u1, &u2)?;
                check("curvature", (r - rn).norm(), 1e-4)?;
                let ric = self.oracle.ricci_sharp(x, &u1)?;
                let ricn = numeric.ricci_sharp(x, &u1)?;
                check("ricci", (ric - ricn).norm(), 1e-4)?;
            }
        }
        for f in self.functionals.iter().chain([&self.multipoint_functional]) {
            let arity = f.arity();
            let samples: Vec<Vec<Vec3>> = (0..20)
                .map(|s| {
                    (0..arity)
                        .map(|j| pts[(s * arity + j) % pts.len()])
                        .collect()
                })
                .collect();
            f.validate_gradient(m, &samples, 1e-6)?;
        }
        Ok(())
    }

    /// Whether the semi-connection form of the filtered flow applies.
    pub fn allows_eq7(&self) -> bool {
        self.system()
            .drift_in_image(&self.manifold().quasi_random_points(RANK_SAMPLES))
    }

    pub fn functional(&self, label: &str) -> Option<&CylindricalFunctional> {
        self.functionals.iter().find(|f| f.label == label)
    }
}

fn check(what: &str, err: f64, tol: f64) -> Result<()> {
    if err <= tol {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "registered {what} differs from the numerical one by {err:.3e}"
        )))
    }
}

/// Nearest id by normalized edit distance.
pub(crate) fn nearest<'a>(id: &str, candidates: impl Iterator<Item = &'a str>) -> Option<String> {
    candidates
        .map(|c| (strsim::normalized_levenshtein(id, c), c))
        .filter(|(s, _)| *s > 0.3)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

fn first_column() -> Mat3 {
    let mut m = Mat3::zeros();
    m[(0, 0)] = 1.0;
    m
}

fn sphere_projector(x: &Vec3) -> Mat3 {
    Mat3::identity() - x * x.transpose()
}

fn unit_column_system(id: &str, dim: usize) -> DiffusionSystem {
    DiffusionSystem::new(id, EmbeddedManifold::FlatTorus { dim }, 1, |_| {
        first_column()
    })
    .with_coefficient_derivative(|_, _| Mat3::zeros())
    .with_adjoint(|_| first_column())
}

fn sphere_system(id: &str) -> DiffusionSystem {
    DiffusionSystem::new(id, EmbeddedManifold::UnitSphere, 3, sphere_projector)
        .with_coefficient_derivative(|x, u| -(u * x.transpose() + x * u.transpose()))
        .with_adjoint(sphere_projector)
}

fn coord_fn(label: &str, fraction: f64, coord: usize) -> CylindricalFunctional {
    CylindricalFunctional::new(
        label,
        vec![fraction],
        1,
        move |a| a[0][coord].sin(),
        move |a| {
            let mut g = Vec3::zeros();
            g[coord] = a[0][coord].cos();
            vec![g]
        },
    )
    .expect("static functional")
}

fn torus_functionals() -> Vec<CylindricalFunctional> {
    vec![
        coord_fn("sin(x1(1))", 1.0, 0),
        coord_fn("sin(x2(1))", 1.0, 1),
        CylindricalFunctional::new(
            "cos(x1(0.5))*sin(x1(1)+x2(1))",
            vec![0.5, 1.0],
            1,
            |a| a[0][0].cos() * (a[1][0] + a[1][1]).sin(),
            |a| {
                let s = (a[1][0] + a[1][1]).sin();
                let c = (a[1][0] + a[1][1]).cos();
                let f = a[0][0].cos();
                vec![
                    Vec3::new(-a[0][0].sin() * s, 0.0, 0.0),
                    Vec3::new(f * c, f * c, 0.0),
                ]
            },
        )
        .expect("static functional"),
    ]
}

fn torus_multipoint() -> CylindricalFunctional {
    CylindricalFunctional::new(
        "sin(x1(1)[p1])*cos(x1(1)[p2])",
        vec![1.0],
        2,
        |a| a[0][0].sin() * a[1][0].cos(),
        |a| {
            vec![
                Vec3::new(a[0][0].cos() * a[1][0].cos(), 0.0, 0.0),
                Vec3::new(-a[0][0].sin() * a[1][0].sin(), 0.0, 0.0),
            ]
        },
    )
    .expect("static functional")
}

fn linear_fn(label: &str, fraction: f64, a: Vec3) -> CylindricalFunctional {
    CylindricalFunctional::new(
        label,
        vec![fraction],
        1,
        move |x| x[0].dot(&a),
        move |_| vec![a],
    )
    .expect("static functional")
}

const A: Vec3 = Vec3::new(0.8, 0.0, 0.6);
const B: Vec3 = Vec3::new(0.0, 0.6, 0.8);

fn sphere_functionals() -> Vec<CylindricalFunctional> {
    vec![
        linear_fn("<x(1),a>", 1.0, A),
        CylindricalFunctional::new(
            "<x(0.5),a>*<x(1),b>",
            vec![0.5, 1.0],
            1,
            |x| x[0].dot(&A) * x[1].dot(&B),
            |x| vec![A * x[1].dot(&B), B * x[0].dot(&A)],
        )
        .expect("static functional"),
        CylindricalFunctional::new(
            "<x(1),a>^2",
            vec![1.0],
            1,
            |x| x[0].dot(&A).powi(2),
            |x| vec![A * (2.0 * x[0].dot(&A))],
        )
        .expect("static functional"),
    ]
}

fn sphere_multipoint() -> CylindricalFunctional {
    CylindricalFunctional::new(
        "<x(1)[p1],x(1)[p2]>",
        vec![1.0],
        2,
        |x| x[0].dot(&x[1]),
        |x| vec![x[1], x[0]],
    )
    .expect("static functional")
}

fn sphere_conditional() -> ConditionalQuery {
    ConditionalQuery {
        v0: Vec3::new(1.0, 0.0, 0.0),
        weight: Arc::new(|_| 1.0),
        test_field: VectorField::sphere_gradient(A),
        time_fraction: 1.0,
        variant: FilterVariant::Eq8,
    }
}

fn torus_conditional(v0: Vec3) -> ConditionalQuery {
    ConditionalQuery {
        v0,
        weight: Arc::new(|x| x[0].cos()),
        test_field: VectorField::constant(Vec3::new(1.0, 1.0, 0.0)),
        time_fraction: 1.0,
        variant: FilterVariant::Eq8,
    }
}

/// All shipped scenarios, in a fixed order.
pub fn catalog() -> Vec<Scenario> {
    let sphere_drift = VectorField::sphere_gradient(Vec3::new(0.0, 0.0, 1.0));
    let c = 0.5;
    let scaled_drift = VectorField::new(move |x| sphere_drift.eval(x) * c).with_derivative({
        let a = Vec3::new(0.0, 0.0, 1.0);
        move |x, v| (-(x * v.dot(&a)) - v * x.dot(&a)) * c
    });
    vec![
        Scenario {
            id: "circle-full",
            description: "unit circle, X = d/dtheta (m = 1), no drift",
            oracle: ConnectionOracle::new(
                unit_column_system("circle-full", 1),
                CurvatureBackend::flat(),
            ),
            x0: Vec3::zeros(),
            base_points: vec![Vec3::zeros(), Vec3::new(PI, 0.0, 0.0)],
            k_direction: Vec3::new(1.0, 0.0, 0.0),
            functionals: vec![
                coord_fn("sin(x(1))", 1.0, 0),
                CylindricalFunctional::new(
                    "cos(x(0.5))*sin(x(1))",
                    vec![0.5, 1.0],
                    1,
                    |a| a[0][0].cos() * a[1][0].sin(),
                    |a| {
                        vec![
                            Vec3::new(-a[0][0].sin() * a[1][0].sin(), 0.0, 0.0),
                            Vec3::new(a[0][0].cos() * a[1][0].cos(), 0.0, 0.0),
                        ]
                    },
                )
                .expect("static functional"),
            ],
            multipoint_functional: torus_multipoint(),
            conditional: torus_conditional(Vec3::new(1.0, 0.0, 0.0)),
            variant: FilterVariant::Eq8,
            ricci_eigenvalue: 0.0,
            ricci_tolerance: 1e-6,
            eq4_exact: Some((-0.5f64).exp()),
            girsanov_exact: Some(1f64.sin() * (-0.5f64).exp()),
        },
        Scenario {
            id: "torus2-degenerate",
            description: "flat 2-torus, X = e d/dx1 (m = 1), no drift; degenerate",
            oracle: ConnectionOracle::new(
                unit_column_system("torus2-degenerate", 2),
                CurvatureBackend::flat(),
            ),
            x0: Vec3::new(0.0, 1.0, 0.0),
            base_points: vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(PI, 2.0, 0.0)],
            k_direction: Vec3::new(1.0, 0.0, 0.0),
            functionals: torus_functionals(),
            multipoint_functional: torus_multipoint(),
            conditional: torus_conditional(Vec3::new(1.0, 1.0, 0.0)),
            variant: FilterVariant::Eq8,
            ricci_eigenvalue: 0.0,
            ricci_tolerance: 1e-6,
            eq4_exact: Some((-0.5f64).exp()),
            girsanov_exact: Some(1f64.sin() * (-0.5f64).exp()),
        },
        Scenario {
            id: "sphere2-gradient",
            description: "unit 2-sphere, X(x)e = P(x)e (m = 3), no drift; Brownian motion",
            oracle: ConnectionOracle::new(
                sphere_system("sphere2-gradient"),
                CurvatureBackend::round_sphere(),
            ),
            x0: Vec3::new(0.0, 0.0, 1.0),
            base_points: vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0)],
            k_direction: Vec3::new(1.0, 0.0, 0.0),
            functionals: sphere_functionals(),
            multipoint_functional: sphere_multipoint(),
            conditional: sphere_conditional(),
            variant: FilterVariant::Eq8,
            ricci_eigenvalue: 1.0,
            ricci_tolerance: 1e-3,
            eq4_exact: None,
            girsanov_exact: None,
        },
        Scenario {
            id: "sphere2-drift",
            description: "unit 2-sphere, X(x)e = P(x)e (m = 3), A = 0.5 P(x)(0,0,1) in I(X)",
            oracle: ConnectionOracle::new(
                sphere_system("sphere2-drift").with_drift(scaled_drift),
                CurvatureBackend::round_sphere(),
            ),
            x0: Vec3::new(0.6, 0.0, 0.8),
            base_points: vec![Vec3::new(0.6, 0.0, 0.8), Vec3::new(-0.6, 0.0, -0.8)],
            k_direction: Vec3::new(0.0, 1.0, 0.0),
            functionals: sphere_functionals(),
            multipoint_functional: sphere_multipoint(),
            conditional: ConditionalQuery {
                v0: Vec3::new(0.0, 1.0, 0.0),
                ..sphere_conditional()
            },
            variant: FilterVariant::Eq8,
            ricci_eigenvalue: 1.0,
            ricci_tolerance: 1e-3,
            eq4_exact: None,
            girsanov_exact: None,
        },
        Scenario {
            id: "torus2-transverse-drift",
            description: "flat 2-torus, X = e d/dx1 (m = 1), A = d/dx2 not in I(X)",
            oracle: ConnectionOracle::new(
                unit_column_system("torus2-transverse-drift", 2)
                    .with_drift(VectorField::constant(Vec3::new(0.0, 1.0, 0.0))),
                CurvatureBackend::flat(),
            ),
            x0: Vec3::new(0.0, 1.0, 0.0),
            base_points: vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(PI, 2.0, 0.0)],
            k_direction: Vec3::new(1.0, 0.0, 0.0),
            functionals: torus_functionals(),
            multipoint_functional: torus_multipoint(),
            conditional: torus_conditional(Vec3::new(1.0, 1.0, 0.0)),
            variant: FilterVariant::Eq8,
            ricci_eigenvalue: 0.0,
            ricci_tolerance: 1e-6,
            eq4_exact: Some((-0.5f64).exp()),
            girsanov_exact: Some(1f64.sin() * (-0.5f64).exp()),
        },
    ]
}
