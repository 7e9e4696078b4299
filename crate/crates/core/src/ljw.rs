//! Diffusion systems `(X, A)` and the geometry their coefficient induces on
//! the image subbundle `I(X)`: induced metric, metric adjoint `Y`, the
//! LeJan-Watanabe connection, its adjoint semi-connection, curvature and
//! Ricci contraction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{Differentiation, EmbeddedManifold, VectorField};
use crate::linalg::{frame_inverse, mask, sorted_svd, Mat3, Vec3};

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_RTOL: f64 = 1e-8;
/// Singular values within this factor of the rank threshold make the rank ambiguous.
pub const RANK_GAP: f64 = 1e3;
/// Residual above which a field is not accepted as a section of `I(X)`.
pub const SECTION_TOL: f64 = 1e-6;
/// Columns of `X(x)` must be tangent to this tolerance.
pub const TANGENCY_TOL: f64 = 1e-9;

type CoefficientFn = dyn Fn(&Vec3) -> Mat3 + Send + Sync;
type CoefficientDerivativeFn = dyn Fn(&Vec3, &Vec3) -> Mat3 + Send + Sync;
type CurvatureFn = dyn Fn(&Vec3, &Vec3, &Vec3) -> Mat3 + Send + Sync;
type RicciFn = dyn Fn(&Vec3, &Vec3) -> Vec3 + Send + Sync;

/// The pair `(X, A)` of a Stratonovich equation `dx = X(x) o dB + A(x) dt`.
///
/// `X(x)` is stored ambiently: column `i` of the returned matrix is
/// `X(x) e_i`, for `i < noise_dim`; the remaining columns are zero.
#[derive(Clone)]
pub struct DiffusionSystem {
    pub scenario_id: String,
    pub manifold: EmbeddedManifold,
    pub noise_dim: usize,
    coefficient: Arc<CoefficientFn>,
    coefficient_derivative: Option<Arc<CoefficientDerivativeFn>>,
    adjoint: Option<Arc<CoefficientFn>>,
    pub drift: VectorField,
    pub diff: Differentiation,
}

impl fmt::Debug for DiffusionSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSystem")
            .field("scenario_id", &self.scenario_id)
            .field("manifold", &self.manifold)
            .field("noise_dim", &self.noise_dim)
            .field(
                "analytic_derivative",
                &self.coefficient_derivative.is_some(),
            )
            .field("analytic_adjoint", &self.adjoint.is_some())
            .field("drift", &self.drift)
            .finish()
    }
}

impl DiffusionSystem {
    pub fn new(
        scenario_id: impl Into<String>,
        manifold: EmbeddedManifold,
        noise_dim: usize,
        coefficient: impl Fn(&Vec3) -> Mat3 + Send + Sync + 'static,
    ) -> Self {
        DiffusionSystem {
            scenario_id: scenario_id.into(),
            manifold,
            noise_dim,
            coefficient: Arc::new(coefficient),
            coefficient_derivative: None,
            adjoint: None,
            drift: VectorField::zero(),
            diff: Differentiation::default(),
        }
    }

    /// Analytic `(x, u) -> DX(x)[u]`.
    pub fn with_coefficient_derivative(
        mut self,
        d: impl Fn(&Vec3, &Vec3) -> Mat3 + Send + Sync + 'static,
    ) -> Self {
        self.coefficient_derivative = Some(Arc::new(d));
        self
    }

    /// Closed form of the metric adjoint `Y(x)`, as an `m x N` array.
    pub fn with_adjoint(mut self, y: impl Fn(&Vec3) -> Mat3 + Send + Sync + 'static) -> Self {
        self.adjoint = Some(Arc::new(y));
        self
    }

    pub fn with_drift(mut self, drift: VectorField) -> Self {
        self.drift = drift;
        self
    }

    #[inline]
    pub fn coefficient(&self, x: &Vec3) -> Mat3 {
        (self.coefficient)(x)
    }

    /// `DX(x)[u]`, the ambient derivative of the coefficient along tangent `u`.
    #[inline]
    pub fn coefficient_derivative(&self, x: &Vec3, u: &Vec3) -> Mat3 {
        match &self.coefficient_derivative {
            Some(d) => d(x, u),
            None => self.numerical_coefficient_derivative(x, u),
        }
    }

    pub fn numerical_coefficient_derivative(&self, x: &Vec3, u: &Vec3) -> Mat3 {
        self.diff
            .directional(&self.manifold, |y| self.coefficient(y), x, u)
    }

    #[inline]
    pub fn drift(&self, x: &Vec3) -> Vec3 {
        self.drift.eval(x)
    }

    #[inline]
    pub fn drift_derivative(&self, x: &Vec3, u: &Vec3) -> Result<Vec3> {
        self.drift
            .directional_derivative(&self.manifold, x, u, &self.diff)
    }

    pub fn has_analytic_adjoint(&self) -> bool {
        self.adjoint.is_some()
    }

    pub fn has_analytic_coefficient_derivative(&self) -> bool {
        self.coefficient_derivative.is_some()
    }

    /// Rank, induced-metric orthonormal basis and preimage data at `x`.
    pub fn image_subbundle(&self, x: &Vec3) -> Result<SubbundlePoint> {
        self.manifold.check_point(x)?;
        let xm = self.coefficient(x);
        let svd = sorted_svd(&xm);
        let rank = numerical_rank(&svd.singular_values, x)?;
        let mut basis = Mat3::zeros();
        let mut preimage = Mat3::zeros();
        for a in 0..rank {
            preimage.set_column(a, &svd.v.column(a));
            basis.set_column(a, &(svd.u.column(a) * svd.singular_values[a]));
        }
        let y = pinv_from_svd(&svd, rank);
        let yb = y * basis;
        let gram = yb.transpose() * yb;
        Ok(SubbundlePoint {
            point: *x,
            rank,
            basis,
            preimage,
            singular_values: svd.singular_values,
            gram,
        })
    }

    /// Metric adjoint `Y(x): I(X)_x -> R^m`.
    pub fn adjoint(&self, x: &Vec3) -> Result<Mat3> {
        match &self.adjoint {
            Some(y) => Ok(y(x)),
            None => self.numerical_adjoint(x),
        }
    }

    /// `Y(x)` from the SVD of `X(x)`, ignoring any registered closed form.
    pub fn numerical_adjoint(&self, x: &Vec3) -> Result<Mat3> {
        pseudo_adjoint(&self.coefficient(x))
            .map_err(|e| match e {
                Error::RankDegeneracy {
                    singular_values, ..
                } => Error::RankDegeneracy {
                    point: format!("{:?}", x.as_slice()),
                    singular_values,
                },
                other => other,
            })
            .map(|(y, _)| y)
    }

    /// `Y(x)` without the rank-ambiguity check, for use inside difference stencils.
    #[inline]
    pub(crate) fn adjoint_unchecked(&self, x: &Vec3) -> Mat3 {
        match &self.adjoint {
            Some(y) => y(x),
            None => {
                let svd = sorted_svd(&self.coefficient(x));
                let smax = svd.singular_values[0];
                let rank = svd
                    .singular_values
                    .iter()
                    .filter(|&&s| s > RANK_RTOL * smax)
                    .count();
                pinv_from_svd(&svd, rank)
            }
        }
    }

    /// `e(x) = Y(x) X(x)`, the orthogonal projection of `R^m` onto `(ker X(x))^perp`.
    #[inline]
    pub fn kernel_complement_projector(&self, x: &Vec3) -> Mat3 {
        self.adjoint_unchecked(x) * self.coefficient(x)
    }

    /// Induced metric on `I(X)_x`.
    pub fn induced_inner(&self, x: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
        let y = self.adjoint_unchecked(x);
        (y * a).dot(&(y * b))
    }

    /// `|w - X(x) Y(x) w|`: zero exactly when `w` lies in `I(X)_x`.
    pub fn section_residual(&self, x: &Vec3, w: &Vec3) -> f64 {
        let xm = self.coefficient(x);
        (w - xm * (self.adjoint_unchecked(x) * w)).norm()
    }

    /// Maximum normal component of the columns of `X` over `points`.
    pub fn tangency_residual(&self, points: &[Vec3]) -> f64 {
        points
            .iter()
            .map(|x| {
                let p = self.manifold.projector(x);
                ((Mat3::identity() - p) * self.coefficient(x)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Rank of `X` over `points`; errors unless it is the same everywhere.
    pub fn constant_rank(&self, points: &[Vec3]) -> Result<usize> {
        let mut rank = None;
        for x in points {
            let r = self.image_subbundle(x)?.rank;
            match rank {
                None => rank = Some(r),
                Some(r0) if r0 != r => {
                    return Err(Error::RankDegeneracy {
                        point: format!("{:?}", x.as_slice()),
                        singular_values: format!("rank {r} differs from rank {r0}"),
                    })
                }
                _ => {}
            }
        }
        rank.ok_or_else(|| Error::InvalidParameter("no sample points".into()))
    }

    /// Whether `A(y) in I(X)_y` at every sampled point.
    pub fn drift_in_image(&self, points: &[Vec3]) -> bool {
        points.iter().all(|x| {
            let a = self.drift(x);
            self.section_residual(x, &a) <= SECTION_TOL * (1.0 + a.norm())
        })
    }

    /// Whether `e -> X(.) e` is injective into vector fields, tested on `points`.
    pub fn field_map_is_injective(&self, points: &[Vec3]) -> bool {
        let mut gram = Mat3::zeros();
        for x in points {
            let xm = self.coefficient(x);
            gram += xm.transpose() * xm;
        }
        let g = gram.fixed_view::<3, 3>(0, 0).into_owned();
        let svd = sorted_svd(&g);
        let smax = svd.singular_values[0];
        smax > 0.0 && (0..self.noise_dim).all(|i| svd.singular_values[i] > RANK_RTOL * smax)
    }
}

fn numerical_rank(s: &Vec3, x: &Vec3) -> Result<usize> {
    let smax = s[0];
    let degenerate = || Error::RankDegeneracy {
        point: format!("{:?}", x.as_slice()),
        singular_values: format!("{:?}", s.as_slice()),
    };
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(degenerate());
    }
    let cut = RANK_RTOL * smax;
    if s.iter().any(|&v| v > cut / RANK_GAP && v < cut * RANK_GAP) {
        return Err(degenerate());
    }
    Ok(s.iter().filter(|&&v| v > cut).count())
}

fn pinv_from_svd(svd: &crate::linalg::SortedSvd, rank: usize) -> Mat3 {
    let mut y = Mat3::zeros();
    for a in 0..rank {
        y += svd.v.column(a) * svd.u.column(a).transpose() / svd.singular_values[a];
    }
    y
}

/// Moore-Penrose adjoint of a constant-rank coefficient matrix, with its rank.
pub fn pseudo_adjoint(x: &Mat3) -> Result<(Mat3, usize)> {
    let svd = sorted_svd(x);
    let rank = numerical_rank(&svd.singular_values, &Vec3::zeros())?;
    Ok((pinv_from_svd(&svd, rank), rank))
}

/// `I(X)_x` with an orthonormal basis for the induced metric.
#[derive(Debug, Clone, Copy)]
pub struct SubbundlePoint {
    pub point: Vec3,
    pub rank: usize,
    /// Columns `e_a = X(x) v_a`, `a < rank`.
    pub basis: Mat3,
    /// Right singular vectors `v_a` spanning `(ker X(x))^perp`.
    pub preimage: Mat3,
    pub singular_values: Vec3,
    /// Induced-metric Gram matrix of `basis`; the identity up to rounding.
    pub gram: Mat3,
}

/// Curvature model used by a [`ConnectionOracle`].
#[derive(Clone)]
pub enum CurvatureBackend {
    /// Christoffel symbols of the LeJan-Watanabe connection in retraction
    /// coordinates, differentiated numerically.
    Numerical,
    /// Registered closed forms for `R(u1, u2)` and `Ric#(u)`.
    Analytic {
        curvature: Arc<CurvatureFn>,
        ricci: Arc<RicciFn>,
    },
}

impl fmt::Debug for CurvatureBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurvatureBackend::Numerical => write!(f, "Numerical"),
            CurvatureBackend::Analytic { .. } => write!(f, "Analytic"),
        }
    }
}

impl CurvatureBackend {
    pub fn analytic(
        curvature: impl Fn(&Vec3, &Vec3, &Vec3) -> Mat3 + Send + Sync + 'static,
        ricci: impl Fn(&Vec3, &Vec3) -> Vec3 + Send + Sync + 'static,
    ) -> Self {
        CurvatureBackend::Analytic {
            curvature: Arc::new(curvature),
            ricci: Arc::new(ricci),
        }
    }

    /// Zero curvature.
    pub fn flat() -> Self {
        CurvatureBackend::analytic(|_, _, _| Mat3::zeros(), |_, _| Vec3::zeros())
    }

    /// Constant curvature one on the unit sphere when `I(X) = TS^2` with the round metric.
    pub fn round_sphere() -> Self {
        CurvatureBackend::analytic(
            |x, u1, u2| {
                let p = Mat3::identity() - x * x.transpose();
                (u1 * u2.transpose() - u2 * u1.transpose()) * p
            },
            |x, u| u - x * x.dot(u),
        )
    }
}

/// Evaluator for the LeJan-Watanabe connection and its curvature.
///
/// Immutable after construction; every query is a pure function of its inputs.
#[derive(Debug, Clone)]
pub struct ConnectionOracle {
    sys: DiffusionSystem,
    backend: CurvatureBackend,
}

/// Numerical curvature data at one point.
#[derive(Debug, Clone)]
pub struct CurvatureAt {
    pub point: Vec3,
    pub rank: usize,
    chart_frame: Mat3,
    basis: Mat3,
    coordinates: Mat3,
    /// `R_ij` in the frame `X(.) v_a`, for `i < j`; zero-padded `r x r`.
    components: [[Mat3; 3]; 3],
}

impl CurvatureAt {
    /// `R(u1, u2)` as an ambient matrix acting on `I(X)_x`.
    pub fn apply(&self, u1: &Vec3, u2: &Vec3) -> Mat3 {
        let c1 = self.chart_frame.transpose() * u1;
        let c2 = self.chart_frame.transpose() * u2;
        let mut k = Mat3::zeros();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let w = c1[i] * c2[j] - c1[j] * c2[i];
                if w != 0.0 {
                    k += self.components[i][j] * w;
                }
            }
        }
        self.basis * k * self.coordinates
    }
}

impl ConnectionOracle {
    pub fn new(sys: DiffusionSystem, backend: CurvatureBackend) -> Self {
        ConnectionOracle { sys, backend }
    }

    pub fn numerical(sys: DiffusionSystem) -> Self {
        ConnectionOracle::new(sys, CurvatureBackend::Numerical)
    }

    pub fn system(&self) -> &DiffusionSystem {
        &self.sys
    }

    pub fn manifold(&self) -> &EmbeddedManifold {
        &self.sys.manifold
    }

    pub fn backend(&self) -> &CurvatureBackend {
        &self.backend
    }

    /// Same system with the numerical curvature backend.
    pub fn to_numerical(&self) -> Self {
        ConnectionOracle::numerical(self.sys.clone())
    }

    /// `X(x) d(Y(.) Z(.))(v)` for a section `z` of `I(X)`.
    pub fn ljw_derivative_fn<F>(&self, z: F, x: &Vec3, v: &Vec3) -> Result<Vec3>
    where
        F: Fn(&Vec3) -> Vec3,
    {
        let m = &self.sys.manifold;
        m.check_point(x)?;
        let zx = z(x);
        let residual = self.sys.section_residual(x, &zx);
        if residual > SECTION_TOL {
            return Err(Error::Domain(format!(
                "field is not a section of I(X): residual {residual:.3e}"
            )));
        }
        let d = self
            .sys
            .diff
            .directional(m, |y| self.sys.adjoint_unchecked(y) * z(y), x, v);
        Ok(self.sys.coefficient(x) * d)
    }

    pub fn ljw_derivative(&self, z: &VectorField, x: &Vec3, v: &Vec3) -> Result<Vec3> {
        self.ljw_derivative_fn(|y| z.eval(y), x, v)
    }

    /// `hat-nabla_{Z2} Z1 = check-nabla_{Z1} Z2 - [Z1, Z2]`, with `Z2` a section of `I(X)`.
    pub fn adjoint_semi_derivative(
        &self,
        z1: &VectorField,
        z2: &VectorField,
        x: &Vec3,
    ) -> Result<Vec3> {
        let along = self.ljw_derivative(z2, x, &z1.eval(x))?;
        let bracket = crate::geometry::lie_bracket(&self.sys.manifold, z1, z2, x, &self.sys.diff)?;
        Ok(along - bracket)
    }

    /// `S_x(v, w) = check-nabla_v W - nabla_v W` for any section `W` through
    /// `w in I(X)_x`; tensorial in both arguments. Computed on the section
    /// `y -> X(y) Y(x) w`.
    pub fn connection_difference(&self, x: &Vec3, v: &Vec3, w: &Vec3) -> Result<Vec3> {
        let c = self.sys.adjoint_unchecked(x) * w;
        let ljw = self.ljw_derivative_fn(|y| self.sys.coefficient(y) * c, x, v)?;
        let lc = self.sys.manifold.projector(x) * (self.sys.coefficient_derivative(x, v) * c);
        Ok(ljw - lc)
    }

    /// Curvature data from Christoffel symbols in the chart
    /// `c -> retract(x, B c)`, where `B` is an orthonormal frame of `T_x M`.
    pub fn curvature_at(&self, x: &Vec3) -> Result<CurvatureAt> {
        let sys = &self.sys;
        let m = &sys.manifold;
        let sp = sys.image_subbundle(x)?;
        let r = sp.rank;
        let n = m.intrinsic_dim();
        let b = m.tangent_frame(x);
        let h = sys.diff.second_step();
        let chart = |c: &Vec3| m.retract(x, &(b * c));
        let unit = |i: usize| {
            let mut e = Vec3::zeros();
            e[i] = 1.0;
            e
        };
        // Gamma_j(c): columns are frame coordinates of check-nabla_{d_j} E_a.
        let gamma = |c: &Vec3, j: usize| -> Mat3 {
            let y = chart(c);
            let xy = sys.coefficient(&y);
            let frame = xy * sp.preimage;
            let ej = unit(j) * h;
            let ep = sys.kernel_complement_projector(&chart(&(c + ej)));
            let em = sys.kernel_complement_projector(&chart(&(c - ej)));
            let ds = (ep - em) * sp.preimage / (2.0 * h);
            let w = xy * ds;
            let g = frame.transpose() * frame;
            let ginv = frame_inverse(&g, r).unwrap_or_else(Mat3::zeros);
            mask(r) * ginv * frame.transpose() * w * mask(r)
        };
        let origin = Vec3::zeros();
        let at_origin: Vec<Mat3> = (0..n).map(|j| gamma(&origin, j)).collect();
        let mut components = [[Mat3::zeros(); 3]; 3];
        for i in 0..n {
            for j in (i + 1)..n {
                let di_gj = (gamma(&(unit(i) * h), j) - gamma(&(unit(i) * -h), j)) / (2.0 * h);
                let dj_gi = (gamma(&(unit(j) * h), i) - gamma(&(unit(j) * -h), i)) / (2.0 * h);
                let (gi, gj) = (at_origin[i], at_origin[j]);
                components[i][j] = di_gj - dj_gi + gi * gj - gj * gi;
            }
        }
        let y = sys.adjoint(x)?;
        Ok(CurvatureAt {
            point: *x,
            rank: r,
            chart_frame: b,
            basis: sp.basis,
            coordinates: sp.preimage.transpose() * y,
            components,
        })
    }

    /// `R(u1, u2)` as a linear map on `I(X)_x`.
    pub fn curvature(&self, x: &Vec3, u1: &Vec3, u2: &Vec3) -> Result<Mat3> {
        match &self.backend {
            CurvatureBackend::Analytic { curvature, .. } => {
                self.sys.manifold.check_point(x)?;
                Ok(curvature(x, u1, u2))
            }
            CurvatureBackend::Numerical => Ok(self.curvature_at(x)?.apply(u1, u2)),
        }
    }

    /// `Ric#(u)`, defined by `<Ric#(u), w> = sum_i <R(e_i, u) w, e_i>` over an
    /// orthonormal basis of `I(X)_x`.
    pub fn ricci_sharp(&self, x: &Vec3, u: &Vec3) -> Result<Vec3> {
        match &self.backend {
            CurvatureBackend::Analytic { ricci, .. } => {
                self.sys.manifold.check_point(x)?;
                Ok(ricci(x, u))
            }
            CurvatureBackend::Numerical => {
                let at = self.curvature_at(x)?;
                Ok(self.contract(&at, x, u))
            }
        }
    }

    fn contract(&self, at: &CurvatureAt, x: &Vec3, u: &Vec3) -> Vec3 {
        let mut out = Vec3::zeros();
        for j in 0..at.rank {
            let ej = at.basis.column(j).into_owned();
            let mut c = 0.0;
            for i in 0..at.rank {
                let ei = at.basis.column(i).into_owned();
                let k = at.apply(&ei, u);
                c += self.sys.induced_inner(x, &(k * ej), &ei);
            }
            out += ej * c;
        }
        out
    }

    /// `Ric#` applied to each column of `frame` (first `n` columns).
    pub fn ricci_columns(&self, x: &Vec3, frame: &Mat3, n: usize) -> Result<Mat3> {
        let mut out = Mat3::zeros();
        match &self.backend {
            CurvatureBackend::Analytic { ricci, .. } => {
                for i in 0..n {
                    out.set_column(i, &ricci(x, &frame.column(i).into_owned()));
                }
            }
            CurvatureBackend::Numerical => {
                let at = self.curvature_at(x)?;
                for i in 0..n {
                    out.set_column(i, &self.contract(&at, x, &frame.column(i).into_owned()));
                }
            }
        }
        Ok(out)
    }

    /// Matrix of `Ric#` restricted to `I(X)_x` in the induced orthonormal basis.
    pub fn ricci_matrix(&self, x: &Vec3) -> Result<DMatrix<f64>> {
        let sp = self.sys.image_subbundle(x)?;
        let r = sp.rank;
        let mut out = DMatrix::zeros(r, r);
        for b in 0..r {
            let eb = sp.basis.column(b).into_owned();
            let ric = self.ricci_sharp(x, &eb)?;
            for a in 0..r {
                let ea = sp.basis.column(a).into_owned();
                out[(a, b)] = self.sys.induced_inner(x, &ric, &ea);
            }
        }
        Ok(out)
    }

    /// Eigenvalues of the symmetric part of [`Self::ricci_matrix`], ascending.
    pub fn ricci_eigenvalues(&self, x: &Vec3) -> Result<Vec<f64>> {
        let m = self.ricci_matrix(x)?;
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// `|d<Z1,Z2>(v) - <check-nabla_v Z1, Z2> - <Z1, check-nabla_v Z2>|` at `x`.
    pub fn metric_compatibility_residual(
        &self,
        z1: &VectorField,
        z2: &VectorField,
        x: &Vec3,
        v: &Vec3,
    ) -> Result<f64> {
        let sys = &self.sys;
        let lhs = sys.diff.directional(
            &sys.manifold,
            |y| sys.induced_inner(y, &z1.eval(y), &z2.eval(y)),
            x,
            v,
        );
        let n1 = self.ljw_derivative(z1, x, v)?;
        let n2 = self.ljw_derivative(z2, x, v)?;
        let rhs = sys.induced_inner(x, &n1, &z2.eval(x)) + sys.induced_inner(x, &z1.eval(x), &n2);
        Ok((lhs - rhs).abs())
    }
}
