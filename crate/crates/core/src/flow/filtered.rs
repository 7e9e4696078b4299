use std::fmt;
use std::str::FromStr;

use super::PathObservation;
use crate::error::{Error, Result};
use crate::linalg::{frame_inverse, leading_columns, Mat3, Vec3};
use crate::ljw::{ConnectionOracle, SECTION_TOL};

/// Which covariant form of the filtered derivative flow to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterVariant {
    /// Adjoint semi-connection form: `D^ v = (-Ric#/2 + check-nabla A)(v) dt`.
    /// Requires `A(y) in I(X)_y`.
    Eq7,
    /// Levi-Civita form with the noise term `nabla X(v)(e dB)`.
    Eq8,
}

impl FilterVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterVariant::Eq7 => "eq7",
            FilterVariant::Eq8 => "eq8",
        }
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq7" => Ok(FilterVariant::Eq7),
            "eq8" => Ok(FilterVariant::Eq8),
            other => Err(Error::InvalidParameter(format!(
                "unknown filter variant {other:?} (expected eq7 or eq8)"
            ))),
        }
    }
}

/// `W_k : T_{x_0} M -> T_{x_k} M` along an observed path, stored in the
/// transported frames of the observation.
#[derive(Debug, Clone)]
pub struct FilteredFlow {
    pub variant: FilterVariant,
    pub maps: Vec<Mat3>,
    pub inverse_maps: Vec<Mat3>,
    pub frames: Vec<Mat3>,
    pub intrinsic_dim: usize,
}

impl FilteredFlow {
    /// `W_k` as an ambient map.
    pub fn map(&self, k: usize) -> Mat3 {
        let n = self.intrinsic_dim;
        leading_columns(&self.frames[k], n)
            * self.maps[k]
            * leading_columns(&self.frames[0], n).transpose()
    }

    /// `W_k^{-1}` as an ambient map.
    pub fn inverse_map(&self, k: usize) -> Mat3 {
        let n = self.intrinsic_dim;
        leading_columns(&self.frames[0], n)
            * self.inverse_maps[k]
            * leading_columns(&self.frames[k], n).transpose()
    }

    pub fn apply(&self, k: usize, v: &Vec3) -> Vec3 {
        self.map(k) * v
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

enum NoiseAt {
    /// Frame matrices `F^T P DX(f_i) e`, one per frame column.
    Linear([Mat3; 3]),
    Deferred(Vec3, Mat3),
}

struct Coefficients<'a> {
    oracle: &'a ConnectionOracle,
    variant: FilterVariant,
    n: usize,
}

impl Coefficients<'_> {
    /// Noise term at `y`, prepared for evaluation at several increments.
    fn noise_at(&self, y: &Vec3, frame: &Mat3) -> NoiseAt {
        match self.variant {
            FilterVariant::Eq8 => {
                let sys = self.oracle.system();
                let e = sys.kernel_complement_projector(y);
                let pf = sys.manifold.projector(y) * frame;
                let mut columns = [Mat3::zeros(); 3];
                for (i, c) in columns.iter_mut().enumerate().take(self.n) {
                    let f = frame.column(i).into_owned();
                    *c = pf.transpose() * (sys.coefficient_derivative(y, &f) * e);
                }
                NoiseAt::Linear(columns)
            }
            FilterVariant::Eq7 => NoiseAt::Deferred(*y, *frame),
        }
    }

    /// Frame matrix of the noise term for the observed increment `eta`.
    fn noise(&self, at: &NoiseAt, eta: &Vec3) -> Result<Mat3> {
        let mut out = Mat3::zeros();
        match at {
            NoiseAt::Linear(columns) => {
                for (i, c) in columns.iter().enumerate().take(self.n) {
                    out.set_column(i, &(c * eta));
                }
                Ok(leading_columns(&out, self.n))
            }
            NoiseAt::Deferred(y, frame) => {
                let w = self.oracle.system().coefficient(y) * eta;
                for i in 0..self.n {
                    let f = frame.column(i).into_owned();
                    out.set_column(i, &-self.oracle.connection_difference(y, &f, &w)?);
                }
                Ok(leading_columns(&(frame.transpose() * out), self.n))
            }
        }
    }

    /// Frame matrix of the `dt` term at `y`.
    fn drift(&self, y: &Vec3, frame: &Mat3) -> Result<Mat3> {
        let sys = self.oracle.system();
        let mut out = self.oracle.ricci_columns(y, frame, self.n)? * -0.5;
        if !sys.drift.is_zero() {
            match self.variant {
                FilterVariant::Eq8 => {
                    let p = sys.manifold.projector(y);
                    for i in 0..self.n {
                        let f = frame.column(i).into_owned();
                        let da = p * sys.drift_derivative(y, &f)?;
                        out.set_column(i, &(out.column(i) + da));
                    }
                }
                FilterVariant::Eq7 => {
                    let a = sys.drift(y);
                    for i in 0..self.n {
                        let f = frame.column(i).into_owned();
                        let ljw = self.oracle.ljw_derivative(&sys.drift, y, &f)?;
                        let s = self.oracle.connection_difference(y, &f, &a)?;
                        out.set_column(i, &(out.column(i) + ljw - s));
                    }
                }
            }
        }
        Ok(leading_columns(&(frame.transpose() * out), self.n))
    }
}

/// Integrate the filtered derivative flow along an observed path.
///
/// The noise term is stepped by Heun in the moving frames (which realize
/// Levi-Civita transport); the `dt` term is taken at the left point.
pub fn filtered_derivative_flow(
    oracle: &ConnectionOracle,
    obs: &PathObservation,
    variant: FilterVariant,
) -> Result<FilteredFlow> {
    let sys = oracle.system();
    let n = obs.intrinsic_dim;
    if variant == FilterVariant::Eq7 {
        for y in &obs.points {
            let residual = sys.section_residual(y, &sys.drift(y));
            if residual > SECTION_TOL {
                return Err(Error::Precondition(format!(
                    "eq7 needs the drift in I(X); residual {residual:.3e} at {:?}",
                    y.as_slice()
                )));
            }
        }
    }
    let coeffs = Coefficients { oracle, variant, n };
    let steps = obs.points.len() - 1;
    let mut maps = Vec::with_capacity(steps + 1);
    let mut inverse_maps = Vec::with_capacity(steps + 1);
    let mut w = Mat3::identity();
    let mut w_inv = Mat3::identity();
    maps.push(w);
    inverse_maps.push(w_inv);
    let id = Mat3::identity();
    let mut drift = coeffs.drift(&obs.points[0], &obs.frames[0])?;
    let mut left = coeffs.noise_at(&obs.points[0], &obs.frames[0]);
    for k in 0..steps {
        let eta = &obs.increments[k];
        let right = coeffs.noise_at(&obs.points[k + 1], &obs.frames[k + 1]);
        let n0 = coeffs.noise(&left, eta)?;
        let n1 = coeffs.noise(&right, eta)?;
        left = right;
        let euler = n0 + drift * obs.dt;
        let step = id + n0 * 0.5 + drift * obs.dt + n1 * (id + euler) * 0.5;
        let step = crate::linalg::pad_identity(&step, n);
        let step_inv = frame_inverse(&step, n)
            .ok_or_else(|| Error::Domain("filtered flow became singular".into()))?;
        w = step * w;
        w_inv *= step_inv;
        maps.push(w);
        inverse_maps.push(w_inv);
        if k + 1 < steps {
            drift = coeffs.drift(&obs.points[k + 1], &obs.frames[k + 1])?;
        }
    }
    Ok(FilteredFlow {
        variant,
        maps,
        inverse_maps,
        frames: obs.frames.clone(),
        intrinsic_dim: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate_flow, sample_noise};
    use crate::geometry::{EmbeddedManifold, VectorField};
    use crate::ljw::{CurvatureBackend, DiffusionSystem};

    const SPHERE: EmbeddedManifold = EmbeddedManifold::UnitSphere;

    fn projector(x: &Vec3) -> Mat3 {
        Mat3::identity() - x * x.transpose()
    }

    fn sphere() -> ConnectionOracle {
        let sys = DiffusionSystem::new("sphere", SPHERE, 3, projector)
            .with_coefficient_derivative(|x, u| -(u * x.transpose() + x * u.transpose()))
            .with_adjoint(projector);
        ConnectionOracle::new(sys, CurvatureBackend::round_sphere())
    }

    fn torus(drift: VectorField) -> ConnectionOracle {
        let e1 = |_: &Vec3| {
            let mut m = Mat3::zeros();
            m[(0, 0)] = 1.0;
            m
        };
        let sys = DiffusionSystem::new("torus", EmbeddedManifold::FlatTorus { dim: 2 }, 1, e1)
            .with_coefficient_derivative(|_, _| Mat3::zeros())
            .with_adjoint(e1)
            .with_drift(drift);
        ConnectionOracle::new(sys, CurvatureBackend::flat())
    }

    fn max_norm_error(
        oracle: &ConnectionOracle,
        steps: usize,
        index: u64,
        variant: FilterVariant,
    ) -> f64 {
        let sys = oracle.system();
        let noise = sample_noise(1.0, steps, 3, 42, index).unwrap();
        let path = integrate_flow(sys, &Vec3::new(0.6, 0.0, 0.8), &noise).unwrap();
        let w = filtered_derivative_flow(oracle, &path.observe(sys), variant).unwrap();
        let v0 = Vec3::new(0.8, 0.3, -0.6);
        (0..=steps)
            .map(|k| ((w.apply(k, &v0)).norm() - (-0.5 * noise.time(k)).exp() * v0.norm()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sphere_filtered_flow_is_damped_transport() {
        let o = sphere();
        for variant in [FilterVariant::Eq8, FilterVariant::Eq7] {
            let coarse = max_norm_error(&o, 256, 0, variant);
            let fine = max_norm_error(&o, 512, 0, variant);
            assert!(coarse <= 1.0 / 256.0, "{coarse}");
            let ratio = coarse / fine;
            assert!((1.5..=3.0).contains(&ratio), "{variant}: {ratio}");
        }
    }

    #[test]
    fn variants_agree_and_are_tangent() {
        let o = sphere();
        let sys = o.system();
        let noise = sample_noise(1.0, 256, 3, 42, 4).unwrap();
        let path = integrate_flow(sys, &Vec3::z(), &noise).unwrap();
        let obs = path.observe(sys);
        let w7 = filtered_derivative_flow(&o, &obs, FilterVariant::Eq7).unwrap();
        let w8 = filtered_derivative_flow(&o, &obs, FilterVariant::Eq8).unwrap();
        assert_eq!(w8.maps[0], Mat3::identity());
        for k in 0..=256 {
            assert!((w7.map(k) - w8.map(k)).norm() <= 1.0 / 256.0);
            let x = path.points[k];
            assert!((x.transpose() * w8.map(k)).norm() <= 1e-12);
            assert_eq!(w8.apply(k, &Vec3::zeros()), Vec3::zeros());
        }
        let u = Vec3::new(1.0, 0.0, 0.0);
        let v = Vec3::new(0.0, 1.0, 0.0);
        let k = 200;
        let lhs = w8.apply(k, &(u * 2.0 + v * -3.0));
        let rhs = w8.apply(k, &u) * 2.0 - w8.apply(k, &v) * 3.0;
        assert!((lhs - rhs).norm() <= 1e-12);
    }

    #[test]
    fn flat_torus_filtered_flow_is_identity() {
        let o = torus(VectorField::zero());
        let sys = o.system();
        let noise = sample_noise(1.0, 64, 1, 42, 0).unwrap();
        let path = integrate_flow(sys, &Vec3::new(1.0, 1.0, 0.0), &noise).unwrap();
        let obs = path.observe(sys);
        for variant in [FilterVariant::Eq7, FilterVariant::Eq8] {
            let w = filtered_derivative_flow(&o, &obs, variant).unwrap();
            assert!(w
                .maps
                .iter()
                .all(|m| (m - Mat3::identity()).norm() <= 1e-12));
        }
    }

    #[test]
    fn eq7_requires_drift_in_image() {
        let o = torus(VectorField::constant(Vec3::y()));
        let sys = o.system();
        let noise = sample_noise(1.0, 16, 1, 42, 0).unwrap();
        let path = integrate_flow(sys, &Vec3::new(1.0, 1.0, 0.0), &noise).unwrap();
        let obs = path.observe(sys);
        assert!(matches!(
            filtered_derivative_flow(&o, &obs, FilterVariant::Eq7),
            Err(Error::Precondition(_))
        ));
        assert!(filtered_derivative_flow(&o, &obs, FilterVariant::Eq8).is_ok());
    }
}
