use super::DrivingNoise;
use crate::error::{Error, Result};
use crate::geometry::EmbeddedManifold;
use crate::linalg::{frame_inverse, pad_identity, Mat3, Vec3};
use crate::ljw::DiffusionSystem;

/// One Heun predictor-corrector step of `dx = X(x) o dB + A(x) dt`,
/// keeping the intermediate quantities needed by its Jacobian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeunStep {
    pub x: Vec3,
    pub predictor: Vec3,
    pub delta0: Vec3,
    pub mean: Vec3,
    pub next: Vec3,
}

fn checked_length(m: &EmbeddedManifold, v: &Vec3) -> Result<()> {
    let length = v.norm();
    if length > m.max_step() || !length.is_finite() {
        return Err(Error::StepSize {
            length,
            limit: m.max_step(),
        });
    }
    Ok(())
}

impl HeunStep {
    #[inline]
    pub fn new(sys: &DiffusionSystem, x: &Vec3, db: &Vec3, dt: f64) -> Result<Self> {
        let m = &sys.manifold;
        let delta0 = sys.coefficient(x) * db + sys.drift(x) * dt;
        checked_length(m, &delta0)?;
        let predictor = m.retract(x, &delta0);
        let delta1 = sys.coefficient(&predictor) * db + sys.drift(&predictor) * dt;
        let mean = (delta0 + delta1) * 0.5;
        checked_length(m, &mean)?;
        Ok(HeunStep {
            x: *x,
            predictor,
            delta0,
            mean,
            next: m.retract(x, &mean),
        })
    }

    /// Derivative of the step map at `x` applied to tangent `d`.
    #[inline]
    pub fn jacobian_apply(
        &self,
        sys: &DiffusionSystem,
        db: &Vec3,
        dt: f64,
        d: &Vec3,
    ) -> Result<Vec3> {
        let m = &sys.manifold;
        let mut d0 = sys.coefficient_derivative(&self.x, d) * db;
        if !sys.drift.is_zero() {
            d0 += sys.drift_derivative(&self.x, d)? * dt;
        }
        let dp = m.retract_differential(&self.x, &self.delta0, d, &d0);
        let mut d1 = sys.coefficient_derivative(&self.predictor, &dp) * db;
        if !sys.drift.is_zero() {
            d1 += sys.drift_derivative(&self.predictor, &dp)? * dt;
        }
        let dw = (d0 + d1) * 0.5;
        Ok(m.retract_differential(&self.x, &self.mean, d, &dw))
    }
}

/// Point, moving frame, derivative flow and its inverse after some steps.
///
/// `jac` maps frame coordinates at the start point to frame coordinates at
/// `x`; padding beyond the intrinsic dimension is the identity.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FlowState {
    pub x: Vec3,
    pub frame: Mat3,
    pub jac: Mat3,
    pub jac_inv: Mat3,
}

impl FlowState {
    pub fn start(m: &EmbeddedManifold, x0: &Vec3) -> Result<Self> {
        m.check_point(x0)?;
        Ok(FlowState {
            x: *x0,
            frame: m.tangent_frame(x0),
            jac: Mat3::identity(),
            jac_inv: Mat3::identity(),
        })
    }

    #[inline]
    pub fn advance(&mut self, sys: &DiffusionSystem, db: &Vec3, dt: f64) -> Result<()> {
        let m = &sys.manifold;
        let n = m.intrinsic_dim();
        let step = HeunStep::new(sys, &self.x, db, dt)?;
        let frame = m.transport_frame(&self.frame, &step.next)?;
        let mut mapped = Mat3::zeros();
        for i in 0..n {
            let col = self.frame.column(i).into_owned();
            mapped.set_column(i, &step.jacobian_apply(sys, db, dt, &col)?);
        }
        let j = pad_identity(&(frame.transpose() * mapped), n);
        let j_inv = frame_inverse(&j, n)
            .ok_or_else(|| Error::Domain("derivative flow became singular".into()))?;
        self.x = step.next;
        self.frame = frame;
        self.jac = j * self.jac;
        self.jac_inv *= j_inv;
        Ok(())
    }

    #[inline]
    pub fn inverse_ambient(&self, frame0: &Mat3, n: usize) -> Mat3 {
        leading(frame0, n) * self.jac_inv * leading(&self.frame, n).transpose()
    }
}

#[inline]
fn leading(f: &Mat3, n: usize) -> Mat3 {
    crate::linalg::leading_columns(f, n)
}

/// A discretized realization of the flow from one initial point.
#[derive(Debug, Clone)]
pub struct FlowPath {
    pub points: Vec<Vec3>,
    /// Orthonormal frames of `T_{x_k} M`, transported along the path.
    pub frames: Vec<Mat3>,
    /// `D_k` in frame coordinates.
    pub jacobians: Vec<Mat3>,
    /// `D_k^{-1}` in frame coordinates.
    pub inverse_jacobians: Vec<Mat3>,
    pub intrinsic_dim: usize,
    pub noise: DrivingNoise,
}

/// Observable part of a path: points, frames and the martingale increments
/// `e(x_k) dB_k`. The filtered flow is computed from this alone.
#[derive(Debug, Clone)]
pub struct PathObservation {
    pub points: Vec<Vec3>,
    pub frames: Vec<Mat3>,
    pub increments: Vec<Vec3>,
    pub dt: f64,
    pub intrinsic_dim: usize,
}

impl FlowPath {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.noise.dt()
    }

    pub fn x0(&self) -> Vec3 {
        self.points[0]
    }

    /// `D_k` as an ambient map `T_{x_0} M -> T_{x_k} M`.
    pub fn derivative(&self, k: usize) -> Mat3 {
        let n = self.intrinsic_dim;
        leading(&self.frames[k], n) * self.jacobians[k] * leading(&self.frames[0], n).transpose()
    }

    /// `D_k^{-1}` as an ambient map `T_{x_k} M -> T_{x_0} M`.
    pub fn inverse_derivative(&self, k: usize) -> Mat3 {
        let n = self.intrinsic_dim;
        leading(&self.frames[0], n)
            * self.inverse_jacobians[k]
            * leading(&self.frames[k], n).transpose()
    }

    pub fn observe(&self, sys: &DiffusionSystem) -> PathObservation {
        PathObservation {
            points: self.points.clone(),
            frames: self.frames.clone(),
            increments: antidevelopment_martingale_increments(sys, self),
            dt: self.dt(),
            intrinsic_dim: self.intrinsic_dim,
        }
    }
}

/// Solve the equation from `x0` with the given noise, together with the
/// derivative flow of the discrete scheme.
pub fn integrate_flow(sys: &DiffusionSystem, x0: &Vec3, noise: &DrivingNoise) -> Result<FlowPath> {
    let m = &sys.manifold;
    let dt = noise.dt();
    let mut state = FlowState::start(m, x0)?;
    let cap = noise.steps + 1;
    let mut points = Vec::with_capacity(cap);
    let mut frames = Vec::with_capacity(cap);
    let mut jacobians = Vec::with_capacity(cap);
    let mut inverse_jacobians = Vec::with_capacity(cap);
    let mut push = |s: &FlowState| {
        points.push(s.x);
        frames.push(s.frame);
        jacobians.push(s.jac);
        inverse_jacobians.push(s.jac_inv);
    };
    push(&state);
    for db in &noise.increments {
        state.advance(sys, db, dt)?;
        push(&state);
    }
    Ok(FlowPath {
        points,
        frames,
        jacobians,
        inverse_jacobians,
        intrinsic_dim: m.intrinsic_dim(),
        noise: noise.clone(),
    })
}

/// Points `x_0, ..., x_L` only, skipping the derivative flow.
pub fn integrate_points(
    sys: &DiffusionSystem,
    x0: &Vec3,
    noise: &DrivingNoise,
) -> Result<Vec<Vec3>> {
    sys.manifold.check_point(x0)?;
    let dt = noise.dt();
    let mut out = Vec::with_capacity(noise.steps + 1);
    let mut x = *x0;
    out.push(x);
    for db in &noise.increments {
        x = HeunStep::new(sys, &x, db, dt)?.next;
        out.push(x);
    }
    Ok(out)
}

/// Endpoint of the first `steps` steps from `x0`.
pub(crate) fn flow_point(
    sys: &DiffusionSystem,
    x0: &Vec3,
    noise: &DrivingNoise,
    steps: usize,
) -> Result<Vec3> {
    let dt = noise.dt();
    let mut x = *x0;
    for db in &noise.increments[..steps] {
        x = HeunStep::new(sys, &x, db, dt)?.next;
    }
    Ok(x)
}

/// `e(x_k) dB_k`: the martingale increments of the stochastic antidevelopment.
pub fn antidevelopment_martingale_increments(sys: &DiffusionSystem, path: &FlowPath) -> Vec<Vec3> {
    path.points
        .iter()
        .zip(&path.noise.increments)
        .map(|(x, db)| sys.kernel_complement_projector(x) * db)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::sample_noise;
    use crate::geometry::VectorField;
    use crate::linalg::mask;
    use std::f64::consts::TAU;

    const SPHERE: EmbeddedManifold = EmbeddedManifold::UnitSphere;

    fn projector(x: &Vec3) -> Mat3 {
        Mat3::identity() - x * x.transpose()
    }

    fn sphere() -> DiffusionSystem {
        DiffusionSystem::new("sphere", SPHERE, 3, projector)
            .with_coefficient_derivative(|x, u| -(u * x.transpose() + x * u.transpose()))
            .with_adjoint(projector)
    }

    fn unit_column(dim: usize) -> DiffusionSystem {
        DiffusionSystem::new("flat", EmbeddedManifold::FlatTorus { dim }, 1, |_| {
            let mut m = Mat3::zeros();
            m[(0, 0)] = 1.0;
            m
        })
        .with_coefficient_derivative(|_, _| Mat3::zeros())
        .with_adjoint(|_| {
            let mut m = Mat3::zeros();
            m[(0, 0)] = 1.0;
            m
        })
    }

    #[test]
    fn circle_flow_is_additive() {
        let sys = unit_column(1);
        let noise = sample_noise(1.0, 256, 1, 42, 3).unwrap();
        let x0 = Vec3::new(0.5, 0.0, 0.0);
        let path = integrate_flow(&sys, &x0, &noise).unwrap();
        for (k, b) in noise.brownian_path().iter().enumerate() {
            let exact = (0.5 + b[0]).rem_euclid(TAU);
            assert!(
                sys.manifold
                    .distance(&path.points[k], &Vec3::new(exact, 0.0, 0.0))
                    <= 1e-12
            );
            assert_eq!(path.jacobians[k], Mat3::identity());
        }
        assert_eq!(
            antidevelopment_martingale_increments(&sys, &path),
            noise.increments
        );
    }

    #[test]
    fn degenerate_torus_keeps_second_coordinate() {
        let sys = unit_column(2);
        let noise = sample_noise(1.0, 512, 1, 42, 0).unwrap();
        let path = integrate_flow(&sys, &Vec3::new(1.0, 2.5, 0.0), &noise).unwrap();
        assert!(path.points.iter().all(|x| x[1] == 2.5));
        let inc = antidevelopment_martingale_increments(&sys, &path);
        for (i, d) in inc.iter().zip(&noise.increments) {
            assert!((i - d).norm() <= 1e-15);
        }
    }

    #[test]
    fn sphere_flow_stays_on_sphere() {
        let sys = sphere();
        let noise = sample_noise(1.0, 1024, 3, 42, 0).unwrap();
        let path = integrate_flow(&sys, &Vec3::z(), &noise).unwrap();
        for (k, x) in path.points.iter().enumerate() {
            assert!((x.norm() - 1.0).abs() <= 1e-12);
            let prod = mask(2) * path.jacobians[k] * path.inverse_jacobians[k];
            assert!((prod - mask(2)).norm() <= 1e-8);
        }
    }

    #[test]
    fn sphere_heat_semigroup() {
        // E <x_T, x_0> = exp(-T) for Brownian motion with generator Delta/2.
        let sys = sphere();
        let x0 = Vec3::z();
        let n = 4000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let noise = sample_noise(1.0, 128, 3, 42, i).unwrap();
                integrate_points(&sys, &x0, &noise).unwrap()[128].dot(&x0)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - (-1f64).exp()).abs() <= 3.0 * se + 2e-3,
            "{mean} {se}"
        );
    }

    #[test]
    fn martingale_increments_have_rank_two_variation() {
        let sys = sphere();
        let steps = 100_000;
        let noise = sample_noise(1.0, steps, 3, 42, 0).unwrap();
        let path = integrate_flow(&sys, &Vec3::z(), &noise).unwrap();
        let inc = antidevelopment_martingale_increments(&sys, &path);
        let qv: f64 = inc.iter().map(|v| v.norm_squared()).sum();
        assert!((qv - 2.0).abs() <= 0.04, "{qv}");
        for ((x, i), db) in path.points.iter().zip(&inc).zip(&noise.increments) {
            let k = Vec3::new(0.3, -0.2, 0.9);
            let lhs = sys.induced_inner(x, &(projector(x) * k), &(projector(x) * db));
            assert!((lhs - (projector(x) * k).dot(i)).abs() <= 1e-14);
        }
    }

    #[test]
    fn derivative_flow_matches_perturbed_initial_points() {
        let sys = sphere().with_drift(VectorField::sphere_gradient(Vec3::new(0.0, 0.0, 0.5)));
        let noise = sample_noise(1.0, 256, 3, 7, 1).unwrap();
        let x0 = Vec3::new(0.6, 0.0, 0.8);
        let path = integrate_flow(&sys, &x0, &noise).unwrap();
        let v = Vec3::new(0.0, 1.0, 0.0);
        let xt = path.points[256];
        let errors: Vec<f64> = [1e-3, 1e-4]
            .iter()
            .map(|eps| {
                let moved =
                    integrate_points(&sys, &SPHERE.retract(&x0, &(v * *eps)), &noise).unwrap()[256];
                let linear = SPHERE.retract(&xt, &(path.derivative(256) * v * *eps));
                SPHERE.distance(&moved, &linear)
            })
            .collect();
        // Second order in eps: the derivative is exact for the discrete map.
        assert!(errors[0] <= 1e-4, "{errors:?}");
        assert!(errors[1] <= errors[0] / 50.0, "{errors:?}");
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let sys = sphere();
        let noise = DrivingNoise::from_increments(1.0, 3, vec![Vec3::new(3.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            integrate_flow(&sys, &Vec3::z(), &noise),
            Err(Error::StepSize { .. })
        ));
    }
}
