use super::path::{flow_point, FlowState};
use super::{integrate_flow, integrate_points, CameronMartinPath, DrivingNoise, FlowPath};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::ljw::DiffusionSystem;

/// How `xi_t(H)` is evaluated inside the perturbation equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    /// Re-integrate the flow from `H` with the same noise at every stage
    /// (exact composition semantics, quadratic cost in the step count).
    Reference,
    /// Freeze the base path and use its derivative flow (first order in `tau`).
    Linearized,
}

/// Solution of `dH/dt = tau (T xi_t)^{-1}(H) X(xi_t(H)) k'_t`, `H_0 = x0`,
/// together with `xi_{t_j}(H_j)`.
struct Perturbation {
    h: Vec<Vec3>,
    composed: Vec<Vec3>,
}

fn check_increment(sys: &DiffusionSystem, v: &Vec3) -> Result<()> {
    let limit = sys.manifold.max_step();
    let length = v.norm();
    if length > limit || !length.is_finite() {
        return Err(Error::StepSize { length, limit });
    }
    Ok(())
}

fn reference(
    sys: &DiffusionSystem,
    x0: &Vec3,
    noise: &DrivingNoise,
    k: &CameronMartinPath,
    tau: f64,
) -> Result<Perturbation> {
    let m = &sys.manifold;
    let n = m.intrinsic_dim();
    let dt = noise.dt();
    // (rhs at (t_j, h), xi_{t_j}(h))
    let eval = |j: usize, h: &Vec3, kd: &Vec3| -> Result<(Vec3, Vec3)> {
        let frame0 = m.tangent_frame(h);
        let mut state = FlowState::start(m, h)?;
        for db in &noise.increments[..j] {
            state.advance(sys, db, dt)?;
        }
        let inv = state.inverse_ambient(&frame0, n);
        Ok((inv * (sys.coefficient(&state.x) * kd) * tau, state.x))
    };
    let mut h = Vec::with_capacity(noise.steps + 1);
    let mut composed = Vec::with_capacity(noise.steps + 1);
    let mut cur = *x0;
    m.check_point(x0)?;
    for j in 0..noise.steps {
        let kd = k.velocity(j);
        let (f0, xi) = eval(j, &cur, &kd)?;
        h.push(cur);
        composed.push(xi);
        check_increment(sys, &(f0 * dt))?;
        let pred = m.retract(&cur, &(f0 * dt));
        let (f1, _) = eval(j + 1, &pred, &kd)?;
        let mean = (f0 + f1) * (0.5 * dt);
        check_increment(sys, &mean)?;
        cur = m.retract(&cur, &mean);
    }
    h.push(cur);
    composed.push(flow_point(sys, &cur, noise, noise.steps)?);
    Ok(Perturbation { h, composed })
}

fn linearized(
    sys: &DiffusionSystem,
    path: &FlowPath,
    k: &CameronMartinPath,
    tau: f64,
) -> Result<Perturbation> {
    let m = &sys.manifold;
    let dt = path.dt();
    let x0 = path.x0();
    let integrand =
        |j: usize, kd: &Vec3| path.inverse_derivative(j) * (sys.coefficient(&path.points[j]) * kd);
    let mut u = Vec3::zeros();
    let mut h = Vec::with_capacity(path.points.len());
    let mut composed = Vec::with_capacity(path.points.len());
    for j in 0..=path.steps() {
        h.push(m.retract(&x0, &u));
        composed.push(m.retract(&path.points[j], &(path.derivative(j) * u)));
        if j < path.steps() {
            let kd = k.velocity(j);
            let du = (integrand(j, &kd) + integrand(j + 1, &kd)) * (0.5 * dt * tau);
            check_increment(sys, &du)?;
            u += du;
        }
    }
    Ok(Perturbation { h, composed })
}

/// `H^tau_{t_j}(x0)` for `j = 0..=L` along the flow of `path`.
pub fn perturbation_ode(
    sys: &DiffusionSystem,
    path: &FlowPath,
    k: &CameronMartinPath,
    tau: f64,
    mode: PerturbationMode,
) -> Result<Vec<Vec3>> {
    k.check_grid(&path.noise)?;
    let p = match mode {
        PerturbationMode::Reference => reference(sys, &path.x0(), &path.noise, k, tau)?,
        PerturbationMode::Linearized => linearized(sys, path, k, tau)?,
    };
    Ok(p.h)
}

/// The flow driven by `B + tau k`.
pub fn shifted_flow(
    sys: &DiffusionSystem,
    x0: &Vec3,
    noise: &DrivingNoise,
    k: &CameronMartinPath,
    tau: f64,
) -> Result<FlowPath> {
    integrate_flow(sys, x0, &noise.shifted(k, tau)?)
}

/// `sup_j dist(xi_{t_j}(H^tau_{t_j}(x0)), xi^tau_{t_j}(x0))`.
pub fn compose_check(
    sys: &DiffusionSystem,
    x0: &Vec3,
    noise: &DrivingNoise,
    k: &CameronMartinPath,
    tau: f64,
    mode: PerturbationMode,
) -> Result<f64> {
    k.check_grid(noise)?;
    let shifted = integrate_points(sys, x0, &noise.shifted(k, tau)?)?;
    let p = match mode {
        PerturbationMode::Reference => reference(sys, x0, noise, k, tau)?,
        PerturbationMode::Linearized => linearized(sys, &integrate_flow(sys, x0, noise)?, k, tau)?,
    };
    Ok(p.composed
        .iter()
        .zip(&shifted)
        .map(|(a, b)| sys.manifold.distance(a, b))
        .fold(0.0, f64::max))
}

/// Cameron-Martin density `exp(tau sum <k'_j, dB_j> - tau^2 |k|_H^2 / 2)`.
pub fn girsanov_weight(noise: &DrivingNoise, k: &CameronMartinPath, tau: f64) -> Result<f64> {
    k.check_grid(noise)?;
    if tau == 0.0 {
        return Ok(1.0);
    }
    Ok((tau * k.pairing(&noise.increments) - 0.5 * tau * tau * k.norm_sq()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::sample_noise;
    use crate::geometry::EmbeddedManifold;
    use crate::linalg::Mat3;
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

    fn circle() -> DiffusionSystem {
        DiffusionSystem::new("circle", EmbeddedManifold::FlatTorus { dim: 1 }, 1, |_| {
            let mut m = Mat3::zeros();
            m[(0, 0)] = 1.0;
            m
        })
        .with_coefficient_derivative(|_, _| Mat3::zeros())
    }

    #[test]
    fn circle_perturbation_is_translation() {
        let sys = circle();
        let noise = sample_noise(1.0, 64, 1, 42, 0).unwrap();
        let k = CameronMartinPath::linear(Vec3::x(), 1.0, 64).unwrap();
        let path = integrate_flow(&sys, &Vec3::zeros(), &noise).unwrap();
        for mode in [PerturbationMode::Reference, PerturbationMode::Linearized] {
            let h = perturbation_ode(&sys, &path, &k, 0.3, mode).unwrap();
            for (j, hj) in h.iter().enumerate() {
                let exact = Vec3::new((0.3 * noise.time(j)).rem_euclid(TAU), 0.0, 0.0);
                assert!(sys.manifold.distance(hj, &exact) <= 1e-12);
            }
            let dev = compose_check(&sys, &Vec3::zeros(), &noise, &k, 0.3, mode).unwrap();
            assert!(dev <= 1e-12, "{dev}");
        }
    }

    #[test]
    fn trivial_perturbations() {
        let sys = sphere();
        let noise = sample_noise(1.0, 16, 3, 1, 0).unwrap();
        let x0 = Vec3::z();
        let path = integrate_flow(&sys, &x0, &noise).unwrap();
        let k = CameronMartinPath::linear(Vec3::x(), 1.0, 16).unwrap();
        let zero = CameronMartinPath::zero(1.0, 16).unwrap();
        for mode in [PerturbationMode::Reference, PerturbationMode::Linearized] {
            assert!(perturbation_ode(&sys, &path, &k, 0.0, mode)
                .unwrap()
                .iter()
                .all(|h| *h == x0));
            assert!(perturbation_ode(&sys, &path, &zero, 1.0, mode)
                .unwrap()
                .iter()
                .all(|h| *h == x0));
            assert_eq!(
                compose_check(&sys, &x0, &noise, &k, 0.0, mode).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn shifted_flow_examples() {
        let sys = circle();
        let noise = sample_noise(1.0, 128, 1, 42, 2).unwrap();
        let k = CameronMartinPath::linear(Vec3::x(), 1.0, 128).unwrap();
        let x0 = Vec3::new(1.0, 0.0, 0.0);
        let base = integrate_flow(&sys, &x0, &noise).unwrap();
        let same = shifted_flow(&sys, &x0, &noise, &k, 0.0).unwrap();
        assert_eq!(base.points, same.points);
        let shifted = shifted_flow(&sys, &x0, &noise, &k, 1.0).unwrap();
        for (j, b) in noise.brownian_path().iter().enumerate() {
            let exact = Vec3::new((1.0 + b[0] + noise.time(j)).rem_euclid(TAU), 0.0, 0.0);
            assert!(sys.manifold.distance(&shifted.points[j], &exact) <= 1e-12);
        }
        let s = sphere();
        let kn = CameronMartinPath::linear(Vec3::new(1.0, -1.0, 0.5), 1.0, 256).unwrap();
        let ns = sample_noise(1.0, 256, 3, 42, 9).unwrap();
        let p = shifted_flow(&s, &Vec3::z(), &ns, &kn, 0.7).unwrap();
        assert!(p.points.iter().all(|x| (x.norm() - 1.0).abs() <= 1e-12));
        // shifting back recovers the base path
        let back = ns.shifted(&kn, 0.7).unwrap().shifted(&kn, -0.7).unwrap();
        let a = integrate_points(&s, &Vec3::z(), &back).unwrap();
        let b = integrate_points(&s, &Vec3::z(), &ns).unwrap();
        let dev = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-10, "{dev}");
    }

    #[test]
    fn girsanov_weight_examples() {
        let noise = sample_noise(1.0, 32, 2, 42, 0).unwrap();
        let k = CameronMartinPath::linear(Vec3::new(1.0, 2.0, 0.0), 1.0, 32).unwrap();
        assert_eq!(girsanov_weight(&noise, &k, 0.0).unwrap(), 1.0);
        let zero = CameronMartinPath::zero(1.0, 32).unwrap();
        assert_eq!(girsanov_weight(&noise, &zero, 0.8).unwrap(), 1.0);
        let b1 = noise.brownian_path()[32];
        let w = girsanov_weight(&noise, &k, 0.5).unwrap();
        let exact = (0.5 * (b1[0] + 2.0 * b1[1]) - 0.125 * 5.0).exp();
        assert!((w - exact).abs() <= 1e-12 * exact);
        let short = CameronMartinPath::linear(Vec3::x(), 1.0, 16).unwrap();
        assert!(matches!(
            girsanov_weight(&noise, &short, 1.0),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn sphere_composition_deviation_shrinks_with_dt() {
        let sys = sphere();
        let x0 = Vec3::z();
        let mut coarse = 0.0;
        let mut fine = 0.0;
        for i in 0..4 {
            let noise = sample_noise(1.0, 64, 3, 42, i).unwrap();
            let c = noise.coarsen().unwrap();
            let k = CameronMartinPath::linear(Vec3::x(), 1.0, 64).unwrap();
            let kc = k.coarsen().unwrap();
            fine += compose_check(&sys, &x0, &noise, &k, 0.1, PerturbationMode::Reference).unwrap();
            coarse += compose_check(&sys, &x0, &c, &kc, 0.1, PerturbationMode::Reference).unwrap();
        }
        assert!(coarse / fine >= 1.3, "{coarse} {fine}");
    }
}
