//! Compact manifolds given extrinsically by an embedding, a tangent projector
//! and a retraction, together with the ambient-induced Levi-Civita tools.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{mask, polar_columns, Mat3, Vec3};

/// Tolerance of the membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Supported manifolds.
///
/// `FlatTorus { dim: 1 }` is the circle, written in its periodic coordinate.
/// Flat tori use the trivial embedding of the periodic chart, so their
/// projector is the identity on the active coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbeddedManifold {
    /// The unit sphere S^2 in R^3.
    UnitSphere,
    /// `[0, 2pi)^dim` with periodic identification, `dim <= 3`.
    FlatTorus { dim: usize },
}

impl EmbeddedManifold {
    pub fn ambient_dim(&self) -> usize {
        match self {
            EmbeddedManifold::UnitSphere => 3,
            EmbeddedManifold::FlatTorus { dim } => *dim,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            EmbeddedManifold::UnitSphere => 2,
            EmbeddedManifold::FlatTorus { dim } => *dim,
        }
    }

    pub fn name(&self) -> String {
        match self {
            EmbeddedManifold::UnitSphere => "S2".to_string(),
            EmbeddedManifold::FlatTorus { dim: 1 } => "S1".to_string(),
            EmbeddedManifold::FlatTorus { dim } => format!("T{dim}"),
        }
    }

    /// Orthogonal projector onto `T_x M`.
    #[inline]
    pub fn projector(&self, x: &Vec3) -> Mat3 {
        match self {
            EmbeddedManifold::UnitSphere => {
                let n = x / x.norm();
                Mat3::identity() - n * n.transpose()
            }
            EmbeddedManifold::FlatTorus { dim } => mask(*dim),
        }
    }

    /// Distance of `x` from the manifold in the embedding.
    pub fn membership_residual(&self, x: &Vec3) -> f64 {
        if !x.iter().all(|c| c.is_finite()) {
            return f64::INFINITY;
        }
        match self {
            EmbeddedManifold::UnitSphere => (x.norm() - 1.0).abs(),
            EmbeddedManifold::FlatTorus { dim } => {
                let mut worst = 0.0f64;
                for (i, c) in x.iter().enumerate() {
                    let r = if i < *dim {
                        if *c < 0.0 {
                            -c
                        } else if *c > TAU {
                            c - TAU
                        } else {
                            0.0
                        }
                    } else {
                        c.abs()
                    };
                    worst = worst.max(r);
                }
                worst
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.membership_residual(x) <= MEMBERSHIP_TOL
    }

    pub fn check_point(&self, x: &Vec3) -> Result<()> {
        let r = self.membership_residual(x);
        if r <= MEMBERSHIP_TOL {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "point {:?} is {r:.3e} off {}",
                x.as_slice(),
                self.name()
            )))
        }
    }

    /// Largest increment length for which the retraction is trusted.
    pub fn max_step(&self) -> f64 {
        match self {
            EmbeddedManifold::UnitSphere => 1.0,
            EmbeddedManifold::FlatTorus { .. } => std::f64::consts::PI,
        }
    }

    /// Retraction: closest-point projection of `x + v` for the sphere,
    /// coordinate-wise wrap into `[0, 2pi)` for tori. `v` may carry a small
    /// normal component; the sphere projection removes it.
    #[inline]
    pub fn retract(&self, x: &Vec3, v: &Vec3) -> Vec3 {
        match self {
            EmbeddedManifold::UnitSphere => {
                if *v == Vec3::zeros() {
                    return *x;
                }
                let y = x + v;
                y / y.norm()
            }
            EmbeddedManifold::FlatTorus { dim } => {
                let mut out = Vec3::zeros();
                for i in 0..*dim {
                    out[i] = wrap_angle(x[i] + v[i]);
                }
                out
            }
        }
    }

    /// Derivative of `(x, w) -> retract(x, w)` applied to `(dx, dw)`.
    #[inline]
    pub fn retract_differential(&self, x: &Vec3, w: &Vec3, dx: &Vec3, dw: &Vec3) -> Vec3 {
        match self {
            EmbeddedManifold::UnitSphere => {
                let y = x + w;
                let norm = y.norm();
                let r = y / norm;
                let d = dx + dw;
                (d - r * r.dot(&d)) / norm
            }
            EmbeddedManifold::FlatTorus { dim } => mask(*dim) * (dx + dw),
        }
    }

    /// Distance used for step checks and path comparisons: chordal on the
    /// sphere, periodic Euclidean on tori.
    pub fn distance(&self, x: &Vec3, y: &Vec3) -> f64 {
        match self {
            EmbeddedManifold::UnitSphere => (x - y).norm(),
            EmbeddedManifold::FlatTorus { dim } => {
                let mut s = 0.0;
                for i in 0..*dim {
                    let d = wrap_angle(x[i] - y[i]);
                    let d = d.min(TAU - d);
                    s += d * d;
                }
                s.sqrt()
            }
        }
    }

    /// Orthonormal basis of `T_x M` in the leading columns.
    pub fn tangent_frame(&self, x: &Vec3) -> Mat3 {
        match self {
            EmbeddedManifold::UnitSphere => {
                let n = x / x.norm();
                let axis = (0..3)
                    .min_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs()))
                    .unwrap_or(0);
                let mut e = Vec3::zeros();
                e[axis] = 1.0;
                let t1 = (e - n * n[axis]).normalize();
                let t2 = n.cross(&t1);
                let mut f = Mat3::zeros();
                f.set_column(0, &t1);
                f.set_column(1, &t2);
                f
            }
            EmbeddedManifold::FlatTorus { dim } => mask(*dim),
        }
    }

    /// Frame at `y` obtained by moving the frame `frame` at a nearby point:
    /// project with `P(y)`, then take the closest orthonormal frame.
    pub fn transport_frame(&self, frame: &Mat3, y: &Vec3) -> Result<Mat3> {
        let n = self.intrinsic_dim();
        match self {
            EmbeddedManifold::FlatTorus { .. } => Ok(*frame),
            EmbeddedManifold::UnitSphere => polar_columns(&(self.projector(y) * frame), n)
                .ok_or_else(|| Error::StepSize {
                    length: f64::INFINITY,
                    limit: self.max_step(),
                }),
        }
    }

    /// Frames along a discrete path, starting from [`Self::tangent_frame`].
    pub fn transported_frames(&self, points: &[Vec3]) -> Result<Vec<Mat3>> {
        let mut frames = Vec::with_capacity(points.len());
        let Some(first) = points.first() else {
            return Ok(frames);
        };
        let mut f = self.tangent_frame(first);
        frames.push(f);
        for y in &points[1..] {
            f = self.transport_frame(&f, y)?;
            frames.push(f);
        }
        Ok(frames)
    }

    /// A random point, uniform with respect to the Riemannian volume.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            EmbeddedManifold::UnitSphere => loop {
                let g = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let n = g.norm();
                if n > 1e-12 {
                    return g / n;
                }
            },
            EmbeddedManifold::FlatTorus { dim } => {
                let mut x = Vec3::zeros();
                for i in 0..*dim {
                    x[i] = rng.random::<f64>() * TAU;
                }
                x
            }
        }
    }

    /// A random tangent vector at `x` with standard Gaussian coordinates.
    pub fn sample_tangent<R: Rng + ?Sized>(&self, x: &Vec3, rng: &mut R) -> Vec3 {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        self.projector(x) * g
    }

    /// Deterministic low-discrepancy points (Halton sequence in bases 2, 3, 5).
    pub fn quasi_random_points(&self, count: usize) -> Vec<Vec3> {
        (1..=count)
            .map(|i| {
                let u = radical_inverse(i, 2);
                let v = radical_inverse(i, 3);
                let w = radical_inverse(i, 5);
                match self {
                    EmbeddedManifold::UnitSphere => {
                        let z = 2.0 * u - 1.0;
                        let r = (1.0 - z * z).max(0.0).sqrt();
                        let phi = TAU * v;
                        Vec3::new(r * phi.cos(), r * phi.sin(), z)
                    }
                    EmbeddedManifold::FlatTorus { dim } => {
                        let c = [u, v, w];
                        let mut x = Vec3::zeros();
                        for k in 0..*dim {
                            x[k] = TAU * c[k];
                        }
                        x
                    }
                }
            })
            .collect()
    }
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Central finite differences along retraction curves.
///
/// First derivatives use `h = eps^(1/3) * scale`; nested second differences
/// (curvature) use `h = eps^(1/4) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Differentiation {
    pub scale: f64,
}

impl Default for Differentiation {
    fn default() -> Self {
        Differentiation { scale: 1.0 }
    }
}

impl Differentiation {
    pub fn first_step(&self) -> f64 {
        f64::EPSILON.cbrt() * self.scale
    }

    pub fn second_step(&self) -> f64 {
        f64::EPSILON.powf(0.25) * self.scale
    }

    /// Derivative of `f` at `x` along the tangent direction `v`, taken along
    /// the curve `s -> retract(x, s v)`.
    pub fn directional<T, F>(&self, m: &EmbeddedManifold, f: F, x: &Vec3, v: &Vec3) -> T
    where
        F: Fn(&Vec3) -> T,
        T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let norm = v.norm();
        if norm == 0.0 {
            return f(x) * 0.0;
        }
        let u = v / norm;
        let h = self.first_step();
        let plus = f(&m.retract(x, &(u * h)));
        let minus = f(&m.retract(x, &(u * -h)));
        (plus - minus) * (norm / (2.0 * h))
    }
}

type FieldFn = dyn Fn(&Vec3) -> Vec3 + Send + Sync;
type FieldDerivativeFn = dyn Fn(&Vec3, &Vec3) -> Vec3 + Send + Sync;

/// Differentiability of a registered field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    NonDifferentiable,
}

/// A tangent vector field given by a closure on the manifold, with an
/// optional analytic directional derivative `(x, v) -> DZ(x) v`.
#[derive(Clone)]
pub struct VectorField {
    eval: Arc<FieldFn>,
    derivative: Option<Arc<FieldDerivativeFn>>,
    pub smoothness: Smoothness,
    zero: bool,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("analytic_derivative", &self.derivative.is_some())
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl VectorField {
    pub fn new(eval: impl Fn(&Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        VectorField {
            eval: Arc::new(eval),
            derivative: None,
            smoothness: Smoothness::Smooth,
            zero: false,
        }
    }

    pub fn with_derivative(
        mut self,
        derivative: impl Fn(&Vec3, &Vec3) -> Vec3 + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn non_differentiable(eval: impl Fn(&Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        VectorField {
            smoothness: Smoothness::NonDifferentiable,
            ..VectorField::new(eval)
        }
    }

    pub fn zero() -> Self {
        VectorField {
            zero: true,
            ..VectorField::new(|_| Vec3::zeros()).with_derivative(|_, _| Vec3::zeros())
        }
    }

    /// True only for [`Self::zero`]; lets integrators skip drift work.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Constant field in the flat chart of a torus.
    pub fn constant(c: Vec3) -> Self {
        VectorField::new(move |_| c).with_derivative(|_, _| Vec3::zeros())
    }

    /// `x -> P(x) a` on the unit sphere: the gradient of `<a, .>`.
    pub fn sphere_gradient(a: Vec3) -> Self {
        VectorField::new(move |x| a - x * x.dot(&a))
            .with_derivative(move |x, v| -(x * v.dot(&a)) - v * x.dot(&a))
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> Vec3 {
        (self.eval)(x)
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// Ambient directional derivative `DZ(x) v` (not projected).
    pub fn directional_derivative(
        &self,
        m: &EmbeddedManifold,
        x: &Vec3,
        v: &Vec3,
        diff: &Differentiation,
    ) -> Result<Vec3> {
        if self.smoothness == Smoothness::NonDifferentiable {
            return Err(Error::Unsupported(
                "field is flagged as non-differentiable".into(),
            ));
        }
        Ok(match &self.derivative {
            Some(d) => d(x, v),
            None => diff.directional(m, |y| self.eval(y), x, v),
        })
    }

    /// Same as [`Self::directional_derivative`] but always by finite differences.
    pub fn numerical_derivative(
        &self,
        m: &EmbeddedManifold,
        x: &Vec3,
        v: &Vec3,
        diff: &Differentiation,
    ) -> Vec3 {
        diff.directional(m, |y| self.eval(y), x, v)
    }
}

/// `P(x) v`.
pub fn tangent_project(m: &EmbeddedManifold, x: &Vec3, v: &Vec3) -> Result<Vec3> {
    m.check_point(x)?;
    Ok(m.projector(x) * v)
}

/// Induced Levi-Civita covariant derivative `P(x) (DZ(x) v)`.
pub fn levi_civita_derivative(
    m: &EmbeddedManifold,
    z: &VectorField,
    x: &Vec3,
    v: &Vec3,
    diff: &Differentiation,
) -> Result<Vec3> {
    m.check_point(x)?;
    let dz = z.directional_derivative(m, x, v, diff)?;
    Ok(m.projector(x) * dz)
}

/// Discrete parallel transport of `v0` along `path`: project onto the next
/// tangent space, then rescale to the original norm.
pub fn levi_civita_transport(m: &EmbeddedManifold, path: &[Vec3], v0: &Vec3) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(path.len());
    let Some(first) = path.first() else {
        return Ok(out);
    };
    m.check_point(first)?;
    let norm = v0.norm();
    let mut v = m.projector(first) * v0;
    out.push(v);
    for pair in path.windows(2) {
        let step = m.distance(&pair[0], &pair[1]);
        if step > m.max_step() {
            return Err(Error::StepSize {
                length: step,
                limit: m.max_step(),
            });
        }
        let projected = m.projector(&pair[1]) * v;
        let pn = projected.norm();
        v = if pn > 0.0 {
            projected * (norm / pn)
        } else if norm == 0.0 {
            projected
        } else {
            return Err(Error::StepSize {
                length: step,
                limit: m.max_step(),
            });
        };
        out.push(v);
    }
    Ok(out)
}

/// `[Z1, Z2](x) = DZ2(x) Z1(x) - DZ1(x) Z2(x)`.
pub fn lie_bracket(
    m: &EmbeddedManifold,
    z1: &VectorField,
    z2: &VectorField,
    x: &Vec3,
    diff: &Differentiation,
) -> Result<Vec3> {
    m.check_point(x)?;
    let a = z2.directional_derivative(m, x, &z1.eval(x), diff)?;
    let b = z1.directional_derivative(m, x, &z2.eval(x), diff)?;
    Ok(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SPHERE: EmbeddedManifold = EmbeddedManifold::UnitSphere;
    const TORUS: EmbeddedManifold = EmbeddedManifold::FlatTorus { dim: 2 };

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::from(v).normalize()
    }

    #[test]
    fn projection_examples() {
        let x = Vec3::new(0.0, 0.0, 1.0);
        let p = tangent_project(&SPHERE, &x, &Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(p, Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(
            tangent_project(&SPHERE, &x, &Vec3::zeros()).unwrap(),
            Vec3::zeros()
        );
        let t = Vec3::new(0.4, 5.0, 0.0);
        let v = Vec3::new(-1.5, 2.5, 0.0);
        assert_eq!(tangent_project(&TORUS, &t, &v).unwrap(), v);
    }

    #[test]
    fn projection_rejects_off_manifold_points() {
        let err = tangent_project(&SPHERE, &Vec3::new(0.0, 0.0, 1.1), &Vec3::x()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let err = tangent_project(&TORUS, &Vec3::new(7.0, 0.0, 0.0), &Vec3::x()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn retraction_fixes_zero_and_stays_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [SPHERE, TORUS, EmbeddedManifold::FlatTorus { dim: 1 }] {
            for _ in 0..50 {
                let x = m.sample_point(&mut rng);
                assert_eq!(m.retract(&x, &Vec3::zeros()), x);
                let v = m.sample_tangent(&x, &mut rng) * 0.1;
                assert!(m.contains(&m.retract(&x, &v)));
            }
        }
    }

    #[test]
    fn flat_torus_derivative_of_constant_field_vanishes() {
        let z = VectorField::new(|_| Vec3::new(1.0, -2.0, 0.0));
        let d = levi_civita_derivative(
            &TORUS,
            &z,
            &Vec3::new(1.0, 2.0, 0.0),
            &Vec3::new(0.3, 0.1, 0.0),
            &Differentiation::default(),
        )
        .unwrap();
        assert!(d.norm() < 1e-12);
    }

    /// Ambient straight-line central differences of `P(y) a` with the extension
    /// `P(y) = I - y y^T / |y|^2`, Richardson-extrapolated over h = 1e-4, 1e-5.
    fn richardson_derivative(a: &Vec3, x: &Vec3, v: &Vec3) -> Vec3 {
        let field = |y: &Vec3| {
            let n2 = y.norm_squared();
            a - y * (y.dot(a) / n2)
        };
        let cd = |h: f64| (field(&(x + v * h)) - field(&(x - v * h))) / (2.0 * h);
        let d1 = cd(1e-4);
        let d2 = cd(1e-5);
        (d2 * 100.0 - d1) / 99.0
    }

    #[test]
    fn sphere_gradient_field_derivative_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let diff = Differentiation::default();
        for _ in 0..100 {
            let x = SPHERE.sample_point(&mut rng);
            let v = SPHERE.sample_tangent(&x, &mut rng);
            let a = Vec3::new(0.3, -1.2, 0.7);
            let oracle = SPHERE.projector(&x) * richardson_derivative(&a, &x, &v);
            let closed = -v * a.dot(&x);
            assert!((oracle - closed).norm() < 1e-8);
            // numerical backend (no analytic override)
            let z = VectorField::new(move |y| a - y * y.dot(&a));
            let got = levi_civita_derivative(&SPHERE, &z, &x, &v, &diff).unwrap();
            assert!((got - oracle).norm() < 1e-8, "{got} vs {oracle}");
            let analytic = VectorField::sphere_gradient(a);
            let got = levi_civita_derivative(&SPHERE, &analytic, &x, &v, &diff).unwrap();
            assert!((got - closed).norm() < 1e-12);
            let zero = levi_civita_derivative(&SPHERE, &z, &x, &Vec3::zeros(), &diff).unwrap();
            assert_eq!(zero, Vec3::zeros());
        }
    }

    #[test]
    fn non_differentiable_field_is_rejected() {
        let z = VectorField::non_differentiable(|x| x.abs());
        let err = levi_civita_derivative(
            &TORUS,
            &z,
            &Vec3::new(1.0, 1.0, 0.0),
            &Vec3::x(),
            &Differentiation::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn transport_along_constant_path_and_flat_torus() {
        let x = unit([0.2, 0.3, 0.9]);
        let v = SPHERE.projector(&x) * Vec3::new(1.0, 0.0, 0.0);
        let out = levi_civita_transport(&SPHERE, &[x, x, x], &v).unwrap();
        assert!(out.iter().all(|w| (w - v).norm() < 1e-15));

        let path: Vec<Vec3> = (0..100)
            .map(|k| Vec3::new(0.05 * k as f64, (0.03 * k as f64).sin() + 1.0, 0.0))
            .collect();
        let v0 = Vec3::new(0.7, -0.2, 0.0);
        let out = levi_civita_transport(&TORUS, &path, &v0).unwrap();
        assert!(out.iter().all(|w| *w == v0));
    }

    #[test]
    fn transport_rejects_large_steps() {
        let path = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let err = levi_civita_transport(&SPHERE, &path, &Vec3::y()).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    fn great_arc(from: &Vec3, to: &Vec3, dt: f64) -> Vec<Vec3> {
        let angle = from.dot(to).clamp(-1.0, 1.0).acos();
        let steps = (angle / dt).round() as usize;
        let dir = (to - from * from.dot(to)).normalize();
        (0..=steps)
            .map(|k| {
                let t = angle * k as f64 / steps as f64;
                from * t.cos() + dir * t.sin()
            })
            .collect()
    }

    /// Octant triangle: three right angles, spherical excess pi/2
    /// (Gauss-Bonnet: excess = sum of angles - pi).
    #[test]
    fn holonomy_matches_spherical_excess() {
        let (a, b, c) = (Vec3::x(), Vec3::y(), Vec3::z());
        let angles = [std::f64::consts::FRAC_PI_2; 3];
        let excess = angles.iter().sum::<f64>() - std::f64::consts::PI;
        let mut loop_path = great_arc(&a, &b, 1e-3);
        loop_path.extend(great_arc(&b, &c, 1e-3).into_iter().skip(1));
        loop_path.extend(great_arc(&c, &a, 1e-3).into_iter().skip(1));
        for v0 in [
            Vec3::y(),
            Vec3::new(0.0, 1.0, 1.0).normalize(),
            Vec3::new(0.0, 0.6, -0.8),
        ] {
            let out = levi_civita_transport(&SPHERE, &loop_path, &v0).unwrap();
            let v1 = out.last().unwrap();
            let angle = v0.dot(v1).clamp(-1.0, 1.0).acos();
            assert!(
                (angle - excess).abs() < 1e-3,
                "holonomy {angle} vs {excess}"
            );
            assert!((v1.norm() - v0.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn bracket_examples() {
        let diff = Differentiation::default();
        let a = Vec3::new(0.3, -1.2, 0.7);
        let b = Vec3::new(1.0, 0.4, -0.5);
        let z1 = VectorField::new(move |y| a - y * y.dot(&a));
        let z2 = VectorField::new(move |y| b - y * y.dot(&b));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = SPHERE.sample_point(&mut rng);
            let self_bracket = lie_bracket(&SPHERE, &z1, &z1, &x, &diff).unwrap();
            assert!(self_bracket.norm() < 1e-14);
            let got = lie_bracket(&SPHERE, &z1, &z2, &x, &diff).unwrap();
            // finite-difference bracket oracle on the ambient extension
            let da = |y: &Vec3, v: &Vec3, c: &Vec3| richardson_derivative(c, y, v);
            let oracle = da(&x, &z1.eval(&x), &b) - da(&x, &z2.eval(&x), &a);
            let p = SPHERE.projector(&x);
            assert!((got - oracle).norm() < 1e-8);
            let closed = p * a * x.dot(&b) * -1.0 + p * b * x.dot(&a);
            assert!((got - closed).norm() < 1e-8, "{got} vs {closed}");
            assert!(((Mat3::identity() - p) * got).norm() < 1e-8);
        }
        let e1 = VectorField::constant(Vec3::x());
        let e2 = VectorField::constant(Vec3::y());
        let x = Vec3::new(1.0, 2.0, 0.0);
        assert_eq!(
            lie_bracket(&TORUS, &e1, &e2, &x, &diff).unwrap(),
            Vec3::zeros()
        );
    }

    #[test]
    fn levi_civita_is_metric_and_torsion_free() {
        let diff = Differentiation::default();
        let a = Vec3::new(0.3, -1.2, 0.7);
        let b = Vec3::new(1.0, 0.4, -0.5);
        let z1 = VectorField::new(move |y| a - y * y.dot(&a) + y.cross(&b));
        let z2 = VectorField::new(move |y| b * y[0] - y * (y.dot(&b) * y[0]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = SPHERE.sample_point(&mut rng);
            let v = SPHERE.sample_tangent(&x, &mut rng);
            let lhs = diff.directional(&SPHERE, |y| z1.eval(y).dot(&z2.eval(y)), &x, &v);
            let n1 = levi_civita_derivative(&SPHERE, &z1, &x, &v, &diff).unwrap();
            let n2 = levi_civita_derivative(&SPHERE, &z2, &x, &v, &diff).unwrap();
            let rhs = n1.dot(&z2.eval(&x)) + z1.eval(&x).dot(&n2);
            assert!((lhs - rhs).abs() < 1e-6);

            let t12 = levi_civita_derivative(&SPHERE, &z2, &x, &z1.eval(&x), &diff).unwrap();
            let t21 = levi_civita_derivative(&SPHERE, &z1, &x, &z2.eval(&x), &diff).unwrap();
            let br = lie_bracket(&SPHERE, &z1, &z2, &x, &diff).unwrap();
            assert!((t12 - t21 - br).norm() < 1e-6);
        }
    }

    #[test]
    fn transport_preserves_inner_products_to_first_order() {
        // pseudo-random wandering path with step 1e-2 over unit length
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dt: f64 = 1e-2;
        let mut x = Vec3::z();
        let mut path = vec![x];
        for _ in 0..100 {
            let v = SPHERE.sample_tangent(&x, &mut rng).normalize() * dt;
            x = SPHERE.retract(&x, &v);
            path.push(x);
        }
        let f = SPHERE.tangent_frame(&path[0]);
        let u = f.column(0).into_owned();
        let w = (f.column(0) * 0.6 + f.column(1) * 0.8).into_owned();
        let tu = levi_civita_transport(&SPHERE, &path, &u).unwrap();
        let tw = levi_civita_transport(&SPHERE, &path, &w).unwrap();
        let err = (tu.last().unwrap().dot(tw.last().unwrap()) - u.dot(&w)).abs();
        assert!(err < 0.5 * dt, "inner product drift {err}");
    }

    proptest! {
        #[test]
        fn projector_is_symmetric_idempotent_with_rank_n(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in [SPHERE, TORUS, EmbeddedManifold::FlatTorus { dim: 1 }] {
                let x = m.sample_point(&mut rng);
                let p = m.projector(&x);
                prop_assert!((p * p - p).norm() <= 1e-10);
                prop_assert!((p - p.transpose()).norm() <= 1e-10);
                let rank = p.singular_values().iter().filter(|s| **s > 0.5).count();
                prop_assert_eq!(rank, m.intrinsic_dim());
                let v = m.sample_tangent(&x, &mut rng);
                let once = tangent_project(&m, &x, &v).unwrap();
                prop_assert!((tangent_project(&m, &x, &once).unwrap() - once).norm() < 1e-15);
            }
        }
    }
}

/// Reduce an angle to `[0, 2pi)`, skipping the division when already in range.
#[inline]
fn wrap_angle(a: f64) -> f64 {
    if (0.0..TAU).contains(&a) {
        a
    } else {
        a.rem_euclid(TAU)
    }
}
