//! Fixed-size linear algebra used on the hot paths.
//!
//! Every manifold shipped here embeds in at most three ambient dimensions and
//! every diffusion uses at most three noise dimensions, so points, tangent
//! vectors and noise vectors are all `Vector3<f64>`. Lower-dimensional
//! embeddings use the leading coordinates and keep the rest at zero.
//!
//! Linear maps written in a moving orthonormal frame of an `n`-dimensional
//! tangent space are `Matrix3<f64>` whose leading `n x n` block carries the
//! map and whose remaining diagonal block is the identity, so they can be
//! multiplied and inverted without tracking `n` at every call site.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3, SVD};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const MAX_DIM: usize = 3;

/// Diagonal matrix with ones in the first `n` slots.
pub fn mask(n: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    for i in 0..n.min(MAX_DIM) {
        m[(i, i)] = 1.0;
    }
    m
}

/// Keep the leading `n x n` block of `a` and put the identity on the rest.
pub fn pad_identity(a: &Mat3, n: usize) -> Mat3 {
    let mut out = Mat3::identity();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(i, j)];
        }
    }
    out
}

/// Keep only the leading `n` columns.
pub fn leading_columns(a: &Mat3, n: usize) -> Mat3 {
    let mut out = Mat3::zeros();
    for j in 0..n {
        out.set_column(j, &a.column(j));
    }
    out
}

/// Inverse of an identity-padded frame matrix.
pub fn frame_inverse(a: &Mat3, n: usize) -> Option<Mat3> {
    let padded = pad_identity(a, n);
    match n {
        0 => Some(Mat3::identity()),
        1 => {
            let d = padded[(0, 0)];
            if d == 0.0 || !d.is_finite() {
                return None;
            }
            let mut inv = Mat3::identity();
            inv[(0, 0)] = 1.0 / d;
            Some(inv)
        }
        2 => {
            let m = Matrix2::new(
                padded[(0, 0)],
                padded[(0, 1)],
                padded[(1, 0)],
                padded[(1, 1)],
            );
            let inv = m.try_inverse()?;
            let mut out = Mat3::identity();
            out.fixed_view_mut::<2, 2>(0, 0).copy_from(&inv);
            Some(out)
        }
        _ => padded.try_inverse(),
    }
}

/// Singular value decomposition with singular values sorted in decreasing order.
#[derive(Debug, Clone, Copy)]
pub struct SortedSvd {
    pub u: Mat3,
    pub singular_values: Vec3,
    pub v: Mat3,
}

pub fn sorted_svd(a: &Mat3) -> SortedSvd {
    let svd = SVD::new(*a, true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut out = SortedSvd {
        u: Mat3::zeros(),
        singular_values: Vec3::zeros(),
        v: Mat3::zeros(),
    };
    for (slot, &src) in order.iter().enumerate() {
        out.u.set_column(slot, &u.column(src));
        out.v.set_column(slot, &v.column(src));
        out.singular_values[slot] = s[src];
    }
    out
}

/// Inverse square root of a symmetric positive definite 2x2 matrix.
fn inv_sqrt_spd2(s: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = s.determinant();
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let sd = det.sqrt();
    let t = (s.trace() + 2.0 * sd).sqrt();
    let root = (s + Matrix2::identity() * sd) / t;
    root.try_inverse()
}

/// Orthonormal polar factor `A (A^T A)^{-1/2}` of the leading `n` columns of `a`.
///
/// This is the orthonormal frame closest to `a` in Frobenius norm. Applied to
/// `P(y) F` for an orthonormal frame `F` at a nearby point it realises a
/// metric-preserving transport of the frame to `y`; along a great-circle step
/// on the sphere it is exact parallel transport.
pub fn polar_columns(a: &Mat3, n: usize) -> Option<Mat3> {
    match n {
        0 => Some(Mat3::zeros()),
        1 => {
            let c = a.column(0);
            let norm = c.norm();
            if norm == 0.0 || !norm.is_finite() {
                return None;
            }
            let mut out = Mat3::zeros();
            out.set_column(0, &(c / norm));
            Some(out)
        }
        2 => {
            let c0 = a.column(0);
            let c1 = a.column(1);
            let g = Matrix2::new(c0.dot(&c0), c0.dot(&c1), c1.dot(&c0), c1.dot(&c1));
            let r = inv_sqrt_spd2(&g)?;
            let mut out = Mat3::zeros();
            out.set_column(0, &(c0 * r[(0, 0)] + c1 * r[(1, 0)]));
            out.set_column(1, &(c0 * r[(0, 1)] + c1 * r[(1, 1)]));
            Some(out)
        }
        _ => {
            let g = a.transpose() * a;
            let eig = SymmetricEigen::new(g);
            if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
                return None;
            }
            let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
            let r =
                eig.eigenvectors * Mat3::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
            Some(a * r)
        }
    }
}

/// Neumaier-compensated running sum. Summation order is fixed by the caller.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_of_orthonormal_frame_is_itself() {
        let a = mask(2);
        let p = polar_columns(&a, 2).unwrap();
        assert_eq!(p, a);
        let p1 = polar_columns(&mask(1), 1).unwrap();
        assert_eq!(p1, mask(1));
    }

    #[test]
    fn polar_columns_are_orthonormal() {
        let a = Mat3::new(1.0, 0.3, 0.0, 0.2, 0.9, 0.0, 0.1, -0.4, 0.0);
        let p = polar_columns(&a, 2).unwrap();
        let g = p.transpose() * p;
        assert!((g - mask(2)).norm() < 1e-14);
        let full = Mat3::new(1.0, 0.3, 0.1, 0.2, 0.9, 0.0, 0.1, -0.4, 1.2);
        let p3 = polar_columns(&full, 3).unwrap();
        assert!((p3.transpose() * p3 - Mat3::identity()).norm() < 1e-13);
    }

    #[test]
    fn frame_inverse_keeps_padding() {
        let a = Mat3::new(2.0, 1.0, 9.0, 0.5, 3.0, 9.0, 9.0, 9.0, 9.0);
        let inv = frame_inverse(&a, 2).unwrap();
        let prod = pad_identity(&a, 2) * inv;
        assert!((prod - Mat3::identity()).norm() < 1e-14);
        assert_eq!(inv[(2, 2)], 1.0);
    }

    #[test]
    fn svd_is_sorted() {
        let a = Mat3::from_diagonal(&Vec3::new(0.5, 3.0, 1.0));
        let s = sorted_svd(&a);
        assert!(s.singular_values[0] >= s.singular_values[1]);
        assert!(s.singular_values[1] >= s.singular_values[2]);
        let rebuilt = s.u * Mat3::from_diagonal(&s.singular_values) * s.v.transpose();
        assert!((rebuilt - a).norm() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.total(), 1.0);
    }
}
