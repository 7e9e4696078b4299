use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::EmbeddedManifold;
use crate::linalg::Vec3;

type ValueFn = dyn Fn(&[Vec3]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[Vec3]) -> Vec<Vec3> + Send + Sync;

/// `F(sigma) = f(sigma_{t_1}(x_1), ..., sigma_{t_p}(x_q))` with an ambient
/// gradient oracle.
///
/// Arguments are laid out time-major: entry `i * q + j` is the value at time
/// `t_i` of the path started from base point `j`. Times are fractions of the
/// horizon.
#[derive(Clone)]
pub struct CylindricalFunctional {
    pub label: String,
    pub time_fractions: Vec<f64>,
    pub base_points: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
}

impl fmt::Debug for CylindricalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylindricalFunctional")
            .field("label", &self.label)
            .field("time_fractions", &self.time_fractions)
            .field("base_points", &self.base_points)
            .finish()
    }
}

impl CylindricalFunctional {
    pub fn new(
        label: impl Into<String>,
        time_fractions: Vec<f64>,
        base_points: usize,
        value: impl Fn(&[Vec3]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[Vec3]) -> Vec<Vec3> + Send + Sync + 'static,
    ) -> Result<Self> {
        if time_fractions.is_empty() || base_points == 0 {
            return Err(Error::InvalidParameter(
                "functional needs at least one time and one base point".into(),
            ));
        }
        let ordered = time_fractions.windows(2).all(|w| w[0] < w[1]);
        let in_range = time_fractions.iter().all(|t| (0.0..=1.0).contains(t));
        if !ordered || !in_range {
            return Err(Error::InvalidParameter(format!(
                "times must increase within [0, 1]: {time_fractions:?}"
            )));
        }
        Ok(CylindricalFunctional {
            label: label.into(),
            time_fractions,
            base_points,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        })
    }

    /// `F = c`, evaluated at the final time.
    pub fn constant(c: f64, base_points: usize) -> Self {
        CylindricalFunctional {
            label: format!("{c}"),
            time_fractions: vec![1.0],
            base_points,
            value: Arc::new(move |_| c),
            gradient: Arc::new(move |_| vec![Vec3::zeros(); base_points]),
        }
    }

    pub fn arity(&self) -> usize {
        self.time_fractions.len() * self.base_points
    }

    /// Grid indices of the evaluation times.
    pub fn grid_indices(&self, horizon: f64, steps: usize) -> Result<Vec<usize>> {
        self.time_fractions
            .iter()
            .map(|&f| grid_index(f, horizon, steps))
            .collect()
    }

    #[inline]
    pub fn eval(&self, args: &[Vec3]) -> f64 {
        (self.value)(args)
    }

    #[inline]
    pub fn gradient(&self, args: &[Vec3]) -> Vec<Vec3> {
        (self.gradient)(args)
    }

    /// `dF(V) = sum <grad_k f, V_k>` for tangent vectors `V_k` at the arguments.
    pub fn derivative(&self, args: &[Vec3], vectors: &[Vec3]) -> f64 {
        self.gradient(args)
            .iter()
            .zip(vectors)
            .map(|(g, v)| g.dot(v))
            .sum()
    }

    /// Compare the gradient with central differences of `f` along tangent
    /// directions at each sample argument tuple.
    pub fn validate_gradient(
        &self,
        m: &EmbeddedManifold,
        samples: &[Vec<Vec3>],
        tol: f64,
    ) -> Result<()> {
        let h = 1e-5;
        for args in samples {
            let grad = self.gradient(args);
            for (k, x) in args.iter().enumerate() {
                let frame = m.tangent_frame(x);
                for c in 0..m.intrinsic_dim() {
                    let dir = frame.column(c).into_owned();
                    let mut plus = args.clone();
                    let mut minus = args.clone();
                    plus[k] = m.retract(x, &(dir * h));
                    minus[k] = m.retract(x, &(dir * -h));
                    let fd = (self.eval(&plus) - self.eval(&minus)) / (2.0 * h);
                    let err = (fd - grad[k].dot(&dir)).abs();
                    if err > tol {
                        return Err(Error::Validation(format!(
                            "gradient of {} off by {err:.3e} at argument {k}",
                            self.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Index of the grid time `fraction * horizon` on `steps` uniform steps.
pub fn grid_index(fraction: f64, horizon: f64, steps: usize) -> Result<usize> {
    let exact = fraction * steps as f64;
    let idx = exact.round();
    if !(0.0..=1.0).contains(&fraction) || (idx - exact).abs() > 1e-9 * steps as f64 {
        return Err(Error::Grid(format!(
            "time {} is not on the grid with step {}",
            fraction * horizon,
            horizon / steps as f64
        )));
    }
    Ok(idx as usize)
}
