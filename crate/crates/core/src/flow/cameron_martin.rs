use super::DrivingNoise;
use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Piecewise-linear Cameron-Martin path `k` with `k(0) = 0`, stored as its
/// constant velocity on each grid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CameronMartinPath {
    pub horizon: f64,
    pub steps: usize,
    pub velocities: Vec<Vec3>,
    /// Short description echoed into reports.
    pub label: String,
}

impl CameronMartinPath {
    /// `k(t) = t * direction`.
    pub fn linear(direction: Vec3, horizon: f64, steps: usize) -> Result<Self> {
        super::noise::check_grid(horizon, steps)?;
        Ok(CameronMartinPath {
            horizon,
            steps,
            velocities: vec![direction; steps],
            label: format!("t*({}, {}, {})", direction[0], direction[1], direction[2]),
        })
    }

    pub fn zero(horizon: f64, steps: usize) -> Result<Self> {
        let mut k = Self::linear(Vec3::zeros(), horizon, steps)?;
        k.label = "0".into();
        k.velocities.iter_mut().for_each(|v| *v = Vec3::zeros());
        Ok(k)
    }

    /// Piecewise-linear interpolation of `f` on the grid; requires `f(0) = 0`.
    pub fn from_fn(
        f: impl Fn(f64) -> Vec3,
        horizon: f64,
        steps: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        super::noise::check_grid(horizon, steps)?;
        if f(0.0).norm() != 0.0 {
            return Err(Error::InvalidParameter(
                "Cameron-Martin path must start at 0".into(),
            ));
        }
        let dt = horizon / steps as f64;
        let velocities = (0..steps)
            .map(|j| (f(dt * (j + 1) as f64) - f(dt * j as f64)) / dt)
            .collect();
        Ok(CameronMartinPath {
            horizon,
            steps,
            velocities,
            label: label.into(),
        })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn velocity(&self, j: usize) -> Vec3 {
        self.velocities[j]
    }

    /// `k(t_j)`.
    pub fn value(&self, j: usize) -> Vec3 {
        self.velocities[..j].iter().sum::<Vec3>() * self.dt()
    }

    /// `|k|_H^2 = int |k'|^2 ds`.
    pub fn norm_sq(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            * self.dt()
    }

    pub fn is_zero(&self) -> bool {
        self.velocities.iter().all(|v| *v == Vec3::zeros())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        CameronMartinPath {
            velocities: self.velocities.iter().map(|v| v * alpha).collect(),
            label: format!("{alpha}*[{}]", self.label),
            ..self.clone()
        }
    }

    /// The same path on the grid with twice the step.
    pub fn coarsen(&self) -> Result<Self> {
        if self.steps % 2 != 0 {
            return Err(Error::Grid(format!(
                "cannot coarsen an odd step count {}",
                self.steps
            )));
        }
        Ok(CameronMartinPath {
            steps: self.steps / 2,
            velocities: self
                .velocities
                .chunks_exact(2)
                .map(|p| (p[0] + p[1]) * 0.5)
                .collect(),
            ..self.clone()
        })
    }

    pub fn check_grid(&self, noise: &DrivingNoise) -> Result<()> {
        if self.steps != noise.steps || (self.horizon - noise.horizon).abs() > 1e-12 * noise.horizon
        {
            return Err(Error::Grid(format!(
                "Cameron-Martin grid ({}, {}) does not match noise grid ({}, {})",
                self.horizon, self.steps, noise.horizon, noise.steps
            )));
        }
        Ok(())
    }

    /// Ito sum `sum_j <k'_j, increments_j>`.
    pub fn pairing(&self, increments: &[Vec3]) -> f64 {
        self.velocities
            .iter()
            .zip(increments)
            .map(|(k, d)| k.dot(d))
            .sum()
    }
}
