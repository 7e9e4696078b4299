use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::CameronMartinPath;
use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Brownian increments `dB_k`, `k < steps`, on a uniform grid over `[0, horizon]`.
///
/// Components past `noise_dim` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingNoise {
    pub horizon: f64,
    pub steps: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub index: u64,
    pub increments: Vec<Vec3>,
}

/// Increments for sample `index` of the run seeded by `seed`. The stream
/// depends on `(seed, index)` only.
pub fn sample_noise(
    horizon: f64,
    steps: usize,
    noise_dim: usize,
    seed: u64,
    index: u64,
) -> Result<DrivingNoise> {
    check_grid(horizon, steps)?;
    if noise_dim == 0 || noise_dim > 3 {
        return Err(Error::InvalidParameter(format!(
            "noise dimension {noise_dim} outside 1..=3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sd = (horizon / steps as f64).sqrt();
    let increments = (0..steps)
        .map(|_| {
            let mut v = Vec3::zeros();
            for i in 0..noise_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                v[i] = sd * z;
            }
            v
        })
        .collect();
    Ok(DrivingNoise {
        horizon,
        steps,
        noise_dim,
        seed,
        index,
        increments,
    })
}

pub(crate) fn check_grid(horizon: f64, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "step count must be at least 1".into(),
        ));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(())
}

impl DrivingNoise {
    /// Noise with explicit increments; `seed` and `index` are zero.
    pub fn from_increments(horizon: f64, noise_dim: usize, increments: Vec<Vec3>) -> Result<Self> {
        check_grid(horizon, increments.len())?;
        Ok(DrivingNoise {
            horizon,
            steps: increments.len(),
            noise_dim,
            seed: 0,
            index: 0,
            increments,
        })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    /// `B_{t_k}` for `k = 0..=steps`.
    pub fn brownian_path(&self) -> Vec<Vec3> {
        let mut b = Vec::with_capacity(self.steps + 1);
        let mut acc = Vec3::zeros();
        b.push(acc);
        for d in &self.increments {
            acc += d;
            b.push(acc);
        }
        b
    }

    /// The same Brownian path on the grid with twice the step.
    pub fn coarsen(&self) -> Result<DrivingNoise> {
        if self.steps % 2 != 0 {
            return Err(Error::Grid(format!(
                "cannot coarsen an odd step count {}",
                self.steps
            )));
        }
        Ok(DrivingNoise {
            steps: self.steps / 2,
            increments: self
                .increments
                .chunks_exact(2)
                .map(|p| p[0] + p[1])
                .collect(),
            ..self.clone()
        })
    }

    /// Increments of `B + tau k`.
    pub fn shifted(&self, k: &CameronMartinPath, tau: f64) -> Result<DrivingNoise> {
        k.check_grid(self)?;
        if tau == 0.0 {
            return Ok(self.clone());
        }
        let dt = self.dt();
        Ok(DrivingNoise {
            increments: self
                .increments
                .iter()
                .zip(&k.velocities)
                .map(|(db, kd)| db + kd * (tau * dt))
                .collect(),
            ..self.clone()
        })
    }
}
