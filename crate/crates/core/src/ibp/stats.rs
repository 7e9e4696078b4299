use serde::{Deserialize, Serialize};

use crate::linalg::CompensatedSum;

/// Mean and standard error of one side of an identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub mean: f64,
    pub stderr: f64,
}

/// Statistics of the per-sample differences `lhs - rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub mean: f64,
    pub stderr: f64,
    /// `|mean| / stderr`; zero when every difference vanishes, infinite
    /// when the differences are a nonzero constant.
    pub z: f64,
}

/// Paired Monte Carlo estimate of `E lhs = E rhs` from common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub count: usize,
    pub lhs: SideStats,
    pub rhs: SideStats,
    pub paired: PairedStats,
    /// `(lhs, rhs)` per sample, in sample-index order.
    pub samples: Vec<(f64, f64)>,
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let n = count as f64;
    let mean = values.clone().collect::<CompensatedSum>().total() / n;
    if count < 2 {
        return (mean, 0.0);
    }
    let ss = values
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .total();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

impl EstimatorResult {
    pub fn from_pairs(samples: Vec<(f64, f64)>) -> Self {
        let count = samples.len();
        let (lm, ls) = mean_and_stderr(samples.iter().map(|p| p.0), count);
        let (rm, rs) = mean_and_stderr(samples.iter().map(|p| p.1), count);
        let (dm, ds) = mean_and_stderr(samples.iter().map(|p| p.0 - p.1), count);
        let z = if ds > 0.0 {
            dm.abs() / ds
        } else if dm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        EstimatorResult {
            count,
            lhs: SideStats {
                mean: lm,
                stderr: ls,
            },
            rhs: SideStats {
                mean: rm,
                stderr: rs,
            },
            paired: PairedStats {
                mean: dm,
                stderr: ds,
                z,
            },
            samples,
        }
    }

    /// Largest `|lhs - rhs|` over samples.
    pub fn max_abs_difference(&self) -> f64 {
        self.samples
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
