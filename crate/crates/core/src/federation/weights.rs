use crate::federation::FedError;
use crate::scalar::Scalar;
use crate::stats::DistanceMatrix;

/// Distances below this are treated as this before inversion.
pub const MIN_DISTANCE: f64 = 1e-12;

/// Row-stochastic client-similarity matrix with constant diagonal `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    w: Vec<f64>,
    lambda: f64,
}

impl WeightMatrix {
    /// Every entry `1 / n`, so aggregation reduces to plain averaging.
    pub fn uniform(n: usize) -> Result<Self, FedError> {
        if n == 0 {
            return Err(FedError::ClientCount(n));
        }
        let v = 1.0 / n as f64;
        Ok(Self {
            n,
            w: vec![v; n * n],
            lambda: v,
        })
    }

    /// Validates an explicit matrix: square, non-negative, rows summing to
    /// one within `1e-12` and a constant diagonal.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, FedError> {
        let n = rows.len();
        if n == 0 {
            return Err(FedError::ClientCount(0));
        }
        let lambda = rows[0][0];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(FedError::InvalidWeights(format!("row {i} has {} entries", r.len())));
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(FedError::InvalidWeights(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            if (r.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(FedError::InvalidWeights(format!("row {i} does not sum to 1")));
            }
            if r[i] != lambda {
                return Err(FedError::InvalidWeights("diagonal is not constant".into()));
            }
        }
        Ok(Self {
            n,
            w: rows.into_iter().flatten().collect(),
            lambda,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Inverse-distance weights. Row `i` is
///
/// ```text
/// w_ii = lambda
/// w_ij = (1 - lambda) * (1 / d_ij) / sum_{k != i} (1 / d_ik)
/// ```
///
/// with each `d_ij` first raised to at least [`MIN_DISTANCE`].
pub fn build_weight_matrix<S: Scalar>(d: &DistanceMatrix<S>, lambda: f64) -> Result<WeightMatrix, FedError> {
    let n = d.len();
    if n < 2 {
        return Err(FedError::ClientCount(n));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(FedError::Lambda(lambda));
    }
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        let inv: Vec<f64> = (0..n)
            .map(|j| {
                if j == i {
                    0.0
                } else {
                    1.0 / d.get(i, j).to_f64_lossy().max(MIN_DISTANCE)
                }
            })
            .collect();
        let total: f64 = inv.iter().sum();
        for j in 0..n {
            w[i * n + j] = if j == i {
                lambda
            } else {
                (1.0 - lambda) * inv[j] / total
            };
        }
    }
    Ok(WeightMatrix { n, w, lambda })
}
