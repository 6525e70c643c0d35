use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;
use crate::stats::{ClientStats, LayerGaussian, StatsError};

/// 2-Wasserstein distance between diagonal Gaussians:
///
/// ```text
/// W2^2 = ||mu_a - mu_b||^2 + ||sqrt(r_a) - sqrt(r_b)||^2
/// ```
pub fn w2_diag<S: Scalar>(a: &LayerGaussian<S>, b: &LayerGaussian<S>) -> Result<S, StatsError> {
    if a.channels() != b.channels() || a.var.len() != a.mean.len() || b.var.len() != b.mean.len() {
        return Err(StatsError::ChannelMismatch(a.channels(), b.channels()));
    }
    let mut sq = S::zero();
    for (ma, mb) in a.mean.iter().zip(&b.mean) {
        let d = *ma - *mb;
        sq += d * d;
    }
    for (ra, rb) in a.var.iter().zip(&b.var) {
        let d = ra.max(S::zero()).sqrt() - rb.max(S::zero()).sqrt();
        sq += d * d;
    }
    Ok(sq.sqrt())
}

const PSD_TOLERANCE: f64 = -1e-10;

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), StatsError> {
    if !m.is_square() {
        return Err(StatsError::NotSymmetric);
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(StatsError::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix via eigendecomposition, with
/// eigenvalues clamped at zero.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, StatsError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < PSD_TOLERANCE {
            return Err(StatsError::NotPsd(min));
        }
    }
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Full-covariance 2-Wasserstein (Bures) distance:
///
/// ```text
/// W2^2 = ||mu_a - mu_b||^2 + tr(A + B - 2 (A^1/2 B A^1/2)^1/2)
/// ```
pub fn w2_full(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64, StatsError> {
    let n = mu_a.len();
    if mu_b.len() != n || cov_a.shape() != (n, n) || cov_b.shape() != (n, n) {
        return Err(StatsError::ChannelMismatch(n, mu_b.len()));
    }
    check_symmetric(cov_a)?;
    check_symmetric(cov_b)?;
    let root_a = sqrt_psd(cov_a)?;
    // Validates B as PSD too.
    sqrt_psd(cov_b)?;
    let cross = sqrt_psd(&(&root_a * cov_b * &root_a))?;
    let mean_term = (mu_a - mu_b).norm_squared();
    let trace_term = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0).sqrt())
}

/// Sum over layers of the per-layer W2 (not of W2 squared).
pub fn client_distance<S: Scalar>(a: &ClientStats<S>, b: &ClientStats<S>) -> Result<S, StatsError> {
    if a.variant != b.variant {
        return Err(StatsError::Incongruent(format!(
            "variants {} and {}",
            a.variant.tag(),
            b.variant.tag()
        )));
    }
    if a.layers.len() != b.layers.len() {
        return Err(StatsError::Incongruent(format!(
            "{} vs {} layers",
            a.layers.len(),
            b.layers.len()
        )));
    }
    a.layers
        .iter()
        .zip(&b.layers)
        .try_fold(S::zero(), |acc, (la, lb)| Ok(acc + w2_diag(la, lb)?))
}

/// Symmetric, zero-diagonal, non-negative, finite `N x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<S> {
    n: usize,
    d: Vec<S>,
}

impl<S: Scalar> DistanceMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self, StatsError> {
        let n = rows.len();
        let bad = |m: String| Err(StatsError::InvalidDistances(m));
        if rows.iter().any(|r| r.len() != n) {
            return bad("matrix is not square".into());
        }
        for i in 0..n {
            if rows[i][i] != S::zero() {
                return bad(format!("diagonal entry {i} is non-zero"));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() || v < S::zero() {
                    return bad(format!("entry ({i}, {j}) = {v} is negative or non-finite"));
                }
                if v != rows[j][i] {
                    return bad(format!("entries ({i}, {j}) and ({j}, {i}) differ"));
                }
            }
        }
        Ok(Self {
            n,
            d: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Pairwise [`client_distance`] over all clients.
pub fn distance_matrix<S: Scalar>(all: &[ClientStats<S>]) -> Result<DistanceMatrix<S>, StatsError> {
    let n = all.len();
    if n < 2 {
        return Err(StatsError::TooFewClients(n));
    }
    for s in &all[1..] {
        if !s.is_congruent(&all[0]) {
            return Err(StatsError::Incongruent("clients differ in layer structure".into()));
        }
    }
    let mut rows = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = client_distance(&all[i], &all[j])?;
            rows[i][j] = d;
            rows[j][i] = d;
        }
    }
    DistanceMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StatsVariant;

    fn g(mean: &[f64], var: &[f64]) -> LayerGaussian<f64> {
        LayerGaussian {
            mean: mean.to_vec(),
            var: var.to_vec(),
        }
    }

    #[test]
    fn diag_hand_case_is_sqrt_ten() {
        let a = g(&[0.0, 0.0], &[1.0, 1.0]);
        let b = g(&[3.0, 0.0], &[4.0, 1.0]);
        assert!((w2_diag(&a, &b).unwrap() - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(w2_diag(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_reduce_to_euclidean() {
        let a = g(&[1.0, 2.0, 3.0], &[0.0; 3]);
        let b = g(&[4.0, 6.0, 3.0], &[0.0; 3]);
        assert!((w2_diag(&a, &b).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn channel_mismatch() {
        assert!(matches!(
            w2_diag(&g(&[0.0], &[1.0]), &g(&[0.0, 1.0], &[1.0, 1.0])),
            Err(StatsError::ChannelMismatch(1, 2))
        ));
    }

    #[test]
    fn full_on_hand_case_and_equal_covariances() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let ma = DVector::from_vec(vec![0.0, 0.0]);
        let mb = DVector::from_vec(vec![3.0, 0.0]);
        assert!((w2_full(&ma, &a, &mb, &b).unwrap() - 10f64.sqrt()).abs() < 1e-12);

        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let d = w2_full(&ma, &c, &mb, &c).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_rejects_non_psd_and_asymmetric() {
        let m = DVector::from_vec(vec![0.0, 0.0]);
        let good = DMatrix::identity(2, 2);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(w2_full(&m, &neg, &m, &good), Err(StatsError::NotPsd(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(w2_full(&m, &good, &m, &asym), Err(StatsError::NotSymmetric)));
    }

    fn stats(layers: Vec<LayerGaussian<f64>>) -> ClientStats<f64> {
        ClientStats {
            variant: StatsVariant::BnLayers,
            layers,
        }
    }

    #[test]
    fn distance_sums_layer_w2() {
        let a = g(&[0.0, 0.0], &[1.0, 1.0]);
        let b = g(&[3.0, 0.0], &[4.0, 1.0]);
        let one = client_distance(&stats(vec![a.clone()]), &stats(vec![b.clone()])).unwrap();
        assert!((one - 10f64.sqrt()).abs() < 1e-12);
        let two = client_distance(&stats(vec![a.clone(), a.clone()]), &stats(vec![b.clone(), b.clone()])).unwrap();
        assert!((two - 2.0 * 10f64.sqrt()).abs() < 1e-12);
        let mut other = stats(vec![b]);
        other.variant = StatsVariant::BnRunning;
        assert!(client_distance(&stats(vec![a]), &other).is_err());
    }

    #[test]
    fn three_client_matrix_by_hand() {
        // 1-D: means 0, 3, 0 and variances 1, 4, 9.
        // d01 = sqrt(9 + 1) ; d02 = sqrt(0 + 4) = 2 ; d12 = sqrt(9 + 1)
        let s = [
            stats(vec![g(&[0.0], &[1.0])]),
            stats(vec![g(&[3.0], &[4.0])]),
            stats(vec![g(&[0.0], &[9.0])]),
        ];
        let d = distance_matrix(&s).unwrap();
        let r10 = 10f64.sqrt();
        let expected = [[0.0, r10, 2.0], [r10, 0.0, r10], [2.0, r10, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((d.get(i, j) - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_clients_give_zero_matrix() {
        let s = vec![stats(vec![g(&[1.0, 2.0], &[0.5, 0.3])]); 4];
        let d = distance_matrix(&s).unwrap();
        assert!(d.to_rows().iter().flatten().all(|&v| v == 0.0));
        assert!(matches!(distance_matrix(&s[..1]), Err(StatsError::TooFewClients(1))));
    }

    #[test]
    fn from_rows_validates() {
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
    }
}
