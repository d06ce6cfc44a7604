//! Linear-algebra and statistics kernels: covariance, Pearson correlation,
//! symmetric eigenvalues (cyclic Jacobi) and the 1-D discrete Wasserstein distance.

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

type Result<T> = std::result::Result<T, NumericsError>;

/// Eigenvalues sorted in descending order, optionally normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    normalized: bool,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Divides by the eigenvalue sum. An all-zero spectrum (a fully dead layer)
    /// has no mass to spread, so it becomes a Dirac on the first slot.
    pub fn normalize(mut self) -> Self {
        let total: f64 = self.eigenvalues.iter().sum();
        if total > 0.0 {
            self.eigenvalues.iter_mut().for_each(|v| *v /= total);
        } else {
            self.eigenvalues.iter_mut().for_each(|v| *v = 0.0);
            self.eigenvalues[0] = 1.0;
        }
        self.normalized = true;
        self
    }

    /// Mass function on the integer support `1..=D` in descending-eigenvalue order.
    pub fn as_distribution(&self) -> Result<DiscreteDistribution> {
        if !self.normalized {
            return Err(NumericsError::Contract("spectrum must be normalized".into()));
        }
        DiscreteDistribution::new(self.eigenvalues.clone())
    }
}

/// Probability masses on the implicit support `1..=D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution(Vec<f64>);

impl DiscreteDistribution {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(NumericsError::Contract("empty distribution".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(NumericsError::Contract("masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(NumericsError::Contract(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self(masses))
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    /// All mass on support point `position` (1-based).
    pub fn dirac(d: usize, position: usize) -> Self {
        assert!((1..=d).contains(&position), "dirac position outside 1..=D");
        let mut m = vec![0.0; d];
        m[position - 1] = 1.0;
        Self(m)
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_rows(x: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(NumericsError::Degenerate(format!(
            "need at least 2 rows, got {}",
            x.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Err(NumericsError::Degenerate("matrix has no columns".into()));
    }
    Ok(())
}

/// Sample covariance of the columns (divisor `N - 1`).
pub fn covariance(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_rows(&x)?;
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    let mut cov = centered.t().dot(&centered) / (n - 1.0);
    // Symmetrize away the last-ulp asymmetry of the product.
    let d = cov.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok(cov)
}

/// Pearson correlation between columns.
///
/// A constant column has correlation 0 with every other column and 1 with itself.
pub fn pearson_matrix(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_rows(&x)?;
    let cov = covariance(x)?;
    let d = cov.nrows();
    let constant: Vec<bool> = x
        .axis_iter(Axis(1))
        .map(|col| {
            let first = col[0];
            col.iter().all(|&v| v == first)
        })
        .collect();
    let std: Vec<f64> = (0..d).map(|i| cov[[i, i]].max(0.0).sqrt()).collect();
    let mut r = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        r[[i, i]] = 1.0;
        if constant[i] || std[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..d {
            if constant[j] || std[j] == 0.0 {
                continue;
            }
            let v = (cov[[i, j]] / (std[i] * std[j])).clamp(-1.0, 1.0);
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
    }
    Ok(r)
}

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, clamped at
/// zero from below and sorted descending (not normalized).
///
/// Sweeps stop once the off-diagonal Frobenius norm falls below `1e-10` times
/// the Frobenius norm of the input, or after 100 sweeps.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Result<Spectrum> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(NumericsError::Contract(format!(
            "expected a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-9 * scale {
                return Err(NumericsError::Contract(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut a: Vec<f64> = m.iter().copied().collect();
    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let off_norm = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        s.sqrt()
    };

    if frob > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_norm(&a) <= JACOBI_TOL * frob {
                break;
            }
            let m = n + n % 2;
            for round in 0..m - 1 {
                jacobi_round(&mut a, n, &round_robin_pairs(m, round));
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i].max(0.0)).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(Spectrum {
        eigenvalues: eig,
        normalized: false,
    })
}

/// Pairs of round `round` of a round-robin schedule over `m` (even) indices, so
/// that every pair appears exactly once per `m - 1` rounds. Pairs touching the
/// padding index `m - 1` of an odd-sized problem are dropped by the caller.
fn round_robin_pairs(m: usize, round: usize) -> Vec<(usize, usize)> {
    let k = m - 1;
    let mut pairs = Vec::with_capacity(m / 2);
    pairs.push((round % k, k));
    for i in 1..m / 2 {
        let a = (round + i) % k;
        let b = (round + k - i) % k;
        pairs.push((a.min(b), a.max(b)));
    }
    pairs
}

/// Applies the rotations annihilating `a[p][q]` for a set of disjoint pairs.
/// Disjoint rotations commute, so all angles come from the current matrix and
/// the update is one pass over the affected rows, then one pass over every row
/// for the affected columns.
fn jacobi_round(a: &mut [f64], n: usize, pairs: &[(usize, usize)]) {
    let mut rots = Vec::with_capacity(pairs.len());
    for &(p, q) in pairs {
        if q >= n {
            continue;
        }
        let apq = a[p * n + q];
        if apq == 0.0 {
            continue;
        }
        let app = a[p * n + p];
        let aqq = a[q * n + q];
        let theta = (aqq - app) / (2.0 * apq);
        let t = if theta.is_finite() {
            theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
        } else {
            0.0
        };
        if t == 0.0 {
            // |theta| overflowed: apq is negligible against the diagonal gap.
            a[p * n + q] = 0.0;
            a[q * n + p] = 0.0;
            continue;
        }
        let c = 1.0 / (t * t + 1.0).sqrt();
        rots.push((p, q, c, t * c, app - t * apq, aqq + t * apq));
    }
    for &(p, q, c, s, _, _) in &rots {
        let (lo, hi) = a.split_at_mut(q * n);
        let row_p = &mut lo[p * n..(p + 1) * n];
        let row_q = &mut hi[..n];
        for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
            let (xp, xq) = (*x, *y);
            *x = c * xp - s * xq;
            *y = s * xp + c * xq;
        }
    }
    for row in a.chunks_exact_mut(n) {
        for &(p, q, c, s, _, _) in &rots {
            let (xp, xq) = (row[p], row[q]);
            row[p] = c * xp - s * xq;
            row[q] = s * xp + c * xq;
        }
    }
    for &(p, q, _, _, new_pp, new_qq) in &rots {
        a[p * n + p] = new_pp;
        a[q * n + q] = new_qq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
    }
}

/// `sum_i |CDF_p(i) - CDF_q(i)|` over the unit-spaced support `1..=D`.
pub fn wasserstein_1d(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(NumericsError::Contract(format!(
            "support lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut w = 0.0;
    for (a, b) in p.masses().iter().zip(q.masses()) {
        cp += a;
        cq += b;
        w += (cp - cq).abs();
    }
    Ok(w)
}

/// Closed form of `W(dirac at 1, uniform)` on `D` points: `(D - 1) / 2`.
pub fn dirac_uniform_distance(d: usize) -> f64 {
    (d as f64 - 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn covariance_examples() {
        let same = array![[1.0, 2.0], [1.0, 2.0]];
        assert_eq!(covariance(same.view()).unwrap(), Array2::<f64>::zeros((2, 2)));

        let x = array![[0.0, 0.0], [2.0, 2.0]];
        assert_eq!(covariance(x.view()).unwrap(), array![[2.0, 2.0], [2.0, 2.0]]);

        let x = array![[1.0, 5.0, -2.0], [0.5, 3.0, 1.0], [4.0, -1.0, 0.0], [2.0, 2.0, 2.0]];
        let perm = [2usize, 0, 1];
        let xp = x.select(Axis(1), &perm);
        let c = covariance(x.view()).unwrap();
        let cp = covariance(xp.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(cp[[i, j]], c[[perm[i], perm[j]]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_rejects_single_row() {
        let x = array![[1.0, 2.0]];
        assert!(matches!(covariance(x.view()), Err(NumericsError::Degenerate(_))));
    }

    #[test]
    fn eigenvalue_examples() {
        let id = Array2::<f64>::eye(3);
        assert_eq!(
            symmetric_eigenvalues(id.view()).unwrap().eigenvalues(),
            &[1.0, 1.0, 1.0]
        );

        let d = array![[1.0, 0.0], [0.0, 4.0]];
        assert_eq!(symmetric_eigenvalues(d.view()).unwrap().eigenvalues(), &[4.0, 1.0]);

        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let e = symmetric_eigenvalues(m.view()).unwrap();
        assert_abs_diff_eq!(e.eigenvalues()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvalues()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_clamp_negative() {
        // eigenvalues 1 and -1 -> the negative one is clamped to 0
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        let e = symmetric_eigenvalues(m.view()).unwrap();
        assert_abs_diff_eq!(e.eigenvalues()[0], 1.0, epsilon = 1e-12);
        assert_eq!(e.eigenvalues()[1], 0.0);
    }

    #[test]
    fn eigenvalues_reject_asymmetric() {
        let m = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(
            symmetric_eigenvalues(m.view()),
            Err(NumericsError::Contract(_))
        ));
    }

    #[test]
    fn normalized_spectrum_sums_to_one() {
        let m = array![[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]];
        let s = symmetric_eigenvalues(m.view()).unwrap().normalize();
        assert!(s.is_normalized());
        assert_abs_diff_eq!(s.eigenvalues().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(s.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pearson_examples() {
        let x = array![[1.0, -1.0], [2.0, -2.0], [5.0, -5.0]];
        let r = pearson_matrix(x.view()).unwrap();
        assert_eq!(r[[0, 0]], 1.0);
        assert_abs_diff_eq!(r[[0, 1]], -1.0, epsilon = 1e-12);

        let x = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let r = pearson_matrix(x.view()).unwrap();
        assert_abs_diff_eq!(r[[0, 1]], 0.0, epsilon = 1e-15);
        assert_eq!(r[[1, 1]], 1.0);
    }

    #[test]
    fn pearson_constant_column() {
        let x = array![[3.0, 1.0], [3.0, 2.0], [3.0, 4.0]];
        let r = pearson_matrix(x.view()).unwrap();
        assert_eq!(r, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn round_robin_covers_every_pair_once() {
        for m in [2usize, 4, 6, 10] {
            let mut seen = std::collections::BTreeSet::new();
            for round in 0..m - 1 {
                let pairs = round_robin_pairs(m, round);
                let mut used: Vec<usize> = pairs.iter().flat_map(|&(p, q)| [p, q]).collect();
                used.sort_unstable();
                used.dedup();
                assert_eq!(used.len(), m, "pairs of one round must be disjoint");
                for pair in pairs {
                    assert!(pair.0 < pair.1 && seen.insert(pair));
                }
            }
            assert_eq!(seen.len(), m * (m - 1) / 2);
        }
    }

    #[test]
    fn wasserstein_examples() {
        let u2 = DiscreteDistribution::uniform(2);
        assert_eq!(wasserstein_1d(&u2, &u2).unwrap(), 0.0);
        assert_abs_diff_eq!(
            wasserstein_1d(&DiscreteDistribution::dirac(2, 1), &u2).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let u5 = DiscreteDistribution::uniform(5);
        assert_abs_diff_eq!(
            wasserstein_1d(&DiscreteDistribution::dirac(5, 1), &u5).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert!(wasserstein_1d(&u2, &u5).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![0.25, 0.75]).is_ok());
    }

    fn distribution(d: usize) -> impl Strategy<Value = DiscreteDistribution> {
        proptest::collection::vec(0.0f64..1.0, d).prop_map(|mut v| {
            v[0] += 1e-3;
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            // absorb rounding so the sum is 1 within tolerance
            DiscreteDistribution::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn wasserstein_is_a_metric(
            (p, q, r) in (1usize..=32).prop_flat_map(|d| (distribution(d), distribution(d), distribution(d)))
        ) {
            let pq = wasserstein_1d(&p, &q).unwrap();
            let qp = wasserstein_1d(&q, &p).unwrap();
            let pr = wasserstein_1d(&p, &r).unwrap();
            let rq = wasserstein_1d(&r, &q).unwrap();
            prop_assert!(pq >= 0.0);
            prop_assert!((pq - qp).abs() < 1e-12);
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn pearson_symmetric_unit_diagonal(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 3..12)
        ) {
            let n = rows.len();
            let x = Array2::from_shape_vec((n, 4), rows.into_iter().flatten().collect()).unwrap();
            let r = pearson_matrix(x.view()).unwrap();
            for i in 0..4 {
                prop_assert_eq!(r[[i, i]], 1.0);
                for j in 0..4 {
                    prop_assert_eq!(r[[i, j]], r[[j, i]]);
                    prop_assert!(r[[i, j]].abs() <= 1.0);
                }
            }
        }
    }
}
