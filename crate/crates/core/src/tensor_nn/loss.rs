use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::TensorError;

/// Scalar loss with gradients for the embeddings and for every penalized scale vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_z: Array2<f64>,
    pub grad_gammas: Vec<Array1<f64>>,
}

/// `weight * sum |gamma|` and its subgradient (0 at exactly 0).
pub fn l1_penalty(gammas: &[ArrayView1<f64>], weight: f64) -> (f64, Vec<Array1<f64>>) {
    let value = weight
        * gammas
            .iter()
            .map(|g| g.iter().map(|v| v.abs()).sum::<f64>())
            .sum::<f64>();
    let grads = gammas
        .iter()
        .map(|g| g.mapv(|v| if v == 0.0 { 0.0 } else { weight * v.signum() }))
        .collect();
    (value, grads)
}

fn check_pairs(z: &ArrayView2<f64>, rows: usize, cols: usize, what: &str) -> Result<(), TensorError> {
    let n = z.nrows();
    if rows != n || cols != n {
        return Err(TensorError::Contract(format!(
            "{what} must be {n}x{n}, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Margin contrastive objective over all ordered pairs `(i, j)` of the batch:
///
/// `1/(2N) * sum_ij [ (1 - l_ij) max(m - d_ij, 0)^2 + l_ij d_ij^2 ] + weight * sum |gamma|`
///
/// The hinge subgradient at `d = m` is 0 and coincident points get a zero
/// distance direction.
pub fn contrastive_loss(
    z: ArrayView2<f64>,
    labels: ArrayView2<u8>,
    margin: f64,
    sparsity_weight: f64,
    gammas: &[ArrayView1<f64>],
) -> Result<LossOutput, TensorError> {
    check_pairs(&z, labels.nrows(), labels.ncols(), "pair label matrix")?;
    if !(margin > 0.0) {
        return Err(TensorError::Contract("margin must be positive".into()));
    }
    let n = z.nrows();
    let h = z.ncols();
    let scale = 1.0 / (2.0 * n as f64);
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((n, h));
    let mut diff = vec![0.0; h];

    for i in 0..n {
        // i == j: distance 0, only an unlabeled diagonal contributes m^2
        if labels[[i, i]] == 0 {
            loss += margin * margin;
        }
        for j in (i + 1)..n {
            let zi = z.row(i);
            let zj = z.row(j);
            let mut d2 = 0.0;
            for k in 0..h {
                diff[k] = zi[k] - zj[k];
                d2 += diff[k] * diff[k];
            }
            let d = d2.sqrt();
            // coefficient c such that d(term)/dz_i = c * (z_i - z_j)
            let mut coef = 0.0;
            for l in [labels[[i, j]], labels[[j, i]]] {
                if l != 0 {
                    loss += d2;
                    coef += 2.0;
                } else if d < margin {
                    let gap = margin - d;
                    loss += gap * gap;
                    if d > 0.0 {
                        coef -= 2.0 * gap / d;
                    }
                }
            }
            if coef != 0.0 {
                let c = coef * scale;
                for k in 0..h {
                    grad[[i, k]] += c * diff[k];
                    grad[[j, k]] -= c * diff[k];
                }
            }
        }
    }
    let (penalty, grad_gammas) = l1_penalty(gammas, sparsity_weight);
    Ok(LossOutput {
        loss: loss * scale + penalty,
        grad_z: grad,
        grad_gammas,
    })
}

/// Graph-embedding objective `1/(2N) sum_ij ||z_i - z_j||^2 S_ij + weight * sum |gamma|`.
pub fn graph_embedding_loss(
    z: ArrayView2<f64>,
    similarity: ArrayView2<f64>,
    sparsity_weight: f64,
    gammas: &[ArrayView1<f64>],
) -> Result<LossOutput, TensorError> {
    check_pairs(&z, similarity.nrows(), similarity.ncols(), "similarity matrix")?;
    let n = z.nrows();
    let h = z.ncols();
    let scale = 1.0 / (2.0 * n as f64);
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((n, h));
    for i in 0..n {
        for j in (i + 1)..n {
            let w = similarity[[i, j]] + similarity[[j, i]];
            if w == 0.0 {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..h {
                let d = z[[i, k]] - z[[j, k]];
                d2 += d * d;
            }
            loss += w * d2;
            let c = 2.0 * w * scale;
            for k in 0..h {
                let d = z[[i, k]] - z[[j, k]];
                grad[[i, k]] += c * d;
                grad[[j, k]] -= c * d;
            }
        }
    }
    let (penalty, grad_gammas) = l1_penalty(gammas, sparsity_weight);
    Ok(LossOutput {
        loss: loss * scale + penalty,
        grad_z: grad,
        grad_gammas,
    })
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>), TensorError> {
    let (n, k) = logits.dim();
    if targets.len() != n || n == 0 {
        return Err(TensorError::Contract(format!("{} targets for {n} rows", targets.len())));
    }
    let mut grad = Array2::<f64>::zeros((n, k));
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(TensorError::Contract(format!("target {t} out of {k} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[t];
        for c in 0..k {
            grad[[i, c]] = (row[c] - log_z).exp() / n as f64;
        }
        grad[[i, t]] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn ones(n: usize) -> Array2<u8> {
        Array2::from_elem((n, n), 1)
    }

    #[test]
    fn identical_positive_embeddings_cost_nothing() {
        let z = Array2::from_elem((4, 3), 0.7);
        let out = contrastive_loss(z.view(), ones(4).view(), 1.0, 0.0, &[]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn coincident_negative_pair() {
        let z = array![[0.3, -0.1], [0.3, -0.1]];
        let l = array![[1u8, 0], [0, 1]];
        let out = contrastive_loss(z.view(), l.view(), 1.0, 0.0, &[]).unwrap();
        assert_abs_diff_eq!(out.loss, 0.5, epsilon = 1e-15);
        assert!(out.grad_z.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn far_negative_pair_is_free() {
        let z = array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]];
        let l = Array2::from_shape_fn((3, 3), |(i, j)| u8::from(i == j));
        let out = contrastive_loss(z.view(), l.view(), 1.0, 0.0, &[]).unwrap();
        // the pair at distance exactly m and the far pairs contribute nothing
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l1_term_and_gradient() {
        let z = Array2::from_elem((2, 2), 0.0);
        let g1 = array![1.0, -2.0, 0.0];
        let g2 = array![0.5];
        let out = contrastive_loss(z.view(), ones(2).view(), 1.0, 0.1, &[g1.view(), g2.view()]).unwrap();
        assert_abs_diff_eq!(out.loss, 0.35, epsilon = 1e-15);
        assert_eq!(out.grad_gammas[0], array![0.1, -0.1, 0.0]);
        assert_eq!(out.grad_gammas[1], array![0.1]);
    }

    #[test]
    fn graph_embedding_examples() {
        let z = array![[0.0, 0.0], [3.0, 4.0]];
        let s = array![[1.0, 0.2], [0.2, 1.0]];
        let out = graph_embedding_loss(z.view(), s.view(), 0.0, &[]).unwrap();
        assert_abs_diff_eq!(out.loss, 25.0 * 0.2 / 2.0, epsilon = 1e-12);

        let g = array![1.0, -1.0];
        let zero_s = Array2::zeros((2, 2));
        let out = graph_embedding_loss(z.view(), zero_s.view(), 0.5, &[g.view()]).unwrap();
        assert_abs_diff_eq!(out.loss, 1.0, epsilon = 1e-15);
        let same = Array2::from_elem((2, 2), 1.0);
        let out = graph_embedding_loss(same.view(), s.view(), 0.5, &[g.view()]).unwrap();
        assert_abs_diff_eq!(out.loss, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Array2::zeros((2, 4));
        let (loss, grad) = softmax_cross_entropy(logits.view(), &[0, 3]).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[0, 0]], (0.25 - 1.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[[0, 1]], 0.125, epsilon = 1e-12);
        assert!(softmax_cross_entropy(logits.view(), &[0, 4]).is_err());
    }

    fn numeric_grad(z: &Array2<f64>, l: &Array2<u8>, m: f64) -> Array2<f64> {
        let h = 1e-6;
        Array2::from_shape_fn(z.dim(), |(i, k)| {
            let mut p = z.clone();
            p[[i, k]] += h;
            let mut q = z.clone();
            q[[i, k]] -= h;
            let fp = contrastive_loss(p.view(), l.view(), m, 0.0, &[]).unwrap().loss;
            let fq = contrastive_loss(q.view(), l.view(), m, 0.0, &[]).unwrap().loss;
            (fp - fq) / (2.0 * h)
        })
    }

    #[test]
    fn contrastive_gradient_matches_differences() {
        let z = array![[0.1, 0.9, -0.3], [0.4, 0.2, 0.0], [-0.5, 0.3, 0.8], [0.0, -0.2, 0.1]];
        let l = array![[1u8, 1, 0, 0], [1, 1, 0, 1], [0, 0, 1, 0], [0, 1, 0, 1]];
        let out = contrastive_loss(z.view(), l.view(), 1.5, 0.0, &[]).unwrap();
        let num = numeric_grad(&z, &l, 1.5);
        for (a, b) in out.grad_z.iter().zip(num.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_nonnegative(
            vals in proptest::collection::vec(-2.0f64..2.0, 12),
            bits in proptest::collection::vec(0u8..2, 16),
            shift in 1usize..4,
            lam in 0.0f64..0.5,
        ) {
            let z = Array2::from_shape_vec((4, 3), vals).unwrap();
            let mut l = Array2::from_shape_fn((4, 4), |(i, j)| bits[i.min(j) * 4 + i.max(j)]);
            for i in 0..4 { l[[i, i]] = 1; }
            let g = Array1::from(vec![0.3, -0.2]);
            let base = contrastive_loss(z.view(), l.view(), 1.0, lam, &[g.view()]).unwrap();
            prop_assert!(base.loss >= 0.0);
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let zp = Array2::from_shape_fn((4, 3), |(i, k)| z[[perm[i], k]]);
            let lp = Array2::from_shape_fn((4, 4), |(i, j)| l[[perm[i], perm[j]]]);
            let permuted = contrastive_loss(zp.view(), lp.view(), 1.0, lam, &[g.view()]).unwrap();
            prop_assert!((base.loss - permuted.loss).abs() < 1e-12);
        }
    }
}
