//! Reconstruction and alignment losses.

use crate::error::{Error, Result};
use crate::graph::Graph;
use fcg_tensor::{Scalar, Tape, Tensor, TensorId};

/// Scaled cosine error: `mean_i (1 - cos(pred_i, target_i))^gamma`.
/// Zero-norm rows on either side contribute `1^gamma` (cosine defined
/// as 0) rather than NaN. Empty selections yield a constant 0.
pub fn sce_loss<F: Scalar>(
    tape: &mut Tape<F>,
    pred: TensorId,
    target: &Tensor<F>,
    gamma: F,
) -> Result<TensorId> {
    if gamma < F::one() {
        return Err(Error::Config(format!("gamma must be >= 1, got {gamma}")));
    }
    let rows = target.shape()[0];
    if rows == 0 {
        return Ok(tape.scalar(F::zero())?);
    }
    if tape.value(pred).shape() != target.shape() {
        return Err(Error::Shape(format!(
            "SCE shapes differ: {:?} vs {:?}",
            tape.value(pred).shape(),
            target.shape()
        )));
    }
    for i in 0..rows {
        let norm: F = target.row(i).iter().map(|&v| v * v).sum();
        if norm == F::zero() {
            log::debug!("SCE target row {i} has zero norm; cosine defined as 0");
        }
    }
    let target = tape.constant(target.clone())?;
    let cos = tape.cosine_rowwise(pred, target)?;
    let ones = tape.constant(Tensor::full(&[rows], F::one()))?;
    let diff = tape.sub(ones, cos)?;
    let powed = tape.pow_const(diff, gamma)?;
    Ok(tape.mean_all(powed)?)
}

/// Node feature reconstruction loss over the masked set.
pub fn loss_node<F: Scalar>(
    tape: &mut Tape<F>,
    x_hat: TensorId,
    g: &Graph<F>,
    masked: &[usize],
    gamma: F,
) -> Result<TensorId> {
    if masked.is_empty() {
        return Ok(tape.scalar(F::zero())?);
    }
    let pred = tape.gather_rows(x_hat, masked)?;
    let rows: Vec<Vec<F>> = masked
        .iter()
        .map(|&i| g.features().row(i).to_vec())
        .collect();
    let target = Tensor::from_rows(&rows)?;
    sce_loss(tape, pred, &target, gamma)
}

/// Edge feature reconstruction loss over the dropped edge set; `e_hat`
/// rows must align with `targets` rows.
pub fn loss_edge<F: Scalar>(
    tape: &mut Tape<F>,
    e_hat: TensorId,
    targets: &Tensor<F>,
    gamma: F,
) -> Result<TensorId> {
    if targets.shape()[0] == 0 {
        return Ok(tape.scalar(F::zero())?);
    }
    sce_loss(tape, e_hat, targets, gamma)
}

/// InfoNCE over matching rows of two representation matrices with
/// cosine similarity at temperature `tau`: the positive pair is the
/// same row index, negatives are every other row of the second view.
pub fn info_nce<F: Scalar>(
    tape: &mut Tape<F>,
    x1: TensorId,
    x2: TensorId,
    tau: F,
) -> Result<TensorId> {
    if tau <= F::zero() {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let (s1, s2) = (tape.value(x1).shape(), tape.value(x2).shape());
    if s1 != s2 || s1.len() != 2 {
        return Err(Error::Shape(format!(
            "InfoNCE expects matching [N, d] matrices, got {s1:?} vs {s2:?}"
        )));
    }
    let n1 = tape.row_normalize(x1)?;
    let n2 = tape.row_normalize(x2)?;
    let sim = tape.matmul_nt(n1, n2)?;
    let logits = tape.scale(sim, F::one() / tau)?;
    let lse = tape.logsumexp_last_axis(logits)?;
    let pos = tape.diag_part(logits)?;
    let per_row = tape.sub(lse, pos)?;
    Ok(tape.mean_all(per_row)?)
}

/// Alignment loss tying both input views to the combined view.
pub fn loss_align<F: Scalar>(
    tape: &mut Tape<F>,
    h_n: TensorId,
    h_e: TensorId,
    h_c: TensorId,
    tau: F,
) -> Result<TensorId> {
    let a = info_nce(tape, h_n, h_c, tau)?;
    let b = info_nce(tape, h_e, h_c, tau)?;
    Ok(tape.add(a, b)?)
}

/// `L = L_node + alpha * L_edge + beta * L_align`.
pub fn loss_total<F: Scalar>(
    tape: &mut Tape<F>,
    l_node: TensorId,
    l_edge: TensorId,
    l_align: TensorId,
    alpha: F,
    beta: F,
) -> Result<TensorId> {
    let e = tape.scale(l_edge, alpha)?;
    let a = tape.scale(l_align, beta)?;
    let s = tape.add(l_node, e)?;
    Ok(tape.add(s, a)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fcg_tensor::Tape;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sce_perfect_reconstruction_is_zero() {
        let x = t(&[vec![1.0, 2.0], vec![-0.5, 0.25]]);
        for gamma in [1.0, 2.0] {
            let mut tape = Tape::new();
            let pred = tape.constant(x.clone()).unwrap();
            let l = sce_loss(&mut tape, pred, &x, gamma).unwrap();
            assert!(tape.value(l).item().abs() < 1e-12, "gamma {gamma}");
        }
    }

    #[test]
    fn sce_antipodal_is_two_for_gamma_one() {
        let x = t(&[vec![1.0, 2.0]]);
        let neg = x.map(|v| -v);
        let mut tape = Tape::new();
        let pred = tape.constant(neg).unwrap();
        let l = sce_loss(&mut tape, pred, &x, 1.0).unwrap();
        assert!((tape.value(l).item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sce_orthogonal_is_one_for_gamma_two() {
        let target = t(&[vec![1.0, 0.0]]);
        let mut tape = Tape::new();
        let pred = tape.constant(t(&[vec![0.0, 3.0]])).unwrap();
        let l = sce_loss(&mut tape, pred, &target, 2.0).unwrap();
        assert!((tape.value(l).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sce_empty_selection_is_zero() {
        let mut tape = Tape::new();
        let pred = tape.constant(Tensor::zeros(&[0, 3])).unwrap();
        let l = sce_loss(&mut tape, pred, &Tensor::zeros(&[0, 3]), 2.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn sce_stays_within_zero_and_two_to_the_gamma() {
        // Cosine lives in [-1, 1], so each term is in [0, 2^gamma].
        let mut state = 0x2468u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (1u64 << 31) as f64 - 0.5
        };
        for gamma in [1.0, 2.0, 3.0] {
            for _ in 0..20 {
                let target = t(&[
                    (0..4).map(|_| next()).collect(),
                    (0..4).map(|_| next()).collect(),
                ]);
                let pred = t(&[
                    (0..4).map(|_| next()).collect(),
                    (0..4).map(|_| next()).collect(),
                ]);
                let mut tape = Tape::new();
                let p = tape.constant(pred).unwrap();
                let l = sce_loss(&mut tape, p, &target, gamma).unwrap();
                let v = tape.value(l).item();
                assert!(
                    v >= 0.0 && v <= 2.0f64.powf(gamma) + 1e-12,
                    "gamma {gamma}: {v}"
                );
            }
        }
    }

    #[test]
    fn sce_gamma_below_one_rejected() {
        let mut tape = Tape::new();
        let pred = tape.constant(t(&[vec![1.0]])).unwrap();
        assert!(sce_loss(&mut tape, pred, &t(&[vec![1.0]]), 0.5).is_err());
    }

    #[test]
    fn info_nce_identity_two_orthonormal_rows() {
        // N=2 orthonormal rows aligned with themselves at tau = 0.2:
        // per-row loss is ln(1 + e^{-5}).
        let x = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut tape = Tape::new();
        let a = tape.constant(x.clone()).unwrap();
        let b = tape.constant(x).unwrap();
        let l = info_nce(&mut tape, a, b, 0.2).unwrap();
        let expect = (1.0 + (-5.0f64).exp()).ln();
        assert!(
            (tape.value(l).item() - expect).abs() < 1e-9,
            "{} vs {}",
            tape.value(l).item(),
            expect
        );
    }

    #[test]
    fn info_nce_single_row_is_exactly_zero() {
        let x = t(&[vec![0.3, 0.4]]);
        let mut tape = Tape::new();
        let a = tape.constant(x.clone()).unwrap();
        let b = tape.constant(x).unwrap();
        let l = info_nce(&mut tape, a, b, 0.2).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn info_nce_invariant_to_row_rescaling() {
        let x = t(&[
            vec![0.5, 1.0, -0.25],
            vec![1.0, -1.0, 0.5],
            vec![0.1, 0.2, 0.9],
        ]);
        let scaled = {
            let mut s = x.clone();
            for (i, f) in [3.0, 0.5, 7.0].into_iter().enumerate() {
                for v in s.row_mut(i) {
                    *v *= f;
                }
            }
            s
        };
        let y = t(&[
            vec![1.0, 0.0, 0.2],
            vec![0.4, 0.4, -0.3],
            vec![-0.2, 0.8, 0.1],
        ]);

        let eval = |xm: &Tensor<f64>| {
            let mut tape = Tape::new();
            let a = tape.constant(xm.clone()).unwrap();
            let b = tape.constant(y.clone()).unwrap();
            let l = info_nce(&mut tape, a, b, 0.3).unwrap();
            tape.value(l).item()
        };
        assert!((eval(&x) - eval(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn info_nce_self_alignment_bounded_by_log_n() {
        // Positive similarity is the row max, so the loss never
        // exceeds log N.
        let x = t(&[
            vec![0.9, 0.1, -0.3],
            vec![-0.4, 0.6, 0.2],
            vec![0.3, -0.8, 0.5],
            vec![0.05, 0.4, 0.7],
        ]);
        for tau in [0.1, 0.2, 1.0, 5.0] {
            let mut tape = Tape::new();
            let a = tape.constant(x.clone()).unwrap();
            let b = tape.constant(x.clone()).unwrap();
            let l = info_nce(&mut tape, a, b, tau).unwrap();
            let v = tape.value(l).item();
            assert!(v >= 0.0 && v <= (4.0f64).ln() + 1e-12, "tau {tau}: {v}");
        }
    }

    #[test]
    fn info_nce_rejects_bad_tau() {
        let x = t(&[vec![1.0, 0.0]]);
        let mut tape = Tape::new();
        let a = tape.constant(x.clone()).unwrap();
        let b = tape.constant(x).unwrap();
        assert!(info_nce(&mut tape, a, b, 0.0).is_err());
        assert!(info_nce(&mut tape, a, b, -1.0).is_err());
    }

    #[test]
    fn total_loss_weights_components_linearly() {
        let mut tape = Tape::<f64>::new();
        let ln = tape.scalar(0.7).unwrap();
        let le = tape.scalar(0.3).unwrap();
        let la = tape.scalar(0.1).unwrap();
        let total = loss_total(&mut tape, ln, le, la, 0.01, 0.00001).unwrap();
        let expect = 0.7 + 0.01 * 0.3 + 0.00001 * 0.1;
        assert!((tape.value(total).item() - expect).abs() < 1e-15);

        let mut tape = Tape::<f64>::new();
        let ln = tape.scalar(0.7).unwrap();
        let le = tape.scalar(0.3).unwrap();
        let la = tape.scalar(0.1).unwrap();
        let total = loss_total(&mut tape, ln, le, la, 0.0, 0.0).unwrap();
        assert!((tape.value(total).item() - 0.7).abs() < 1e-15);
    }
}
