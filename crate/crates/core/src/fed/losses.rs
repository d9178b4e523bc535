//! Negative-sampling loss and mutual-distillation terms, with the
//! derivatives the trainer backpropagates into the scores.

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid_clamped(x: f64) -> f64 {
    sigmoid(x).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln()
}

/// `-log σ(γ + S⁺) - (1/n) Σ log σ(-γ - S⁻)`.
pub fn ns_loss(positive: f64, negatives: &[f64], margin: f64) -> f64 {
    let n = negatives.len().max(1) as f64;
    -log_sigmoid_clamped(margin + positive)
        - negatives
            .iter()
            .map(|&s| log_sigmoid_clamped(-margin - s))
            .sum::<f64>()
            / n
}

/// Derivatives of [`ns_loss`] w.r.t. the positive score and each negative
/// score, written into `out` (`out[0]` positive, `out[1..]` negatives).
pub fn ns_loss_grad(positive: f64, negatives: &[f64], margin: f64, out: &mut [f64]) {
    let n = negatives.len().max(1) as f64;
    out[0] = sigmoid(margin + positive) - 1.0;
    for (o, &s) in out[1..].iter_mut().zip(negatives) {
        *o = sigmoid(margin + s) / n;
    }
}

/// Softmax over candidate scores.
pub fn candidate_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::invalid(
            "candidate distribution needs at least two scores",
        ));
    }
    Ok(softmax(scores))
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for (o, s) in out.iter_mut().zip(scores) {
        *o = s - lse;
    }
}

/// `KL(p ‖ q) = Σ p log(p/q)` with `0 log 0 = 0` and `q` floored at 1e-12.
pub fn distill_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum())
}

/// Scratch space for [`mutual_distill`], reused across triples.
#[derive(Debug, Default)]
pub struct DistillScratch {
    log_p: Vec<f64>,
    log_q: Vec<f64>,
}

/// Symmetric distillation `KL(P_l‖P_g) + KL(P_g‖P_l)` between the softmaxes
/// of two score vectors. Returns the loss and writes its derivatives w.r.t.
/// the local and global scores into `d_local` / `d_global`.
pub fn mutual_distill(
    local: &[f64],
    global: &[f64],
    scratch: &mut DistillScratch,
    d_local: &mut [f64],
    d_global: &mut [f64],
) -> f64 {
    let n = local.len();
    scratch.log_p.resize(n, 0.0);
    scratch.log_q.resize(n, 0.0);
    log_softmax(local, &mut scratch.log_p);
    log_softmax(global, &mut scratch.log_q);
    let (lp, lq) = (&scratch.log_p, &scratch.log_q);
    let mut kl_pq = 0.0;
    let mut kl_qp = 0.0;
    for i in 0..n {
        let diff = lp[i] - lq[i];
        kl_pq += lp[i].exp() * diff;
        kl_qp -= lq[i].exp() * diff;
    }
    for i in 0..n {
        let (p, q) = (lp[i].exp(), lq[i].exp());
        let diff = lp[i] - lq[i];
        // ∂KL(p‖q)/∂a = p(log p − log q − KL(p‖q)), ∂KL(q‖p)/∂a = p − q
        d_local[i] = p * (diff - kl_pq) + (p - q);
        d_global[i] = q * (-diff - kl_qp) + (q - p);
    }
    kl_pq + kl_qp
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn ns_loss_hand_values() {
        assert_abs_diff_eq!(ns_loss(0.0, &[0.0], 0.0), 2.0 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(ns_loss(0.0, &[0.0, 0.0], 0.0), 2.0 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(1.38629, ns_loss(0.0, &[0.0], 0.0), epsilon = 1e-5);
        assert!(ns_loss(1e6, &[-1e6], 0.0) < 1e-9);
        assert!(ns_loss(-1e6, &[1e6], 0.0).is_finite());
    }

    #[test]
    fn candidate_distribution_hand_values() {
        assert_eq!(candidate_distribution(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = candidate_distribution(&[LN_2, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
        assert!(candidate_distribution(&[1.0]).is_err());
    }

    #[test]
    fn distill_loss_hand_values() {
        assert_eq!(distill_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            distill_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            LN_2,
            epsilon = 1e-12
        );
        let want = 0.5 * LN_2 + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(
            distill_loss(&[0.5, 0.5], &[0.25, 0.75]).unwrap(),
            want,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(want, 0.14384, epsilon = 1e-5);
        assert!(distill_loss(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let eps = 1e-5;
        let mut up = x.to_vec();
        up[i] += eps;
        let mut down = x.to_vec();
        down[i] -= eps;
        (f(&up) - f(&down)) / (2.0 * eps)
    }

    proptest! {
        #[test]
        fn ns_gradient_matches_finite_differences(
            pos in -5.0f64..5.0,
            negs in proptest::collection::vec(-5.0f64..5.0, 1..6),
            margin in 0.0f64..3.0,
        ) {
            let mut all = vec![pos];
            all.extend(&negs);
            let mut g = vec![0.0; all.len()];
            ns_loss_grad(pos, &negs, margin, &mut g);
            for i in 0..all.len() {
                let num = fd(|x| ns_loss(x[0], &x[1..], margin), &all, i);
                prop_assert!((g[i] - num).abs() < 1e-6);
            }
        }

        #[test]
        fn ns_loss_is_monotone(pos in -5.0f64..5.0, negs in proptest::collection::vec(-5.0f64..5.0, 1..6), bump in 0.01f64..2.0) {
            let base = ns_loss(pos, &negs, 0.0);
            prop_assert!(ns_loss(pos + bump, &negs, 0.0) < base);
            let mut lower = negs.clone();
            lower[0] -= bump;
            prop_assert!(ns_loss(pos, &lower, 0.0) < base);
        }

        #[test]
        fn distribution_is_normalised_and_shift_invariant(
            scores in proptest::collection::vec(-20.0f64..20.0, 2..10),
            shift in -50.0f64..50.0,
        ) {
            let p = candidate_distribution(&scores).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = candidate_distribution(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn distill_is_nonnegative_and_zero_on_equal(
            a in proptest::collection::vec(-5.0f64..5.0, 2..8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let p = candidate_distribution(&a).unwrap();
            let q = candidate_distribution(&b[..a.len()]).unwrap();
            prop_assert!(distill_loss(&p, &q).unwrap() >= -1e-15);
            prop_assert!(distill_loss(&p, &p).unwrap().abs() <= 1e-15);
        }

        #[test]
        fn mutual_distill_gradient_matches_finite_differences(
            local in proptest::collection::vec(-4.0f64..4.0, 2..7),
            global in proptest::collection::vec(-4.0f64..4.0, 7),
        ) {
            let n = local.len();
            let global = &global[..n];
            let sym = |l: &[f64], g: &[f64]| {
                let p = candidate_distribution(l).unwrap();
                let q = candidate_distribution(g).unwrap();
                distill_loss(&p, &q).unwrap() + distill_loss(&q, &p).unwrap()
            };
            let mut scratch = DistillScratch::default();
            let (mut dl, mut dg) = (vec![0.0; n], vec![0.0; n]);
            let loss = mutual_distill(&local, global, &mut scratch, &mut dl, &mut dg);
            prop_assert!((loss - sym(&local, global)).abs() < 1e-9);
            for i in 0..n {
                prop_assert!((dl[i] - fd(|x| sym(x, global), &local, i)).abs() < 1e-6);
                prop_assert!((dg[i] - fd(|x| sym(&local, x), global, i)).abs() < 1e-6);
            }
        }
    }
}
