//! TransE and ComplEx scoring with analytic gradients.
//!
//! ComplEx vectors use the split layout `[re_0..re_k, im_0..im_k]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    ComplEx,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransE => "TransE",
            ModelKind::ComplEx => "ComplEx",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "complex" => Ok(ModelKind::ComplEx),
            _ => Err(Error::invalid(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            _ => Err(Error::invalid(format!("unknown norm {s:?}"))),
        }
    }
}

/// A scoring function: model kind plus the TransE norm (ignored by ComplEx).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scorer {
    pub kind: ModelKind,
    pub norm: Norm,
}

impl Scorer {
    pub const fn new(kind: ModelKind, norm: Norm) -> Self {
        Self { kind, norm }
    }

    /// Unchecked score; slices must share a length (even for ComplEx).
    #[inline]
    pub fn score(&self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        match self.kind {
            ModelKind::TransE => transe(h, r, t, self.norm),
            ModelKind::ComplEx => complex(h, r, t),
        }
    }

    /// Adds `coeff * ∂S/∂{h,r,t}` into the three gradient buffers.
    #[inline]
    pub fn accumulate_grad(
        &self,
        (h, r, t): (&[f64], &[f64], &[f64]),
        coeff: f64,
        gh: &mut [f64],
        gr: &mut [f64],
        gt: &mut [f64],
    ) {
        match self.kind {
            ModelKind::TransE => transe_grad(h, r, t, self.norm, coeff, gh, gr, gt),
            ModelKind::ComplEx => complex_grad(h, r, t, coeff, gh, gr, gt),
        }
    }

    pub fn check(&self, h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
        check_dims(h, r, t)?;
        if self.kind == ModelKind::ComplEx && !h.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "ComplEx vectors need even length, got {}",
                h.len()
            )));
        }
        Ok(())
    }
}

fn check_dims(h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
    for v in [r, t] {
        if v.len() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                actual: v.len(),
            });
        }
    }
    Ok(())
}

#[inline]
fn transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let it = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => -it.map(f64::abs).sum::<f64>(),
        Norm::L2 => -it.map(|v| v * v).sum::<f64>().sqrt(),
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn transe_grad(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    norm: Norm,
    coeff: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    let scale = match norm {
        Norm::L1 => coeff,
        Norm::L2 => {
            let n = transe(h, r, t, Norm::L2).abs();
            if n == 0.0 {
                return;
            }
            coeff / n
        }
    };
    for i in 0..h.len() {
        let v = h[i] + r[i] - t[i];
        // d(-|v|)/dv; subgradient 0 at the kink
        let dv = match norm {
            Norm::L1 => -v.signum() * (v != 0.0) as u8 as f64,
            Norm::L2 => -v,
        } * scale;
        gh[i] += dv;
        gr[i] += dv;
        gt[i] -= dv;
    }
}

#[inline]
fn complex(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let k = h.len() / 2;
    let (hr, hi) = h.split_at(k);
    let (rr, ri) = r.split_at(k);
    let (tr, ti) = t.split_at(k);
    let mut s = 0.0;
    for j in 0..k {
        let re = hr[j] * rr[j] - hi[j] * ri[j];
        let im = hr[j] * ri[j] + hi[j] * rr[j];
        s += re * tr[j] + im * ti[j];
    }
    s
}

#[inline]
fn complex_grad(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    coeff: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    let k = h.len() / 2;
    for j in 0..k {
        let (a, b) = (h[j], h[j + k]);
        let (c, d) = (r[j], r[j + k]);
        let (e, f) = (t[j], t[j + k]);
        gh[j] += coeff * (c * e + d * f);
        gh[j + k] += coeff * (c * f - d * e);
        gr[j] += coeff * (a * e + b * f);
        gr[j + k] += coeff * (a * f - b * e);
        gt[j] += coeff * (a * c - b * d);
        gt[j + k] += coeff * (a * d + b * c);
    }
}

/// `-‖h + r − t‖` under the chosen norm.
pub fn score_transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(transe(h, r, t, norm))
}

/// `Re(Σ h_k · r_k · conj(t_k))` on split-layout vectors.
pub fn score_complex(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    Scorer::new(ModelKind::ComplEx, Norm::L1).check(h, r, t)?;
    Ok(complex(h, r, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

pub fn grad_score(
    kind: ModelKind,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    norm: Norm,
) -> Result<ScoreGrad> {
    let scorer = Scorer::new(kind, norm);
    scorer.check(h, r, t)?;
    let n = h.len();
    let mut g = ScoreGrad {
        head: vec![0.0; n],
        relation: vec![0.0; n],
        tail: vec![0.0; n],
    };
    scorer.accumulate_grad((h, r, t), 1.0, &mut g.head, &mut g.relation, &mut g.tail);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn transe_hand_values() {
        assert_eq!(
            score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], Norm::L1).unwrap(),
            0.0
        );
        assert_eq!(
            score_transe(&[1.0, 2.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L1).unwrap(),
            -4.0
        );
        assert_eq!(
            score_transe(&[0.0, 0.0], &[0.0, 0.0], &[3.0, -4.0], Norm::L2).unwrap(),
            -5.0
        );
        assert!(score_transe(&[0.0], &[0.0, 1.0], &[0.0], Norm::L1).is_err());
    }

    #[test]
    fn complex_hand_values() {
        // one complex component: [re, im]
        assert_eq!(
            score_complex(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(),
            1.0
        );
        // Re((1+i)·2·conj(i)) = Re(2 - 2i)
        assert_eq!(
            score_complex(&[1.0, 1.0], &[2.0, 0.0], &[0.0, 1.0]).unwrap(),
            2.0
        );
        // Re(i·i·1)
        assert_eq!(
            score_complex(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap(),
            -1.0
        );
        assert!(score_complex(&[1.0], &[1.0], &[1.0]).is_err());
        assert!(score_complex(&[1.0, 0.0], &[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn transe_l2_gradient_vanishes_at_exact_translation() {
        let g = grad_score(
            ModelKind::TransE,
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[1.0, 1.0],
            Norm::L2,
        )
        .unwrap();
        assert!(g
            .head
            .iter()
            .chain(&g.relation)
            .chain(&g.tail)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn complex_gradient_hand_value() {
        let g = grad_score(
            ModelKind::ComplEx,
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[1.0, 0.0],
            Norm::L1,
        )
        .unwrap();
        assert_eq!(g.head, vec![1.0, 0.0]);
    }

    fn central_difference(scorer: Scorer, v: [&[f64]; 3], slot: usize, i: usize, eps: f64) -> f64 {
        let mut x: [Vec<f64>; 3] = [v[0].to_vec(), v[1].to_vec(), v[2].to_vec()];
        x[slot][i] += eps;
        let up = scorer.score(&x[0], &x[1], &x[2]);
        x[slot][i] -= 2.0 * eps;
        let down = scorer.score(&x[0], &x[1], &x[2]);
        (up - down) / (2.0 * eps)
    }

    #[test]
    fn random_instances_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for (kind, norm) in [
            (ModelKind::TransE, Norm::L1),
            (ModelKind::TransE, Norm::L2),
            (ModelKind::ComplEx, Norm::L1),
        ] {
            let scorer = Scorer::new(kind, norm);
            let mut done = 0;
            while done < 20 {
                let d = 6;
                let mut draw = || {
                    (0..d)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<f64>>()
                };
                let (h, r, t) = (draw(), draw(), draw());
                if norm == Norm::L1
                    && h.iter()
                        .zip(&r)
                        .zip(&t)
                        .any(|((a, b), c)| (a + b - c).abs() < 1e-3)
                {
                    continue;
                }
                let g = grad_score(kind, &h, &r, &t, norm).unwrap();
                for (slot, grad) in [&g.head, &g.relation, &g.tail].into_iter().enumerate() {
                    for i in 0..d {
                        let fd = central_difference(scorer, [&h, &r, &t], slot, i, 1e-4);
                        assert_relative_eq!(grad[i], fd, epsilon = 1e-6, max_relative = 1e-4);
                    }
                }
                done += 1;
            }
        }
    }

    fn vec6() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 6)
    }

    proptest! {
        #[test]
        fn transe_is_nonpositive_and_zero_on_translation(h in vec6(), r in vec6(), t in vec6()) {
            for norm in [Norm::L1, Norm::L2] {
                prop_assert!(score_transe(&h, &r, &t, norm).unwrap() <= 0.0);
                let exact: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
                prop_assert_eq!(score_transe(&h, &r, &exact, norm).unwrap().abs(), 0.0);
            }
        }

        #[test]
        fn complex_conjugate_symmetry(h in vec6(), r in vec6(), t in vec6()) {
            let mut conj = r.clone();
            conj[3..].iter_mut().for_each(|v| *v = -*v);
            let a = score_complex(&h, &r, &t).unwrap();
            let b = score_complex(&t, &conj, &h).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
