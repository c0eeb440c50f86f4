//! Triplet embedding loss and the task-relevance regularizer.
//!
//! Both are hinges of the form `[|a - b|^2 + margin - |a - c|^2]_+` on
//! squared Euclidean distances. On the hinge boundary the subgradient is
//! taken from the inactive side (zero).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::synthetic::{Dataset, TripletBatch};
use crate::variant::TaskModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    /// Triplet margin.
    pub alpha: f64,
    /// Relevance-regularizer margin.
    pub beta: f64,
    /// Relevance-regularizer weight; zero disables it.
    pub lambda: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            lambda: 0.0,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Value of a three-argument hinge and its gradient with respect to each
/// argument.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeTerm {
    pub value: f64,
    pub grads: [Vec<f64>; 3],
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn hinge(a: &[f64], near: &[f64], far: &[f64], margin: f64) -> Result<HingeTerm> {
    if near.len() != a.len() {
        return Err(Error::len(a.len(), near.len()));
    }
    if far.len() != a.len() {
        return Err(Error::len(a.len(), far.len()));
    }
    let z = squared_distance(a, near) + margin - squared_distance(a, far);
    let n = a.len();
    if z <= 0.0 {
        return Ok(HingeTerm {
            value: 0.0,
            grads: [alloc::vec![0.0; n], alloc::vec![0.0; n], alloc::vec![0.0; n]],
        });
    }
    let mut ga = Vec::with_capacity(n);
    let mut gn = Vec::with_capacity(n);
    let mut gf = Vec::with_capacity(n);
    for i in 0..n {
        ga.push(2.0 * (far[i] - near[i]));
        gn.push(-2.0 * (a[i] - near[i]));
        gf.push(2.0 * (a[i] - far[i]));
    }
    Ok(HingeTerm {
        value: z,
        grads: [ga, gn, gf],
    })
}

/// `[|f_a - f_p|^2 + alpha - |f_a - f_n|^2]_+`; gradients ordered
/// (anchor, positive, negative).
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<HingeTerm> {
    hinge(anchor, positive, negative, alpha)
}

/// `max(0, |W_i - W_j|^2 + beta - |W_i - W_k|^2)` where task pair (i, j) is
/// declared more related than (i, k).
pub fn relevance_regularizer(w_i: &[f64], w_j: &[f64], w_k: &[f64], beta: f64) -> Result<HingeTerm> {
    hinge(w_i, w_j, w_k, beta)
}

/// Unit-norm copy of `f`; a zero vector stays zero.
pub fn l2_normalize(f: &[f64]) -> Vec<f64> {
    let norm = libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());
    if norm < 1e-12 {
        return alloc::vec![0.0; f.len()];
    }
    f.iter().map(|v| v / norm).collect()
}

/// Pulls a gradient taken at `l2_normalize(f)` back to `f`.
pub fn l2_normalize_backward(f: &[f64], grad: &[f64]) -> Vec<f64> {
    let norm = libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());
    if norm < 1e-12 {
        return alloc::vec![0.0; f.len()];
    }
    let u: Vec<f64> = f.iter().map(|v| v / norm).collect();
    let dot: f64 = u.iter().zip(grad).map(|(a, b)| a * b).sum();
    grad.iter().zip(&u).map(|(g, ui)| (g - ui * dot) / norm).collect()
}

/// Sum of per-triplet losses, each embedded through its own task's route.
pub fn batch_triplet_loss(
    batch: &TripletBatch,
    model: &TaskModel,
    dataset: &Dataset,
    alpha: f64,
    normalize: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("triplet batch is empty".into()));
    }
    let embed = |idx: usize, task: usize| -> Result<Vec<f64>> {
        let f = model
            .forward(&dataset.inputs[idx], task, false)?
            .embedding
            .into_values();
        Ok(if normalize { l2_normalize(&f) } else { f })
    };
    let mut total = 0.0;
    for t in &batch.entries {
        let a = embed(t.anchor, t.task)?;
        let p = embed(t.positive, t.task)?;
        let n = embed(t.negative, t.task)?;
        total += triplet_loss(&a, &p, &n, alpha)?.value;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use alloc::vec;

    #[test]
    fn inactive_hinge() {
        let t = triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 0.2).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hand_evaluated_value() {
        let t = triplet_loss(&[0.0], &[0.5], &[0.6], 0.2).unwrap();
        assert!((t.value - 0.09).abs() < 1e-12);
    }

    #[test]
    fn anchor_equals_negative() {
        let a = [0.3, -1.0];
        let p = [1.3, -1.0 + 2.0];
        let d2 = 1.0 + 4.0;
        let t = triplet_loss(&a, &p, &a, 0.2).unwrap();
        assert!((t.value - (d2 + 0.2)).abs() < 1e-12);
        assert_eq!(t.grads[1], vec![2.0 * (p[0] - a[0]), 2.0 * (p[1] - a[1])]);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            triplet_loss(&[0.0], &[0.0, 1.0], &[0.0], 0.2),
            Err(Error::Shape { .. })
        ));
        assert!(relevance_regularizer(&[0.0], &[0.0], &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let r = relevance_regularizer(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 2.0], 0.1).unwrap();
        assert_eq!(r.value, 0.0);
        let r = relevance_regularizer(&[1.0], &[2.0], &[1.5], 0.5).unwrap();
        assert!((r.value - 1.25).abs() < 1e-12);
        let r = relevance_regularizer(&[4.0, -2.0], &[0.1, 7.0], &[0.1, 7.0], 0.3).unwrap();
        assert!((r.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences() {
        let a = [0.3, -0.7, 1.1];
        let p = [0.9, 0.2, 0.4];
        let n = [0.5, -0.4, 1.0];
        let t = triplet_loss(&a, &p, &n, 0.5).unwrap();
        assert!(t.value > 0.0);
        let all: Vec<f64> = a.iter().chain(&p).chain(&n).copied().collect();
        let f = |x: &[f64]| triplet_loss(&x[0..3], &x[3..6], &x[6..9], 0.5).unwrap().value;
        let numeric = central_difference(f, &all, 1e-5).unwrap();
        let analytic: Vec<f64> = t.grads.concat();
        assert!(max_relative_error(&analytic, &numeric) < 1e-8);
    }

    #[test]
    fn normalize_backward_matches_central_differences() {
        let f = [0.3, -1.2, 0.8];
        let g = [1.0, 0.5, -2.0];
        let analytic = l2_normalize_backward(&f, &g);
        let numeric =
            central_difference(|x| l2_normalize(x).iter().zip(&g).map(|(a, b)| a * b).sum(), &f, 1e-6).unwrap();
        assert!(max_relative_error(&analytic, &numeric) < 1e-7);
    }

    #[test]
    fn margins_validate() {
        assert!(Margins::default().validate().is_ok());
        let bad = Margins {
            alpha: -0.1,
            ..Margins::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn hinges_are_non_negative(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            p in proptest::collection::vec(-5.0f64..5.0, 4),
            n in proptest::collection::vec(-5.0f64..5.0, 4),
            margin in 0.0f64..2.0,
        ) {
            proptest::prop_assert!(triplet_loss(&a, &p, &n, margin).unwrap().value >= 0.0);
            proptest::prop_assert!(relevance_regularizer(&a, &p, &n, margin).unwrap().value >= 0.0);
        }
    }
}
