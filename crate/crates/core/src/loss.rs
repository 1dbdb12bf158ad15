//! Contrastive loss over paired first/third embeddings.
//!
//! For pair `j` with distance `d_j = ‖z_f − z_t‖` and label `y_j`:
//! `L = Σ_j y_j d_j² + (1 − y_j) max(0, m − d_j)²`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::net::Embedding;

/// Default hinge margin.
pub const DEFAULT_MARGIN: f64 = 0.9;

/// Loss of a single pair given its distance.
pub fn pair_loss(distance: f64, synchronized: bool, margin: f64) -> f64 {
    if synchronized {
        distance * distance
    } else {
        let h = (margin - distance).max(0.0);
        h * h
    }
}

fn check(z_f: &[Embedding], z_t: &[Embedding], y: &[bool], margin: f64) -> Result<()> {
    if z_f.len() != z_t.len() || z_f.len() != y.len() {
        return Err(Error::BatchMismatch(z_f.len(), z_t.len(), y.len()));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig("margin must be positive".into()));
    }
    for (a, b) in z_f.iter().zip(z_t) {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
        }
    }
    Ok(())
}

/// Summed contrastive loss over a batch.
pub fn contrastive_loss(z_f: &[Embedding], z_t: &[Embedding], y: &[bool], margin: f64) -> Result<f64> {
    check(z_f, z_t, y, margin)?;
    Ok(z_f
        .iter()
        .zip(z_t)
        .zip(y)
        .map(|((a, b), &s)| pair_loss(a.distance(b), s, margin))
        .sum())
}

/// Loss with gradients with respect to every first- and third-view embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_first: Vec<Vec<f64>>,
    pub grad_third: Vec<Vec<f64>>,
}

/// [`contrastive_loss`] plus its gradient. At `d = 0` on a negative pair the
/// direction is undefined and the gradient is taken as zero.
pub fn contrastive_loss_grad(
    z_f: &[Embedding],
    z_t: &[Embedding],
    y: &[bool],
    margin: f64,
) -> Result<LossGrad> {
    check(z_f, z_t, y, margin)?;
    let mut loss = 0.0;
    let mut grad_first = Vec::with_capacity(z_f.len());
    let mut grad_third = Vec::with_capacity(z_f.len());
    for ((a, b), &s) in z_f.iter().zip(z_t).zip(y) {
        let diff: Vec<f64> = a.0.iter().zip(&b.0).map(|(p, q)| p - q).collect();
        let d = math::norm(&diff);
        loss += pair_loss(d, s, margin);
        // dL/d(diff)
        let scale = if s {
            2.0
        } else if d < margin && d > 0.0 {
            -2.0 * (margin - d) / d
        } else {
            0.0
        };
        let g: Vec<f64> = diff.iter().map(|v| scale * v).collect();
        grad_third.push(g.iter().map(|v| -v).collect());
        grad_first.push(g);
    }
    Ok(LossGrad { loss, grad_first, grad_third })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn at_distance(d: f64) -> (Embedding, Embedding) {
        (Embedding(vec![0.0, 0.0, 0.0]), Embedding(vec![0.6 * d, 0.0, 0.8 * d]))
    }

    #[test]
    fn tabulated_cases() {
        let m = DEFAULT_MARGIN;
        let z = Embedding(vec![0.2, -0.4]);
        assert_eq!(contrastive_loss(&[z.clone()], &[z], &[true], m).unwrap(), 0.0);
        let (a, b) = at_distance(1.2);
        assert_eq!(contrastive_loss(&[a], &[b], &[false], m).unwrap(), 0.0);
        let (a, b) = at_distance(0.4);
        assert!((contrastive_loss(&[a], &[b], &[false], m).unwrap() - 0.25).abs() < 1e-12);
        let (a, b) = at_distance(0.5);
        assert!((contrastive_loss(&[a], &[b], &[true], m).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batch_errors() {
        let z = Embedding(vec![0.0]);
        assert_eq!(
            contrastive_loss(&[z.clone()], &[], &[true], 0.9),
            Err(Error::BatchMismatch(1, 0, 1))
        );
        assert!(contrastive_loss(&[z.clone()], &[z], &[true], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_in_views(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
            y: bool,
        ) {
            let (za, zb) = (Embedding(a), Embedding(b));
            let l1 = contrastive_loss(&[za.clone()], &[zb.clone()], &[y], 0.9).unwrap();
            let l2 = contrastive_loss(&[zb], &[za], &[y], 0.9).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert!(l1 >= 0.0);
        }

        #[test]
        fn monotone_in_distance(d1 in 0.0f64..2.0, d2 in 0.0f64..2.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(pair_loss(lo, false, 0.9) >= pair_loss(hi, false, 0.9));
            prop_assert!(pair_loss(lo, true, 0.9) <= pair_loss(hi, true, 0.9));
        }
    }
}
