//! Central finite-difference gradients for verifying analytic backward
//! passes. This path never touches the tape's backward machinery: it only
//! re-evaluates a closure at perturbed inputs.

use alloc::vec::Vec;

/// d f / d x by central differences, one probe pair per element.
pub fn central_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest relative discrepancy between two gradient vectors. Entries where
/// both magnitudes fall below `floor` are compared absolutely against
/// `floor` instead, to avoid meaningless ratios near zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale < floor {
            (a - n).abs() / floor
        } else {
            (a - n).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}
