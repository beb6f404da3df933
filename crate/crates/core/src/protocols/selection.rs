//! Scoring a retraining run from its recorded curves.
//!
//! Index 0 of a retraining curve is the snapshot before any D2 update; both
//! protocols score only points reached after at least one update.

use super::Curve;

/// Score of one retraining run under the realistic protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainScore {
    /// Best χ(D2, D2, t).
    pub q_r_star: f64,
    /// Curve index of the stopping point.
    pub stop_index: usize,
    /// χ(D2, D1∪D2, t_E).
    pub quality: f64,
}

/// Earliest index `i ≥ 1` with `d2[i] > 0.99 · max(d2[1..])`, together with
/// that maximum. When the maximum is 0 no point exceeds it and the first
/// post-update point is returned.
pub fn stopping_index(d2: &[f64]) -> Option<(usize, f64)> {
    let scored = d2.get(1..).filter(|s| !s.is_empty())?;
    let q_r_star = scored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = 0.99 * q_r_star;
    let offset = scored.iter().position(|&q| q > threshold).unwrap_or(0);
    Some((1 + offset, q_r_star))
}

/// Realistic score: union accuracy at the D2-based stopping point.
pub fn realistic_quality(d2: &Curve, union: &Curve) -> Option<RetrainScore> {
    if d2.iterations != union.iterations {
        return None;
    }
    let (stop_index, q_r_star) = stopping_index(&d2.accuracy)?;
    Some(RetrainScore {
        q_r_star,
        stop_index,
        quality: union.accuracy[stop_index],
    })
}

/// Prescient score: the best union accuracy at any post-update point.
pub fn prescient_quality(union: &Curve) -> Option<f64> {
    let scored = union.accuracy.get(1..).filter(|s| !s.is_empty())?;
    Some(scored.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}
