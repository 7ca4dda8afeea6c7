//! Hellinger distance between discrete distributions.

use super::distribution::Distribution;
use super::MetricsError;

/// `H(P, Q) = sqrt(1/2 * sum_i (sqrt(p_i) - sqrt(q_i))^2)`, in `[0, 1]`.
///
/// Each term is evaluated as `(p - q)^2 / (sqrt(p) + sqrt(q))^2`, which is
/// algebraically identical and avoids cancellation when `p ≈ q`.
pub fn hellinger_probs(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::SupportMismatch(format!(
            "{} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    let sum: f64 = p.iter().zip(q).map(|(&a, &b)| term(a, b)).sum();
    Ok((0.5 * sum).sqrt().min(1.0))
}

#[inline]
fn term(p: f64, q: f64) -> f64 {
    let s = p.sqrt() + q.sqrt();
    if s == 0.0 {
        0.0
    } else {
        let d = (p - q) / s;
        d * d
    }
}

/// Hellinger distance of two binary presence distributions given the
/// present-probabilities.
#[inline]
pub fn hellinger_binary(p_present: f64, q_present: f64) -> f64 {
    let sum = term(p_present, q_present) + term(1.0 - p_present, 1.0 - q_present);
    (0.5 * sum).sqrt().min(1.0)
}

/// Hellinger distance of two distributions over the same support.
pub fn hellinger(p: &Distribution, q: &Distribution) -> Result<f64, MetricsError> {
    if !p.same_support(q) {
        return Err(MetricsError::SupportMismatch(format!(
            "{:?} vs {:?}",
            p.support, q.support
        )));
    }
    hellinger_probs(&p.probs, &q.probs)
}
