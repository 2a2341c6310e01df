//! Log-domain scalar primitives.
//!
//! Every probability in this crate lives in natural-log space. `-inf` is the
//! log of zero and is a legal value everywhere (masked tokens, unreachable
//! branches); NaN never is.

use std::f64::consts::LN_2;

use crate::error::{domain, Result};

/// A real number in the natural-log domain. May be `-inf`, never NaN.
pub type LogValue = f64;

/// `log(1 - exp(a))` for `a <= 0`.
///
/// Branches at `a = -ln 2` between `log(-expm1(a))` and `log1p(-exp(a))`,
/// which keeps full relative accuracy on both sides. `a = 0` gives `-inf`.
pub fn log1mexp(a: f64) -> Result<f64> {
    if a.is_nan() || a > 0.0 {
        return domain(format!("log1mexp requires a <= 0, got {a}"));
    }
    Ok(log1mexp_unchecked(a))
}

#[inline]
pub(crate) fn log1mexp_unchecked(a: f64) -> f64 {
    if a > -LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// `log(1 + exp(a))`, exact to rounding for all finite `a`.
#[inline]
pub fn log1pexp(a: f64) -> f64 {
    if a < 18.0 {
        a.exp().ln_1p()
    } else {
        // exp(-a) < 2e-8 here, so log1p(exp(-a)) == exp(-a) to double precision.
        a + (-a).exp()
    }
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + log1pexp(lo - hi)
}

/// Max-shifted `log(sum(exp(values)))`. All `-inf` input yields `-inf`.
pub fn logsumexp(values: &[LogValue]) -> Result<LogValue> {
    if values.is_empty() {
        return domain("logsumexp of an empty list");
    }
    if values.iter().any(|v| v.is_nan()) {
        return domain("logsumexp input contains NaN");
    }
    Ok(logsumexp_unchecked(values))
}

pub(crate) fn logsumexp_unchecked(values: &[LogValue]) -> LogValue {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes unnormalized log-weights in place so that they logsumexp to 0.
///
/// Returns the normalizer. If every entry is `-inf` the slice is left as is.
pub fn log_normalize(values: &mut [LogValue]) -> LogValue {
    let norm = logsumexp_unchecked(values);
    if norm.is_finite() {
        for v in values.iter_mut() {
            *v -= norm;
        }
    }
    norm
}
