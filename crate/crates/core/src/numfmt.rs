//! Decimal-exact formatting and power-of-ten scaling for `f64`.
//!
//! Config files store lengths in millimetres and powers in milliwatts while
//! the toolkit computes in SI base units. Binary multiplication by 1e-3
//! introduces double rounding, which would break the bit-exact
//! parse→serialize→parse round-trip guarantee of config documents. Instead,
//! powers of ten are applied in decimal space: format the shortest
//! round-trip representation, shift its exponent, re-parse. For any value
//! whose shortest decimal form has at most 15 significant digits (every
//! hand-written config value), scaling up and back down recovers the
//! original bits exactly, because distinct ≤15-digit decimals never collapse
//! to the same `f64`.

/// Returns `x · 10^k`, rounding as if the decimal literal of `x` had its
/// exponent shifted by `k`.
pub fn scale_pow10(x: f64, k: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e').expect("{:e} output always contains an exponent");
    let e: i32 = exp.parse().expect("{:e} exponent is a short integer");
    format!("{mantissa}e{}", e + k)
        .parse()
        .expect("shifted scientific literal is a valid f64")
}

/// Shortest decimal representation of `x` that parses back bit-exactly,
/// preferring positional notation for moderate exponents (−4 ≤ e ≤ 15) and
/// scientific notation otherwise.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".to_string() } else { "0".to_string() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:e}");
    let (_, exp) = sci.split_once('e').expect("{:e} output always contains an exponent");
    let e: i32 = exp.parse().expect("{:e} exponent is a short integer");
    if (-4..=15).contains(&e) {
        // Display for f64 is the shortest positional round-trip form.
        format!("{x}")
    } else {
        sci
    }
}
