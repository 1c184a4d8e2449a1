//! Fixed-precision number output. Values are first rounded to 6 decimals,
//! then the 6-decimal integer is rounded to the displayed precision. Both
//! steps round half to even, so `0.00005` shows as `0.0000` and `0.00015`
//! as `0.0002`.

const INTERNAL_DIGITS: u32 = 6;

/// `x` as an integer count of `1e-6` units, ties to even.
fn micro_units(x: f64) -> i128 {
    (x * 10f64.powi(INTERNAL_DIGITS as i32)).round_ties_even() as i128
}

/// Divides by `10^shift`, rounding half to even.
fn shift_half_even(v: i128, shift: u32) -> i128 {
    let d = 10i128.pow(shift);
    let (q, r) = (v.div_euclid(d), v.rem_euclid(d));
    if 2 * r > d || (2 * r == d && q % 2 != 0) {
        q + 1
    } else {
        q
    }
}

/// `x` with `digits` decimals (at most 6).
pub fn fixed(x: f64, digits: u32) -> String {
    if !x.is_finite() {
        return format!("{}", x);
    }
    let digits = digits.min(INTERNAL_DIGITS);
    let v = shift_half_even(micro_units(x), INTERNAL_DIGITS - digits);
    let sign = if v < 0 { "-" } else { "" };
    let a = v.unsigned_abs();
    if digits == 0 {
        return format!("{}{}", sign, a);
    }
    let d = 10u128.pow(digits);
    format!(
        "{}{}.{:0width$}",
        sign,
        a / d,
        a % d,
        width = digits as usize
    )
}

/// Display precision.
pub fn show(x: f64) -> String {
    fixed(x, 4)
}

/// Machine-readable text precision (CSV).
pub fn exact6(x: f64) -> String {
    fixed(x, INTERNAL_DIGITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_even() {
        assert_eq!(show(0.00005), "0.0000");
        assert_eq!(show(0.00015), "0.0002");
        assert_eq!(show(0.00025), "0.0002");
        assert_eq!(show(-0.00015), "-0.0002");
        assert_eq!(show(0.71329), "0.7133");
        assert_eq!(show(0.499949), "0.4999");
    }

    #[test]
    fn small_negatives_lose_their_sign() {
        assert_eq!(show(-1e-9), "0.0000");
        assert_eq!(show(-0.0123456), "-0.0123");
    }

    #[test]
    fn six_decimals() {
        assert_eq!(exact6(1.0), "1.000000");
        assert_eq!(exact6(0.1234565), "0.123456");
        assert_eq!(fixed(2.5, 0), "2");
        assert_eq!(show(f64::INFINITY), "inf");
    }
}
