//! C `%g`-style formatting with a fixed number of significant digits.

pub fn sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.00012345, "0.00012345"),
            (0.000012345, "1.2345e-05"),
            (9.9999999999, "10"),
            (-17.0, "-17"),
        ];
        for (x, want) in cases {
            assert_eq!(sig(x, 9), want, "{x}");
        }
    }

    #[test]
    fn nine_digits_round_trip_within_tolerance() {
        for x in [std::f64::consts::PI, -0.0636, 1e-7, 12345.678901234] {
            let back: f64 = sig(x, 9).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8);
        }
    }
}
