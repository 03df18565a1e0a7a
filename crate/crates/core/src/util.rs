/// 17 significant digits, `.` decimal point.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Exact `∫ p q` over a linear piece of width `h` given endpoint values.
pub(crate) fn linear_product(h: f64, p0: f64, p1: f64, q0: f64, q1: f64) -> f64 {
    h * (2.0 * p0 * q0 + p0 * q1 + p1 * q0 + 2.0 * p1 * q1) / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 12345.678] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn linear_product_of_unit_ramp() {
        // ∫_0^1 x² = 1/3
        assert!((linear_product(1.0, 0.0, 1.0, 0.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }
}
