//! Log-domain accumulation.

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(values)))` with max subtraction. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 2.0]), 2.0);
    }

    #[test]
    fn large_values_do_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_direct_sum(xs in proptest::collection::vec(-20.0f64..20.0, 1..12)) {
            let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
            prop_assert!((log_sum_exp(&xs) - direct).abs() < 1e-10);
            let folded = xs.iter().fold(f64::NEG_INFINITY, |acc, &x| log_add_exp(acc, x));
            prop_assert!((folded - direct).abs() < 1e-10);
        }

        #[test]
        fn shift_identity(xs in proptest::collection::vec(-20.0f64..20.0, 1..12), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - c).abs() < 1e-12);
        }
    }
}
