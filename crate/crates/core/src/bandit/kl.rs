use crate::error::{Error, Result};

/// KL divergence in nats between Bernoulli(`p`) and Bernoulli(`q`).
///
/// `0 · ln(0 / x)` is taken as 0. Returns `+inf` when `q` sits on the
/// boundary and `p` differs from it.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    for (field, v) in [("p", p), ("q", q)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::DomainError { field, value: v });
        }
    }
    if p == q {
        return Ok(0.0);
    }
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    Ok((term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_means_have_zero_divergence() {
        assert_eq!(kl_bernoulli(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(kl_bernoulli(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(kl_bernoulli(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn matches_high_precision_value() {
        // 40-digit evaluation of the closed form.
        let expected = 0.533_280_498_629_109_995_5;
        let got = kl_bernoulli(0.47, 0.89).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got}");
    }

    #[test]
    fn boundary_cases() {
        assert_eq!(kl_bernoulli(0.3, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(kl_bernoulli(0.3, 0.0).unwrap(), f64::INFINITY);
        assert!((kl_bernoulli(1.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((kl_bernoulli(0.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(kl_bernoulli(-0.1, 0.5).is_err());
        assert!(kl_bernoulli(0.5, 1.1).is_err());
        assert!(kl_bernoulli(f64::NAN, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_on_diagonal(p in 0.0f64..=1.0, q in 0.001f64..0.999) {
            let d = kl_bernoulli(p, q).unwrap();
            prop_assert!(d >= 0.0);
            if (p - q).abs() > 1e-6 {
                prop_assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn convex_in_second_argument() {
        let h = 1e-3;
        for pi in 0..=20 {
            let p = pi as f64 / 20.0;
            let mut q = 0.01;
            while q < 0.99 {
                let f = |x: f64| kl_bernoulli(p, x).unwrap();
                let second = (f(q + h) - 2.0 * f(q) + f(q - h)) / (h * h);
                assert!(second >= -1e-9, "p={p} q={q} d2={second}");
                q += 0.01;
            }
        }
    }
}
