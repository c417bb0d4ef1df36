/// Principal branch of the Lambert W function for non-negative arguments.
pub fn lambert_w(x: f64) -> f64 {
    assert!(x >= 0.0, "lambert_w defined here for x >= 0");
    if x == 0.0 {
        return 0.0;
    }
    lambert_w_of_exp(x.ln())
}

/// `W(exp(log_arg))`, usable when the argument itself would overflow.
///
/// Solves `w + ln w = log_arg` by Newton iteration in `s = ln w`, where the
/// residual `exp(s) + s - log_arg` is convex and increasing.
pub fn lambert_w_of_exp(log_arg: f64) -> f64 {
    let mut s = if log_arg > 1.5 {
        (log_arg - log_arg.ln()).ln()
    } else {
        log_arg - (1.0 + log_arg.exp()).ln()
    };
    for _ in 0..100 {
        let w = s.exp();
        let step = (w + s - log_arg) / (w + 1.0);
        s -= step;
        if step.abs() < 1e-16 * (1.0 + s.abs()) {
            break;
        }
    }
    s.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((lambert_w(1.0) - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!((lambert_w(std::f64::consts::E) - 1.0).abs() < 1e-15);
        assert!((lambert_w(1e-10) - (1e-10 - 1e-20)).abs() < 1e-24);
        assert_eq!(lambert_w(0.0), 0.0);
    }

    #[test]
    fn defining_identity_over_wide_range() {
        for log_arg in [-30.0, -5.0, -0.3, 0.0, 0.7, 3.0, 50.0, 800.0] {
            let w = lambert_w_of_exp(log_arg);
            let resid = w + w.ln() - log_arg;
            assert!(resid.abs() < 1e-12 * (1.0 + log_arg.abs()), "L={log_arg}");
        }
    }
}
