//! Numerical integration: adaptive Gauss–Kronrod, tanh–sinh on finite
//! intervals with endpoint singularities, and Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 20_000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let est = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (est, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
///
/// Stops when the summed error estimate drops below
/// `max(abs_tol, rel_tol * |integral|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidInput("integration bounds must be finite".into()));
    }
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Numerical(format!(
                "adaptive quadrature did not converge on [{a}, {b}]: estimate {total}, error {total_err}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval collapsed to machine resolution; accept what we have
            heap.push(worst);
            break;
        }
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite integral on [{a}, {b}]")));
    }
    // re-sum to shed accumulated rounding from the running updates
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Integral over `[a, b]` after the substitution `x = exp(t)`; suited to
/// integrands spread over many decades (`0 < a < b`).
pub fn integrate_log<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidInput(format!("log-scale quadrature needs 0 < a < b, got [{a}, {b}]")));
    }
    integrate(|t| {
        let x = t.exp();
        f(x) * x
    }, a.ln(), b.ln(), rel_tol, 0.0)
}

/// Tanh–sinh quadrature over `[a, b]`.
///
/// The integrand receives `(x, b - x, x - a)` so that densities singular at
/// an endpoint can be evaluated without cancellation near either end.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    tanh_sinh_tol(f, a, b, rel_tol, 0.0)
}

/// [`tanh_sinh`] that also stops once successive refinements differ by less
/// than `abs_tol`.
pub fn tanh_sinh_tol<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let t_max = 6.5;
    let node = |t: f64| -> Option<f64> {
        let u = FRAC_PI_2 * t.sinh();
        let w = FRAC_PI_2 * t.cosh() / (u.cosh() * u.cosh());
        // distance from the nearer endpoint, in units of `half`
        let d = 2.0 / (1.0 + (2.0 * u.abs()).exp());
        if d == 0.0 || w == 0.0 {
            return None;
        }
        let (x, from_b, from_a) = if u >= 0.0 {
            (b - half * d, half * d, b - a - half * d)
        } else {
            (a + half * d, b - a - half * d, half * d)
        };
        if from_a <= 0.0 || from_b <= 0.0 {
            return None;
        }
        let v = f(x, from_b, from_a);
        Some(w * v)
    };

    let mut h = 1.0;
    let mut sum = node(0.0).unwrap_or(0.0);
    let mut k = 1;
    while (k as f64) * h <= t_max {
        let t = k as f64 * h;
        sum += node(t).unwrap_or(0.0) + node(-t).unwrap_or(0.0);
        k += 1;
    }
    let mut estimate = sum * h * half;
    for _level in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= t_max {
            let t = k as f64 * h;
            sum += node(t).unwrap_or(0.0) + node(-t).unwrap_or(0.0);
            k += 2;
        }
        let next = sum * h * half;
        let converged = (next - estimate).abs() <= abs_tol.max(rel_tol * next.abs());
        estimate = next;
        if converged && h < 0.1 {
            break;
        }
    }
    estimate
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(&w).map(|(&xi, &wi)| (mid + half * xi, half * wi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_oscillatory() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 0.0).unwrap();
        assert!((v - 0.0).abs() < 1e-13);
        let v = integrate(|x| (50.0 * x).sin(), 0.0, 1.0, 1e-12, 1e-15).unwrap();
        let want = (1.0 - 50f64.cos()) / 50.0;
        assert!((v - want).abs() < 1e-13);
    }

    #[test]
    fn log_quadrature_power_law_over_decades() {
        // \int_1^1e6 x^{-8/3} dx = (3/5)(1 - 1e6^{-5/3})
        let v = integrate_log(|x| x.powf(-8.0 / 3.0), 1.0, 1e6, 1e-12).unwrap();
        let want = 0.6 * (1.0 - 1e6f64.powf(-5.0 / 3.0));
        assert!((v / want - 1.0).abs() < 1e-11);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularities() {
        // Beta(0.3, 0.4) normalization
        let (a, b) = (0.3, 0.4);
        let v = tanh_sinh(|x, one_minus, _| x.powf(a - 1.0) * one_minus.powf(b - 1.0), 0.0, 1.0, 1e-13);
        let beta = (statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b)
            - statrs::function::gamma::ln_gamma(a + b))
        .exp();
        assert!((v / beta - 1.0).abs() < 1e-9, "{v} vs {beta}");
    }

    #[test]
    fn gauss_legendre_is_exact_for_degree_2n_minus_1() {
        for n in [1, 2, 5, 24, 64] {
            let rule = gauss_legendre_on(n, 0.0, 3.0);
            let deg = 2 * n - 1;
            let got: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
            let want = 3f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
            assert!((got / want - 1.0).abs() < 1e-12, "n={n}");
        }
    }
}
