use rand::Rng;

use super::{split_points, Distribution, Family, MomentPair, PdtModel, QUAD_ABS, QUAD_REL};
use crate::math::quad::tanh_sinh_tol;
use crate::math::{beta_regularized, ln_beta};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BetaPdt {
    a: f64,
    b: f64,
    ln_norm: f64,
}

impl BetaPdt {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(Error::InvalidInput(format!("Beta parameters must be positive, got a={a}, b={b}")));
        }
        Ok(BetaPdt { a, b, ln_norm: ln_beta(a, b) })
    }

    pub fn from_moments(m: MomentPair) -> Result<Self> {
        m.validate()?;
        if m.m2 >= m.m1 {
            return Err(Error::InvalidInput(format!(
                "moments m1={}, m2={} leave no room for a Beta law (m2 must be below m1)",
                m.m1, m.m2
            )));
        }
        let a = (m.m1 - m.m2) / (m.m2 - m.m1 * m.m1) * m.m1;
        let b = a * (1.0 / m.m1 - 1.0);
        if b <= 0.0 {
            return Err(Error::Degenerate(format!("mean transmittance {} leaves no Beta shape", m.m1)));
        }
        BetaPdt::new(a, b)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn density_pair(&self, x: f64, one_minus_x: f64) -> f64 {
        let lead = if self.a == 1.0 { 0.0 } else { (self.a - 1.0) * x.ln() };
        let tail = if self.b == 1.0 { 0.0 } else { (self.b - 1.0) * one_minus_x.ln() };
        (lead + tail - self.ln_norm).exp()
    }

    pub fn density(&self, eta: f64) -> f64 {
        if !(0.0..=1.0).contains(&eta) {
            return 0.0;
        }
        self.density_pair(eta, 1.0 - eta)
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        beta_regularized(self.a, self.b, eta)
    }

    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let mean = a / (a + b);
        let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
        let mut breaks = vec![0.5];
        breaks.extend([-8.0, -3.0, 0.0, 3.0, 8.0].iter().map(|k| mean + k * sd));
        let points = split_points(lo.max(0.0), hi.min(1.0), &breaks);
        let mut total = 0.0;
        for w in points.windows(2) {
            let (p, q) = (w[0], w[1]);
            total += if p == 0.0 && a < 1.0 {
                // y = x^a removes the singularity at 0
                let scale = (-self.ln_norm).exp() / a;
                let integral = tanh_sinh_tol(
                    |y, _, _| {
                        let x = y.powf(1.0 / a);
                        let tail = if b == 1.0 { 1.0 } else { ((b - 1.0) * (-x).ln_1p()).exp() };
                        g(x) * tail
                    },
                    0.0,
                    q.powf(a),
                    QUAD_REL,
                    QUAD_ABS,
                );
                scale * integral
            } else if q == 1.0 && b < 1.0 {
                // w = (1 - x)^b removes the singularity at 1
                let scale = (-self.ln_norm).exp() / b;
                let integral = tanh_sinh_tol(
                    |w, _, _| {
                        let one_minus = w.powf(1.0 / b);
                        let x = 1.0 - one_minus;
                        let lead = if a == 1.0 { 1.0 } else { ((a - 1.0) * (-one_minus).ln_1p()).exp() };
                        g(x) * lead
                    },
                    0.0,
                    (1.0 - p).powf(b),
                    QUAD_REL,
                    QUAD_ABS,
                );
                scale * integral
            } else {
                let at_one = q == 1.0;
                tanh_sinh_tol(
                    |x, from_q, _| g(x) * self.density_pair(x, if at_one { from_q } else { 1.0 - x }),
                    p,
                    q,
                    QUAD_REL,
                    QUAD_ABS,
                )
            };
        }
        total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let dist = rand_distr::Beta::new(self.a, self.b).expect("parameters validated at construction");
        rng.sample(dist)
    }
}

/// Beta PDT with parameters fixed by the two moments.
pub fn beta_from_moments(m: MomentPair) -> Result<PdtModel> {
    Ok(PdtModel::new(Family::Beta, Distribution::Beta(BetaPdt::from_moments(m)?)))
}
