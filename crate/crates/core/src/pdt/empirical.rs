use rand::Rng;

use super::{Distribution, Family, PdtModel};
use crate::{Error, Result};

const MIN_BINS: usize = 16;
const MAX_BINS: usize = 512;

/// Step CDF of a sample list plus a Freedman–Diaconis histogram density.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalPdt {
    sorted: Vec<f64>,
    lo: f64,
    bin_width: f64,
    counts: Vec<u64>,
}

impl EmpiricalPdt {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empirical distribution needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample {bad}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let (mut lo, mut hi) = (sorted[0], sorted[n - 1]);
        if hi - lo <= 0.0 {
            lo -= 1e-9;
            hi += 1e-9;
        }
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let h = 2.0 * iqr / (n as f64).cbrt();
        let bins = if h > 0.0 { ((hi - lo) / h).ceil() as usize } else { MAX_BINS };
        let bins = bins.clamp(MIN_BINS, MAX_BINS);
        let bin_width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for x in &sorted {
            let k = (((x - lo) / bin_width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(EmpiricalPdt { sorted, lo, bin_width, counts })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }

    /// Histogram as `(bin centre, density)` pairs.
    pub fn histogram(&self) -> Vec<(f64, f64)> {
        let scale = 1.0 / (self.len() as f64 * self.bin_width);
        self.counts
            .iter()
            .enumerate()
            .map(|(k, c)| (self.lo + (k as f64 + 0.5) * self.bin_width, *c as f64 * scale))
            .collect()
    }

    pub fn density(&self, eta: f64) -> f64 {
        let t = (eta - self.lo) / self.bin_width;
        if !(t >= 0.0 && t <= self.bins() as f64) {
            return 0.0;
        }
        let k = (t as usize).min(self.bins() - 1);
        self.counts[k] as f64 / (self.len() as f64 * self.bin_width)
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        self.sorted.partition_point(|x| *x <= eta) as f64 / self.len() as f64
    }

    /// Sample average of `g` over the samples inside `[lo, hi]`.
    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let start = self.sorted.partition_point(|x| *x < lo);
        let end = self.sorted.partition_point(|x| *x <= hi);
        if end <= start {
            return 0.0;
        }
        self.sorted[start..end].iter().map(|x| g(*x)).sum::<f64>() / self.len() as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sorted[rng.random_range(0..self.len())]
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Empirical PDT of a list of sampled transmittances.
pub fn empirical_pdt(samples: &[f64]) -> Result<PdtModel> {
    Ok(PdtModel::new(Family::Empirical, Distribution::Empirical(EmpiricalPdt::new(samples)?)))
}
