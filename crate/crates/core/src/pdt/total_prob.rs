use rand::Rng;

use super::beta::BetaPdt;
use super::lognormal::TruncatedLogNormal;
use super::wandering::{wandering_scale, wandering_shape};
use super::{BeamGeometry, Distribution, Family, MomentPair, PdtModel};
use crate::math::quad::{gauss_legendre_on, integrate};
use crate::sampling::{SampleSet, MAX_SKIPPED_FRACTION};
use crate::{Error, Result};

const RADIAL_PANELS: usize = 16;
const PANEL_ORDER: usize = 8;
/// Radial quadrature nodes of the deflection mixture.
pub const MIXTURE_RADIAL_NODES: usize = RADIAL_PANELS * PANEL_ORDER;
/// Cut-off of the deflection integral in units of the wandering std.
const RADIAL_CUTOFF: f64 = 10.0;
const OFFSET_GRID_POINTS: usize = 24;
const OFFSET_GRID_SPAN: f64 = 5.0;

/// Finite weighted mixture of distributions.
#[derive(Clone, Debug)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<Distribution>,
    cumulative: Vec<f64>,
}

impl Mixture {
    /// Weights are normalized to unit sum.
    pub fn new(weighted: Vec<(f64, Distribution)>) -> Result<Self> {
        if weighted.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let total: f64 = weighted.iter().map(|(w, _)| *w).sum();
        if weighted.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidInput("mixture weights must be non-negative with positive sum".into()));
        }
        let (weights, components): (Vec<f64>, Vec<Distribution>) =
            weighted.into_iter().map(|(w, d)| (w / total, d)).unzip();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Mixture { weights, components, cumulative })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, &Distribution)> {
        self.weights.iter().copied().zip(&self.components)
    }

    pub fn density(&self, eta: f64) -> f64 {
        self.components().map(|(w, d)| w * d.density(eta)).sum()
    }

    pub fn cdf(&self, eta: f64) -> f64 {
        self.components().map(|(w, d)| w * d.cdf(eta)).sum::<f64>().min(1.0)
    }

    pub fn integrate(&self, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        self.components().map(|(w, d)| w * d.integrate(g, lo, hi)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cumulative.partition_point(|c| *c <= u).min(self.len() - 1);
        self.components[k].sample(rng)
    }
}

/// Conditional family used inside a total-probability mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixtureFamily {
    LogNormal,
    Beta,
}

impl MixtureFamily {
    fn tag(&self) -> Family {
        match self {
            MixtureFamily::LogNormal => Family::TotalProbLogNormal,
            MixtureFamily::Beta => Family::TotalProbBeta,
        }
    }

    fn component(&self, m: MomentPair) -> Result<Distribution> {
        Ok(match self {
            MixtureFamily::LogNormal => Distribution::LogNormal(TruncatedLogNormal::from_moments(m)?),
            MixtureFamily::Beta => Distribution::Beta(BetaPdt::from_moments(m)?),
        })
    }
}

/// Moments of the transmittance for apertures displaced by `r0` from the
/// beam centroid, tabulated on increasing offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMoments {
    pub offsets: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl ConditionalMoments {
    pub fn new(offsets: Vec<f64>, m1: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if offsets.is_empty() || offsets.len() != m1.len() || offsets.len() != m2.len() {
            return Err(Error::InvalidInput(format!(
                "conditional moment table needs equal non-empty columns, got {}, {}, {}",
                offsets.len(),
                m1.len(),
                m2.len()
            )));
        }
        if offsets[0] < 0.0 || offsets.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("offsets must be non-negative and strictly increasing".into()));
        }
        Ok(ConditionalMoments { offsets, m1, m2 })
    }

    pub fn max_offset(&self) -> f64 {
        *self.offsets.last().expect("table is non-empty")
    }

    /// Linear interpolation in the offset; constant beyond either end.
    pub fn at(&self, r0: f64) -> (f64, f64) {
        let k = self.offsets.partition_point(|o| *o <= r0);
        if k == 0 {
            return (self.m1[0], self.m2[0]);
        }
        if k == self.offsets.len() {
            return (self.m1[k - 1], self.m2[k - 1]);
        }
        let t = (r0 - self.offsets[k - 1]) / (self.offsets[k] - self.offsets[k - 1]);
        (
            self.m1[k - 1] + t * (self.m1[k] - self.m1[k - 1]),
            self.m2[k - 1] + t * (self.m2[k] - self.m2[k - 1]),
        )
    }
}

/// Default offsets at which conditional moments are tabulated:
/// Gauss–Legendre nodes on `[0, 5 σ_bw]`.
pub fn default_offset_grid(wandering_std: f64) -> Vec<f64> {
    if !(wandering_std > 0.0) {
        return vec![0.0];
    }
    gauss_legendre_on(OFFSET_GRID_POINTS, 0.0, OFFSET_GRID_SPAN * wandering_std)
        .into_iter()
        .map(|(x, _)| x)
        .collect()
}

/// Conditional moments of aperture `aperture` at the offsets `r0_grid`,
/// from the displaced-aperture averages stored with each record.
pub fn conditional_moments(set: &SampleSet, aperture: usize, r0_grid: &[f64]) -> Result<ConditionalMoments> {
    let stored = set.config.conditional_offsets();
    let apertures = set.apertures().len();
    if aperture >= apertures {
        return Err(Error::InvalidInput(format!("no aperture with index {aperture}")));
    }
    if stored.is_empty() {
        return Err(Error::InvalidInput("sample set carries no conditional transmittances".into()));
    }
    if set.conditional_attempted > 0 {
        let skipped = set.conditional_skipped as f64 / set.conditional_attempted as f64;
        if skipped > MAX_SKIPPED_FRACTION {
            return Err(Error::Numerical(format!(
                "{:.2}% of displaced apertures left the grid (limit {:.0}%)",
                100.0 * skipped,
                100.0 * MAX_SKIPPED_FRACTION
            )));
        }
    }
    let max_offset = *stored.last().expect("non-empty");
    if let Some(r) = r0_grid.iter().find(|r| !(**r >= 0.0 && **r <= max_offset * (1.0 + 1e-12))) {
        return Err(Error::InvalidInput(format!(
            "offset {r} m is outside the simulated range [0, {max_offset}] m"
        )));
    }
    let k = stored.len();
    let mut m1 = Vec::with_capacity(k);
    let mut m2 = Vec::with_capacity(k);
    for j in 0..k {
        let col = aperture * k + j;
        let (mut s1, mut s2, mut n) = (0.0, 0.0, 0usize);
        for r in &set.records {
            let (a, b) = (r.cond_eta[col], r.cond_eta_sq[col]);
            if a.is_finite() && b.is_finite() {
                s1 += a;
                s2 += b;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Numerical(format!("no record has a valid displaced aperture at {} m", stored[j])));
        }
        m1.push(s1 / n as f64);
        m2.push(s2 / n as f64);
    }
    let table = ConditionalMoments::new(stored, m1, m2)?;
    let (g1, g2): (Vec<f64>, Vec<f64>) = r0_grid.iter().map(|r| table.at(*r)).unzip();
    ConditionalMoments::new(r0_grid.to_vec(), g1, g2)
}

/// Radial nodes `r0` and normalized weights of the Rayleigh deflection law.
fn radial_rule(wandering_std: f64) -> Vec<(f64, f64)> {
    if !(wandering_std > 0.0) {
        return vec![(0.0, 1.0)];
    }
    let width = RADIAL_CUTOFF / RADIAL_PANELS as f64;
    let mut nodes = Vec::with_capacity(MIXTURE_RADIAL_NODES);
    for p in 0..RADIAL_PANELS {
        let a = p as f64 * width;
        for (u, w) in gauss_legendre_on(PANEL_ORDER, a, a + width) {
            nodes.push((wandering_std * u, w * u * (-0.5 * u * u).exp()));
        }
    }
    let total: f64 = nodes.iter().map(|(_, w)| w).sum();
    nodes.into_iter().map(|(r, w)| (r, w / total)).collect()
}

fn mixture_over_deflection<F>(wandering_std: f64, family: MixtureFamily, moments_at: F) -> Result<PdtModel>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut weighted = Vec::with_capacity(MIXTURE_RADIAL_NODES);
    for (r0, w) in radial_rule(wandering_std) {
        let (m1, m2) = moments_at(r0);
        let component = MomentPair::new(m1, m2)
            .and_then(|m| family.component(m))
            .map_err(|e| Error::ModelInapplicable(format!("conditional moments at r0 = {r0:.6e} m: {e}")))?;
        weighted.push((w, component));
    }
    Ok(PdtModel::new(family.tag(), Distribution::Mixture(Mixture::new(weighted)?)))
}

/// PDT from conditional moments mixed over a Gaussian centroid deflection.
pub fn total_probability_pdt(cond: &ConditionalMoments, wandering_std: f64, family: MixtureFamily) -> Result<PdtModel> {
    if !(wandering_std.is_finite() && wandering_std >= 0.0) {
        return Err(Error::InvalidInput(format!("wandering std must be non-negative, got {wandering_std}")));
    }
    mixture_over_deflection(wandering_std, family, |r0| cond.at(r0))
}

/// Parameters of the weak-wandering conditional moments
/// `⟨η⟩_r0 = η0 exp[-(r0/R)^θ]`, `⟨η²⟩_r0 = h0² exp[-2 (r0/R)^θ]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakWanderingFit {
    pub eta0: f64,
    pub h0_sq: f64,
    pub scale: f64,
    pub shape: f64,
}

impl WeakWanderingFit {
    pub fn new(m: MomentPair, g: BeamGeometry) -> Result<Self> {
        m.validate()?;
        let zeta = 2.0 / g.short_term_width;
        let scale = wandering_scale(zeta, g.aperture_radius);
        let shape = wandering_shape(zeta, g.aperture_radius);
        let s = g.wandering_std;
        let radial = |k: f64| -> Result<f64> {
            if s == 0.0 {
                return Ok(1.0);
            }
            integrate(
                |u| u * (-0.5 * u * u).exp() * (-k * (s * u / scale).powf(shape)).exp(),
                0.0,
                RADIAL_CUTOFF,
                1e-8,
                0.0,
            )
        };
        Ok(WeakWanderingFit { eta0: m.m1 / radial(1.0)?, h0_sq: m.m2 / radial(2.0)?, scale, shape })
    }

    pub fn moments_at(&self, r0: f64) -> (f64, f64) {
        let e = (-(r0 / self.scale).powf(self.shape)).exp();
        (self.eta0 * e, self.h0_sq * e * e)
    }
}

/// Total-probability PDT with conditional moments in the weak-wandering
/// approximation.
pub fn total_probability_weak_wandering(m: MomentPair, g: BeamGeometry, family: MixtureFamily) -> Result<PdtModel> {
    let fit = WeakWanderingFit::new(m, g)?;
    mixture_over_deflection(g.wandering_std, family, |r0| fit.moments_at(r0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ConditionalMoments {
        let offsets: Vec<f64> = (0..11).map(|i| 0.001 * i as f64).collect();
        let m1: Vec<f64> = offsets.iter().map(|r| 0.6 * (-(r / 0.006f64).powi(2)).exp()).collect();
        let m2: Vec<f64> = m1.iter().map(|m| m * m * 1.05).collect();
        ConditionalMoments::new(offsets, m1, m2).unwrap()
    }

    #[test]
    fn interpolation_is_linear_and_flat_outside() {
        let t = table();
        let (a, _) = t.at(0.0015);
        assert!((a - 0.5 * (t.m1[1] + t.m1[2])).abs() < 1e-15);
        assert_eq!(t.at(1.0), (t.m1[10], t.m2[10]));
        assert_eq!(t.at(0.0), (t.m1[0], t.m2[0]));
    }

    #[test]
    fn default_grid_spans_five_std() {
        let g = default_offset_grid(0.002);
        assert_eq!(g.len(), 24);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g[0] > 0.0 && *g.last().unwrap() < 0.01);
        assert_eq!(default_offset_grid(0.0), vec![0.0]);
    }

    #[test]
    fn radial_weights_match_rayleigh_moments() {
        let s = 0.003;
        let rule = radial_rule(s);
        assert_eq!(rule.len(), MIXTURE_RADIAL_NODES);
        let m2: f64 = rule.iter().map(|(r, w)| w * r * r).sum();
        assert!((m2 / (2.0 * s * s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_wandering_reduces_to_centre() {
        let t = table();
        let model = total_probability_pdt(&t, 0.0, MixtureFamily::Beta).unwrap();
        let (m1, m2) = model.moments();
        assert!((m1 - t.m1[0]).abs() < 1e-10 && (m2 - t.m2[0]).abs() < 1e-10);
    }

    #[test]
    fn composite_moments_match_radial_quadrature() {
        let t = table();
        let s = 0.002;
        for family in [MixtureFamily::Beta, MixtureFamily::LogNormal] {
            let model = total_probability_pdt(&t, s, family).unwrap();
            assert!((model.normalization() - 1.0).abs() < 1e-6);
            if family == MixtureFamily::Beta {
                let want: f64 = radial_rule(s).iter().map(|(r, w)| w * t.at(*r).0).sum();
                assert!((model.moments().0 - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_conditional_moments_name_offset() {
        let mut t = table();
        t.m2[5] = t.m1[5] * t.m1[5] * 0.5;
        let err = total_probability_pdt(&t, 0.002, MixtureFamily::Beta).unwrap_err();
        assert!(err.to_string().contains("r0 ="), "{err}");
    }

    #[test]
    fn weak_wandering_reproduces_moments() {
        let g = BeamGeometry::new(0.012, 0.02, 0.004).unwrap();
        let m = MomentPair::new(0.55, 0.31).unwrap();
        let model = total_probability_weak_wandering(m, g, MixtureFamily::Beta).unwrap();
        let (m1, m2) = model.moments();
        assert!((m1 - m.m1).abs() < 1e-6 && (m2 - m.m2).abs() < 1e-6, "{m1} {m2}");
    }

    #[test]
    fn weak_wandering_without_deflection() {
        let g = BeamGeometry::new(0.012, 0.02, 0.0).unwrap();
        let m = MomentPair::new(0.55, 0.31).unwrap();
        let fit = WeakWanderingFit::new(m, g).unwrap();
        assert_eq!(fit.eta0, m.m1);
        assert_eq!(fit.h0_sq, m.m2);
    }
}
