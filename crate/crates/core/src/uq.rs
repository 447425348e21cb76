//! Aggregation of per-member head outputs into predictive summaries:
//! ensemble mean, aleatoric/epistemic split, and (1-alpha) intervals.
//!
//! Student-t heads: the interval half-width is
//! `t_{1-alpha/2, nu} * sqrt(s2_mean + ((nu-2)/nu) var_epi)`. The rule is
//! exact in both limits: with no member spread it reduces to the per-member
//! t interval `mu +- t s`, and with no aleatoric scale (nu -> inf) to the
//! Gaussian epistemic interval `mu +- z sigma_epi`; in between it matches
//! the mixture by total variance.
//!
//! Quantile heads carry no nu, so their epistemic widening uses the normal
//! z at the 90% target level.

use crate::error::{Error, Result};
use crate::lstm::HeadOutput;
use crate::tdist::student_t_quantile;

/// Standard normal quantile at 0.95 (widens quantile-head intervals at the
/// alpha = 0.1 target).
pub const Z_LEVEL_95: f64 = 1.644_853_626_951_472_2;
/// Standard normal quantile at 0.9 (converts the (q10, q90) band into a
/// normal-equivalent standard deviation: sigma = (q90 - q10) / (2 z)).
pub const Z_LEVEL_90: f64 = 1.281_551_565_544_600_4;

/// Predictive summary of a Student-t ensemble at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveSummary {
    /// Mean of member locations.
    pub mu: f64,
    /// Mean of member squared scales.
    pub s2_mean: f64,
    /// Population variance of member locations.
    pub var_epi: f64,
    pub nu: f64,
    pub lo: f64,
    pub hi: f64,
    /// Aleatoric std `sqrt(nu/(nu-2) * s2_mean)`.
    pub au: f64,
    /// Epistemic std `sqrt(var_epi)`.
    pub eu: f64,
}

impl PredictiveSummary {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Total predictive std used for standardized residuals.
    pub fn sigma_tot(&self) -> f64 {
        (self.nu / (self.nu - 2.0) * self.s2_mean + self.var_epi).sqrt()
    }
}

/// Predictive summary of a quantile-head ensemble at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSummary {
    /// Mean of member medians (the point prediction).
    pub median: f64,
    pub q10_mean: f64,
    pub q90_mean: f64,
    /// Population std of member medians.
    pub eu: f64,
    pub lo: f64,
    pub hi: f64,
    /// Half the aggregated (q10, q90) band.
    pub au: f64,
}

impl QuantileSummary {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Normal-equivalent total std: band-implied aleatoric plus epistemic.
    pub fn sigma_tot(&self) -> f64 {
        let alea = (self.q90_mean - self.q10_mean) / (2.0 * Z_LEVEL_90);
        (alea * alea + self.eu * self.eu).sqrt()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Summarize Student-t member outputs at level `1 - alpha`. Requires at
/// least one member and nu > 2 (the variance decomposition needs it).
pub fn summarize_t(outputs: &[(f64, f64)], nu: f64, alpha: f64) -> Result<PredictiveSummary> {
    if outputs.is_empty() {
        return Err(Error::Contract("no member outputs to summarize".into()));
    }
    if nu <= 2.0 {
        return Err(Error::Config(format!(
            "variance decomposition requires nu > 2, got {nu}"
        )));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0,1)")));
    }
    let mus: Vec<f64> = outputs.iter().map(|(m, _)| *m).collect();
    let s2s: Vec<f64> = outputs.iter().map(|(_, s)| s * s).collect();
    let mu = mean(&mus);
    let s2_mean = mean(&s2s);
    let var_epi = population_variance(&mus);
    let t_q = student_t_quantile(1.0 - alpha / 2.0, nu)?;
    let h = t_q * (s2_mean + (nu - 2.0) / nu * var_epi).sqrt();
    Ok(PredictiveSummary {
        mu,
        s2_mean,
        var_epi,
        nu,
        lo: mu - h,
        hi: mu + h,
        au: (nu / (nu - 2.0) * s2_mean).sqrt(),
        eu: var_epi.sqrt(),
    })
}

/// Summarize quantile-head member outputs. Quantile crossings within a
/// member are resolved by sorting its three outputs; the interval is the
/// member-averaged (q10, q90) band widened by the epistemic spread of the
/// medians.
pub fn summarize_quantile(outputs: &[[f64; 3]]) -> Result<QuantileSummary> {
    if outputs.is_empty() {
        return Err(Error::Contract("no member outputs to summarize".into()));
    }
    let mut q10 = Vec::with_capacity(outputs.len());
    let mut q50 = Vec::with_capacity(outputs.len());
    let mut q90 = Vec::with_capacity(outputs.len());
    for q in outputs {
        let mut sorted = *q;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite quantiles"));
        q10.push(sorted[0]);
        q50.push(sorted[1]);
        q90.push(sorted[2]);
    }
    let median = mean(&q50);
    let q10_mean = mean(&q10);
    let q90_mean = mean(&q90);
    let eu = population_variance(&q50).sqrt();
    Ok(QuantileSummary {
        median,
        q10_mean,
        q90_mean,
        eu,
        lo: q10_mean - Z_LEVEL_95 * eu,
        hi: q90_mean + Z_LEVEL_95 * eu,
        au: 0.5 * (q90_mean - q10_mean),
    })
}

/// Split a uniform list of head outputs into the t-head pair form.
pub fn t_outputs(outputs: &[HeadOutput]) -> Result<Vec<(f64, f64)>> {
    outputs
        .iter()
        .map(|o| match o {
            HeadOutput::StudentT { mu, s } => Ok((*mu, *s)),
            HeadOutput::Quantile { .. } => Err(Error::Contract(
                "expected Student-t outputs, found quantile head".into(),
            )),
        })
        .collect()
}

/// Split a uniform list of head outputs into quantile triples.
pub fn quantile_outputs(outputs: &[HeadOutput]) -> Result<Vec<[f64; 3]>> {
    outputs
        .iter()
        .map(|o| match o {
            HeadOutput::Quantile { q } => Ok(*q),
            HeadOutput::StudentT { .. } => Err(Error::Contract(
                "expected quantile outputs, found Student-t head".into(),
            )),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_member_collapses_to_per_member_interval() {
        let s = summarize_t(&[(1.5, 0.8)], 4.0, 0.1).unwrap();
        assert_eq!(s.var_epi, 0.0);
        assert_eq!(s.eu, 0.0);
        let t_q = student_t_quantile(0.95, 4.0).unwrap();
        assert_relative_eq!(s.hi - s.mu, t_q * 0.8, epsilon = 1e-12);
        assert_relative_eq!(s.lo, 1.5 - t_q * 0.8, epsilon = 1e-12);
    }

    #[test]
    fn identical_members_match_single_member() {
        let one = summarize_t(&[(0.3, 0.5)], 4.0, 0.1).unwrap();
        let three = summarize_t(&[(0.3, 0.5); 3], 4.0, 0.1).unwrap();
        assert_relative_eq!(one.lo, three.lo, epsilon = 1e-12);
        assert_relative_eq!(one.hi, three.hi, epsilon = 1e-12);
    }

    #[test]
    fn three_member_composition_example() {
        // mu = {0, 1, 2}, s = 1, nu = 4, alpha = 0.1:
        // mu_bar = 1, var_epi = 2/3, h = t_{0.95,4} sqrt(1 + (2/4)(2/3))
        let s = summarize_t(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)], 4.0, 0.1).unwrap();
        assert_relative_eq!(s.mu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.var_epi, 2.0 / 3.0, epsilon = 1e-12);
        let t_q = student_t_quantile(0.95, 4.0).unwrap();
        let h = t_q * (1.0f64 + 0.5 * (2.0 / 3.0)).sqrt();
        assert_relative_eq!(s.hi - s.mu, h, epsilon = 1e-12);
        assert_relative_eq!(s.mu - s.lo, h, epsilon = 1e-12);
    }

    #[test]
    fn summarize_t_contract_errors() {
        assert!(summarize_t(&[], 4.0, 0.1).is_err());
        assert!(matches!(
            summarize_t(&[(0.0, 1.0)], 2.0, 0.1),
            Err(Error::Config(_))
        ));
        assert!(summarize_t(&[(0.0, 1.0)], 4.0, 0.0).is_err());
    }

    #[test]
    fn interval_ordering_invariants() {
        let s = summarize_t(&[(0.0, 1.0), (0.4, 1.2)], 4.0, 0.1).unwrap();
        assert!(s.lo <= s.mu && s.mu <= s.hi);
        assert!(s.width() > 0.0);
        assert!(s.au >= 0.0 && s.eu >= 0.0);
    }

    #[test]
    fn width_monotone_in_scale_spread_and_level() {
        let base = summarize_t(&[(0.0, 1.0), (0.5, 1.0)], 4.0, 0.1).unwrap();
        let bigger_s = summarize_t(&[(0.0, 1.5), (0.5, 1.5)], 4.0, 0.1).unwrap();
        assert!(bigger_s.width() > base.width());
        let bigger_spread = summarize_t(&[(-0.5, 1.0), (1.0, 1.0)], 4.0, 0.1).unwrap();
        assert!(bigger_spread.width() > base.width());
        let higher_level = summarize_t(&[(0.0, 1.0), (0.5, 1.0)], 4.0, 0.05).unwrap();
        assert!(higher_level.width() > base.width());
    }

    #[test]
    fn gaussian_limit_of_combined_width() {
        // nu -> inf: h -> z_{1-alpha/2} sqrt(s2_mean + var_epi)
        let outs = [(0.0, 0.7), (0.6, 0.9), (-0.2, 0.8)];
        let s = summarize_t(&outs, 1e6, 0.1).unwrap();
        let z = 1.644_853_626_951_472_2;
        let want = z * (s.s2_mean + s.var_epi).sqrt();
        let got = 0.5 * s.width();
        assert!(
            (got - want).abs() / want < 1e-3,
            "half-width {got} vs gaussian {want}"
        );
    }

    #[test]
    fn au_depends_only_on_scales_eu_only_on_locations() {
        let a = summarize_t(&[(0.0, 1.0), (1.0, 2.0)], 4.0, 0.1).unwrap();
        let shifted = summarize_t(&[(5.0, 1.0), (6.0, 2.0)], 4.0, 0.1).unwrap();
        assert_relative_eq!(a.au, shifted.au, epsilon = 1e-12);
        assert_relative_eq!(a.eu, shifted.eu, epsilon = 1e-12);
        let rescaled = summarize_t(&[(0.0, 2.0), (1.0, 4.0)], 4.0, 0.1).unwrap();
        assert_relative_eq!(rescaled.eu, a.eu, epsilon = 1e-12);
        assert!(rescaled.au > a.au);
    }

    #[test]
    fn denormalization_equivariance() {
        // affine map y -> a y + b: locations map, widths scale by |a|
        let outs = [(0.1, 0.4), (0.3, 0.6), (-0.2, 0.5)];
        let base = summarize_t(&outs, 4.0, 0.1).unwrap();
        for (a, b) in [(2.5, 1.0), (0.3, -4.0), (7.0, 0.0)] {
            let mapped: Vec<(f64, f64)> =
                outs.iter().map(|(m, s)| (a * m + b, a * s)).collect();
            let sm = summarize_t(&mapped, 4.0, 0.1).unwrap();
            assert_relative_eq!(sm.mu, a * base.mu + b, epsilon = 1e-10);
            assert_relative_eq!(sm.width(), a * base.width(), epsilon = 1e-9);
            assert_relative_eq!(sm.au, a * base.au, epsilon = 1e-10);
            assert_relative_eq!(sm.eu, a * base.eu, epsilon = 1e-10);
        }
    }

    #[test]
    fn quantile_single_member_is_the_raw_band() {
        let s = summarize_quantile(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(s.eu, 0.0);
        assert_eq!((s.lo, s.hi), (1.0, 3.0));
        assert_eq!(s.median, 2.0);
        assert_eq!(s.au, 1.0);
    }

    #[test]
    fn quantile_identical_members_no_widening() {
        let s = summarize_quantile(&[[0.0, 0.5, 1.0]; 4]).unwrap();
        assert_eq!(s.eu, 0.0);
        assert_eq!((s.lo, s.hi), (0.0, 1.0));
    }

    #[test]
    fn quantile_crossings_are_sorted() {
        // one undertrained member emits q10 > q90: rearranged monotonically
        let s = summarize_quantile(&[[3.0, 2.0, 1.0], [0.5, 1.5, 2.5]]).unwrap();
        assert!(s.q10_mean <= s.median && s.median <= s.q90_mean);
        assert_relative_eq!(s.q10_mean, 0.75, epsilon = 1e-12); // (1.0 + 0.5)/2
        assert_relative_eq!(s.q90_mean, 2.75, epsilon = 1e-12); // (3.0 + 2.5)/2
    }

    #[test]
    fn quantile_epistemic_widening() {
        let s = summarize_quantile(&[[0.0, 0.4, 1.0], [0.0, 0.8, 1.0]]).unwrap();
        assert!(s.eu > 0.0);
        assert!(s.lo < 0.0 && s.hi > 1.0);
        assert_relative_eq!(s.lo, 0.0 - Z_LEVEL_95 * s.eu, epsilon = 1e-12);
    }

    #[test]
    fn sigma_tot_definitions() {
        let t = summarize_t(&[(0.0, 1.0), (1.0, 1.0)], 4.0, 0.1).unwrap();
        let expect = (2.0 * t.s2_mean + t.var_epi).sqrt(); // nu/(nu-2) = 2
        assert_relative_eq!(t.sigma_tot(), expect, epsilon = 1e-12);

        let q = summarize_quantile(&[[0.0, 0.5, 1.0]]).unwrap();
        assert_relative_eq!(
            q.sigma_tot(),
            (1.0 - 0.0) / (2.0 * Z_LEVEL_90),
            epsilon = 1e-12
        );
    }
}
