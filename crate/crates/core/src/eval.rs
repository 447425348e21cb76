//! Accuracy metrics (RMSE, MAE, R^2, explained variance) and the calibration
//! suite: binomial-proportion coverage test with Wilson score bounds, mean
//! interval width, and standardized-residual variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdist::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn check_paired(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_paired(y, yhat)?;
    let ss: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_paired(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as f64)
}

/// `(R^2, explained variance)`: `1 - SS_res/SS_tot` and
/// `1 - Var(y - yhat)/Var(y)`. EV ignores constant bias; R^2 does not.
pub fn r2_ev(y: &[f64], yhat: &[f64]) -> Result<(f64, f64)> {
    check_paired(y, yhat)?;
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::Input("degenerate variance: y is constant".into()));
    }
    let ss_res: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let resid: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    let mean_r = resid.iter().sum::<f64>() / n;
    let var_r: f64 = resid.iter().map(|r| (r - mean_r) * (r - mean_r)).sum::<f64>() / n;
    let var_y = ss_tot / n;
    Ok((1.0 - ss_res / ss_tot, 1.0 - var_r / var_y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageOutcome {
    pub coverage: f64,
    pub low: f64,
    pub high: f64,
    pub calibrated: bool,
}

/// Wilson score interval at confidence `conf` around the empirical
/// proportion `k/n`.
fn wilson_bounds(k: usize, n: usize, conf: f64) -> Result<(f64, f64)> {
    let z = normal_quantile(1.0 - (1.0 - conf) / 2.0)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // rounding must never push the bounds off the empirical proportion
    let low = (center - half).max(0.0).min(p);
    let high = (center + half).min(1.0).max(p);
    Ok((low, high))
}

/// Binomial-proportion coverage test: empirical coverage of the intervals,
/// Wilson bounds at `test_confidence`, and the verdict
/// `nominal in [low, high]`.
pub fn coverage_test(
    y: &[f64],
    intervals: &[Interval],
    nominal: f64,
    test_confidence: f64,
) -> Result<CoverageOutcome> {
    if y.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    if y.len() != intervals.len() {
        return Err(Error::Input(format!(
            "{} targets vs {} intervals",
            y.len(),
            intervals.len()
        )));
    }
    if !(0.0 < nominal && nominal < 1.0) || !(0.0 < test_confidence && test_confidence < 1.0) {
        return Err(Error::Input(
            "nominal and test_confidence must lie in (0,1)".into(),
        ));
    }
    if let Some(bad) = intervals.iter().find(|iv| iv.lo > iv.hi) {
        return Err(Error::Input(format!(
            "malformed interval ({}, {})",
            bad.lo, bad.hi
        )));
    }
    let covered = y
        .iter()
        .zip(intervals)
        .filter(|(v, iv)| iv.lo <= **v && **v <= iv.hi)
        .count();
    let (low, high) = wilson_bounds(covered, y.len(), test_confidence)?;
    let coverage = covered as f64 / y.len() as f64;
    Ok(CoverageOutcome {
        coverage,
        low,
        high,
        calibrated: low <= nominal && nominal <= high,
    })
}

pub fn mean_width(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Input("no intervals".into()));
    }
    Ok(intervals.iter().map(|iv| iv.hi - iv.lo).sum::<f64>() / intervals.len() as f64)
}

/// Variance of the standardized residuals `z_i = (y_i - mu_i) / sigma_i`
/// (population variance; ideal value 1, above 1 means too-narrow bands).
pub fn standardized_variance(y: &[f64], mu: &[f64], sigma_tot: &[f64]) -> Result<f64> {
    check_paired(y, mu)?;
    check_paired(y, sigma_tot)?;
    if let Some(bad) = sigma_tot.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Input(format!("non-positive total scale {bad}")));
    }
    let z: Vec<f64> = y
        .iter()
        .zip(mu)
        .zip(sigma_tot)
        .map(|((y, m), s)| (y - m) / s)
        .collect();
    let n = z.len() as f64;
    let mean_z = z.iter().sum::<f64>() / n;
    Ok(z.iter().map(|v| (v - mean_z) * (v - mean_z)).sum::<f64>() / n)
}

/// Accuracy metrics on denormalized targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub ev: f64,
}

pub fn metrics_report(y: &[f64], yhat: &[f64]) -> Result<MetricsReport> {
    let (r2, ev) = r2_ev(y, yhat)?;
    Ok(MetricsReport {
        rmse: rmse(y, yhat)?,
        mae: mae(y, yhat)?,
        r2,
        ev,
    })
}

/// Full evaluation report; keys are identical across heads and modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub ev: f64,
    pub coverage: f64,
    pub cov_low: f64,
    pub cov_high: f64,
    pub width: f64,
    pub stvar: f64,
    pub nominal: f64,
    pub calibrated: bool,
}

impl EvalReport {
    pub fn assemble(
        metrics: MetricsReport,
        coverage: CoverageOutcome,
        width: f64,
        stvar: f64,
        nominal: f64,
    ) -> Self {
        EvalReport {
            rmse: metrics.rmse,
            mae: metrics.mae,
            r2: metrics.r2,
            ev: metrics.ev,
            coverage: coverage.coverage,
            cov_low: coverage.low,
            cov_high: coverage.high,
            width,
            stvar,
            nominal,
            calibrated: coverage.calibrated,
        }
    }

    /// Flat `key = value` block.
    pub fn to_text(&self) -> String {
        format!(
            "rmse = {}\nmae = {}\nr2 = {}\nev = {}\ncoverage = {}\ncov_low = {}\ncov_high = {}\nwidth = {}\nstvar = {}\nnominal = {}\ncalibrated = {}\n",
            self.rmse,
            self.mae,
            self.r2,
            self.ev,
            self.coverage,
            self.cov_low,
            self.cov_high,
            self.width,
            self.stvar,
            self.nominal,
            self.calibrated
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
