use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvSummary, FoldPlan};
use super::sample_sd;
use crate::error::{Error, Result};
use crate::infer::{fit_rpml, FitConfig};
use crate::ingest::SignPanel;
use crate::model::CouplingSet;
use crate::sample::{glauber_sample, GlauberConfig};

/// `sqrt(N)` times the RMS difference of off-diagonal couplings.
pub fn reconstruction_error(truth: &CouplingSet, estimate: &CouplingSet) -> Result<f64> {
    let n = truth.n();
    if estimate.n() != n {
        return Err(Error::Shape(format!("N = {n} versus N = {}", estimate.n())));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = truth.j[i][j] - estimate.j[i][j];
                sum += d * d;
            }
        }
    }
    Ok((n as f64).sqrt() * (sum / (n * (n - 1)) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub n: usize,
    pub t: usize,
    pub j_mean: f64,
    pub seed: u64,
    pub mean_recovered: f64,
    /// Spread of the recovered couplings when every true coupling is `j_mean`.
    pub sigma_noise: f64,
    pub sigma_j: Option<f64>,
    pub ratio: Option<f64>,
}

/// Refits Glauber data generated from homogeneous couplings; the spread of
/// the recovered couplings is pure estimation noise.
pub fn noise_ratio_study(
    n: usize,
    t: usize,
    j_mean: f64,
    sigma_j: Option<f64>,
    config: &FitConfig,
    glauber: &GlauberConfig,
) -> Result<NoiseStudy> {
    if n < 3 {
        return Err(Error::Validation("noise study needs at least 3 entities".into()));
    }
    let panel = glauber_sample(&CouplingSet::homogeneous(n, j_mean), t, glauber)?;
    let fit = fit_rpml(&panel, 0, config)?;
    let upper = fit.params.upper_couplings();
    let mean_recovered = upper.iter().sum::<f64>() / upper.len() as f64;
    let sigma_noise = sample_sd(&upper);
    Ok(NoiseStudy {
        n,
        t,
        j_mean,
        seed: glauber.seed,
        mean_recovered,
        sigma_noise,
        sigma_j,
        ratio: sigma_j.map(|s| sigma_noise / s),
    })
}

/// Generating couplings for the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingSource {
    Homogeneous { j_mean: f64 },
    Params(CouplingSet),
}

impl CouplingSource {
    pub fn params(&self, n: usize) -> Result<CouplingSet> {
        match self {
            CouplingSource::Homogeneous { j_mean } => Ok(CouplingSet::homogeneous(n, *j_mean)),
            CouplingSource::Params(p) if p.n() == n && p.n_lags() == 0 => Ok(p.clone()),
            CouplingSource::Params(p) => Err(Error::Shape(format!(
                "coupling source has N = {}, L = {}; expected N = {n}, L = 0",
                p.n(),
                p.n_lags()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtificialResult {
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub truth: CouplingSet,
    pub mean_accuracy: f64,
    pub mean_auc: f64,
    pub summary: CvSummary,
    /// Error of a fit on the whole generated panel.
    pub reconstruction_error: f64,
}

/// Generate Glauber data from known couplings, then cross-validate the
/// memoryless model on it: the best scores the model can be expected to
/// reach on data that is truly pairwise.
pub fn artificial_benchmark(
    n: usize,
    t: usize,
    source: &CouplingSource,
    config: &FitConfig,
    folds: usize,
    glauber: &GlauberConfig,
) -> Result<ArtificialResult> {
    let truth = source.params(n)?;
    let panel = glauber_sample(&truth, t, glauber)?;
    let plan = FoldPlan::for_panel(t, 0, folds)?;
    let cv = cross_validate(&panel, 0, config, &plan)?;
    let full = fit_rpml(&panel, 0, config)?;
    Ok(ArtificialResult {
        n,
        t,
        seed: glauber.seed,
        reconstruction_error: reconstruction_error(&truth, &full.params)?,
        truth,
        mean_accuracy: cv.summary.mean_accuracy,
        mean_auc: cv.summary.mean_auc,
        summary: cv.summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: i64,
    pub correlation: f64,
}

/// Pearson correlation of `s_{i,t}` with `s_{j,t+lag}` for every lag in
/// `[-max_lag, max_lag]`, over the overlapping bins.
pub fn sign_cross_correlation(panel: &SignPanel, i: usize, j: usize, max_lag: usize) -> Result<Vec<LagCorrelation>> {
    let n = panel.n_entities();
    if i >= n || j >= n {
        return Err(Error::Shape(format!("entity index out of range for N = {n}")));
    }
    let t = panel.n_bins();
    if t <= max_lag + 1 {
        return Err(Error::InsufficientData(format!(
            "T = {t} must exceed max_lag + 1 = {}",
            max_lag + 1
        )));
    }
    let (a, b) = (&panel.signs[i], &panel.signs[j]);
    let max_lag = max_lag as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let shift = lag.unsigned_abs() as usize;
            let (x, y) = if lag >= 0 {
                (&a[..t - shift], &b[shift..])
            } else {
                (&a[shift..], &b[..t - shift])
            };
            Ok(LagCorrelation {
                lag,
                correlation: pearson(x, y).ok_or_else(|| {
                    Error::UndefinedCorrelation(format!("entity {i} or {j} is constant at lag {lag}"))
                })?,
            })
        })
        .collect()
}

fn pearson(x: &[i8], y: &[i8]) -> Option<f64> {
    let m = x.len() as f64;
    let mx = x.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
    let my = y.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (f64::from(a) - mx, f64::from(b) - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
