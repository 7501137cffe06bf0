use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, FoldPlan};
use super::roc::{confusion_at, predict_bins, roc, PredictionRun};
use super::{mean, sample_sd};
use crate::error::{Error, Result};
use crate::infer::{fit_rpml_scoped, FitConfig, RpmlScope};
use crate::ingest::SignPanel;
use crate::model::CouplingSet;
use crate::sample::rng_from_seed;

/// Entity count up to which every subset is enumerated.
pub const SUBSET_ENUMERATION_CAP: usize = 12;

/// How the detection level of a study was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Given,
    /// Maximum-accuracy level of the run being scored (or of the learning block).
    MaxAccuracy,
    /// Fallback 0.5 when the reference run has a single class.
    Default,
}

fn pick_alpha(alpha: Option<f64>, reference: &PredictionRun) -> (f64, AlphaSource) {
    match alpha {
        Some(a) => (a, AlphaSource::Given),
        None => match roc(reference) {
            Ok(r) => (r.best_alpha, AlphaSource::MaxAccuracy),
            Err(_) => (0.5, AlphaSource::Default),
        },
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(pos) = (0..k).rev().find(|&p| cur[p] != p + n - k) else {
            return out;
        };
        cur[pos] += 1;
        for q in pos + 1..k {
            cur[q] = cur[q - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub k: usize,
    pub n_subsets: usize,
    /// All `C(N, k)` subsets were used (otherwise a seeded random sample).
    pub enumerated: bool,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_auc: f64,
    pub sd_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStudy {
    pub rows: Vec<SubsetRow>,
    /// Whether mean accuracy never decreases with `k` (reported, not required).
    pub non_decreasing: bool,
    pub seed: u64,
}

/// Cross-validated accuracy of the memoryless model restricted to every
/// `k`-subset of entities. Beyond [`SUBSET_ENUMERATION_CAP`] entities, or
/// when `C(N, k)` exceeds `max_subsets`, a seeded sample of `max_subsets`
/// subsets is used instead; without `max_subsets` that is an error.
pub fn accuracy_vs_subset_size(
    panel: &SignPanel,
    ks: &[usize],
    config: &FitConfig,
    folds: usize,
    max_subsets: Option<usize>,
    seed: u64,
) -> Result<SubsetStudy> {
    let n = panel.n_entities();
    let plan = FoldPlan::for_panel(panel.n_bins(), 0, folds)?;
    let mut rows = Vec::with_capacity(ks.len());
    for (pos, &k) in ks.iter().enumerate() {
        if k == 0 || k > n {
            return Err(Error::Validation(format!("subset size {k} outside 1..={n}")));
        }
        let total = binomial(n, k);
        let enumerate = n <= SUBSET_ENUMERATION_CAP && max_subsets.is_none_or(|m| total <= m as u128);
        let subsets = if enumerate {
            combinations(n, k)
        } else {
            let Some(m) = max_subsets else {
                return Err(Error::Capacity {
                    n,
                    cap: SUBSET_ENUMERATION_CAP,
                });
            };
            let mut rng = rng_from_seed(seed.wrapping_add(pos as u64));
            (0..m)
                .map(|_| {
                    let mut s = sample_indices(&mut rng, n, k).into_vec();
                    s.sort_unstable();
                    s
                })
                .collect()
        };
        let scores: Vec<(f64, f64)> = subsets
            .par_iter()
            .map(|s| {
                let cv = cross_validate(&panel.select_entities(s), 0, config, &plan)?;
                Ok((cv.summary.mean_accuracy, cv.summary.mean_auc))
            })
            .collect::<Result<_>>()?;
        let accs: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let aucs: Vec<f64> = scores.iter().map(|s| s.1).collect();
        rows.push(SubsetRow {
            k,
            n_subsets: subsets.len(),
            enumerated: enumerate,
            mean_accuracy: mean(accs.iter().copied()),
            sd_accuracy: sample_sd(&accs),
            mean_auc: mean(aucs.iter().copied()),
            sd_auc: sample_sd(&aucs),
        });
    }
    let mut sorted: Vec<&SubsetRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.k);
    let non_decreasing = sorted.windows(2).all(|w| w[1].mean_accuracy >= w[0].mean_accuracy);
    Ok(SubsetStudy {
        rows,
        non_decreasing,
        seed,
    })
}

/// Fits on the target bins `[L, learning)` and scores those bins in sample.
fn fit_learning_block(
    panel: &SignPanel,
    learning: usize,
    lags: usize,
    config: &FitConfig,
) -> Result<(CouplingSet, PredictionRun)> {
    let first = lags.max(1);
    if learning <= first {
        return Err(Error::InsufficientData(format!(
            "learning block of {learning} bins leaves nothing to fit with {lags} lags"
        )));
    }
    let scope = RpmlScope {
        bins: Some((lags..learning).collect()),
        ..Default::default()
    };
    let params = fit_rpml_scoped(panel, lags, config, &scope)?.params;
    let in_sample = predict_bins(panel, &params, &(first..learning).collect::<Vec<_>>())?;
    Ok((params, in_sample))
}

fn accuracy_on(
    panel: &SignPanel,
    params: &CouplingSet,
    bins: std::ops::Range<usize>,
    alpha: f64,
) -> Result<(f64, usize)> {
    let run = predict_bins(panel, params, &bins.collect::<Vec<_>>())?;
    Ok((confusion_at(&run, alpha)?.accuracy(), run.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub length: usize,
    pub mean_accuracy: f64,
    /// Across testing blocks; zero with a single block.
    pub sd_accuracy: f64,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStudy {
    pub learning: usize,
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub rows: Vec<LengthRow>,
}

/// One fit on the first `learning` bins; accuracy on prefixes of growing
/// length of each of `n_blocks` disjoint testing blocks that follow it.
///
/// The detection level defaults to the maximum-accuracy level of the
/// learning block.
pub fn accuracy_vs_test_length(
    panel: &SignPanel,
    learning: usize,
    lengths: &[usize],
    n_blocks: usize,
    lags: usize,
    config: &FitConfig,
    alpha: Option<f64>,
) -> Result<LengthStudy> {
    if lengths.is_empty() || lengths.contains(&0) || lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "lengths must be positive and strictly ascending".into(),
        ));
    }
    let n_blocks = n_blocks.max(1);
    let max_len = *lengths.last().expect("non-empty");
    let needed = learning + n_blocks * max_len;
    if needed > panel.n_bins() {
        return Err(Error::Validation(format!(
            "learning {learning} + {n_blocks} blocks of {max_len} bins exceeds T = {}",
            panel.n_bins()
        )));
    }
    let (params, in_sample) = fit_learning_block(panel, learning, lags, config)?;
    let (alpha, alpha_source) = pick_alpha(alpha, &in_sample);
    let rows = lengths
        .iter()
        .map(|&len| {
            let accs: Vec<f64> = (0..n_blocks)
                .map(|b| {
                    let start = learning + b * max_len;
                    accuracy_on(panel, &params, start..start + len, alpha).map(|a| a.0)
                })
                .collect::<Result<_>>()?;
            Ok(LengthRow {
                length: len,
                mean_accuracy: mean(accs.iter().copied()),
                sd_accuracy: if accs.len() > 1 { sample_sd(&accs) } else { 0.0 },
                n_blocks,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LengthStudy {
        learning,
        alpha,
        alpha_source,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStudy {
    pub learning: usize,
    pub block_length: usize,
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    /// `1 / sqrt(block_length)`, the scale of sampling error per block.
    pub yardstick: f64,
    pub blocks: Vec<BlockRow>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
}

/// One fit on the first `learning` bins; accuracy on each successive
/// disjoint block of `block_length` bins after it.
pub fn accuracy_vs_block_distance(
    panel: &SignPanel,
    learning: usize,
    block_length: usize,
    lags: usize,
    config: &FitConfig,
    alpha: Option<f64>,
) -> Result<DistanceStudy> {
    if block_length == 0 {
        return Err(Error::Validation("block length must be positive".into()));
    }
    let t = panel.n_bins();
    if learning + block_length > t {
        return Err(Error::Validation(format!(
            "no full block of {block_length} bins after a learning block of {learning} (T = {t})"
        )));
    }
    let (params, in_sample) = fit_learning_block(panel, learning, lags, config)?;
    let (alpha, alpha_source) = pick_alpha(alpha, &in_sample);
    let n_blocks = (t - learning) / block_length;
    let blocks: Vec<BlockRow> = (0..n_blocks)
        .map(|b| {
            let start = learning + b * block_length;
            let end = start + block_length;
            Ok(BlockRow {
                index: b,
                start,
                end,
                accuracy: accuracy_on(panel, &params, start..end, alpha)?.0,
            })
        })
        .collect::<Result<_>>()?;
    let accs: Vec<f64> = blocks.iter().map(|b| b.accuracy).collect();
    Ok(DistanceStudy {
        learning,
        block_length,
        alpha,
        alpha_source,
        yardstick: 1.0 / (block_length as f64).sqrt(),
        mean_accuracy: mean(accs.iter().copied()),
        sd_accuracy: if accs.len() > 1 { sample_sd(&accs) } else { 0.0 },
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracy {
    pub time: usize,
    pub correct: usize,
    pub events: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyAccuracy {
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub per_bin: Vec<BinAccuracy>,
    /// Bins grouped by their exact accuracy, ascending.
    pub histogram: Vec<HistogramBin>,
    pub zero_bins: usize,
}

/// Fraction of correctly classified entities in each bin of `run`.
/// The detection level defaults to the run's own maximum-accuracy level.
pub fn daily_accuracy_distribution(run: &PredictionRun, alpha: Option<f64>) -> Result<DailyAccuracy> {
    if run.is_empty() {
        return Err(Error::InsufficientData("run has no events".into()));
    }
    let (alpha, alpha_source) = pick_alpha(alpha, run);
    confusion_at(run, alpha)?;
    let mut by_bin: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in &run.records {
        let e = by_bin.entry(r.time).or_default();
        e.0 += usize::from((r.probability > alpha) == (r.actual == 1));
        e.1 += 1;
    }
    let per_bin: Vec<BinAccuracy> = by_bin
        .into_iter()
        .map(|(time, (correct, events))| BinAccuracy {
            time,
            correct,
            events,
            accuracy: correct as f64 / events as f64,
        })
        .collect();
    // Keyed by the reduced fraction so equal accuracies share a bar.
    let mut groups: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for b in &per_bin {
        let g = gcd(b.correct, b.events);
        *groups.entry((b.correct / g, b.events / g)).or_default() += 1;
    }
    let mut histogram: Vec<HistogramBin> = groups
        .into_iter()
        .map(|((c, e), count)| HistogramBin {
            accuracy: c as f64 / e as f64,
            count,
        })
        .collect();
    histogram.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy));
    Ok(DailyAccuracy {
        alpha,
        alpha_source,
        zero_bins: per_bin.iter().filter(|b| b.correct == 0).count(),
        per_bin,
        histogram,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}
