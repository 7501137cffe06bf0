use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SignPanel;
use crate::model::{flip_probability_full, CouplingSet};

/// Probabilities are kept strictly inside (0, 1) so that every event is
/// predicted positive at α = 0 and negative at α = 1.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub entity: usize,
    pub time: usize,
    pub probability: f64,
    /// 1 when the entity's sign at `time` is opposite to the one at `time - 1`.
    pub actual: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionRun {
    pub model: String,
    pub records: Vec<PredictionRecord>,
}

impl PredictionRun {
    pub fn new(model: impl Into<String>, records: Vec<PredictionRecord>) -> Self {
        Self {
            model: model.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn n_positive(&self) -> usize {
        self.records.iter().filter(|r| r.actual == 1).count()
    }

    /// Records of one entity, in time order.
    pub fn for_entity(&self, entity: usize) -> PredictionRun {
        PredictionRun {
            model: self.model.clone(),
            records: self.records.iter().copied().filter(|r| r.entity == entity).collect(),
        }
    }

    pub fn concat(model: impl Into<String>, runs: impl IntoIterator<Item = PredictionRun>) -> Self {
        Self {
            model: model.into(),
            records: runs.into_iter().flat_map(|r| r.records).collect(),
        }
    }
}

/// Scores every entity at every bin of `bins` with the observed context and
/// history. Bins must satisfy `t ≥ max(L, 1)`.
pub fn predict_bins(panel: &SignPanel, params: &CouplingSet, bins: &[usize]) -> Result<PredictionRun> {
    let n = panel.n_entities();
    if params.n() != n {
        return Err(Error::Shape(format!(
            "parameters have N={}, panel has N={n}",
            params.n()
        )));
    }
    let lags = params.n_lags();
    let first = lags.max(1);
    let mut records = Vec::with_capacity(bins.len() * n);
    for &t in bins {
        if t < first {
            return Err(Error::Shape(format!("bin {t} needs {first} earlier bins")));
        }
        if t >= panel.n_bins() {
            return Err(Error::Shape(format!(
                "bin {t} outside panel of {} bins",
                panel.n_bins()
            )));
        }
        let state = panel.state_at(t);
        let history: Vec<Vec<i8>> = (1..=lags).map(|tau| panel.state_at(t - tau)).collect();
        for i in 0..n {
            let prev = panel.signs[i][t - 1];
            let p = flip_probability_full(i, prev, &state, &history, params);
            records.push(PredictionRecord {
                entity: i,
                time: t,
                probability: p.clamp(PROB_FLOOR, PROB_CEIL),
                actual: u8::from(state[i] != prev),
            });
        }
    }
    Ok(PredictionRun::new("pairwise", records))
}

/// [`predict_bins`] over a contiguous range.
pub fn predict_panel(panel: &SignPanel, params: &CouplingSet, range: Range<usize>) -> Result<PredictionRun> {
    let first = params.n_lags().max(1);
    if range.start < first {
        return Err(Error::Shape(format!(
            "range starts at {} but the model needs {first} earlier bins",
            range.start
        )));
    }
    let bins: Vec<usize> = range.collect();
    predict_bins(panel, params, &bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn fpr(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Validation(format!("detection level {alpha} outside [0, 1]")))
    }
}

/// Counts with "flip predicted" meaning `probability > alpha`.
pub fn confusion_at(run: &PredictionRun, alpha: f64) -> Result<Confusion> {
    check_alpha(alpha)?;
    let mut c = Confusion::default();
    for r in &run.records {
        match (r.probability > alpha, r.actual == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Detection levels in descending order, from 1 to 0.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
    /// `(α, accuracy)` at each threshold.
    pub accuracy_curve: Vec<(f64, f64)>,
    pub max_accuracy: f64,
    /// Largest α reaching `max_accuracy`.
    pub best_alpha: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

impl RocResult {
    /// `(fpr, tpr, accuracy)` at any detection level in [0, 1].
    ///
    /// Between consecutive thresholds the confusion matrix equals the one at
    /// the lower threshold.
    pub fn at_alpha(&self, alpha: f64) -> (f64, f64, f64) {
        let k = self.thresholds.partition_point(|&t| t > alpha.clamp(0.0, 1.0));
        (self.fpr[k], self.tpr[k], self.accuracy_curve[k].1)
    }
}

/// Exact ROC over every distinct predicted probability plus {0, 1}.
pub fn roc(run: &PredictionRun) -> Result<RocResult> {
    if let Some(r) = run
        .records
        .iter()
        .find(|r| !(r.probability > 0.0 && r.probability <= 1.0))
    {
        return Err(Error::Validation(format!(
            "probability {} at entity {} bin {} outside (0, 1]",
            r.probability, r.entity, r.time
        )));
    }
    let n_pos = run.n_positive();
    let n_neg = run.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "run has {n_pos} flips and {n_neg} non-flips; both classes are needed"
        )));
    }
    let mut sorted: Vec<(f64, u8)> = run.records.iter().map(|r| (r.probability, r.actual)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total = run.len() as f64;
    // (α, tp, fp) with positives being the events strictly above α.
    let mut points: Vec<(f64, usize, usize)> = vec![(1.0, 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pos = 0;
    while pos < sorted.len() {
        let alpha = sorted[pos].0;
        if alpha < 1.0 {
            points.push((alpha, tp, fp));
        }
        while pos < sorted.len() && sorted[pos].0 == alpha {
            if sorted[pos].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            pos += 1;
        }
    }
    points.push((0.0, tp, fp));

    let mut tpr = Vec::with_capacity(points.len());
    let mut fpr = Vec::with_capacity(points.len());
    let mut accuracy_curve = Vec::with_capacity(points.len());
    let mut best = (f64::NEG_INFINITY, 1.0);
    for &(alpha, tp, fp) in &points {
        let tn = n_neg - fp;
        let acc = (tp + tn) as f64 / total;
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
        accuracy_curve.push((alpha, acc));
        if acc > best.0 {
            best = (acc, alpha);
        }
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum();
    let thresholds = points.iter().map(|p| p.0).collect();
    Ok(RocResult {
        thresholds,
        tpr,
        fpr,
        auc,
        accuracy_curve,
        max_accuracy: best.0,
        best_alpha: best.1,
        n_positive: n_pos,
        n_negative: n_neg,
    })
}

/// Fraction of (flip, non-flip) pairs where the flip scores higher, ties ½,
/// by direct pairwise counting.
pub fn mann_whitney(run: &PredictionRun) -> Result<f64> {
    let pos: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.actual == 1)
        .map(|r| r.probability)
        .collect();
    let neg: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.actual == 0)
        .map(|r| r.probability)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Degenerate("Mann–Whitney statistic needs both classes".into()));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}
