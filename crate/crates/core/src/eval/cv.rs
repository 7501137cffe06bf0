use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::{predict_bins, roc, PredictionRun, RocResult};
use super::{mean, sample_sd};
use crate::error::{Error, Result};
use crate::infer::{fit_independent, fit_rpml_scoped, homogenize, FitConfig, RpmlScope};
use crate::ingest::SignPanel;
use crate::model::CouplingSet;
use crate::sample::rng_from_seed;

/// Which model a cross-validation run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvModel {
    /// Couplings, fields and `L` lag matrices.
    #[default]
    Pairwise,
    /// Fields only.
    Independent,
    /// Memoryless fit with every coupling replaced by the mean and `h = 0`.
    Homogeneous,
    /// Lagged couplings and fields with `J` frozen at zero during training.
    HistoricalOnly,
}

impl CvModel {
    pub fn id(&self) -> &'static str {
        match self {
            CvModel::Pairwise => "pairwise",
            CvModel::Independent => "independent",
            CvModel::Homogeneous => "homogeneous",
            CvModel::HistoricalOnly => "historical_only",
        }
    }

    /// Lags actually used by the model.
    pub fn effective_lags(&self, lags: usize) -> usize {
        match self {
            CvModel::Pairwise | CvModel::HistoricalOnly => lags,
            CvModel::Independent | CvModel::Homogeneous => 0,
        }
    }
}

/// The trained parameters plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: CouplingSet,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn subset_panel(panel: &SignPanel, bins: &[usize]) -> Result<SignPanel> {
    SignPanel::from_signs(
        panel
            .signs
            .iter()
            .map(|row| bins.iter().map(|&t| row[t]).collect())
            .collect(),
    )
}

/// Fits `model` on the target bins `train`.
pub fn train_model(
    panel: &SignPanel,
    model: CvModel,
    lags: usize,
    config: &FitConfig,
    train: &[usize],
) -> Result<TrainedModel> {
    match model {
        CvModel::Independent => Ok(TrainedModel {
            params: fit_independent(&subset_panel(panel, train)?),
            converged: true,
            warnings: Vec::new(),
        }),
        CvModel::Pairwise | CvModel::Homogeneous | CvModel::HistoricalOnly => {
            let scope = RpmlScope {
                bins: Some(train.to_vec()),
                instantaneous: model != CvModel::HistoricalOnly,
                init: None,
            };
            let report = fit_rpml_scoped(panel, model.effective_lags(lags), config, &scope)?;
            let params = if model == CvModel::Homogeneous {
                homogenize(&report.params)?
            } else {
                report.params
            };
            Ok(TrainedModel {
                params,
                converged: report.converged,
                warnings: report.warnings,
            })
        }
    }
}

/// Partition of the usable bins into `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub shuffled: bool,
    pub usable: Range<usize>,
    /// Test bins of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// `k` contiguous blocks whose sizes differ by at most one.
    pub fn contiguous(usable: Range<usize>, k: usize) -> Result<Self> {
        let len = check_plan(&usable, k)?;
        let (base, extra) = (len / k, len % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = usable.start;
        for f in 0..k {
            let size = base + usize::from(f < extra);
            folds.push((start..start + size).collect());
            start += size;
        }
        Ok(Self {
            k,
            seed: 0,
            shuffled: false,
            usable,
            folds,
        })
    }

    /// Bins assigned to folds at random; sizes still differ by at most one.
    pub fn shuffled(usable: Range<usize>, k: usize, seed: u64) -> Result<Self> {
        check_plan(&usable, k)?;
        let mut bins: Vec<usize> = usable.clone().collect();
        bins.shuffle(&mut rng_from_seed(seed));
        let mut folds = vec![Vec::new(); k];
        for (pos, t) in bins.into_iter().enumerate() {
            folds[pos % k].push(t);
        }
        for f in folds.iter_mut() {
            f.sort_unstable();
        }
        Ok(Self {
            k,
            seed,
            shuffled: true,
            usable,
            folds,
        })
    }

    /// Contiguous plan over the bins a lag-`L` model can predict, `[max(L, 1), T)`.
    pub fn for_panel(n_bins: usize, lags: usize, k: usize) -> Result<Self> {
        Self::contiguous(lags.max(1)..n_bins, k)
    }

    /// Training bins for `fold`: every bin with enough history that is not
    /// in the fold.
    pub fn train_bins(&self, fold: usize, n_bins: usize, lags: usize) -> Vec<usize> {
        let test = &self.folds[fold];
        (lags..n_bins).filter(|t| test.binary_search(t).is_err()).collect()
    }
}

fn check_plan(usable: &Range<usize>, k: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {k}")));
    }
    let len = usable.len();
    if len < k {
        return Err(Error::InsufficientData(format!("{len} usable bins for {k} folds")));
    }
    Ok(len)
}

/// One point of the fold-averaged curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub first_bin: usize,
    pub last_bin: usize,
    pub converged: bool,
    pub auc: f64,
    pub max_accuracy: f64,
    pub best_alpha: f64,
    pub accuracy_at_half: f64,
    pub roc: RocResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub entity: usize,
    pub events: usize,
    /// `None` when the entity never (or always) flipped out of sample.
    pub auc: Option<f64>,
    pub max_accuracy: Option<f64>,
}

/// Fold-level aggregates (per-fold event-level values, then the mean over
/// folds) and entity-level aggregates (pooled out-of-sample events per
/// entity, then the mean over entities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean_auc: f64,
    pub sd_auc: f64,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_accuracy_at_half: f64,
    pub entity_mean_auc: f64,
    pub entity_mean_accuracy: f64,
    pub pooled_auc: f64,
    pub base_non_flip_rate: f64,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: CvModel,
    pub lags: usize,
    pub k: usize,
    pub shuffled: bool,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
    pub mean_curve: Vec<CurvePoint>,
    pub per_entity: Vec<EntityScore>,
    pub warnings: Vec<String>,
    /// All out-of-sample predictions in fold order.
    #[serde(skip)]
    pub pooled: PredictionRun,
}

/// Grid on which per-fold curves are averaged.
pub const CURVE_GRID: usize = 100;

/// Ten-fold (or `plan.k`) cross-validation of the pairwise model.
pub fn cross_validate(panel: &SignPanel, lags: usize, config: &FitConfig, plan: &FoldPlan) -> Result<CvResult> {
    cross_validate_model(panel, CvModel::Pairwise, lags, config, plan)
}

pub fn cross_validate_model(
    panel: &SignPanel,
    model: CvModel,
    lags: usize,
    config: &FitConfig,
    plan: &FoldPlan,
) -> Result<CvResult> {
    let t = panel.n_bins();
    let lags = model.effective_lags(lags);
    let first = lags.max(1);
    if plan.usable.start < first || plan.usable.end > t {
        return Err(Error::Shape(format!(
            "fold plan covers {:?} but a lag-{lags} model predicts only within [{first}, {t})",
            plan.usable
        )));
    }

    let outcomes: Vec<(FoldResult, PredictionRun, Vec<String>)> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let train = plan.train_bins(f, t, lags);
            assert!(
                train.iter().all(|b| test.binary_search(b).is_err()),
                "fold {f}: training and test bins overlap"
            );
            run_fold(panel, model, lags, config, f, test, &train).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut folds = Vec::with_capacity(outcomes.len());
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut warnings = Vec::new();
    for (res, run, w) in outcomes {
        warnings.extend(w.into_iter().map(|m| format!("fold {}: {m}", res.fold)));
        folds.push(res);
        runs.push(run);
    }
    let pooled = PredictionRun::concat(model.id(), runs);

    let mean_curve = (0..=CURVE_GRID)
        .map(|g| {
            let alpha = g as f64 / CURVE_GRID as f64;
            let pts: Vec<(f64, f64, f64)> = folds.iter().map(|f| f.roc.at_alpha(alpha)).collect();
            CurvePoint {
                alpha,
                fpr: mean(pts.iter().map(|p| p.0)),
                tpr: mean(pts.iter().map(|p| p.1)),
                accuracy: mean(pts.iter().map(|p| p.2)),
            }
        })
        .collect();

    let per_entity: Vec<EntityScore> = (0..panel.n_entities())
        .map(|i| {
            let run = pooled.for_entity(i);
            let r = roc(&run).ok();
            EntityScore {
                entity: i,
                events: run.len(),
                auc: r.as_ref().map(|r| r.auc),
                max_accuracy: r.as_ref().map(|r| r.max_accuracy),
            }
        })
        .collect();

    let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
    let accs: Vec<f64> = folds.iter().map(|f| f.max_accuracy).collect();
    let summary = CvSummary {
        mean_auc: mean(aucs.iter().copied()),
        sd_auc: sample_sd(&aucs),
        mean_accuracy: mean(accs.iter().copied()),
        sd_accuracy: sample_sd(&accs),
        mean_accuracy_at_half: mean(folds.iter().map(|f| f.accuracy_at_half)),
        entity_mean_auc: mean(per_entity.iter().filter_map(|e| e.auc)),
        entity_mean_accuracy: mean(per_entity.iter().filter_map(|e| e.max_accuracy)),
        pooled_auc: roc(&pooled).map(|r| r.auc).unwrap_or(f64::NAN),
        base_non_flip_rate: 1.0 - pooled.n_positive() as f64 / pooled.len() as f64,
        n_events: pooled.len(),
    };

    Ok(CvResult {
        model,
        lags,
        k: plan.k,
        shuffled: plan.shuffled,
        seed: plan.seed,
        folds,
        summary,
        mean_curve,
        per_entity,
        warnings,
        pooled,
    })
}

fn run_fold(
    panel: &SignPanel,
    model: CvModel,
    lags: usize,
    config: &FitConfig,
    fold: usize,
    test: &[usize],
    train: &[usize],
) -> Result<(FoldResult, PredictionRun, Vec<String>)> {
    let trained = train_model(panel, model, lags, config, train)?;
    let run = predict_bins(panel, &trained.params, test)?.with_model(model.id());
    let r = roc(&run)?;
    let (_, _, accuracy_at_half) = r.at_alpha(0.5);
    Ok((
        FoldResult {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            first_bin: *test.first().expect("folds are non-empty"),
            last_bin: *test.last().expect("folds are non-empty"),
            converged: trained.converged,
            auc: r.auc,
            max_accuracy: r.max_accuracy,
            best_alpha: r.best_alpha,
            accuracy_at_half,
            roc: r,
        },
        run,
        trained.warnings,
    ))
}
