//! Regularized pseudo-maximum likelihood.
//!
//! Each entity's conditional `P(s_i,t | s_-i,t, s_t-1, .., s_t-L)` is a
//! logistic regression on the other entities' current signs and on all
//! lagged signs, so the fit factorizes into `N` independent concave
//! subproblems. The two estimates of every `J_ij` are averaged afterwards.

use rayon::prelude::*;

use super::{combine_traces, maximize_penalized, EntityFit, FitConfig, FitReport, Penalty, FISTA_ID, LBFGS_ID};
use crate::error::{Error, Result};
use crate::ingest::SignPanel;
use crate::model::CouplingSet;

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `log ½[1 + s tanh(f)]`.
#[inline]
pub(crate) fn log_conditional(sign: f64, field: f64) -> f64 {
    -softplus(-2.0 * sign * field)
}

/// Which bins and parameter blocks a fit uses.
#[derive(Debug, Clone, PartialEq)]
pub struct RpmlScope {
    /// Target bins; each must be ≥ L. `None` uses every bin in `[L, T)`.
    pub bins: Option<Vec<usize>>,
    /// `false` freezes `J` at zero (purely historical model).
    pub instantaneous: bool,
    /// Starting point; zeros when `None`.
    pub init: Option<CouplingSet>,
}

impl Default for RpmlScope {
    fn default() -> Self {
        Self {
            bins: None,
            instantaneous: true,
            init: None,
        }
    }
}

#[derive(Clone, Copy)]
enum Column {
    Field,
    Coupling(usize),
    Lag(usize, usize),
}

struct EntityDesign {
    columns: Vec<Column>,
    /// Row-major `bins × columns` matrix of ±1 regressors.
    features: Vec<i8>,
    targets: Vec<f64>,
}

impl EntityDesign {
    fn new(states: &[Vec<i8>], i: usize, n_lags: usize, bins: &[usize], instantaneous: bool) -> Self {
        let n = states.first().map_or(0, Vec::len);
        let mut columns = vec![Column::Field];
        if instantaneous {
            columns.extend((0..n).filter(|&j| j != i).map(Column::Coupling));
        }
        for tau in 1..=n_lags {
            columns.extend((0..n).map(|j| Column::Lag(tau, j)));
        }
        let mut features = Vec::with_capacity(bins.len() * columns.len());
        let mut targets = Vec::with_capacity(bins.len());
        for &t in bins {
            for c in &columns {
                features.push(match *c {
                    Column::Field => 1,
                    Column::Coupling(j) => states[t][j],
                    Column::Lag(tau, j) => states[t - tau][j],
                });
            }
            targets.push(f64::from(states[t][i]));
        }
        Self {
            columns,
            features,
            targets,
        }
    }

    fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Mean conditional log-likelihood and its gradient.
    fn data_term(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let dim = self.dim();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (row, &y) in self.features.chunks_exact(dim).zip(&self.targets) {
            let mut f = 0.0;
            for (x, w) in row.iter().zip(theta) {
                f += f64::from(*x) * w;
            }
            total += log_conditional(y, f);
            let r = y - f.tanh();
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * f64::from(*x);
            }
        }
        let scale = 1.0 / self.targets.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        total * scale
    }

    fn initial(&self, i: usize, init: Option<&CouplingSet>) -> Vec<f64> {
        match init {
            None => vec![0.0; self.dim()],
            Some(p) => self
                .columns
                .iter()
                .map(|c| match *c {
                    Column::Field => p.h[i],
                    Column::Coupling(j) => p.j[i][j],
                    Column::Lag(tau, j) => p.lags[tau - 1][i][j],
                })
                .collect(),
        }
    }
}

fn default_bins(n_bins: usize, n_lags: usize) -> Vec<usize> {
    (n_lags..n_bins).collect()
}

fn check_bins(bins: &[usize], n_bins: usize, n_lags: usize) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::InsufficientData("no usable training bins".into()));
    }
    if let Some(&t) = bins.iter().find(|&&t| t < n_lags || t >= n_bins) {
        return Err(Error::Shape(format!("training bin {t} outside [{n_lags}, {n_bins})")));
    }
    Ok(())
}

fn check_params(panel: &SignPanel, params: &CouplingSet) -> Result<()> {
    if params.n() != panel.n_entities() {
        return Err(Error::Shape(format!(
            "params have N={} but the panel has {} entities",
            params.n(),
            panel.n_entities()
        )));
    }
    Ok(())
}

fn penalty_value(params: &CouplingSet, penalty: Penalty) -> f64 {
    let f = |v: f64| match penalty {
        Penalty::L2 => v * v,
        Penalty::L1 => v.abs(),
    };
    let h: f64 = params.h.iter().map(|&v| f(v)).sum();
    let j: f64 = params.upper_couplings().into_iter().map(f).sum();
    let k: f64 = params.lags.iter().flatten().flatten().map(|&v| f(v)).sum();
    h + j + k
}

/// Mean (over usable bins) of `Σ_i log P(s_i,t | context)` minus the penalty.
///
/// The penalty counts each symmetric coupling `J_ij` once.
pub fn rpl_objective(panel: &SignPanel, params: &CouplingSet, config: &FitConfig) -> Result<f64> {
    check_params(panel, params)?;
    let l = params.n_lags();
    let bins = default_bins(panel.n_bins(), l);
    check_bins(&bins, panel.n_bins(), l)?;
    let states = panel.states();
    let mut total = 0.0;
    for &t in &bins {
        let history: Vec<&[i8]> = (1..=l).map(|tau| states[t - tau].as_slice()).collect();
        for i in 0..params.n() {
            let f = params.local_field(i, &states[t]) + params.lagged_field(i, &history);
            total += log_conditional(f64::from(states[t][i]), f);
        }
    }
    let lambda = config.resolved_lambda(bins.len());
    Ok(total / bins.len() as f64 - lambda * penalty_value(params, config.penalty))
}

/// Analytic gradient of [`rpl_objective`], with `J_ij = J_ji` treated as one parameter.
///
/// For the ℓ1 penalty the returned value uses `sign(θ)` (zero at zero).
pub fn rpl_gradient(panel: &SignPanel, params: &CouplingSet, config: &FitConfig) -> Result<CouplingSet> {
    check_params(panel, params)?;
    let n = params.n();
    let l = params.n_lags();
    let bins = default_bins(panel.n_bins(), l);
    check_bins(&bins, panel.n_bins(), l)?;
    let states = panel.states();
    let mut grad = CouplingSet::zeros(n, l);
    let mut resid = vec![0.0; n];
    for &t in &bins {
        let history: Vec<&[i8]> = (1..=l).map(|tau| states[t - tau].as_slice()).collect();
        let s = &states[t];
        for i in 0..n {
            let f = params.local_field(i, s) + params.lagged_field(i, &history);
            resid[i] = f64::from(s[i]) - f.tanh();
        }
        for i in 0..n {
            grad.h[i] += resid[i];
            for j in 0..n {
                if j != i {
                    grad.j[i][j] += resid[i] * f64::from(s[j]) + resid[j] * f64::from(s[i]);
                }
            }
            for (tau, k) in grad.lags.iter_mut().enumerate() {
                for j in 0..n {
                    k[i][j] += resid[i] * f64::from(history[tau][j]);
                }
            }
        }
    }
    let scale = 1.0 / bins.len() as f64;
    let lambda = config.resolved_lambda(bins.len());
    let d = |v: f64| match config.penalty {
        Penalty::L2 => 2.0 * lambda * v,
        Penalty::L1 => {
            if v == 0.0 {
                0.0
            } else {
                lambda * v.signum()
            }
        }
    };
    for i in 0..n {
        grad.h[i] = grad.h[i] * scale - d(params.h[i]);
        for j in 0..n {
            if j != i {
                grad.j[i][j] = grad.j[i][j] * scale - d(params.j[i][j]);
            }
        }
        for (g, p) in grad.lags.iter_mut().zip(&params.lags) {
            for j in 0..n {
                g[i][j] = g[i][j] * scale - d(p[i][j]);
            }
        }
    }
    Ok(grad)
}

/// Fits `J`, `h` and `L` lag matrices on every usable bin.
pub fn fit_rpml(panel: &SignPanel, lags: usize, config: &FitConfig) -> Result<FitReport<CouplingSet>> {
    fit_rpml_scoped(panel, lags, config, &RpmlScope::default())
}

pub fn fit_rpml_scoped(
    panel: &SignPanel,
    lags: usize,
    config: &FitConfig,
    scope: &RpmlScope,
) -> Result<FitReport<CouplingSet>> {
    config.validate()?;
    let n = panel.n_entities();
    if n == 0 {
        return Err(Error::InsufficientData("panel has no entities".into()));
    }
    let bins = scope.bins.clone().unwrap_or_else(|| default_bins(panel.n_bins(), lags));
    check_bins(&bins, panel.n_bins(), lags)?;
    if let Some(init) = &scope.init {
        if init.n() != n || init.n_lags() != lags {
            return Err(Error::Shape("initial parameters do not match N and L".into()));
        }
    }
    let states = panel.states();
    let lambda = config.resolved_lambda(bins.len());

    let fits: Vec<EntityFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let design = EntityDesign::new(&states, i, lags, &bins, scope.instantaneous);
            let penalized = vec![true; design.dim()];
            let x0 = design.initial(i, scope.init.as_ref());
            maximize_penalized(|x, g| design.data_term(x, g), x0, lambda, &penalized, config)
        })
        .collect::<Result<_>>()?;

    let mut raw = CouplingSet::zeros(n, lags);
    for (i, fit) in fits.iter().enumerate() {
        let mut k = 0;
        raw.h[i] = fit.x[k];
        k += 1;
        if scope.instantaneous {
            for j in (0..n).filter(|&j| j != i) {
                raw.j[i][j] = fit.x[k];
                k += 1;
            }
        }
        for tau in 0..lags {
            for j in 0..n {
                raw.lags[tau][i][j] = fit.x[k];
                k += 1;
            }
        }
    }
    let mut params = raw.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                params.j[i][j] = 0.5 * (raw.j[i][j] + raw.j[j][i]);
            }
        }
    }

    let dim = 1 + if scope.instantaneous { n - 1 } else { 0 } + lags * n;
    let mut warnings = Vec::new();
    if bins.len() < 10 * dim {
        let msg = format!(
            "{} training bins for {dim} parameters per entity; at least {} recommended",
            bins.len(),
            10 * dim
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if !scope.instantaneous {
        warnings.push("couplings J frozen at zero during training".into());
    }

    Ok(FitReport {
        params,
        objective_trace: combine_traces(&fits),
        converged: fits.iter().all(|f| f.converged),
        iterations_used: fits.iter().map(|f| f.iterations).max().unwrap_or(0),
        gradient_norm: fits.iter().map(|f| f.gradient_norm).fold(0.0, f64::max),
        config: FitConfig {
            lambda: Some(lambda),
            ..*config
        },
        optimizer: match config.penalty {
            Penalty::L2 => LBFGS_ID.into(),
            Penalty::L1 => FISTA_ID.into(),
        },
        warnings,
    })
}
