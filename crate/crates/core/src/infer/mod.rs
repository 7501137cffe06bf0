//! Parameter estimation.
//!
//! * [`rpml`]: regularized pseudo-likelihood for couplings, fields and lags.
//! * [`baselines`]: independent, homogeneous and Poisson models.
//! * [`reversal`]: pairwise model over simultaneous reversals.
//! * [`dg`]: dichotomized Gaussian moment matching.

pub mod baselines;
pub mod dg;
pub mod reversal;
pub mod rpml;

use serde::{Deserialize, Serialize};

pub use baselines::{fit_independent, fit_poisson, homogenize, PoissonModel};
pub use dg::{fit_dichotomized_gaussian, DgFit, DgParams};
pub use reversal::fit_reversal_pairwise;
pub use rpml::{fit_rpml, fit_rpml_scoped, rpl_gradient, rpl_objective, RpmlScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    #[default]
    L2,
    L1,
}

impl std::str::FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l2" => Ok(Penalty::L2),
            "l1" => Ok(Penalty::L1),
            other => Err(format!("unknown penalty `{other}` (expected l2 or l1)")),
        }
    }
}

/// Settings shared by every regularized fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Regularization strength; `None` means `1 / T'` with `T'` the number of training bins.
    pub lambda: Option<f64>,
    pub penalty: Penalty,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            penalty: Penalty::L2,
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// The regularization strength used for `usable_bins` training bins.
    pub fn resolved_lambda(&self, usable_bins: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / usable_bins.max(1) as f64)
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(crate::Error::Validation(format!("lambda must be ≥ 0, got {l}")));
            }
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(crate::Error::Validation("gradient_tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(crate::Error::Validation("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a regularized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<P> {
    pub params: P,
    /// Sum of the per-entity objectives after each iteration; entities that
    /// stopped early contribute their final value.
    pub objective_trace: Vec<f64>,
    /// Every per-entity subproblem reached the gradient tolerance.
    pub converged: bool,
    /// Largest per-entity iteration count.
    pub iterations_used: usize,
    /// Largest per-entity final gradient (or ℓ1 stationarity) norm.
    pub gradient_norm: f64,
    /// Configuration with `lambda` resolved to the value actually used.
    pub config: FitConfig,
    pub optimizer: String,
    pub warnings: Vec<String>,
}

pub(crate) const LBFGS_ID: &str = "lbfgs(m=10, armijo backtracking)";
pub(crate) const FISTA_ID: &str = "accelerated proximal gradient with adaptive restart";

/// Per-entity optimization outcome.
pub(crate) struct EntityFit {
    pub x: Vec<f64>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

pub(crate) fn combine_traces(fits: &[EntityFit]) -> Vec<f64> {
    let len = fits.iter().map(|f| f.trace.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| fits.iter().map(|f| f.trace[k.min(f.trace.len() - 1)]).sum())
        .collect()
}

/// Runs the optimizer matching `config.penalty` on a smooth data term.
pub(crate) fn maximize_penalized<F>(
    mut data_term: F,
    x0: Vec<f64>,
    lambda: f64,
    penalized: &[bool],
    config: &FitConfig,
) -> crate::Result<EntityFit>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    use crate::optim::{lbfgs_maximize, proximal_maximize_l1, OptimOptions};
    let opts = OptimOptions {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        memory: 10,
    };
    let result = match config.penalty {
        Penalty::L2 => lbfgs_maximize(
            |x, g| {
                let mut v = data_term(x, g);
                for k in 0..x.len() {
                    if penalized[k] {
                        v -= lambda * x[k] * x[k];
                        g[k] -= 2.0 * lambda * x[k];
                    }
                }
                v
            },
            x0,
            &opts,
        )?,
        Penalty::L1 => {
            let weights: Vec<f64> = penalized.iter().map(|&p| if p { lambda } else { 0.0 }).collect();
            proximal_maximize_l1(data_term, x0, &weights, &opts)?
        }
    };
    Ok(EntityFit {
        x: result.x,
        trace: result.trace,
        converged: result.converged,
        iterations: result.iterations,
        gradient_norm: result.gradient_norm,
    })
}
