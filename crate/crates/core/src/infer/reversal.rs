//! Pairwise model over simultaneous reversals, fitted by pseudo-likelihood.
//!
//! With exponent `Σ_ij W_ij x_i x_j`, the log-odds of `x_i = 1` given the
//! other entities is `W_ii + 2 Σ_{j≠i} W_ij x_j`, so each row is a logistic
//! regression with bias `W_ii` and slopes `2 W_ij`.

use rayon::prelude::*;

use super::rpml::softplus;
use super::{combine_traces, maximize_penalized, EntityFit, FitConfig, FitReport, Penalty, FISTA_ID, LBFGS_ID};
use crate::error::{Error, Result};
use crate::ingest::ReversalPanel;
use crate::model::ReversalCouplingSet;

struct RowDesign {
    /// Row-major `T × N`; column `i` holds the bias regressor 1, others `2 x_j`.
    features: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
}

impl RowDesign {
    fn new(states: &[Vec<u8>], i: usize) -> Self {
        let n = states.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(states.len() * n);
        let mut targets = Vec::with_capacity(states.len());
        for x in states {
            for (j, &xj) in x.iter().enumerate() {
                features.push(if j == i { 1.0 } else { 2.0 * f64::from(xj) });
            }
            targets.push(f64::from(x[i]));
        }
        Self { features, targets, n }
    }

    fn data_term(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (row, &y) in self.features.chunks_exact(self.n).zip(&self.targets) {
            let a: f64 = row.iter().zip(theta).map(|(x, w)| x * w).sum();
            total += y * a - softplus(a);
            let r = y - 1.0 / (1.0 + (-a).exp());
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let scale = 1.0 / self.targets.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        total * scale
    }
}

/// Fits `W` (rows coupled by averaging `W_ij` and `W_ji` afterwards).
pub fn fit_reversal_pairwise(reversals: &ReversalPanel, config: &FitConfig) -> Result<FitReport<ReversalCouplingSet>> {
    config.validate()?;
    let n = reversals.n_entities();
    let t = reversals.n_bins();
    if n == 0 || t < 2 {
        return Err(Error::InsufficientData(format!(
            "reversal fit needs entities and at least two bins, got N={n}, T={t}"
        )));
    }
    let states: Vec<Vec<u8>> = (0..t).map(|b| reversals.state_at(b)).collect();
    let lambda = config.resolved_lambda(t);
    let fits: Vec<EntityFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let design = RowDesign::new(&states, i);
            maximize_penalized(
                |x, g| design.data_term(x, g),
                vec![0.0; n],
                lambda,
                &vec![true; n],
                config,
            )
        })
        .collect::<Result<_>>()?;

    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        w[i][i] = fits[i].x[i];
        for j in 0..n {
            if j != i {
                w[i][j] = 0.5 * (fits[i].x[j] + fits[j].x[i]);
            }
        }
    }
    Ok(FitReport {
        params: ReversalCouplingSet::new(w)?,
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
        warnings: Vec::new(),
    })
}
