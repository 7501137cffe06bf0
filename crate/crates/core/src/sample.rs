//! Synthetic data: Glauber dynamics, exact enumeration sampling and the
//! dichotomized Gaussian.
//!
//! Every sampler is a pure function of its parameters and seed. The
//! generator is ChaCha8 seeded with `seed_from_u64`; a Glauber attempt draws
//! the entity first and the acceptance uniform second.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::DgParams;
use crate::ingest::SignPanel;
use crate::model::{check_capacity, exact_distribution, spin_probability, spin_state, CouplingSet};

/// Identity of the random generator, recorded in simulation outputs.
pub const RNG_ID: &str = "rand_chacha::ChaCha8Rng/seed_from_u64";

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Symmetric couplings uniform in `[-scale, scale]`, fields in `[-scale, scale]`,
/// lag entries uniform in `[-scale/2, scale/2]`.
pub fn random_couplings(n: usize, n_lags: usize, scale: f64, rng: &mut impl Rng) -> CouplingSet {
    let mut c = CouplingSet::zeros(n, n_lags);
    for i in 0..n {
        c.h[i] = rng.random_range(-scale..=scale);
        for k in i + 1..n {
            let v = rng.random_range(-scale..=scale);
            c.j[i][k] = v;
            c.j[k][i] = v;
        }
    }
    for lag in c.lags.iter_mut() {
        for row in lag.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-0.5 * scale..=0.5 * scale);
            }
        }
    }
    c
}

/// Symmetric couplings drawn from `N(mean, sd²)`, zero fields.
pub fn gaussian_couplings(n: usize, mean: f64, sd: f64, rng: &mut impl Rng) -> CouplingSet {
    let normal = Normal::new(mean, sd.max(0.0)).expect("finite normal parameters");
    let mut c = CouplingSet::zeros(n, 0);
    for i in 0..n {
        for k in i + 1..n {
            let v = normal.sample(rng);
            c.j[i][k] = v;
            c.j[k][i] = v;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlauberConfig {
    /// Monte Carlo steps between recorded configurations.
    pub sweeps_per_record: usize,
    /// Flip attempts per Monte Carlo step; `None` means `5N`.
    pub attempts_per_sweep: Option<usize>,
    pub burn_in_records: usize,
    pub seed: u64,
}

impl Default for GlauberConfig {
    fn default() -> Self {
        Self {
            sweeps_per_record: 1,
            attempts_per_sweep: None,
            burn_in_records: 1000,
            seed: 0,
        }
    }
}

impl GlauberConfig {
    pub fn attempts(&self, n: usize) -> usize {
        self.attempts_per_sweep.unwrap_or(5 * n)
    }
}

/// What happened during one flip attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub entity: usize,
    pub flip_probability: f64,
    pub flipped: bool,
}

/// One Glauber attempt: pick an entity uniformly, flip it when its flip
/// probability exceeds a uniform draw.
pub fn glauber_step(state: &mut [i8], params: &CouplingSet, rng: &mut impl Rng) -> StepOutcome {
    let entity = rng.random_range(0..state.len());
    let u: f64 = rng.random();
    let s = state[entity];
    let flip_probability = spin_probability(-s, params.local_field(entity, state));
    let flipped = flip_probability > u;
    if flipped {
        state[entity] = -s;
    }
    StepOutcome {
        entity,
        flip_probability,
        flipped,
    }
}

fn check_glauber(params: &CouplingSet, t_records: usize) -> Result<()> {
    if params.n_lags() != 0 {
        return Err(Error::Shape("Glauber dynamics targets the memoryless model".into()));
    }
    if params.n() == 0 {
        return Err(Error::Validation("no entities to simulate".into()));
    }
    if t_records == 0 {
        return Err(Error::Validation("t_records must be at least 1".into()));
    }
    Ok(())
}

/// Records `t_records` configurations after discarding `burn_in_records`.
pub fn glauber_sample(params: &CouplingSet, t_records: usize, config: &GlauberConfig) -> Result<SignPanel> {
    check_glauber(params, t_records)?;
    let n = params.n();
    let mut rng = rng_from_seed(config.seed);
    let mut state: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let attempts = config.attempts(n) * config.sweeps_per_record.max(1);
    let mut signs = vec![Vec::with_capacity(t_records); n];
    for r in 0..config.burn_in_records + t_records {
        for _ in 0..attempts {
            glauber_step(&mut state, params, &mut rng);
        }
        if r >= config.burn_in_records {
            for (row, &s) in signs.iter_mut().zip(&state) {
                row.push(s);
            }
        }
    }
    let panel = SignPanel::from_signs(signs)?;
    if let Some(msg) = stationarity_warning(&panel) {
        log::warn!("{msg}");
    }
    Ok(panel)
}

/// Flags entities whose first-half and second-half mean signs differ by
/// more than four standard errors.
pub fn stationarity_warning(panel: &SignPanel) -> Option<String> {
    let t = panel.n_bins();
    if t < 4 {
        return None;
    }
    let half = t / 2;
    let first = panel.slice_bins(0..half).mean_signs();
    let second = panel.slice_bins(half..t).mean_signs();
    let bad: Vec<usize> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|&(_, (&a, &b))| {
            let var = (1.0 - a * a).max(1e-12) / half as f64 + (1.0 - b * b).max(1e-12) / (t - half) as f64;
            (a - b).abs() > 4.0 * var.sqrt()
        })
        .map(|(i, _)| i)
        .collect();
    (!bad.is_empty()).then(|| format!("first/second half mean signs differ by > 4σ for entities {bad:?}"))
}

/// Draws `t` indices i.i.d. from a discrete distribution by inverse CDF.
pub fn sample_from_distribution(probabilities: &[f64], t: usize, seed: u64) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for &p in probabilities {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = rng_from_seed(seed);
    (0..t)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(probabilities.len() - 1)
        })
        .collect()
}

/// I.i.d. configurations from the enumerated pairwise distribution.
pub fn exact_sample(params: &CouplingSet, t_records: usize, seed: u64) -> Result<SignPanel> {
    check_capacity(params.n())?;
    if t_records == 0 {
        return Err(Error::Validation("t_records must be at least 1".into()));
    }
    let n = params.n();
    let dist = exact_distribution(params)?;
    let mut signs = vec![Vec::with_capacity(t_records); n];
    for idx in sample_from_distribution(&dist, t_records, seed) {
        for (row, s) in signs.iter_mut().zip(spin_state(idx, n)) {
            row.push(s);
        }
    }
    SignPanel::from_signs(signs)
}

/// Thresholds draws of `N(mu, sigma)` at zero (`0 → +1`).
pub fn sample_dg(params: &DgParams, t_records: usize, seed: u64) -> Result<SignPanel> {
    params.validate()?;
    let n = params.n();
    let eig = SymmetricEigen::new(params.sigma_matrix());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let factor: DMatrix<f64> = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    let mu = DVector::from_column_slice(&params.mu);
    let mut rng = rng_from_seed(seed);
    let mut signs = vec![Vec::with_capacity(t_records); n];
    for _ in 0..t_records {
        let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let z = &mu + &factor * eps;
        for (row, v) in signs.iter_mut().zip(z.iter()) {
            row.push(if *v >= 0.0 { 1 } else { -1 });
        }
    }
    SignPanel::from_signs(signs)
}
