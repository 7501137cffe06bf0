use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{DgParams, PoissonModel};
use crate::ingest::{ReversalPanel, SignPanel};
use crate::model::{
    exact_distribution, reversal_distribution, spin_index, spin_state, CouplingSet, ReversalCouplingSet,
};
use crate::optim::{lbfgs_maximize, OptimOptions};
use crate::sample::sample_dg;

/// Entity count up to which count distributions and entropies are
/// computed by enumeration.
pub const EXACT_CAP: usize = 12;

fn check_exact(n: usize) -> Result<()> {
    if n > EXACT_CAP {
        return Err(Error::Capacity { n, cap: EXACT_CAP });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistributions {
    pub n: usize,
    pub n_bins: usize,
    pub empirical: Vec<f64>,
    pub pairwise: Vec<f64>,
    pub poisson: Vec<f64>,
    /// Monte Carlo estimate from `dg_samples` draws of the latent Gaussian.
    pub dg: Vec<f64>,
    /// Binomial standard error of each `dg` entry.
    pub dg_standard_error: Vec<f64>,
    pub dg_samples: usize,
    pub dg_seed: u64,
}

/// Distribution of the number of simultaneous reversals per bin, observed
/// and under each model. Pairwise counts are exact; the dichotomized
/// Gaussian has no closed-form orthant probabilities, so its counts are
/// sampled.
pub fn reversal_count_distributions(
    reversals: &ReversalPanel,
    pairwise: &ReversalCouplingSet,
    poisson: &PoissonModel,
    dg: &DgParams,
    dg_samples: usize,
    dg_seed: u64,
) -> Result<CountDistributions> {
    let n = reversals.n_entities();
    check_exact(n)?;
    if pairwise.n() != n || dg.n() != n || poisson.n != n {
        return Err(Error::Shape("models and reversal panel disagree on N".into()));
    }
    if reversals.n_bins() == 0 || dg_samples == 0 {
        return Err(Error::InsufficientData(
            "need at least one bin and one DG sample".into(),
        ));
    }
    let mut empirical = vec![0.0; n + 1];
    for c in reversals.counts() {
        empirical[c] += 1.0;
    }
    let t = reversals.n_bins() as f64;
    empirical.iter_mut().for_each(|v| *v /= t);

    let mut pair = vec![0.0; n + 1];
    for (idx, p) in reversal_distribution(pairwise)?.into_iter().enumerate() {
        pair[idx.count_ones() as usize] += p;
    }

    let draws = sample_dg(dg, dg_samples, dg_seed)?;
    let mut dg_counts = vec![0.0; n + 1];
    for b in 0..dg_samples {
        let c = draws.signs.iter().filter(|row| row[b] == 1).count();
        dg_counts[c] += 1.0;
    }
    let m = dg_samples as f64;
    dg_counts.iter_mut().for_each(|v| *v /= m);
    let dg_standard_error = dg_counts.iter().map(|p| (p * (1.0 - p) / m).sqrt()).collect();

    Ok(CountDistributions {
        n,
        n_bins: reversals.n_bins(),
        empirical,
        pairwise: pair,
        poisson: poisson.count_distribution(),
        dg: dg_counts,
        dg_standard_error,
        dg_samples,
        dg_seed,
    })
}

/// `Σ p log(p / q)` in nats. Requires `q > 0` wherever `p > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Support { index, p: pi });
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedKl {
    pub value: f64,
    /// Mass added to each empty model bin before renormalizing, if any.
    pub epsilon: Option<f64>,
    pub smoothed_bins: Vec<usize>,
}

/// [`kl_divergence`] after adding `1 / (2 T)` to model bins that are empty
/// where `p` is not, then renormalizing `q`.
pub fn kl_divergence_smoothed(p: &[f64], q: &[f64], n_bins: usize) -> Result<SmoothedKl> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let smoothed_bins: Vec<usize> = (0..p.len()).filter(|&k| p[k] > 0.0 && q[k] <= 0.0).collect();
    if smoothed_bins.is_empty() {
        return Ok(SmoothedKl {
            value: kl_divergence(p, q)?,
            epsilon: None,
            smoothed_bins,
        });
    }
    let eps = 1.0 / (2.0 * n_bins.max(1) as f64);
    let mut q2 = q.to_vec();
    for &k in &smoothed_bins {
        q2[k] = eps;
    }
    let total: f64 = q2.iter().sum();
    q2.iter_mut().for_each(|v| *v /= total);
    Ok(SmoothedKl {
        value: kl_divergence(p, &q2)?,
        epsilon: Some(eps),
        smoothed_bins,
    })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn binary_entropy(m: f64) -> f64 {
    let p = (1.0 + m) / 2.0;
    entropy(&[p, 1.0 - p])
}

/// Empirical distribution over the `2^N` states of `panel`.
pub fn state_frequencies(panel: &SignPanel) -> Result<Vec<f64>> {
    let n = panel.n_entities();
    check_exact(n)?;
    let mut freq = vec![0.0; 1 << n];
    for t in 0..panel.n_bins() {
        freq[spin_index(&panel.state_at(t))] += 1.0;
    }
    let total = panel.n_bins() as f64;
    freq.iter_mut().for_each(|v| *v /= total);
    Ok(freq)
}

/// Maximum-likelihood pairwise model fitted by enumerating every state, so
/// its means and correlations match the empirical ones.
pub fn fit_exact_ml(panel: &SignPanel, opts: &OptimOptions) -> Result<(CouplingSet, usize)> {
    let n = panel.n_entities();
    let freq = state_frequencies(panel)?;
    let states: Vec<Vec<i8>> = (0..1usize << n).map(|idx| spin_state(idx, n)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let features = |s: &[i8]| -> Vec<f64> {
        s.iter()
            .map(|&v| f64::from(v))
            .chain(pairs.iter().map(|&(i, j)| f64::from(s[i] * s[j])))
            .collect()
    };
    let feats: Vec<Vec<f64>> = states.iter().map(|s| features(s)).collect();
    let dim = n + pairs.len();
    let mut emp = vec![0.0; dim];
    for (f, &p) in feats.iter().zip(&freq) {
        for (e, v) in emp.iter_mut().zip(f) {
            *e += p * v;
        }
    }
    let objective = |theta: &[f64], grad: &mut [f64]| {
        let logw: Vec<f64> = feats
            .iter()
            .map(|f| f.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logw.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + z.ln();
        grad.copy_from_slice(&emp);
        for (f, l) in feats.iter().zip(&logw) {
            let p = (l - log_z).exp();
            for (g, v) in grad.iter_mut().zip(f) {
                *g -= p * v;
            }
        }
        emp.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - log_z
    };
    let res = lbfgs_maximize(objective, vec![0.0; dim], opts)?;
    if !res.converged {
        return Err(Error::Divergence {
            iteration: res.iterations,
            message: format!(
                "exact maximum likelihood stopped with gradient norm {:.3e}",
                res.gradient_norm
            ),
        });
    }
    let mut params = CouplingSet::zeros(n, 0);
    params.h.copy_from_slice(&res.x[..n]);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        params.j[i][j] = res.x[n + k];
        params.j[j][i] = res.x[n + k];
    }
    Ok((params, res.iterations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiInformation {
    pub n: usize,
    pub n_bins: usize,
    pub s_empirical: f64,
    pub s_independent: f64,
    pub s_pairwise: f64,
    /// `S_indep - S_empirical`.
    pub multi_information: f64,
    /// `S_indep - S_pairwise`.
    pub pairwise_information: f64,
    /// Ratio of the two; `None` when the multi-information is below
    /// `tolerance`.
    pub fraction: Option<f64>,
    /// For independent data, `2 T` times the plug-in multi-information is
    /// asymptotically χ² with `d = 2^N - N - 1` degrees of freedom; the
    /// tolerance is its mean plus four standard deviations, `(d + 4 sqrt(2d)) / (2 T)`.
    pub tolerance: f64,
    pub params: CouplingSet,
    pub iterations: usize,
}

/// Entropies by enumeration (plug-in for the data, exact for the models)
/// and the share of the multi-information reproduced by the pairwise model.
pub fn multi_information_fraction(panel: &SignPanel) -> Result<MultiInformation> {
    let n = panel.n_entities();
    check_exact(n)?;
    let t = panel.n_bins();
    if t == 0 {
        return Err(Error::InsufficientData("panel has no bins".into()));
    }
    let s_empirical = entropy(&state_frequencies(panel)?);
    let s_independent: f64 = panel.mean_signs().into_iter().map(binary_entropy).sum();
    let opts = OptimOptions {
        max_iterations: 5000,
        gradient_tolerance: 1e-9,
        memory: 20,
    };
    let (params, iterations) = fit_exact_ml(panel, &opts)?;
    let s_pairwise = entropy(&exact_distribution(&params)?);
    let multi_information = s_independent - s_empirical;
    let pairwise_information = s_independent - s_pairwise;
    let dof = ((1usize << n) - n - 1) as f64;
    let tolerance = ((dof + 4.0 * (2.0 * dof).sqrt()) / (2.0 * t as f64)).max(1e-12);
    let fraction = (multi_information > tolerance).then(|| pairwise_information / multi_information);
    Ok(MultiInformation {
        n,
        n_bins: t,
        s_empirical,
        s_independent,
        s_pairwise,
        multi_information,
        pairwise_information,
        fraction,
        tolerance,
        params,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::{fit_dichotomized_gaussian, fit_poisson, fit_reversal_pairwise, FitConfig};
    use crate::ingest::compute_reversals;
    use crate::sample::{exact_sample, glauber_sample, random_couplings, rng_from_seed, GlauberConfig};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let hand = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.1438).abs() < 1e-4);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Support { index: 1, .. })
        ));
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
        // Zero p entries contribute nothing even where q is zero.
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn smoothing_fills_empty_bins() {
        let s = kl_divergence_smoothed(&[0.5, 0.5], &[1.0, 0.0], 100).unwrap();
        assert_eq!(s.epsilon, Some(0.005));
        assert_eq!(s.smoothed_bins, vec![1]);
        let q = [1.0 / 1.005, 0.005 / 1.005];
        assert!((s.value - kl_divergence(&[0.5, 0.5], &q).unwrap()).abs() < 1e-15);
        let none = kl_divergence_smoothed(&[0.5, 0.5], &[0.5, 0.5], 100).unwrap();
        assert_eq!(none.epsilon, None);
        assert_eq!(none.value, 0.0);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(raw in proptest::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..12)) {
            let sp: f64 = raw.iter().map(|r| r.0).sum();
            prop_assume!(sp > 0.0);
            let sq: f64 = raw.iter().map(|r| r.1).sum();
            let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
            let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }
    }

    fn independent_reversals(n: usize, t: usize, seed: u64) -> ReversalPanel {
        let mut rng = rng_from_seed(seed);
        let flips = (0..n)
            .map(|_| (0..t).map(|_| u8::from(rng.random::<bool>())).collect())
            .collect();
        ReversalPanel {
            entities: (0..n).map(|i| i.to_string()).collect(),
            timestamps: (0..t).map(|b| b.to_string()).collect(),
            flips,
        }
    }

    #[test]
    fn zero_w_gives_binomial_counts() {
        let n = 6;
        let rev = independent_reversals(n, 100, 1);
        let dg = DgParams {
            mu: vec![0.0; n],
            sigma: (0..n)
                .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
                .collect(),
        };
        let poisson = fit_poisson(&rev).unwrap();
        let d = reversal_count_distributions(&rev, &ReversalCouplingSet::zeros(n), &poisson, &dg, 200_000, 3).unwrap();
        let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0].map(|c| c / 64.0);
        for (k, (a, b)) in d.pairwise.iter().zip(binom).enumerate() {
            assert!((a - b).abs() < 1e-12, "{k}");
        }
        for (k, (a, b)) in d.dg.iter().zip(binom).enumerate() {
            assert!(
                (a - b).abs() < 4.0 * d.dg_standard_error[k].max(1e-4),
                "{k}: {a} vs {b}"
            );
        }
        for dist in [&d.empirical, &d.pairwise, &d.poisson, &d.dg] {
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(matches!(
            reversal_count_distributions(
                &independent_reversals(13, 10, 1),
                &ReversalCouplingSet::zeros(13),
                &PoissonModel { rate: 1.0, n: 13 },
                &dg,
                10,
                0
            ),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn coupled_reversals_peak_near_half_and_pairwise_beats_poisson() {
        let n = 8;
        let panel = glauber_sample(
            &CouplingSet::homogeneous(n, 0.1),
            5000,
            &GlauberConfig {
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let rev = compute_reversals(&panel).unwrap();
        let w = fit_reversal_pairwise(&rev, &FitConfig::default()).unwrap().params;
        let poisson = fit_poisson(&rev).unwrap();
        let dg = fit_dichotomized_gaussian(&rev.as_sign_panel()).unwrap().params;
        let d = reversal_count_distributions(&rev, &w, &poisson, &dg, 100_000, 5).unwrap();
        let mode = d
            .empirical
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(mode.abs_diff(n / 2) <= 1, "mode {mode}");
        let t = rev.n_bins();
        let kl_pair = kl_divergence_smoothed(&d.empirical, &d.pairwise, t).unwrap().value;
        let kl_poisson = kl_divergence_smoothed(&d.empirical, &d.poisson, t).unwrap().value;
        assert!(kl_pair < kl_poisson, "{kl_pair} vs {kl_poisson}");
    }

    #[test]
    fn exact_ml_matches_moments() {
        let mut rng = rng_from_seed(6);
        let truth = random_couplings(4, 0, 0.5, &mut rng);
        let panel = exact_sample(&truth, 5000, 7).unwrap();
        let (fit, _) = fit_exact_ml(
            &panel,
            &OptimOptions {
                max_iterations: 5000,
                gradient_tolerance: 1e-10,
                memory: 20,
            },
        )
        .unwrap();
        let model = exact_distribution(&fit).unwrap();
        let freq = state_frequencies(&panel).unwrap();
        for i in 0..4 {
            let m = |d: &[f64]| {
                d.iter()
                    .enumerate()
                    .map(|(k, p)| p * f64::from(spin_state(k, 4)[i]))
                    .sum::<f64>()
            };
            assert!((m(&model) - m(&freq)).abs() < 1e-9);
            for j in i + 1..4 {
                let c = |d: &[f64]| {
                    d.iter()
                        .enumerate()
                        .map(|(k, p)| {
                            let s = spin_state(k, 4);
                            p * f64::from(s[i] * s[j])
                        })
                        .sum::<f64>()
                };
                assert!((c(&model) - c(&freq)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pairwise_data_fraction_approaches_one() {
        let mut rng = rng_from_seed(8);
        let truth = random_couplings(5, 0, 0.5, &mut rng);
        let small = multi_information_fraction(&exact_sample(&truth, 2_000, 9).unwrap()).unwrap();
        let large = multi_information_fraction(&exact_sample(&truth, 200_000, 9).unwrap()).unwrap();
        let (fs, fl) = (small.fraction.unwrap(), large.fraction.unwrap());
        assert!(fl > 0.98, "{fl}");
        assert!((1.0 - fl).abs() < (1.0 - fs).abs(), "{fs} vs {fl}");
        assert!(large.s_empirical <= large.s_pairwise + 1e-12 && large.s_pairwise <= large.s_independent + 1e-12);
    }

    #[test]
    fn independent_data_fraction_is_undefined() {
        let rev = independent_reversals(4, 50_000, 10);
        let mi = multi_information_fraction(&rev.as_sign_panel()).unwrap();
        assert!(mi.fraction.is_none(), "{mi:?}");
        assert!(mi.multi_information.abs() < 1e-3);
        assert!(matches!(
            multi_information_fraction(&independent_reversals(13, 10, 1).as_sign_panel()),
            Err(Error::Capacity { .. })
        ));
    }
}
