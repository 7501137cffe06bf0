use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ReversalPanel, SignPanel};
use crate::model::CouplingSet;

/// Clamp applied to empirical means before `atanh`.
pub const MEAN_CLAMP_EPS: f64 = 1e-9;

/// Independent model: `J = 0`, `tanh(h_i)` equal to each entity's mean sign.
pub fn fit_independent(panel: &SignPanel) -> CouplingSet {
    let mut params = CouplingSet::zeros(panel.n_entities(), 0);
    for (h, m) in params.h.iter_mut().zip(panel.mean_signs()) {
        *h = m.clamp(-1.0 + MEAN_CLAMP_EPS, 1.0 - MEAN_CLAMP_EPS).atanh();
    }
    params
}

/// Replaces every off-diagonal coupling by their mean and zeroes the fields.
///
/// The mean runs over all ordered pairs `i ≠ j`.
pub fn homogenize(params: &CouplingSet) -> Result<CouplingSet> {
    if params.n_lags() != 0 {
        return Err(Error::Shape("homogenize needs the memoryless model".into()));
    }
    let n = params.n();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .map(|(i, k)| params.j[i][k])
        .collect();
    let mean = if off.is_empty() {
        0.0
    } else {
        off.iter().sum::<f64>() / off.len() as f64
    };
    Ok(CouplingSet::homogeneous(params.n(), mean))
}

/// Poisson model of the number of simultaneous reversals per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonModel {
    pub rate: f64,
    /// Number of entities; the count distribution is truncated to `0..=n`.
    pub n: usize,
}

impl PoissonModel {
    /// Poisson pmf restricted to `0..=n` and renormalized.
    pub fn count_distribution(&self) -> Vec<f64> {
        if self.rate <= 0.0 {
            let mut d = vec![0.0; self.n + 1];
            d[0] = 1.0;
            return d;
        }
        let mut log_fact = 0.0;
        let logs: Vec<f64> = (0..=self.n)
            .map(|k| {
                if k > 0 {
                    log_fact += (k as f64).ln();
                }
                k as f64 * self.rate.ln() - self.rate - log_fact
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

/// Maximum-likelihood rate: the mean simultaneous-reversal count.
pub fn fit_poisson(reversals: &ReversalPanel) -> Result<PoissonModel> {
    let counts = reversals.counts();
    if counts.is_empty() {
        return Err(Error::InsufficientData("no reversal bins".into()));
    }
    let rate = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    Ok(PoissonModel {
        rate,
        n: reversals.n_entities(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn reversal_panel(flips: Vec<Vec<u8>>) -> ReversalPanel {
        let t = flips[0].len();
        ReversalPanel {
            entities: (0..flips.len()).map(|i| i.to_string()).collect(),
            timestamps: (0..t).map(|t| t.to_string()).collect(),
            flips,
        }
    }

    #[test]
    fn independent_examples() {
        let panel = SignPanel::from_signs(vec![vec![1, -1, 1, -1], vec![1, 1, 1, -1], vec![1, 1, 1, 1]]).unwrap();
        let p = fit_independent(&panel);
        assert_eq!(p.h[0], 0.0);
        assert!((p.h[1] - 0.5f64.atanh()).abs() < 1e-15);
        assert!((p.h[1] - 0.5493).abs() < 1e-4);
        assert!(p.h[2].is_finite());
        assert_eq!(p.h[2], (1.0 - MEAN_CLAMP_EPS).atanh());
        assert!(p.upper_couplings().iter().all(|&v| v == 0.0));
        for (h, m) in p.h.iter().zip(panel.mean_signs()).take(2) {
            assert!((h.tanh() - m).abs() < 1e-12);
        }
    }

    #[test]
    fn homogenize_examples() {
        let mut c = CouplingSet::zeros(3, 0);
        let vals = [(0, 1, 0.2), (0, 2, 0.4), (1, 2, 0.3)];
        for (a, b, v) in vals {
            c.j[a][b] = v;
            c.j[b][a] = v;
        }
        c.h = vec![0.1, -0.2, 0.3];
        let hm = homogenize(&c).unwrap();
        assert!(hm.upper_couplings().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert_eq!(hm.h, vec![0.0; 3]);
        assert_eq!(homogenize(&hm).unwrap(), hm);

        let mut two = CouplingSet::zeros(2, 0);
        two.j[0][1] = 0.2;
        two.j[1][0] = 0.4;
        let hm = homogenize(&two).unwrap();
        assert!((hm.j[0][1] - 0.3).abs() < 1e-15 && hm.j[0][1] == hm.j[1][0]);
        assert_eq!(homogenize(&CouplingSet::zeros(4, 0)).unwrap(), CouplingSet::zeros(4, 0));
        assert!(homogenize(&CouplingSet::zeros(2, 1)).is_err());
    }

    #[test]
    fn poisson_examples() {
        let m = fit_poisson(&reversal_panel(vec![vec![1; 5], vec![1; 5], vec![0; 5]])).unwrap();
        assert_eq!(m.rate, 2.0);
        let z = fit_poisson(&reversal_panel(vec![vec![0; 4]; 3])).unwrap();
        assert_eq!(z.rate, 0.0);
        assert_eq!(z.count_distribution(), vec![1.0, 0.0, 0.0, 0.0]);
        let d = m.count_distribution();
        assert_eq!(d.len(), 4);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_rate_from_sample() {
        // 10^5 bins of Poisson(1.5) counts spread over 20 entities.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let dist = Poisson::new(1.5).unwrap();
        let n = 20;
        let t = 100_000;
        let mut flips = vec![vec![0u8; t]; n];
        for b in 0..t {
            let k = (dist.sample(&mut rng) as usize).min(n);
            for row in flips.iter_mut().take(k) {
                row[b] = 1;
            }
        }
        let m = fit_poisson(&reversal_panel(flips)).unwrap();
        assert!((m.rate - 1.5).abs() < 0.02, "{}", m.rate);
    }
}
