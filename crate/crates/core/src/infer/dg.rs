//! Dichotomized Gaussian: a latent Gaussian thresholded at zero, fitted so
//! the resulting ±1 variables reproduce empirical first and second moments.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::baselines::MEAN_CLAMP_EPS;
use crate::error::{Error, Result};
use crate::ingest::SignPanel;

/// Tolerance on the smallest eigenvalue of `sigma`.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Eigenvalue floor used when projecting onto the PSD cone.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl DgParams {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.sigma_matrix())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("sigma must be {n}×{n}")));
        }
        for i in 0..n {
            for j in 0..n {
                if self.sigma[i][j] != self.sigma[j][i] {
                    return Err(Error::Validation(format!("sigma is not symmetric at ({i}, {j})")));
                }
            }
        }
        if n > 0 && self.min_eigenvalue() < -PSD_TOLERANCE {
            return Err(Error::Validation("sigma is not positive semidefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgFit {
    pub params: DgParams,
    /// The pairwise latent correlations were projected onto the PSD cone.
    pub projected: bool,
    pub warnings: Vec<String>,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// 32-point Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = 32;
        let mut nodes = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for k in 0..m {
            let mut x = (PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for n in 2..=m {
                    let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    })
}

/// `P(Z1 ≤ a, Z2 ≤ b)` for standard normals with correlation `rho`.
///
/// For `|rho| < 0.925` the density is integrated along the correlation
/// parameter with `rho = sin θ`. Closer to ±1 that integrand develops a
/// sharp peak, so the Drezner–Wesolowsky expansion in `sqrt(1 - rho²)` is
/// used instead, following Genz's formulation.
pub fn bivariate_normal_cdf(a: f64, b: f64, rho: f64) -> f64 {
    let normal = standard_normal();
    let rho = rho.clamp(-1.0, 1.0);
    if rho == 0.0 {
        return normal.cdf(a) * normal.cdf(b);
    }
    if rho.abs() < 0.925 {
        return sine_substitution(a, b, rho).clamp(0.0, 1.0);
    }
    // Upper orthant P(X > h, Y > k) with h = -a, k = -b.
    let (h, mut k) = (-a, -b);
    let mut hk = h * k;
    if rho < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    if rho.abs() < 1.0 {
        let as_ = (1.0 - rho) * (1.0 + rho);
        let a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 80.0;
        let asr = -(bs / as_ + hk) / 2.0;
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
        }
        if hk > -100.0 {
            let b = bs.sqrt();
            let sp = (2.0 * PI).sqrt() * normal.cdf(-b / a);
            bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
        }
        let half = a / 2.0;
        let (nodes, weights) = gauss_legendre();
        let mut sum = 0.0;
        for (u, w) in nodes.iter().zip(weights) {
            let xs = (half * (1.0 + u)).powi(2);
            let asr = -(bs / xs + hk) / 2.0;
            if asr > -100.0 {
                let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                let rs = (1.0 - xs).sqrt();
                let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                sum += w * asr.exp() * (sp - ep);
            }
        }
        bvn = (half * sum - bvn) / (2.0 * PI);
    }
    let upper = if rho > 0.0 {
        bvn + normal.cdf(-h.max(k))
    } else if h >= k {
        -bvn
    } else {
        let l = if h < 0.0 {
            normal.cdf(k) - normal.cdf(h)
        } else {
            normal.cdf(-h) - normal.cdf(-k)
        };
        l - bvn
    };
    upper.clamp(0.0, 1.0)
}

fn sine_substitution(a: f64, b: f64, rho: f64) -> f64 {
    let normal = standard_normal();
    let upper = rho.asin();
    let (nodes, weights) = gauss_legendre();
    let panels = 8;
    let width = upper / panels as f64;
    let mut integral = 0.0;
    for p in 0..panels {
        let lo = p as f64 * width;
        for (x, w) in nodes.iter().zip(weights) {
            let theta = lo + 0.5 * width * (x + 1.0);
            let (s, c) = theta.sin_cos();
            integral += 0.5 * width * w * (-(a * a + b * b - 2.0 * a * b * s) / (2.0 * c * c)).exp();
        }
    }
    normal.cdf(a) * normal.cdf(b) + integral / (2.0 * PI)
}

/// Latent correlation whose thresholded pair has `P(+, +) = target`.
fn solve_latent_correlation(mu_i: f64, mu_j: f64, target: f64, pair: (usize, usize)) -> Result<f64> {
    let f = |rho: f64| bivariate_normal_cdf(mu_i, mu_j, rho) - target;
    let (lo_v, hi_v) = (f(-1.0), f(1.0));
    let slack = 1e-10;
    if lo_v > slack || hi_v < -slack {
        return Err(Error::Attainability { i: pair.0, j: pair.1 });
    }
    if lo_v >= 0.0 {
        return Ok(-1.0);
    }
    if hi_v <= 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalue clipping followed by rescaling to unit diagonal.
pub fn nearest_correlation_psd(sigma: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = sigma.len();
    let m = DMatrix::from_fn(n, n, |i, j| sigma[i][j]);
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j {
                1.0
            } else {
                rebuilt[(i, j)] / (rebuilt[(i, i)] * rebuilt[(j, j)]).sqrt()
            };
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Moment-matches a dichotomized Gaussian to a ±1 panel.
pub fn fit_dichotomized_gaussian(panel: &SignPanel) -> Result<DgFit> {
    let n = panel.n_entities();
    let t = panel.n_bins();
    if t == 0 {
        return Err(Error::InsufficientData("empty panel".into()));
    }
    let normal = standard_normal();
    let means = panel.mean_signs();
    let mu: Vec<f64> = means
        .iter()
        .map(|&m| {
            let p = (0.5 * (1.0 + m)).clamp(MEAN_CLAMP_EPS, 1.0 - MEAN_CLAMP_EPS);
            normal.inverse_cdf(p)
        })
        .collect();
    let mut sigma = vec![vec![0.0; n]; n];
    for i in 0..n {
        sigma[i][i] = 1.0;
        for j in i + 1..n {
            let prod = panel.signs[i]
                .iter()
                .zip(&panel.signs[j])
                .map(|(&a, &b)| i64::from(a) * i64::from(b))
                .sum::<i64>() as f64
                / t as f64;
            let target = 0.25 * (1.0 + means[i] + means[j] + prod);
            let rho = solve_latent_correlation(mu[i], mu[j], target, (i, j))?;
            sigma[i][j] = rho;
            sigma[j][i] = rho;
        }
    }
    let mut params = DgParams { mu, sigma };
    let mut warnings = Vec::new();
    let mut projected = false;
    if n > 0 {
        let min_eig = params.min_eigenvalue();
        if min_eig < -PSD_TOLERANCE {
            let msg = format!("latent correlation matrix has eigenvalue {min_eig:.3e}; projected onto the PSD cone");
            log::warn!("{msg}");
            warnings.push(msg);
            params.sigma = nearest_correlation_psd(&params.sigma);
            projected = true;
        }
    }
    Ok(DgFit {
        params,
        projected,
        warnings,
    })
}
