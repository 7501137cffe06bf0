//! Small deterministic maximizers for concave objectives.
//!
//! [`lbfgs_maximize`] handles smooth objectives; [`proximal_maximize_l1`]
//! handles a smooth part minus a weighted ℓ1 penalty using accelerated
//! proximal gradient with restart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Number of correction pairs kept by L-BFGS.
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective after each iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean norm of the (sub)gradient at `x`.
    pub gradient_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite_or_diverged(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence {
            iteration,
            message: format!("objective evaluated to {value}"),
        })
    }
}

/// Maximizes a smooth function. `f(x, grad)` returns the value and writes the gradient.
pub fn lbfgs_maximize<F>(mut f: F, x0: Vec<f64>, opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut value = finite_or_diverged(f(&x, &mut g), 0)?;
    let mut trace = vec![value];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut iterations = 0;
    let mut gnorm = norm(&g);

    while gnorm > opts.gradient_tolerance && iterations < opts.max_iterations {
        iterations += 1;

        // Two-loop recursion on the minimization problem -f, whose gradient is -g.
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alpha[k] = rho * dot(&s_hist[k], &q);
            q.iter_mut().zip(&y_hist[k]).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / gnorm.max(1.0)
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for k in 0..m {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &q);
            q.iter_mut()
                .zip(&s_hist[k])
                .for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
        }
        // Ascent direction.
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope <= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| v / gnorm.max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut new_value = value;
        for _ in 0..60 {
            for k in 0..dim {
                x_new[k] = x[k] + step * dir[k];
            }
            new_value = f(&x_new, &mut g_new);
            if new_value.is_finite() && new_value >= value + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            finite_or_diverged(new_value, iterations)?;
            // No further progress is possible at floating-point resolution.
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // y is the gradient change of -f.
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        value = new_value;
        gnorm = norm(&g);
        trace.push(value);
    }

    Ok(OptimResult {
        x,
        value,
        trace,
        converged: gnorm <= opts.gradient_tolerance,
        iterations,
        gradient_norm: gnorm,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Norm of the minimum-norm element of the superdifferential of `smooth - Σ w|x|`.
fn l1_stationarity(x: &[f64], g: &[f64], weights: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(weights)
        .map(|((&xi, &gi), &w)| {
            let r = if xi != 0.0 {
                gi - w * xi.signum()
            } else {
                soft_threshold(gi, w)
            };
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Maximizes `smooth(x) - Σ_k weights[k] |x_k|`.
pub fn proximal_maximize_l1<F>(mut smooth: F, x0: Vec<f64>, weights: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let penalty = |x: &[f64]| -> f64 { x.iter().zip(weights).map(|(a, w)| w * a.abs()).sum() };
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = finite_or_diverged(smooth(&x, &mut g), 0)?;
    let mut value = fx - penalty(&x);
    let mut trace = vec![value];
    let mut stationarity = l1_stationarity(&x, &g, weights);

    let mut y = x.clone();
    let mut gy = g.clone();
    let mut fy = fx;
    let mut momentum = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut candidate = vec![0.0; dim];
    let mut gc = vec![0.0; dim];
    let mut iterations = 0;
    let mut restarted = false;

    while stationarity > opts.gradient_tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let mut fc;
        loop {
            let t = 1.0 / lipschitz;
            for k in 0..dim {
                candidate[k] = soft_threshold(y[k] + t * gy[k], t * weights[k]);
            }
            fc = smooth(&candidate, &mut gc);
            let diff: Vec<f64> = candidate.iter().zip(&y).map(|(a, b)| a - b).collect();
            // Quadratic lower model of the concave smooth part around y.
            let model = fy + dot(&gy, &diff) - 0.5 * lipschitz * dot(&diff, &diff);
            if fc.is_finite() && fc >= model - 1e-12 * fy.abs().max(1.0) {
                break;
            }
            lipschitz *= 2.0;
            if lipschitz > 1e20 {
                return Err(Error::Divergence {
                    iteration: iterations,
                    message: "step size underflow in proximal line search".into(),
                });
            }
        }
        let cand_value = fc - penalty(&candidate);
        if cand_value < value {
            if restarted {
                // A plain proximal step from x no longer improves.
                break;
            }
            // Restart momentum from the current iterate.
            restarted = true;
            momentum = 1.0;
            y.copy_from_slice(&x);
            gy.copy_from_slice(&g);
            fy = fx;
            continue;
        }
        restarted = false;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        for k in 0..dim {
            y[k] = candidate[k] + beta * (candidate[k] - x[k]);
        }
        x.copy_from_slice(&candidate);
        g.copy_from_slice(&gc);
        fx = fc;
        value = cand_value;
        fy = finite_or_diverged(smooth(&y, &mut gy), iterations)?;
        momentum = next_momentum;
        lipschitz = (lipschitz * 0.9).max(1e-12);
        stationarity = l1_stationarity(&x, &g, weights);
        trace.push(value);
    }

    Ok(OptimResult {
        x,
        value,
        trace,
        converged: stationarity <= opts.gradient_tolerance,
        iterations,
        gradient_norm: stationarity,
    })
}
