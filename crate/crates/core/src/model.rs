//! The pairwise maximum-entropy model and its conditional probabilities.
//!
//! Orientation states are slices of `i8` over {-1, +1}. Reversal states are
//! slices of `u8` over {0, 1}. Enumerated states are indexed by a bitmask
//! whose bit `i` is set when entity `i` is `+1` (or `1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `N` for which the 2^N states are enumerated.
pub const ENUMERATION_CAP: usize = 20;

/// Couplings `J`, fields `h` and lagged couplings `K^τ` (`lags[τ-1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CouplingSetRepr", into = "CouplingSetRepr")]
pub struct CouplingSet {
    pub j: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub lags: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct CouplingSetRepr {
    n: usize,
    l: usize,
    j: Vec<Vec<f64>>,
    h: Vec<f64>,
    #[serde(default)]
    k: Vec<Vec<Vec<f64>>>,
}

impl From<CouplingSet> for CouplingSetRepr {
    fn from(c: CouplingSet) -> Self {
        Self {
            n: c.n(),
            l: c.n_lags(),
            j: c.j,
            h: c.h,
            k: c.lags,
        }
    }
}

impl TryFrom<CouplingSetRepr> for CouplingSet {
    type Error = Error;

    fn try_from(r: CouplingSetRepr) -> Result<Self> {
        if r.h.len() != r.n || r.k.len() != r.l {
            return Err(Error::Shape(format!(
                "declared n={}, l={} but h has {} entries and k has {} matrices",
                r.n,
                r.l,
                r.h.len(),
                r.k.len()
            )));
        }
        CouplingSet::new(r.j, r.h, r.k)
    }
}

fn check_square(m: &[Vec<f64>], n: usize, what: &str) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("{what} must be {n}×{n}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    Ok(())
}

impl CouplingSet {
    pub fn new(j: Vec<Vec<f64>>, h: Vec<f64>, lags: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = h.len();
        check_square(&j, n, "J")?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("h has non-finite entries".into()));
        }
        for (i, row) in j.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(Error::Validation(format!("J has nonzero diagonal at {i}")));
            }
            for (k, &v) in row.iter().enumerate() {
                if v != j[k][i] {
                    return Err(Error::Validation(format!("J is not symmetric at ({i}, {k})")));
                }
            }
        }
        for (tau, k) in lags.iter().enumerate() {
            check_square(k, n, &format!("K^{}", tau + 1))?;
        }
        Ok(Self { j, h, lags })
    }

    pub fn zeros(n: usize, n_lags: usize) -> Self {
        Self {
            j: vec![vec![0.0; n]; n],
            h: vec![0.0; n],
            lags: vec![vec![vec![0.0; n]; n]; n_lags],
        }
    }

    /// All off-diagonal couplings equal to `j`, zero fields.
    pub fn homogeneous(n: usize, j: f64) -> Self {
        let mut c = Self::zeros(n, 0);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    c.j[a][b] = j;
                }
            }
        }
        c
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn n_lags(&self) -> usize {
        self.lags.len()
    }

    /// Copy with every coupling multiplied by `factor` (fields untouched).
    pub fn scaled_couplings(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.j.iter_mut().flatten().for_each(|v| *v *= factor);
        out.lags.iter_mut().flatten().flatten().for_each(|v| *v *= factor);
        out
    }

    /// Off-diagonal `J` entries for `i < j`.
    pub fn upper_couplings(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for k in i + 1..n {
                out.push(self.j[i][k]);
            }
        }
        out
    }

    fn require_memoryless(&self) -> Result<()> {
        if self.n_lags() != 0 {
            return Err(Error::Shape(format!(
                "operation needs the memoryless model, got {} lags",
                self.n_lags()
            )));
        }
        Ok(())
    }

    fn require_state(&self, state: &[i8]) -> Result<()> {
        if state.len() != self.n() {
            return Err(Error::Shape(format!(
                "state has {} entries, model has {}",
                state.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn require_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Shape(format!("entity {i} out of range for N={}", self.n())));
        }
        Ok(())
    }

    /// `Σ_{j≠i} J_ij s_j + h_i` for a full state.
    pub fn local_field(&self, i: usize, state: &[i8]) -> f64 {
        let row = &self.j[i];
        let mut f = 0.0;
        for (k, &s) in state.iter().enumerate() {
            if k != i {
                f += row[k] * f64::from(s);
            }
        }
        f + self.h[i]
    }

    /// Lagged contribution `Σ_τ Σ_j K^τ_ij s_{j,t-τ}`; `history[τ-1]` is the state at `t-τ`.
    pub fn lagged_field<S: AsRef<[i8]>>(&self, i: usize, history: &[S]) -> f64 {
        let mut f = 0.0;
        for (k, past) in self.lags.iter().zip(history) {
            for (kv, &s) in k[i].iter().zip(past.as_ref()) {
                f += kv * f64::from(s);
            }
        }
        f
    }
}

/// `P(s_i = sign | field)` for the logistic conditional `½[1 + s tanh(f)]`.
#[inline]
pub fn spin_probability(sign: i8, field: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * f64::from(sign) * field).exp())
}

/// Exponent `½ Σ_ij J_ij s_i s_j + Σ_i h_i s_i` of the pairwise distribution.
pub fn log_weight(state: &[i8], params: &CouplingSet) -> Result<f64> {
    params.require_memoryless()?;
    params.require_state(state)?;
    Ok(log_weight_unchecked(state, params))
}

fn log_weight_unchecked(state: &[i8], params: &CouplingSet) -> f64 {
    let mut pair = 0.0;
    let mut field = 0.0;
    for (i, &si) in state.iter().enumerate() {
        let si = f64::from(si);
        let row = &params.j[i];
        let mut acc = 0.0;
        for (k, &sk) in state.iter().enumerate() {
            acc += row[k] * f64::from(sk);
        }
        pair += si * acc;
        field += params.h[i] * si;
    }
    0.5 * pair + field
}

/// The ±1 state with bitmask `index`.
pub fn spin_state(index: usize, n: usize) -> Vec<i8> {
    (0..n).map(|i| if index >> i & 1 == 1 { 1 } else { -1 }).collect()
}

/// Bitmask index of a ±1 state.
pub fn spin_index(state: &[i8]) -> usize {
    state
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &s)| if s > 0 { acc | 1 << i } else { acc })
}

pub(crate) fn check_capacity(n: usize) -> Result<()> {
    if n > ENUMERATION_CAP {
        return Err(Error::Capacity {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Unnormalized log-weights of all 2^N states.
fn enumerate_log_weights(params: &CouplingSet) -> Result<Vec<f64>> {
    params.require_memoryless()?;
    let n = params.n();
    check_capacity(n)?;
    Ok((0..1usize << n)
        .map(|idx| log_weight_unchecked(&spin_state(idx, n), params))
        .collect())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln Z`, computed with a max shift so large couplings do not overflow.
pub fn log_partition_function(params: &CouplingSet) -> Result<f64> {
    Ok(log_sum_exp(&enumerate_log_weights(params)?))
}

pub fn partition_function(params: &CouplingSet) -> Result<f64> {
    Ok(log_partition_function(params)?.exp())
}

/// Probabilities of all 2^N states, indexed by [`spin_index`].
pub fn exact_distribution(params: &CouplingSet) -> Result<Vec<f64>> {
    let lw = enumerate_log_weights(params)?;
    let lz = log_sum_exp(&lw);
    Ok(lw.into_iter().map(|v| (v - lz).exp()).collect())
}

pub fn exact_probability(state: &[i8], params: &CouplingSet) -> Result<f64> {
    params.require_state(state)?;
    let lw = enumerate_log_weights(params)?;
    let lz = log_sum_exp(&lw);
    Ok((lw[spin_index(state)] - lz).exp())
}

/// `P(s_i | s_{-i})` with `s_i` read from `state`.
pub fn conditional_probability(i: usize, state: &[i8], params: &CouplingSet) -> Result<f64> {
    params.require_state(state)?;
    params.require_index(i)?;
    Ok(spin_probability(state[i], params.local_field(i, state)))
}

/// Inserts an entity's sign into a context that excludes it.
fn with_entity(i: usize, sign: i8, context: &[i8]) -> Vec<i8> {
    let mut full = Vec::with_capacity(context.len() + 1);
    full.extend_from_slice(&context[..i]);
    full.push(sign);
    full.extend_from_slice(&context[i..]);
    full
}

fn check_flip_inputs(i: usize, prev_sign: i8, context: &[i8], params: &CouplingSet) -> Result<()> {
    params.require_index(i)?;
    if context.len() + 1 != params.n() {
        return Err(Error::Shape(format!(
            "context has {} entries, expected {}",
            context.len(),
            params.n() - 1
        )));
    }
    if prev_sign != 1 && prev_sign != -1 {
        return Err(Error::Validation(format!("prev_sign {prev_sign} is not ±1")));
    }
    Ok(())
}

/// Probability that entity `i` holds `-prev_sign` given the other entities'
/// current orientations (`context`, length N-1, entity `i` removed).
pub fn flip_probability_instant(i: usize, prev_sign: i8, context: &[i8], params: &CouplingSet) -> Result<f64> {
    params.require_memoryless()?;
    check_flip_inputs(i, prev_sign, context, params)?;
    let state = with_entity(i, prev_sign, context);
    Ok(spin_probability(-prev_sign, params.local_field(i, &state)))
}

/// Flip probability with lagged terms; `history[τ-1]` is the full state at `t-τ`.
pub fn flip_probability_hist<S: AsRef<[i8]>>(
    i: usize,
    prev_sign: i8,
    context: &[i8],
    history: &[S],
    params: &CouplingSet,
) -> Result<f64> {
    check_flip_inputs(i, prev_sign, context, params)?;
    if history.len() != params.n_lags() {
        return Err(Error::Shape(format!(
            "history has {} states, model has {} lags",
            history.len(),
            params.n_lags()
        )));
    }
    if let Some(bad) = history.iter().position(|h| h.as_ref().len() != params.n()) {
        return Err(Error::Shape(format!("history state {bad} has wrong length")));
    }
    let state = with_entity(i, prev_sign, context);
    Ok(flip_probability_full(i, prev_sign, &state, history, params))
}

/// Flip probability from a full current state; the entry at `i` is ignored.
pub(crate) fn flip_probability_full<S: AsRef<[i8]>>(
    i: usize,
    prev_sign: i8,
    state: &[i8],
    history: &[S],
    params: &CouplingSet,
) -> f64 {
    let field = params.local_field(i, state) + params.lagged_field(i, history);
    spin_probability(-prev_sign, field)
}

/// Reversal couplings `W` (symmetric, diagonal allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReversalRepr", into = "ReversalRepr")]
pub struct ReversalCouplingSet {
    pub w: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ReversalRepr {
    n: usize,
    w: Vec<Vec<f64>>,
}

impl From<ReversalCouplingSet> for ReversalRepr {
    fn from(r: ReversalCouplingSet) -> Self {
        Self { n: r.n(), w: r.w }
    }
}

impl TryFrom<ReversalRepr> for ReversalCouplingSet {
    type Error = Error;

    fn try_from(r: ReversalRepr) -> Result<Self> {
        if r.w.len() != r.n {
            return Err(Error::Shape(format!("declared n={} but W has {} rows", r.n, r.w.len())));
        }
        ReversalCouplingSet::new(r.w)
    }
}

impl ReversalCouplingSet {
    pub fn new(w: Vec<Vec<f64>>) -> Result<Self> {
        let n = w.len();
        check_square(&w, n, "W")?;
        for i in 0..n {
            for k in 0..n {
                if w[i][k] != w[k][i] {
                    return Err(Error::Validation(format!("W is not symmetric at ({i}, {k})")));
                }
            }
        }
        Ok(Self { w })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            w: vec![vec![0.0; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }
}

/// Exponent `Σ_ij W_ij x_i x_j` (both orderings and the diagonal counted).
pub fn reversal_log_weight(x: &[u8], params: &ReversalCouplingSet) -> Result<f64> {
    if x.len() != params.n() {
        return Err(Error::Shape(format!(
            "state has {} entries, model has {}",
            x.len(),
            params.n()
        )));
    }
    if x.iter().any(|&v| v > 1) {
        return Err(Error::Validation("reversal states must be 0/1".into()));
    }
    Ok(reversal_log_weight_unchecked(x, params))
}

fn reversal_log_weight_unchecked(x: &[u8], params: &ReversalCouplingSet) -> f64 {
    let mut total = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0 {
            continue;
        }
        for (k, &xk) in x.iter().enumerate() {
            if xk == 1 {
                total += params.w[i][k];
            }
        }
    }
    total
}

/// The 0/1 state with bitmask `index`.
pub fn binary_state(index: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| (index >> i & 1) as u8).collect()
}

/// Probabilities of all 2^N reversal states, indexed by bitmask.
pub fn reversal_distribution(params: &ReversalCouplingSet) -> Result<Vec<f64>> {
    let n = params.n();
    check_capacity(n)?;
    let lw: Vec<f64> = (0..1usize << n)
        .map(|idx| reversal_log_weight_unchecked(&binary_state(idx, n), params))
        .collect();
    let lz = log_sum_exp(&lw);
    Ok(lw.into_iter().map(|v| (v - lz).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(j12: f64, h: [f64; 2]) -> CouplingSet {
        CouplingSet::new(vec![vec![0.0, j12], vec![j12, 0.0]], h.to_vec(), vec![]).unwrap()
    }

    pub(crate) fn random_params(n: usize, n_lags: usize, rng: &mut impl Rng) -> CouplingSet {
        let mut c = CouplingSet::zeros(n, n_lags);
        for i in 0..n {
            c.h[i] = rng.random_range(-0.5..0.5);
            for k in i + 1..n {
                let v = rng.random_range(-0.6..0.6);
                c.j[i][k] = v;
                c.j[k][i] = v;
            }
            for lag in c.lags.iter_mut() {
                for k in 0..n {
                    lag[i][k] = rng.random_range(-0.4..0.4);
                }
            }
        }
        c
    }

    /// Conditional of entity i by summing enumerated joint probabilities.
    fn brute_conditional(i: usize, state: &[i8], params: &CouplingSet) -> f64 {
        let mut flipped = state.to_vec();
        flipped[i] = -flipped[i];
        let a = exact_probability(state, params).unwrap();
        let b = exact_probability(&flipped, params).unwrap();
        a / (a + b)
    }

    #[test]
    fn log_weight_examples() {
        let zero = CouplingSet::zeros(3, 0);
        assert_eq!(log_weight(&[1, -1, 1], &zero).unwrap(), 0.0);
        assert_eq!(log_weight(&[1, 1], &pair(1.0, [0.0, 0.0])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            log_weight(&[1, -1], &pair(1.0, [0.5, 0.0])).unwrap(),
            -0.5,
            epsilon = 1e-15
        );
        assert!(matches!(log_weight(&[1], &zero), Err(Error::Shape(_))));
    }

    #[test]
    fn partition_function_examples() {
        assert_abs_diff_eq!(
            partition_function(&CouplingSet::zeros(3, 0)).unwrap(),
            8.0,
            epsilon = 1e-12
        );
        let mut c = CouplingSet::zeros(4, 0);
        c.h[0] = 0.7;
        assert_abs_diff_eq!(
            partition_function(&c).unwrap(),
            2.0 * 0.7f64.cosh() * 8.0,
            epsilon = 1e-12
        );
        let z = 2.0 * 0.5f64.exp() + 2.0 * (-0.5f64).exp();
        assert_abs_diff_eq!(partition_function(&pair(0.5, [0.0, 0.0])).unwrap(), z, epsilon = 1e-12);
        assert!(matches!(
            partition_function(&CouplingSet::zeros(21, 0)),
            Err(Error::Capacity { n: 21, cap: 20 })
        ));
    }

    #[test]
    fn exact_probability_examples() {
        let zero = CouplingSet::zeros(4, 0);
        assert_abs_diff_eq!(
            exact_probability(&[1, -1, -1, 1], &zero).unwrap(),
            1.0 / 16.0,
            epsilon = 1e-15
        );
        let strong = pair(40.0, [0.0, 0.0]);
        assert_abs_diff_eq!(exact_probability(&[1, 1], &strong).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(exact_probability(&[-1, -1], &strong).unwrap(), 0.5, epsilon = 1e-12);
        let z = 2.0 * 0.5f64.exp() + 2.0 * (-0.5f64).exp();
        assert_abs_diff_eq!(
            exact_probability(&[1, -1], &pair(0.5, [0.0, 0.0])).unwrap(),
            (-0.5f64).exp() / z,
            epsilon = 1e-15
        );
    }

    #[test]
    fn conditional_examples() {
        let zero = CouplingSet::zeros(3, 0);
        assert_eq!(conditional_probability(1, &[1, -1, 1], &zero).unwrap(), 0.5);
        let mut c = CouplingSet::zeros(2, 0);
        c.h[0] = 50.0;
        assert!(conditional_probability(0, &[1, 1], &c).unwrap() > 1.0 - 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(3, 0, &mut rng);
        for idx in 0..8 {
            let s = spin_state(idx, 3);
            for i in 0..3 {
                assert_abs_diff_eq!(
                    conditional_probability(i, &s, &params).unwrap(),
                    brute_conditional(i, &s, &params),
                    epsilon = 1e-12
                );
            }
        }
        assert!(conditional_probability(3, &[1, 1, 1], &zero).is_err());
    }

    #[test]
    fn instant_flip_examples() {
        assert_eq!(
            flip_probability_instant(0, 1, &[1], &CouplingSet::zeros(2, 0)).unwrap(),
            0.5
        );
        let c = pair(1.0, [0.0, 0.0]);
        let expect = (1.0 - 1f64.tanh()) / 2.0;
        assert_abs_diff_eq!(
            flip_probability_instant(0, 1, &[1], &c).unwrap(),
            expect,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            flip_probability_instant(0, 1, &[1], &c).unwrap(),
            0.11920,
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            flip_probability_instant(0, -1, &[1], &c).unwrap(),
            0.88080,
            epsilon = 1e-5
        );
        assert!(matches!(
            flip_probability_instant(0, 1, &[1, 1], &c),
            Err(Error::Shape(_))
        ));
        assert!(flip_probability_instant(2, 1, &[1], &c).is_err());
    }

    #[test]
    fn hist_flip_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c = random_params(4, 2, &mut rng);
        c.lags.iter_mut().flatten().flatten().for_each(|v| *v = 0.0);
        let mem = CouplingSet::new(c.j.clone(), c.h.clone(), vec![]).unwrap();
        let history = vec![vec![1, -1, 1, 1], vec![-1, -1, 1, -1]];
        for i in 0..4 {
            for prev in [-1, 1] {
                let ctx = [1, -1, -1];
                assert_eq!(
                    flip_probability_hist(i, prev, &ctx, &history, &c).unwrap().to_bits(),
                    flip_probability_instant(i, prev, &ctx, &mem).unwrap().to_bits()
                );
            }
        }

        let mut k = CouplingSet::zeros(2, 1);
        k.lags[0][0][0] = 1.0;
        let p = flip_probability_hist(0, 1, &[-1], &[vec![1, -1]], &k).unwrap();
        assert_abs_diff_eq!(p, (1.0 - 1f64.tanh()) / 2.0, epsilon = 1e-15);
        let p = flip_probability_hist(0, 1, &[1], &[vec![1, 1], vec![1, 1]], &CouplingSet::zeros(2, 2)).unwrap();
        assert_eq!(p, 0.5);
        assert!(matches!(
            flip_probability_hist(0, 1, &[1], &[vec![1, 1]], &CouplingSet::zeros(2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reversal_weight_examples() {
        let zero = ReversalCouplingSet::zeros(3);
        assert_eq!(reversal_log_weight(&[1, 0, 1], &zero).unwrap(), 0.0);
        let w22 = 0.3;
        let w = ReversalCouplingSet::new(vec![vec![1.0, 0.5], vec![0.5, w22]]).unwrap();
        assert_eq!(reversal_log_weight(&[0, 0], &w).unwrap(), 0.0);
        assert_abs_diff_eq!(
            reversal_log_weight(&[1, 1], &w).unwrap(),
            1.0 + 0.5 + 0.5 + w22,
            epsilon = 1e-15
        );
        assert!(reversal_log_weight(&[1], &w).is_err());
    }

    #[test]
    fn coupling_validation_and_json() {
        assert!(CouplingSet::new(vec![vec![0.0, 1.0], vec![0.5, 0.0]], vec![0.0; 2], vec![]).is_err());
        assert!(CouplingSet::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.0; 2], vec![]).is_err());
        let mut c = CouplingSet::zeros(2, 1);
        c.j[0][1] = 0.1;
        c.j[1][0] = 0.1;
        c.lags[0][1][0] = -0.25;
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(
            json,
            r#"{"n":2,"l":1,"j":[[0.0,0.1],[0.1,0.0]],"h":[0.0,0.0],"k":[[[0.0,0.0],[-0.25,0.0]]]}"#
        );
        assert_eq!(serde_json::from_str::<CouplingSet>(&json).unwrap(), c);
        assert!(serde_json::from_str::<CouplingSet>(r#"{"n":3,"l":0,"j":[[0.0]],"h":[0.0]}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn flip_probabilities_are_complementary(seed in 0u64..500, prev in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_params(5, 0, &mut rng);
            let ctx: Vec<i8> = (0..4).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let i = rng.random_range(0..5);
            let _ = prev;
            let a = flip_probability_instant(i, 1, &ctx, &params).unwrap();
            let b = flip_probability_instant(i, -1, &ctx, &params).unwrap();
            proptest::prop_assert!((a + b - 1.0).abs() < 1e-14);
        }

        #[test]
        fn exact_distribution_is_normalized(seed in 0u64..200, n in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_params(n, 0, &mut rng);
            let total: f64 = exact_distribution(&params).unwrap().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn zero_field_is_sign_symmetric(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = random_params(6, 0, &mut rng);
            params.h.iter_mut().for_each(|v| *v = 0.0);
            let p = exact_distribution(&params).unwrap();
            let mask = (1 << 6) - 1;
            for idx in 0..p.len() {
                proptest::prop_assert!((p[idx] - p[idx ^ mask]).abs() < 1e-15);
            }
        }

        #[test]
        fn instant_flip_matches_enumeration(seed in 0u64..100, n in 2usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_params(n, 0, &mut rng);
            let state: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let i = rng.random_range(0..n);
            let prev = state[i];
            let mut ctx = state.clone();
            ctx.remove(i);
            let mut flipped = state.clone();
            flipped[i] = -prev;
            let brute = brute_conditional(i, &flipped, &params);
            let got = flip_probability_instant(i, prev, &ctx, &params).unwrap();
            proptest::prop_assert!((got - brute).abs() < 1e-12, "{} vs {}", got, brute);
        }
    }
}
