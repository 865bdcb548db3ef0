//! Time-bounded reachability `P[true U<=t φ]`.
//!
//! φ-states are made absorbing and merged into one goal state; states that
//! cannot reach φ are dropped (their mass never returns). The reduced chain is
//! solved by uniformization with Fox-Glynn style truncation, or, when `Λt` is
//! too large for step-by-step uniformization, by dense scaling and squaring of
//! `exp(Qh)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::Ctmc;

/// Headroom factor for the uniformization rate.
pub const UNIFORMIZATION_HEADROOM: f64 = 1.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TransientConfig {
    /// Absolute error bound.
    pub epsilon: f64,
    /// Largest `Λt` solved by plain uniformization.
    pub uniformization_limit: f64,
    /// Largest reduced chain solved densely.
    pub dense_limit: usize,
}

impl Default for TransientConfig {
    fn default() -> Self {
        TransientConfig {
            epsilon: 1e-9,
            uniformization_limit: 2.0e5,
            dense_limit: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransientError {
    #[error("mission time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("target vector has {got} entries for {expected} states")]
    TargetSize { expected: usize, got: usize },
    #[error("chain too stiff: Λt = {lambda_t:e} with {states} relevant states exceeds both solvers' limits")]
    TooStiff { lambda_t: f64, states: usize },
}

/// Reduced absorbing chain: relevant transient states `0..n`, goal `n`.
struct Reduced {
    n: usize,
    init: usize,
    /// `(src, dst, rate)` over reduced indices; dst may be the goal.
    edges: Vec<(usize, usize, f64)>,
    exit: Vec<f64>,
}

fn reduce(ctmc: &Ctmc, target: &[bool]) -> Option<Reduced> {
    let n = ctmc.state_count();
    // Backward reachability of the target.
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    for t in &ctmc.transitions {
        preds[t.dst as usize].push(t.src);
    }
    let mut can = target.to_vec();
    let mut stack: Vec<usize> = (0..n).filter(|&s| target[s]).collect();
    while let Some(s) = stack.pop() {
        for &p in &preds[s] {
            let p = p as usize;
            if !can[p] && !target[p] {
                can[p] = true;
                stack.push(p);
            }
        }
    }
    if !can[ctmc.initial] {
        return None;
    }
    let mut map = vec![usize::MAX; n];
    let mut k = 0;
    for s in 0..n {
        if can[s] && !target[s] {
            map[s] = k;
            k += 1;
        }
    }
    let mut edges = Vec::new();
    let mut exit = vec![0.0; k];
    for t in &ctmc.transitions {
        let (s, d) = (t.src as usize, t.dst as usize);
        if map[s] == usize::MAX {
            continue;
        }
        exit[map[s]] += t.rate;
        if target[d] {
            edges.push((map[s], k, t.rate));
        } else if map[d] != usize::MAX {
            edges.push((map[s], map[d], t.rate));
        }
    }
    Some(Reduced {
        n: k,
        init: map[ctmc.initial],
        edges,
        exit,
    })
}

pub fn transient_until(
    ctmc: &Ctmc,
    target: &[bool],
    t: f64,
    cfg: &TransientConfig,
) -> Result<f64, TransientError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(TransientError::InvalidTime(t));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(TransientError::InvalidEpsilon(cfg.epsilon));
    }
    if target.len() != ctmc.state_count() {
        return Err(TransientError::TargetSize {
            expected: ctmc.state_count(),
            got: target.len(),
        });
    }
    if target[ctmc.initial] {
        return Ok(1.0);
    }
    let Some(r) = reduce(ctmc, target) else {
        return Ok(0.0);
    };
    let max_exit = r.exit.iter().copied().fold(0.0, f64::max);
    if t == 0.0 || max_exit == 0.0 {
        return Ok(0.0);
    }
    let lambda = UNIFORMIZATION_HEADROOM * max_exit;
    let lambda_t = lambda * t;
    let p = if lambda_t <= cfg.uniformization_limit {
        uniformize(&r, lambda, t, cfg.epsilon)
    } else if r.n < cfg.dense_limit {
        let mut q = DMatrix::<f64>::zeros(r.n + 1, r.n + 1);
        for &(s, d, rate) in &r.edges {
            q[(s, d)] += rate;
        }
        for s in 0..r.n {
            q[(s, s)] -= r.exit[s];
        }
        dense_transient(&q, r.init, t)[r.n]
    } else {
        return Err(TransientError::TooStiff {
            lambda_t,
            states: r.n,
        });
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Normalized Poisson(`qt`) weights from index `left` onwards, with both
/// tails beyond `epsilon / 2` cut.
pub(crate) fn poisson_weights(qt: f64, epsilon: f64) -> (usize, Vec<f64>) {
    if qt <= 0.0 {
        return (0, vec![1.0]);
    }
    const TINY: f64 = 1e-30;
    let mode = qt.floor() as usize;
    let mut below = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 {
        w *= k as f64 / qt;
        if w < TINY {
            break;
        }
        below.push(w);
        k -= 1;
    }
    let left = mode - below.len();
    let mut weights: Vec<f64> = below.into_iter().rev().collect();
    weights.push(1.0);
    let mut w = 1.0;
    let mut k = mode;
    loop {
        w *= qt / (k + 1) as f64;
        if w < TINY {
            break;
        }
        weights.push(w);
        k += 1;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut lo = 0;
    let mut cut = 0.0;
    while lo + 1 < weights.len() && cut + weights[lo] <= epsilon / 2.0 {
        cut += weights[lo];
        lo += 1;
    }
    let mut hi = weights.len();
    let mut cut = 0.0;
    while hi > lo + 1 && cut + weights[hi - 1] <= epsilon / 2.0 {
        cut += weights[hi - 1];
        hi -= 1;
    }
    (left + lo, weights[lo..hi].to_vec())
}

fn uniformize(r: &Reduced, lambda: f64, t: f64, epsilon: f64) -> f64 {
    let (left, weights) = poisson_weights(lambda * t, epsilon);
    let mut v = vec![0.0; r.n + 1];
    v[r.init] = 1.0;
    let mut next = vec![0.0; r.n + 1];
    let mut acc = 0.0;
    let steps = left + weights.len();
    for k in 0..steps {
        if k >= left {
            acc += weights[k - left] * v[r.n];
        }
        if k + 1 == steps {
            break;
        }
        for s in 0..r.n {
            next[s] = v[s] * (1.0 - r.exit[s] / lambda);
        }
        next[r.n] = v[r.n];
        for &(s, d, rate) in &r.edges {
            next[d] += v[s] * rate / lambda;
        }
        std::mem::swap(&mut v, &mut next);
    }
    acc
}

/// Row `init` of `exp(Q t)` for a (possibly defective) generator `Q`.
///
/// Scaling and squaring on `N = exp(Qh) - I` with `Λh <= 1/2`: the Taylor
/// series gives `N`, and each squaring is `N <- 2N + N^2`. Carrying the
/// difference from the identity keeps the slow rates of stiff chains from
/// being rounded away against the diagonal.
pub fn dense_transient(q: &DMatrix<f64>, init: usize, t: f64) -> DVector<f64> {
    let n = q.nrows();
    let lambda = (0..n).map(|i| -q[(i, i)]).fold(0.0, f64::max);
    let unit = DVector::from_fn(n, |i, _| if i == init { 1.0 } else { 0.0 });
    if lambda == 0.0 || t == 0.0 {
        return unit;
    }
    let mut squarings = 0u32;
    let mut h = t;
    while lambda * h > 0.5 {
        h /= 2.0;
        squarings += 1;
    }
    let qh = q * h;
    let mut term = qh.clone();
    let mut m = qh.clone();
    for k in 2..40 {
        term = &term * &qh / k as f64;
        m += &term;
        if term.amax() < 1e-20 {
            break;
        }
    }
    for _ in 0..squarings {
        m = &m * 2.0 + &m * &m;
    }
    unit + m.row(init).transpose()
}
