//! Linear-chain CRF: forward algorithm, negative log-likelihood with its
//! gradient, and Viterbi decoding.
//!
//! With `n` real tags, transitions form an `(n + 2) × (n + 2)` matrix indexed
//! `[from][to]`; row `n` is the virtual START state and column `n + 1` the
//! virtual STOP state. A path `y` over `T` positions scores
//!
//! ```text
//! trans[START][y0] + Σ emis[t][yt] + Σ trans[y(t-1)][yt] + trans[y(T-1)][STOP]
//! ```
//!
//! Forbidden transitions are `-inf`; every recursion uses max-shifted
//! log-sum-exp so those entries simply drop out.

use super::tensor::{log_sum_exp, Matrix};

#[inline]
pub fn start_index(num_tags: usize) -> usize {
    num_tags
}

#[inline]
pub fn stop_index(num_tags: usize) -> usize {
    num_tags + 1
}

fn check_shapes(emissions: &Matrix, transitions: &Matrix) -> usize {
    let n = emissions.cols;
    assert_eq!(transitions.rows, n + 2, "transition rows must be num_tags + 2");
    assert_eq!(transitions.cols, n + 2, "transition cols must be num_tags + 2");
    n
}

/// Score of one tag path.
pub fn path_score(emissions: &Matrix, transitions: &Matrix, path: &[usize]) -> f64 {
    let n = check_shapes(emissions, transitions);
    assert_eq!(path.len(), emissions.rows);
    if path.is_empty() {
        return transitions.get(start_index(n), stop_index(n));
    }
    let mut score = transitions.get(start_index(n), path[0]);
    for (t, &y) in path.iter().enumerate() {
        score += emissions.get(t, y);
        if t > 0 {
            score += transitions.get(path[t - 1], y);
        }
    }
    score + transitions.get(path[path.len() - 1], stop_index(n))
}

/// Forward log-scores: `alpha[t][y]` is the log-sum of scores of all prefixes
/// ending in tag `y` at position `t`, emission included.
fn forward(emissions: &Matrix, transitions: &Matrix) -> Matrix {
    let n = emissions.cols;
    let len = emissions.rows;
    let mut alpha = Matrix::zeros(len, n);
    for y in 0..n {
        alpha.set(0, y, transitions.get(start_index(n), y) + emissions.get(0, y));
    }
    for t in 1..len {
        for y in 0..n {
            let prev = alpha.row(t - 1);
            let lse = log_sum_exp((0..n).map(|p| prev[p] + transitions.get(p, y)));
            alpha.set(t, y, lse + emissions.get(t, y));
        }
    }
    alpha
}

/// Backward log-scores: `beta[t][y]` is the log-sum of scores of all
/// suffixes after position `t` given tag `y` there, STOP included.
fn backward(emissions: &Matrix, transitions: &Matrix) -> Matrix {
    let n = emissions.cols;
    let len = emissions.rows;
    let mut beta = Matrix::zeros(len, n);
    for y in 0..n {
        beta.set(len - 1, y, transitions.get(y, stop_index(n)));
    }
    for t in (0..len.saturating_sub(1)).rev() {
        for y in 0..n {
            let lse = log_sum_exp((0..n).map(|q| transitions.get(y, q) + emissions.get(t + 1, q) + beta.get(t + 1, q)));
            beta.set(t, y, lse);
        }
    }
    beta
}

/// log Σ over all tag paths of exp(score).
pub fn log_partition(emissions: &Matrix, transitions: &Matrix) -> f64 {
    let n = check_shapes(emissions, transitions);
    if emissions.rows == 0 {
        return transitions.get(start_index(n), stop_index(n));
    }
    let alpha = forward(emissions, transitions);
    let last = alpha.row(emissions.rows - 1);
    log_sum_exp((0..n).map(|y| last[y] + transitions.get(y, stop_index(n))))
}

/// Negative log-likelihood of `gold`. `None` when a gold tag is out of range,
/// the path length does not match, or the path uses a forbidden transition.
pub fn nll(emissions: &Matrix, transitions: &Matrix, gold: &[usize]) -> Option<f64> {
    let n = check_shapes(emissions, transitions);
    if gold.len() != emissions.rows || gold.iter().any(|&y| y >= n) {
        return None;
    }
    let score = path_score(emissions, transitions, gold);
    if !score.is_finite() {
        return None;
    }
    Some(log_partition(emissions, transitions) - score)
}

/// Gradients of the NLL with respect to emissions and transitions.
#[derive(Debug, Clone)]
pub struct CrfGradient {
    pub loss: f64,
    pub emissions: Matrix,
    pub transitions: Matrix,
}

/// NLL together with its gradient, via forward-backward marginals:
/// d/d emis[t][y] = P(yt = y) − [gold_t = y], and likewise expected minus
/// observed transition counts for the transition matrix.
pub fn nll_with_gradient(emissions: &Matrix, transitions: &Matrix, gold: &[usize]) -> Option<CrfGradient> {
    let n = check_shapes(emissions, transitions);
    let len = emissions.rows;
    if len == 0 || gold.len() != len || gold.iter().any(|&y| y >= n) {
        return None;
    }
    let score = path_score(emissions, transitions, gold);
    if !score.is_finite() {
        return None;
    }
    let alpha = forward(emissions, transitions);
    let beta = backward(emissions, transitions);
    let log_z = log_sum_exp((0..n).map(|y| alpha.get(len - 1, y) + transitions.get(y, stop_index(n))));
    let loss = log_z - score;

    let mut d_emis = Matrix::zeros(len, n);
    let mut d_trans = Matrix::zeros(n + 2, n + 2);
    let prob = |x: f64| if x == f64::NEG_INFINITY { 0.0 } else { (x - log_z).exp() };

    for t in 0..len {
        for y in 0..n {
            d_emis.set(t, y, prob(alpha.get(t, y) + beta.get(t, y)));
        }
    }
    for y in 0..n {
        let s = start_index(n);
        let v = prob(transitions.get(s, y) + emissions.get(0, y) + beta.get(0, y));
        d_trans.set(s, y, v);
        let e = stop_index(n);
        let v = prob(alpha.get(len - 1, y) + transitions.get(y, e));
        d_trans.set(y, e, v);
    }
    for t in 1..len {
        for p in 0..n {
            let a = alpha.get(t - 1, p);
            if a == f64::NEG_INFINITY {
                continue;
            }
            for q in 0..n {
                let v = prob(a + transitions.get(p, q) + emissions.get(t, q) + beta.get(t, q));
                let cur = d_trans.get(p, q);
                d_trans.set(p, q, cur + v);
            }
        }
    }

    for (t, &y) in gold.iter().enumerate() {
        let cur = d_emis.get(t, y);
        d_emis.set(t, y, cur - 1.0);
        let from = if t == 0 { start_index(n) } else { gold[t - 1] };
        let cur = d_trans.get(from, y);
        d_trans.set(from, y, cur - 1.0);
    }
    let last = gold[len - 1];
    let cur = d_trans.get(last, stop_index(n));
    d_trans.set(last, stop_index(n), cur - 1.0);

    Some(CrfGradient { loss, emissions: d_emis, transitions: d_trans })
}

/// Highest-scoring tag path. Ties go to the lower tag index.
pub fn viterbi(emissions: &Matrix, transitions: &Matrix) -> Vec<usize> {
    let n = check_shapes(emissions, transitions);
    let len = emissions.rows;
    if len == 0 {
        return Vec::new();
    }
    let mut score = Matrix::zeros(len, n);
    let mut back = vec![0usize; len * n];
    for y in 0..n {
        score.set(0, y, transitions.get(start_index(n), y) + emissions.get(0, y));
    }
    for t in 1..len {
        for y in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..n {
                let s = score.get(t - 1, p) + transitions.get(p, y);
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            score.set(t, y, best + emissions.get(t, y));
            back[t * n + y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..n {
        let s = score.get(len - 1, y) + transitions.get(y, stop_index(n));
        if s > best {
            best = s;
            last = y;
        }
    }
    let mut path = vec![0usize; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * n + path[t]];
    }
    path
}
