//! Max-operation variants over weighted robustness vectors.
//!
//! Four ways to compute "the max of the entries of `x` selected by `w`":
//! the exact hard max, the classic softmax smoothing (not sound), the sparse
//! softmax (sound under a hyperparameter condition), and the averaged max
//! (the expectation of the max when each entry is gated by an independent
//! Bernoulli variable). Min-like behavior comes from `kappa * max(kappa * x)`
//! with `kappa = -1`.
//!
//! Everything here is plain `f64` math; the gradient plumbing lives in
//! [`crate::autodiff`], which calls back into the `*_vjp` helpers so the
//! forward values and derivatives cannot drift apart.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaxOpError {
    #[error("empty selection: weight vector has no positive entry")]
    EmptySelection,
    #[error("length mismatch: x has {x_len}, weights have {w_len}")]
    LengthMismatch { x_len: usize, w_len: usize },
    #[error("weights degenerate to zero mass (inputs too extreme)")]
    DegenerateWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxKind {
    Hard,
    Softmax,
    SparseSoftmax,
    AveragedMax,
}

/// A max approximation together with its scale hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMethod {
    pub kind: MaxKind,
    pub beta: f64,
    pub h: f64,
}

impl MaxMethod {
    pub fn new(kind: MaxKind, beta: f64, h: f64) -> Self {
        assert!(beta > 0.0 && h > 0.0, "beta and h must be positive");
        MaxMethod { kind, beta, h }
    }

    pub fn hard() -> Self {
        Self::new(MaxKind::Hard, 1.0, 1.0)
    }

    pub fn softmax(beta: f64) -> Self {
        Self::new(MaxKind::Softmax, beta, 1.0)
    }

    pub fn sparse_softmax(beta: f64, h: f64) -> Self {
        Self::new(MaxKind::SparseSoftmax, beta, h)
    }

    pub fn averaged_max() -> Self {
        Self::new(MaxKind::AveragedMax, 1.0, 1.0)
    }
}

impl Default for MaxMethod {
    fn default() -> Self {
        Self::sparse_softmax(1.0, 1.0)
    }
}

/// Approximated max value plus the effective weight distribution (diagnostic).
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResult {
    pub value: f64,
    /// Normalized weights over all entries; zero on excluded ones.
    pub weights: Vec<f64>,
}

fn check_lengths(x: &[f64], w: &[f64]) -> Result<(), MaxOpError> {
    if x.len() != w.len() {
        return Err(MaxOpError::LengthMismatch {
            x_len: x.len(),
            w_len: w.len(),
        });
    }
    Ok(())
}

fn check_selection(w: &[f64]) -> Result<(), MaxOpError> {
    if !w.iter().any(|&wi| wi > 0.0) {
        return Err(MaxOpError::EmptySelection);
    }
    Ok(())
}

/// Exact max over the entries with positive weight.
pub fn hard_max(x: &[f64], w: &[f64]) -> Result<f64, MaxOpError> {
    check_lengths(x, w)?;
    check_selection(w)?;
    let mut m = f64::NEG_INFINITY;
    for (&xi, &wi) in x.iter().zip(w) {
        if wi > 0.0 && xi > m {
            m = xi;
        }
    }
    Ok(m)
}

/// Index of the entry `hard_max` picks (first attaining, for gradient routing).
pub(crate) fn hard_max_index(x: &[f64], w: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&xi, &wi)) in x.iter().zip(w).enumerate() {
        if wi > 0.0 && best.is_none_or(|b| xi > x[b]) {
            best = Some(i);
        }
    }
    best
}

/// Softmax-weighted mean of the selected entries. Smooth but not sound: the
/// sign of the result can disagree with the sign of the hard max.
pub fn softmax_approx(x: &[f64], w: &[f64], beta: f64) -> Result<ApproxResult, MaxOpError> {
    check_lengths(x, w)?;
    check_selection(w)?;
    // Shift by the max included entry so the exponentials cannot overflow.
    let m = hard_max(x, w)?;
    let mut den = 0.0;
    let mut num = 0.0;
    let mut weights = vec![0.0; x.len()];
    for (i, (&xi, &wi)) in x.iter().zip(w).enumerate() {
        let e = wi * (beta * (xi - m)).exp();
        weights[i] = e;
        num += xi * e;
        den += e;
    }
    for q in &mut weights {
        *q /= den;
    }
    Ok(ApproxResult {
        value: num / den,
        weights,
    })
}

/// Intermediates of one sparse-softmax evaluation, shared between the value
/// computation and its vector-Jacobian product.
struct SparseParts {
    q: Vec<f64>, // softmax(beta * x'') where x'' = h * x * w / x_m
    num: f64,    // sum x_i w_i q_i
    den: f64,    // sum w_i q_i
    x_m: f64,
    argmax: usize,    // first argmax of x' (gradient routing for x_m)
    normalized: bool, // whether x_m came from |max| (vs the constant 1)
    max_sign: f64,
}

fn sparse_parts(x: &[f64], w: &[f64], beta: f64, h: f64) -> Result<SparseParts, MaxOpError> {
    check_lengths(x, w)?;
    check_selection(w)?;
    let n = x.len();
    let masked: Vec<f64> = x.iter().zip(w).map(|(&xi, &wi)| xi * wi).collect();
    let mut argmax = 0;
    for i in 1..n {
        if masked[i] > masked[argmax] {
            argmax = i;
        }
    }
    let raw_max = masked[argmax];
    let normalized = raw_max.abs() != 0.0;
    let x_m = if normalized { raw_max.abs() } else { 1.0 };
    let scaled: Vec<f64> = masked.iter().map(|&v| h * v / x_m).collect();
    // softmax over all entries; the top is at +-h so this cannot overflow
    let top = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut q: Vec<f64> = scaled.iter().map(|&v| (beta * (v - top)).exp()).collect();
    for e in &q {
        z += e;
    }
    for e in &mut q {
        *e /= z;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += masked[i] * q[i];
        den += w[i] * q[i];
    }
    if den == 0.0 {
        return Err(MaxOpError::DegenerateWeights);
    }
    Ok(SparseParts {
        q,
        num,
        den,
        x_m,
        argmax,
        normalized,
        max_sign: if raw_max >= 0.0 { 1.0 } else { -1.0 },
    })
}

/// Sparse softmax: rescale the masked entries so the top sits at `h`, softmax
/// with scale `beta`, and take the weighted mean. Sound whenever
/// [`soundness_condition`] holds and `w` is binary.
pub fn sparse_softmax(x: &[f64], w: &[f64], beta: f64, h: f64) -> Result<ApproxResult, MaxOpError> {
    let parts = sparse_parts(x, w, beta, h)?;
    let weights: Vec<f64> = w
        .iter()
        .zip(&parts.q)
        .map(|(&wi, &qi)| wi * qi / parts.den)
        .collect();
    Ok(ApproxResult {
        value: parts.num / parts.den,
        weights,
    })
}

/// Soundness condition for the sparse softmax over vectors of length `n`:
/// `h * e^(beta*h) > (n - 1) * e^(-1) / beta`.
pub fn soundness_condition(n: usize, beta: f64, h: f64) -> bool {
    assert!(n >= 1);
    h * (beta * h).exp() > (n as f64 - 1.0) * (-1.0f64).exp() / beta
}

/// Smallest `h` from the doubling schedule `h0, 2*h0, 4*h0, ...` that makes
/// the sparse softmax sound for vectors of length `n`.
pub fn raise_h_until_sound(n: usize, beta: f64, h0: f64) -> f64 {
    let mut h = h0;
    while !soundness_condition(n, beta, h) {
        h *= 2.0;
    }
    h
}

/// Gradient of `upstream * sparse_softmax(x, w).value` with respect to x and w.
pub(crate) fn sparse_softmax_vjp(
    x: &[f64],
    w: &[f64],
    beta: f64,
    h: f64,
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>), MaxOpError> {
    let p = sparse_parts(x, w, beta, h)?;
    let n = x.len();
    let g_num = upstream / p.den;
    let g_den = -upstream * p.num / (p.den * p.den);
    // Through the weighted mean.
    let mut g_masked: Vec<f64> = p.q.iter().map(|&qi| g_num * qi).collect();
    let mut g_w: Vec<f64> = p.q.iter().map(|&qi| g_den * qi).collect();
    let g_q: Vec<f64> = (0..n)
        .map(|i| g_num * (x[i] * w[i]) + g_den * w[i])
        .collect();
    // Through the softmax: g_scaled = beta * q * (g_q - <g_q, q>).
    let dot: f64 = g_q.iter().zip(&p.q).map(|(a, b)| a * b).sum();
    let g_scaled: Vec<f64> = (0..n).map(|i| beta * p.q[i] * (g_q[i] - dot)).collect();
    // Through the rescaling x'' = h * x' / x_m.
    for i in 0..n {
        g_masked[i] += g_scaled[i] * h / p.x_m;
    }
    if p.normalized {
        let g_xm: f64 = (0..n)
            .map(|i| -g_scaled[i] * h * (x[i] * w[i]) / (p.x_m * p.x_m))
            .sum();
        g_masked[p.argmax] += g_xm * p.max_sign;
    }
    // Through the masking x' = x * w.
    let mut g_x = vec![0.0; n];
    for i in 0..n {
        g_x[i] = g_masked[i] * w[i];
        g_w[i] += g_masked[i] * x[i];
    }
    Ok((g_x, g_w))
}

/// Gradient of `upstream * softmax_approx(x, w).value` with respect to x and w.
pub(crate) fn softmax_vjp(
    x: &[f64],
    w: &[f64],
    beta: f64,
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>), MaxOpError> {
    let res = softmax_approx(x, w, beta)?;
    let s = res.value;
    let m = hard_max(x, w)?;
    let den: f64 = x
        .iter()
        .zip(w)
        .map(|(&xi, &wi)| wi * (beta * (xi - m)).exp())
        .sum();
    let n = x.len();
    let mut g_x = vec![0.0; n];
    let mut g_w = vec![0.0; n];
    for i in 0..n {
        let e = (beta * (x[i] - m)).exp();
        g_x[i] = upstream * res.weights[i] * (1.0 + beta * (x[i] - s));
        g_w[i] = upstream * e * (x[i] - s) / den;
    }
    Ok((g_x, g_w))
}

/// Descending stable sort order of `x` (ties keep input order).
fn sort_order_desc(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[j].partial_cmp(&x[i]).expect("NaN in sort"));
    idx
}

/// Expected max of `x` under independent Bernoulli gates with probabilities
/// `p`, computed in `O(n log n)` by sorting descending and telescoping:
/// `sum_i x'_i p'_i prod_{j<i} (1 - p'_j)`.
///
/// The all-excluded outcome (every gate off) carries probability
/// `prod (1 - p_i)` and contributes value 0.
pub fn averaged_max(x: &[f64], p: &[f64]) -> Result<f64, MaxOpError> {
    check_lengths(x, p)?;
    let order = sort_order_desc(x);
    let mut value = 0.0;
    let mut survive = 1.0; // prod of (1 - p'_j) over larger entries
    for &i in &order {
        value += x[i] * p[i] * survive;
        survive *= 1.0 - p[i];
    }
    Ok(value)
}

/// Expected min under the same gating: the telescoped sum on the ascending
/// order, equivalently `-averaged_max(-x, p)`.
pub fn averaged_min(x: &[f64], p: &[f64]) -> Result<f64, MaxOpError> {
    let neg: Vec<f64> = x.iter().map(|&v| -v).collect();
    Ok(-averaged_max(&neg, p)?)
}

/// Expected value of `kappa * max(kappa * x)` when the operator switch is
/// itself Bernoulli with `P(kappa = 1) = p_kappa`.
pub fn averaged_minmax(x: &[f64], p: &[f64], p_kappa: f64) -> Result<f64, MaxOpError> {
    Ok(p_kappa * averaged_max(x, p)? + (1.0 - p_kappa) * averaged_min(x, p)?)
}

/// Value and gradients of `averaged_max` with respect to `x` and `p`.
pub(crate) fn averaged_max_grads(x: &[f64], p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let order = sort_order_desc(x);
    // Prefix survival products c_k = prod_{j<k} (1 - p'_j) in sorted order.
    let mut c = vec![1.0; n + 1];
    for (k, &i) in order.iter().enumerate() {
        c[k + 1] = c[k] * (1.0 - p[i]);
    }
    let mut value = 0.0;
    let mut g_x = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        value += x[i] * p[i] * c[k];
        g_x[i] = p[i] * c[k];
    }
    let mut g_p = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        // Direct term, then the survival products of everything smaller.
        let mut g = x[i] * c[k];
        let mut skip = c[k]; // prod_{j<m, j != k} over sorted positions m > k
        for &im in &order[k + 1..] {
            g -= x[im] * p[im] * skip;
            skip *= 1.0 - p[im];
        }
        g_p[i] = g;
    }
    (value, g_x, g_p)
}

/// Value and gradients of `averaged_minmax` w.r.t. `x`, `p`, and `p_kappa`.
pub(crate) fn averaged_minmax_grads(
    x: &[f64],
    p: &[f64],
    p_kappa: f64,
) -> (f64, Vec<f64>, Vec<f64>, f64) {
    let (vmax, gx_max, gp_max) = averaged_max_grads(x, p);
    let neg: Vec<f64> = x.iter().map(|&v| -v).collect();
    let (vneg, gx_neg, gp_neg) = averaged_max_grads(&neg, p);
    let vmin = -vneg;
    let n = x.len();
    let mut g_x = vec![0.0; n];
    let mut g_p = vec![0.0; n];
    for i in 0..n {
        // d vmin / d x_i = gx_neg[i]; d vmin / d p_i = -gp_neg[i]
        g_x[i] = p_kappa * gx_max[i] + (1.0 - p_kappa) * gx_neg[i];
        g_p[i] = p_kappa * gp_max[i] - (1.0 - p_kappa) * gp_neg[i];
    }
    let value = p_kappa * vmax + (1.0 - p_kappa) * vmin;
    (value, g_x, g_p, vmax - vmin)
}

/// `kappa * M(kappa * x, w)` where `M` is the method's max; `kappa = -1`
/// realizes min (always / conjunction).
pub fn apply_operator(
    x: &[f64],
    w: &[f64],
    kappa: f64,
    method: MaxMethod,
) -> Result<f64, MaxOpError> {
    debug_assert!(kappa == 1.0 || kappa == -1.0, "kappa must be +-1");
    let flipped: Vec<f64> = x.iter().map(|&v| kappa * v).collect();
    let inner = match method.kind {
        MaxKind::Hard => hard_max(&flipped, w)?,
        MaxKind::Softmax => softmax_approx(&flipped, w, method.beta)?.value,
        MaxKind::SparseSoftmax => sparse_softmax(&flipped, w, method.beta, method.h)?.value,
        MaxKind::AveragedMax => averaged_max(&flipped, w)?,
    };
    Ok(kappa * inner)
}
