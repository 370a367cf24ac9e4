//! Exact signal temporal logic: formulas, quantitative semantics, and the
//! misclassification rate.
//!
//! This module is the ground truth the network approximates. Robustness is
//! computed with hard min/max; a signal satisfies a formula iff its robustness
//! at time 0 is strictly positive (zero counts as violation).

mod parse;

pub use parse::{format_formula, format_formula_prec, parse_formula, ParseError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StlError {
    #[error("temporal operator {op} needs samples up to t={needed}, signal ends at t={have}")]
    HorizonOverflow {
        op: String,
        needed: usize,
        have: usize,
    },
    #[error("and/or with no children")]
    EmptyBoolean,
    #[error("predicate references dimension {wanted} but signal has {have}")]
    DimensionMismatch { wanted: usize, have: usize },
    #[error("predicate weight vector is all zero")]
    ZeroPredicate,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("time index {t} out of range for signal of length {len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("signal contains a non-finite value")]
    NonFiniteSignal,
}

/// Inclusive window `[t1, t2]` of integer time steps, `0 <= t1 <= t2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeInterval {
    pub t1: usize,
    pub t2: usize,
}

impl TimeInterval {
    pub fn new(t1: usize, t2: usize) -> Result<Self, ParseError> {
        if t1 > t2 {
            return Err(ParseError::new(
                0,
                format!("interval [{t1},{t2}] has t1 > t2"),
            ));
        }
        Ok(TimeInterval { t1, t2 })
    }
}

/// STL formula over linear predicates `a . s(t) - b > 0`.
///
/// The comparison direction is absorbed into the sign of `(a, b)`: a predicate
/// written `x < c` is stored with negated coefficients, so satisfaction is
/// always "robustness > 0".
#[derive(Debug, Clone)]
pub enum Formula {
    Predicate { a: Vec<f64>, b: f64 },
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Always(TimeInterval, Box<Formula>),
    Eventually(TimeInterval, Box<Formula>),
}

impl PartialEq for Formula {
    /// Structural equality. Predicate weight vectors compare modulo trailing
    /// zeros, since `a = [1]` and `a = [1, 0]` denote the same half-plane.
    fn eq(&self, other: &Self) -> bool {
        use Formula::*;
        match (self, other) {
            (Predicate { a: a1, b: b1 }, Predicate { a: a2, b: b2 }) => {
                if b1 != b2 {
                    return false;
                }
                let n = a1.len().max(a2.len());
                (0..n)
                    .all(|i| a1.get(i).copied().unwrap_or(0.0) == a2.get(i).copied().unwrap_or(0.0))
            }
            (And(x), And(y)) | (Or(x), Or(y)) => x == y,
            (Always(i, f), Always(j, g)) | (Eventually(i, f), Eventually(j, g)) => i == j && f == g,
            _ => false,
        }
    }
}

impl Formula {
    pub fn pred(a: Vec<f64>, b: f64) -> Result<Self, StlError> {
        if a.iter().all(|&v| v == 0.0) {
            return Err(StlError::ZeroPredicate);
        }
        Ok(Formula::Predicate { a, b })
    }

    pub fn and(children: Vec<Formula>) -> Result<Self, StlError> {
        if children.is_empty() {
            return Err(StlError::EmptyBoolean);
        }
        Ok(Formula::And(children))
    }

    pub fn or(children: Vec<Formula>) -> Result<Self, StlError> {
        if children.is_empty() {
            return Err(StlError::EmptyBoolean);
        }
        Ok(Formula::Or(children))
    }

    pub fn always(t1: usize, t2: usize, child: Formula) -> Result<Self, ParseError> {
        Ok(Formula::Always(TimeInterval::new(t1, t2)?, Box::new(child)))
    }

    pub fn eventually(t1: usize, t2: usize, child: Formula) -> Result<Self, ParseError> {
        Ok(Formula::Eventually(
            TimeInterval::new(t1, t2)?,
            Box::new(child),
        ))
    }

    /// Number of future steps the formula looks at: the sum of nested `t2`s
    /// along the deepest temporal chain.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::Predicate { .. } => 0,
            Formula::And(cs) | Formula::Or(cs) => {
                cs.iter().map(Formula::horizon).max().unwrap_or(0)
            }
            Formula::Always(i, c) | Formula::Eventually(i, c) => i.t2 + c.horizon(),
        }
    }

    /// Highest referenced signal dimension + 1.
    pub fn dim(&self) -> usize {
        match self {
            Formula::Predicate { a, .. } => a.len(),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().map(Formula::dim).max().unwrap_or(0),
            Formula::Always(_, c) | Formula::Eventually(_, c) => c.dim(),
        }
    }
}

/// Real-valued signal: `d` dimensions sampled at `l` integer time steps.
/// Stored dimension-major: `data[j * l + t]` is dimension `j` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub d: usize,
    pub l: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(d: usize, l: usize, data: Vec<f64>) -> Result<Self, StlError> {
        assert!(d >= 1 && l >= 1, "signal must have d >= 1 and l >= 1");
        assert_eq!(data.len(), d * l, "signal data length must be d*l");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StlError::NonFiniteSignal);
        }
        Ok(Signal { d, l, data })
    }

    /// 1-D signal from a plain sample vector.
    pub fn scalar(values: Vec<f64>) -> Self {
        let l = values.len();
        Signal {
            d: 1,
            l,
            data: values,
        }
    }

    pub fn value(&self, dim: usize, t: usize) -> f64 {
        self.data[dim * self.l + t]
    }

    pub fn value_mut(&mut self, dim: usize, t: usize) -> &mut f64 {
        &mut self.data[dim * self.l + t]
    }

    /// Row of one dimension across all time steps.
    pub fn row(&self, dim: usize) -> &[f64] {
        &self.data[dim * self.l..(dim + 1) * self.l]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Signals with labels in {+1, -1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub signals: Vec<Signal>,
    pub labels: Vec<i8>,
}

impl LabeledDataset {
    pub fn new(signals: Vec<Signal>, labels: Vec<i8>) -> Result<Self, StlError> {
        assert_eq!(
            signals.len(),
            labels.len(),
            "signals/labels length mismatch"
        );
        assert!(
            labels.iter().all(|&c| c == 1 || c == -1),
            "labels must be +1 or -1"
        );
        if let Some(first) = signals.first() {
            let (d, l) = (first.d, first.l);
            assert!(
                signals.iter().all(|s| s.d == d && s.l == l),
                "all signals must share d and l"
            );
        }
        Ok(LabeledDataset { signals, labels })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn d(&self) -> usize {
        self.signals.first().map_or(0, |s| s.d)
    }

    pub fn l(&self) -> usize {
        self.signals.first().map_or(0, |s| s.l)
    }
}

/// How `robustness_vector` treats time steps whose window runs past the end
/// of the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorMode {
    /// Only time steps whose full horizon fits; output length `l - horizon`.
    Truncated,
    /// Extend every intermediate robustness vector with its minimum, the same
    /// convention the network uses; output length `l`.
    Padded,
}

fn pred_value(s: &Signal, a: &[f64], b: f64, t: usize) -> Result<f64, StlError> {
    if a.len() > s.d {
        return Err(StlError::DimensionMismatch {
            wanted: a.len(),
            have: s.d,
        });
    }
    let mut acc = 0.0;
    for (j, &aj) in a.iter().enumerate() {
        acc += aj * s.value(j, t);
    }
    Ok(acc - b)
}

fn describe_temporal(phi: &Formula) -> String {
    match phi {
        Formula::Always(i, _) => format!("always[{},{}]", i.t1, i.t2),
        Formula::Eventually(i, _) => format!("eventually[{},{}]", i.t1, i.t2),
        _ => "non-temporal".to_string(),
    }
}

/// Robustness of `phi` on `s` at time `t` under the exact semantics.
///
/// Requires the whole window of `phi` to fit: `t + horizon(phi) <= l - 1`.
pub fn robustness(s: &Signal, phi: &Formula, t: usize) -> Result<f64, StlError> {
    if t >= s.l {
        return Err(StlError::TimeOutOfRange { t, len: s.l });
    }
    eval_exact(s, phi, t)
}

fn eval_exact(s: &Signal, phi: &Formula, t: usize) -> Result<f64, StlError> {
    match phi {
        Formula::Predicate { a, b } => pred_value(s, a, *b, t),
        Formula::And(cs) => {
            if cs.is_empty() {
                return Err(StlError::EmptyBoolean);
            }
            let mut m = f64::INFINITY;
            for c in cs {
                m = m.min(eval_exact(s, c, t)?);
            }
            Ok(m)
        }
        Formula::Or(cs) => {
            if cs.is_empty() {
                return Err(StlError::EmptyBoolean);
            }
            let mut m = f64::NEG_INFINITY;
            for c in cs {
                m = m.max(eval_exact(s, c, t)?);
            }
            Ok(m)
        }
        Formula::Always(i, c) | Formula::Eventually(i, c) => {
            if t + i.t2 > s.l - 1 {
                return Err(StlError::HorizonOverflow {
                    op: describe_temporal(phi),
                    needed: t + i.t2,
                    have: s.l - 1,
                });
            }
            let is_always = matches!(phi, Formula::Always(..));
            let mut m = if is_always {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            for tp in t + i.t1..=t + i.t2 {
                let v = eval_exact(s, c, tp)?;
                m = if is_always { m.min(v) } else { m.max(v) };
            }
            Ok(m)
        }
    }
}

/// Robustness of `phi` at every time step, bottom-up.
pub fn robustness_vector(
    s: &Signal,
    phi: &Formula,
    mode: VectorMode,
) -> Result<Vec<f64>, StlError> {
    match mode {
        VectorMode::Truncated => {
            let h = phi.horizon();
            if h > s.l - 1 {
                return Err(StlError::HorizonOverflow {
                    op: describe_temporal(phi),
                    needed: h,
                    have: s.l - 1,
                });
            }
            (0..s.l - h).map(|t| eval_exact(s, phi, t)).collect()
        }
        VectorMode::Padded => eval_padded(s, phi),
    }
}

/// Pad a robustness vector with `l - 1` copies of its minimum.
pub fn pad_with_min(rv: &[f64]) -> Vec<f64> {
    let rho = rv.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = rv.to_vec();
    out.extend(std::iter::repeat_n(rho, rv.len() - 1));
    out
}

/// Bottom-up evaluation under the padding convention: every temporal operator
/// extends its child vector with the child's minimum before sliding the
/// window. This is exactly what the network computes with the hard max.
pub fn eval_padded(s: &Signal, phi: &Formula) -> Result<Vec<f64>, StlError> {
    let l = s.l;
    match phi {
        Formula::Predicate { a, b } => (0..l).map(|t| pred_value(s, a, *b, t)).collect(),
        Formula::And(cs) | Formula::Or(cs) => {
            if cs.is_empty() {
                return Err(StlError::EmptyBoolean);
            }
            let is_and = matches!(phi, Formula::And(..));
            let mut acc = vec![
                if is_and {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                };
                l
            ];
            for c in cs {
                let rv = eval_padded(s, c)?;
                for (a, v) in acc.iter_mut().zip(rv) {
                    *a = if is_and { a.min(v) } else { a.max(v) };
                }
            }
            Ok(acc)
        }
        Formula::Always(i, c) | Formula::Eventually(i, c) => {
            let child = eval_padded(s, c)?;
            let padded = pad_with_min(&child);
            let is_always = matches!(phi, Formula::Always(..));
            let mut out = Vec::with_capacity(l);
            for t in 0..l {
                let mut m = if is_always {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                };
                for &v in &padded[t + i.t1..=t + i.t2] {
                    m = if is_always { m.min(v) } else { m.max(v) };
                }
                out.push(m);
            }
            Ok(out)
        }
    }
}

/// Satisfaction at time 0 (strictly positive robustness).
pub fn satisfies(s: &Signal, phi: &Formula) -> Result<bool, StlError> {
    Ok(robustness(s, phi, 0)? > 0.0)
}

/// Misclassification rate of `phi` as a classifier on `data`.
pub fn mcr(data: &LabeledDataset, phi: &Formula) -> Result<f64, StlError> {
    if data.is_empty() {
        return Err(StlError::EmptyDataset);
    }
    let mut wrong = 0usize;
    for (s, &c) in data.signals.iter().zip(&data.labels) {
        let sat = satisfies(s, phi)?;
        if sat != (c == 1) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// MCR under the padding convention (time 0 of the padded evaluation), which
/// stays defined even when the formula's horizon exceeds the signal length.
pub fn mcr_padded(data: &LabeledDataset, phi: &Formula) -> Result<f64, StlError> {
    if data.is_empty() {
        return Err(StlError::EmptyDataset);
    }
    let mut wrong = 0usize;
    for (s, &c) in data.signals.iter().zip(&data.labels) {
        let sat = eval_padded(s, phi)?[0] > 0.0;
        if sat != (c == 1) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}
