//! Shared helpers for the integration suites: independent oracles and random
//! input generators. The oracles here deliberately re-derive everything from
//! the definitions (bottom-up vector evaluation, exhaustive enumeration) so
//! they share no code path with the library's implementations.

use tlinet::rng::Rng;
use tlinet::stl::{Formula, Signal, TimeInterval};

/// Bottom-up robustness evaluator under the strict-horizon convention:
/// returns the vector of robustness values for `t = 0 .. l - horizon - 1`
/// by materializing every subformula's vector and sliding windows over it.
/// Returns `None` when the horizon does not fit.
pub fn oracle_robustness_vector(s: &Signal, phi: &Formula) -> Option<Vec<f64>> {
    match phi {
        Formula::Predicate { a, b } => Some(
            (0..s.l)
                .map(|t| {
                    let mut acc = 0.0;
                    for (j, &aj) in a.iter().enumerate() {
                        acc += aj * s.value(j, t);
                    }
                    acc - b
                })
                .collect(),
        ),
        Formula::And(children) | Formula::Or(children) => {
            let vecs: Vec<Vec<f64>> = children
                .iter()
                .map(|c| oracle_robustness_vector(s, c))
                .collect::<Option<_>>()?;
            let len = vecs.iter().map(Vec::len).min()?;
            let is_and = matches!(phi, Formula::And(_));
            Some(
                (0..len)
                    .map(|t| {
                        let mut m = vecs[0][t];
                        for v in &vecs[1..] {
                            m = if is_and { m.min(v[t]) } else { m.max(v[t]) };
                        }
                        m
                    })
                    .collect(),
            )
        }
        Formula::Always(iv, child) | Formula::Eventually(iv, child) => {
            let inner = oracle_robustness_vector(s, child)?;
            if iv.t2 >= inner.len() {
                return None;
            }
            let is_always = matches!(phi, Formula::Always(..));
            Some(
                (0..inner.len() - iv.t2)
                    .map(|t| {
                        let window = &inner[t + iv.t1..=t + iv.t2];
                        window.iter().copied().fold(
                            if is_always {
                                f64::INFINITY
                            } else {
                                f64::NEG_INFINITY
                            },
                            |a, v| {
                                if is_always {
                                    a.min(v)
                                } else {
                                    a.max(v)
                                }
                            },
                        )
                    })
                    .collect(),
            )
        }
    }
}

pub fn oracle_robustness(s: &Signal, phi: &Formula, t: usize) -> Option<f64> {
    oracle_robustness_vector(s, phi).and_then(|v| v.get(t).copied())
}

/// Expectation of the gated max by summing over all 2^n gate vectors; the
/// all-off outcome contributes value 0 at its natural probability.
pub fn brute_force_averaged_max(x: &[f64], p: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for mask in 1u32..(1 << n) {
        let mut prob = 1.0;
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                prob *= p[i];
                m = m.max(x[i]);
            } else {
                prob *= 1.0 - p[i];
            }
        }
        total += prob * m;
    }
    total
}

pub fn brute_force_averaged_minmax(x: &[f64], p: &[f64], pk: f64) -> f64 {
    let neg: Vec<f64> = x.iter().map(|&v| -v).collect();
    pk * brute_force_averaged_max(x, p) - (1.0 - pk) * brute_force_averaged_max(&neg, p)
}

pub fn random_signal(rng: &mut Rng, d: usize, l: usize) -> Signal {
    Signal::new(d, l, (0..d * l).map(|_| rng.range(-3.0, 3.0)).collect()).unwrap()
}

/// Random formula of the given depth over axis-aligned predicates, with
/// window bounds small enough that depth-3 nests fit short signals.
pub fn random_formula(rng: &mut Rng, depth: usize, d: usize, max_step: usize) -> Formula {
    let choice = if depth == 0 { 0 } else { 1 + rng.below(4) };
    match choice {
        0 => {
            let mut a = vec![0.0; d];
            let j = rng.below(d);
            a[j] = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            Formula::Predicate {
                a,
                b: rng.range(-1.0, 1.0),
            }
        }
        1 | 2 => {
            let n = 2 + rng.below(2);
            let cs = (0..n)
                .map(|_| random_formula(rng, depth - 1, d, max_step))
                .collect();
            if choice == 1 {
                Formula::And(cs)
            } else {
                Formula::Or(cs)
            }
        }
        _ => {
            let t1 = rng.below(max_step);
            let t2 = t1 + rng.below(max_step);
            let child = random_formula(rng, depth - 1, d, max_step);
            let iv = TimeInterval { t1, t2 };
            if choice == 3 {
                Formula::Always(iv, Box::new(child))
            } else {
                Formula::Eventually(iv, Box::new(child))
            }
        }
    }
}
