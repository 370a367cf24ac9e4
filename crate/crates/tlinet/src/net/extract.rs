//! Translation between trained networks and formulas.
//!
//! `extract_formula` thresholds every probability at 0.5, snaps the
//! continuous window bounds outward to integers, drops gated-out subformulas,
//! and prunes everything unreachable from the output module. The inverse
//! direction, `compile_formula`, wires a formula into a network with binary
//! parameters; with the hard max it reproduces the exact semantics, which is
//! what the decoding tests lean on.

use super::{LayerSpec, ModuleKind, ModuleParams, ModuleRef, NetError, Network, NetworkSpec};
use crate::maxops::MaxMethod;
use crate::stl::{Formula, TimeInterval};

pub struct Extraction {
    pub formula: Formula,
    pub warnings: Vec<String>,
}

/// Decode the network's current parameters into a formula.
pub fn extract_formula(net: &Network) -> Result<Extraction, NetError> {
    let mut warnings = Vec::new();
    let last = ModuleRef {
        layer: net.spec.layers.len() - 1,
        index: 0,
    };
    let formula = build(net, last, &mut warnings)?;
    Ok(Extraction { formula, warnings })
}

fn build(net: &Network, at: ModuleRef, warnings: &mut Vec<String>) -> Result<Formula, NetError> {
    let layer = &net.spec.layers[at.layer];
    match &net.params[at.layer][at.index] {
        ModuleParams::Predicate { a, b } => {
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(NetError::BadWiring {
                    layer: at.layer,
                    module: at.index,
                    msg: "predicate weights are all zero".into(),
                });
            }
            // Normalize, then zero near-axis coefficients for readability.
            let mut an: Vec<f64> = a.iter().map(|v| v / norm).collect();
            for v in &mut an {
                if v.abs() < 1e-3 {
                    *v = 0.0;
                }
            }
            if an.iter().all(|&v| v == 0.0) {
                return Err(NetError::BadWiring {
                    layer: at.layer,
                    module: at.index,
                    msg: "predicate weights vanish after rounding".into(),
                });
            }
            Ok(Formula::Predicate { a: an, b: b / norm })
        }
        ModuleParams::Temporal { p_kappa, t1, t2 } => {
            let top = (net.l - 1) as f64;
            let lo = t1.floor().clamp(0.0, top) as usize;
            let hi = t2.ceil().clamp(0.0, top) as usize;
            let interval = TimeInterval {
                t1: lo.min(hi),
                t2: hi.max(lo),
            };
            let child = build(net, layer.inputs[at.index][0], warnings)?;
            Ok(if *p_kappa >= 0.5 {
                Formula::Eventually(interval, Box::new(child))
            } else {
                Formula::Always(interval, Box::new(child))
            })
        }
        ModuleParams::Boolean { p_kappa, gates } => {
            let refs = &layer.inputs[at.index];
            let mut selected: Vec<ModuleRef> = refs
                .iter()
                .zip(gates)
                .filter(|(_, &g)| g >= 0.5)
                .map(|(&r, _)| r)
                .collect();
            if selected.is_empty() {
                // An all-off module has no meaning; keep the likeliest child.
                let mut best = 0;
                for i in 1..gates.len() {
                    if gates[i] > gates[best] {
                        best = i;
                    }
                }
                warnings.push(format!(
                    "boolean module {}.{} has every gate below 0.5; keeping its \
                     most likely input (gate {best} at {:.3})",
                    at.layer, at.index, gates[best]
                ));
                selected.push(refs[best]);
            }
            let children: Vec<Formula> = selected
                .into_iter()
                .map(|r| build(net, r, warnings))
                .collect::<Result<_, _>>()?;
            Ok(if children.len() == 1 {
                children.into_iter().next().unwrap()
            } else if *p_kappa >= 0.5 {
                Formula::Or(children)
            } else {
                Formula::And(children)
            })
        }
    }
}

/// Wire a formula into an equivalent network with binary parameters: one
/// predicate module per atom, then one single-module layer per operator in
/// dependency order. With `MaxMethod::hard` the result computes the exact
/// padded semantics.
pub fn compile_formula(
    phi: &Formula,
    d: usize,
    l: usize,
    method: MaxMethod,
    eta: f64,
) -> Result<Network, NetError> {
    check_windows(phi, l)?;
    let mut predicates: Vec<(Vec<f64>, f64)> = Vec::new();
    collect_predicates(phi, d, &mut predicates);
    let mut layers = vec![LayerSpec {
        kind: ModuleKind::Predicate,
        modules: predicates.len(),
        inputs: Vec::new(),
        method,
        eta,
    }];
    let mut params = vec![predicates
        .into_iter()
        .map(|(a, b)| ModuleParams::Predicate { a, b })
        .collect::<Vec<_>>()];
    let mut next_pred = 0usize;
    let root = add_ops(phi, method, eta, &mut layers, &mut params, &mut next_pred);
    // A bare-predicate formula still needs an operator layer to emit the
    // scalar; a single-input conjunction is the identity.
    if root.layer == 0 {
        layers.push(LayerSpec {
            kind: ModuleKind::Boolean,
            modules: 1,
            inputs: vec![vec![root]],
            method,
            eta,
        });
        params.push(vec![ModuleParams::Boolean {
            p_kappa: 0.0,
            gates: vec![1.0],
        }]);
    }
    Network::with_params(NetworkSpec { layers }, params, d, l)
}

// Temporal modules only address window offsets 0..=l-1, so wider formula
// intervals have no faithful encoding.
fn check_windows(phi: &Formula, l: usize) -> Result<(), NetError> {
    match phi {
        Formula::Predicate { .. } => Ok(()),
        Formula::And(cs) | Formula::Or(cs) => cs.iter().try_for_each(|c| check_windows(c, l)),
        Formula::Always(iv, c) | Formula::Eventually(iv, c) => {
            if iv.t2 > l - 1 {
                return Err(NetError::WindowBeyondSignal {
                    t2: iv.t2,
                    max: l - 1,
                    l,
                });
            }
            check_windows(c, l)
        }
    }
}

fn collect_predicates(phi: &Formula, d: usize, out: &mut Vec<(Vec<f64>, f64)>) {
    match phi {
        Formula::Predicate { a, b } => {
            let mut padded = a.clone();
            padded.resize(d, 0.0);
            out.push((padded, *b));
        }
        Formula::And(cs) | Formula::Or(cs) => {
            for c in cs {
                collect_predicates(c, d, out);
            }
        }
        Formula::Always(_, c) | Formula::Eventually(_, c) => collect_predicates(c, d, out),
    }
}

fn add_ops(
    phi: &Formula,
    method: MaxMethod,
    eta: f64,
    layers: &mut Vec<LayerSpec>,
    params: &mut Vec<Vec<ModuleParams>>,
    next_pred: &mut usize,
) -> ModuleRef {
    match phi {
        Formula::Predicate { .. } => {
            let r = ModuleRef {
                layer: 0,
                index: *next_pred,
            };
            *next_pred += 1;
            r
        }
        Formula::And(cs) | Formula::Or(cs) => {
            let refs: Vec<ModuleRef> = cs
                .iter()
                .map(|c| add_ops(c, method, eta, layers, params, next_pred))
                .collect();
            let n = refs.len();
            layers.push(LayerSpec {
                kind: ModuleKind::Boolean,
                modules: 1,
                inputs: vec![refs],
                method,
                eta,
            });
            params.push(vec![ModuleParams::Boolean {
                p_kappa: if matches!(phi, Formula::Or(_)) {
                    1.0
                } else {
                    0.0
                },
                gates: vec![1.0; n],
            }]);
            ModuleRef {
                layer: layers.len() - 1,
                index: 0,
            }
        }
        Formula::Always(iv, c) | Formula::Eventually(iv, c) => {
            let child = add_ops(c, method, eta, layers, params, next_pred);
            layers.push(LayerSpec {
                kind: ModuleKind::Temporal,
                modules: 1,
                inputs: vec![vec![child]],
                method,
                eta,
            });
            params.push(vec![ModuleParams::Temporal {
                p_kappa: if matches!(phi, Formula::Eventually(..)) {
                    1.0
                } else {
                    0.0
                },
                t1: iv.t1 as f64,
                t2: iv.t2 as f64,
            }]);
            ModuleRef {
                layer: layers.len() - 1,
                index: 0,
            }
        }
    }
}
