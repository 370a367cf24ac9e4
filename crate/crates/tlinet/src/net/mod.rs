//! The differentiable network: layered predicate, temporal, and Boolean
//! modules wired into a graph that maps a signal to one robustness scalar.
//!
//! Layer kinds and their parameters:
//!
//! - predicate: weights `a` (one per signal dimension) and bias `b`; emits
//!   the robustness vector `a . s(t) - b`.
//! - temporal: operator likelihood `p_kappa` (1 means eventually, 0 means
//!   always) and continuous window bounds `t1, t2`; pads its input vector
//!   with the minimum, then slides a weighted max (sparse softmax by default)
//!   across every shift using the shared window weights from the time
//!   function.
//! - Boolean: operator likelihood `p_kappa` (1 means or, 0 means and) and one
//!   inclusion probability per input subformula; combines its inputs
//!   columnwise with the averaged minmax, which needs no discrete draws.
//!
//! A [`NetworkSpec`] describes the wiring; a [`Network`] binds it to concrete
//! parameter values for a given signal shape. `forward` records onto a
//! [`Tape`], so gradients for every parameter come from one `backward` call.

mod extract;
mod spec;

pub use extract::{compile_formula, extract_formula, Extraction};
pub use spec::{preset, LayerSpec, NetworkSpec, PRESET_NAMES};

use crate::autodiff::{AdError, Tape, Tensor};
use crate::rng::Rng;
use crate::stl::Signal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network spec line {line}: {msg}")]
    BadSpec { line: usize, msg: String },
    #[error("layer {layer} module {module}: {msg}")]
    BadWiring {
        layer: usize,
        module: usize,
        msg: String,
    },
    #[error("signal has d={got}, network was built for d={want}")]
    SignalDim { want: usize, got: usize },
    #[error("signal has l={got}, network was built for l={want}")]
    SignalLen { want: usize, got: usize },
    #[error(
        "window bound t2={t2} exceeds the representable range 0..={max} for signals of length {l}"
    )]
    WindowBeyondSignal { t2: usize, max: usize, l: usize },
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Predicate,
    Temporal,
    Boolean,
}

/// Reference to a module output: `layer` is an index into the layer list,
/// `index` a module within that layer. Wiring may reach back to any earlier
/// layer, not just the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleRef {
    pub layer: usize,
    pub index: usize,
}

/// Parameter values of one module.
#[derive(Debug, Clone, PartialEq)]
pub enum ModuleParams {
    Predicate { a: Vec<f64>, b: f64 },
    Temporal { p_kappa: f64, t1: f64, t2: f64 },
    Boolean { p_kappa: f64, gates: Vec<f64> },
}

/// A spec bound to parameters for signals of shape `d x l`.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Vec<ModuleParams>>,
    pub d: usize,
    pub l: usize,
}

/// Tape handles for one module's parameters, exposed so the trainer can read
/// gradients and build regularizer terms on the same leaves the forward pass
/// used.
pub enum ModuleLeaves {
    Predicate {
        a: Tensor,
        b: Tensor,
    },
    Temporal {
        p_kappa: Tensor,
        t1: Tensor,
        t2: Tensor,
    },
    Boolean {
        p_kappa: Tensor,
        gates: Tensor,
        clipped_pk: Tensor,
        clipped_gates: Tensor,
    },
}

/// Result of recording one forward pass.
pub struct ForwardTrace {
    /// Robustness of the signal: time-0 entry of the final module's output.
    pub output: Tensor,
    /// Parameter leaves in (layer, module) order, matching `Network::params`.
    pub leaves: Vec<Vec<ModuleLeaves>>,
}

impl Network {
    /// Bind a spec to freshly initialized parameters.
    ///
    /// Predicate weights start at a random unit vector with the bias set to
    /// the median response over a sample of signals, so every predicate
    /// begins splitting the data roughly in half. Temporal windows start
    /// full-width. All operator/gate probabilities start at 0.5 plus a small
    /// jitter to break ties in the maximum-likelihood draws.
    pub fn init(
        spec: NetworkSpec,
        d: usize,
        l: usize,
        sample: &[&Signal],
        rng: &mut Rng,
    ) -> Result<Self, NetError> {
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let mut row = Vec::with_capacity(layer.modules);
            for _ in 0..layer.modules {
                row.push(match layer.kind {
                    ModuleKind::Predicate => {
                        let mut a: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
                        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        for v in &mut a {
                            *v /= norm;
                        }
                        let mut responses: Vec<f64> = sample
                            .iter()
                            .flat_map(|s| {
                                (0..s.l).map(|t| {
                                    a.iter()
                                        .enumerate()
                                        .map(|(j, &aj)| aj * s.value(j, t))
                                        .sum::<f64>()
                                })
                            })
                            .collect();
                        let b = if responses.is_empty() {
                            0.0
                        } else {
                            responses.sort_by(|x, y| x.partial_cmp(y).unwrap());
                            responses[responses.len() / 2]
                        };
                        ModuleParams::Predicate { a, b }
                    }
                    ModuleKind::Temporal => {
                        // Random medium-sized window. Full windows see only
                        // signal-global features (for many datasets those are
                        // class-independent, so nothing drives the bounds),
                        // and bounds exactly at 0 / l-1 have no grid point on
                        // their ramp, so their gradients vanish.
                        let top = (l - 1) as f64 - 0.2;
                        let size = rng.range(l as f64 / 6.0, l as f64 / 2.0).min(top - 0.2);
                        let t1 = rng.range(0.2, top - size);
                        ModuleParams::Temporal {
                            p_kappa: 0.5 + rng.range(-0.05, 0.05),
                            t1,
                            t2: t1 + size,
                        }
                    }
                    ModuleKind::Boolean => {
                        let n = layer.inputs[row.len()].len();
                        ModuleParams::Boolean {
                            p_kappa: 0.5 + rng.range(-0.05, 0.05),
                            gates: (0..n).map(|_| 0.9 + rng.range(-0.05, 0.05)).collect(),
                        }
                    }
                });
            }
            params.push(row);
        }
        let mut net = Network { spec, params, d, l };
        net.calibrate_bias(sample);
        Ok(net)
    }

    /// Shift every predicate bias by a common offset so the median network
    /// output over the sample is (approximately) zero. The per-predicate
    /// median response is the right threshold before temporal windowing, but
    /// a full-window max pushes almost every output positive; an unbalanced
    /// start gives both classes the same gradient direction and stalls
    /// training. The output is monotone decreasing in the shared offset, so
    /// bisection finds the balancing point.
    fn calibrate_bias(&mut self, sample: &[&Signal]) {
        if sample.is_empty() {
            return;
        }
        let stride = sample.len().div_ceil(48);
        let probe: Vec<&Signal> = sample.iter().step_by(stride).copied().collect();
        let original: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|row| {
                row.iter()
                    .filter_map(|m| match m {
                        ModuleParams::Predicate { b, .. } => Some(*b),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        let median_at = |net: &mut Network, delta: f64| -> f64 {
            for (row, orig_row) in net.params.iter_mut().zip(&original) {
                let mut k = 0;
                for m in row.iter_mut() {
                    if let ModuleParams::Predicate { b, .. } = m {
                        *b = orig_row[k] + delta;
                        k += 1;
                    }
                }
            }
            let mut outs: Vec<f64> = probe
                .iter()
                .map(|s| net.robustness(s).expect("calibration forward"))
                .collect();
            outs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            outs[outs.len() / 2]
        };
        let (mut lo, mut hi) = (-1.0, 1.0);
        // output decreases in delta: walk the bracket outward until it spans 0
        let mut guard = 0;
        while median_at(self, lo) < 0.0 && guard < 60 {
            lo *= 2.0;
            guard += 1;
        }
        while median_at(self, hi) > 0.0 && guard < 120 {
            hi *= 2.0;
            guard += 1;
        }
        let mut delta = 0.0;
        for _ in 0..30 {
            delta = 0.5 * (lo + hi);
            if median_at(self, delta) > 0.0 {
                lo = delta;
            } else {
                hi = delta;
            }
        }
        let _ = median_at(self, delta);
    }

    /// Bind a spec to explicit parameters (used when loading saved networks).
    pub fn with_params(
        spec: NetworkSpec,
        params: Vec<Vec<ModuleParams>>,
        d: usize,
        l: usize,
    ) -> Result<Self, NetError> {
        spec.validate()?;
        for (li, layer) in spec.layers.iter().enumerate() {
            if params.get(li).map_or(0, Vec::len) != layer.modules {
                return Err(NetError::BadWiring {
                    layer: li,
                    module: 0,
                    msg: "parameter count does not match spec".into(),
                });
            }
        }
        Ok(Network { spec, params, d, l })
    }

    /// Record one forward pass for `signal` on `tape`.
    pub fn forward(&self, tape: &mut Tape, signal: &Signal) -> Result<ForwardTrace, NetError> {
        if signal.d != self.d {
            return Err(NetError::SignalDim {
                want: self.d,
                got: signal.d,
            });
        }
        if signal.l != self.l {
            return Err(NetError::SignalLen {
                want: self.l,
                got: signal.l,
            });
        }
        let l = self.l;
        let sig = tape.matrix(signal.raw().to_vec(), self.d, l);
        let mut outputs: Vec<Vec<Tensor>> = Vec::with_capacity(self.spec.layers.len());
        let mut leaves: Vec<Vec<ModuleLeaves>> = Vec::with_capacity(self.spec.layers.len());

        for (li, layer) in self.spec.layers.iter().enumerate() {
            let mut row_out = Vec::with_capacity(layer.modules);
            let mut row_leaves = Vec::with_capacity(layer.modules);
            for mi in 0..layer.modules {
                match &self.params[li][mi] {
                    ModuleParams::Predicate { a, b } => {
                        let a_t = tape.vector(a.clone());
                        let b_t = tape.scalar(*b);
                        let rv = tape.linear_predicate(sig, a_t, b_t)?;
                        row_out.push(rv);
                        row_leaves.push(ModuleLeaves::Predicate { a: a_t, b: b_t });
                    }
                    ModuleParams::Temporal { p_kappa, t1, t2 } => {
                        let input = outputs[layer.inputs[mi][0].layer][layer.inputs[mi][0].index];
                        let pk_t = tape.scalar(*p_kappa);
                        let pk_c = tape.clip(pk_t);
                        let kappa = tape.ml_draw(pk_c, 1.0, -1.0);
                        let t1_t = tape.scalar(*t1);
                        let t2_t = tape.scalar(*t2);
                        let w = tape.time_function(t1_t, t2_t, layer.eta, l);
                        let padded = tape.pad_min(input);
                        let flipped = tape.mul(kappa, padded)?;
                        let approx = tape.windowed_max(flipped, w, layer.method)?;
                        let rv = tape.mul(kappa, approx)?;
                        row_out.push(rv);
                        row_leaves.push(ModuleLeaves::Temporal {
                            p_kappa: pk_t,
                            t1: t1_t,
                            t2: t2_t,
                        });
                    }
                    ModuleParams::Boolean { p_kappa, gates } => {
                        let ins: Vec<Tensor> = layer.inputs[mi]
                            .iter()
                            .map(|r| outputs[r.layer][r.index])
                            .collect();
                        let rows = tape.stack(&ins)?;
                        let pk_t = tape.scalar(*p_kappa);
                        let pk_c = tape.clip(pk_t);
                        let g_t = tape.vector(gates.clone());
                        let g_c = tape.clip(g_t);
                        let rv = tape.averaged_minmax_cols(rows, g_c, pk_c)?;
                        row_out.push(rv);
                        row_leaves.push(ModuleLeaves::Boolean {
                            p_kappa: pk_t,
                            gates: g_t,
                            clipped_pk: pk_c,
                            clipped_gates: g_c,
                        });
                    }
                }
            }
            outputs.push(row_out);
            leaves.push(row_leaves);
        }
        let last = *outputs
            .last()
            .and_then(|r| r.first())
            .expect("validated non-empty");
        let output = tape.index(last, 0);
        Ok(ForwardTrace { output, leaves })
    }

    /// Robustness value of `signal` (forward pass without keeping the tape).
    pub fn robustness(&self, signal: &Signal) -> Result<f64, NetError> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, signal)?;
        Ok(tape.scalar_value(trace.output))
    }

    /// Iterate all parameter slots as (name, value) pairs, in a fixed order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (li, row) in self.params.iter().enumerate() {
            for (mi, m) in row.iter().enumerate() {
                match m {
                    ModuleParams::Predicate { a, .. } => {
                        for j in 0..a.len() {
                            names.push(format!("layer{li}.module{mi}.a[{j}]"));
                        }
                        names.push(format!("layer{li}.module{mi}.b"));
                    }
                    ModuleParams::Temporal { .. } => {
                        names.push(format!("layer{li}.module{mi}.p_kappa"));
                        names.push(format!("layer{li}.module{mi}.t1"));
                        names.push(format!("layer{li}.module{mi}.t2"));
                    }
                    ModuleParams::Boolean { gates, .. } => {
                        names.push(format!("layer{li}.module{mi}.p_kappa"));
                        for j in 0..gates.len() {
                            names.push(format!("layer{li}.module{mi}.gate[{j}]"));
                        }
                    }
                }
            }
        }
        names
    }

    /// Flatten all parameters into one vector (order matches `param_names`).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for row in &self.params {
            for m in row {
                match m {
                    ModuleParams::Predicate { a, b } => {
                        out.extend_from_slice(a);
                        out.push(*b);
                    }
                    ModuleParams::Temporal { p_kappa, t1, t2 } => {
                        out.extend_from_slice(&[*p_kappa, *t1, *t2]);
                    }
                    ModuleParams::Boolean { p_kappa, gates } => {
                        out.push(*p_kappa);
                        out.extend_from_slice(gates);
                    }
                }
            }
        }
        out
    }

    /// Write a flat parameter vector back into the module structure.
    pub fn unflatten_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for row in &mut self.params {
            for m in row {
                match m {
                    ModuleParams::Predicate { a, b } => {
                        for v in a.iter_mut() {
                            *v = flat[k];
                            k += 1;
                        }
                        *b = flat[k];
                        k += 1;
                    }
                    ModuleParams::Temporal { p_kappa, t1, t2 } => {
                        *p_kappa = flat[k];
                        *t1 = flat[k + 1];
                        *t2 = flat[k + 2];
                        k += 3;
                    }
                    ModuleParams::Boolean { p_kappa, gates } => {
                        *p_kappa = flat[k];
                        k += 1;
                        for v in gates.iter_mut() {
                            *v = flat[k];
                            k += 1;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(k, flat.len());
    }

    /// Per-parameter step-size multipliers. Probabilities live on [0, 1] and
    /// keep unit scale; window bounds range over the signal length and
    /// predicate biases over the data's value range, so they take
    /// proportionally larger steps under the same learning rate.
    pub fn param_scales(&self, bias_scale: f64) -> Vec<f64> {
        let t_scale = ((self.l as f64 - 1.0) / 10.0).max(1.0);
        let b_scale = bias_scale.max(1.0);
        let mut out = Vec::new();
        for row in &self.params {
            for m in row {
                match m {
                    ModuleParams::Predicate { a, .. } => {
                        out.extend(std::iter::repeat_n(1.0, a.len()));
                        out.push(b_scale);
                    }
                    ModuleParams::Temporal { .. } => {
                        out.push(1.0); // p_kappa
                        out.push(t_scale);
                        out.push(t_scale);
                    }
                    ModuleParams::Boolean { gates, .. } => {
                        out.extend(std::iter::repeat_n(1.0, 1 + gates.len()));
                    }
                }
            }
        }
        out
    }

    /// Collect gradients from a recorded trace in `flatten_params` order.
    pub fn collect_grads(&self, tape: &Tape, trace: &ForwardTrace) -> Vec<f64> {
        let mut out = Vec::new();
        for row in &trace.leaves {
            for m in row {
                match m {
                    ModuleLeaves::Predicate { a, b } => {
                        out.extend_from_slice(tape.grad(*a));
                        out.push(tape.scalar_grad(*b));
                    }
                    ModuleLeaves::Temporal { p_kappa, t1, t2 } => {
                        out.push(tape.scalar_grad(*p_kappa));
                        out.push(tape.scalar_grad(*t1));
                        out.push(tape.scalar_grad(*t2));
                    }
                    ModuleLeaves::Boolean { p_kappa, gates, .. } => {
                        out.push(tape.scalar_grad(*p_kappa));
                        out.extend_from_slice(tape.grad(*gates));
                    }
                }
            }
        }
        out
    }

    /// Clamp probabilities into the valid range and project windows to
    /// `0 <= t1 <= t2 <= l - 1` (swapping if they crossed).
    ///
    /// Probabilities are kept a hair inside (0, 1): exactly at the boundary
    /// the clip in the forward graph has zero slope, which would freeze the
    /// parameter at whatever side it first touched. A 1e-3 margin changes no
    /// drawn value and no extraction threshold but keeps gradients alive.
    pub fn project_params(&mut self) {
        const P_MARGIN: f64 = 1e-3;
        let clamp_p = |p: &mut f64| *p = p.clamp(P_MARGIN, 1.0 - P_MARGIN);
        let top = (self.l - 1) as f64;
        for row in &mut self.params {
            for m in row {
                match m {
                    // Rescaling (a, b) by 1/|a| fixes the robustness scale
                    // without moving the half-plane. Without this anchor the
                    // margin loss has a degenerate optimum at |a| -> 0 (all
                    // robustness collapses to zero).
                    ModuleParams::Predicate { a, b } => {
                        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > 1e-12 {
                            for v in a.iter_mut() {
                                *v /= norm;
                            }
                            *b /= norm;
                        }
                    }
                    ModuleParams::Temporal { p_kappa, t1, t2 } => {
                        clamp_p(p_kappa);
                        // Same boundary-freeze logic as the probabilities:
                        // at exactly 0 or l-1 the ramp holds no grid point
                        // and the bound stops learning. 0.2 in from either
                        // end it extracts to the same integer window.
                        const T_MARGIN: f64 = 0.2;
                        *t1 = t1.clamp(T_MARGIN, top - T_MARGIN);
                        *t2 = t2.clamp(T_MARGIN, top - T_MARGIN);
                        if *t1 > *t2 {
                            std::mem::swap(t1, t2);
                        }
                    }
                    ModuleParams::Boolean { p_kappa, gates } => {
                        clamp_p(p_kappa);
                        for g in gates {
                            clamp_p(g);
                        }
                    }
                }
            }
        }
    }
}
