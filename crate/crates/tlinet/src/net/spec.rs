//! Network layout: the layer list, its textual format, and the named presets.
//!
//! The format is line oriented; blank lines and `#` comments are ignored:
//!
//! ```text
//! layer predicate modules=2
//! layer temporal inputs=0.0;0.1 method=sparse-softmax beta=1 h=1 eta=0.5
//! layer boolean inputs=1.0,1.1
//! ```
//!
//! Each non-predicate layer lists one input group per module, groups
//! separated by `;`, references within a group by `,`. A reference `L.M`
//! names module `M` of layer `L` (0-based, any earlier layer). Temporal
//! modules take exactly one input; Boolean modules take one or more.

use super::{ModuleKind, ModuleRef, NetError};
use crate::maxops::{self, MaxKind, MaxMethod};

pub const PRESET_NAMES: [&str; 3] = ["naval-1", "reach-avoid", "periodic"];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: ModuleKind,
    pub modules: usize,
    /// One group of input references per module (empty for predicates).
    pub inputs: Vec<Vec<ModuleRef>>,
    /// Max approximation used by temporal modules (Boolean modules always
    /// use the averaged minmax).
    pub method: MaxMethod,
    /// Ramp width of the time function.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

fn method_name(m: MaxMethod) -> &'static str {
    match m.kind {
        MaxKind::Hard => "hard",
        MaxKind::Softmax => "softmax",
        MaxKind::SparseSoftmax => "sparse-softmax",
        MaxKind::AveragedMax => "averaged-max",
    }
}

impl NetworkSpec {
    pub fn parse(text: &str) -> Result<Self, NetError> {
        let mut layers = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| NetError::BadSpec { line: ln + 1, msg };
            let mut words = line.split_whitespace();
            if words.next() != Some("layer") {
                return Err(bad("expected 'layer <kind> ...'".into()));
            }
            let kind = match words.next() {
                Some("predicate") => ModuleKind::Predicate,
                Some("temporal") => ModuleKind::Temporal,
                Some("boolean") => ModuleKind::Boolean,
                other => return Err(bad(format!("unknown layer kind {other:?}"))),
            };
            let mut modules: Option<usize> = None;
            let mut inputs: Vec<Vec<ModuleRef>> = Vec::new();
            let mut beta = 1.0;
            let mut h = 1.0;
            let mut eta = 1.0;
            let mut method_kind = MaxKind::SparseSoftmax;
            for word in words {
                let (key, val) = word
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected key=value, got '{word}'")))?;
                match key {
                    "modules" => {
                        modules = Some(
                            val.parse()
                                .map_err(|_| bad(format!("bad module count '{val}'")))?,
                        )
                    }
                    "inputs" => {
                        for group in val.split(';') {
                            let mut refs = Vec::new();
                            for item in group.split(',') {
                                let (l, m) = item.split_once('.').ok_or_else(|| {
                                    bad(format!("input reference '{item}' is not layer.module"))
                                })?;
                                let layer = l
                                    .parse()
                                    .map_err(|_| bad(format!("bad layer index '{l}'")))?;
                                let index = m
                                    .parse()
                                    .map_err(|_| bad(format!("bad module index '{m}'")))?;
                                refs.push(ModuleRef { layer, index });
                            }
                            inputs.push(refs);
                        }
                    }
                    "method" => {
                        method_kind = match val {
                            "hard" => MaxKind::Hard,
                            "softmax" => MaxKind::Softmax,
                            "sparse-softmax" => MaxKind::SparseSoftmax,
                            "averaged-max" => MaxKind::AveragedMax,
                            _ => return Err(bad(format!("unknown method '{val}'"))),
                        }
                    }
                    "beta" => beta = val.parse().map_err(|_| bad(format!("bad beta '{val}'")))?,
                    "h" => h = val.parse().map_err(|_| bad(format!("bad h '{val}'")))?,
                    "eta" => eta = val.parse().map_err(|_| bad(format!("bad eta '{val}'")))?,
                    _ => return Err(bad(format!("unknown key '{key}'"))),
                }
            }
            let modules = match (modules, inputs.len()) {
                (Some(n), 0) => n,
                (Some(n), g) if n == g => n,
                (Some(n), g) => return Err(bad(format!("modules={n} but {g} input groups given"))),
                (None, 0) => return Err(bad("need modules=N or inputs=...".into())),
                (None, g) => g,
            };
            if beta <= 0.0 || h <= 0.0 || eta <= 0.0 {
                return Err(bad("beta, h, and eta must be positive".into()));
            }
            layers.push(LayerSpec {
                kind,
                modules,
                inputs,
                method: MaxMethod::new(method_kind, beta, h),
                eta,
            });
        }
        let spec = NetworkSpec { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            let kind = match layer.kind {
                ModuleKind::Predicate => "predicate",
                ModuleKind::Temporal => "temporal",
                ModuleKind::Boolean => "boolean",
            };
            out.push_str("layer ");
            out.push_str(kind);
            if layer.inputs.is_empty() {
                out.push_str(&format!(" modules={}", layer.modules));
            } else {
                let groups: Vec<String> = layer
                    .inputs
                    .iter()
                    .map(|g| {
                        g.iter()
                            .map(|r| format!("{}.{}", r.layer, r.index))
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .collect();
                out.push_str(&format!(" inputs={}", groups.join(";")));
            }
            if layer.kind == ModuleKind::Temporal {
                out.push_str(&format!(
                    " method={} beta={} h={} eta={}",
                    method_name(layer.method),
                    layer.method.beta,
                    layer.method.h,
                    layer.eta
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers.is_empty() {
            return Err(NetError::BadSpec {
                line: 0,
                msg: "no layers".into(),
            });
        }
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.modules == 0 {
                return Err(NetError::BadSpec {
                    line: 0,
                    msg: format!("layer {li} has no modules"),
                });
            }
            match layer.kind {
                ModuleKind::Predicate => {
                    if li != 0 {
                        return Err(NetError::BadSpec {
                            line: 0,
                            msg: format!("predicate layer {li} must be the first layer"),
                        });
                    }
                    if !layer.inputs.is_empty() {
                        return Err(NetError::BadSpec {
                            line: 0,
                            msg: "predicate layers read the raw signal, not inputs".into(),
                        });
                    }
                }
                ModuleKind::Temporal | ModuleKind::Boolean => {
                    if li == 0 {
                        return Err(NetError::BadSpec {
                            line: 0,
                            msg: "the first layer must be the predicate layer".into(),
                        });
                    }
                    if layer.inputs.len() != layer.modules {
                        return Err(NetError::BadSpec {
                            line: 0,
                            msg: format!(
                                "layer {li}: {} input groups for {} modules",
                                layer.inputs.len(),
                                layer.modules
                            ),
                        });
                    }
                    for (mi, group) in layer.inputs.iter().enumerate() {
                        let arity_ok = match layer.kind {
                            ModuleKind::Temporal => group.len() == 1,
                            _ => !group.is_empty(),
                        };
                        if !arity_ok {
                            return Err(NetError::BadWiring {
                                layer: li,
                                module: mi,
                                msg: "temporal modules take exactly one input; \
                                      boolean modules at least one"
                                    .into(),
                            });
                        }
                        for r in group {
                            if r.layer >= li {
                                return Err(NetError::BadWiring {
                                    layer: li,
                                    module: mi,
                                    msg: format!(
                                        "input {}.{} is not an earlier layer",
                                        r.layer, r.index
                                    ),
                                });
                            }
                            if r.index >= self.layers[r.layer].modules {
                                return Err(NetError::BadWiring {
                                    layer: li,
                                    module: mi,
                                    msg: format!("input {}.{} does not exist", r.layer, r.index),
                                });
                            }
                        }
                    }
                }
            }
        }
        let last = self.layers.last().unwrap();
        if last.modules != 1 || last.kind == ModuleKind::Predicate {
            return Err(NetError::BadSpec {
                line: 0,
                msg: "the final layer must be a single temporal or boolean module".into(),
            });
        }
        Ok(())
    }

    /// Raise each sparse-softmax `h` (doubling) until the soundness condition
    /// holds for window length `n`. Returns the adjusted spec and one warning
    /// line per raised layer.
    pub fn with_sound_h(&self, n: usize) -> (Self, Vec<String>) {
        let mut spec = self.clone();
        let mut warnings = Vec::new();
        for (li, layer) in spec.layers.iter_mut().enumerate() {
            if layer.kind == ModuleKind::Temporal && layer.method.kind == MaxKind::SparseSoftmax {
                let (beta, h0) = (layer.method.beta, layer.method.h);
                if !maxops::soundness_condition(n, beta, h0) {
                    let h = maxops::raise_h_until_sound(n, beta, h0);
                    layer.method.h = h;
                    warnings.push(format!(
                        "layer {li}: raised h from {h0} to {h} so the sparse softmax \
                         is sound for window size {n}"
                    ));
                }
            }
        }
        (spec, warnings)
    }
}

/// Built-in case-study topologies.
pub fn preset(name: &str) -> Option<NetworkSpec> {
    let text = match name {
        // one eventually-atom and one always-atom joined by a Boolean module
        "naval-1" => {
            "layer predicate modules=2\n\
             layer temporal inputs=0.0;0.1\n\
             layer boolean inputs=1.0,1.1\n"
        }
        // two predicate groups (target box, obstacle box), each combined,
        // time-scoped, then conjoined
        "reach-avoid" => {
            "layer predicate modules=8\n\
             layer boolean inputs=0.0,0.1,0.2,0.3;0.4,0.5,0.6,0.7\n\
             layer temporal inputs=1.0;1.1\n\
             layer boolean inputs=2.0,2.1\n"
        }
        // nested temporal pair for periodic structure
        "periodic" => {
            "layer predicate modules=1\n\
             layer temporal inputs=0.0\n\
             layer temporal inputs=1.0\n\
             layer boolean inputs=2.0\n"
        }
        _ => return None,
    };
    Some(NetworkSpec::parse(text).expect("presets are valid"))
}
