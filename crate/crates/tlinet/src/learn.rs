//! Losses, regularizers, the training loop, and evaluation.
//!
//! Training minimizes a classification loss on the network's robustness
//! output plus three optional regularizers: gate sparsity (fewer subformulas),
//! and two bi-modal penalties pushing the averaged-operator probabilities to
//! binary values so the extracted formula means what the network computes.
//! Regularizer weights ramp in linearly over the first fifth of the epochs so
//! structure search happens before binarization.
//!
//! Runs are bitwise deterministic for a fixed seed: all randomness flows from
//! one seeded stream, and per-sample gradients are reduced in sample order no
//! matter how many worker threads computed them.

use crate::autodiff::Tape;
use crate::net::{extract_formula, ModuleParams, NetError, Network, NetworkSpec};
use crate::rng::Rng;
use crate::stl::{self, Formula, LabeledDataset, Signal, StlError};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains only one class")]
    OneClass,
    #[error("training diverged: parameter {param} became non-finite at epoch {epoch}")]
    Diverged { param: String, epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AdError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("bad report file at line {line}: {msg}")]
    BadReport { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Exponential,
    Hinge,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Hinge margin/accuracy trade-off.
    pub gamma: f64,
    /// Initial value of the learnable hinge margin.
    pub epsilon_init: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Hinge,
            gamma: 0.5,
            epsilon_init: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegWeights {
    /// Gate sparsity (formula size).
    pub lambda1: f64,
    /// Bi-modal penalty on Boolean gate probabilities.
    pub lambda2: f64,
    /// Bi-modal penalty on averaged-minmax operator probabilities.
    pub lambda3: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights {
            lambda1: 0.01,
            lambda2: 0.05,
            lambda3: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Fraction of the dataset held out for testing.
    pub holdout: f64,
    /// Worker threads for per-sample gradients (0 = all cores).
    pub threads: usize,
    /// Independent initializations per call; the one with the lowest final
    /// training error wins. All draw from the same seeded stream.
    pub restarts: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr: 0.05,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::Adam,
            holdout: 0.25,
            threads: 0,
            restarts: 4,
        }
    }
}

// ----- loss and regularizer values (plain math; the trainer builds the same
// expressions on the tape) -----

/// `e^(-c r)`: penalizes misclassification exponentially.
pub fn exponential_loss(r: f64, c: f64) -> f64 {
    (-c * r).exp()
}

/// `relu(eps - c r) - gamma * eps`: margin loss with learnable margin.
pub fn hinge_loss(r: f64, c: f64, eps: f64, gamma: f64) -> f64 {
    (eps - c * r).max(0.0) - gamma * eps
}

/// Number of drawn-on Boolean gates, summed over every Boolean module.
pub fn sparsity_reg(net: &Network) -> f64 {
    let mut total = 0.0;
    for row in &net.params {
        for m in row {
            if let ModuleParams::Boolean { gates, .. } = m {
                total += gates.iter().filter(|&&g| g.clamp(0.0, 1.0) >= 0.5).count() as f64;
            }
        }
    }
    total
}

/// `sum p_i (1 - p_i)`: zero exactly at binary probabilities.
pub fn bimodal_reg(p: &[f64]) -> f64 {
    p.iter().map(|&v| v * (1.0 - v)).sum()
}

/// Bi-modal penalty for an averaged-minmax module: operator probability plus
/// all gate probabilities.
pub fn kavm_reg(p: &[f64], p_kappa: f64) -> f64 {
    p_kappa * (1.0 - p_kappa) + bimodal_reg(p)
}

/// Mean sample loss plus the weighted regularizers at full ramp.
pub fn total_loss(
    robustness: &[f64],
    labels: &[i8],
    net: &Network,
    loss: &LossConfig,
    eps: f64,
    reg: &RegWeights,
) -> f64 {
    let n = robustness.len() as f64;
    let base: f64 = robustness
        .iter()
        .zip(labels)
        .map(|(&r, &c)| match loss.kind {
            LossKind::Exponential => exponential_loss(r, c as f64),
            LossKind::Hinge => hinge_loss(r, c as f64, eps, loss.gamma),
        })
        .sum::<f64>()
        / n;
    let mut l_avm = 0.0;
    let mut l_kavm = 0.0;
    for row in &net.params {
        for m in row {
            if let ModuleParams::Boolean { p_kappa, gates } = m {
                let clipped: Vec<f64> = gates.iter().map(|g| g.clamp(0.0, 1.0)).collect();
                l_avm += bimodal_reg(&clipped);
                l_kavm += kavm_reg(&clipped, p_kappa.clamp(0.0, 1.0));
            }
        }
    }
    base + reg.lambda1 * sparsity_reg(net) + reg.lambda2 * l_avm + reg.lambda3 * l_kavm
}

// ----- evaluation -----

/// MCR of the network: predicted positive iff robustness > 0.
pub fn evaluate_network(net: &Network, data: &LabeledDataset) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut wrong = 0usize;
    for (s, &c) in data.signals.iter().zip(&data.labels) {
        let r = net.robustness(s)?;
        if (r > 0.0) != (c == 1) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// MCR of a formula under the exact semantics (strict horizon).
pub fn evaluate_formula(phi: &Formula, data: &LabeledDataset) -> Result<f64, TrainError> {
    Ok(stl::mcr(data, phi)?)
}

/// MCR of a formula under the padding convention, which matches the network's
/// semantics even when the formula's horizon exceeds the signal length.
pub fn evaluate_formula_padded(phi: &Formula, data: &LabeledDataset) -> Result<f64, TrainError> {
    Ok(stl::mcr_padded(data, phi)?)
}

// ----- training -----

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub restart: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Misclassification rate over the training forwards of this epoch
    /// (computed from the pre-update passes, so it trails by one step).
    pub train_mcr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub seed: u64,
    pub epoch_loss: Vec<f64>,
    pub train_mcr_net: f64,
    pub test_mcr_net: f64,
    pub train_mcr_formula: f64,
    pub test_mcr_formula: f64,
    /// Fraction of averaged-operator probabilities within 0.05 of {0, 1}.
    pub gate_convergence: f64,
    pub formula_text: String,
    pub warnings: Vec<String>,
    /// Wall-clock seconds. Not written to report files so that identical
    /// runs produce identical bytes.
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub report: TrainReport,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, scales: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t);
        let bc2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * scales[i] * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn per_sample_pass(
    net: &Network,
    signal: &Signal,
    label: i8,
    loss: &LossConfig,
    eps: f64,
) -> Result<(f64, f64, Vec<f64>, f64), TrainError> {
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, signal)?;
    let r = tape.scalar_value(trace.output);
    let c = tape.scalar(label as f64);
    let (loss_node, eps_leaf) = match loss.kind {
        LossKind::Exponential => {
            let cr = tape.mul(c, trace.output)?;
            let ncr = tape.neg(cr);
            (tape.exp(ncr), None)
        }
        LossKind::Hinge => {
            let eps_leaf = tape.scalar(eps);
            let cr = tape.mul(c, trace.output)?;
            let margin = tape.sub(eps_leaf, cr)?;
            let hinge = tape.relu(margin);
            let gamma = tape.scalar(loss.gamma);
            let geps = tape.mul(gamma, eps_leaf)?;
            (tape.sub(hinge, geps)?, Some(eps_leaf))
        }
    };
    let loss_value = tape.scalar_value(loss_node);
    tape.backward(loss_node)?;
    let grads = net.collect_grads(&tape, &trace);
    let eps_grad = eps_leaf.map_or(0.0, |e| tape.scalar_grad(e));
    Ok((r, loss_value, grads, eps_grad))
}

/// Regularizer value and gradients at the current parameters; gradient slots
/// line up with `Network::flatten_params`.
fn regularizer_pass(
    net: &Network,
    reg: &RegWeights,
    scale: f64,
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut tape = Tape::new();
    // Rebuild only the Boolean-module leaves; other parameters are untouched
    // by the regularizers.
    let mut terms = Vec::new();
    let mut leaf_map = Vec::new(); // (flat offset, pk leaf, gates leaf)
    let mut offset = 0usize;
    for row in &net.params {
        for m in row {
            match m {
                ModuleParams::Predicate { a, .. } => offset += a.len() + 1,
                ModuleParams::Temporal { .. } => offset += 3,
                ModuleParams::Boolean { p_kappa, gates } => {
                    let pk = tape.scalar(*p_kappa);
                    let pk_c = tape.clip(pk);
                    let g = tape.vector(gates.clone());
                    let g_c = tape.clip(g);
                    let drawn = tape.ml_draw(g_c, 1.0, 0.0);
                    let l_s = tape.sum(drawn);
                    let gate_bimodal = tape.bimodal(g_c);
                    let pk_bimodal = tape.bimodal(pk_c);
                    let w1 = tape.scalar(reg.lambda1 * scale);
                    let w2 = tape.scalar(reg.lambda2 * scale);
                    let w3 = tape.scalar(reg.lambda3 * scale);
                    let t1 = tape.mul(w1, l_s)?;
                    let t2 = tape.mul(w2, gate_bimodal)?;
                    // l_kavm counts the gate bi-modal term again plus the
                    // operator probability.
                    let kavm = tape.add(pk_bimodal, gate_bimodal)?;
                    let t3 = tape.mul(w3, kavm)?;
                    let t12 = tape.add(t1, t2)?;
                    terms.push(tape.add(t12, t3)?);
                    leaf_map.push((offset, pk, g, gates.len()));
                    offset += 1 + gates.len();
                }
            }
        }
    }
    let mut grads = vec![0.0; offset];
    if terms.is_empty() {
        return Ok((0.0, grads));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let value = tape.scalar_value(total);
    tape.backward(total)?;
    for (off, pk, g, n_gates) in leaf_map {
        grads[off] = tape.scalar_grad(pk);
        grads[off + 1..off + 1 + n_gates].copy_from_slice(tape.grad(g));
    }
    Ok((value, grads))
}

fn deterministic_split(n: usize, holdout: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_test = ((n as f64) * holdout).round() as usize;
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    (train, test)
}

fn subset(data: &LabeledDataset, idx: &[usize]) -> LabeledDataset {
    LabeledDataset::new(
        idx.iter().map(|&i| data.signals[i].clone()).collect(),
        idx.iter().map(|&i| data.labels[i]).collect(),
    )
    .expect("subset of a valid dataset")
}

/// Train a network of the given layout on `data` and decode the result.
///
/// The dataset is split train/held-out by `cfg.holdout`, sparse-softmax `h`
/// hyperparameters are raised if the signal length demands it, parameters are
/// initialized from the training split, and the loop runs mini-batch descent
/// with the post-step projections. `progress` receives one line per epoch.
pub fn train(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    loss: &LossConfig,
    reg: &RegWeights,
    cfg: &TrainerConfig,
    mut progress: Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<TrainOutcome, TrainError> {
    let started = Instant::now();
    assert!(cfg.epochs >= 1 && cfg.batch_size >= 1, "epochs and batch size must be positive");
    assert!(cfg.lr > 0.0, "learning rate must be positive");
    assert!(loss.gamma > 0.0 && loss.epsilon_init > 0.0, "gamma and epsilon must be positive");
    assert!(
        reg.lambda1 >= 0.0 && reg.lambda2 >= 0.0 && reg.lambda3 >= 0.0,
        "regularizer weights must be nonnegative"
    );
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if data.labels.iter().all(|&c| c == 1) || data.labels.iter().all(|&c| c == -1) {
        return Err(TrainError::OneClass);
    }
    let (d, l) = (data.d(), data.l());
    let mut rng = Rng::seed_from(cfg.seed);
    let (train_idx, test_idx) = deterministic_split(data.len(), cfg.holdout, &mut rng);
    let train_set = subset(data, &train_idx);
    let test_set = subset(data, &test_idx);

    let (sound_spec, mut warnings) = spec.with_sound_h(l);
    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    };
    // bias steps scale with the spread of the signal values
    let data_std = {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for s in &train_set.signals {
            for &v in s.raw() {
                sum += v;
                sum_sq += v * v;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        (sum_sq / n as f64 - mean * mean).max(0.0).sqrt()
    };

    let mut winner: Option<(f64, Network, Vec<f64>)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let sample: Vec<&Signal> = train_set.signals.iter().collect();
        let net = Network::init(sound_spec.clone(), d, l, &sample, &mut rng)?;
        let (net, epoch_loss) = train_once(
            net,
            &train_set,
            loss,
            reg,
            cfg,
            threads,
            data_std,
            restart,
            &mut rng,
            &mut progress,
        )?;
        let train_mcr = evaluate_network(&net, &train_set)?;
        if winner.as_ref().is_none_or(|(m, _, _)| train_mcr < *m) {
            winner = Some((train_mcr, net, epoch_loss));
        }
        if train_mcr == 0.0 {
            break;
        }
    }
    let (train_mcr_net, net, epoch_loss) = winner.expect("at least one restart ran");

    let test_mcr_net = if test_set.is_empty() {
        f64::NAN
    } else {
        evaluate_network(&net, &test_set)?
    };
    let extraction = extract_formula(&net)?;
    warnings.extend(extraction.warnings.iter().cloned());
    let train_mcr_formula = evaluate_formula_padded(&extraction.formula, &train_set)?;
    let test_mcr_formula = if test_set.is_empty() {
        f64::NAN
    } else {
        evaluate_formula_padded(&extraction.formula, &test_set)?
    };

    let mut gate_probs = Vec::new();
    for row in &net.params {
        for m in row {
            if let ModuleParams::Boolean { p_kappa, gates } = m {
                gate_probs.push(*p_kappa);
                gate_probs.extend_from_slice(gates);
            }
        }
    }
    let gate_convergence = if gate_probs.is_empty() {
        1.0
    } else {
        gate_probs
            .iter()
            .filter(|&&p| p <= 0.05 || p >= 0.95)
            .count() as f64
            / gate_probs.len() as f64
    };

    let report = TrainReport {
        seed: cfg.seed,
        epoch_loss,
        train_mcr_net,
        test_mcr_net,
        train_mcr_formula,
        test_mcr_formula,
        gate_convergence,
        formula_text: stl::format_formula(&extraction.formula),
        warnings,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        network: net,
        report,
    })
}

/// Per-sample result: robustness, loss, parameter gradients, margin gradient.
type SamplePass = Result<(f64, f64, Vec<f64>, f64), TrainError>;

/// One gradient-descent run from an initialized network. Returns the best
/// epoch's parameters (by training error over that epoch's forward passes),
/// not the final ones.
#[allow(clippy::too_many_arguments)]
fn train_once(
    mut net: Network,
    train_set: &LabeledDataset,
    loss: &LossConfig,
    reg: &RegWeights,
    cfg: &TrainerConfig,
    threads: usize,
    data_std: f64,
    restart: usize,
    rng: &mut Rng,
    progress: &mut Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<(Network, Vec<f64>), TrainError> {
    let n_params = net.flatten_params().len();
    let mut scales = net.param_scales(data_std);
    scales.push(1.0); // epsilon
    let mut param_names = net.param_names();
    param_names.push("epsilon".to_string());
    let mut opt = Adam::new(n_params + 1);
    let mut eps = loss.epsilon_init;
    let ramp_epochs = (cfg.epochs as f64 * 0.2).ceil();
    // Snapshots prefer epochs where regularization has been at full strength
    // long enough for the gate probabilities to have settled at {0, 1}.
    let settled_from = (cfg.epochs as f64 * 0.3).ceil() as usize;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    // (mcr, params, from a settled epoch)
    let mut best: Option<(f64, Vec<f64>, bool)> = None;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let scale = if ramp_epochs > 0.0 {
            (epoch as f64 / ramp_epochs).min(1.0)
        } else {
            1.0
        };
        let mut batch_losses = Vec::new();
        let mut wrong = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Per-sample passes, possibly on worker threads; each sample's
            // result lands in its own slot so the reduction order is fixed.
            let mut results: Vec<Option<SamplePass>> = (0..batch.len()).map(|_| None).collect();
            let chunk = batch.len().div_ceil(threads);
            if threads == 1 || batch.len() == 1 {
                for (slot, &i) in results.iter_mut().zip(batch) {
                    *slot = Some(per_sample_pass(
                        &net,
                        &train_set.signals[i],
                        train_set.labels[i],
                        loss,
                        eps,
                    ));
                }
            } else {
                let net_ref = &net;
                std::thread::scope(|scope| {
                    for (slots, ids) in results.chunks_mut(chunk).zip(batch.chunks(chunk)) {
                        scope.spawn(move || {
                            for (slot, &i) in slots.iter_mut().zip(ids) {
                                *slot = Some(per_sample_pass(
                                    net_ref,
                                    &train_set.signals[i],
                                    train_set.labels[i],
                                    loss,
                                    eps,
                                ));
                            }
                        });
                    }
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; n_params + 1];
            let mut base_loss = 0.0;
            for (slot, &i) in results.into_iter().zip(batch) {
                let (r, loss_value, g, eps_g) = slot.expect("worker filled slot")?;
                base_loss += loss_value * inv;
                for (acc, v) in grads.iter_mut().zip(&g) {
                    *acc += v * inv;
                }
                grads[n_params] += eps_g * inv;
                if (r > 0.0) != (train_set.labels[i] == 1) {
                    wrong += 1;
                }
            }
            let (reg_value, reg_grads) = regularizer_pass(&net, reg, scale)?;
            for (acc, v) in grads.iter_mut().zip(&reg_grads) {
                *acc += v;
            }
            batch_losses.push(base_loss + reg_value);

            let mut flat = net.flatten_params();
            flat.push(eps);
            match cfg.optimizer {
                Optimizer::Adam => opt.step(&mut flat, &grads, cfg.lr, &scales),
                Optimizer::Sgd => {
                    for ((p, g), s) in flat.iter_mut().zip(&grads).zip(&scales) {
                        *p -= cfg.lr * s * g;
                    }
                }
            }
            eps = flat.pop().unwrap().max(1e-6);
            net.unflatten_params(&flat);
            net.project_params();

            let check = net.flatten_params();
            if let Some(bad) = check
                .iter()
                .chain(std::iter::once(&eps))
                .position(|v| !v.is_finite())
            {
                return Err(TrainError::Diverged {
                    param: param_names[bad].clone(),
                    epoch,
                });
            }
        }
        let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::Diverged {
                param: "loss".to_string(),
                epoch,
            });
        }
        epoch_loss.push(mean_loss);
        let epoch_mcr = wrong as f64 / train_set.len() as f64;
        // Keep the best epoch by training error. On ties, upgrade once to the
        // first epoch after the regularizers settled (binarized gates), then
        // stop moving so post-convergence drift cannot degrade the snapshot.
        let settled = epoch >= settled_from;
        let take = match &best {
            None => true,
            Some((m, _, was_settled)) => {
                epoch_mcr < *m || (epoch_mcr == *m && settled && !was_settled)
            }
        };
        if take {
            best = Some((epoch_mcr, net.flatten_params(), settled));
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(&EpochStats {
                restart,
                epoch,
                loss: mean_loss,
                train_mcr: epoch_mcr,
            });
        }
    }
    if let Some((_, params, _)) = best {
        net.unflatten_params(&params);
    }
    Ok((net, epoch_loss))
}

// ----- report files -----

/// Serialize a report plus the trained network. Deliberately excludes wall
/// time: identical seeds and flags must produce identical bytes.
pub fn write_report(report: &TrainReport, net: &Network) -> String {
    let mut out = String::new();
    out.push_str("# training report\n");
    out.push_str(&format!("seed={}\n", report.seed));
    out.push_str(&format!("train_mcr_net={}\n", report.train_mcr_net));
    out.push_str(&format!("test_mcr_net={}\n", report.test_mcr_net));
    out.push_str(&format!("train_mcr_formula={}\n", report.train_mcr_formula));
    out.push_str(&format!("test_mcr_formula={}\n", report.test_mcr_formula));
    out.push_str(&format!("gate_convergence={}\n", report.gate_convergence));
    out.push_str(&format!("formula={}\n", report.formula_text));
    for w in &report.warnings {
        out.push_str(&format!("warning={w}\n"));
    }
    out.push_str(&format!("[network d={} l={}]\n", net.d, net.l));
    out.push_str(&net.spec.to_text());
    out.push_str("[params]\n");
    for (li, row) in net.params.iter().enumerate() {
        for (mi, m) in row.iter().enumerate() {
            match m {
                ModuleParams::Predicate { a, b } => {
                    let coeffs: Vec<String> = a.iter().map(f64::to_string).collect();
                    out.push_str(&format!("{li}.{mi} a={} b={b}\n", coeffs.join(",")));
                }
                ModuleParams::Temporal { p_kappa, t1, t2 } => {
                    out.push_str(&format!("{li}.{mi} p_kappa={p_kappa} t1={t1} t2={t2}\n"));
                }
                ModuleParams::Boolean { p_kappa, gates } => {
                    let gs: Vec<String> = gates.iter().map(f64::to_string).collect();
                    out.push_str(&format!(
                        "{li}.{mi} p_kappa={p_kappa} gates={}\n",
                        gs.join(",")
                    ));
                }
            }
        }
    }
    out.push_str("[epoch-loss]\n");
    for v in &report.epoch_loss {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Parsed form of a report file.
#[derive(Debug)]
pub struct ReportFile {
    pub formula_text: String,
    pub network: Network,
}

pub fn read_report(text: &str) -> Result<ReportFile, TrainError> {
    let mut formula_text = None;
    let mut net_header: Option<(usize, usize)> = None;
    let mut spec_lines = String::new();
    let mut param_lines: Vec<(usize, String)> = Vec::new();
    #[derive(PartialEq)]
    enum Section {
        Head,
        Network,
        Params,
        Losses,
    }
    let mut section = Section::Head;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let bad = |msg: &str| TrainError::BadReport {
            line: ln + 1,
            msg: msg.to_string(),
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("[network") {
            let rest = rest.trim_end_matches(']').trim();
            let mut d = None;
            let mut l = None;
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("d", v)) => d = v.parse().ok(),
                    Some(("l", v)) => l = v.parse().ok(),
                    _ => {}
                }
            }
            net_header = Some((
                d.ok_or_else(|| bad("missing d"))?,
                l.ok_or_else(|| bad("missing l"))?,
            ));
            section = Section::Network;
            continue;
        }
        if line == "[params]" {
            section = Section::Params;
            continue;
        }
        if line == "[epoch-loss]" {
            section = Section::Losses;
            continue;
        }
        match section {
            Section::Head => {
                if let Some(v) = line.strip_prefix("formula=") {
                    formula_text = Some(v.to_string());
                }
            }
            Section::Network => {
                spec_lines.push_str(line);
                spec_lines.push('\n');
            }
            Section::Params => param_lines.push((ln + 1, line.to_string())),
            Section::Losses => {}
        }
    }
    let (d, l) = net_header.ok_or(TrainError::BadReport {
        line: 0,
        msg: "missing [network] section".into(),
    })?;
    let spec = NetworkSpec::parse(&spec_lines)?;
    let mut params: Vec<Vec<ModuleParams>> = spec
        .layers
        .iter()
        .map(|layer| Vec::with_capacity(layer.modules))
        .collect();
    for (ln, line) in param_lines {
        let bad = |msg: String| TrainError::BadReport { line: ln, msg };
        let (addr, rest) = line
            .split_once(' ')
            .ok_or_else(|| bad("expected '<layer>.<module> key=value...'".into()))?;
        let (li, mi) = addr
            .split_once('.')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| bad(format!("bad module address '{addr}'")))?;
        if li >= spec.layers.len() || mi != params[li].len() {
            return Err(bad(format!(
                "module {li}.{mi} out of order or out of range"
            )));
        }
        let mut fields = std::collections::HashMap::new();
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("bad field '{kv}'")))?;
            fields.insert(k, v);
        }
        let parse_f = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("bad number '{v}'")))
        };
        let parse_vec = |v: &str| -> Result<Vec<f64>, TrainError> {
            v.split(',')
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| bad(format!("bad number '{x}'")))
                })
                .collect()
        };
        let m = match self::kind_of(&spec, li) {
            crate::net::ModuleKind::Predicate => ModuleParams::Predicate {
                a: parse_vec(fields.get("a").ok_or_else(|| bad("missing a".into()))?)?,
                b: parse_f(fields.get("b").ok_or_else(|| bad("missing b".into()))?)?,
            },
            crate::net::ModuleKind::Temporal => ModuleParams::Temporal {
                p_kappa: parse_f(
                    fields
                        .get("p_kappa")
                        .ok_or_else(|| bad("missing p_kappa".into()))?,
                )?,
                t1: parse_f(fields.get("t1").ok_or_else(|| bad("missing t1".into()))?)?,
                t2: parse_f(fields.get("t2").ok_or_else(|| bad("missing t2".into()))?)?,
            },
            crate::net::ModuleKind::Boolean => ModuleParams::Boolean {
                p_kappa: parse_f(
                    fields
                        .get("p_kappa")
                        .ok_or_else(|| bad("missing p_kappa".into()))?,
                )?,
                gates: parse_vec(
                    fields
                        .get("gates")
                        .ok_or_else(|| bad("missing gates".into()))?,
                )?,
            },
        };
        params[li].push(m);
    }
    let network = Network::with_params(spec, params, d, l)?;
    Ok(ReportFile {
        formula_text: formula_text.ok_or(TrainError::BadReport {
            line: 0,
            msg: "missing formula= line".into(),
        })?,
        network,
    })
}

fn kind_of(spec: &NetworkSpec, layer: usize) -> crate::net::ModuleKind {
    spec.layers[layer].kind
}
