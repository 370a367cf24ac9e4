//! Synthetic dataset generators, noise injection, and the dataset file format.
//!
//! Three scenario generators mirror the usual case-study shapes:
//!
//! - `periodic`: 1-D sinusoids; the classes differ only in period, so the
//!   separating formula needs nested temporal structure.
//! - `naval`: 2-D vessel tracks; normal traffic passes a channel and docks in
//!   a port box, anomalies cut toward an island or turn back to open sea.
//! - `reach_avoid`: 2-D unicycle rollouts that either reach a target box in
//!   the final steps without touching an obstacle box, or fail one of the two.
//!
//! Every generator is a pure function of its spec and seed. Geometry
//! constants are chosen so a short hand-written formula separates the classes
//! exactly on clean data; the generator tests assert that.
//!
//! File format (one dataset per file):
//!
//! ```text
//! d=<int> l=<int> rng=<id> seed=<int>
//! <label>,<v_0_0>,...,<v_0_{l-1}>,<v_1_0>,...   (dimension-major)
//! ```

use crate::rng::{Rng, RNG_ID};
use crate::stl::{LabeledDataset, Signal};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("signal too short for {scenario}: need l >= {need}, got {got}")]
    TooShort {
        scenario: &'static str,
        need: usize,
        got: usize,
    },
    #[error(
        "rejection sampling exceeded {budget} attempts; loosen the geometry or raise the budget"
    )]
    RetryBudget { budget: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Naval,
    ReachAvoid,
    Periodic,
}

impl Scenario {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "naval" => Some(Scenario::Naval),
            "reach-avoid" | "reach_avoid" => Some(Scenario::ReachAvoid),
            "periodic" => Some(Scenario::Periodic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Naval => "naval",
            Scenario::ReachAvoid => "reach-avoid",
            Scenario::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub scenario: Scenario,
    pub per_class: usize,
    pub len: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(scenario: Scenario, per_class: usize, len: usize, seed: u64) -> Self {
        assert!(per_class >= 1 && len >= 2);
        GeneratorSpec {
            scenario,
            per_class,
            len,
            seed,
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<LabeledDataset, DataError> {
    match spec.scenario {
        Scenario::Periodic => gen_periodic(spec),
        Scenario::Naval => gen_naval(spec),
        Scenario::ReachAvoid => gen_reach_avoid(spec),
    }
}

/// Positive class: period 20; negative class: period 40. Uniform random
/// phase, amplitude uniform in [1, 5].
pub fn gen_periodic(spec: &GeneratorSpec) -> Result<LabeledDataset, DataError> {
    let l = spec.len;
    if l < 40 {
        return Err(DataError::TooShort {
            scenario: "periodic",
            need: 40,
            got: l,
        });
    }
    let mut rng = Rng::seed_from(spec.seed);
    let mut signals = Vec::with_capacity(2 * spec.per_class);
    let mut labels = Vec::with_capacity(2 * spec.per_class);
    for _ in 0..spec.per_class {
        for (period, label) in [(20.0, 1i8), (40.0, -1i8)] {
            let amplitude = rng.range(1.0, 5.0);
            let phase = rng.range(0.0, std::f64::consts::TAU);
            let values: Vec<f64> = (0..l)
                .map(|t| amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                .collect();
            signals.push(Signal::scalar(values));
            labels.push(label);
        }
    }
    Ok(LabeledDataset::new(signals, labels).expect("generator output is well formed"))
}

/// Naval-analog geometry, in nominal map units. Normal tracks start at sea
/// (right edge), pass the channel, and dock inside the port box at a varying
/// time. One anomaly family dips toward the island box mid-route and then
/// docks like a normal vessel (so only the always-atom catches it); the other
/// keeps a clean route but turns back to open sea without ever reaching the
/// harbor side (so only the eventually-atom catches it). The classes are
/// separated exactly by `eventually (x < 25) and always (y > 20)`, and
/// neither atom suffices alone.
pub mod naval_geometry {
    /// Threshold the eventually-atom certifies (reaching the harbor side).
    pub const X_PORT_THRESHOLD: f64 = 25.0;
    /// Threshold the always-atom certifies (staying clear of the island).
    pub const Y_ISLAND_THRESHOLD: f64 = 20.0;
    /// Port box (positives and island-dippers end here).
    pub const PORT_X: (f64, f64) = (8.0, 16.0);
    pub const PORT_Y: (f64, f64) = (28.0, 33.0);
    /// Island dip region (low y, mid x).
    pub const ISLAND_X: (f64, f64) = (27.0, 35.0);
    pub const ISLAND_Y: (f64, f64) = (8.0, 14.0);
    /// Sea spawn region.
    pub const SEA_X: (f64, f64) = (50.0, 58.0);
    pub const SEA_Y: (f64, f64) = (28.0, 36.0);
    /// Waypoint jitter.
    pub const SIGMA: f64 = 0.5;
}

/// Interpolate waypoints placed at the given cumulative time fractions
/// (first 0.0, last 1.0).
fn piecewise_linear(waypoints: &[(f64, f64)], fracs: &[f64], l: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(waypoints.len(), fracs.len());
    let mut xs = Vec::with_capacity(l);
    let mut ys = Vec::with_capacity(l);
    for t in 0..l {
        let pos = t as f64 / (l - 1) as f64;
        let k = fracs[..fracs.len() - 1]
            .iter()
            .rposition(|&f| f <= pos)
            .unwrap_or(0);
        let span = (fracs[k + 1] - fracs[k]).max(1e-9);
        let frac = ((pos - fracs[k]) / span).clamp(0.0, 1.0);
        let (x0, y0) = waypoints[k];
        let (x1, y1) = waypoints[k + 1];
        xs.push(x0 + frac * (x1 - x0));
        ys.push(y0 + frac * (y1 - y0));
    }
    (xs, ys)
}

pub fn gen_naval(spec: &GeneratorSpec) -> Result<LabeledDataset, DataError> {
    use naval_geometry::*;
    let l = spec.len;
    if l < 8 {
        return Err(DataError::TooShort {
            scenario: "naval",
            need: 8,
            got: l,
        });
    }
    let mut rng = Rng::seed_from(spec.seed);
    let mut signals = Vec::with_capacity(2 * spec.per_class);
    let mut labels = Vec::with_capacity(2 * spec.per_class);
    let jittered = |pts: &mut [(f64, f64)], rng: &mut Rng| {
        for p in pts {
            p.0 += rng.normal(0.0, SIGMA);
            p.1 += rng.normal(0.0, SIGMA);
        }
    };
    let push =
        |xs: Vec<f64>, ys: Vec<f64>, label: i8, signals: &mut Vec<Signal>, labels: &mut Vec<i8>| {
            let mut data = xs;
            data.extend(ys);
            signals.push(Signal::new(2, l, data).expect("finite"));
            labels.push(label);
        };
    let sea = |rng: &mut Rng| (rng.range(SEA_X.0, SEA_X.1), rng.range(SEA_Y.0, SEA_Y.1));
    let port = |rng: &mut Rng| {
        (
            rng.range(PORT_X.0 + 1.0, PORT_X.1 - 1.0),
            rng.range(PORT_Y.0 + 1.0, PORT_Y.1 - 1.0),
        )
    };
    for i in 0..spec.per_class {
        // normal: sea -> channel -> dock at a random time -> stay parked
        let dock = rng.range(0.7, 0.95);
        let p = port(&mut rng);
        let parked = (p.0 + rng.range(-0.5, 0.5), p.1 + rng.range(-0.5, 0.5));
        let mut wp = [
            sea(&mut rng),
            (rng.range(32.0, 42.0), rng.range(26.0, 32.0)),
            p,
            parked,
        ];
        jittered(&mut wp, &mut rng);
        let (xs, ys) = piecewise_linear(&wp, &[0.0, 0.45, dock, 1.0], l);
        push(xs, ys, 1, &mut signals, &mut labels);

        // anomalies alternate between the two families
        if i % 2 == 0 {
            // dip toward the island, then dock like a normal vessel:
            // end state looks normal, only the low-y excursion differs
            let dock = rng.range(0.75, 0.95);
            let p = port(&mut rng);
            let parked = (p.0 + rng.range(-0.5, 0.5), p.1 + rng.range(-0.5, 0.5));
            let mut wp = [
                sea(&mut rng),
                (
                    rng.range(ISLAND_X.0 + 1.0, ISLAND_X.1 - 1.0),
                    rng.range(ISLAND_Y.0 + 1.0, ISLAND_Y.1 - 1.0),
                ),
                p,
                parked,
            ];
            jittered(&mut wp, &mut rng);
            let (xs, ys) = piecewise_linear(&wp, &[0.0, 0.45, dock, 1.0], l);
            push(xs, ys, -1, &mut signals, &mut labels);
        } else {
            // clean route that turns back to open sea; x stays on the far
            // side of the harbor threshold the whole time
            let turn = rng.range(0.35, 0.6);
            let mut wp = [
                sea(&mut rng),
                (rng.range(32.0, 40.0), rng.range(26.0, 32.0)),
                (rng.range(52.0, 58.0), rng.range(30.0, 36.0)),
            ];
            jittered(&mut wp, &mut rng);
            let (xs, ys) = piecewise_linear(&wp, &[0.0, turn, 1.0], l);
            push(xs, ys, -1, &mut signals, &mut labels);
        }
    }
    Ok(LabeledDataset::new(signals, labels).expect("generator output is well formed"))
}

/// Reach-avoid geometry: start at the origin, obstacle box B, target box C.
pub mod reach_avoid_geometry {
    pub const OBSTACLE_X: (f64, f64) = (3.0, 6.0);
    pub const OBSTACLE_Y: (f64, f64) = (3.0, 5.0);
    pub const TARGET_X: (f64, f64) = (8.0, 11.0);
    pub const TARGET_Y: (f64, f64) = (8.0, 10.5);
    /// Positives must sit inside the target during the last this-many steps.
    pub const FINAL_WINDOW: usize = 5;
}

fn unicycle_rollout(rng: &mut Rng, l: usize, heading_bias: f64) -> (Vec<f64>, Vec<f64>) {
    // piecewise-constant speed and turn rate, integrated forward
    let mut x = 0.0;
    let mut y = 0.0;
    let mut theta = rng.range(0.2, 1.4);
    let mut xs = Vec::with_capacity(l);
    let mut ys = Vec::with_capacity(l);
    let seg = 10;
    let mut v = 0.0;
    let mut omega = 0.0;
    for t in 0..l {
        if t % seg == 0 {
            v = rng.range(0.12, 0.36);
            omega = rng.range(-0.12, 0.12) + heading_bias * (0.785 - theta) * 0.2;
        }
        xs.push(x);
        ys.push(y);
        x += v * theta.cos();
        y += v * theta.sin();
        theta += omega;
    }
    (xs, ys)
}

fn in_box(x: f64, y: f64, bx: (f64, f64), by: (f64, f64)) -> bool {
    x > bx.0 && x < bx.1 && y > by.0 && y < by.1
}

pub fn gen_reach_avoid(spec: &GeneratorSpec) -> Result<LabeledDataset, DataError> {
    use reach_avoid_geometry::*;
    let l = spec.len;
    if l < FINAL_WINDOW + 10 {
        return Err(DataError::TooShort {
            scenario: "reach-avoid",
            need: FINAL_WINDOW + 10,
            got: l,
        });
    }
    let budget = 200_000 + 4_000 * spec.per_class;
    let mut rng = Rng::seed_from(spec.seed);
    let mut positives = Vec::new();
    let mut collide = Vec::new();
    let mut miss = Vec::new();
    let mut attempts = 0usize;
    let want_neg_each = spec.per_class.div_ceil(2);
    while positives.len() < spec.per_class
        || collide.len() < want_neg_each
        || miss.len() < spec.per_class - want_neg_each
    {
        attempts += 1;
        if attempts > budget {
            return Err(DataError::RetryBudget { budget });
        }
        let (xs, ys) = unicycle_rollout(&mut rng, l, 1.0);
        let hits_obstacle = xs
            .iter()
            .zip(&ys)
            .any(|(&x, &y)| in_box(x, y, OBSTACLE_X, OBSTACLE_Y));
        let reaches = xs[l - FINAL_WINDOW..]
            .iter()
            .zip(&ys[l - FINAL_WINDOW..])
            .any(|(&x, &y)| in_box(x, y, TARGET_X, TARGET_Y));
        if reaches && !hits_obstacle && positives.len() < spec.per_class {
            positives.push((xs, ys));
        } else if reaches && hits_obstacle && collide.len() < want_neg_each {
            collide.push((xs, ys));
        } else if !reaches && !hits_obstacle && miss.len() < spec.per_class - want_neg_each {
            miss.push((xs, ys));
        }
    }
    let mut signals = Vec::with_capacity(2 * spec.per_class);
    let mut labels = Vec::with_capacity(2 * spec.per_class);
    for (xs, ys) in positives {
        let mut data = xs;
        data.extend(ys);
        signals.push(Signal::new(2, l, data).expect("finite"));
        labels.push(1);
    }
    for (xs, ys) in collide.into_iter().chain(miss) {
        let mut data = xs;
        data.extend(ys);
        signals.push(Signal::new(2, l, data).expect("finite"));
        labels.push(-1);
    }
    Ok(LabeledDataset::new(signals, labels).expect("generator output is well formed"))
}

/// Add i.i.d. zero-mean Gaussian noise to every sample; labels unchanged.
pub fn add_gaussian_noise(data: &LabeledDataset, sigma: f64, seed: u64) -> LabeledDataset {
    assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return data.clone();
    }
    let mut rng = Rng::seed_from(seed);
    let signals = data
        .signals
        .iter()
        .map(|s| {
            let noisy: Vec<f64> = s
                .raw()
                .iter()
                .map(|&v| v + rng.normal(0.0, sigma))
                .collect();
            Signal::new(s.d, s.l, noisy).expect("finite")
        })
        .collect();
    LabeledDataset::new(signals, data.labels.clone()).expect("labels preserved")
}

/// Serialize in the line-oriented format documented at module level.
pub fn dataset_to_string(data: &LabeledDataset, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "d={} l={} rng={} seed={}",
        data.d(),
        data.l(),
        RNG_ID,
        seed
    );
    for (s, &c) in data.signals.iter().zip(&data.labels) {
        let _ = write!(out, "{c}");
        for v in s.raw() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(
    data: &LabeledDataset,
    seed: u64,
    path: &std::path::Path,
) -> Result<(), DataError> {
    std::fs::write(path, dataset_to_string(data, seed))?;
    Ok(())
}

pub fn dataset_from_string(text: &str) -> Result<LabeledDataset, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Malformed {
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut d = None;
    let mut l = None;
    for kv in header.split_whitespace() {
        match kv.split_once('=') {
            Some(("d", v)) => {
                d = Some(v.parse::<usize>().map_err(|_| DataError::Malformed {
                    line: 1,
                    msg: format!("bad d '{v}'"),
                })?)
            }
            Some(("l", v)) => {
                l = Some(v.parse::<usize>().map_err(|_| DataError::Malformed {
                    line: 1,
                    msg: format!("bad l '{v}'"),
                })?)
            }
            Some(("rng", _)) | Some(("seed", _)) => {}
            _ => {
                return Err(DataError::Malformed {
                    line: 1,
                    msg: format!("unexpected header field '{kv}'"),
                })
            }
        }
    }
    let d = d.ok_or(DataError::Malformed {
        line: 1,
        msg: "missing d".into(),
    })?;
    let l = l.ok_or(DataError::Malformed {
        line: 1,
        msg: "missing l".into(),
    })?;
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label_txt = parts.next().unwrap();
        let label: i8 = label_txt.parse().map_err(|_| DataError::Malformed {
            line: ln + 1,
            msg: format!("bad label '{label_txt}'"),
        })?;
        if label != 1 && label != -1 {
            return Err(DataError::Malformed {
                line: ln + 1,
                msg: format!("label must be 1 or -1, got {label}"),
            });
        }
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| DataError::Malformed {
                    line: ln + 1,
                    msg: format!("bad number '{p}'"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != d * l {
            return Err(DataError::Malformed {
                line: ln + 1,
                msg: format!("expected {} values, got {}", d * l, values.len()),
            });
        }
        signals.push(Signal::new(d, l, values).map_err(|_| DataError::Malformed {
            line: ln + 1,
            msg: "non-finite value".into(),
        })?);
        labels.push(label);
    }
    Ok(LabeledDataset::new(signals, labels).expect("validated above"))
}

pub fn load_dataset(path: &std::path::Path) -> Result<LabeledDataset, DataError> {
    dataset_from_string(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{self, parse_formula};

    #[test]
    fn periodic_positive_crosses_zero_often() {
        let spec = GeneratorSpec::new(Scenario::Periodic, 50, 60, 42);
        let data = gen_periodic(&spec).unwrap();
        assert_eq!(data.len(), 100);
        for (s, &c) in data.signals.iter().zip(&data.labels) {
            let crossings = s
                .raw()
                .windows(2)
                .filter(|w| (w[0] > 0.0) != (w[1] > 0.0))
                .count();
            // Period-20 over 59 intervals crosses every 10 steps: 5 or 6
            // times depending on phase; period-40 crosses 2 or 3 times.
            if c == 1 {
                assert!(
                    crossings >= 5,
                    "period-20 signal crosses often, got {crossings}"
                );
            } else {
                assert!(crossings <= 4, "period-40 crosses rarely, got {crossings}");
            }
        }
    }

    #[test]
    fn periodic_too_short_is_rejected() {
        let spec = GeneratorSpec::new(Scenario::Periodic, 2, 39, 0);
        assert!(matches!(
            gen_periodic(&spec),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn periodic_witness_formula_separates() {
        let spec = GeneratorSpec::new(Scenario::Periodic, 100, 60, 7);
        let data = gen_periodic(&spec).unwrap();
        let witness = parse_formula("always[0,47] eventually[0,11] (x < -0.05)").unwrap();
        assert_eq!(stl::mcr(&data, &witness).unwrap(), 0.0);
    }

    #[test]
    fn naval_postconditions_hold() {
        use naval_geometry::*;
        let spec = GeneratorSpec::new(Scenario::Naval, 100, 60, 11);
        let data = gen_naval(&spec).unwrap();
        for (s, &c) in data.signals.iter().zip(&data.labels) {
            let (x_end, y_min) = (
                s.value(0, s.l - 1),
                (0..s.l)
                    .map(|t| s.value(1, t))
                    .fold(f64::INFINITY, f64::min),
            );
            let x_min = (0..s.l)
                .map(|t| s.value(0, t))
                .fold(f64::INFINITY, f64::min);
            if c == 1 {
                assert!(
                    x_end > PORT_X.0 - 2.0 && x_end < PORT_X.1 + 2.0,
                    "positive endpoint x {x_end} inside port"
                );
                assert!(y_min > Y_ISLAND_THRESHOLD, "positive stays clear of island");
                assert!(x_min < X_PORT_THRESHOLD, "positive reaches harbor side");
            } else {
                let violates_port = x_min >= X_PORT_THRESHOLD;
                let violates_island = y_min <= Y_ISLAND_THRESHOLD;
                assert!(
                    violates_port || violates_island,
                    "negative violates a clause"
                );
                // each family violates exactly one clause, so neither atom
                // separates alone
                assert!(!(violates_port && violates_island));
            }
        }
        // both families are present
        let dippers = data
            .signals
            .iter()
            .zip(&data.labels)
            .filter(|(s, &c)| {
                c == -1
                    && (0..s.l)
                        .map(|t| s.value(1, t))
                        .fold(f64::INFINITY, f64::min)
                        <= 20.0
            })
            .count();
        assert_eq!(dippers, 50);
    }

    #[test]
    fn naval_witness_formula_separates() {
        let spec = GeneratorSpec::new(Scenario::Naval, 150, 60, 13);
        let data = gen_naval(&spec).unwrap();
        let witness = parse_formula("eventually[0,59] (x < 25) and always[0,59] (y > 20)").unwrap();
        assert_eq!(stl::mcr(&data, &witness).unwrap(), 0.0);
    }

    #[test]
    fn reach_avoid_families_and_witness() {
        use reach_avoid_geometry::*;
        let spec = GeneratorSpec::new(Scenario::ReachAvoid, 30, 50, 5);
        let data = gen_reach_avoid(&spec).unwrap();
        assert_eq!(data.len(), 60);
        assert_eq!(
            data.labels.iter().filter(|&&c| c == 1).count(),
            30,
            "balanced"
        );
        for (s, &c) in data.signals.iter().zip(&data.labels) {
            let hits =
                (0..s.l).any(|t| in_box(s.value(0, t), s.value(1, t), OBSTACLE_X, OBSTACLE_Y));
            let reaches = (s.l - FINAL_WINDOW..s.l)
                .any(|t| in_box(s.value(0, t), s.value(1, t), TARGET_X, TARGET_Y));
            if c == 1 {
                assert!(reaches && !hits);
            } else {
                assert!(!reaches || hits);
            }
        }
        let witness = parse_formula(
            "eventually[45,49] ((x > 8) and (x < 11) and (y > 8) and (y < 10.5)) \
             and always[0,49] ((x < 3) or (x > 6) or (y < 3) or (y > 5))",
        )
        .unwrap();
        assert_eq!(stl::mcr(&data, &witness).unwrap(), 0.0);
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for scenario in [Scenario::Periodic, Scenario::Naval, Scenario::ReachAvoid] {
            let len = if scenario == Scenario::Periodic {
                60
            } else {
                50
            };
            let spec = GeneratorSpec::new(scenario, 5, len, 99);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b, "{scenario:?}");
            assert_eq!(dataset_to_string(&a, 99), dataset_to_string(&b, 99));
        }
    }

    #[test]
    fn noise_is_calibrated_and_zero_sigma_is_identity() {
        let spec = GeneratorSpec::new(Scenario::Periodic, 50, 60, 3);
        let clean = gen_periodic(&spec).unwrap();
        assert_eq!(add_gaussian_noise(&clean, 0.0, 1), clean);
        let sigma = 0.7;
        let noisy = add_gaussian_noise(&clean, sigma, 1);
        assert_eq!(noisy.labels, clean.labels);
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for (a, b) in noisy.signals.iter().zip(&clean.signals) {
            for (x, y) in a.raw().iter().zip(b.raw()) {
                sum_sq += (x - y) * (x - y);
                n += 1;
            }
        }
        let var = sum_sq / n as f64;
        assert!(
            (var - sigma * sigma).abs() < 0.1 * sigma * sigma,
            "sample variance {var} vs {}",
            sigma * sigma
        );
        // determinism of the noise stream
        assert_eq!(add_gaussian_noise(&clean, sigma, 1), noisy);
    }

    #[test]
    fn dataset_files_round_trip() {
        let spec = GeneratorSpec::new(Scenario::Naval, 10, 20, 17);
        let data = gen_naval(&spec).unwrap();
        let text = dataset_to_string(&data, 17);
        let loaded = dataset_from_string(&text).unwrap();
        assert_eq!(loaded, data);
        assert!(text.starts_with("d=2 l=20 rng=chacha8 seed=17\n"));
    }

    #[test]
    fn malformed_files_report_line_numbers() {
        let err = dataset_from_string("d=1 l=2 rng=chacha8 seed=0\n1,0.5\n").unwrap_err();
        match err {
            DataError::Malformed { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("expected 2 values"), "{msg}");
            }
            other => panic!("unexpected: {other:?}"),
        }
        let err = dataset_from_string("d=1 l=1 rng=chacha8 seed=0\n2,0.5\n").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
        let err = dataset_from_string("l=1 rng=chacha8 seed=0\n").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
    }

    #[test]
    fn large_dataset_loads_quickly() {
        let spec = GeneratorSpec::new(Scenario::Periodic, 1000, 60, 23);
        let data = gen_periodic(&spec).unwrap(); // 2000 x 60
        let text = dataset_to_string(&data, 23);
        let start = std::time::Instant::now();
        let loaded = dataset_from_string(&text).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(loaded.len(), 2000);
        assert!(elapsed.as_secs_f64() < 1.0, "load took {elapsed:?}");
    }
}
