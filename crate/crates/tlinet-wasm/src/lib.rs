//! Browser bindings for the interactive demo page.
//!
//! Three operations, each pure and synchronous: evaluate a formula's
//! robustness over a signal, compare the max approximations on a weighted
//! vector, and render the differentiable window weights. Results go back to
//! JavaScript as JSON strings; the page does the plotting.

use serde_json::json;
use tlinet::maxops;
use tlinet::stl::{self, Signal, VectorMode};
use wasm_bindgen::prelude::*;

fn err(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn parse_csv(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| err(format!("bad number '{p}'")))
        })
        .collect()
}

/// Parse a signal: one CSV row per dimension, rows separated by ';'.
fn parse_signal(text: &str) -> Result<Signal, String> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .filter(|r| !r.trim().is_empty())
        .map(parse_csv)
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(err("empty signal"));
    }
    let l = rows[0].len();
    if l == 0 || rows.iter().any(|r| r.len() != l) {
        return Err(err("all dimensions need the same number of samples"));
    }
    let d = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Signal::new(d, l, data).map_err(err)
}

fn monitor_impl(formula: &str, signal_text: &str) -> Result<String, String> {
    let phi = stl::parse_formula(formula).map_err(err)?;
    let signal = parse_signal(signal_text)?;
    if phi.dim() > signal.d {
        return Err(err(format!(
            "formula uses {} dimensions, signal has {}",
            phi.dim(),
            signal.d
        )));
    }
    let padded = stl::robustness_vector(&signal, &phi, VectorMode::Padded).map_err(err)?;
    let strict_len = signal.l.saturating_sub(phi.horizon());
    let out = json!({
        "formula": stl::format_formula(&phi),
        "l": signal.l,
        "horizon": phi.horizon(),
        "robustness": padded,
        "strict_len": strict_len,
        "satisfied": padded[0] > 0.0,
        "signal": (0..signal.d).map(|j| signal.row(j).to_vec()).collect::<Vec<_>>(),
    });
    Ok(out.to_string())
}

fn max_methods_impl(x_csv: &str, w_csv: &str, beta: f64, h: f64) -> Result<String, String> {
    let x = parse_csv(x_csv)?;
    let w = parse_csv(w_csv)?;
    if beta <= 0.0 || h <= 0.0 {
        return Err(err("beta and h must be positive"));
    }
    let hard = maxops::hard_max(&x, &w).map_err(err)?;
    let soft = maxops::softmax_approx(&x, &w, beta).map_err(err)?;
    let sparse = maxops::sparse_softmax(&x, &w, beta, h).map_err(err)?;
    let avg = maxops::averaged_max(&x, &w).map_err(err)?;
    let sound = maxops::soundness_condition(x.len(), beta, h);
    let h_sound = maxops::raise_h_until_sound(x.len(), beta, h);
    let out = json!({
        "n": x.len(),
        "hard": hard,
        "softmax": { "value": soft.value, "weights": soft.weights },
        "sparse": { "value": sparse.value, "weights": sparse.weights },
        "averaged": avg,
        "sound": sound,
        "h_sound": h_sound,
        "softmax_sign_ok": (soft.value > 0.0) == (hard > 0.0),
        "sparse_sign_ok": (sparse.value > 0.0) == (hard > 0.0),
    });
    Ok(out.to_string())
}

fn time_function_impl(t1: f64, t2: f64, eta: f64, len: usize) -> Result<Vec<f64>, String> {
    if eta <= 0.0 {
        return Err(err("eta must be positive"));
    }
    if len == 0 || len > 4096 {
        return Err(err("length out of range"));
    }
    Ok((0..len)
        .map(|t| {
            let t = t as f64;
            let left = (t - t1 + eta).max(0.0) - (t - t1).max(0.0);
            let right = (t2 - t + eta).max(0.0) - (t2 - t).max(0.0);
            left.min(right) / eta
        })
        .collect())
}

/// Robustness of `formula` on `signal_text` at every time step, under both
/// conventions: strict (only where the window fits) and padded (the network's
/// view). Also reports satisfaction at time 0.
#[wasm_bindgen]
pub fn monitor(formula: &str, signal_text: &str) -> Result<String, JsValue> {
    monitor_impl(formula, signal_text).map_err(|e| JsValue::from_str(&e))
}

/// Hard max, softmax, sparse softmax, and averaged max of `x` under weights
/// `w`, with the effective weight distributions and the soundness condition.
#[wasm_bindgen]
pub fn max_methods(x_csv: &str, w_csv: &str, beta: f64, h: f64) -> Result<String, JsValue> {
    max_methods_impl(x_csv, w_csv, beta, h).map_err(|e| JsValue::from_str(&e))
}

/// Window weights of the differentiable time function.
#[wasm_bindgen]
pub fn time_function(t1: f64, t2: f64, eta: f64, len: usize) -> Result<Vec<f64>, JsValue> {
    time_function_impl(t1, t2, eta, len).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_reports_robustness_vector() {
        let out = monitor_impl("eventually[1,4] (x > 1)", "2, 1.1, 0.9, 0, -1").unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["robustness"][0].as_f64().unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(v["satisfied"], serde_json::Value::Bool(true));
        assert_eq!(v["horizon"], 4);
    }

    #[test]
    fn max_methods_reports_all_four() {
        let out = max_methods_impl("1, 0.1, -0.1, -1, -2", "0, 1, 1, 1, 1", 1.0, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["hard"].as_f64().unwrap() - 0.1).abs() < 1e-12);
        assert!((v["softmax"]["value"].as_f64().unwrap() + 0.246).abs() < 1e-3);
        assert!((v["sparse"]["value"].as_f64().unwrap() - 0.076).abs() < 1e-3);
        assert_eq!(v["sparse_sign_ok"], serde_json::Value::Bool(true));
        assert_eq!(v["softmax_sign_ok"], serde_json::Value::Bool(false));
    }

    #[test]
    fn time_function_window() {
        let w = time_function_impl(4.0, 8.0, 0.5, 13).unwrap();
        assert_eq!(
            w,
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(monitor_impl("always[3,1] (x > 0)", "1,2,3").is_err());
        assert!(monitor_impl("(y > 0)", "1,2,3").is_err());
        assert!(max_methods_impl("1,2", "0,0", 1.0, 1.0).is_err());
        assert!(time_function_impl(0.0, 5.0, 0.0, 10).is_err());
    }
}
