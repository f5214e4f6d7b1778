//! Fixed numeric formatting for every written artifact: 6 significant
//! digits, `.` decimal separator, shortest representation of the rounded
//! value. Output never depends on locale.

use serde::Serialize;
use serde_json::Value;

use crate::error::{validation, Result};

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Round to 6 significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    s.parse().unwrap_or(x)
}

/// Text form of [`round_sig`]; `NaN` and infinities are written as `NA`.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return "NA".to_string();
    }
    let r = round_sig(x);
    if r == 0.0 {
        // collapse -0
        return "0".to_string();
    }
    format!("{r}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(f) = n.as_f64() {
                    let r = round_sig(f);
                    let r = if r == 0.0 { 0.0 } else { r };
                    if let Some(num) = serde_json::Number::from_f64(r) {
                        *n = num;
                    }
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 6 significant digits and a
/// trailing newline. Non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| validation(format!("cannot serialize output: {e}")))?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)
        .map_err(|e| validation(format!("cannot serialize output: {e}")))?;
    s.push('\n');
    Ok(s)
}
