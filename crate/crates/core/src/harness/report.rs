use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

/// Significant digits kept for floats in reports.
pub const REPORT_SIGNIFICANT_DIGITS: usize = 9;

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_floats(v: &mut Value, digits: usize) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or_default(), digits);
            if let Some(rounded) = serde_json::Number::from_f64(x) {
                *n = rounded;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| round_floats(i, digits)),
        Value::Object(map) => map.values_mut().for_each(|i| round_floats(i, digits)),
        _ => {}
    }
}

/// Pretty JSON with sorted keys. With `digits`, every float is rounded to
/// that many significant digits; without, floats keep their exact round-trip form.
pub fn canonical_json<T: Serialize>(value: &T, digits: Option<usize>) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let Some(d) = digits {
        round_floats(&mut v, d);
    }
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    Ok(text)
}
