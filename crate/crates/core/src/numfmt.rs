//! Fixed 17-significant-digit float formatting for the interchange files.

use serde_json::value::RawValue;

/// Scientific notation with 17 significant digits; parses back bit-exactly.
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

/// A JSON number token carrying [`f17`] formatting.
pub fn raw_f64(x: f64) -> Box<RawValue> {
    let s = if x.is_finite() { f17(x) } else { "null".to_string() };
    RawValue::from_string(s).expect("formatted float is a valid JSON token")
}
