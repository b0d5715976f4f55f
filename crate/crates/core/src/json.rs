//! Canonical JSON: UTF-8, object keys sorted, two-space indent, trailing LF.

use serde::Serialize;

/// Serializes `value` in canonical form. Key order comes from converting to
/// a [`serde_json::Value`], whose maps are sorted.
pub fn canonical<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("in-memory values always serialize");
    let mut out = serde_json::to_string_pretty(&v).expect("values always serialize");
    out.push('\n');
    out
}
