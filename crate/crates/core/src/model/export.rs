//! Human-readable, key-sorted JSON rendering for debugging and text files.
//!
//! Never the signed image: signatures always cover the canonical encoding.

use serde::Serialize;

/// Pretty JSON with object keys in ascending order.
pub fn to_sorted_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Value maps are BTreeMap-backed, so a round trip sorts keys.
    let v = serde_json::to_value(value).expect("model types always serialize");
    serde_json::to_string_pretty(&v).expect("json value always renders")
}
