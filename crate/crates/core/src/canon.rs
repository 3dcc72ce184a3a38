//! Canonical JSON text and seeded randomness.
//!
//! Canonical text is compact JSON with object keys in construction order
//! (callers build objects field by field), integral numbers written without a
//! fractional part and every other number in shortest round-trip form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Number, Value as Json};
use sha2::{Digest, Sha256};

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

/// JSON number for a finite `f64`; integral values become integers.
pub fn number(x: f64) -> Json {
    let x = if x == 0.0 { 0.0 } else { x };
    if x.fract() == 0.0 && x.abs() < MAX_EXACT_INT {
        Json::Number(Number::from(x as i64))
    } else {
        Number::from_f64(x).map(Json::Number).unwrap_or(Json::Null)
    }
}

pub fn format_number(x: f64) -> String {
    number(x).to_string()
}

/// Compact serialization; key order is whatever the map was built with.
pub fn to_string(value: &Json) -> String {
    serde_json::to_string(value).expect("serializing a JSON value cannot fail")
}

/// Small builder that keeps insertion order.
#[derive(Default)]
pub struct Obj(Map<String, Json>);

impl Obj {
    pub fn new() -> Self {
        Obj(Map::new())
    }

    pub fn field(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn build(self) -> Json {
        Json::Object(self.0)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Derives an independent RNG stream from a domain tag and labelled parts.
pub fn rng_for(tag: &str, parts: &[&str], seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for p in parts {
        h.update([0u8]);
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Like [`rng_for`] but yields a plain `u64` seed.
pub fn derive_seed(tag: &str, parts: &[&str], seed: u64) -> u64 {
    use rand::RngCore;
    rng_for(tag, parts, seed).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn integral_numbers_have_no_fraction() {
        assert_eq!(format_number(70.0), "70");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(63.25), "63.25");
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(format_number(1e300), "1e+300");
    }

    #[test]
    fn keys_keep_insertion_order() {
        let v = Obj::new().field("z", 1).field("a", 2).build();
        assert_eq!(to_string(&v), r#"{"z":1,"a":2}"#);
    }

    #[test]
    fn rng_streams_are_stable_and_separated() {
        let a: u64 = rng_for("t", &["x"], 7).random();
        let b: u64 = rng_for("t", &["x"], 7).random();
        let c: u64 = rng_for("t", &["x"], 8).random();
        let d: u64 = rng_for("t", &["x", ""], 7).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
