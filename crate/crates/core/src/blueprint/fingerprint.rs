use alloc::string::String;
use core::fmt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::canonical::write_value;
use super::Blueprint;

const DOMAIN: &str = "agentc/structure/v1\n";

/// SHA-256 digest of a blueprint's control structure.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        const HEX: &[u8; 16] = b"0123456789abcdef";
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push(HEX[(b >> 4) as usize] as char);
            s.push(HEX[(b & 0xf) as usize] as char);
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<Fingerprint> {
        let bytes = s.as_bytes();
        if bytes.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in bytes.chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Some(Fingerprint(out))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.to_hex())
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Fingerprint::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// Digest over step ids, kinds, nesting and every non-selector payload.
/// Selector strategy lists are blanked first, so two blueprints that differ
/// only in selector expressions share a fingerprint. `meta` is excluded.
pub fn structural_fingerprint(bp: &Blueprint) -> Fingerprint {
    let mut steps = serde_json::to_value(&bp.steps).expect("steps always serialize");
    blank_selectors(&mut steps);
    let mut text = String::from(DOMAIN);
    write_value(&steps, &mut text);
    let digest = Sha256::digest(text.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(digest.as_slice());
    Fingerprint(out)
}

fn blank_selectors(value: &mut Value) {
    match value {
        Value::Object(map) => {
            if map.contains_key("strategies") && map.contains_key("expected_cardinality") {
                map.insert("strategies".into(), Value::Array(alloc::vec::Vec::new()));
            }
            for (_, v) in map.iter_mut() {
                blank_selectors(v);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(blank_selectors),
        _ => {}
    }
}
