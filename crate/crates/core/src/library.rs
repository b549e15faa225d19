//! Gate characterization tables.
//!
//! A library maps (gate kind, fan-in) to dynamic power, static power and
//! delay at the cell scale (uW, ns).  LUT entries resolve purely by input
//! count.  The bundled table is synthetic: internally consistent numbers in
//! the style of a 45nm cell datasheet, good enough for relative
//! experiments and pinned by hash in the test suite so results stay
//! reproducible.

use crate::graph::GateKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// Source text of the bundled library.
pub const BUNDLED_LIBRARY_JSON: &str = include_str!("../assets/gatelib.json");

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("invalid library JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("library `{library}` has no entry for {kind} with {arity} inputs")]
    MissingEntry {
        library: String,
        kind: &'static str,
        arity: usize,
    },
    #[error("library `{library}`: entry {kind}/{arity}: {msg}")]
    BadEntry {
        library: String,
        kind: String,
        arity: String,
        msg: String,
    },
}

/// Power and delay of one cell variant.  Field names mirror the JSON
/// keys, units and all.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub dyn_uW: f64,
    pub static_uW: f64,
    pub delay_ns: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateLibrary {
    pub name: String,
    #[serde(rename = "voltage_V")]
    pub voltage_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// kind -> arity (as decimal string, matching the JSON) -> entry.
    pub gates: BTreeMap<String, BTreeMap<String, CellEntry>>,
}

impl GateLibrary {
    pub fn from_json(text: &str) -> Result<GateLibrary, LibraryError> {
        let lib: GateLibrary = serde_json::from_str(text)?;
        for (kind, arities) in &lib.gates {
            for (arity, entry) in arities {
                if arity.parse::<usize>().is_err() {
                    return Err(LibraryError::BadEntry {
                        library: lib.name.clone(),
                        kind: kind.clone(),
                        arity: arity.clone(),
                        msg: "arity key must be a decimal integer".into(),
                    });
                }
                let ok = |v: f64| v.is_finite() && v >= 0.0;
                if !(ok(entry.dyn_uW) && ok(entry.static_uW) && ok(entry.delay_ns)) {
                    return Err(LibraryError::BadEntry {
                        library: lib.name.clone(),
                        kind: kind.clone(),
                        arity: arity.clone(),
                        msg: "powers and delay must be finite and non-negative".into(),
                    });
                }
            }
        }
        Ok(lib)
    }

    /// The library shipped with the crate.
    pub fn bundled() -> GateLibrary {
        GateLibrary::from_json(BUNDLED_LIBRARY_JSON)
            .expect("bundled library must parse")
    }

    /// SHA-256 of the serialized source this library was loaded from.
    pub fn content_hash(text: &str) -> String {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    }

    /// Looks up the entry for a kind/fan-in pair.
    pub fn resolve(&self, kind: GateKind, arity: usize) -> Result<CellEntry, LibraryError> {
        self.gates
            .get(kind.as_str())
            .and_then(|m| m.get(&arity.to_string()))
            .copied()
            .ok_or(LibraryError::MissingEntry {
                library: self.name.clone(),
                kind: kind.as_str(),
                arity,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_library_parses_and_resolves() {
        let lib = GateLibrary::bundled();
        let not = lib.resolve(GateKind::Not, 1).unwrap();
        assert_eq!(not.dyn_uW, 0.8);
        assert_eq!(not.delay_ns, 9.0);
        let lut3 = lib.resolve(GateKind::Lut, 3).unwrap();
        assert_eq!(lut3.delay_ns, 17.0);
    }

    #[test]
    fn missing_arity_reports_kind_and_arity() {
        let lib = GateLibrary::bundled();
        let e = lib.resolve(GateKind::Xor, 7).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("XOR") && msg.contains('7'), "{msg}");
    }

    #[test]
    fn hash_is_stable_for_identical_text() {
        let a = GateLibrary::content_hash(BUNDLED_LIBRARY_JSON);
        let b = GateLibrary::content_hash(BUNDLED_LIBRARY_JSON);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn malformed_entry_is_rejected() {
        let text = r#"{
            "name": "bad", "voltage_V": 1.0,
            "gates": {"NOT": {"1": {"dyn_uW": -1.0, "static_uW": 0.0, "delay_ns": 1.0}}}
        }"#;
        assert!(matches!(
            GateLibrary::from_json(text),
            Err(LibraryError::BadEntry { .. })
        ));
    }
}
