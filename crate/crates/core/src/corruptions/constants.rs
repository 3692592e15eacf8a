//! Versioned severity ladders, parsed from a line-oriented text file.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::{CorruptionKind, Severity};

pub const CONSTANTS_TEXT: &str = include_str!("../../data/corruption_constants.txt");

#[derive(Debug, thiserror::Error)]
#[error("constants line {line}: {msg}")]
pub struct ConstantsError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constants {
    pub version: u32,
    values: BTreeMap<(CorruptionKind, String), [f64; 5]>,
}

impl Constants {
    pub fn parse(text: &str) -> Result<Self, ConstantsError> {
        let mut version = None;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| ConstantsError { line: i + 1, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "version" {
                let v = fields
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err("bad version".into()))?;
                version = Some(v);
                continue;
            }
            if fields.len() != 7 {
                return Err(err(format!("expected kind, parameter and 5 values, got {line:?}")));
            }
            let kind: CorruptionKind = fields[0].parse().map_err(|e| err(format!("{e}")))?;
            let mut ladder = [0.0; 5];
            for (slot, f) in ladder.iter_mut().zip(&fields[2..]) {
                *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
            }
            if values.insert((kind, fields[1].to_string()), ladder).is_some() {
                return Err(err(format!("duplicate {} {}", fields[0], fields[1])));
            }
        }
        let version = version.ok_or(ConstantsError {
            line: 0,
            msg: "missing version line".into(),
        })?;
        Ok(Self { version, values })
    }

    pub fn ladder(&self, kind: CorruptionKind, name: &str) -> Option<[f64; 5]> {
        self.values.get(&(kind, name.to_string())).copied()
    }

    pub fn get(&self, kind: CorruptionKind, name: &str, severity: Severity) -> f64 {
        self.ladder(kind, name)
            .unwrap_or_else(|| panic!("constants table has no {kind} {name}"))[severity.index()]
    }

    pub fn parameters(&self, kind: CorruptionKind) -> Vec<&str> {
        self.values
            .keys()
            .filter(|(k, _)| *k == kind)
            .map(|(_, n)| n.as_str())
            .collect()
    }
}

pub fn builtin() -> &'static Constants {
    static TABLE: OnceLock<Constants> = OnceLock::new();
    TABLE.get_or_init(|| Constants::parse(CONSTANTS_TEXT).expect("built-in constants parse"))
}

/// Version tag recorded in benchmark manifests.
pub fn version_tag() -> String {
    format!("corruption-constants-v{}", builtin().version)
}
