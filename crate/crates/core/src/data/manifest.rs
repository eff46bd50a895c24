//! JSON-lines corpus index.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::synth::{ForgeryMode, RegionSpec, TransformParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain-head class index.
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!("domain must be source or target, got {other:?}"))),
        }
    }
}

/// One corpus item. `path` (and `mask`) are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    /// 0 authentic, 1 forged, `None` unlabeled.
    pub label: Option<u8>,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ForgeryMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// Fields this crate does not know about, kept for round trips.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, label: Option<u8>, domain: Domain) -> Self {
        Self {
            path: path.into(),
            label,
            domain,
            mode: None,
            seed: None,
            region: None,
            transform: None,
            mask: None,
            extra: Map::new(),
        }
    }
}

/// Ordered list of entries with unique paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            validate_label(e.label).map_err(|msg| Error::Input(format!("entry {i}: {msg}")))?;
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Input(format!("entry {i}: duplicate path {:?}", e.path)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<u8>> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Sub-manifest with the given entries, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON lines; blank lines are skipped. `path` only labels errors.
    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: usize, msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(raw).map_err(|e| fail(line, format!("bad JSON: {e}")))?;
            let label = value.get("label").cloned().unwrap_or(Value::Null);
            if !label.is_null() && !matches!(label.as_u64(), Some(0 | 1)) {
                return Err(fail(line, format!("invalid label {label} (expected 0, 1 or null)")));
            }
            let entry: ManifestEntry =
                serde_json::from_value(value).map_err(|e| fail(line, format!("bad entry: {e}")))?;
            if !seen.insert(entry.path.clone()) {
                return Err(fail(line, format!("duplicate path {:?}", entry.path)));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

fn validate_label(label: Option<u8>) -> std::result::Result<(), String> {
    match label {
        None | Some(0 | 1) => Ok(()),
        Some(other) => Err(format!("invalid label {other}")),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_jsonl(&text, path)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(manifest.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Directory that entry paths are relative to.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        Manifest::from_jsonl(text, Path::new("m.jsonl"))
    }

    #[test]
    fn empty_text_is_empty_manifest() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_survive() {
        let line = r#"{"path":"a.ppm","label":1,"domain":"source","camera":"x100","zoom":2}"#;
        let m = parse(line).unwrap();
        assert_eq!(m.entries()[0].extra["camera"], "x100");
        let again = parse(&m.to_jsonl()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn errors_cite_line_numbers() {
        let text = "{\"path\":\"a\",\"label\":0,\"domain\":\"source\"}\n\
                    {\"path\":\"b\",\"label\":null,\"domain\":\"target\"}\n\
                    {not json\n";
        match parse(text).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }

        let dup = "{\"path\":\"a\",\"label\":0,\"domain\":\"source\"}\n{\"path\":\"a\",\"label\":1,\"domain\":\"source\"}";
        assert!(matches!(parse(dup).unwrap_err(), Error::Manifest { line: 2, .. }));

        let bad_label = "{\"path\":\"a\",\"label\":2,\"domain\":\"source\"}";
        assert!(matches!(parse(bad_label).unwrap_err(), Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn absent_label_is_unlabeled() {
        let m = parse(r#"{"path":"t.ppm","domain":"target"}"#).unwrap();
        assert_eq!(m.entries()[0].label, None);
    }

    #[test]
    fn constructor_rejects_duplicates() {
        let e = ManifestEntry::new("a", Some(0), Domain::Source);
        assert!(Manifest::new(vec![e.clone(), e]).is_err());
    }
}
