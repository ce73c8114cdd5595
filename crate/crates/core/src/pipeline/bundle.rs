//! Report bundle: a directory of CSV / JSON files plus `manifest.json`, checked against a
//! fixed schema.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Csv,
    Json,
    Jsonl,
}

/// One bundle file: its kind, CSV columns or required JSON keys, and whether every bundle has it.
pub struct FileSchema {
    pub name: &'static str,
    pub kind: FileKind,
    pub fields: &'static [&'static str],
    pub required: bool,
}

pub const SCHEMA: &[FileSchema] = &[
    FileSchema {
        name: "summary.json",
        kind: FileKind::Json,
        fields: &["events", "crosslinks", "mobilizations", "negative_mobilizations", "conflicts", "conflict_rule", "baseline", "sentiment_mode"],
        required: true,
    },
    FileSchema {
        name: "ingest.json",
        kind: FileKind::Json,
        fields: &["lines", "posts", "comments", "rejected", "duplicates", "orphaned"],
        required: true,
    },
    FileSchema {
        name: "crosslinks.csv",
        kind: FileKind::Csv,
        fields: &["source_post", "target_post", "source_community", "target_community", "t0", "author"],
        required: true,
    },
    FileSchema {
        name: "baseline.json",
        kind: FileKind::Json,
        fields: &["value", "statistic", "eligible_pairs", "candidate_pairs", "target_mean_ratio", "default_used"],
        required: true,
    },
    FileSchema {
        name: "mobilizations.csv",
        kind: FileKind::Csv,
        fields: &[
            "crosslink", "source_community", "target_community", "t0", "before", "after", "ratio", "baseline",
            "verdict", "matched_post", "matched_before", "matched_after", "attackers", "defenders", "sentiment",
        ],
        required: true,
    },
    FileSchema {
        name: "sentiment.csv",
        kind: FileKind::Csv,
        fields: &["crosslink", "label", "p_negative", "source"],
        required: true,
    },
    FileSchema {
        name: "replynet.csv",
        kind: FileKind::Csv,
        fields: &[
            "crosslink", "nodes", "attackers", "defenders", "attacker_to_attacker", "attacker_to_defender",
            "defender_to_defender", "defender_to_attacker", "attacker_echo_ratio", "defender_echo_ratio",
            "attacker_cross_fraction", "defender_cross_fraction", "defender_zero_apr_fraction",
            "defender_high_apr_fraction", "mean_defender_apr", "mean_attacker_dpr", "defender_anger_rate",
        ],
        required: true,
    },
    FileSchema {
        name: "impact.csv",
        kind: FileKind::Csv,
        fields: &["crosslink", "user", "role", "delta", "low_support", "matched_user", "matched_delta"],
        required: true,
    },
    FileSchema {
        name: "defense.csv",
        kind: FileKind::Csv,
        fields: &["crosslink", "success_score", "decile"],
        required: true,
    },
    FileSchema {
        name: "series.csv",
        kind: FileKind::Csv,
        fields: &["metric", "bucket", "x", "y", "smoothed"],
        required: true,
    },
    FileSchema {
        name: "tests.json",
        kind: FileKind::Json,
        fields: &["tests", "correlations"],
        required: true,
    },
    FileSchema {
        name: "alerts.jsonl",
        kind: FileKind::Jsonl,
        fields: &["crosslink", "source_community", "target_community", "t0", "ratio", "baseline", "sentiment", "attackers", "defenders"],
        required: true,
    },
    FileSchema {
        name: "embed.json",
        kind: FileKind::Json,
        fields: &["users", "communities", "dim", "epochs", "final_loss"],
        required: false,
    },
    FileSchema {
        name: "predict.json",
        kind: FileKind::Json,
        fields: &["status"],
        required: false,
    },
];

pub fn schema_for(name: &str) -> Option<&'static FileSchema> {
    SCHEMA.iter().find(|s| s.name == name)
}

/// The schema as JSON, for publishing alongside the tool.
pub fn schema_json() -> serde_json::Value {
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "manifest": MANIFEST,
        "files": SCHEMA.iter().map(|s| serde_json::json!({
            "name": s.name,
            "kind": s.kind,
            "fields": s.fields,
            "required": s.required,
        })).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub kind: FileKind,
    /// Data rows (CSV without header, JSONL lines) or 1 for JSON.
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub seed: u64,
    pub corpus_sha256: String,
    pub config_sha256: String,
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub stages: Vec<String>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes bundle files and remembers their digests for the manifest.
pub struct BundleWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

impl BundleWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        // stale files from an earlier run would otherwise linger next to the new manifest
        for s in SCHEMA {
            let p = dir.join(s.name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let m = dir.join(MANIFEST);
        if m.exists() {
            fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
        }
        Ok(BundleWriter { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, kind: FileKind, rows: usize, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_owned(),
            kind,
            rows,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, rows: &[Vec<String>]) -> Result<()> {
        let schema = schema_for(name).ok_or_else(|| Error::Format(format!("{name} is not a bundle file")))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(schema.fields).map_err(fmt_err)?;
        for r in rows {
            if r.len() != schema.fields.len() {
                return Err(Error::Format(format!("{name}: row has {} fields, expected {}", r.len(), schema.fields.len())));
            }
            w.write_record(r).map_err(fmt_err)?;
        }
        let bytes = w.into_inner().map_err(fmt_err)?;
        self.put(name, FileKind::Csv, rows.len(), bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(fmt_err)?;
        bytes.push(b'\n');
        self.put(name, FileKind::Json, 1, bytes)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<()> {
        let mut bytes = Vec::new();
        for v in values {
            serde_json::to_writer(&mut bytes, v).map_err(fmt_err)?;
            bytes.push(b'\n');
        }
        self.put(name, FileKind::Jsonl, values.len(), bytes)
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.files = self.files;
        manifest.files.sort_by(|a, b| a.name.cmp(&b.name));
        let path = self.dir.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(fmt_err)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Check a bundle directory against the schema: required files present, digests match,
/// CSV headers and row widths, JSON keys.
pub fn validate_bundle(dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let bad = |m: String| Err(Error::Format(m));
    if manifest.schema_version != SCHEMA_VERSION {
        return bad(format!("schema version {} != {SCHEMA_VERSION}", manifest.schema_version));
    }
    if manifest.complete {
        for s in SCHEMA.iter().filter(|s| s.required) {
            if !manifest.files.iter().any(|f| f.name == s.name) {
                return bad(format!("required file {} missing from manifest", s.name));
            }
        }
    }
    for entry in &manifest.files {
        let schema = match schema_for(&entry.name) {
            Some(s) => s,
            None => return bad(format!("{} is not a bundle file", entry.name)),
        };
        if schema.kind != entry.kind {
            return bad(format!("{}: kind mismatch", entry.name));
        }
        let path = dir.join(&entry.name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return bad(format!("{}: digest mismatch", entry.name));
        }
        let has_keys = |v: &serde_json::Value, what: &str| -> Result<()> {
            let obj = v.as_object().ok_or_else(|| Error::Format(format!("{what}: not an object")))?;
            for k in schema.fields {
                if !obj.contains_key(*k) {
                    return Err(Error::Format(format!("{what}: missing key {k}")));
                }
            }
            Ok(())
        };
        let rows = match schema.kind {
            FileKind::Csv => {
                let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
                let header = r.headers().map_err(fmt_err)?.clone();
                if header.iter().ne(schema.fields.iter().copied()) {
                    return bad(format!("{}: header does not match schema", entry.name));
                }
                let mut n = 0;
                for rec in r.records() {
                    let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", entry.name)))?;
                    if rec.len() != schema.fields.len() {
                        return bad(format!("{}: ragged row", entry.name));
                    }
                    n += 1;
                }
                n
            }
            FileKind::Json => {
                let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", entry.name)))?;
                has_keys(&v, &entry.name)?;
                1
            }
            FileKind::Jsonl => {
                let text = std::str::from_utf8(&bytes).map_err(fmt_err)?;
                let mut n = 0;
                for line in text.lines() {
                    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Format(format!("{}: {e}", entry.name)))?;
                    has_keys(&v, &entry.name)?;
                    n += 1;
                }
                n
            }
        };
        if rows != entry.rows {
            return bad(format!("{}: {rows} rows, manifest says {}", entry.name, entry.rows));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            format: "intercom-report".into(),
            schema_version: SCHEMA_VERSION,
            seed: 0,
            corpus_sha256: String::new(),
            config_sha256: String::new(),
            complete: false,
            failed_stage: None,
            stages: vec![],
            files: vec![],
        }
    }

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = BundleWriter::create(dir.path()).unwrap();
        w.csv("defense.csv", &[vec!["p1".into(), "0.5".into(), "3".into()]]).unwrap();
        w.json("tests.json", &serde_json::json!({"tests": [], "correlations": []})).unwrap();
        assert!(w.csv("defense.csv", &[vec!["short".into()]]).is_err());
        w.finish(manifest()).unwrap();
        let m = validate_bundle(dir.path()).unwrap();
        assert_eq!(m.files.len(), 2);
        fs::write(dir.path().join("defense.csv"), "crosslink,success_score,decile\np1,0.6,3\n").unwrap();
        assert!(validate_bundle(dir.path()).is_err());
    }

    #[test]
    fn complete_bundle_requires_every_required_file() {
        let dir = tempfile::tempdir().unwrap();
        let w = BundleWriter::create(dir.path()).unwrap();
        w.finish(Manifest {
            complete: true,
            ..manifest()
        })
        .unwrap();
        assert!(validate_bundle(dir.path()).is_err());
    }

    #[test]
    fn missing_json_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = BundleWriter::create(dir.path()).unwrap();
        w.json("tests.json", &serde_json::json!({"tests": []})).unwrap();
        w.finish(manifest()).unwrap();
        assert!(validate_bundle(dir.path()).is_err());
    }
}
