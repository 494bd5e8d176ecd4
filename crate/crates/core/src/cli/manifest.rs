use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::error::{Error, Result};

/// Per-run provenance: effective config plus content hashes of every file
/// read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: String,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
}

/// `SOURCE_DATE_EPOCH` pins timestamps for reproducible manifests.
pub(crate) fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub(crate) fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

pub(crate) struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    started: String,
}

impl ManifestBuilder {
    pub(crate) fn start(command: &str, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            started: timestamp(),
        }
    }

    pub(crate) fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub(crate) fn finish(self, outputs: &[&Path], manifest_path: &Path) -> Result<RunManifest> {
        let hashes = |paths: &mut dyn Iterator<Item = &Path>| -> Result<BTreeMap<String, String>> {
            paths.map(|p| Ok((p.display().to_string(), hash_file(p)?))).collect()
        };
        let manifest = RunManifest {
            command: self.command,
            config_snapshot: to_canonical_string(&self.config).expect("config is JSON"),
            input_hashes: hashes(&mut self.inputs.iter().map(PathBuf::as_path))?,
            output_hashes: hashes(&mut outputs.iter().copied())?,
            started: self.started,
            finished: timestamp(),
        };
        let mut body = serde_json::to_string_pretty(&serde_json::to_value(&manifest).expect("manifest is JSON"))
            .expect("manifest is JSON");
        body.push('\n');
        std::fs::write(manifest_path, body).map_err(|e| Error::io(manifest_path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_are_rfc3339() {
        let t = timestamp();
        assert!(DateTime::parse_from_rfc3339(&t).is_ok(), "{t}");
    }

    #[test]
    fn manifest_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        std::fs::write(&input, "abc").unwrap();
        std::fs::write(&output, "").unwrap();
        let mut b = ManifestBuilder::start("generate", serde_json::json!({"b": 1, "a": 2}));
        b.input(&input);
        let m = b.finish(&[&output], &dir.path().join("m.json")).unwrap();
        assert_eq!(m.config_snapshot, r#"{"a":2,"b":1}"#);
        assert_eq!(
            m.input_hashes[&input.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
