//! Run manifests: what was run, with which inputs, producing which bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::{Failure, Res};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, `--jobs` removed; `replay` reruns them.
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Option<serde_json::Value>,
    pub config_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Res<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Failure::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(Failure::io(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// Digest of a file, or of a directory as the sorted `(relative path, digest)` list.
pub fn digest_path(path: &Path) -> Res<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        files_under(path, path, &mut files)?;
        let mut listing = String::new();
        for f in files {
            let bytes = fs::read(path.join(&f)).map_err(Failure::io(&path.join(&f)))?;
            listing.push_str(&format!("{}\t{}\n", f.display(), sha256_hex(&bytes)));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        Ok(sha256_hex(&fs::read(path).map_err(Failure::io(path))?))
    }
}

/// Collects inputs and outputs for one run, then writes the manifest.
pub struct Recorder {
    manifest: Manifest,
}

impl Recorder {
    pub fn new(command: &str, argv: Vec<String>, seed: u64) -> Self {
        Self {
            manifest: Manifest {
                tool: "signforge".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv,
                seed,
                config: None,
                config_sha256: None,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        let value = serde_json::to_value(config).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        self.manifest.config_sha256 = Some(sha256_hex(canonical.as_bytes()));
        self.manifest.config = Some(value);
    }

    pub fn input(&mut self, path: &Path) -> Res<()> {
        let digest = digest_path(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Res<()> {
        let digest = digest_path(path)?;
        self.manifest.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write_in(self, dir: &Path) -> Res<PathBuf> {
        self.write_to(&dir.join(MANIFEST))
    }

    /// Writes the manifest beside a single output file as `<file>.manifest.json`.
    pub fn write_beside(self, file: &Path) -> Res<PathBuf> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        self.write_to(&file.with_file_name(name))
    }

    fn write_to(self, path: &Path) -> Res<PathBuf> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(Failure::io(path))?;
        Ok(path.to_path_buf())
    }
}

pub fn load(path: &Path) -> Res<Manifest> {
    let text = fs::read_to_string(path).map_err(Failure::io(path))?;
    serde_json::from_str(&text).map_err(|e| Failure::module("manifest", format!("{}: {e}", path.display())))
}
