//! Writes generated datasets to disk as wave files plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use percgest_core::data::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::manifest::{write_manifest, ManifestEntry};
use crate::wav;

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const CONFIG_NAME: &str = "synth_config.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
    pub hits: usize,
}

/// Generates `cfg` into `dir` (created if missing): one wave file per generated
/// recording, `manifest.jsonl`, and the generator config.
pub fn write_synth(cfg: &SynthConfig, dir: &Path) -> Result<SynthOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for f in synth_generate(cfg)? {
        let path = dir.join(&f.name);
        wav::write(&path, &f.frames)?;
        files.push(path);
        for &(onset, label) in &f.hits {
            entries.push(ManifestEntry { line: entries.len() + 1, audio: f.name.clone(), onset_sample: onset, label, split: None });
        }
    }
    let manifest = dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &entries)?;
    let cfg_path = dir.join(CONFIG_NAME);
    fs::write(&cfg_path, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(SynthOutput { manifest, files, hits: entries.len() })
}
