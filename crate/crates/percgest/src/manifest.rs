//! JSON-lines dataset manifests and dataset loading.
//!
//! One entry per line:
//! `{"audio": .., "onset_sample": .., "gesture": "hit", "hand_part": .., "location": .., "dynamics": .., "split": ..}`.
//! `split` is optional. Audio paths are relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use percgest_core::data::{Dynamics, Example, ExclusionList, Gesture, HandPart, HitLabel, Location};
use percgest_core::dsp::{MultiChannelWindow, N_CHANNELS, WINDOW_LEN};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::wav;

const FIELDS: [&str; 7] = ["audio", "onset_sample", "gesture", "hand_part", "location", "dynamics", "split"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    audio: String,
    onset_sample: u64,
    gesture: String,
    hand_part: String,
    location: String,
    dynamics: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Unknown fields are errors.
    #[default]
    Strict,
    /// Unknown fields are logged and ignored.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// 1-based line number in the manifest file.
    pub line: usize,
    /// Path as written in the manifest.
    pub audio: String,
    pub onset_sample: u64,
    pub label: HitLabel,
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir().join(&entry.audio)
    }

    fn entry_err(&self, entry: &ManifestEntry, message: impl Into<String>) -> Error {
        Error::Manifest { path: self.path.clone(), line: entry.line, message: message.into() }
    }
}

fn parse_line(text: &str, strictness: Strictness, exclusions: &ExclusionList) -> std::result::Result<(Record, HitLabel), String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut map) = value else {
        return Err("entry is not a JSON object".into());
    };
    let unknown: Vec<String> = map.keys().filter(|k| !FIELDS.contains(&k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        match strictness {
            Strictness::Strict => return Err(format!("unknown field(s): {}", unknown.join(", "))),
            Strictness::Lenient => {
                log::warn!("ignoring unknown field(s): {}", unknown.join(", "));
                for k in &unknown {
                    map.remove(k);
                }
            }
        }
    }
    let rec: Record = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
    let gesture: Gesture = rec.gesture.parse().map_err(|e: percgest_core::Error| e.to_string())?;
    let hand: HandPart = rec.hand_part.parse().map_err(|e: percgest_core::Error| e.to_string())?;
    let loc: Location = rec.location.parse().map_err(|e: percgest_core::Error| e.to_string())?;
    let dyn_: Dynamics = rec.dynamics.parse().map_err(|e: percgest_core::Error| e.to_string())?;
    let label = HitLabel::new(gesture, hand, loc, dyn_).map_err(|e| e.to_string())?;
    exclusions.check(&label).map_err(|e| e.to_string())?;
    Ok((rec, label))
}

/// Parses a manifest; every error names the offending line.
pub fn read_manifest(path: &Path, strictness: Strictness, exclusions: &ExclusionList) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let (rec, label) = parse_line(&text, strictness, exclusions)
            .map_err(|message| Error::Manifest { path: path.to_path_buf(), line: line_no, message: format!("entry {line_no}: {message}") })?;
        entries.push(ManifestEntry { line: line_no, audio: rec.audio, onset_sample: rec.onset_sample, label, split: rec.split });
    }
    Ok(Manifest { path: path.to_path_buf(), entries })
}

/// Writes entries as canonical JSON lines.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        let rec = Record {
            audio: e.audio.clone(),
            onset_sample: e.onset_sample,
            gesture: e.label.gesture.as_str().into(),
            hand_part: e.label.hand_part.as_str().into(),
            location: e.label.location.as_str().into(),
            dynamics: e.label.dynamics.as_str().into(),
            split: e.split.clone(),
        };
        let v = serde_json::to_value(&rec)?;
        let map: Map<String, Value> = v.as_object().cloned().unwrap_or_default();
        serde_json::to_writer(&mut out, &map)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads one window per entry, in manifest order.
pub fn load_manifest_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    let mut audio: HashMap<PathBuf, Vec<f32>> = HashMap::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = manifest.resolve(entry);
        if !audio.contains_key(&path) {
            let frames = wav::read(&path).map_err(|e| manifest.entry_err(entry, format!("entry {}: {e}", entry.line)))?;
            audio.insert(path.clone(), frames);
        }
        let frames = &audio[&path];
        let n = (frames.len() / N_CHANNELS) as u64;
        let end = entry.onset_sample.checked_add(WINDOW_LEN as u64).unwrap_or(u64::MAX);
        if end > n {
            return Err(manifest.entry_err(
                entry,
                format!("entry {}: onset {} + {WINDOW_LEN} overruns {} ({n} frames)", entry.line, entry.onset_sample, entry.audio),
            ));
        }
        let s = entry.onset_sample as usize * N_CHANNELS;
        let window = MultiChannelWindow::from_interleaved(&frames[s..s + WINDOW_LEN * N_CHANNELS])?;
        out.push(Example { window, label: entry.label });
    }
    Ok(out)
}

/// Reads a manifest and loads its windows.
pub fn load_dataset(path: &Path, strictness: Strictness, exclusions: &ExclusionList) -> Result<Vec<Example>> {
    load_manifest_examples(&read_manifest(path, strictness, exclusions)?)
}
