//! Evaluation reports (JSON, schema version 1) and embedding point files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use percgest_core::data::Example;
use percgest_core::eval::{ConfusionMatrix, EmbeddingSet, KlMatrix, Metrics};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const POINTS_HEADER: &str = "x,y,hand_part,location,dynamics";

/// Fraction as a percentage rounded to two decimals.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub support: u64,
}

/// Metrics of one head; every rate is a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub per_class: Vec<ClassRow>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Only recall is meaningful: a single class has support.
    pub recall_only: bool,
    pub confusion: Vec<Vec<u64>>,
}

impl HeadReport {
    pub fn new(cm: &ConfusionMatrix) -> Self {
        let m: Metrics = percgest_core::eval::metrics(cm);
        Self {
            per_class: m
                .per_class
                .iter()
                .map(|c| ClassRow {
                    label: c.label.clone(),
                    precision: percent(c.precision),
                    recall: percent(c.recall),
                    f_measure: percent(c.f_measure),
                    support: c.support,
                })
                .collect(),
            weighted_precision: percent(m.weighted_precision),
            weighted_recall: percent(m.weighted_recall),
            weighted_f: percent(m.weighted_f),
            accuracy: percent(m.accuracy),
            total: m.total,
            recall_only: m.recall_only,
            confusion: cm.rows().map(<[u64]>::to_vec).collect(),
        }
    }

    /// Table rows: label, F (or recall when recall-only), support.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let col = if self.recall_only { "Recall" } else { "F" };
        let _ = writeln!(s, "{:<12} {:>8} {:>8}", "Class", col, "Support");
        for r in &self.per_class {
            let v = if self.recall_only { r.recall } else { r.f_measure };
            let _ = writeln!(s, "{:<12} {:>8.2} {:>8}", r.label, v, r.support);
        }
        let w = if self.recall_only { self.weighted_recall } else { self.weighted_f };
        let _ = writeln!(s, "{:<12} {:>8.2} {:>8}", "W/Avg", w, self.total);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub classes: HeadReport,
    pub locations: Option<HeadReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlSection {
    pub facet: String,
    /// Label predicate applied before fitting, if any.
    pub subset: Option<String>,
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    pub missing: Vec<String>,
    pub matrix: Vec<Vec<Option<f64>>>,
}

impl KlSection {
    pub fn new(m: &KlMatrix, subset: Option<&str>) -> Self {
        Self {
            facet: m.facet.as_str().to_string(),
            subset: subset.map(str::to_string),
            labels: m.labels.clone(),
            counts: m.counts.clone(),
            missing: m.missing.clone(),
            matrix: m.matrix.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub bundle_hash: String,
    pub dataset_hash: String,
    pub seed: Option<u64>,
    pub architecture: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub metrics: Option<MetricsSection>,
    pub kl: Option<KlSection>,
    pub meta: ReportMeta,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let b = fs::read(path).map_err(|e| Error::io(path, e))?;
        let r: Report = serde_json::from_slice(&b)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Usage(format!("{}: unsupported report schema {}", path.display(), r.schema_version)));
        }
        Ok(r)
    }
}

/// Scatter data with the header `x,y,hand_part,location,dynamics`.
pub fn points_csv(emb: &EmbeddingSet) -> String {
    let mut s = String::from(POINTS_HEADER);
    s.push('\n');
    for p in emb.points() {
        let _ = writeln!(s, "{},{},{},{},{}", p.xy[0], p.xy[1], p.label.hand_part, p.label.location, p.label.dynamics);
    }
    s
}

pub fn write_points_csv(emb: &EmbeddingSet, path: &Path) -> Result<()> {
    fs::write(path, points_csv(emb)).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 over every window's samples and label, in order.
pub fn dataset_hash(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        for ch in e.window.channels() {
            for x in ch {
                h.update(x.to_le_bytes());
            }
        }
        let l = e.label;
        h.update(format!("{}/{}/{}/{}\n", l.gesture, l.hand_part, l.location, l.dynamics).as_bytes());
    }
    hex::encode(h.finalize())
}
