//! Evaluation reports and run manifests: deterministic JSON plus CSV
//! confusion matrices. Identical inputs re-emit byte-identical files, so
//! no timestamps or absolute paths appear anywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{BackdoorMeasure, ConfusionMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorReport {
    pub target_label: usize,
    pub source_class: usize,
    pub extra_test_count: usize,
    pub normal: BackdoorMeasure,
    pub triggered: BackdoorMeasure,
}

/// The quantities of the result tables: original / normal / triggered
/// accuracy, per-class accuracies, both confusion matrices, and the attack
/// success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub attack: String,
    pub style: String,
    /// Baseline (unattacked) model accuracy.
    pub original_accuracy: f64,
    /// Trojan model through the hardware datapath, trigger down.
    pub normal_accuracy: f64,
    /// Trojan model through the hardware datapath, trigger up.
    pub triggered_accuracy: f64,
    /// Float Trojan model, full weights.
    pub software_full_accuracy: f64,
    /// Float Trojan model with the mask applied (subnet only).
    pub software_masked_accuracy: f64,
    pub per_class_normal: Vec<f64>,
    pub per_class_triggered: Vec<f64>,
    pub confusion_normal: ConfusionMatrix,
    pub confusion_triggered: ConfusionMatrix,
    /// Label-exchange attacks: mean cross-misclassification rate in
    /// triggered mode, recomputable from `confusion_triggered`.
    pub attack_success_rate: Option<f64>,
    pub exchanged_classes: Option<(usize, usize)>,
    pub backdoor: Option<BackdoorReport>,
    pub seeds: SeedRecord,
    /// FNV-1a fingerprints of the artifacts this report was computed from.
    pub model_fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub baseline: u64,
    pub phase1: u64,
    pub phase2: u64,
}

/// Write report.json plus CSV side files; returns the paths written.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    written.push(json_path);

    let cn = dir.join("confusion_normal.csv");
    std::fs::write(&cn, report.confusion_normal.to_csv())?;
    written.push(cn);

    let ct = dir.join("confusion_triggered.csv");
    std::fs::write(&ct, report.confusion_triggered.to_csv())?;
    written.push(ct);

    let mut per_class = String::from("class,normal_accuracy,triggered_accuracy\n");
    for (i, (n, t)) in report
        .per_class_normal
        .iter()
        .zip(&report.per_class_triggered)
        .enumerate()
    {
        per_class.push_str(&format!("{i},{n},{t}\n"));
    }
    let pc = dir.join("per_class.csv");
    std::fs::write(&pc, per_class)?;
    written.push(pc);

    Ok(written)
}

/// Run manifest: configuration echo, seeds, artifact fingerprints, and
/// status. Written even when a stage fails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}

/// FNV-1a 64-bit over a byte slice.
pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:016x}", fingerprint_bytes(&bytes)))
}
