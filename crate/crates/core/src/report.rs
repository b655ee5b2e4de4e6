//! Evaluation reports: per-document metric rows, macro-averaged aggregates,
//! skip/flag notes, and emission as JSON lines plus a Markdown table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric names used in per-document rows.
pub mod metric {
    pub const NUM_KP: &str = "num_kp";
    pub const SEM_P: &str = "sem_p";
    pub const SEM_R: &str = "sem_r";
    pub const SEM_F1: &str = "sem_f1";
    pub const SEM_COV: &str = "sem_cov";
    pub const NATURALNESS: &str = "naturalness";
    pub const FAITHFULNESS: &str = "faithfulness";
    pub const DUP_TOKEN_RATIO: &str = "dup_token_ratio";
    pub const EMB_SIM: &str = "emb_sim";
    pub const RR_AT_K: &str = "rr_at_k";
    pub const SPARE: &str = "spare";
    pub const EXACT_P: &str = "exact_p";
    pub const EXACT_R: &str = "exact_r";
    pub const EXACT_F1: &str = "exact_f1";
    pub const SUBSTRING_P: &str = "substring_p";
    pub const SUBSTRING_R: &str = "substring_r";
    pub const SUBSTRING_F1: &str = "substring_f1";
    pub const R_PRECISION: &str = "r_precision";
    pub const ROUGE_L_P: &str = "rouge_l_p";
    pub const ROUGE_L_R: &str = "rouge_l_r";
    pub const ROUGE_L_F1: &str = "rouge_l_f1";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteKind {
    /// The metric group was not computed for this document.
    Skip,
    /// Computed, but under a degenerate convention (e.g. scored 0).
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReportNote {
    pub id: String,
    pub group: String,
    pub kind: NoteKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub system: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub providers: BTreeMap<String, String>,
    pub k: usize,
    pub base: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub per_document: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub notes: Vec<ReportNote>,
    pub metadata: ReportMetadata,
}

/// Macro average of each metric over the documents where it is defined.
pub fn aggregate(per_document: &BTreeMap<String, BTreeMap<String, f64>>) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for row in per_document.values() {
        for (name, value) in row {
            let e = sums.entry(name.clone()).or_insert((0.0, 0));
            e.0 += value;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(name, (sum, n))| (name, sum / n as f64))
        .collect()
}

impl DimensionReport {
    pub fn new(
        per_document: BTreeMap<String, BTreeMap<String, f64>>,
        mut notes: Vec<ReportNote>,
        metadata: ReportMetadata,
    ) -> Self {
        notes.sort();
        DimensionReport {
            aggregate: aggregate(&per_document),
            per_document,
            notes,
            metadata,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    /// `report.jsonl`
    Machine,
    /// `report.md`
    Table,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Meta(ReportMetadata),
    Document {
        id: String,
        metrics: BTreeMap<String, f64>,
    },
    Note(ReportNote),
    Aggregate {
        documents: usize,
        metrics: BTreeMap<String, f64>,
    },
}

pub const MACHINE_FILE: &str = "report.jsonl";
pub const TABLE_FILE: &str = "report.md";

/// Write the requested formats into `out_dir`, returning the written paths.
pub fn emit_report(
    report: &DimensionReport,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.per_document.is_empty() {
        return Err(Error::Config("report has no evaluated documents".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut written = Vec::new();
    for format in formats {
        let (path, body) = match format {
            ReportFormat::Machine => (out_dir.join(MACHINE_FILE), render_machine(report)),
            ReportFormat::Table => (out_dir.join(TABLE_FILE), render_table(report)),
        };
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn render_machine(report: &DimensionReport) -> String {
    let mut lines = Vec::new();
    let push = |lines: &mut Vec<String>, r: &Record| {
        lines.push(serde_json::to_string(r).expect("report record serializes"));
    };
    push(&mut lines, &Record::Meta(report.metadata.clone()));
    for (id, metrics) in &report.per_document {
        push(
            &mut lines,
            &Record::Document {
                id: id.clone(),
                metrics: metrics.clone(),
            },
        );
    }
    for note in &report.notes {
        push(&mut lines, &Record::Note(note.clone()));
    }
    push(
        &mut lines,
        &Record::Aggregate {
            documents: report.per_document.len(),
            metrics: report.aggregate.clone(),
        },
    );
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Column headers and metric keys of the main table.
pub fn table_columns(k: usize, base: usize) -> Vec<(String, &'static str)> {
    vec![
        ("#KP".into(), metric::NUM_KP),
        ("SemP".into(), metric::SEM_P),
        ("SemR".into(), metric::SEM_R),
        ("SemF1".into(), metric::SEM_F1),
        ("SemCov".into(), metric::SEM_COV),
        ("Naturalness".into(), metric::NATURALNESS),
        ("Faithfulness".into(), metric::FAITHFULNESS),
        ("dup".into(), metric::DUP_TOKEN_RATIO),
        ("emb_sim".into(), metric::EMB_SIM),
        (format!("RR@{k}"), metric::RR_AT_K),
        (format!("Spare_{base}@{k}"), metric::SPARE),
    ]
}

const BASELINE_COLUMNS: &[(&str, &str)] = &[
    ("Exact P", metric::EXACT_P),
    ("Exact R", metric::EXACT_R),
    ("Exact F1", metric::EXACT_F1),
    ("Substr P", metric::SUBSTRING_P),
    ("Substr R", metric::SUBSTRING_R),
    ("Substr F1", metric::SUBSTRING_F1),
    ("R-prec", metric::R_PRECISION),
    ("Rouge-L P", metric::ROUGE_L_P),
    ("Rouge-L R", metric::ROUGE_L_R),
    ("Rouge-L F1", metric::ROUGE_L_F1),
];

fn cell(aggregate: &BTreeMap<String, f64>, key: &str) -> String {
    match aggregate.get(key) {
        Some(v) if key == metric::NUM_KP => format!("{v:.2}"),
        Some(v) => format!("{v:.3}"),
        None => "-".into(),
    }
}

fn markdown_table(system: &str, headers: &[String], cells: &[String]) -> String {
    let mut s = format!("| System | {} |\n", headers.join(" | "));
    s.push_str(&format!("|---|{}\n", "---:|".repeat(headers.len())));
    s.push_str(&format!("| {system} | {} |\n", cells.join(" | ")));
    s
}

pub fn render_table(report: &DimensionReport) -> String {
    let meta = &report.metadata;
    let columns = table_columns(meta.k, meta.base);
    let headers: Vec<String> = columns.iter().map(|c| c.0.clone()).collect();
    let cells: Vec<String> = columns
        .iter()
        .map(|c| cell(&report.aggregate, c.1))
        .collect();

    let mut out = format!(
        "# Keyphrase evaluation: {}\n\n{} documents, alpha = {}, config {}\n\n",
        meta.system,
        report.per_document.len(),
        meta.alpha,
        &meta.config_hash[..meta.config_hash.len().min(12)]
    );
    out.push_str(&markdown_table(&meta.system, &headers, &cells));

    if BASELINE_COLUMNS
        .iter()
        .any(|c| report.aggregate.contains_key(c.1))
    {
        let headers: Vec<String> = BASELINE_COLUMNS.iter().map(|c| c.0.to_string()).collect();
        let cells: Vec<String> = BASELINE_COLUMNS
            .iter()
            .map(|c| cell(&report.aggregate, c.1))
            .collect();
        out.push_str("\n## Lexical baselines\n\n");
        out.push_str(&markdown_table(&meta.system, &headers, &cells));
    }

    if !report.notes.is_empty() {
        let mut counts: BTreeMap<(&str, NoteKind, &str), usize> = BTreeMap::new();
        for n in &report.notes {
            *counts
                .entry((n.group.as_str(), n.kind, n.reason.as_str()))
                .or_default() += 1;
        }
        out.push_str("\n## Notes\n\n");
        for ((group, kind, reason), n) in counts {
            let kind = match kind {
                NoteKind::Skip => "skipped",
                NoteKind::Flag => "flagged",
            };
            out.push_str(&format!("- {group}: {n} document(s) {kind} ({reason})\n"));
        }
    }
    out
}

/// Per-document rows and metadata read back from a machine-readable report.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedReport {
    pub metadata: ReportMetadata,
    pub per_document: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub notes: Vec<ReportNote>,
}

pub fn read_report(path: &Path) -> Result<LoadedReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut metadata = None;
    let mut per_document = BTreeMap::new();
    let mut aggregate = None;
    let mut notes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        match record {
            Record::Meta(m) => metadata = Some(m),
            Record::Document { id, metrics } => {
                per_document.insert(id, metrics);
            }
            Record::Note(n) => notes.push(n),
            Record::Aggregate { metrics, .. } => aggregate = Some(metrics),
        }
    }
    let missing = |what: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("report has no {what} record"),
    };
    Ok(LoadedReport {
        metadata: metadata.ok_or_else(|| missing("meta"))?,
        per_document,
        aggregate: aggregate.ok_or_else(|| missing("aggregate"))?,
        notes,
    })
}
