//! Runs dataset entries through one or more backends and renders
//! accuracy reports.

use std::fmt::Write as _;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{from_config, BackendConfig, BackendError};
use crate::dataset::{Category, DatasetEntry};
use crate::model::{EvidenceBundle, ImageEvidence};
use crate::pipeline::{Pipeline, PipelineError};
use crate::prompt::LmmRequest;
use crate::scoring::{aggregate, format_distance, AggregateOptions, EntryResult, EvalReport, SetCounting};

pub const DEFAULT_MAX_CONCURRENCY: usize = 4;
pub const CSV_COLUMNS: [&str; 7] = [
    "entry_id",
    "backend_id",
    "category",
    "achieved",
    "success",
    "distance_miles",
    "error",
];

const BASELINES_JSON: &str = include_str!("../reference/baselines.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("no dataset entries")]
    EmptyDataset,
    #[error("no backends configured")]
    NoBackends,
    #[error("backend {id}: {error}")]
    Backend { id: String, error: BackendError },
    #[error("aggregation: {0}")]
    Aggregate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("inconsistent report: {0}")]
    Schema(String),
    #[error("serialization: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_concurrency: usize,
    pub counting: SetCounting,
    pub repeats: u32,
    /// Timestamp written into the report instead of the wall clock.
    pub frozen_time: Option<DateTime<Utc>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            counting: SetCounting::PerSet,
            repeats: 1,
            frozen_time: None,
        }
    }
}

/// Reads an entry's images and text into a bundle.
pub fn bundle_for(entry: &DatasetEntry) -> Result<EvidenceBundle, String> {
    let mut bundle = EvidenceBundle::new(entry.language);
    for path in &entry.image_paths {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        bundle = bundle.with_image(ImageEvidence::from_bytes(name, bytes));
    }
    if let Some(text) = &entry.text {
        bundle = bundle.with_text(text.clone());
    }
    Ok(bundle)
}

/// The exact request `run_eval` sends for `entry`; its digest names the
/// fixture file a replay will look up.
pub fn request_for(pipeline: &Pipeline, entry: &DatasetEntry) -> Result<LmmRequest, String> {
    let bundle = bundle_for(entry)?;
    let prepared = pipeline.prepare(&bundle).map_err(|e| e.to_string())?;
    pipeline.inference_request(&prepared).map_err(|e| e.to_string())
}

/// Builds one pipeline per backend config, sharing `template` settings.
pub fn pipelines_from_configs(
    configs: &[BackendConfig],
    template: &Pipeline,
) -> Result<Vec<Pipeline>, HarnessError> {
    configs
        .iter()
        .map(|c| {
            let backend = from_config(c).map_err(|error| HarnessError::Backend {
                id: c.id.clone(),
                error,
            })?;
            Ok(template.clone().with_backend(backend))
        })
        .collect()
}

async fn run_one(pipeline: &Pipeline, entry: &DatasetEntry, repeat: u32) -> EntryResult {
    let backend_id = pipeline.backend_id().to_string();
    let bundle = match bundle_for(entry) {
        Ok(b) => b,
        Err(e) => return EntryResult::failed(&entry.id, backend_id, e).with_repeat(repeat),
    };
    match pipeline.infer(&bundle).await {
        Ok(inf) => {
            let resolved = inf.resolved;
            EntryResult::score(&entry.id, backend_id, inf.guess, &entry.truth, resolved).with_repeat(repeat)
        }
        Err(PipelineError::Backend(e)) => {
            EntryResult::failed(&entry.id, backend_id, format!("backend: {e}")).with_repeat(repeat)
        }
        Err(e) => EntryResult::failed(&entry.id, backend_id, e.to_string()).with_repeat(repeat),
    }
}

fn config_digest(pipelines: &[Pipeline], config: &RunConfig) -> String {
    let ids: Vec<&str> = pipelines.iter().map(Pipeline::backend_id).collect();
    let doc = serde_json::json!({
        "backends": ids,
        "prompt": pipelines.first().map(|p| &p.prompt),
        "ops": pipelines.first().map(|p| &p.ops),
        "counting": config.counting,
        "repeats": config.repeats,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// Evaluates every (entry, backend, repeat) triple. Per-entry failures are
/// recorded as Unknown results; only an empty dataset is fatal.
pub async fn run_eval(
    entries: &[DatasetEntry],
    pipelines: &[Pipeline],
    config: &RunConfig,
) -> Result<EvalReport, HarnessError> {
    if entries.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if pipelines.is_empty() {
        return Err(HarnessError::NoBackends);
    }
    let repeats = config.repeats.max(1);
    let entries_arc: Arc<[DatasetEntry]> = entries.into();
    let mut jobs = Vec::new();
    for p in pipelines {
        let p = Arc::new(p.clone());
        for i in 0..entries_arc.len() {
            for r in 0..repeats {
                jobs.push((p.clone(), entries_arc.clone(), i, r));
            }
        }
    }
    let results: Vec<EntryResult> = stream::iter(jobs)
        .map(|(p, es, i, r)| async move { run_one(&p, &es[i], r).await })
        .buffer_unordered(config.max_concurrency.max(1))
        .collect()
        .await;
    let opts = AggregateOptions {
        counting: config.counting,
        repeats,
    };
    let mut report = aggregate(results, entries, opts).map_err(|e| HarnessError::Aggregate(e.to_string()))?;
    report.metadata.generated_at = Some(
        config
            .frozen_time
            .unwrap_or_else(Utc::now)
            .to_rfc3339_opts(SecondsFormat::Secs, true),
    );
    report.metadata.config_digest = config_digest(pipelines, config);
    Ok(report)
}

/// Convenience wrapper building pipelines from backend configs.
pub async fn run_eval_configs(
    entries: &[DatasetEntry],
    backends: &[BackendConfig],
    template: &Pipeline,
    config: &RunConfig,
) -> Result<EvalReport, HarnessError> {
    let pipelines = pipelines_from_configs(backends, template)?;
    run_eval(entries, &pipelines, config).await
}

#[derive(Debug, Clone, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub label: String,
    pub accuracy_percent: std::collections::BTreeMap<Category, u32>,
}

#[derive(Deserialize)]
struct BaselineFile {
    baselines: Vec<Baseline>,
}

/// Published baseline accuracies used for table footnotes.
pub fn reference_baselines() -> Vec<Baseline> {
    serde_json::from_str::<BaselineFile>(BASELINES_JSON)
        .expect("bundled baselines parse")
        .baselines
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    report.check_consistency().map_err(ReportError::Schema)?;
    match format {
        ReportFormat::Json => {
            let mut out =
                serde_json::to_vec_pretty(report).map_err(|e| ReportError::Serialize(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => Ok(render_table(report).into_bytes()),
    }
}

fn render_csv(report: &EvalReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ReportError::Serialize(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for e in &report.entries {
        w.write_record([
            e.entry_id.as_str(),
            e.backend_id.as_str(),
            e.category.map_or("", Category::as_str),
            e.achieved.as_str(),
            if e.success { "true" } else { "false" },
            &e.distance_miles.map(|d| d.to_string()).unwrap_or_default(),
            e.error.as_deref().unwrap_or(""),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

fn render_table(report: &EvalReport) -> String {
    let backends = report.backends();
    let categories: Vec<Category> = Category::ALL
        .into_iter()
        .filter(|c| report.cells.iter().any(|cell| cell.category == *c))
        .collect();

    let mut grid = vec![{
        let mut h = vec!["Image type".to_string(), "Sample size".to_string()];
        h.extend(backends.iter().map(|b| b.to_string()));
        h
    }];
    for cat in &categories {
        let size = backends
            .iter()
            .find_map(|b| report.cell(*cat, b))
            .map_or(0, |c| c.sample_size);
        let mut row = vec![cat.label().to_string(), size.to_string()];
        for b in &backends {
            row.push(
                report
                    .cell(*cat, b)
                    .map_or_else(|| "-".to_string(), |c| format!("{}%", c.accuracy_percent)),
            );
        }
        grid.push(row);
    }

    let mut out = String::from("Accuracy (street-level success)\n\n");
    out.push_str(&pad_table(&grid));

    let baselines = reference_baselines();
    let shown: Vec<&Category> = categories
        .iter()
        .filter(|c| baselines.iter().any(|b| b.accuracy_percent.contains_key(c)))
        .collect();
    if !shown.is_empty() {
        out.push_str("\nReference baselines (published, not recomputed):\n");
        for b in &baselines {
            let cells: Vec<String> = shown
                .iter()
                .map(|c| match b.accuracy_percent.get(c) {
                    Some(p) => format!("{} {p}%", c.label()),
                    None => format!("{} -", c.label()),
                })
                .collect();
            let _ = writeln!(out, "  {}: {}", b.label, cells.join(", "));
        }
    }

    let mut rows = vec![["entry", "backend", "category", "achieved", "success", "distance_miles", "error"]
        .map(str::to_string)
        .to_vec()];
    for e in &report.entries {
        rows.push(vec![
            e.entry_id.clone(),
            e.backend_id.clone(),
            e.category.map_or("", Category::as_str).to_string(),
            e.achieved.as_str().to_string(),
            if e.success { "yes" } else { "no" }.to_string(),
            e.distance_miles.map_or_else(|| "-".to_string(), format_distance),
            e.error.clone().unwrap_or_default(),
        ]);
    }
    out.push_str("\nPer-entry results\n\n");
    out.push_str(&pad_table(&rows));
    if report.metadata.error_count > 0 {
        let _ = writeln!(out, "\n{} entr{} failed; see the error column.", report.metadata.error_count,
            if report.metadata.error_count == 1 { "y" } else { "ies" });
    }
    out
}
