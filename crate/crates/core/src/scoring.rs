//! Distance and granularity-ladder accuracy metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Category, DatasetEntry};
use crate::model::{normalize_place_name, Coordinates, GeoGranularity, GeoGuess, GroundTruth};

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("result references unknown entry {0:?}")]
    UnknownEntry(String),
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_MILES`].
///
/// The complement `1 - h` is evaluated directly (as the haversine to the
/// antipode of `b`) so near-antipodal pairs keep full precision.
pub fn haversine_miles(a: Coordinates, b: Coordinates) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dl = (b.lon() - a.lon()).to_radians();
    let cc = p1.cos() * p2.cos();
    let h = ((p2 - p1) / 2.0).sin().powi(2) + cc * (dl / 2.0).sin().powi(2);
    let g = ((p1 + p2) / 2.0).sin().powi(2) + cc * (dl / 2.0).cos().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.max(0.0).sqrt().atan2(g.max(0.0).sqrt())
}

/// Deepest level at which the guess and the truth agree on every level
/// from country down.
pub fn achieved_granularity(guess: &GeoGuess, truth: &GroundTruth) -> GeoGranularity {
    let mut achieved = GeoGranularity::Unknown;
    for level in GeoGranularity::LEVELS {
        let (Some(g), Some(t)) = (guess.admin().level(level), truth.admin().level(level)) else {
            break;
        };
        let g = normalize_place_name(g);
        if g.is_empty() || g != normalize_place_name(t) {
            break;
        }
        achieved = level;
    }
    achieved
}

pub fn is_success(guess: &GeoGuess, truth: &GroundTruth) -> bool {
    achieved_granularity(guess, truth) == GeoGranularity::Street
}

/// Whole-percent accuracy, halves rounded up.
pub fn accuracy_percent(success_count: u32, sample_size: u32) -> u32 {
    if sample_size == 0 {
        return 0;
    }
    let (s, n) = (u64::from(success_count), u64::from(sample_size));
    ((200 * s + n) / (2 * n)) as u32
}

/// Four significant digits, trailing zeros trimmed.
pub fn format_distance(miles: f64) -> String {
    if miles == 0.0 || !miles.is_finite() {
        return "0".to_string();
    }
    let magnitude = miles.abs().log10().floor() as i32;
    let decimals = 3 - magnitude;
    if decimals <= 0 {
        let scale = 10f64.powi(-decimals);
        return format!("{:.0}", (miles / scale).round() * scale);
    }
    let s = format!("{:.*}", decimals as usize, miles);
    // rounding can carry into a new digit (9.9996 -> 10.000)
    let s = if s.trim_start_matches('-').starts_with("10") && magnitude < 1 && miles.abs() < 10.0 {
        format!("{:.*}", (decimals - 1).max(0) as usize, miles)
    } else {
        s
    };
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// How multi-angle sets enter the denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetCounting {
    /// One sample per set, successful if any image in the set succeeds.
    #[default]
    PerSet,
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub entry_id: String,
    pub backend_id: String,
    /// Filled in by [`aggregate`] from the dataset entry.
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub repeat: u32,
    pub achieved: GeoGranularity,
    pub success: bool,
    pub distance_miles: Option<f64>,
    pub guess: GeoGuess,
    #[serde(default)]
    pub error: Option<String>,
}

impl EntryResult {
    /// Scores `guess` against `truth`. `resolved` stands in for the guess
    /// coordinates when the guess carries none.
    pub fn score(
        entry_id: impl Into<String>,
        backend_id: impl Into<String>,
        guess: GeoGuess,
        truth: &GroundTruth,
        resolved: Option<Coordinates>,
    ) -> Self {
        let achieved = achieved_granularity(&guess, truth);
        let distance_miles = guess
            .coordinates()
            .or(resolved)
            .map(|c| haversine_miles(c, truth.coordinates()));
        EntryResult {
            entry_id: entry_id.into(),
            backend_id: backend_id.into(),
            category: None,
            repeat: 0,
            achieved,
            success: achieved == GeoGranularity::Street,
            distance_miles,
            guess,
            error: None,
        }
    }

    /// An Unknown result carrying the error that prevented inference.
    pub fn failed(entry_id: impl Into<String>, backend_id: impl Into<String>, error: impl Into<String>) -> Self {
        EntryResult {
            entry_id: entry_id.into(),
            backend_id: backend_id.into(),
            category: None,
            repeat: 0,
            achieved: GeoGranularity::Unknown,
            success: false,
            distance_miles: None,
            guess: GeoGuess::unknown(),
            error: Some(error.into()),
        }
    }

    pub fn with_repeat(mut self, repeat: u32) -> Self {
        self.repeat = repeat;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub category: Category,
    pub backend_id: String,
    pub sample_size: u32,
    pub success_count: u32,
    pub accuracy_percent: u32,
    /// Unrounded success ratio.
    pub accuracy_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub generated_at: Option<String>,
    pub config_digest: String,
    pub counting: SetCounting,
    pub repeats: u32,
    pub error_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub cells: Vec<AccuracyCell>,
    pub entries: Vec<EntryResult>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn cell(&self, category: Category, backend_id: &str) -> Option<&AccuracyCell> {
        self.cells
            .iter()
            .find(|c| c.category == category && c.backend_id == backend_id)
    }

    pub fn backends(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.cells.iter().map(|c| c.backend_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Checks the invariants a report must satisfy before rendering.
    pub fn check_consistency(&self) -> Result<(), String> {
        for c in &self.cells {
            if c.success_count > c.sample_size {
                return Err(format!("{} / {}: success_count exceeds sample_size", c.category, c.backend_id));
            }
            if c.accuracy_percent != accuracy_percent(c.success_count, c.sample_size) {
                return Err(format!("{} / {}: accuracy_percent mismatch", c.category, c.backend_id));
            }
        }
        let total: u32 = self.cells.iter().map(|c| c.sample_size).sum();
        if total > 0 && self.entries.is_empty() {
            return Err("aggregates present but no per-entry results".into());
        }
        if self.entries.iter().any(|e| e.distance_miles.is_some_and(|d| !(d >= 0.0))) {
            return Err("negative or NaN distance".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregateOptions {
    pub counting: SetCounting,
    pub repeats: u32,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            counting: SetCounting::PerSet,
            repeats: 1,
        }
    }
}

/// Builds per-(category, backend) accuracy cells. Every entry counts towards
/// the denominator of every backend that produced at least one result; a
/// missing result counts as a failure.
pub fn aggregate(
    mut results: Vec<EntryResult>,
    entries: &[DatasetEntry],
    opts: AggregateOptions,
) -> Result<EvalReport, ScoringError> {
    let by_id: HashMap<&str, &DatasetEntry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    for r in &results {
        if !by_id.contains_key(r.entry_id.as_str()) {
            return Err(ScoringError::UnknownEntry(r.entry_id.clone()));
        }
    }
    for r in &mut results {
        r.category = Some(by_id[r.entry_id.as_str()].category);
    }
    results.sort_by(|a, b| {
        (&a.entry_id, &a.backend_id, a.repeat).cmp(&(&b.entry_id, &b.backend_id, b.repeat))
    });

    let unit_of = |e: &DatasetEntry| -> String {
        match (&e.set_id, e.category, opts.counting) {
            (Some(set), Category::MultiAngleSet, SetCounting::PerSet) => format!("set\u{0}{set}"),
            _ => format!("entry\u{0}{}", e.id),
        }
    };
    let repeats = opts.repeats.max(1);
    let backends: BTreeSet<&str> = results.iter().map(|r| r.backend_id.as_str()).collect();

    let mut cells = Vec::new();
    for backend in backends {
        // (category) -> (unit, repeat) -> success
        let mut units: BTreeMap<Category, BTreeMap<(String, u32), bool>> = BTreeMap::new();
        for e in entries {
            let slot = units.entry(e.category).or_default();
            for rep in 0..repeats {
                slot.entry((unit_of(e), rep)).or_insert(false);
            }
        }
        for r in results.iter().filter(|r| r.backend_id == backend) {
            let e = by_id[r.entry_id.as_str()];
            let slot = units.entry(e.category).or_default();
            let key = (unit_of(e), r.repeat);
            let hit = slot.entry(key).or_insert(false);
            *hit |= r.success;
        }
        for (category, samples) in units {
            let sample_size = samples.len() as u32;
            let success_count = samples.values().filter(|s| **s).count() as u32;
            cells.push(AccuracyCell {
                category,
                backend_id: backend.to_string(),
                sample_size,
                success_count,
                accuracy_percent: accuracy_percent(success_count, sample_size),
                accuracy_fraction: if sample_size == 0 {
                    0.0
                } else {
                    f64::from(success_count) / f64::from(sample_size)
                },
            });
        }
    }
    cells.sort_by(|a, b| (a.category, &a.backend_id).cmp(&(b.category, &b.backend_id)));

    let error_count = results.iter().filter(|r| r.error.is_some()).count();
    Ok(EvalReport {
        version: REPORT_VERSION,
        cells,
        entries: results,
        metadata: ReportMetadata {
            generated_at: None,
            config_digest: String::new(),
            counting: opts.counting,
            repeats,
            error_count,
        },
    })
}
