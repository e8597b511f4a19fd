//! Shared domain vocabulary: the granularity ladder, guesses, evidence and
//! ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::media::ExifSummary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("{field} must be a fraction in [0, 1], got {value}")]
    FractionOutOfRange { field: &'static str, value: f64 },
    #[error("{deeper} is set but {shallower} is missing")]
    BrokenChain {
        deeper: GeoGranularity,
        shallower: GeoGranularity,
    },
    #[error("{0} must be a single line of text")]
    MultilineField(&'static str),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("unsupported language tag {0:?}")]
    UnsupportedLanguage(String),
    #[error("age range {low}..{high} is invalid (need low <= high, both <= 120)")]
    InvalidAgeRange { low: u8, high: u8 },
    #[error("evidence bundle has no images and no text")]
    EmptyEvidence,
}

/// Location granularity, ordered from least to most specific.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GeoGranularity {
    #[default]
    Unknown,
    Country,
    State,
    CityTown,
    Street,
}

impl GeoGranularity {
    pub const ALL: [GeoGranularity; 5] = [
        GeoGranularity::Unknown,
        GeoGranularity::Country,
        GeoGranularity::State,
        GeoGranularity::CityTown,
        GeoGranularity::Street,
    ];

    /// The four admin levels in chain order.
    pub const LEVELS: [GeoGranularity; 4] = [
        GeoGranularity::Country,
        GeoGranularity::State,
        GeoGranularity::CityTown,
        GeoGranularity::Street,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GeoGranularity::Unknown => "unknown",
            GeoGranularity::Country => "country",
            GeoGranularity::State => "state",
            GeoGranularity::CityTown => "city_town",
            GeoGranularity::Street => "street",
        }
    }

    /// Number of admin levels this granularity covers (0 for `Unknown`).
    pub fn depth(self) -> usize {
        self as usize
    }

    pub fn from_depth(depth: usize) -> GeoGranularity {
        GeoGranularity::ALL[depth.min(4)]
    }
}

impl fmt::Display for GeoGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeoGranularity {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_place_name(s).as_str() {
            "unknown" => Ok(GeoGranularity::Unknown),
            "country" => Ok(GeoGranularity::Country),
            "state" => Ok(GeoGranularity::State),
            "city town" | "city" | "town" => Ok(GeoGranularity::CityTown),
            "street" => Ok(GeoGranularity::Street),
            _ => Err(()),
        }
    }
}

/// WGS84 latitude/longitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinates")]
pub struct Coordinates {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawCoordinates {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinates> for Coordinates {
    type Error = ModelError;

    fn try_from(raw: RawCoordinates) -> Result<Self, Self::Error> {
        Coordinates::new(raw.lat, raw.lon)
    }
}

impl Coordinates {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(ModelError::LatitudeOutOfRange(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(ModelError::LongitudeOutOfRange(lon));
        }
        Ok(Coordinates { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for Coordinates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

/// A top-down admin hierarchy (country, state, city/town, street).
///
/// A deeper level can only be present when every shallower level is, so a
/// street without a country cannot be represented.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AdminPath {
    levels: Vec<String>,
}

/// Fields that were dropped by [`AdminPath::truncated`] because a shallower
/// level was missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedLevel {
    pub level: GeoGranularity,
    pub value: String,
}

impl AdminPath {
    /// Builds a path, rejecting any gap in the chain.
    pub fn new(
        country: Option<String>,
        state: Option<String>,
        city_town: Option<String>,
        street: Option<String>,
    ) -> Result<Self, ModelError> {
        let raw = [country, state, city_town, street];
        let cleaned = clean_levels(raw)?;
        let mut levels = Vec::new();
        let mut gap_at: Option<usize> = None;
        for (i, value) in cleaned.into_iter().enumerate() {
            match (value, gap_at) {
                (Some(v), None) => levels.push(v),
                (None, None) => gap_at = Some(i),
                (Some(_), Some(gap)) => {
                    return Err(ModelError::BrokenChain {
                        deeper: GeoGranularity::LEVELS[i],
                        shallower: GeoGranularity::LEVELS[gap],
                    })
                }
                (None, Some(_)) => {}
            }
        }
        Ok(AdminPath { levels })
    }

    /// Builds the longest valid prefix; fields after the first gap are
    /// returned instead of being kept.
    pub fn truncated(
        country: Option<String>,
        state: Option<String>,
        city_town: Option<String>,
        street: Option<String>,
    ) -> Result<(Self, Vec<DroppedLevel>), ModelError> {
        let cleaned = clean_levels([country, state, city_town, street])?;
        let mut levels = Vec::new();
        let mut dropped = Vec::new();
        let mut broken = false;
        for (i, value) in cleaned.into_iter().enumerate() {
            match value {
                Some(v) if !broken => levels.push(v),
                Some(v) => dropped.push(DroppedLevel {
                    level: GeoGranularity::LEVELS[i],
                    value: v,
                }),
                None => broken = true,
            }
        }
        Ok((AdminPath { levels }, dropped))
    }

    pub fn granularity(&self) -> GeoGranularity {
        GeoGranularity::from_depth(self.levels.len())
    }

    /// Value at an admin level; `None` for `Unknown` or unpopulated levels.
    pub fn level(&self, level: GeoGranularity) -> Option<&str> {
        match level {
            GeoGranularity::Unknown => None,
            other => self.levels.get(other.depth() - 1).map(String::as_str),
        }
    }

    pub fn country(&self) -> Option<&str> {
        self.level(GeoGranularity::Country)
    }

    pub fn state(&self) -> Option<&str> {
        self.level(GeoGranularity::State)
    }

    pub fn city_town(&self) -> Option<&str> {
        self.level(GeoGranularity::CityTown)
    }

    pub fn street(&self) -> Option<&str> {
        self.level(GeoGranularity::Street)
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Levels joined most-specific first, e.g. `"Figueroa St, Los Angeles, California, United States"`.
    pub fn display_address(&self) -> String {
        self.levels
            .iter()
            .rev()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn clean_levels(raw: [Option<String>; 4]) -> Result<[Option<String>; 4], ModelError> {
    const NAMES: [&str; 4] = ["country", "state", "city_town", "street"];
    let mut out: [Option<String>; 4] = Default::default();
    for (i, value) in raw.into_iter().enumerate() {
        out[i] = clean_text(value, NAMES[i])?;
    }
    Ok(out)
}

/// Trims a text field; empty becomes `None`, embedded line breaks are rejected.
pub(crate) fn clean_text(
    value: Option<String>,
    field: &'static str,
) -> Result<Option<String>, ModelError> {
    match value {
        None => Ok(None),
        Some(v) => {
            let trimmed = v.trim();
            if trimmed.is_empty() {
                Ok(None)
            } else if trimmed.chars().any(|c| c.is_control()) {
                Err(ModelError::MultilineField(field))
            } else {
                Ok(Some(trimmed.to_string()))
            }
        }
    }
}

fn check_fraction(field: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ModelError::FractionOutOfRange { field, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClueCategory {
    Signage,
    TrafficRules,
    Vegetation,
    Climate,
    Architecture,
    LanguageScript,
    Exif,
    Landmark,
    Infrastructure,
    Other,
}

impl ClueCategory {
    pub const ALL: [ClueCategory; 10] = [
        ClueCategory::Signage,
        ClueCategory::TrafficRules,
        ClueCategory::Vegetation,
        ClueCategory::Climate,
        ClueCategory::Architecture,
        ClueCategory::LanguageScript,
        ClueCategory::Exif,
        ClueCategory::Landmark,
        ClueCategory::Infrastructure,
        ClueCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClueCategory::Signage => "signage",
            ClueCategory::TrafficRules => "traffic-rules",
            ClueCategory::Vegetation => "vegetation",
            ClueCategory::Climate => "climate",
            ClueCategory::Architecture => "architecture",
            ClueCategory::LanguageScript => "language-script",
            ClueCategory::Exif => "exif",
            ClueCategory::Landmark => "landmark",
            ClueCategory::Infrastructure => "infrastructure",
            ClueCategory::Other => "other",
        }
    }
}

impl fmt::Display for ClueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClueCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' || c == ' ' { '-' } else { c })
            .collect();
        ClueCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or(())
    }
}

/// One observation that supports a location hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClue")]
pub struct Clue {
    category: ClueCategory,
    description: String,
    salience: f64,
}

#[derive(Deserialize)]
struct RawClue {
    category: ClueCategory,
    description: String,
    salience: f64,
}

impl TryFrom<RawClue> for Clue {
    type Error = ModelError;

    fn try_from(raw: RawClue) -> Result<Self, Self::Error> {
        Clue::new(raw.category, raw.description, raw.salience)
    }
}

impl Clue {
    pub fn new(
        category: ClueCategory,
        description: impl Into<String>,
        salience: f64,
    ) -> Result<Self, ModelError> {
        let description = clean_text(Some(description.into()), "clue description")?
            .ok_or(ModelError::EmptyField("clue description"))?;
        Ok(Clue {
            category,
            description,
            salience: check_fraction("salience", salience)?,
        })
    }

    pub fn category(&self) -> ClueCategory {
        self.category
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn salience(&self) -> f64 {
        self.salience
    }
}

/// How a guess was obtained from model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePath {
    Block,
    Heuristic,
}

/// Link from a guess back to the response it was parsed from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponseRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_via: Option<ParsePath>,
}

pub const DEFAULT_CONFIDENCE: f64 = 0.5;

/// A hierarchical location hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GuessWire", into = "GuessWire")]
pub struct GeoGuess {
    admin: AdminPath,
    place_name: Option<String>,
    coordinates: Option<Coordinates>,
    confidence: f64,
    clues: Vec<Clue>,
    inconsistency_flags: Vec<String>,
    raw_response_ref: RawResponseRef,
}

#[derive(Serialize, Deserialize)]
struct GuessWire {
    #[serde(default)]
    country: Option<String>,
    #[serde(default)]
    state: Option<String>,
    #[serde(default)]
    city_town: Option<String>,
    #[serde(default)]
    street: Option<String>,
    #[serde(default)]
    place_name: Option<String>,
    #[serde(default)]
    coordinates: Option<Coordinates>,
    #[serde(default = "default_confidence")]
    confidence: f64,
    #[serde(default)]
    clues: Vec<Clue>,
    #[serde(default)]
    inconsistency_flags: Vec<String>,
    #[serde(default)]
    raw_response_ref: RawResponseRef,
    #[serde(default, skip_deserializing)]
    granularity: GeoGranularity,
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

impl TryFrom<GuessWire> for GeoGuess {
    type Error = ModelError;

    fn try_from(w: GuessWire) -> Result<Self, Self::Error> {
        let mut b = GeoGuess::builder()
            .admin(AdminPath::new(w.country, w.state, w.city_town, w.street)?)
            .confidence(w.confidence)
            .raw_response_ref(w.raw_response_ref);
        if let Some(p) = w.place_name {
            b = b.place_name(p);
        }
        if let Some(c) = w.coordinates {
            b = b.coordinates(c);
        }
        for clue in w.clues {
            b = b.clue(clue);
        }
        for flag in w.inconsistency_flags {
            b = b.inconsistency(flag);
        }
        b.build()
    }
}

impl From<GeoGuess> for GuessWire {
    fn from(g: GeoGuess) -> Self {
        let granularity = g.granularity();
        GuessWire {
            country: g.admin.country().map(str::to_string),
            state: g.admin.state().map(str::to_string),
            city_town: g.admin.city_town().map(str::to_string),
            street: g.admin.street().map(str::to_string),
            place_name: g.place_name,
            coordinates: g.coordinates,
            confidence: g.confidence,
            clues: g.clues,
            inconsistency_flags: g.inconsistency_flags,
            raw_response_ref: g.raw_response_ref,
            granularity,
        }
    }
}

impl Default for GeoGuess {
    fn default() -> Self {
        GeoGuess {
            admin: AdminPath::default(),
            place_name: None,
            coordinates: None,
            confidence: DEFAULT_CONFIDENCE,
            clues: Vec::new(),
            inconsistency_flags: Vec::new(),
            raw_response_ref: RawResponseRef::default(),
        }
    }
}

impl GeoGuess {
    pub fn builder() -> GeoGuessBuilder {
        GeoGuessBuilder::default()
    }

    /// A guess with no location information.
    pub fn unknown() -> Self {
        GeoGuess::default()
    }

    pub fn admin(&self) -> &AdminPath {
        &self.admin
    }

    pub fn country(&self) -> Option<&str> {
        self.admin.country()
    }

    pub fn state(&self) -> Option<&str> {
        self.admin.state()
    }

    pub fn city_town(&self) -> Option<&str> {
        self.admin.city_town()
    }

    pub fn street(&self) -> Option<&str> {
        self.admin.street()
    }

    pub fn place_name(&self) -> Option<&str> {
        self.place_name.as_deref()
    }

    pub fn coordinates(&self) -> Option<Coordinates> {
        self.coordinates
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn clues(&self) -> &[Clue] {
        &self.clues
    }

    pub fn inconsistency_flags(&self) -> &[String] {
        &self.inconsistency_flags
    }

    pub fn raw_response_ref(&self) -> &RawResponseRef {
        &self.raw_response_ref
    }

    pub fn granularity(&self) -> GeoGranularity {
        granularity_of(self)
    }

    pub fn with_raw_response_ref(mut self, r: RawResponseRef) -> Self {
        self.raw_response_ref = r;
        self
    }

    /// Equality that ignores clue order and the response reference.
    pub fn same_content(&self, other: &GeoGuess) -> bool {
        let sorted = |g: &GeoGuess| {
            let mut clues = g.clues.clone();
            clues.sort_by(|a, b| {
                (a.category, &a.description)
                    .cmp(&(b.category, &b.description))
                    .then(a.salience.total_cmp(&b.salience))
            });
            clues
        };
        self.admin == other.admin
            && self.place_name == other.place_name
            && self.coordinates == other.coordinates
            && self.confidence == other.confidence
            && self.inconsistency_flags == other.inconsistency_flags
            && sorted(self) == sorted(other)
    }
}

#[derive(Debug, Default)]
pub struct GeoGuessBuilder {
    country: Option<String>,
    state: Option<String>,
    city_town: Option<String>,
    street: Option<String>,
    admin: Option<AdminPath>,
    place_name: Option<String>,
    coordinates: Option<Coordinates>,
    confidence: Option<f64>,
    clues: Vec<Clue>,
    inconsistency_flags: Vec<String>,
    raw_response_ref: RawResponseRef,
}

impl GeoGuessBuilder {
    pub fn country(mut self, v: impl Into<String>) -> Self {
        self.country = Some(v.into());
        self
    }

    pub fn state(mut self, v: impl Into<String>) -> Self {
        self.state = Some(v.into());
        self
    }

    pub fn city_town(mut self, v: impl Into<String>) -> Self {
        self.city_town = Some(v.into());
        self
    }

    pub fn street(mut self, v: impl Into<String>) -> Self {
        self.street = Some(v.into());
        self
    }

    /// Replaces any individually set admin levels.
    pub fn admin(mut self, admin: AdminPath) -> Self {
        self.admin = Some(admin);
        self
    }

    pub fn place_name(mut self, v: impl Into<String>) -> Self {
        self.place_name = Some(v.into());
        self
    }

    pub fn coordinates(mut self, c: Coordinates) -> Self {
        self.coordinates = Some(c);
        self
    }

    pub fn confidence(mut self, c: f64) -> Self {
        self.confidence = Some(c);
        self
    }

    pub fn clue(mut self, clue: Clue) -> Self {
        self.clues.push(clue);
        self
    }

    pub fn inconsistency(mut self, flag: impl Into<String>) -> Self {
        self.inconsistency_flags.push(flag.into());
        self
    }

    pub fn raw_response_ref(mut self, r: RawResponseRef) -> Self {
        self.raw_response_ref = r;
        self
    }

    pub fn build(self) -> Result<GeoGuess, ModelError> {
        let admin = match self.admin {
            Some(a) => a,
            None => AdminPath::new(self.country, self.state, self.city_town, self.street)?,
        };
        let mut flags = Vec::with_capacity(self.inconsistency_flags.len());
        for f in self.inconsistency_flags {
            if let Some(f) = clean_text(Some(f), "inconsistency flag")? {
                flags.push(f);
            }
        }
        Ok(GeoGuess {
            admin,
            place_name: clean_text(self.place_name, "place_name")?,
            coordinates: self.coordinates,
            confidence: check_fraction("confidence", self.confidence.unwrap_or(DEFAULT_CONFIDENCE))?,
            clues: self.clues,
            inconsistency_flags: flags,
            raw_response_ref: self.raw_response_ref,
        })
    }
}

/// Deepest populated admin level of a guess.
pub fn granularity_of(guess: &GeoGuess) -> GeoGranularity {
    guess.admin.granularity()
}

/// Prompt languages with shipped templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::En, Language::Zh];

    pub fn tag(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Language {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "en-us" | "en-gb" | "english" => Ok(Language::En),
            "zh" | "zh-cn" | "zh-hans" | "zh-tw" | "chinese" => Ok(Language::Zh),
            _ => Err(ModelError::UnsupportedLanguage(s.to_string())),
        }
    }
}

/// One image plus whatever EXIF summary was read from its original bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvidence {
    pub name: String,
    #[serde(with = "base64_bytes")]
    pub bytes: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exif: Option<ExifSummary>,
}

impl ImageEvidence {
    /// Wraps raw image bytes, reading EXIF when the container carries any.
    pub fn from_bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        let exif = crate::media::read_exif(&bytes)
            .ok()
            .filter(|e| e.raw_tag_count > 0);
        ImageEvidence {
            name: name.into(),
            bytes,
            exif,
        }
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// Everything submitted for one inference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    #[serde(default)]
    pub images: Vec<ImageEvidence>,
    #[serde(default)]
    pub texts: Vec<String>,
    #[serde(default)]
    pub hints: Vec<String>,
    #[serde(default)]
    pub prompt_language: Language,
}

impl EvidenceBundle {
    pub fn new(language: Language) -> Self {
        EvidenceBundle {
            prompt_language: language,
            ..Default::default()
        }
    }

    pub fn with_image(mut self, image: ImageEvidence) -> Self {
        self.images.push(image);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.texts.push(text.into());
        self
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hints.push(hint.into());
        self
    }

    fn has_text(&self) -> bool {
        self.texts
            .iter()
            .chain(self.hints.iter())
            .any(|t| !t.trim().is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty() && !self.has_text()
    }

    pub fn has_post_text(&self) -> bool {
        self.texts.iter().any(|t| !t.trim().is_empty())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.is_empty() {
            Err(ModelError::EmptyEvidence)
        } else {
            Ok(())
        }
    }

    /// Appends another bundle, keeping arrival order.
    pub fn extend(&mut self, other: EvidenceBundle) {
        self.images.extend(other.images);
        self.texts.extend(other.texts);
        self.hints.extend(other.hints);
    }
}

/// Reference location used for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruthWire", into = "TruthWire")]
pub struct GroundTruth {
    coordinates: Coordinates,
    admin: AdminPath,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct TruthWire {
    lat: f64,
    lon: f64,
    country: String,
    #[serde(default)]
    state: Option<String>,
    #[serde(default)]
    city_town: Option<String>,
    #[serde(default)]
    street: Option<String>,
    #[serde(default)]
    label: String,
}

impl TryFrom<TruthWire> for GroundTruth {
    type Error = ModelError;

    fn try_from(w: TruthWire) -> Result<Self, Self::Error> {
        GroundTruth::new(
            Coordinates::new(w.lat, w.lon)?,
            AdminPath::new(Some(w.country), w.state, w.city_town, w.street)?,
            w.label,
        )
    }
}

impl From<GroundTruth> for TruthWire {
    fn from(t: GroundTruth) -> Self {
        TruthWire {
            lat: t.coordinates.lat,
            lon: t.coordinates.lon,
            country: t.admin.country().unwrap_or_default().to_string(),
            state: t.admin.state().map(str::to_string),
            city_town: t.admin.city_town().map(str::to_string),
            street: t.admin.street().map(str::to_string),
            label: t.label,
        }
    }
}

impl GroundTruth {
    pub fn new(
        coordinates: Coordinates,
        admin: AdminPath,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if admin.country().is_none() {
            return Err(ModelError::EmptyField("country"));
        }
        Ok(GroundTruth {
            coordinates,
            admin,
            label: label.into(),
        })
    }

    pub fn coordinates(&self) -> Coordinates {
        self.coordinates
    }

    pub fn admin(&self) -> &AdminPath {
        &self.admin
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAgeRange")]
pub struct AgeRange {
    low: u8,
    high: u8,
}

#[derive(Deserialize)]
struct RawAgeRange {
    low: u8,
    high: u8,
}

impl TryFrom<RawAgeRange> for AgeRange {
    type Error = ModelError;

    fn try_from(r: RawAgeRange) -> Result<Self, Self::Error> {
        AgeRange::new(r.low, r.high)
    }
}

impl AgeRange {
    pub fn new(low: u8, high: u8) -> Result<Self, ModelError> {
        if low > high || high > 120 {
            return Err(ModelError::InvalidAgeRange { low, high });
        }
        Ok(AgeRange { low, high })
    }

    pub fn low(&self) -> u8 {
        self.low
    }

    pub fn high(&self) -> u8 {
        self.high
    }
}

/// Inferred attributes of the author of a social-media post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub location_summary: String,
    #[serde(default)]
    pub age_range: Option<AgeRange>,
    #[serde(default)]
    pub gender: Option<Gender>,
    pub confidence: f64,
    #[serde(default)]
    pub supporting_clues: Vec<Clue>,
}

/// Case-folds, strips diacritics, and collapses punctuation and whitespace.
///
/// Every run of non-alphanumeric characters becomes a single space.
pub fn normalize_place_name(raw: &str) -> String {
    let stripped: String = raw
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for word in stripped
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}
