//! Benchmark manifests: one JSON document listing entries with ground truth.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{AdminPath, Coordinates, GroundTruth, Language};

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    IconicLandmark,
    StreetView,
    Daytime,
    Nighttime,
    MultiAngleSet,
    SocialPost,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::IconicLandmark,
        Category::StreetView,
        Category::Daytime,
        Category::Nighttime,
        Category::MultiAngleSet,
        Category::SocialPost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::IconicLandmark => "iconic_landmark",
            Category::StreetView => "street_view",
            Category::Daytime => "daytime",
            Category::Nighttime => "nighttime",
            Category::MultiAngleSet => "multi_angle_set",
            Category::SocialPost => "social_post",
        }
    }

    /// Row label used in table reports.
    pub fn label(self) -> &'static str {
        match self {
            Category::IconicLandmark => "Iconic landmark",
            Category::StreetView => "Street view",
            Category::Daytime => "Daytime image",
            Category::Nighttime => "Nighttime image",
            Category::MultiAngleSet => "Multi-angle set",
            Category::SocialPost => "Social post",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().replace('_', "") == key)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub category: Category,
    #[serde(rename = "images")]
    pub image_paths: Vec<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
    pub language: Language,
    #[serde(default)]
    pub set_id: Option<String>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("{path}: file not found: {file}")]
    MissingFile { path: String, file: String },
    #[error("cannot read manifest: {0}")]
    Io(String),
}

impl ManifestError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ManifestError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ManifestOptions {
    /// Relative image paths are resolved against this directory.
    pub base_dir: Option<PathBuf>,
    /// Fail when an image path does not exist.
    pub check_files: bool,
}

/// Parses and validates a manifest with default options.
pub fn load_manifest(document: &[u8]) -> Result<Vec<DatasetEntry>, ManifestError> {
    load_manifest_with(document, &ManifestOptions::default())
}

/// Reads a manifest file; relative paths resolve against its directory.
pub fn load_manifest_file(path: &Path, check_files: bool) -> Result<Vec<DatasetEntry>, ManifestError> {
    let bytes = std::fs::read(path).map_err(|e| ManifestError::Io(format!("{}: {e}", path.display())))?;
    let opts = ManifestOptions {
        base_dir: path.parent().map(Path::to_path_buf),
        check_files,
    };
    load_manifest_with(&bytes, &opts)
}

pub fn load_manifest_with(
    document: &[u8],
    opts: &ManifestOptions,
) -> Result<Vec<DatasetEntry>, ManifestError> {
    let text = std::str::from_utf8(document)
        .map_err(|e| ManifestError::schema("$", format!("not UTF-8: {e}")))?;
    let root: Value =
        serde_json::from_str(text).map_err(|e| ManifestError::schema("$", e.to_string()))?;
    let root = root
        .as_object()
        .ok_or_else(|| ManifestError::schema("$", "expected an object"))?;
    match root.get("version").and_then(Value::as_u64) {
        Some(MANIFEST_VERSION) => {}
        Some(v) => return Err(ManifestError::schema("version", format!("unsupported version {v}"))),
        None => return Err(ManifestError::schema("version", "expected integer 1")),
    }
    let entries = root
        .get("entries")
        .and_then(Value::as_array)
        .ok_or_else(|| ManifestError::schema("entries", "expected an array"))?;

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for (i, raw) in entries.iter().enumerate() {
        let at = format!("entries[{i}]");
        let entry = parse_entry(raw, &at, opts)?;
        if !seen.insert(entry.id.clone()) {
            return Err(ManifestError::DuplicateId(entry.id));
        }
        out.push(entry);
    }
    Ok(out)
}

fn opt_str<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<Option<&'a str>, ManifestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.as_str())),
        Some(_) => Err(ManifestError::schema(format!("{at}.{key}"), "expected a string")),
    }
}

fn parse_entry(raw: &Value, at: &str, opts: &ManifestOptions) -> Result<DatasetEntry, ManifestError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ManifestError::schema(at, "expected an object"))?;

    let id = opt_str(obj, "id", at)?
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ManifestError::schema(format!("{at}.id"), "required non-empty string"))?
        .to_string();

    let category = opt_str(obj, "category", at)?
        .ok_or_else(|| ManifestError::schema(format!("{at}.category"), "required"))?
        .parse::<Category>()
        .map_err(|e| ManifestError::schema(format!("{at}.category"), e))?;

    let mut image_paths = Vec::new();
    match obj.get("images") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (j, item) in items.iter().enumerate() {
                let p = item.as_str().ok_or_else(|| {
                    ManifestError::schema(format!("{at}.images[{j}]"), "expected a path string")
                })?;
                let mut path = PathBuf::from(p);
                if let (Some(base), true) = (&opts.base_dir, path.is_relative()) {
                    path = base.join(path);
                }
                if opts.check_files && !path.exists() {
                    return Err(ManifestError::MissingFile {
                        path: format!("{at}.images[{j}]"),
                        file: path.display().to_string(),
                    });
                }
                image_paths.push(path);
            }
        }
        Some(_) => return Err(ManifestError::schema(format!("{at}.images"), "expected an array")),
    }

    let text = opt_str(obj, "text", at)?
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string);
    if image_paths.is_empty() && text.is_none() {
        return Err(ManifestError::schema(at, "entry needs at least one image or non-empty text"));
    }

    let language = match opt_str(obj, "language", at)? {
        None => Language::En,
        Some(tag) => tag
            .parse::<Language>()
            .map_err(|e| ManifestError::schema(format!("{at}.language"), e.to_string()))?,
    };

    let set_id = opt_str(obj, "set_id", at)?
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string);
    if category == Category::MultiAngleSet && set_id.is_none() {
        return Err(ManifestError::schema(
            format!("{at}.set_id"),
            "multi_angle_set entries require a set_id",
        ));
    }

    let truth = parse_truth(obj.get("truth"), &format!("{at}.truth"))?;
    Ok(DatasetEntry {
        id,
        category,
        image_paths,
        text,
        language,
        set_id,
        truth,
    })
}

fn parse_truth(raw: Option<&Value>, at: &str) -> Result<GroundTruth, ManifestError> {
    let obj = raw
        .and_then(Value::as_object)
        .ok_or_else(|| ManifestError::schema(at, "expected an object"))?;
    let num = |key: &str| -> Result<f64, ManifestError> {
        obj.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| ManifestError::schema(format!("{at}.{key}"), "expected a number"))
    };
    let lat = num("lat")?;
    let lon = num("lon")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(ManifestError::schema(format!("{at}.lat"), format!("{lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(ManifestError::schema(format!("{at}.lon"), format!("{lon} outside [-180, 180]")));
    }
    let coords = Coordinates::new(lat, lon).map_err(|e| ManifestError::schema(at, e.to_string()))?;
    let field = |key: &str| opt_str(obj, key, at).map(|v| v.map(str::to_string));
    let country = field("country")?;
    if country.as_deref().is_none_or(|c| c.trim().is_empty()) {
        return Err(ManifestError::schema(format!("{at}.country"), "required"));
    }
    let admin = AdminPath::new(country, field("state")?, field("city_town")?, field("street")?)
        .map_err(|e| ManifestError::schema(at, e.to_string()))?;
    let label = field("label")?.unwrap_or_default();
    GroundTruth::new(coords, admin, label).map_err(|e| ManifestError::schema(at, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"version": 1, "entries": [
        {"id": "a1", "category": "iconic_landmark", "images": ["a1.jpg"], "language": "en",
         "truth": {"lat": 40.6892, "lon": -74.0445, "country": "United States", "state": "New York",
                   "city_town": "New York", "street": "Liberty Island", "label": "Statue of Liberty"}}
    ]}"#;

    #[test]
    fn minimal_manifest() {
        let entries = load_manifest(MINIMAL.as_bytes()).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].category, Category::IconicLandmark);
        assert_eq!(entries[0].truth.admin().street(), Some("Liberty Island"));
    }

    #[test]
    fn duplicate_id() {
        let doc = r#"{"version": 1, "entries": [
            {"id": "x", "category": "street_view", "images": ["1.jpg"], "truth": {"lat": 0, "lon": 0, "country": "A"}},
            {"id": "x", "category": "street_view", "images": ["2.jpg"], "truth": {"lat": 0, "lon": 0, "country": "A"}}
        ]}"#;
        assert_eq!(load_manifest(doc.as_bytes()), Err(ManifestError::DuplicateId("x".into())));
    }

    #[test]
    fn lat_out_of_range_names_field() {
        let doc = MINIMAL.replace("40.6892", "95");
        match load_manifest(doc.as_bytes()) {
            Err(ManifestError::Schema { path, .. }) => assert_eq!(path, "entries[0].truth.lat"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_schema_paths() {
        let cases = [
            (MINIMAL.replace("\"version\": 1", "\"version\": 2"), "version"),
            (MINIMAL.replace("iconic_landmark", "volcano"), "entries[0].category"),
            (MINIMAL.replace("\"en\"", "\"fr\""), "entries[0].language"),
            (MINIMAL.replace("[\"a1.jpg\"]", "[3]"), "entries[0].images[0]"),
            (MINIMAL.replace("\"state\": \"New York\",", ""), "entries[0].truth"),
            (MINIMAL.replace("iconic_landmark", "multi_angle_set"), "entries[0].set_id"),
        ];
        for (doc, want) in cases {
            match load_manifest(doc.as_bytes()) {
                Err(ManifestError::Schema { path, .. }) => assert_eq!(path, want),
                other => panic!("{want}: {other:?}"),
            }
        }
    }

    #[test]
    fn check_files_and_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ManifestOptions {
            base_dir: Some(dir.path().to_path_buf()),
            check_files: true,
        };
        assert!(matches!(
            load_manifest_with(MINIMAL.as_bytes(), &opts),
            Err(ManifestError::MissingFile { .. })
        ));
        std::fs::write(dir.path().join("a1.jpg"), b"x").unwrap();
        let e = load_manifest_with(MINIMAL.as_bytes(), &opts).unwrap();
        assert_eq!(e[0].image_paths[0], dir.path().join("a1.jpg"));
    }

    #[test]
    fn category_spellings() {
        assert_eq!("IconicLandmark".parse::<Category>(), Ok(Category::IconicLandmark));
        assert_eq!("multi-angle set".parse::<Category>(), Ok(Category::MultiAngleSet));
    }
}
