use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{forward_key, reverse_key, GeocodeError, GeocodeResult};
use crate::model::Coordinates;

/// Canned geocoder answers loaded from JSON:
///
/// ```json
/// {"forward": {"Figueroa St, Los Angeles": {...}},
///  "reverse": {"34.0224,-118.2851": {...}}}
/// ```
///
/// Keys are normalized the same way as cache keys. A `null` value records
/// a known miss.
#[derive(Debug, Clone, Default)]
pub struct GeocodeFixtures {
    forward: HashMap<String, Option<GeocodeResult>>,
    reverse: HashMap<String, Option<GeocodeResult>>,
}

#[derive(Deserialize)]
struct FixtureFile {
    #[serde(default)]
    forward: HashMap<String, Option<GeocodeResult>>,
    #[serde(default)]
    reverse: HashMap<String, Option<GeocodeResult>>,
}

impl GeocodeFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(json: &str) -> Result<Self, GeocodeError> {
        let file: FixtureFile =
            serde_json::from_str(json).map_err(|e| GeocodeError::Cache(format!("fixtures: {e}")))?;
        let mut out = GeocodeFixtures::new();
        for (k, v) in file.forward {
            out.forward.insert(forward_key(&k), v);
        }
        for (k, v) in file.reverse {
            let coords = parse_pair(&k)
                .ok_or_else(|| GeocodeError::Cache(format!("fixtures: bad reverse key {k:?}")))?;
            out.reverse.insert(reverse_key(coords), v);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, GeocodeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeocodeError::Cache(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn add_forward(&mut self, address: &str, result: Option<GeocodeResult>) {
        self.forward.insert(forward_key(address), result);
    }

    pub fn add_reverse(&mut self, coords: Coordinates, result: Option<GeocodeResult>) {
        self.reverse.insert(reverse_key(coords), result);
    }

    pub(crate) fn forward(&self, key: &str) -> Option<GeocodeResult> {
        self.forward.get(key).cloned().flatten()
    }

    pub(crate) fn reverse(&self, key: &str) -> Option<GeocodeResult> {
        self.reverse.get(key).cloned().flatten()
    }
}

fn parse_pair(s: &str) -> Option<Coordinates> {
    let (lat, lon) = s.split_once(',')?;
    Coordinates::new(lat.trim().parse().ok()?, lon.trim().parse().ok()?).ok()
}
