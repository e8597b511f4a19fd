//! Address <-> coordinate resolution with a persistent cache, offline
//! fixtures and static-map links.

mod cache;
mod fixture;
mod nominatim;

use std::sync::Arc;

use async_trait::async_trait;
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_place_name, AdminPath, Coordinates, ModelError};

pub use cache::GeoCache;
pub use fixture::GeocodeFixtures;
pub use nominatim::{HttpTransport, NominatimProvider, ReqwestTransport};

pub const ENV_GEOCODER_URL: &str = "GEOSEER_GEOCODER_URL";
pub const ENV_CACHE_DIR: &str = "GEOSEER_CACHE_DIR";

pub const DEFAULT_MAP_TEMPLATE: &str = "https://staticmap.openstreetmap.de/staticmap.php?center={lat},{lon}&zoom={zoom}&size={width}x{height}&markers={lat},{lon},red-pushpin";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeocodeError {
    #[error("no geocoding result for {0:?}")]
    NotFound(String),
    #[error("geocoding provider error: {0}")]
    Provider(String),
    #[error("geocoder offline: {0}")]
    Offline(String),
    #[error("empty address")]
    EmptyAddress,
    #[error("zoom {0} outside 1..=20")]
    InvalidZoom(u8),
    #[error("map size {0}x{1} is invalid")]
    InvalidSize(u32, u32),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResultWire", into = "ResultWire")]
pub struct GeocodeResult {
    pub coordinates: Coordinates,
    pub admin: AdminPath,
    pub formatted_address: String,
    pub provider: String,
}

#[derive(Serialize, Deserialize)]
struct ResultWire {
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
    formatted_address: String,
    #[serde(default)]
    provider: String,
}

impl TryFrom<ResultWire> for GeocodeResult {
    type Error = ModelError;

    fn try_from(w: ResultWire) -> Result<Self, Self::Error> {
        let admin = AdminPath::new(Some(w.country), w.state, w.city_town, w.street)?;
        if admin.country().is_none() {
            return Err(ModelError::EmptyField("country"));
        }
        Ok(GeocodeResult {
            coordinates: Coordinates::new(w.lat, w.lon)?,
            admin,
            formatted_address: w.formatted_address,
            provider: w.provider,
        })
    }
}

impl From<GeocodeResult> for ResultWire {
    fn from(r: GeocodeResult) -> Self {
        ResultWire {
            lat: r.coordinates.lat(),
            lon: r.coordinates.lon(),
            country: r.admin.country().unwrap_or_default().to_string(),
            state: r.admin.state().map(str::to_string),
            city_town: r.admin.city_town().map(str::to_string),
            street: r.admin.street().map(str::to_string),
            formatted_address: r.formatted_address,
            provider: r.provider,
        }
    }
}

impl GeocodeResult {
    /// Maps raw provider fields into a result, truncating the admin chain at
    /// the first missing level. Returns `None` without a country.
    pub fn from_provider_fields(
        coordinates: Coordinates,
        levels: [Option<String>; 4],
        formatted_address: impl Into<String>,
        provider: impl Into<String>,
    ) -> Option<Self> {
        let [country, state, city, street] = levels;
        let (admin, _) = AdminPath::truncated(country, state, city, street).ok()?;
        admin.country()?;
        Some(GeocodeResult {
            coordinates,
            admin,
            formatted_address: formatted_address.into(),
            provider: provider.into(),
        })
    }
}

#[async_trait]
pub trait GeocodeProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Top-ranked match, or `None` when the provider has no result.
    async fn forward(&self, address: &str) -> Result<Option<GeocodeResult>, GeocodeError>;

    async fn reverse(&self, coords: Coordinates) -> Result<Option<GeocodeResult>, GeocodeError>;
}

/// Cache key for a forward query.
pub fn forward_key(address: &str) -> String {
    normalize_place_name(address)
}

/// Cache key for a reverse query: coordinates rounded to 5 decimals.
pub fn reverse_key(coords: Coordinates) -> String {
    let round = |v: f64| {
        let r = (v * 1e5).round() / 1e5;
        if r == 0.0 {
            0.0
        } else {
            r
        }
    };
    format!("{:.5},{:.5}", round(coords.lat()), round(coords.lon()))
}

pub struct Geocoder {
    provider: Option<Arc<dyn GeocodeProvider>>,
    fixtures: Option<GeocodeFixtures>,
    cache: Option<Arc<GeoCache>>,
    limiter: Arc<DefaultDirectRateLimiter>,
}

impl Geocoder {
    /// Live geocoder calling `provider`, at most one request per second.
    pub fn live(provider: Arc<dyn GeocodeProvider>) -> Self {
        Geocoder {
            provider: Some(provider),
            fixtures: None,
            cache: None,
            limiter: Arc::new(RateLimiter::direct(Quota::per_second(
                std::num::NonZeroU32::MIN,
            ))),
        }
    }

    /// Offline geocoder answering only from `fixtures`.
    pub fn fixture(fixtures: GeocodeFixtures) -> Self {
        Geocoder {
            provider: None,
            fixtures: Some(fixtures),
            cache: None,
            limiter: Arc::new(RateLimiter::direct(Quota::per_second(
                std::num::NonZeroU32::MIN,
            ))),
        }
    }

    /// Switches to fixture mode; the provider is never called afterwards.
    pub fn with_fixtures(mut self, fixtures: GeocodeFixtures) -> Self {
        self.fixtures = Some(fixtures);
        self
    }

    pub fn with_cache(mut self, cache: Arc<GeoCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_rate_limit(mut self, quota: Quota) -> Self {
        self.limiter = Arc::new(RateLimiter::direct(quota));
        self
    }

    pub fn is_fixture_mode(&self) -> bool {
        self.fixtures.is_some()
    }

    async fn provider(&self) -> Result<&Arc<dyn GeocodeProvider>, GeocodeError> {
        let p = self
            .provider
            .as_ref()
            .ok_or_else(|| GeocodeError::Offline("no provider configured".into()))?;
        self.limiter.until_ready().await;
        Ok(p)
    }

    fn cached(&self, key: &str) -> Option<GeocodeResult> {
        self.cache.as_ref().and_then(|c| c.get(key))
    }

    fn store(&self, key: &str, result: &GeocodeResult) -> Result<(), GeocodeError> {
        match &self.cache {
            Some(c) => c.insert(key, result),
            None => Ok(()),
        }
    }

    pub async fn forward_geocode(&self, address: &str) -> Result<GeocodeResult, GeocodeError> {
        let key = forward_key(address);
        if key.is_empty() {
            return Err(GeocodeError::EmptyAddress);
        }
        if let Some(f) = &self.fixtures {
            return f
                .forward(&key)
                .ok_or_else(|| GeocodeError::NotFound(address.to_string()));
        }
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let result = self
            .provider()
            .await?
            .forward(address)
            .await?
            .ok_or_else(|| GeocodeError::NotFound(address.to_string()))?;
        self.store(&key, &result)?;
        Ok(result)
    }

    pub async fn reverse_geocode(&self, coords: Coordinates) -> Result<GeocodeResult, GeocodeError> {
        let key = reverse_key(coords);
        if let Some(f) = &self.fixtures {
            return f.reverse(&key).ok_or(GeocodeError::NotFound(key));
        }
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let result = self
            .provider()
            .await?
            .reverse(coords)
            .await?
            .ok_or_else(|| GeocodeError::NotFound(key.clone()))?;
        self.store(&key, &result)?;
        Ok(result)
    }
}

/// Provider template and defaults for static map links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapTemplate(pub String);

impl Default for MapTemplate {
    fn default() -> Self {
        MapTemplate(DEFAULT_MAP_TEMPLATE.to_string())
    }
}

/// Substitutes `{lat}`, `{lon}`, `{zoom}`, `{width}` and `{height}`.
pub fn static_map_url(
    template: &MapTemplate,
    coords: Coordinates,
    zoom: u8,
    width: u32,
    height: u32,
) -> Result<String, GeocodeError> {
    if !(1..=20).contains(&zoom) {
        return Err(GeocodeError::InvalidZoom(zoom));
    }
    if width == 0 || height == 0 || width > 4096 || height > 4096 {
        return Err(GeocodeError::InvalidSize(width, height));
    }
    Ok(template
        .0
        .replace("{lat}", &coords.lat().to_string())
        .replace("{lon}", &coords.lon().to_string())
        .replace("{zoom}", &zoom.to_string())
        .replace("{width}", &width.to_string())
        .replace("{height}", &height.to_string()))
}
