use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::Value;

use super::{GeocodeError, GeocodeProvider, GeocodeResult};
use crate::model::Coordinates;

pub const DEFAULT_NOMINATIM_URL: &str = "https://nominatim.openstreetmap.org";
const USER_AGENT: &str = concat!("geoseer/", env!("CARGO_PKG_VERSION"));

/// Minimal GET transport so tests can swap out the network.
#[async_trait]
pub trait HttpTransport: Send + Sync {
    /// Returns the status code and body.
    async fn get(&self, url: &str) -> Result<(u16, String), GeocodeError>;
}

pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, GeocodeError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent(USER_AGENT)
            .build()
            .map_err(|e| GeocodeError::Provider(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

#[async_trait]
impl HttpTransport for ReqwestTransport {
    async fn get(&self, url: &str) -> Result<(u16, String), GeocodeError> {
        let resp = self.client.get(url).send().await.map_err(|e| {
            if e.is_connect() || e.is_timeout() {
                GeocodeError::Offline(e.to_string())
            } else {
                GeocodeError::Provider(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .await
            .map_err(|e| GeocodeError::Provider(e.to_string()))?;
        Ok((status, body))
    }
}

/// OpenStreetMap Nominatim adapter.
pub struct NominatimProvider {
    base_url: String,
    transport: Arc<dyn HttpTransport>,
}

#[derive(Deserialize)]
struct Place {
    lat: String,
    lon: String,
    #[serde(default)]
    display_name: String,
    #[serde(default)]
    address: serde_json::Map<String, Value>,
}

fn first_of(address: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| address.get(*k).and_then(Value::as_str))
        .map(str::to_string)
}

fn place_to_result(place: Place) -> Result<Option<GeocodeResult>, GeocodeError> {
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| GeocodeError::Provider(format!("bad coordinate {s:?}")))
    };
    let coords = Coordinates::new(parse(&place.lat)?, parse(&place.lon)?)
        .map_err(|e| GeocodeError::Provider(e.to_string()))?;
    let a = &place.address;
    let levels = [
        first_of(a, &["country"]),
        first_of(a, &["state", "province", "region", "state_district"]),
        first_of(a, &["city", "town", "village", "municipality", "hamlet"]),
        first_of(a, &["road", "pedestrian", "footway", "street"]),
    ];
    Ok(GeocodeResult::from_provider_fields(
        coords,
        levels,
        place.display_name,
        "nominatim",
    ))
}

impl NominatimProvider {
    pub fn new(base_url: impl Into<String>) -> Result<Self, GeocodeError> {
        Ok(Self::with_transport(
            base_url,
            Arc::new(ReqwestTransport::new(Duration::from_secs(20))?),
        ))
    }

    pub fn with_transport(base_url: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        NominatimProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            transport,
        }
    }

    /// Uses `GEOSEER_GEOCODER_URL` when set.
    pub fn from_env() -> Result<Self, GeocodeError> {
        let url = std::env::var(super::ENV_GEOCODER_URL)
            .unwrap_or_else(|_| DEFAULT_NOMINATIM_URL.to_string());
        Self::new(url)
    }

    async fn fetch(&self, path: &str, params: &[(&str, String)]) -> Result<Value, GeocodeError> {
        let url = reqwest::Url::parse_with_params(&format!("{}/{path}", self.base_url), params)
            .map_err(|e| GeocodeError::Provider(e.to_string()))?;
        let (status, body) = self.transport.get(url.as_str()).await?;
        if !(200..300).contains(&status) {
            return Err(GeocodeError::Provider(format!("HTTP {status}")));
        }
        serde_json::from_str(&body).map_err(|e| GeocodeError::Provider(format!("bad body: {e}")))
    }
}

#[async_trait]
impl GeocodeProvider for NominatimProvider {
    fn name(&self) -> &str {
        "nominatim"
    }

    async fn forward(&self, address: &str) -> Result<Option<GeocodeResult>, GeocodeError> {
        let body = self
            .fetch(
                "search",
                &[
                    ("q", address.to_string()),
                    ("format", "jsonv2".into()),
                    ("addressdetails", "1".into()),
                    ("limit", "1".into()),
                ],
            )
            .await?;
        let places: Vec<Place> =
            serde_json::from_value(body).map_err(|e| GeocodeError::Provider(e.to_string()))?;
        match places.into_iter().next() {
            Some(p) => place_to_result(p),
            None => Ok(None),
        }
    }

    async fn reverse(&self, coords: Coordinates) -> Result<Option<GeocodeResult>, GeocodeError> {
        let body = self
            .fetch(
                "reverse",
                &[
                    ("lat", coords.lat().to_string()),
                    ("lon", coords.lon().to_string()),
                    ("format", "jsonv2".into()),
                    ("addressdetails", "1".into()),
                ],
            )
            .await?;
        if body.get("error").is_some() {
            return Ok(None);
        }
        let place: Place =
            serde_json::from_value(body).map_err(|e| GeocodeError::Provider(e.to_string()))?;
        place_to_result(place)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use parking_lot::Mutex;

    struct Canned {
        status: u16,
        body: String,
        seen: Mutex<Vec<String>>,
    }

    #[async_trait]
    impl HttpTransport for Canned {
        async fn get(&self, url: &str) -> Result<(u16, String), GeocodeError> {
            self.seen.lock().push(url.to_string());
            Ok((self.status, self.body.clone()))
        }
    }

    fn canned(status: u16, body: &str) -> Arc<Canned> {
        Arc::new(Canned {
            status,
            body: body.into(),
            seen: Mutex::new(vec![]),
        })
    }

    #[tokio::test]
    async fn forward_maps_address_fields() {
        let t = canned(
            200,
            r#"[{"lat":"34.0205","lon":"-118.2856","display_name":"USC",
                "address":{"road":"Trousdale Pkwy","city":"Los Angeles","state":"California","country":"United States"}}]"#,
        );
        let p = NominatimProvider::with_transport("http://geo.test/", t.clone());
        let r = p.forward("USC campus").await.unwrap().unwrap();
        assert_eq!(r.admin.display_address(), "Trousdale Pkwy, Los Angeles, California, United States");
        let url = t.seen.lock()[0].clone();
        assert!(url.starts_with("http://geo.test/search?q=USC+campus"), "{url}");
    }

    #[tokio::test]
    async fn empty_and_error_bodies() {
        let p = NominatimProvider::with_transport("http://geo.test", canned(200, "[]"));
        assert_eq!(p.forward("x").await.unwrap(), None);
        let p = NominatimProvider::with_transport("http://geo.test", canned(200, r#"{"error":"Unable to geocode"}"#));
        assert_eq!(p.reverse(Coordinates::new(0.0, 0.0).unwrap()).await.unwrap(), None);
        let p = NominatimProvider::with_transport("http://geo.test", canned(503, ""));
        assert!(matches!(p.forward("x").await, Err(GeocodeError::Provider(_))));
    }

    #[tokio::test]
    async fn missing_state_truncates() {
        let t = canned(
            200,
            r#"{"lat":"25.0339","lon":"121.5645","display_name":"Taipei 101",
                "address":{"road":"Xinyi Rd","city":"Taipei","country":"Taiwan"}}"#,
        );
        let p = NominatimProvider::with_transport("http://geo.test", t);
        let r = p.reverse(Coordinates::new(25.0339, 121.5645).unwrap()).await.unwrap().unwrap();
        assert_eq!(r.admin.display_address(), "Taiwan");
    }
}
