#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use geoseer::backend::{evidence_digest, fixture_path, FixtureBackend, LmmBackend, RecordingBackend, ScriptedBackend};
use geoseer::dataset::{load_manifest_file, Category, DatasetEntry};
use geoseer::harness::request_for;
use geoseer::model::{Coordinates, EvidenceBundle, GeoGuess, ImageEvidence, Language};
use geoseer::parser::render_guess_block;
use geoseer::pipeline::Pipeline;
use geoseer::prompt::LmmRequest;
use geoseer::scoring::EARTH_RADIUS_MILES;
use geoseer::session::{SessionManager, SessionState};
use serde_json::{json, Value};

// ---------------------------------------------------------------------------
// EXIF / TIFF byte builders

#[derive(Debug, Clone)]
pub enum Val {
    Byte(Vec<u8>),
    Ascii(String),
    Short(Vec<u16>),
    Long(Vec<u32>),
    Rational(Vec<(u32, u32)>),
}

impl Val {
    fn type_id(&self) -> u16 {
        match self {
            Val::Byte(_) => 1,
            Val::Ascii(_) => 2,
            Val::Short(_) => 3,
            Val::Long(_) => 4,
            Val::Rational(_) => 5,
        }
    }

    fn count(&self) -> u32 {
        match self {
            Val::Byte(v) => v.len() as u32,
            Val::Ascii(s) => s.len() as u32 + 1,
            Val::Short(v) => v.len() as u32,
            Val::Long(v) => v.len() as u32,
            Val::Rational(v) => v.len() as u32,
        }
    }

    fn encode(&self, le: bool) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Val::Byte(v) => out.extend_from_slice(v),
            Val::Ascii(s) => {
                out.extend_from_slice(s.as_bytes());
                out.push(0);
            }
            Val::Short(v) => v.iter().for_each(|x| put16(&mut out, *x, le)),
            Val::Long(v) => v.iter().for_each(|x| put32(&mut out, *x, le)),
            Val::Rational(v) => v.iter().for_each(|(n, d)| {
                put32(&mut out, *n, le);
                put32(&mut out, *d, le);
            }),
        }
        out
    }
}

fn put16(out: &mut Vec<u8>, v: u16, le: bool) {
    out.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() });
}

fn put32(out: &mut Vec<u8>, v: u32, le: bool) {
    out.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() });
}

fn pad2(n: usize) -> usize {
    n + (n & 1)
}

fn ifd_size(entries: &[(u16, Val)]) -> usize {
    let data: usize = entries
        .iter()
        .map(|(_, v)| {
            let n = v.encode(true).len();
            if n > 4 {
                pad2(n)
            } else {
                0
            }
        })
        .sum();
    2 + 12 * entries.len() + 4 + data
}

fn write_ifd(out: &mut Vec<u8>, entries: &[(u16, Val)], le: bool) {
    let base = out.len();
    let mut data_at = base + 2 + 12 * entries.len() + 4;
    let mut data = Vec::new();
    put16(out, entries.len() as u16, le);
    for (tag, v) in entries {
        put16(out, *tag, le);
        put16(out, v.type_id(), le);
        put32(out, v.count(), le);
        let bytes = v.encode(le);
        if bytes.len() <= 4 {
            let mut inline = bytes.clone();
            inline.resize(4, 0);
            out.extend_from_slice(&inline);
        } else {
            put32(out, data_at as u32, le);
            data.extend_from_slice(&bytes);
            if bytes.len() % 2 == 1 {
                data.push(0);
            }
            data_at += pad2(bytes.len());
        }
    }
    put32(out, 0, le);
    out.extend_from_slice(&data);
}

/// Degrees/minutes/seconds as EXIF rationals; seconds carry one decimal.
pub fn dms(deg: u32, min: u32, sec_tenths: u32) -> [(u32, u32); 3] {
    [(deg, 1), (min, 1), (sec_tenths, 10)]
}

#[derive(Debug, Clone)]
pub struct GpsSpec {
    pub lat: [(u32, u32); 3],
    pub lat_ref: &'static str,
    pub lon: [(u32, u32); 3],
    pub lon_ref: &'static str,
}

impl GpsSpec {
    /// 34°1'26.4"N 118°16'58.4"W
    pub fn los_angeles() -> Self {
        GpsSpec {
            lat: dms(34, 1, 264),
            lat_ref: "N",
            lon: dms(118, 16, 584),
            lon_ref: "W",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExifSpec {
    pub make: Option<String>,
    pub model: Option<String>,
    pub software: Option<String>,
    pub datetime_original: Option<String>,
    pub gps: Option<GpsSpec>,
}

impl ExifSpec {
    pub fn camera_with_gps(gps: GpsSpec) -> Self {
        ExifSpec {
            make: Some("Canon".into()),
            model: Some("EOS 5D".into()),
            software: Some("darkroom 2.1".into()),
            datetime_original: Some("2023:06:01 14:30:00".into()),
            gps: Some(gps),
        }
    }
}

pub struct Strip<'a> {
    pub width: u32,
    pub height: u32,
    pub gray: &'a [u8],
}

/// A TIFF structure with IFD0, optional Exif and GPS sub-IFDs and an
/// optional uncompressed grayscale strip (making it a standalone image).
pub fn tiff_bytes(spec: &ExifSpec, le: bool, strip: Option<Strip<'_>>) -> Vec<u8> {
    let mut ifd0: Vec<(u16, Val)> = Vec::new();
    if let Some(s) = &strip {
        ifd0.push((0x0100, Val::Long(vec![s.width])));
        ifd0.push((0x0101, Val::Long(vec![s.height])));
        ifd0.push((0x0102, Val::Short(vec![8])));
        ifd0.push((0x0103, Val::Short(vec![1])));
        ifd0.push((0x0106, Val::Short(vec![1])));
    }
    if let Some(m) = &spec.make {
        ifd0.push((0x010F, Val::Ascii(m.clone())));
    }
    if let Some(m) = &spec.model {
        ifd0.push((0x0110, Val::Ascii(m.clone())));
    }
    if let Some(s) = &strip {
        ifd0.push((0x0111, Val::Long(vec![0])));
        ifd0.push((0x0115, Val::Short(vec![1])));
        ifd0.push((0x0116, Val::Long(vec![s.height])));
        ifd0.push((0x0117, Val::Long(vec![s.gray.len() as u32])));
    }
    if let Some(s) = &spec.software {
        ifd0.push((0x0131, Val::Ascii(s.clone())));
    }
    let exif_ifd: Vec<(u16, Val)> = spec
        .datetime_original
        .iter()
        .map(|d| (0x9003, Val::Ascii(d.clone())))
        .collect();
    let gps_ifd: Vec<(u16, Val)> = match &spec.gps {
        Some(g) => vec![
            (0x0000, Val::Byte(vec![2, 3, 0, 0])),
            (0x0001, Val::Ascii(g.lat_ref.into())),
            (0x0002, Val::Rational(g.lat.to_vec())),
            (0x0003, Val::Ascii(g.lon_ref.into())),
            (0x0004, Val::Rational(g.lon.to_vec())),
        ],
        None => Vec::new(),
    };
    if !exif_ifd.is_empty() {
        ifd0.push((0x8769, Val::Long(vec![0])));
    }
    if !gps_ifd.is_empty() {
        ifd0.push((0x8825, Val::Long(vec![0])));
    }
    ifd0.sort_by_key(|(t, _)| *t);

    let off0 = 8usize;
    let off_exif = off0 + ifd_size(&ifd0);
    let off_gps = off_exif + if exif_ifd.is_empty() { 0 } else { ifd_size(&exif_ifd) };
    let off_pixels = off_gps + if gps_ifd.is_empty() { 0 } else { ifd_size(&gps_ifd) };
    for (tag, v) in &mut ifd0 {
        match tag {
            0x8769 => *v = Val::Long(vec![off_exif as u32]),
            0x8825 => *v = Val::Long(vec![off_gps as u32]),
            0x0111 => *v = Val::Long(vec![off_pixels as u32]),
            _ => {}
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(if le { b"II" } else { b"MM" });
    put16(&mut out, 42, le);
    put32(&mut out, off0 as u32, le);
    write_ifd(&mut out, &ifd0, le);
    if !exif_ifd.is_empty() {
        write_ifd(&mut out, &exif_ifd, le);
    }
    if !gps_ifd.is_empty() {
        write_ifd(&mut out, &gps_ifd, le);
    }
    assert_eq!(out.len(), off_pixels);
    if let Some(s) = strip {
        out.extend_from_slice(s.gray);
    }
    out
}

/// A deterministic RGB test pattern; `seed` makes images distinct.
pub fn pattern(width: u32, height: u32, seed: u32) -> image::RgbImage {
    image::RgbImage::from_fn(width, height, |x, y| {
        let s = seed.wrapping_mul(2654435761);
        image::Rgb([
            (x.wrapping_mul(7).wrapping_add(s) & 0xFF) as u8,
            (y.wrapping_mul(5).wrapping_add(s >> 8) & 0xFF) as u8,
            ((x ^ y).wrapping_add(s >> 16) & 0xFF) as u8,
        ])
    })
}

pub fn plain_jpeg(width: u32, height: u32, seed: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, 90);
    pattern(width, height, seed)
        .write_with_encoder(enc)
        .expect("encode jpeg");
    out
}

/// Splices an APP1 Exif segment directly after SOI.
pub fn with_app1(jpeg: &[u8], tiff: &[u8]) -> Vec<u8> {
    assert_eq!(&jpeg[..2], &[0xFF, 0xD8]);
    let len = (2 + 6 + tiff.len()) as u16;
    let mut out = Vec::with_capacity(jpeg.len() + len as usize + 2);
    out.extend_from_slice(&jpeg[..2]);
    out.extend_from_slice(&[0xFF, 0xE1]);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(b"Exif\0\0");
    out.extend_from_slice(tiff);
    out.extend_from_slice(&jpeg[2..]);
    out
}

pub fn exif_jpeg(spec: &ExifSpec, le: bool, seed: u32) -> Vec<u8> {
    with_app1(&plain_jpeg(48, 32, seed), &tiff_bytes(spec, le, None))
}

pub fn gray_pixels(width: u32, height: u32) -> Vec<u8> {
    (0..width * height).map(|i| (i * 37 % 251) as u8).collect()
}

pub fn exif_tiff(spec: &ExifSpec, le: bool) -> Vec<u8> {
    let gray = gray_pixels(16, 8);
    tiff_bytes(
        spec,
        le,
        Some(Strip {
            width: 16,
            height: 8,
            gray: &gray,
        }),
    )
}

// ---------------------------------------------------------------------------
// Guesses and fixtures

pub fn guess_at(levels: &[&str], coords: Option<(f64, f64)>, confidence: f64) -> GeoGuess {
    let mut b = GeoGuess::builder().confidence(confidence);
    let setters: [fn(geoseer::model::GeoGuessBuilder, String) -> geoseer::model::GeoGuessBuilder; 4] = [
        |b, v| b.country(v),
        |b, v| b.state(v),
        |b, v| b.city_town(v),
        |b, v| b.street(v),
    ];
    for (set, v) in setters.iter().zip(levels) {
        b = set(b, v.to_string());
    }
    if let Some((lat, lon)) = coords {
        b = b.coordinates(Coordinates::new(lat, lon).unwrap());
    }
    b.build().unwrap()
}

/// Model-style output: a short explanation followed by the result block.
pub fn model_text(guess: &GeoGuess) -> String {
    format!(
        "Looking at the visible clues I reached the following conclusion.\n\n{}",
        render_guess_block(guess)
    )
}

pub fn fixture_pipeline(id: &str, dir: &Path) -> Pipeline {
    Pipeline::new(Arc::new(FixtureBackend::new(id, dir)))
}

pub fn write_fixture(dir: &Path, request: &LmmRequest, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = fixture_path(dir, &evidence_digest(request));
    std::fs::write(&path, text).unwrap();
    path
}

/// Writes the fixture `run_eval` will look up for `entry`.
pub fn write_entry_fixture(dir: &Path, pipeline: &Pipeline, entry: &DatasetEntry, text: &str) {
    let request = request_for(pipeline, entry).unwrap();
    write_fixture(dir, &request, text);
}

// ---------------------------------------------------------------------------
// Manifests

/// Ground truth `[country, state, city_town, street]` at `(lat, lon)`.
pub fn truth_json(lat: f64, lon: f64, admin: [&str; 4]) -> Value {
    json!({
        "lat": lat,
        "lon": lon,
        "country": admin[0],
        "state": admin[1],
        "city_town": admin[2],
        "street": admin[3],
    })
}

pub fn write_manifest(dir: &Path, entries: Vec<Value>) -> PathBuf {
    let path = dir.join("manifest.json");
    let doc = json!({ "version": 1, "entries": entries });
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path
}

/// Latitude `miles` north of `lat` along a meridian.
pub fn offset_north(lat: f64, miles: f64) -> f64 {
    lat + (miles / EARTH_RADIUS_MILES).to_degrees()
}

pub const TABLE2: [(Category, usize, usize); 4] = [
    (Category::IconicLandmark, 50, 47),
    (Category::StreetView, 50, 27),
    (Category::Daytime, 20, 14),
    (Category::Nighttime, 20, 7),
];

/// Builds an image dataset sized 50/50/20/20 whose fixtures hit the street
/// in 47/27/14/7 cases. Misses cycle through city-level, wrong-street and
/// wrong-country answers. Returns the manifest path.
pub fn table2_dataset(root: &Path, fixture_dir: &Path, backend_id: &str) -> PathBuf {
    let img_dir = root.join("img");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut entries = Vec::new();
    let mut outcomes = Vec::new();
    let mut seed = 0u32;
    for (category, n, hits) in TABLE2 {
        for i in 0..n {
            seed += 1;
            let id = format!("{}-{i:03}", category.as_str());
            let file = format!("img/{id}.jpg");
            std::fs::write(root.join(&file), plain_jpeg(32, 24, seed)).unwrap();
            let lat = 34.0 + f64::from(seed) * 0.001;
            let lon = -118.25;
            let street = format!("{} Figueroa Street", 100 + seed);
            entries.push(json!({
                "id": id,
                "category": category.as_str(),
                "images": [file],
                "truth": truth_json(lat, lon, ["United States", "California", "Los Angeles", &street]),
            }));
            let guess = if i < hits {
                guess_at(
                    &["United States", "California", "Los Angeles", &street],
                    Some((lat, lon)),
                    0.9,
                )
            } else {
                match i % 3 {
                    0 => guess_at(&["United States", "California", "Los Angeles"], None, 0.6),
                    1 => guess_at(
                        &["United States", "California", "Los Angeles", "Hill Street"],
                        Some((lat + 0.01, lon)),
                        0.5,
                    ),
                    _ => guess_at(&["Mexico", "Baja California", "Tijuana"], Some((32.5, -117.0)), 0.3),
                }
            };
            outcomes.push(model_text(&guess));
        }
    }
    let manifest = write_manifest(root, entries);
    let loaded = load_manifest_file(&manifest, true).unwrap();
    let pipeline = fixture_pipeline(backend_id, fixture_dir);
    for (entry, text) in loaded.iter().zip(&outcomes) {
        write_entry_fixture(fixture_dir, &pipeline, entry, text);
    }
    manifest
}

// ---------------------------------------------------------------------------
// Refinement scenarios

pub struct Scenario {
    pub name: &'static str,
    pub start: EvidenceBundle,
    pub deltas: Vec<EvidenceBundle>,
    /// One scripted reply per round, in order.
    pub replies: Vec<String>,
}

/// Two angles of the same street corner; the second reveals the street.
pub fn taipei_scenario() -> Scenario {
    let first = ImageEvidence::from_bytes("taipei-angle-1.jpg", plain_jpeg(40, 30, 101));
    let second = ImageEvidence::from_bytes("taipei-angle-2.jpg", plain_jpeg(40, 30, 102));
    Scenario {
        name: "taipei",
        start: EvidenceBundle::new(Language::En).with_image(first),
        deltas: vec![EvidenceBundle::new(Language::En).with_image(second)],
        replies: vec![
            model_text(&guess_at(&["Taiwan", "Taipei", "Xinyi District"], Some((25.033, 121.565)), 0.6)),
            model_text(&guess_at(
                &["Taiwan", "Taipei", "Xinyi District", "Songren Road"],
                Some((25.0336, 121.5668)),
                0.85,
            )),
        ],
    }
}

/// One campus photo followed by three hints; the second hint briefly
/// produces a coarser answer.
pub fn usc_scenario() -> Scenario {
    let photo = ImageEvidence::from_bytes("campus.jpg", plain_jpeg(40, 30, 201));
    let hint = |t: &str| EvidenceBundle::new(Language::En).with_hint(t);
    Scenario {
        name: "usc",
        start: EvidenceBundle::new(Language::En).with_image(photo),
        deltas: vec![
            hint("The building is a university library on the west coast."),
            hint("A football stadium is a short walk away."),
            hint("A nearby street sign reads Trousdale Parkway."),
        ],
        replies: vec![
            model_text(&guess_at(&["United States"], None, 0.4)),
            model_text(&guess_at(&["United States", "California"], None, 0.5)),
            model_text(&guess_at(&["United States"], None, 0.3)),
            model_text(&guess_at(
                &["United States", "California", "Los Angeles", "Trousdale Parkway"],
                Some((34.0211, -118.2853)),
                0.9,
            )),
        ],
    }
}

/// Granularity of the best guess after each round, plus the final state.
pub async fn run_scenario(
    s: &Scenario,
    backend: Arc<dyn LmmBackend>,
) -> (Vec<geoseer::model::GeoGranularity>, SessionState) {
    let manager = SessionManager::in_memory(Pipeline::new(backend));
    let mut state = manager.start_session(s.start.clone()).await.unwrap();
    let mut best = vec![state.best_round().unwrap().granularity];
    for d in &s.deltas {
        state = manager.add_evidence(&state.session_id, d.clone()).await.unwrap();
        best.push(state.best_round().unwrap().granularity);
    }
    (best, state)
}

/// Records the scripted replies into `dir` through a live-style session.
pub async fn record_scenario(s: &Scenario, dir: &Path) -> SessionState {
    let scripted = Arc::new(ScriptedBackend::texts("geolocator", s.replies.clone()));
    let recorder = Arc::new(RecordingBackend::new(scripted, dir));
    run_scenario(s, recorder).await.1
}

// ---------------------------------------------------------------------------
// Mock chat-completions server

pub type MockHandler = Arc<dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync>;

#[derive(Default)]
pub struct MockLog {
    pub bodies: Vec<Value>,
    pub auth: Vec<Option<String>>,
}

pub struct MockLmm {
    /// Base URL to use as `base_url` (requests go to `{base}/chat/completions`).
    pub base_url: String,
    pub log: Arc<parking_lot::Mutex<MockLog>>,
}

impl MockLmm {
    pub fn hits(&self) -> usize {
        self.log.lock().bodies.len()
    }
}

pub fn completion(text: &str, id: &str) -> Value {
    json!({
        "id": id,
        "model": "mock-vision-1",
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 100, "completion_tokens": 20, "total_tokens": 120},
    })
}

/// Serves `handler` on a loopback port from a background runtime.
pub fn spawn_mock_lmm(handler: MockHandler) -> MockLmm {
    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::Json;

    type Shared = (MockHandler, Arc<parking_lot::Mutex<MockLog>>);

    async fn complete(
        State((handler, log)): State<Shared>,
        headers: HeaderMap,
        Json(body): Json<Value>,
    ) -> (StatusCode, Json<Value>) {
        let n = {
            let mut l = log.lock();
            l.auth.push(
                headers
                    .get("authorization")
                    .and_then(|v| v.to_str().ok())
                    .map(str::to_string),
            );
            l.bodies.push(body.clone());
            l.bodies.len() - 1
        };
        let (status, reply) = handler(n, &body);
        (StatusCode::from_u16(status).unwrap(), Json(reply))
    }

    let log = Arc::new(parking_lot::Mutex::new(MockLog::default()));
    let state: Shared = (handler, log.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = axum::Router::new()
                .route("/v1/chat/completions", post(complete))
                .with_state(state);
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    MockLmm {
        base_url: format!("http://{addr}/v1"),
        log,
    }
}
