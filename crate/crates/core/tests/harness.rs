mod common;

use std::sync::Arc;

use geoseer::backend::ScriptedBackend;
use geoseer::dataset::{load_manifest_file, Category};
use geoseer::harness::{render_report, request_for, run_eval, HarnessError, ReportFormat, RunConfig, CSV_COLUMNS};
use geoseer::pipeline::Pipeline;
use geoseer::scoring::SetCounting;
use serde_json::json;

use common::*;

const ADMIN: [&str; 4] = ["Italy", "Lazio", "Rome", "Via del Corso"];

fn street() -> String {
    model_text(&guess_at(&ADMIN, Some((41.9, 12.48)), 0.8))
}

fn city() -> String {
    model_text(&guess_at(&ADMIN[..3], Some((41.9, 12.5)), 0.6))
}

#[tokio::test]
async fn two_backends_share_the_denominator() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        (0..4)
            .map(|i| json!({"id": format!("e{i}"), "category": "daytime", "text": format!("post {i}"),
                            "truth": truth_json(41.9, 12.48, ADMIN)}))
            .collect(),
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let (a_dir, b_dir) = (tmp.path().join("a"), tmp.path().join("b"));
    let a = fixture_pipeline("alpha", &a_dir);
    let b = fixture_pipeline("beta", &b_dir);
    for (i, e) in entries.iter().enumerate() {
        write_entry_fixture(&a_dir, &a, e, &street());
        // beta has no fixture for e3 and only reaches the city elsewhere
        if i < 3 {
            write_entry_fixture(&b_dir, &b, e, &if i == 0 { street() } else { city() });
        }
    }
    let report = run_eval(&entries, &[a, b], &RunConfig::default()).await.unwrap();
    let alpha = report.cell(Category::Daytime, "alpha").unwrap();
    let beta = report.cell(Category::Daytime, "beta").unwrap();
    assert_eq!((alpha.sample_size, alpha.success_count, alpha.accuracy_percent), (4, 4, 100));
    assert_eq!((beta.sample_size, beta.success_count, beta.accuracy_percent), (4, 1, 25));
    assert_eq!(report.metadata.error_count, 1);
    let failed = report.entries.iter().find(|r| r.error.is_some()).unwrap();
    assert_eq!((failed.entry_id.as_str(), failed.backend_id.as_str()), ("e3", "beta"));
    assert!(failed.error.as_deref().unwrap().starts_with("backend:"));

    let table = String::from_utf8(render_report(&report, ReportFormat::Table).unwrap()).unwrap();
    assert!(table.contains("alpha") && table.contains("beta"));
    assert!(table.contains("1 entry failed"), "{table}");
}

#[tokio::test]
async fn multi_angle_sets_count_once_unless_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for (set, n) in [("s1", 3), ("s2", 2)] {
        for i in 0..n {
            let name = format!("{set}-{i}.jpg");
            std::fs::write(tmp.path().join(&name), plain_jpeg(16, 12, 40 + i + n * 10)).unwrap();
            entries.push(json!({"id": format!("{set}-{i}"), "category": "multi_angle_set", "set_id": set,
                                "images": [name], "truth": truth_json(41.9, 12.48, ADMIN)}));
        }
    }
    let manifest = write_manifest(tmp.path(), entries);
    let loaded = load_manifest_file(&manifest, true).unwrap();
    let fx = tmp.path().join("fx");
    let p = fixture_pipeline("geolocator", &fx);
    for e in &loaded {
        // set s1 hits the street from its first angle only; s2 never does
        let reply = if e.id == "s1-0" { street() } else { city() };
        write_entry_fixture(&fx, &p, e, &reply);
    }
    let per_set = run_eval(&loaded, std::slice::from_ref(&p), &RunConfig::default()).await.unwrap();
    let cell = per_set.cell(Category::MultiAngleSet, "geolocator").unwrap();
    assert_eq!((cell.sample_size, cell.success_count, cell.accuracy_percent), (2, 1, 50));

    let config = RunConfig {
        counting: SetCounting::PerImage,
        ..RunConfig::default()
    };
    let per_image = run_eval(&loaded, &[p], &config).await.unwrap();
    let cell = per_image.cell(Category::MultiAngleSet, "geolocator").unwrap();
    assert_eq!((cell.sample_size, cell.success_count, cell.accuracy_percent), (5, 1, 20));
}

#[tokio::test]
async fn repeats_multiply_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![json!({"id": "only", "category": "nighttime", "text": "neon lights",
                    "truth": truth_json(41.9, 12.48, ADMIN)})],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let backend = Arc::new(ScriptedBackend::texts("scripted", [street(), city(), street()]));
    let config = RunConfig {
        repeats: 3,
        max_concurrency: 1,
        ..RunConfig::default()
    };
    let report = run_eval(&entries, &[Pipeline::new(backend)], &config).await.unwrap();
    let cell = report.cell(Category::Nighttime, "scripted").unwrap();
    assert_eq!((cell.sample_size, cell.success_count), (3, 2));
    assert_eq!(report.metadata.repeats, 3);
    let repeats: Vec<u32> = report.entries.iter().map(|r| r.repeat).collect();
    assert_eq!(repeats, [0, 1, 2]);
}

#[tokio::test]
async fn unreadable_images_become_failed_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![
            json!({"id": "gone", "category": "street_view", "images": ["missing.jpg"],
                   "truth": truth_json(41.9, 12.48, ADMIN)}),
            json!({"id": "text", "category": "street_view", "text": "cobblestones",
                   "truth": truth_json(41.9, 12.48, ADMIN)}),
        ],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let backend = Arc::new(ScriptedBackend::texts("scripted", [street()]));
    let report = run_eval(&entries, &[Pipeline::new(backend)], &RunConfig::default()).await.unwrap();
    let cell = report.cell(Category::StreetView, "scripted").unwrap();
    assert_eq!((cell.sample_size, cell.success_count), (2, 1));
    let gone = report.entries.iter().find(|r| r.entry_id == "gone").unwrap();
    assert!(gone.error.as_deref().unwrap().contains("missing.jpg"));
    assert!(!gone.success);
}

#[tokio::test]
async fn unparseable_replies_score_as_unknown() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![json!({"id": "vague", "category": "daytime", "text": "a field",
                    "truth": truth_json(41.9, 12.48, ADMIN)})],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let backend = Arc::new(ScriptedBackend::texts("scripted", ["I can't tell where this is."]));
    let report = run_eval(&entries, &[Pipeline::new(backend)], &RunConfig::default()).await.unwrap();
    let r = &report.entries[0];
    assert_eq!(r.achieved, geoseer::model::GeoGranularity::Unknown);
    assert!(r.error.is_none());
    assert!(r.distance_miles.is_none());
    assert_eq!(report.metadata.error_count, 0);
}

#[tokio::test]
async fn csv_and_json_renderings() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![json!({"id": "q,uote\"d", "category": "social_post", "text": "gelato",
                    "truth": truth_json(41.9, 12.48, ADMIN)})],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let backend = Arc::new(ScriptedBackend::texts("scripted", [city()]));
    let report = run_eval(&entries, &[Pipeline::new(backend)], &RunConfig::default()).await.unwrap();

    let csv = String::from_utf8(render_report(&report, ReportFormat::Csv).unwrap()).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    let row = rdr.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "q,uote\"d");
    assert_eq!(&row[3], "city_town");
    assert_eq!(&row[4], "false");

    let json = render_report(&report, ReportFormat::Json).unwrap();
    assert!(json.ends_with(b"\n"));
    let back: geoseer::scoring::EvalReport = serde_json::from_slice(&json).unwrap();
    assert_eq!(back.cells, report.cells);
    assert!(back.check_consistency().is_ok());
}

#[tokio::test]
async fn empty_inputs_are_rejected() {
    let backend = Arc::new(ScriptedBackend::texts("s", Vec::<String>::new()));
    assert!(matches!(
        run_eval(&[], &[Pipeline::new(backend)], &RunConfig::default()).await,
        Err(HarnessError::EmptyDataset)
    ));
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![json!({"id": "a", "category": "daytime", "text": "x", "truth": truth_json(0.0, 0.0, ADMIN)})],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    assert!(matches!(
        run_eval(&entries, &[], &RunConfig::default()).await,
        Err(HarnessError::NoBackends)
    ));
}

#[test]
fn request_digest_ignores_backend_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        tmp.path(),
        vec![json!({"id": "a", "category": "daytime", "text": "x", "truth": truth_json(0.0, 0.0, ADMIN)})],
    );
    let entries = load_manifest_file(&manifest, false).unwrap();
    let a = request_for(&fixture_pipeline("a", tmp.path()), &entries[0]).unwrap();
    let b = request_for(&fixture_pipeline("b", tmp.path()), &entries[0]).unwrap();
    assert_eq!(
        geoseer::backend::evidence_digest(&a),
        geoseer::backend::evidence_digest(&b)
    );
}
