mod common;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use geoseer::backend::{FixtureBackend, ScriptedBackend};
use geoseer::model::{EvidenceBundle, GeoGranularity, ImageEvidence, Language};
use geoseer::pipeline::Pipeline;
use geoseer::session::{SessionConfig, SessionError, SessionManager, SessionStatus};

use common::*;

#[tokio::test]
async fn recorded_scenarios_replay_identically() {
    for scenario in [taipei_scenario(), usc_scenario()] {
        let dir = tempfile::tempdir().unwrap();
        let recorded = record_scenario(&scenario, dir.path()).await;
        let replay = Arc::new(FixtureBackend::new("geolocator", dir.path()));
        let (best, replayed) = run_scenario(&scenario, replay).await;
        assert_eq!(recorded.rounds.len(), replayed.rounds.len());
        for (a, b) in recorded.rounds.iter().zip(&replayed.rounds) {
            assert_eq!(a.request_digest, b.request_digest, "{}", scenario.name);
            assert!(a.guess.same_content(&b.guess));
        }
        assert_eq!(best.last(), Some(&GeoGranularity::Street));
    }
}

#[tokio::test]
async fn usc_best_never_regresses() {
    let scenario = usc_scenario();
    let backend = Arc::new(ScriptedBackend::texts("s", scenario.replies.clone()));
    let (best, state) = run_scenario(&scenario, backend).await;
    let per_round: Vec<GeoGranularity> = state.rounds.iter().map(|r| r.granularity).collect();
    use GeoGranularity::*;
    assert_eq!(per_round, [Country, State, Country, Street]);
    assert_eq!(best, [Country, State, State, Street]);
    assert_eq!(state.best_round().unwrap().round, 4);
    assert_eq!(state.evidence.hints.len(), 3);
}

#[tokio::test]
async fn refinement_prompts_carry_accumulated_evidence() {
    let scenario = taipei_scenario();
    let backend = Arc::new(ScriptedBackend::texts("s", scenario.replies.clone()));
    run_scenario(&scenario, backend.clone()).await;
    let sent = backend.requests();
    assert_eq!(sent.len(), 2);
    assert_eq!(sent[0].attachments.len(), 1);
    assert_eq!(sent[1].attachments.len(), 2);
    assert!(sent[1].user_text.contains("Xinyi District"));
}

#[tokio::test]
async fn full_transcript_embeds_every_round() {
    let scenario = usc_scenario();
    let backend = Arc::new(ScriptedBackend::texts("s", scenario.replies.clone()));
    let manager = SessionManager::in_memory(Pipeline::new(backend.clone()))
        .with_config(SessionConfig { full_transcript: true });
    let s = manager.start_session(scenario.start.clone()).await.unwrap();
    for d in &scenario.deltas {
        manager.add_evidence(&s.session_id, d.clone()).await.unwrap();
    }
    let last = backend.requests().pop().unwrap();
    // rounds 1-3: country, state, country
    assert!(last.user_text.matches("United States").count() >= 3, "{}", last.user_text);
}

#[tokio::test]
async fn persistence_and_frozen_time() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = taipei_scenario();
    let at = DateTime::<Utc>::UNIX_EPOCH;
    let id = {
        let backend = Arc::new(ScriptedBackend::texts("s", scenario.replies.clone()));
        let m = SessionManager::persistent(Pipeline::new(backend), dir.path())
            .unwrap()
            .with_frozen_time(at);
        let s = m.start_session(scenario.start.clone()).await.unwrap();
        m.add_evidence(&s.session_id, scenario.deltas[0].clone()).await.unwrap();
        s.session_id
    };
    let backend = Arc::new(ScriptedBackend::texts("s", Vec::<String>::new()));
    let m = SessionManager::persistent(Pipeline::new(backend), dir.path()).unwrap();
    let s = m.get(&id).unwrap();
    assert_eq!(s.rounds.len(), 2);
    assert_eq!(s.created_at, "1970-01-01T00:00:00.000Z");
    assert_eq!(m.best_guess(&id).unwrap().street(), Some("Songren Road"));
    let closed = m.close(&id).await.unwrap();
    assert_eq!(closed.status, SessionStatus::Closed);
    let again = m
        .add_evidence(&id, EvidenceBundle::new(Language::En).with_hint("x"))
        .await;
    assert!(matches!(again, Err(SessionError::Closed(_))));
    assert!(matches!(m.get("../etc/passwd"), Err(SessionError::NotFound(_))));
}

#[tokio::test]
async fn gps_tagged_images_are_flagged() {
    let jpeg = exif_jpeg(&ExifSpec::camera_with_gps(GpsSpec::los_angeles()), true, 21);
    let backend = Arc::new(ScriptedBackend::texts(
        "s",
        [model_text(&guess_at(&["United States"], None, 0.5))],
    ));
    let m = SessionManager::in_memory(Pipeline::new(backend));
    let s = m
        .start_session(EvidenceBundle::new(Language::En).with_image(ImageEvidence::from_bytes("gps.jpg", jpeg)))
        .await
        .unwrap();
    assert_eq!(s.exif_warnings.len(), 1);
    assert!(s.exif_warnings[0].contains("gps.jpg"));
}

#[tokio::test]
async fn concurrent_sessions_stay_isolated() {
    let replies: Vec<String> = (0..16)
        .map(|i| model_text(&guess_at(&["Country", &format!("State {i}")], None, 0.5)))
        .collect();
    let backend = Arc::new(ScriptedBackend::texts("s", replies));
    let m = Arc::new(SessionManager::in_memory(Pipeline::new(backend)));
    let mut handles = Vec::new();
    for i in 0..8 {
        let m = m.clone();
        handles.push(tokio::spawn(async move {
            let s = m
                .start_session(EvidenceBundle::new(Language::En).with_text(format!("post {i}")))
                .await
                .unwrap();
            m.add_evidence(&s.session_id, EvidenceBundle::new(Language::En).with_hint(format!("hint {i}")))
                .await
                .unwrap()
        }));
    }
    let mut ids = std::collections::HashSet::new();
    for h in handles {
        let s = h.await.unwrap();
        assert_eq!(s.rounds.len(), 2);
        assert_eq!(s.evidence.texts.len(), 1);
        assert_eq!(s.evidence.hints.len(), 1);
        ids.insert(s.session_id);
    }
    assert_eq!(ids.len(), 8);
}
