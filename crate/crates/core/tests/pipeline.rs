use std::sync::Arc;

use alignui_core::catalog::validate_spec;
use alignui_core::codegen::{emit_abstract_spec, generate_code, CodeGuidance, CodegenError};
use alignui_core::dataset::{fixtures, Mode, PreferenceSelection};
use alignui_core::experiment::{assignment_for, summarize, Condition, GroupBy, SelectionRecord};
use alignui_core::llm::{Gateway, ScriptedProvider};
use alignui_core::reasoning::{fallback_recommendation, reason_ensemble, UserContext};
use alignui_core::replies::{codegen_reply, reasoning_reply};
use alignui_core::selections::{
    preferences, read_log, study_selections, LogEvent, PreferenceEntry, SelectionLog,
};
use alignui_core::{default_catalog, Aspect, ControlKind, PreferenceDataset};

#[tokio::test]
async fn reason_then_generate() {
    let reply = reasoning_reply(
        "Adjust image hue",
        "image_adjust_hue",
        &[
            (
                Aspect::Predictability,
                &[
                    ("Color Wheel", "shows the hue circle"),
                    ("Slider", "fine steps"),
                ],
            ),
            (Aspect::Efficiency, &[("Slider", "one drag")]),
        ],
    );
    let code = "hue = widgets.FloatSlider()\nwheel = ColorWheel()";
    let mut texts = vec![reply; 4];
    texts.push(codegen_reply(
        "Adjust image hue",
        &[ControlKind::ColorWheel, ControlKind::Slider],
        code,
    ));
    let provider = Arc::new(ScriptedProvider::from_texts(texts));
    let gw = Gateway::scripted(provider.clone());

    let full = fixtures::full();
    let ctx = UserContext::new(
        "Adjust image hue",
        vec![Aspect::Predictability, Aspect::Efficiency],
    )
    .unwrap();
    let rec = reason_ensemble(&ctx, Some(&full), &default_catalog(), &gw, 4)
        .await
        .unwrap();
    assert_eq!(
        rec.top(Aspect::Predictability),
        Some(ControlKind::ColorWheel)
    );
    assert_eq!(rec.top(Aspect::Efficiency), Some(ControlKind::Slider));
    assert_eq!(
        rec.kinds(),
        vec![ControlKind::Slider, ControlKind::ColorWheel]
    );

    let ui = generate_code(&rec, &CodeGuidance::default(), &gw)
        .await
        .unwrap();
    assert_eq!(ui.code_text.as_deref(), Some(code));
    let sent = provider.requests();
    assert!(sent[4].user_prompt.contains("Color Wheel"));

    let specs = emit_abstract_spec(&rec, full.task("image_adjust_hue").map(|t| &t.task)).unwrap();
    assert_eq!(specs.len(), 2);
    assert!(specs.iter().all(|s| validate_spec(s).is_empty()));
}

#[tokio::test]
async fn codegen_rejects_off_catalog_envelope() {
    let full = fixtures::full();
    let ctx = UserContext::new("Adjust image hue", vec![Aspect::Efficiency]).unwrap();
    let rec = fallback_recommendation(&ctx, &full).unwrap();
    let bad = r#"{"task": "t", "control_type": "Knob", "control_code": "k = Knob()"}"#;
    let gw = Gateway::scripted(Arc::new(ScriptedProvider::from_texts([bad, bad])));
    match generate_code(&rec, &CodeGuidance::default(), &gw).await {
        Err(CodegenError::Lint(findings)) => {
            assert!(findings.iter().any(|f| f.to_string().contains("Knob")))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dataset_json_round_trip() {
    for d in [
        fixtures::table1(),
        fixtures::full(),
        fixtures::full().subsample(10, 3).unwrap(),
    ] {
        let bytes = d.save();
        let back = PreferenceDataset::load(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.save(), bytes);
    }
}

#[test]
fn conditions_nest_by_size() {
    let full = fixtures::full();
    assert!(Condition::Withoutpref.dataset(&full, 0).unwrap().is_none());
    let mut sizes = Vec::new();
    for c in [
        Condition::Withpref10,
        Condition::Withpref25,
        Condition::Withpref30,
    ] {
        let d = c.dataset(&full, 7).unwrap().unwrap();
        sizes.push(d.total_pieces());
        for (task, rec) in d.cells() {
            for (kind, n) in rec.counts() {
                let (_, base) = full
                    .cells()
                    .find(|(t, r)| t.name == task.name && r.aspect == rec.aspect)
                    .unwrap();
                assert!(n <= base.count(kind));
            }
        }
    }
    assert_eq!(sizes, vec![240, 600, 720]);
}

#[test]
fn log_replay_rebuilds_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("log.jsonl");
    let mut log = SelectionLog::open(&path).unwrap();
    let votes = [
        ("image_adjust_hue", Aspect::Efficiency, "Slider"),
        ("image_adjust_hue", Aspect::Efficiency, "slider"),
    ];
    for (task, aspect, kind) in votes {
        log.append(&LogEvent::Preference(PreferenceEntry {
            timestamp: "2025-01-01T00:00:00Z".into(),
            participant: "p".into(),
            task: task.into(),
            aspect,
            kind: alignui_core::parse_kind(kind).unwrap(),
            reason: "drag".into(),
        }))
        .unwrap();
    }
    let a = assignment_for("p", "k");
    let item = &a.items[0];
    log.append(&LogEvent::Selection(SelectionRecord {
        participant: "p".into(),
        task: item.task.clone(),
        aspect: item.aspect,
        pair: item.pair,
        chosen: item.pair.left(),
        timestamp: "2025-01-01T00:00:01Z".into(),
    }))
    .unwrap();
    drop(log);

    let events = read_log(&path).unwrap();
    assert_eq!(events.len(), 3);
    let selections: Vec<PreferenceSelection> =
        preferences(&events).iter().map(|p| p.selection()).collect();
    let base = fixtures::table1();
    let merged = base.merge(&selections).unwrap();
    assert_eq!(merged.total_pieces(), 92);
    let before = base
        .record("image_adjust_hue", Aspect::Efficiency)
        .unwrap()
        .count(ControlKind::Slider);
    let after = merged
        .record("image_adjust_hue", Aspect::Efficiency)
        .unwrap()
        .count(ControlKind::Slider);
    assert_eq!(after, before + 2);

    let study = study_selections(&events);
    let summary = summarize(&study, GroupBy::Overall);
    assert_eq!(summary.n_selections, 1);
}

#[test]
fn table1_modes() {
    let t1 = fixtures::table1();
    let mut unique = 0;
    for (task, rec) in t1.cells() {
        match t1.mode(&task.name, rec.aspect).unwrap() {
            Mode::Unique(kind, n) => {
                unique += 1;
                assert_eq!(rec.count(kind), n);
                assert!(rec.counts().values().all(|&c| c <= n));
            }
            Mode::Tie(kinds, n) => {
                assert!(kinds.len() > 1 && kinds.iter().all(|k| rec.count(*k) == n))
            }
        }
    }
    assert!(unique > 0);
}
