use std::fs;
use std::path::Path;
use std::process::Command;

use guidex_cli::pipeline::{self, bundled_fixtures, fixture_run_config, run_pipeline, FailureKind};
use guidex_cli::service::{serve_stdio, Service};
use guidex_core::extraction::{FixtureBackend, ScriptedBackend};
use guidex_core::verifier::{InstanceStore, RewardMode};
use serde_json::Value as Json;

fn guidex(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_guidex")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn t1_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/t1.json").display().to_string()
}

fn fixture_outputs() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = bundled_fixtures();
    run_pipeline(&root.join("corpus"), dir.path(), &FixtureBackend::new(root.join("llm")), &fixture_run_config())
        .unwrap();
    dir
}

fn store_of(dir: &Path) -> InstanceStore {
    InstanceStore::load(
        &dir.join(pipeline::TREES_DIR),
        &[&dir.join(pipeline::FACTUAL_FILE), &dir.join(pipeline::COUNTERFACTUAL_FILE)],
    )
    .unwrap()
}

#[test]
fn empty_corpus_yields_zero_manifest_and_no_datasets() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let backend = ScriptedBackend::new(|_| panic!("no requests expected"));
    let manifest = run_pipeline(corpus.path(), out.path(), &backend, &fixture_run_config()).unwrap();
    let counts = manifest.counts.to_json();
    assert!(counts.as_object().unwrap().values().all(|v| v == 0), "{counts}");
    assert!(manifest.digests.is_empty());
    assert!(out.path().join(pipeline::MANIFEST_FILE).exists());
    assert!(!out.path().join(pipeline::FACTUAL_FILE).exists());
    assert!(!out.path().join(pipeline::COUNTERFACTUAL_FILE).exists());
}

#[test]
fn fixture_run_counts_every_stage() {
    let dir = fixture_outputs();
    let m: Json = serde_json::from_str(&fs::read_to_string(dir.path().join(pipeline::MANIFEST_FILE)).unwrap()).unwrap();
    let c = &m["counts"];
    assert_eq!((c["documents"].as_u64(), c["deduplicated"].as_u64()), (Some(5), Some(4)));
    assert_eq!(c["chunks"], 5);
    assert_eq!((c["candidates"].as_u64(), c["validated_recommendations"].as_u64()), (Some(8), Some(5)));
    assert_eq!((c["validated_trees"].as_u64(), c["discarded_drafts"].as_u64()), (Some(4), Some(1)));
    assert_eq!(m["discarded"][0]["candidate"], "hypertension-2017-c0-r1");
    assert!(m.get("generated_at").is_none());
    // the repaired draft made it through
    assert!(dir.path().join("trees/asthma-2020-c0-r0.json").exists());
    assert!(!dir.path().join("trees/lipids-2013-c0-r0.json").exists());
}

#[test]
fn missing_fixture_is_a_backend_failure_with_partial_manifest() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(
        &bundled_fixtures().join("corpus"),
        out.path(),
        &FixtureBackend::new(empty.path()),
        &fixture_run_config(),
    )
    .unwrap_err();
    assert_eq!(err.kind, FailureKind::Backend);
    assert_eq!(err.stage, "extract");
    assert_eq!(err.partial.counts.deduplicated, 4);
    assert_eq!(err.partial.counts.validated_trees, 0);
}

#[test]
fn stdio_replies_line_for_line_and_survives_garbage() {
    let dir = fixture_outputs();
    let svc = Service::new(store_of(dir.path()), RewardMode::Strict);
    let first: Json =
        serde_json::from_str(fs::read_to_string(dir.path().join(pipeline::FACTUAL_FILE)).unwrap().lines().next().unwrap())
            .unwrap();
    let id = first["instance_id"].as_str().unwrap();
    let label = first["label"].as_str().unwrap();
    let good = serde_json::json!({"instance_id": id, "response": format!("<think>x</think><answer>{label}</answer>")});
    let input = format!(
        "{good}\nnot json\n\n{{\"instance_id\":\"nope\",\"response\":\"r\"}}\n[{good},{good}]\n"
    );
    let mut output = Vec::new();
    serve_stdio(&svc, input.as_bytes(), &mut output).unwrap();
    let lines: Vec<Json> = String::from_utf8(output).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["reward"], 1);
    assert_eq!(lines[1]["error"], "bad_request");
    assert_eq!(lines[2]["error"], "unknown_instance");
    assert_eq!(lines[3].as_array().unwrap().len(), 2);
    let keys: Vec<&str> = lines[0].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["instance_id", "reward", "format", "answer", "hidden_match", "consistency", "error"]);
}

#[test]
fn binary_exit_codes() {
    let t1 = t1_path();
    let (code, out, _) = guidex(&["validate", &t1]);
    assert_eq!(code, 0);
    assert!(out.contains("\"ok\":true"));
    assert_eq!(guidex(&["no-such-command"]).0, 1);
    assert_eq!(guidex(&["exec", &t1, "--assign", "ldl"]).0, 1);

    let bad = tempfile::NamedTempFile::new().unwrap();
    let doc = fs::read_to_string(&t1).unwrap().replace(
        r#"{"name":"diabetes","kind":"boolean"}"#,
        r#"{"name":"diabetes","kind":"boolean"},{"name":"smoker","kind":"boolean"}"#,
    );
    fs::write(bad.path(), doc).unwrap();
    let (code, out, _) = guidex(&["validate", bad.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(out.contains("unused_variable"));

    let corpus = bundled_fixtures().join("corpus");
    let out_dir = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let (code, _, err) = guidex(&[
        "run",
        corpus.to_str().unwrap(),
        "--out",
        out_dir.path().to_str().unwrap(),
        "--fixtures",
        empty.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn binary_exec_decides_and_reports_residuals() {
    let t1 = t1_path();
    let (_, out, _) = guidex(&["exec", &t1, "--assign", "age=60", "diabetes=false", "ldl=200"]);
    let v: Json = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["output"], "high-intensity statin");
    let (_, out, _) = guidex(&["exec", &t1, "--assign", "age=30"]);
    let v: Json = serde_json::from_str(out.trim()).unwrap();
    assert!(v["output"].is_null());
    assert_eq!(v["blocking"], serde_json::json!(["diabetes"]));
}

#[test]
fn binary_run_matches_golden_manifest() {
    let root = bundled_fixtures();
    let out = tempfile::tempdir().unwrap();
    let (code, _, err) = guidex(&[
        "run",
        root.join("corpus").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--fixtures",
        root.join("llm").to_str().unwrap(),
        "--seed",
        "7",
        "--soft-limit",
        "120",
        "--per-path",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    let written: Json = serde_json::from_slice(&fs::read(out.path().join(pipeline::MANIFEST_FILE)).unwrap()).unwrap();
    assert!(written.get("generated_at").is_some());
    let golden: Json = serde_json::from_slice(&fs::read(root.join("golden/manifest.json")).unwrap()).unwrap();
    assert_eq!(pipeline::strip_timestamp(&written), golden);
}
