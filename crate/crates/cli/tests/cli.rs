use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn simcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simcal"))
        .args(args)
        .env("SIMCAL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = simcal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn small_benchmark(dir: &Path) {
    fs::write(
        dir.join("spec.in.json"),
        r#"{"d": 8, "n_classes": 20, "n_subjects": 3, "q_per_class_per_subject": 2, "n_hub": 2}"#,
    )
    .unwrap();
    ok(&[
        "gen-synth",
        "--spec",
        &p(dir, "spec.in.json"),
        "--out",
        &p(dir, "data"),
    ]);
}

#[test]
fn generate_calibrate_evaluate_diagnose() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    small_benchmark(d);
    for f in [
        "queries.emb1",
        "queries.json",
        "candidates.emb1",
        "candidates.json",
        "spec.json",
    ] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    let q = p(d, "data/queries.emb1");
    let c = p(d, "data/candidates.emb1");
    ok(&[
        "calibrate",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--out",
        &p(d, "a.sim1"),
        "--save-models",
        &p(d, "m.wmd1"),
        "--snew-out",
        &p(d, "snew.sim1"),
    ]);
    ok(&[
        "calibrate",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--out",
        &p(d, "b.sim1"),
    ]);
    let a = fs::read(d.join("a.sim1")).unwrap();
    assert_eq!(a, fs::read(d.join("b.sim1")).unwrap());
    assert_eq!(&a[..4], b"SIM1");
    assert_eq!(a[24], 4, "final stage byte");

    // frozen models fitted on the same batch reproduce the output
    ok(&[
        "calibrate",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--out",
        &p(d, "c.sim1"),
        "--load-models",
        &p(d, "m.wmd1"),
    ]);
    assert_eq!(a, fs::read(d.join("c.sim1")).unwrap());

    let out = ok(&[
        "evaluate",
        "--scores",
        &p(d, "a.sim1"),
        "--meta",
        &p(d, "data/queries.json"),
        "--k",
        "1,5",
        "--report",
        &p(d, "report.json"),
        "--csv",
        &p(d, "pop.csv"),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("top-K"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
    let top5 = report["top_k_acc"]["5"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top5));
    assert_eq!(report["n_queries"], 120);
    let csv = fs::read_to_string(d.join("pop.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);

    ok(&[
        "diagnose",
        "--snew",
        &p(d, "snew.sim1"),
        "--out",
        &p(d, "evidence.json"),
    ]);
    let ev: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("evidence.json")).unwrap()).unwrap();
    let pop: u64 = ev["popularity"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(pop, 120 * 5);
    assert!(ev["anchor_count"].as_u64().unwrap() >= ev["mnn_count"].as_u64().unwrap());
}

#[test]
fn sweeps_write_json_and_text() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    small_benchmark(d);
    let q = p(d, "data/queries.emb1");
    let c = p(d, "data/candidates.emb1");
    let out = ok(&[
        "sweep",
        "--mode",
        "stages",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--k",
        "1,5",
        "--out",
        &p(d, "stages.json"),
        "--text",
        &p(d, "stages.txt"),
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("raw-cosine") && text.contains("+SAW+CW+Ada-CSLS+PoE"));
    assert_eq!(fs::read_to_string(d.join("stages.txt")).unwrap(), text);
    let rows: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("stages.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);

    ok(&[
        "sweep",
        "--mode",
        "beta",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--k",
        "1,5",
        "--betas",
        "0,1.9",
        "--dev-subjects",
        "2",
        "--window",
        "20",
        "--out",
        &p(d, "beta.json"),
    ]);
    let beta: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("beta.json")).unwrap()).unwrap();
    assert_eq!(beta["rows"].as_array().unwrap().len(), 2);
    assert_eq!(
        beta["rows"][0]["summary"]["folds"],
        serde_json::json!([0, 1])
    );
    assert!(beta["selected_beta"].is_number());
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    small_benchmark(d);
    let q = p(d, "data/queries.emb1");
    let c = p(d, "data/candidates.emb1");

    let missing = simcal(&[
        "calibrate",
        "--queries",
        &p(d, "nope.emb1"),
        "--candidates",
        &c,
        "--out",
        &p(d, "x.sim1"),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    fs::write(d.join("junk.sim1"), b"JUNKJUNKJUNKJUNK").unwrap();
    let junk = simcal(&[
        "diagnose",
        "--snew",
        &p(d, "junk.sim1"),
        "--out",
        &p(d, "e.json"),
    ]);
    assert_eq!(junk.status.code(), Some(3));

    fs::write(d.join("typo.json"), r#"{"poe_betta": 2.0}"#).unwrap();
    let typo = simcal(&[
        "calibrate",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--config",
        &p(d, "typo.json"),
        "--out",
        &p(d, "x.sim1"),
    ]);
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("poe_betta"));

    ok(&[
        "calibrate",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--out",
        &p(d, "f.sim1"),
    ]);
    let wrong_stage = simcal(&[
        "diagnose",
        "--snew",
        &p(d, "f.sim1"),
        "--out",
        &p(d, "e.json"),
    ]);
    assert_eq!(wrong_stage.status.code(), Some(2));

    let swapped = simcal(&[
        "calibrate",
        "--queries",
        &c,
        "--candidates",
        &q,
        "--out",
        &p(d, "x.sim1"),
    ]);
    assert_eq!(swapped.status.code(), Some(2));

    let mut meta: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("data/queries.json")).unwrap()).unwrap();
    meta["label_of"] = serde_json::Value::Null;
    fs::write(d.join("nolabels.json"), serde_json::to_vec(&meta).unwrap()).unwrap();
    let unlabeled = simcal(&[
        "evaluate",
        "--scores",
        &p(d, "f.sim1"),
        "--meta",
        &p(d, "nolabels.json"),
        "--report",
        &p(d, "r.json"),
    ]);
    assert_eq!(unlabeled.status.code(), Some(2));

    let too_wide = simcal(&[
        "sweep",
        "--mode",
        "stages",
        "--queries",
        &q,
        "--candidates",
        &c,
        "--window",
        "41",
        "--out",
        &p(d, "s.json"),
    ]);
    assert_eq!(too_wide.status.code(), Some(2));
}
