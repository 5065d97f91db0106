use std::path::Path;
use std::process::{Command, Output};

fn moma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moma")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_report_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = moma(d, &["run", "--task", "retrieve_marker", "--trials", "2", "--phrasings", "1", "--out", "runs"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("retrieve_marker"));
    assert!(d.join("runs/retrieve_marker_s0_p0/transcript.jsonl").exists());
    assert!(d.join("runs/report.csv").exists());

    let report = moma(d, &["report", "--runs", "runs", "--csv"]);
    assert!(report.status.success());
    assert!(stdout(&report).starts_with("task,mode,trials,successes,rate\nretrieve_marker,BUMBLE,2,"));

    let replay = moma(
        d,
        &["run", "--task", "retrieve_marker", "--trials", "2", "--phrasings", "1", "--backend", "replay", "--replay-dir", "runs"],
    );
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(stdout(&replay), stdout(&run));
}

#[test]
fn offline_generation_and_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = moma(d, &["gen-offline", "--per-row", "5", "--seed", "4", "--out", "ds.jsonl"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert_eq!(std::fs::read_to_string(d.join("ds.jsonl")).unwrap().lines().count(), 20);
    let eval = moma(d, &["eval-offline", "--dataset", "ds.jsonl", "--mode", "BUMBLE", "--csv"]);
    assert!(eval.status.success());
    let out = stdout(&eval);
    assert!(out.contains("BUMBLE,call_elevator,5,5,100.0"), "{out}");
    assert!(out.contains("BUMBLE,average,,,100.0"), "{out}");
}

#[test]
fn curation_from_an_annotated_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let b1 = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/b1.json");
    let run = moma(
        d,
        &[
            "run", "--task", "retrieve_soda", "--trials", "4", "--phrasings", "1", "--mode", "COME", "--backend", "lesson",
            "--annotate", "--building", b1, "--out", "train",
        ],
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let curate = moma(d, &["memory", "curate", "--log", "train", "--truth", "train", "--out", "ltm.json"]);
    assert!(curate.status.success(), "{}", String::from_utf8_lossy(&curate.stderr));
    let store: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ltm.json")).unwrap()).unwrap();
    assert_eq!(store["cap"], 3);
    assert!(!store["lessons"].as_object().unwrap().is_empty());

    let with_ltm = moma(
        d,
        &[
            "run", "--task", "retrieve_soda", "--trials", "4", "--seed", "50", "--phrasings", "1", "--backend", "lesson",
            "--ltm", "ltm.json", "--building", b1,
        ],
    );
    assert!(with_ltm.status.success());
    assert!(stdout(&with_ltm).contains("overall            BUMBLE                             100.0%"), "{}", stdout(&with_ltm));
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["run", "--task", "fetch_coffee"][..],
        &["run", "--mode", "GPT"],
        &["run", "--backend", "http"],
        &["run", "--backend", "replay"],
        &["run", "--trials", "0"],
        &["eval-offline", "--dataset", "missing.jsonl"],
        &["report", "--runs", "."],
    ] {
        let o = moma(d, args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed no error");
    }
    std::fs::write(d.join("bad.json"), r#"{"wrong_param": {"call_elevator": 1.5}}"#).unwrap();
    std::fs::write(d.join("ds.jsonl"), "").unwrap();
    let o = moma(d, &["eval-offline", "--dataset", "ds.jsonl", "--error-profile", "bad.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside [0, 1]"));
}
