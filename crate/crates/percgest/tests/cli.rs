use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_percgest");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).args(["--log", "error"]).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let o = Command::new(BIN).output().unwrap();
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["train", "--arch", "perc_cnn"])), 1);
    assert_eq!(code(&run(&["bench", "--bundle", "x", "--calls", "many"])), 1);
    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    let help = stdout(&o);
    for sub in ["synth-data", "train", "eval", "embed", "bench", "stream"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope");
    let o = run(&["eval", "--bundle", p(&nope), "--manifest", p(&nope)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let garbage = dir.path().join("g.pgwb");
    fs::write(&garbage, b"PGWB\x01\x00garbage").unwrap();
    assert_eq!(code(&run(&["bench", "--bundle", p(&garbage), "--calls", "2"])), 2);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["synth-data", "--out", p(&data), "--hits-per-class", "6", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = data.join("manifest.jsonl");
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 6 * 19);
    assert!(data.join("synth_config.json").exists());

    // The VAE has no location head.
    let bundle = dir.path().join("m.pgwb");
    let o = run(&["train", "--manifest", p(&manifest), "--arch", "perc_vae", "--classes", "4", "--hierarchical", "--out", p(&bundle)]);
    assert_eq!(code(&o), 1);
    assert!(!bundle.exists());

    // Divergence is a numeric failure.
    let o = run(&["train", "--manifest", p(&manifest), "--arch", "perc_cnn", "--epochs", "3", "--lr", "1e300", "--out", p(&bundle)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let report = dir.path().join("train.json");
    let args = ["train", "--manifest", p(&manifest), "--arch", "perc_cnn", "--classes", "4", "--hierarchical", "--epochs", "3", "--batch", "32"];
    let o = run(&[&args[..], &["--out", p(&bundle), "--report", p(&report)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&bundle).unwrap();
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["meta"]["architecture"], "perc_cnn");
    assert!(r["metrics"]["locations"]["weighted_f"].is_number());
    let history: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("train.history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 3);

    // Fixed seed: identical bundle bytes.
    let again = dir.path().join("m2.pgwb");
    assert_eq!(code(&run(&[&args[..], &["--out", p(&again)]].concat())), 0);
    assert_eq!(fs::read(&again).unwrap(), first);

    let eval_out = dir.path().join("eval.json");
    let o = run(&["eval", "--bundle", p(&bundle), "--manifest", p(&manifest), "--out", p(&eval_out)]);
    assert_eq!(code(&o), 0);
    let table = stdout(&o);
    assert!(table.contains("W/Avg") && table.contains("fingers") && table.contains("soundhole"));
    let e: serde_json::Value = serde_json::from_slice(&fs::read(&eval_out).unwrap()).unwrap();
    assert_eq!(e["metrics"]["classes"]["total"], 6 * 19);

    // One bad manifest among good ones: the good reports are still written.
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"audio\":\"x.wav\",\"extra\":1}\n").unwrap();
    let reports = dir.path().join("reports");
    let o = run(&["eval", "--bundle", p(&bundle), "--manifest", p(&manifest), p(&bad), p(&manifest), "--out", p(&reports)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("entry 1"));
    assert_eq!(fs::read(reports.join("report_0.json")).unwrap(), fs::read(reports.join("report_2.json")).unwrap());

    // Split filter with no matching entries: an empty report.
    let o = run(&["eval", "--bundle", p(&bundle), "--manifest", p(&manifest), "--split", "test", "--out", p(&eval_out)]);
    assert_eq!(code(&o), 0);
    let e: serde_json::Value = serde_json::from_slice(&fs::read(&eval_out).unwrap()).unwrap();
    assert!(e["metrics"].is_null());

    let points = dir.path().join("points.csv");
    let o = run(&["embed", "--bundle", p(&bundle), "--manifest", p(&manifest), "--subset", "non_kick", "--points", p(&points)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&points).unwrap();
    assert!(csv.starts_with("x,y,hand_part,location,dynamics\n"));
    assert_eq!(csv.lines().count(), 1 + 6 * 19);
    assert!(stdout(&o).contains("KL(dynamics)"));

    let o = run(&["bench", "--bundle", p(&bundle), "--calls", "20"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("Network (us)"));

    let o = run(&["stream", "--bundle", p(&bundle), "--input", p(&data.join("fingers_soundhole.wav")), "--deterministic"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let events: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.len(), 6);
    assert_eq!(events[0]["probs"].as_object().unwrap().len(), 4);
}

#[test]
fn stream_reads_raw_frames_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("m.pgwb");
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synth-data", "--out", p(&data), "--hits-per-class", "6"])), 0);
    let manifest = data.join("manifest.jsonl");
    let o = run(&["train", "--manifest", p(&manifest), "--arch", "tabla_cnn", "--epochs", "1", "--batch", "32", "--out", p(&bundle)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let wav = data.join("thumb_upper_bout.wav");
    let from_file = run(&["stream", "--bundle", p(&bundle), "--input", p(&wav), "--deterministic"]);
    let frames = percgest::wav::read(&wav).unwrap();
    let bytes: Vec<u8> = frames.iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut child = Command::new(BIN)
        .args(["stream", "--bundle", p(&bundle), "--stdin", "--deterministic", "--chunk", "100", "--log", "error"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&bytes).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), stdout(&from_file));
    assert_eq!(stdout(&o).lines().count(), 6);
}
