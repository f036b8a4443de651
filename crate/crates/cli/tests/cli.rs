use std::path::Path;
use std::process::{Command, Output};

fn adventurer(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adventurer"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn verify_single_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = adventurer(&["verify", "--suite", "scan-equivalence"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("PASS scan-equivalence"));
    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verify.json"))).unwrap();
    assert_eq!(report[0]["name"], "scan-equivalence");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn injected_fault_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = adventurer(
        &["verify", "--suite", "heading-flip", "--inject-fault", "flip-off"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("heading-flip"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = adventurer(&["verify", "--suite", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

fn reported_deviation(text: &str) -> f64 {
    let pct = text.split(", ").nth(1).unwrap().trim_end_matches(")\n").trim_end_matches('%');
    pct.parse::<f64>().unwrap() / 100.0
}

#[test]
fn params_match_reference_counts() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["small", "large"] {
        let o = adventurer(&["params", preset], dir.path());
        assert!(o.status.success());
        let dev = reported_deviation(&stdout(&o));
        assert!(dev.abs() <= 0.10, "{preset}: {dev}");
    }
    let o = adventurer(&["params", "--preset", "micro"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("no reference count"));
}

#[test]
fn bad_preset_and_bad_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(adventurer(&["params", "gigantic"], dir.path()).status.code(), Some(2));
    let o = adventurer(&["params", "--set", "depthh=3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("depthh") && err.contains("valid keys"), "{err}");
    assert_eq!(adventurer(&["params", "--set", "depth"], dir.path()).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = adventurer(&["params", "micro"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bench_writes_one_row_per_mixer_and_length() {
    let dir = tempfile::tempdir().unwrap();
    let o = adventurer(
        &["bench", "--lengths", "256,512,1024", "--repeats", "5", "--dim", "32"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("bench.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("config_id,L,ms_median,peak_bytes,macs"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    for mixer in ["mamba2", "causal-attn", "full-attn"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{mixer}-"))).count(), 3);
    }
    let json: serde_json::Value = serde_json::from_str(&read(&dir.path().join("bench.json"))).unwrap();
    assert!(json[0]["time_slope"].is_number());
}

#[test]
fn bench_rejects_bad_lengths() {
    let dir = tempfile::tempdir().unwrap();
    for lengths in ["256,512", "512,256,1024", "256,512,8192"] {
        let o = adventurer(&["bench", "--lengths", lengths], dir.path());
        assert_eq!(o.status.code(), Some(2), "{lengths}");
    }
}

#[test]
fn sweep_heading_flip_has_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = adventurer(
        &["sweep", "--axes", "heading,flip", "--steps", "2", "--count", "8", "--batch", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "heading,flip,final_loss,final_acc");
    assert_eq!(lines.len(), 5);
}

#[test]
fn sweep_rejects_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(adventurer(&["sweep", "--axes", "width"], dir.path()).status.code(), Some(2));
}

#[test]
fn train_toy_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["train-toy", "--seed", "7", "--steps", "6", "--count", "16"];
    assert!(adventurer(&args, a.path()).status.success());
    assert!(adventurer(&args, b.path()).status.success());
    let trace = read(&a.path().join("trace.csv"));
    assert_eq!(trace.lines().count(), 7);
    assert_eq!(trace, read(&b.path().join("trace.csv")));
    assert_eq!(
        std::fs::read(a.path().join("model.ckpt")).unwrap(),
        std::fs::read(b.path().join("model.ckpt")).unwrap()
    );
}

#[test]
fn replay_reproduces_outputs_and_inspect_reads_checkpoint() {
    let first = tempfile::tempdir().unwrap();
    let again = tempfile::tempdir().unwrap();
    let args = ["train-toy", "--seed", "3", "--steps", "4", "--count", "8", "--set", "depth=1"];
    assert!(adventurer(&args, first.path()).status.success());
    let manifest = first.path().join("manifest.json");
    let o = Command::new(env!("CARGO_BIN_EXE_adventurer"))
        .arg("replay")
        .arg(&manifest)
        .arg("--out")
        .arg(again.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "config.txt", "model.ckpt"] {
        assert_eq!(
            std::fs::read(first.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(read(&first.path().join("config.txt")).contains("depth=1"));

    let o = adventurer(
        &["inspect", first.path().join("model.ckpt").to_str().unwrap()],
        again.path(),
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("head.weight") && text.contains("parameters"));
}

#[test]
fn corrupt_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = adventurer(&["inspect", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
}
