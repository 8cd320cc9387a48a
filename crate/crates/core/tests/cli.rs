//! Runs the `f0track` binary through a small synthetic experiment.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn f0track(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_f0track"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = f0track(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Shrinks the generated manifest so training takes a fraction of a second.
fn shrink_manifest(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let text = text
        .lines()
        .map(|l| {
            if l.starts_with("hidden_units =") {
                "hidden_units = 6".to_string()
            } else if l.starts_with("hidden_layers =") {
                "hidden_layers = 1".to_string()
            } else if l.starts_with("epochs =") {
                "epochs = 2".to_string()
            } else if l.starts_with("p =") {
                "p = 1".to_string()
            } else if l.starts_with("fft_size =") {
                "fft_size = 512".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(path, text).unwrap();
}

#[test]
fn full_pipeline_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    ok(&[
        "synth",
        "--out",
        root,
        "--n-train",
        "4",
        "--n-cv",
        "1",
        "--n-test",
        "2",
        "--duration",
        "0.6",
        "--noise-seconds",
        "2",
        "--snr-db",
        "0,10",
        "--seed",
        "5",
    ]);
    let manifest = dir.path().join("manifest.toml");
    shrink_manifest(&manifest);
    let m = manifest.to_str().unwrap();
    ok(&["mix", "--manifest", m]);
    assert!(dir
        .path()
        .join("run/noisy/train/clean/syn0000.wav")
        .exists());
    assert!(dir
        .path()
        .join("run/noisy/test/white_0/syn0005.wav")
        .exists());
    assert!(!dir.path().join("run/noisy/test/clean").exists());
    for kind in ["dnn_reg", "rnn_reg", "dnn_hmm"] {
        ok(&["train", "--kind", kind, "--manifest", m, "--jobs", "1"]);
        assert!(dir.path().join(format!("run/models/{kind}.f0tk")).exists());
        let log =
            fs::read_to_string(dir.path().join(format!("run/models/{kind}_log.csv"))).unwrap();
        assert_eq!(log.lines().count(), 3);
    }
    ok(&["track", "--manifest", m]);
    let report = ok(&["eval", "--manifest", m]);
    assert_eq!(
        report,
        fs::read_to_string(dir.path().join("run/report.csv")).unwrap()
    );
    let lines: Vec<&str> = report.lines().collect();
    assert!(lines[0].starts_with("tracker,noise,snr_db"));
    // 4 trackers x 2 SNRs of one noise.
    assert_eq!(lines.len(), 1 + 8, "{report}");
    let by_utt = fs::read_to_string(dir.path().join("run/report_by_utterance.csv")).unwrap();
    assert_eq!(by_utt.lines().count(), 1 + 8 * 2);

    // Direct mode prints a contour per file.
    let wav = dir.path().join("wav/syn0005.wav");
    let csv = ok(&["track", "--model", "yin", wav.to_str().unwrap()]);
    assert!(csv.starts_with("time_s,f0_hz,voiced\n"));
    let model = dir.path().join("run/models/rnn_reg.f0tk");
    let a = ok(&[
        "track",
        "--model",
        model.to_str().unwrap(),
        wav.to_str().unwrap(),
    ]);
    let b = ok(&[
        "track",
        "--model",
        model.to_str().unwrap(),
        wav.to_str().unwrap(),
    ]);
    assert_eq!(a, b);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "trackers = [\"nope\"]\n").unwrap();
    assert_eq!(
        f0track(&["mix", "--manifest", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    let missing_wav = dir.path().join("missing.wav");
    assert_eq!(
        f0track(&["track", "--model", "yin", missing_wav.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
    let junk = dir.path().join("junk.f0tk");
    fs::write(&junk, b"not a model").unwrap();
    let wav = dir.path().join("x.wav");
    assert_eq!(
        f0track(&[
            "track",
            "--model",
            junk.to_str().unwrap(),
            wav.to_str().unwrap()
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        f0track(&["train", "--kind", "crepe"]).status.code(),
        Some(2)
    );
}
