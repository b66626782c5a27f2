//! End-to-end checks of the `malite` binary.

use std::path::Path;
use std::process::Command;

fn malite() -> Command {
    Command::new(env!("CARGO_BIN_EXE_malite"))
}

fn write_dataset(root: &Path) {
    for (class, dominant) in [("alpha", 30u8), ("beta", 200u8)] {
        let dir = root.join(class);
        std::fs::create_dir(&dir).unwrap();
        for i in 0..8 {
            let mut data = vec![dominant; 2500 + i * 37];
            for (j, b) in data.iter_mut().enumerate() {
                if j % 5 == 0 {
                    *b = (j % 251) as u8;
                }
            }
            std::fs::write(dir.join(format!("f{i}.bin")), data).unwrap();
        }
    }
}

#[test]
fn convert_keeps_native_width_from_the_size_band() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("five_kb.bin");
    std::fs::write(&input, vec![0xABu8; 5 * 1024]).unwrap();
    let output = dir.path().join("out.mlim");
    // missing required argument is a usage error: exit code 2
    let status = malite().args(["convert", input.to_str().unwrap()]).status();
    assert_eq!(status.unwrap().code(), Some(2));

    let ok = malite()
        .args(["convert", input.to_str().unwrap(), output.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(ok.success());
    let bytes = std::fs::read(&output).unwrap();
    assert_eq!(&bytes[..4], b"MLIM");
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    assert_eq!(width, 32, "5 KB file sits in the 32-pixel band");

    // resized PNG variant
    let png = dir.path().join("out.png");
    let ok = malite()
        .args([
            "convert",
            input.to_str().unwrap(),
            png.to_str().unwrap(),
            "--side",
            "256",
            "--png",
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    assert_eq!(&std::fs::read(&png).unwrap()[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn featurize_train_eval_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let features = dir.path().join("features.csv");
    let model = dir.path().join("model.mlte");

    let ok = malite()
        .args([
            "featurize",
            dir.path().to_str().unwrap(),
            features.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    let header = std::fs::read_to_string(&features).unwrap();
    assert!(header.starts_with("path,label,f0,"));

    let ok = malite()
        .args([
            "train-hrf",
            features.to_str().unwrap(),
            model.to_str().unwrap(),
            "--estimators",
            "7",
            "--seed",
            "3",
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    assert_eq!(&std::fs::read(&model).unwrap()[..4], b"MLTE");

    // identical reports across reruns and thread counts
    let mut reports = Vec::new();
    for threads in ["1", "4", "1"] {
        let report = dir.path().join(format!("report_{threads}.json"));
        let ok = malite()
            .env("MALITE_THREADS", threads)
            .args([
                "eval",
                model.to_str().unwrap(),
                features.to_str().unwrap(),
                "--report",
                report.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            ok.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&ok.stderr)
        );
        assert!(String::from_utf8_lossy(&ok.stdout).contains("accuracy"));
        reports.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);

    // model retrained with the same seed is byte-identical
    let model2 = dir.path().join("model2.mlte");
    let ok = malite()
        .env("MALITE_THREADS", "4")
        .args([
            "train-hrf",
            features.to_str().unwrap(),
            model2.to_str().unwrap(),
            "--estimators",
            "7",
            "--seed",
            "3",
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    assert_eq!(
        std::fs::read(&model).unwrap(),
        std::fs::read(&model2).unwrap()
    );
}

#[test]
fn cost_default_mn_meets_budgets() {
    let out = malite()
        .args(["cost", "default-mn", "--json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let params = report["params"].as_u64().unwrap() as f64;
    let mult_adds = report["mult_adds"].as_u64().unwrap() as f64;
    let size = report["size_bytes"].as_u64().unwrap() as f64;
    assert!((params - 0.18e6).abs() / 0.18e6 < 0.05);
    assert!((mult_adds - 303.54e6).abs() / 303.54e6 < 0.05);
    assert!((size - 0.81 * 1024.0 * 1024.0).abs() / (0.81 * 1024.0 * 1024.0) < 0.15);

    let table = malite().args(["cost", "default-hrf"]).output().unwrap();
    let text = String::from_utf8_lossy(&table.stdout).into_owned();
    assert!(text.contains("131072"));
    assert!(text.contains("765"));
}

#[test]
fn sweep_writes_sorted_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let out = dir.path().join("sweep.csv");
    let ok = malite()
        .args([
            "sweep",
            dir.path().to_str().unwrap(),
            out.to_str().unwrap(),
            "--bins",
            "16",
            "--ph",
            "32",
            "--estimators",
            "5",
            "--seed",
            "1",
        ])
        .status()
        .unwrap();
    assert!(ok.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(
        "label,estimators,status,accuracy,macro_precision,micro_precision,macro_recall,macro_f1"
    ));
    assert_eq!(text.lines().count(), 3); // header + two widths (32, 256)
}

#[test]
fn data_errors_exit_with_code_three() {
    let out = malite()
        .args(["eval", "/nonexistent/model.mlte", "also-missing"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(msg.starts_with("error:"), "stderr was: {msg}");
}
