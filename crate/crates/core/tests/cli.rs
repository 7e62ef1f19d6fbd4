use std::path::Path;
use std::process::Command;

fn msabn(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_msabn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "msabn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    msabn(&["synth", "--out", p(&data), "--classes", "3", "--per-class", "4", "--size", "32", "--correlation", "0.8"]);
    assert!(data.join("manifest.csv").exists());

    let out = msabn(&[
        "train", "--preset", "smoke", "--data", p(&data), "--epochs", "1", "--batch", "4", "--width", "4", "--puzzle",
        "--out", p(&run),
    ]);
    assert!(out.contains("best val acc"), "{out}");
    let ckpt = run.join("best.safetensors");
    assert!(ckpt.exists());
    assert_eq!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let audit = dir.path().join("audit.csv");
    msabn(&["audit", "--ckpt", p(&ckpt), "--data", p(&data), "--threshold", "0.2", "--out", p(&audit)]);
    let text = std::fs::read_to_string(&audit).unwrap();
    assert!(text.starts_with("sample_id,frac_out,total_on_pixels,selected"));
    assert_eq!(text.lines().count(), 13);

    let export = dir.path().join("export");
    msabn(&["export-overlays", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&export)]);
    assert!(export.join("manifest.json").exists());
    assert!(export.join("syn_00000_overlay.png").exists());

    let ft = dir.path().join("ft");
    let out = msabn(&[
        "finetune", "--ckpt", p(&ckpt), "--data", p(&data), "--val-data", p(&data), "--lambda-out", "0.2",
        "--epochs", "1", "--batch", "4", "--control-vanilla", "--out", p(&ft),
    ]);
    assert!(out.contains("vanilla final val acc"), "{out}");
    assert!(ft.join("hitl/metrics.jsonl").exists() && ft.join("vanilla/metrics.jsonl").exists());

    let out = msabn(&["evaluate", "--ckpt", p(&ckpt), "--ckpt", p(&run.join("last")), "--data", p(&data)]);
    assert!(out.contains('±'), "{out}");
}

#[test]
fn convert_cifar_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("data_batch_1.bin");
    let mut bytes = Vec::new();
    for i in 0..3u8 {
        bytes.push(i);
        bytes.extend(std::iter::repeat_n(i * 40, 3072));
    }
    std::fs::write(&bin, bytes).unwrap();
    let out_dir = dir.path().join("png");
    let out = msabn(&["convert-cifar", "--src", p(&bin), "--split", "train", "--out", p(&out_dir)]);
    assert!(out.contains("wrote 3 samples"), "{out}");
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("id,path,label,x_min,y_min,x_max,y_max"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_msabn"))
        .args(["audit", "--ckpt", "/nonexistent/ck", "--data", "/nonexistent"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
