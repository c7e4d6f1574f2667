use std::path::Path;
use std::process::{Command, Output};

fn mmpoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmpoint"))
        .args(args)
        .output()
        .expect("spawn mmpoint")
}

fn ok(args: &[&str]) -> String {
    let out = mmpoint(args);
    assert!(
        out.status.success(),
        "mmpoint {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
  "m": 2,
  "batch_size": 4,
  "epochs": 2,
  "lr": 0.002,
  "points_per_cloud": 64,
  "proj": { "d_intra": 8, "d_cross": [12, 16] },
  "encoder": { "k_nn": 4, "edge_widths": [8, 8], "image_widths": [4, 8], "resolution": 32 }
}"#;

#[test]
fn end_to_end_on_a_tiny_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("run-config.json");
    let ckpt = dir.path().join("run.ckpt");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();

    ok(&[
        "gen-data", "--classes", "3", "--per-class", "5", "--points", "128", "--views", "24", "--res", "32",
        "--seed", "1", "--out", s(&data),
    ]);
    assert!(data.join("manifest.json").exists());

    let out = ok(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt), "--seed", "3"]);
    assert!(out.contains("trained 6 steps"), "{out}");
    assert!(dir.path().join("run.ckpt.history.csv").exists());
    assert!(dir.path().join("run.ckpt.run.json").exists());
    let history = std::fs::read_to_string(dir.path().join("run.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 7);
    assert!(history.starts_with("step,intra,inter_level_1,inter_level_2,overall,mi_bound"));

    let probe: serde_json::Value = serde_json::from_str(&ok(&["eval", "probe", "--ckpt", s(&ckpt), "--data", s(&data)])).unwrap();
    let acc = probe["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&acc));

    let fs: serde_json::Value = serde_json::from_str(&ok(&[
        "eval", "fewshot", "--ckpt", s(&ckpt), "--data", s(&data), "--n-way", "3", "--k-shot", "2", "--queries", "2",
        "--runs", "3", "--seed", "4",
    ]))
    .unwrap();
    assert_eq!(fs["runs"].as_array().unwrap().len(), 3);

    let emb = dir.path().join("emb.csv");
    ok(&["export", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&emb)]);
    let csv = std::fs::read_to_string(&emb).unwrap();
    assert_eq!(csv.lines().count(), 1 + 15);
    assert!(csv.starts_with("label,f0,"));

    let table = dir.path().join("views.csv");
    let out = ok(&[
        "ablate", "--axis", "views", "--values", "1,2", "--config", s(&cfg), "--data", s(&data), "--out", s(&table),
    ]);
    assert!(out.contains("views"), "{out}");
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 3);
}

#[test]
fn same_seed_gives_identical_files_and_resume_extends() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run-config.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    for d in [&d1, &d2] {
        ok(&["gen-data", "--classes", "2", "--per-class", "5", "--points", "96", "--res", "32", "--seed", "7", "--out", s(d)]);
    }
    assert_eq!(
        std::fs::read(d1.join("manifest.json")).unwrap(),
        std::fs::read(d2.join("manifest.json")).unwrap()
    );

    let (c1, c2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    for c in [&c1, &c2] {
        ok(&["pretrain", "--config", s(&cfg), "--data", s(&d1), "--out", s(c), "--seed", "5"]);
    }
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());

    let longer = dir.path().join("longer.json");
    std::fs::write(&longer, TINY_CONFIG.replace("\"epochs\": 2", "\"epochs\": 3")).unwrap();
    let out = ok(&["pretrain", "--config", s(&longer), "--data", s(&d1), "--out", s(&c1), "--seed", "5", "--resume"]);
    assert!(out.contains("trained 6 steps"), "{out}");

    let other = dir.path().join("other.json");
    std::fs::write(&other, TINY_CONFIG.replace("0.002", "0.003")).unwrap();
    let bad = mmpoint(&["pretrain", "--config", s(&other), "--data", s(&d1), "--out", s(&c1), "--seed", "5", "--resume"]);
    assert!(!bad.status.success());
}

#[test]
fn failures_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert!(!mmpoint(&["gen-data", "--views", "12", "--out", s(&out)]).status.success());
    assert!(!mmpoint(&["gen-data", "--res", "48", "--classes", "2", "--per-class", "2", "--out", s(&out)]).status.success());
    let missing = dir.path().join("missing.json");
    assert!(!mmpoint(&["pretrain", "--config", s(&missing), "--out", s(&out)]).status.success());
    assert!(!mmpoint(&["eval", "probe", "--ckpt", s(&missing), "--data", s(&out)]).status.success());
    assert!(!mmpoint(&["ingest", "--hdf5", s(&missing), "--out", s(&out)]).status.success());
    assert!(!mmpoint(&["ablate", "--axis", "colour", "--config", s(&missing)]).status.success());

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{ "m": 2, "proj": { "d_intra": 16, "d_cross": [12, 16] } }"#).unwrap();
    let r = mmpoint(&["pretrain", "--config", s(&bad_cfg), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("cross <= intra"));
}
