use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flatcusp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatcusp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn classify_model_certifies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = flatcusp(&[
        "classify",
        "--chart",
        "model_c0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out);
    assert_eq!(s["passed"], true);
    assert!(s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
    for f in ["certificate.json", "reports.json", "cusp_points.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn fold_control_exits_one_and_names_the_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = flatcusp(&[
        "classify",
        "--chart",
        "fold_control",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL condition_i"), "{text}");
    assert_eq!(summary(&out)["passed"], false);
}

#[test]
fn config_errors_exit_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("malformed.json", "{ \"chart\": "),
        (
            "unknown_key.json",
            "{ \"chart\": \"model_c0\", \"colour\": 1 }",
        ),
        ("wrong_type.json", "{ \"seeds\": \"many\" }"),
        ("wrong_subcommand.json", "{ \"subcommand\": \"radon\" }"),
        ("bad_tolerance.json", "{ \"containment_tol\": -1.0 }"),
    ];
    for (name, text) in cases {
        let cfg = tmp.path().join(name);
        std::fs::write(&cfg, text).unwrap();
        let out = tmp.path().join(format!("out_{name}"));
        let o = flatcusp(&[
            "compose",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists(), "{name} wrote artifacts");
    }
    let out = tmp.path().join("unknown_chart");
    let o = flatcusp(&[
        "classify",
        "--chart",
        "no_such_chart",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = flatcusp(&[
        "classify",
        "--config",
        tmp.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn example_configs_resolve() {
    for (sub, file) in [
        ("classify", "classify.json"),
        ("compose", "compose.json"),
        ("umbrella", "umbrella.json"),
        ("symbol", "symbol.json"),
        ("radon", "radon.json"),
        ("caustics", "caustics.json"),
        ("caustics", "caustics_constant.json"),
    ] {
        let cfg = configs().join(file);
        let o = flatcusp(&[sub, "--config", cfg.to_str().unwrap(), "--dry-run"]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{file}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["subcommand"], sub);
    }
}

#[test]
fn partial_nested_keys_merge_with_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("r.json");
    std::fs::write(&cfg, r#"{ "grid": { "n": 40 }, "seed": 9 }"#).unwrap();
    let o = flatcusp(&["radon", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["grid"]["n"], 40);
    assert_eq!(v["grid"]["hi"], 1.0);
    assert_eq!(v["seed"], 9);
    let o = flatcusp(&[
        "radon",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--dry-run",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 4);
}

#[test]
fn same_seed_same_bytes_other_seed_other_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: &str| {
        let out = tmp.path().join(tag);
        let o = flatcusp(&[
            "compose",
            "--seeds",
            "60",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stdout)
        );
        (
            std::fs::read(out.join("composition.csv")).unwrap(),
            std::fs::read(out.join("summary.json")).unwrap(),
        )
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn caustics_constant_speed_writes_empty_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{ "model": { "kind": "constant", "c": 1.5 }, "grid": { "n1": 5, "n2": 3 } }"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = flatcusp(&[
        "caustics",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out);
    assert_eq!(s["results"]["folds"], 0);
    assert_eq!(s["results"]["cusps"], 0);
    let rays = std::fs::read_to_string(out.join("rays.csv")).unwrap();
    assert!(rays.starts_with("a1,a2,t,x1,x2,x3"));
    assert!(rays.lines().count() > 15);
}

#[test]
fn radon_small_grid_writes_field_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("r.json");
    std::fs::write(&cfg, r#"{ "grid": { "n": 32 }, "locus": { "samples": 21 }, "baseline_trials": 1, "coverage_min": 0.01, "baseline_max": 1.0 }"#).unwrap();
    let out = tmp.path().join("o");
    let o = flatcusp(&[
        "radon",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    let raw = flatcusp::export::read_raw_f32(&out.join("normal_image.f32")).unwrap();
    assert_eq!(raw.len(), 32 * 32 * 32);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("normal_image.json")).unwrap())
            .unwrap();
    assert_eq!(side["dims"], serde_json::json!([32, 32, 32]));
    assert_eq!(side["slices"].as_array().unwrap().len(), 3);
    let pgm = std::fs::read(out.join("slice_z.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
}

#[test]
fn umbrella_and_symbol_pass_with_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["umbrella", "symbol"] {
        let out = tmp.path().join(sub);
        let o = flatcusp(&[sub, "--out", out.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{sub}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
    }
    let fits: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("symbol/fits.json")).unwrap(),
    )
    .unwrap();
    let fits = fits.as_array().unwrap();
    assert_eq!(fits.len(), 4);
    for f in fits {
        for k in ["instance", "branch", "exponent", "stderr", "n_samples"] {
            assert!(f.get(k).is_some(), "{k}");
        }
    }
}
