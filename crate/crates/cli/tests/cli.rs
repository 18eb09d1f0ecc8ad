use std::path::{Path, PathBuf};
use std::process::Command;

use sqbsde_cli::{parse, run, CliError};

mod common;
use common::{invalid_configs, mutate, BASE};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_configs_rerun_bit_identical() {
    let list = shipped();
    assert!(list.len() >= 10);
    for p in list {
        let cfg = sqbsde_cli::load(&p).unwrap();
        let a = run(&cfg).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let b = run(&cfg).unwrap();
        assert_eq!(a, b, "{}", p.display());
        assert!(a.files.contains_key("summary.json"));
        for (name, body) in &a.files {
            assert!(!body.contains('\r'), "{name} has CR line endings");
        }
    }
}

#[test]
fn lognormal_headline() {
    let cfg = sqbsde_cli::load(&configs_dir().join("lognormal.toml")).unwrap();
    let r = run(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.files["summary.json"]).unwrap();
    let y0 = v["y0"]["value"].as_f64().unwrap();
    let se = v["y0"]["se"].as_f64().unwrap();
    let oracle = v["oracle"]["value"].as_f64().unwrap();
    assert!((oracle - 1.5f64.exp()).abs() < 1e-9);
    assert!(((y0 - oracle) / oracle).abs() < 0.02);
    assert!(se > 0.0);
}

#[test]
fn convergence_error_decreases() {
    let cfg = sqbsde_cli::load(&configs_dir().join("convergence.toml")).unwrap();
    let r = run(&cfg).unwrap();
    let rmse: Vec<f64> = r.files["convergence.csv"]
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(rmse.windows(2).all(|w| w[1] < w[0]), "{rmse:?}");
}

#[test]
fn invalid_configs_are_rejected_with_positions() {
    let list = invalid_configs();
    assert!(list.len() >= 20);
    for (name, src) in list {
        match parse(&src) {
            Err(e @ CliError::Validation { .. }) => {
                assert_eq!(e.exit_code(), 2, "{name}");
                let CliError::Validation { line, column, .. } = &e else { unreachable!() };
                assert!(*line >= 1 && *column >= 1, "{name}");
                assert!(e.to_string().contains("line"), "{name}: {e}");
            }
            other => panic!("{name}: expected a validation error, got {other:?}"),
        }
    }
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_sqbsde");
    let dir = std::env::temp_dir().join(format!("sqbsde-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    let bad = dir.join("bad.toml");
    std::fs::write(&bad, mutate("alpha = 0.0", "alpha = -1")).unwrap();
    let out = Command::new(exe).args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("generator.alpha") && err.contains("line 6"), "{err}");
    assert!(err.contains("nonnegative"));
    assert!(err.contains("\"kind\":\"validation\""));

    let out = Command::new(exe).args(["validate", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A Euler blow-up is a numerical failure.
    let blow = dir.join("blow.toml");
    let src = BASE.to_string() + "\n[diffusion]\nmu = [\"5*x\"]\nsigma = [1.0]\nx0 = [1.0]\n";
    std::fs::write(&blow, src.replace("horizon = 1.0", "horizon = 8.0").replace("n_steps = 10", "n_steps = 4")).unwrap();
    let out = Command::new(exe)
        .args(["run", blow.to_str().unwrap(), "--out", dir.join("blow").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let good = dir.join("good.toml");
    std::fs::write(&good, BASE).unwrap();
    let o1 = dir.join("o1");
    let o2 = dir.join("o2");
    for (o, seed) in [(&o1, "9"), (&o2, "9")] {
        let out = Command::new(exe)
            .args(["run", good.to_str().unwrap(), "--seed", seed, "--out", o.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["summary.json", "nodes.csv"] {
        assert_eq!(std::fs::read(o1.join(f)).unwrap(), std::fs::read(o2.join(f)).unwrap());
    }
    assert!(std::fs::read_to_string(o1.join("summary.json")).unwrap().contains("\"seed\": 9"));

    let out = Command::new(exe).arg("catalog").current_dir(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("exp-affine: transform-exact oracle"));
    assert!(text.contains("cosine: Neumann series oracle"));
    std::fs::remove_dir_all(&dir).ok();
}
