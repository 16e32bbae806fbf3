use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hwprox_core::{load_cube, load_params, solve, HsiCube, HwnetParams, NoiseLog, RegularizerSpec, SolverConfig};
use serde_json::{json, Value};
use tempfile::TempDir;

fn hwprox(args: &[&str], env: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hwprox"));
    cmd.args(args).env_remove("HWPROX_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Synthesizes `count` 16x16x8 pairs into `dir/data` and returns the manifest path.
fn dataset(dir: &Path, case: &str, count: usize) -> PathBuf {
    let cfg = json!({
        "scenes": { "count": count, "height": 16, "width": 16, "bands": 8, "seed": 1 },
        "noise": { "case": case, "seed": 5 },
        "output_dir": p(&dir.join("data")),
    });
    let c = write_config(dir, "synth.json", &cfg);
    assert_eq!(hwprox(&["synth", "-c", &c], &[]).0, 0);
    dir.join("data/manifest.json")
}

#[test]
fn synth_is_deterministic_and_logs_case5() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "scenes": { "count": 3, "height": 12, "width": 10, "bands": 6 },
        "patch": { "size": [8, 8], "stride": [4, 4], "augment": true },
        "noise": { "case": "case5", "seed": 2 },
    });
    let c = write_config(dir.path(), "s.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(hwprox(&["synth", "-c", &c, "-o", &p(&a)], &[]).0, 0);
    assert_eq!(hwprox(&["synth", "-c", &c, "-o", &p(&b), "--jobs", "2"], &[]).0, 0);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    // anchors 0,4 by 0,2 per scene
    let manifest: Value = serde_json::from_slice(&ta[Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 12);

    let log: NoiseLog = serde_json::from_slice(&ta[Path::new("s00004_noise.json")]).unwrap();
    assert!(log.impulse.is_some() && log.stripe.is_some() && log.deadline.is_some() && log.sigma_clamp.is_some());
    let clean = load_cube(a.join("s00004_clean.hwc")).unwrap();
    let noisy = load_cube(a.join("s00004_noisy.hwc")).unwrap();
    let replayed = hwprox_core::noise::replay(&clean, &log).unwrap();
    let rounded = replayed.map(|v| v as f32 as f64).unwrap();
    assert_eq!(rounded, noisy);
}

#[test]
fn seed_overrides_change_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "scenes": { "count": 1, "height": 8, "width": 8, "bands": 4 },
        "noise": { "case": "case1", "seed": 2 },
    });
    let c = write_config(dir.path(), "s.json", &cfg);
    let run = |name: &str, extra: &[&str], env: &[(&str, &str)]| {
        let out = dir.path().join(name);
        let mut args = vec!["synth", "-c", &c, "-o"];
        let o = p(&out);
        args.push(&o);
        args.extend_from_slice(extra);
        assert_eq!(hwprox(&args, env).0, 0);
        tree(&out)
    };
    let base = run("base", &[], &[]);
    let env = run("env", &[], &[("HWPROX_SEED", "9")]);
    let flag = run("flag", &["--seed", "9"], &[]);
    let both = run("both", &["--seed", "9"], &[("HWPROX_SEED", "4")]);
    assert_ne!(base, env);
    assert_eq!(env, flag);
    assert_eq!(flag, both);
    assert_eq!(hwprox(&["synth", "-c", &c, "-o", &p(dir.path())], &[("HWPROX_SEED", "x")]).0, 3);
}

#[test]
fn config_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad_case = write_config(dir.path(), "a.json", &json!({ "noise": { "case": "case9" }, "output_dir": "x" }));
    let (code, err) = hwprox(&["synth", "-c", &bad_case], &[]);
    assert_eq!(code, 3);
    assert!(err.contains("case9"), "{err}");

    let extra = write_config(
        dir.path(),
        "b.json",
        &json!({ "noise": { "case": "case1" }, "output_dir": "x", "colour": 1 }),
    );
    assert_eq!(hwprox(&["synth", "-c", &extra], &[]).0, 3);

    let missing = write_config(
        dir.path(),
        "c.json",
        &json!({ "clean": [p(&dir.path().join("none.hwc"))], "noise": { "case": "case1" }, "output_dir": "x" }),
    );
    assert_eq!(hwprox(&["synth", "-c", &missing], &[]).0, 2);
    assert_eq!(hwprox(&["train", "-c", &p(&dir.path().join("nothing.json"))], &[]).0, 2);
    let no_out = write_config(dir.path(), "d.json", &json!({ "noise": { "case": "case1" } }));
    assert_eq!(hwprox(&["synth", "-c", &no_out], &[]).0, 3);
}

#[test]
fn train_records_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(dir.path(), "case1", 6);
    let cfg = json!({
        "manifest": p(&manifest),
        "sources": "N+T+TS",
        "trainer": { "epochs": 1, "batch_size": 3, "unroll_k": 2, "channels": 2, "seed": 4, "validation_fraction": 0.0 },
    });
    let c = write_config(dir.path(), "t.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(hwprox(&["train", "-c", &c, "-o", &p(&a)], &[]).0, 0);
    assert_eq!(hwprox(&["train", "-c", &c, "-o", &p(&b), "--jobs", "3"], &[]).0, 0);
    assert_eq!(tree(&a), tree(&b));

    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let steps: Vec<&Value> = lines.iter().filter(|l| l["record"] == "step").collect();
    assert_eq!(steps.len(), 2);
    assert!(steps.iter().all(|s| s["model_losses"].as_array().unwrap().len() == 3));
    assert_eq!(lines.first().unwrap()["record"], "epoch");
    assert_eq!(lines.last().unwrap()["epoch"], 1);
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sources"], json!(["N", "T", "TS"]));
}

#[test]
fn zero_learning_rate_saves_the_initialization() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(dir.path(), "case1", 2);
    let cfg = json!({
        "manifest": p(&manifest),
        "trainer": { "epochs": 1, "lr": 0.0, "batch_size": 2, "unroll_k": 2, "channels": 3, "seed": 8 },
        "output_dir": p(&dir.path().join("out")),
    });
    let c = write_config(dir.path(), "t.json", &cfg);
    assert_eq!(hwprox(&["train", "-c", &c], &[]).0, 0);
    let saved = load_params(dir.path().join("out/weights.hwn")).unwrap();
    let init = HwnetParams::init(3, 8).unwrap().map(|v| v as f32 as f64);
    assert_eq!(saved, init);
}

#[test]
fn divergence_exits_4_with_checkpoint() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(dir.path(), "case1", 2);
    let out = dir.path().join("out");
    let cfg = json!({
        "manifest": p(&manifest),
        "sources": "N",
        "trainer": { "epochs": 3, "lr": 1e300, "batch_size": 1, "unroll_k": 2, "channels": 2 },
        "output_dir": p(&out),
    });
    let c = write_config(dir.path(), "t.json", &cfg);
    let (code, err) = hwprox(&["train", "-c", &c], &[]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("checkpoint.hwn"));
    assert!(load_params(out.join("checkpoint.hwn")).unwrap().is_finite());
}

#[test]
fn uniform_weight_denoise_matches_direct_solve() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(dir.path(), "case2", 1);
    let data = dir.path().join("data");
    let cfg = json!({
        "input": p(&data.join("s00000_noisy.hwc")),
        "clean": p(&data.join("s00000_clean.hwc")),
        "target": "N+T",
        "solver": { "max_iters": 50 },
    });
    let c = write_config(dir.path(), "d.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(hwprox(&["denoise", "-c", &c, "-o", &p(&a), "--uniform-weight"], &[]).0, 0);
    assert_eq!(hwprox(&["denoise", "-c", &c, "-o", &p(&b), "--uniform-weight"], &[]).0, 0);
    assert_eq!(tree(&a), tree(&b));

    let noisy = load_cube(data.join("s00000_noisy.hwc")).unwrap();
    let (h, w, bands) = noisy.dims();
    let solver = SolverConfig {
        max_iters: 50,
        ..SolverConfig::default()
    };
    let spec = RegularizerSpec::composite_from_combo("N+T").unwrap();
    let direct = solve(&noisy, &HsiCube::filled(h, w, bands, 1.0).unwrap(), &spec, &solver).unwrap();
    let restored = load_cube(a.join("s00000_noisy_restored.hwc")).unwrap();
    assert_eq!(restored, direct.x_hat.map(|v| v as f32 as f64).unwrap());

    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("s00000_noisy_report.json")).unwrap()).unwrap();
    for k in ["psnr", "ssim", "sam", "ergas"] {
        assert!(report["metrics"][k].is_number(), "{k}");
    }
    assert_eq!(report["target"], "N+T");
    assert_eq!(report["uniform_weight"], true);
    assert_eq!(report["solve"]["iterations"], direct.iterations);

    // without the flag the network weights are required
    assert_eq!(hwprox(&["denoise", "-c", &c, "-o", &p(&a)], &[]).0, 3);
    let with_missing = write_config(
        dir.path(),
        "e.json",
        &json!({ "manifest": p(&manifest), "weights": p(&dir.path().join("none.hwn")), "target": "N" }),
    );
    assert_eq!(hwprox(&["denoise", "-c", &with_missing, "-o", &p(&a)], &[]).0, 2);
}

#[test]
fn eval_writes_all_measures() {
    let dir = TempDir::new().unwrap();
    dataset(dir.path(), "case1", 2);
    let data = dir.path().join("data");
    let cfg = json!({
        "pairs": [
            { "reference": p(&data.join("s00000_clean.hwc")), "estimate": p(&data.join("s00000_noisy.hwc")) },
            { "id": "second", "reference": p(&data.join("s00001_clean.hwc")), "estimate": p(&data.join("s00001_noisy.hwc")) },
        ],
        "output_dir": p(&dir.path().join("eval")),
    });
    let c = write_config(dir.path(), "e.json", &cfg);
    assert_eq!(hwprox(&["eval", "-c", &c], &[]).0, 0);
    let rows: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["id"], "s00000_noisy");
    assert_eq!(rows[1]["id"], "second");
    let clean = load_cube(data.join("s00000_clean.hwc")).unwrap();
    let noisy = load_cube(data.join("s00000_noisy.hwc")).unwrap();
    assert_eq!(rows[0]["psnr"].as_f64().unwrap(), hwprox_core::metrics::psnr(&clean, &noisy, 1.0).unwrap());
    let csv = fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert!(csv.starts_with("id,psnr,ssim,sam,ergas\n"));
}

fn theory(dir: &Path, manifest: &Path, sources: &str, targets: &str, name: &str) -> Value {
    let cfg = json!({
        "manifest": p(manifest),
        "sources": sources,
        "targets": targets,
        "theory": { "b_d": 4.0, "eps": 0.1, "b_h": 2.0 },
        "lipschitz": { "model": "N", "trials": 3 },
        "output_dir": p(&dir.join(name)),
    });
    let c = write_config(dir, &format!("{name}.json"), &cfg);
    assert_eq!(hwprox(&["theory", "-c", &c], &[]).0, 0);
    serde_json::from_str(&fs::read_to_string(dir.join(name).join("theory_report.json")).unwrap()).unwrap()
}

#[test]
fn theory_reports_identities() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(dir.path(), "case1", 3);
    let same = theory(dir.path(), &manifest, "N+T", "N+T", "same");
    assert_eq!(same["divergence"]["u_value"], 0.0);
    let k = &same["divergence"]["constants"];
    assert_eq!((k["b_d"].as_f64(), k["eps"].as_f64(), k["b_h"].as_f64()), (Some(4.0), Some(0.1), Some(2.0)));
    assert_eq!(k["m"], 16 * 16 * 8);
    assert_eq!(same["lipschitz"]["bound"].as_f64().map(|b| (b - 3200.0).abs() < 1e-9), Some(true));

    let joint = theory(dir.path(), &manifest, "N+T", "N", "joint")["divergence"]["u_value"].as_f64().unwrap();
    let single = theory(dir.path(), &manifest, "T", "N", "single")["divergence"]["u_value"].as_f64().unwrap();
    assert!((joint - 0.5 * single).abs() <= 1e-12 * single.abs());

    let bad = write_config(
        dir.path(),
        "bad.json",
        &json!({ "manifest": p(&manifest), "sources": "N+Q", "targets": "N", "output_dir": "x" }),
    );
    assert_eq!(hwprox(&["theory", "-c", &bad], &[]).0, 3);
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_adjoint() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ok");
    let (code, err) = hwprox(&["gradcheck", "-o", &p(&out)], &[]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    let ops: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["op"].as_str().unwrap()).collect();
    for op in ["svt", "conv3d_kernel", "softmax_scaled", "admm_nuclear", "hwnet"] {
        assert!(ops.contains(&op), "{op}");
    }
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["max_rel_error"].as_f64().unwrap() < 1e-4));

    let faulty = write_config(dir.path(), "f.json", &json!({ "inject_svt_fault": true }));
    let (code, err) = hwprox(&["gradcheck", "-c", &faulty], &[]);
    assert_eq!(code, 1);
    assert!(err.contains("svt"), "{err}");
}
