use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn localblur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localblur"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).expect("stdout is a JSON report");
    assert_eq!(v["schema_version"], 1);
    v
}

fn error(out: &Output, code: i32) -> Value {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let line = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(line.trim()).expect("stderr is a JSON error");
    assert_eq!(v["schema_version"], 1);
    v
}

fn simulate(dir: &Path, extra: &[&str]) -> Value {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "--no-timestamp",
        "simulate",
        "--out",
        out,
        "--width",
        "256",
        "--height",
        "192",
        "--frames",
        "10",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    if !extra.contains(&"--targets") {
        args.extend_from_slice(&["--targets", "2"]);
    }
    report(&localblur(&args))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_undoes_simulated_degradations() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let sim = simulate(&scene, &["--degrade"]);
    let expected: Vec<f64> =
        serde_json::from_value(sim["result"]["expected_beta"].clone()).unwrap();

    let out = tmp.path().join("out");
    let r = report(&localblur(&[
        "--no-timestamp",
        "pipeline",
        "--manifest",
        p(&scene.join("manifest.json")),
        "--out-dir",
        p(&out),
    ]));
    let r = &r["result"];
    assert_eq!(r["ids"], serde_json::json!(["t00", "t01"]));
    for c in 0..3 {
        let beta = r["beta"][c].as_f64().unwrap();
        // frames pass through 32-bit files, so agreement is limited to f32 precision
        assert!(
            (beta - expected[c]).abs() < 1e-5,
            "{beta} vs {}",
            expected[c]
        );
    }
    let mut pairs = vec![r["static_pair"].clone()];
    pairs.extend(r["targets"].as_array().unwrap().iter().cloned());
    for pair in &pairs {
        assert!(
            pair["delta_l_after"].as_f64().unwrap() <= pair["delta_l_before"].as_f64().unwrap()
        );
    }
    let st = &r["static_pair"];
    assert!(st["geometric_error_before"].as_f64().unwrap() > 2.5);
    assert!(st["geometric_error_after"].as_f64().unwrap() <= 1.0);
    assert!(st["psnr_after"].as_f64().unwrap() - st["psnr_before"].as_f64().unwrap() >= 10.0);
    for f in [
        "flow.pfm",
        "static_blurred.pfm",
        "t01_sharp.pfm",
        "t00_valid.png",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn raw_scene_runs_through_the_isp() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &["--degrade", "--raw", "RGGB"]);
    assert!(
        scene.join("static_sharp.pfm.meta").exists() || scene.join("static_sharp.meta").exists()
    );
    let r = report(&localblur(&[
        "pipeline",
        "--manifest",
        p(&scene.join("manifest.json")),
        "--out-dir",
        p(&tmp.path().join("out")),
    ]));
    let stages: Vec<String> = serde_json::from_value(r["result"]["stages"].clone()).unwrap();
    assert!(stages.iter().any(|s| s.contains("demosaic")), "{stages:?}");
    assert!(
        r["result"]["static_pair"]["geometric_error_after"]
            .as_f64()
            .unwrap()
            <= 1.0
    );
}

#[test]
fn gen_mask_matches_simulator_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &["--degrade", "--targets", "3"]);
    let r = report(&localblur(&[
        "gen-mask",
        "--manifest",
        p(&scene.join("manifest.json")),
        "--out-dir",
        p(&tmp.path().join("masks")),
    ]));
    let masks = r["result"]["masks"].as_array().unwrap();
    assert_eq!(masks.len(), 3);
    for m in masks {
        assert!(m["iou"].as_f64().unwrap() >= 0.7, "{m}");
        assert!(tmp
            .path()
            .join("masks")
            .join(m["mask"].as_str().unwrap())
            .exists());
    }
}

#[test]
fn evaluate_identical_images_gives_capped_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &[]);
    let img = scene.join("t00_sharp.pfm");
    let r = report(&localblur(&[
        "evaluate",
        "--sharp",
        p(&img),
        "--pred",
        p(&img),
    ]));
    let m = &r["result"];
    assert_eq!(m["PSNR"], 100.0);
    assert_eq!(m["PSNR_a"], 100.0);
    assert_eq!(m["SSIM"], 1.0);
    assert_eq!(m["SSIM_w"], 1.0);
    assert!((m["PSNR_w"].as_f64().unwrap() - 80.0).abs() < 1e-9);
}

#[test]
fn evaluate_batch_reports_rows_and_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &[]);
    let manifest = scene.join("eval.json");
    std::fs::write(
        &manifest,
        r#"{"schema_version": 1, "pairs": [
            {"id": "same", "sharp": "t00_sharp.pfm", "pred": "t00_sharp.pfm", "mask": "t00_mask.png"},
            {"id": "blurred", "sharp": "t00_sharp.pfm", "pred": "t00_blurred.pfm", "mask": "t00_mask.png"}
        ]}"#,
    )
    .unwrap();
    let r = report(&localblur(&["evaluate", "--manifest", p(&manifest)]));
    let rows = r["result"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["id"], "same");
    assert_eq!(rows[0]["PSNR"], 100.0);
    let blurred = &rows[1];
    for key in ["PSNR", "PSNR_w", "PSNR_a", "SSIM", "SSIM_w"] {
        assert!(
            blurred[key].as_f64().unwrap() < rows[0][key].as_f64().unwrap(),
            "{key}"
        );
    }
    let mean = r["result"]["mean"]["PSNR"].as_f64().unwrap();
    assert!((mean - (100.0 + blurred["PSNR"].as_f64().unwrap()) / 2.0).abs() < 1e-9);
}

#[test]
fn calibrate_then_correct_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &["--cast"]);
    let cal = tmp.path().join("cal.json");
    let r = report(&localblur(&[
        "calibrate-color",
        "--lightbox",
        p(&scene.join("lightbox_blurred.pfm")),
        "--out",
        p(&cal),
    ]));
    assert!(r["result"]["alpha_min"].as_f64().unwrap() >= 0.5);
    let src = scene.join("static_blurred.pfm");
    let fwd = tmp.path().join("fwd.pfm");
    let back = tmp.path().join("back.pfm");
    report(&localblur(&[
        "correct",
        "--input",
        p(&src),
        "--calib",
        p(&cal),
        "--gain",
        "1.1,0.9,1.0",
        "--out",
        p(&fwd),
    ]));
    report(&localblur(&[
        "correct",
        "--input",
        p(&fwd),
        "--calib",
        p(&cal),
        "--gain",
        "1.1,0.9,1.0",
        "--inverse",
        "--out",
        p(&back),
    ]));
    let e = report(&localblur(&[
        "evaluate",
        "--sharp",
        p(&src),
        "--pred",
        p(&back),
    ]));
    assert!(e["result"]["PSNR"].as_f64().unwrap() > 90.0, "{e}");
}

#[test]
fn crop_and_synth_blur_report_their_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    simulate(&scene, &[]);
    let mask = scene.join("t00_mask.png");
    let jsonl = tmp.path().join("crops.jsonl");
    let r = report(&localblur(&[
        "crop",
        "--mask",
        p(&mask),
        "--count",
        "4000",
        "--size",
        "64",
        "--seed",
        "9",
        "--augment",
        "--out",
        p(&jsonl),
    ]));
    let r = &r["result"];
    assert!(r["blur_fraction"].as_f64().unwrap() >= 0.5);
    assert!((r["blur_branch_frequency"].as_f64().unwrap() - 0.5).abs() < 0.04);
    let text = std::fs::read_to_string(&jsonl).unwrap();
    assert_eq!(text.lines().count(), 4000);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["size"], 64);

    let out = tmp.path().join("sb.pfm");
    let fp = tmp.path().join("sb_mask.png");
    let r = report(&localblur(&[
        "synth-blur",
        "--image",
        p(&scene.join("static_sharp.pfm")),
        "--mask",
        p(&mask),
        "--dx",
        "20",
        "--dy",
        "-4",
        "--out",
        p(&out),
        "--mask-out",
        p(&fp),
    ]));
    assert_eq!(r["result"]["empty_mask"], false);
    assert!(out.exists() && fp.exists());
    let e = localblur(&[
        "synth-blur",
        "--image",
        p(&out),
        "--mask",
        p(&mask),
        "--dx",
        "90",
        "--out",
        p(&out),
    ]);
    assert_eq!(error(&e, 2)["error"]["kind"], "invalid_argument");
}

#[test]
fn loss_check_reports_small_gradient_errors() {
    let r = report(&localblur(&[
        "loss-check",
        "--random",
        "32x24",
        "--seed",
        "3",
    ]));
    let grads = r["result"]["gradients"].as_array().unwrap();
    assert_eq!(grads.len(), 4);
    for g in grads {
        assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4, "{g}");
    }
    assert!(r["result"]["loss"]["total"].is_f64());
}

#[test]
fn missing_manifest_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = localblur(&[
        "pipeline",
        "--manifest",
        p(&tmp.path().join("absent.json")),
        "--out-dir",
        p(tmp.path()),
    ]);
    let e = error(&out, 2);
    assert_eq!(e["error"]["kind"], "io");
    assert!(e["error"]["message"]
        .as_str()
        .unwrap()
        .contains("absent.json"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(localblur(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(localblur(&[]).status.code(), Some(1));
    assert_eq!(localblur(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[isp]\ngama = 1.0\n").unwrap();
    let e = error(
        &localblur(&["--config", p(&cfg), "loss-check", "--random", "16x16"]),
        1,
    );
    assert_eq!(e["error"]["kind"], "usage");
    error(
        &localblur(&["--jobs", "0", "loss-check", "--random", "16x16"]),
        1,
    );
}

#[test]
fn config_file_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[simulate]\nwidth = 200\nheight = 150\ntargets = 1\nframes = 10\nsprite_side = [24, 40]\nmotion = [10.0, 30.0]\n").unwrap();
    let r = report(&localblur(&[
        "--config",
        p(&cfg),
        "simulate",
        "--out",
        p(&tmp.path().join("s")),
    ]));
    assert_eq!(r["result"]["spec"]["width"], 200);
    assert_eq!(r["result"]["spec"]["targets"], 1);
}

#[test]
fn reports_are_deterministic_without_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let scene = tmp.path().join(format!("scene{run}"));
        simulate(&scene, &["--degrade"]);
        let rep = tmp.path().join(format!("report{run}.json"));
        let out = localblur(&[
            "--no-timestamp",
            "--report",
            p(&rep),
            "pipeline",
            "--manifest",
            p(&scene.join("manifest.json")),
            "--out-dir",
            p(&tmp.path().join("out")),
        ]);
        assert!(out.status.success());
        let text = std::fs::read_to_string(&rep).unwrap();
        // paths differ between the two runs; everything else must match
        texts.push(text.replace(&format!("scene{run}"), "scene"));
    }
    assert_eq!(texts[0], texts[1]);
    assert!(!texts[0].contains("timestamp"));

    let a = report(&localblur(&[
        "loss-check",
        "--random",
        "16x16",
        "--seed",
        "2",
    ]));
    assert!(a.get("timestamp_unix").is_some());
}
