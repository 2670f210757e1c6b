mod common;

use std::fs;

use retinotopic::ppm;
use retinotopic::sampler::Image;

#[test]
fn gradcheck_filters_and_echoes_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("g.json");
    let out = common::run_ok(&[
        "gradcheck",
        "--only",
        "sampler",
        "--json",
        json.to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1e-4") && text.contains("1e-3"), "{text}");
    let rows: Vec<_> = text
        .lines()
        .filter(|l| l.ends_with("pass") || l.ends_with("FAIL"))
        .collect();
    assert_eq!(rows.len(), 1, "{text}");
    assert!(rows[0].starts_with("sampler"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 1);

    let bad = common::bin()
        .args(["gradcheck", "--only", "nonexistent"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn warp_of_a_constant_image_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.ppm");
    let output = tmp.path().join("out.ppm");
    let img = Image::from_fn(3, 20, 30, |c, _, _| [0.2f32, 0.6, 1.0][c]).unwrap();
    ppm::write(&input, &img).unwrap();
    common::run_ok(&[
        "warp",
        input.to_str().unwrap(),
        "--cx",
        "15",
        "--cy",
        "10",
        "--patch",
        "16",
        "--width",
        "12",
        "--r-max",
        "8",
        "-o",
        output.to_str().unwrap(),
    ]);
    let warped = ppm::read(&output).unwrap();
    assert_eq!(
        (warped.channels(), warped.height(), warped.width()),
        (3, 16, 12)
    );
    for c in 0..3 {
        assert!(warped
            .plane(c)
            .iter()
            .all(|&v| (v - img.pixel(c, 0, 0)).abs() < 1e-6));
    }
}

#[test]
fn train_resume_eval_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_bars_mnist(&data, 64, 20);
    let out = tmp.path().join("run");
    let (data_s, out_s) = (data.to_str().unwrap(), out.to_str().unwrap());
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "saccades = 3\nbatch_size = 16\nepochs = 5 # overridden\n",
    )
    .unwrap();
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "--data-dir",
        data_s,
        "--out-dir",
        out_s,
    ];

    let mut args = vec!["train", "--epochs", "2", "--deterministic"];
    args.extend(base);
    common::run_ok(&args);
    for f in [
        "epoch_1.rtnt",
        "epoch_2.rtnt",
        "metrics.csv",
        "run.json",
        "summary.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,split,task,loss,acc1,acc2,acc3"));
    assert_eq!(lines.count(), 8);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["train"]["saccades"], 3);
    assert_eq!(run["config"]["train"]["epochs"], 2);
    assert!(run["build"].is_string());

    let ck = out.join("epoch_2.rtnt");
    let mut args = vec![
        "train",
        "--epochs",
        "3",
        "--deterministic",
        "--resume",
        ck.to_str().unwrap(),
    ];
    args.extend(base);
    common::run_ok(&args);
    assert!(out.join("epoch_3.rtnt").exists());
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    assert!(csv.lines().last().unwrap().starts_with("3,test,greedy"));

    let ck3 = out.join("epoch_3.rtnt");
    let mut args = vec!["eval", "--checkpoint", ck3.to_str().unwrap()];
    args.extend(base);
    let printed = String::from_utf8(common::run_ok(&args).stdout).unwrap();
    assert!(printed.contains("final accuracy"));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["metrics"]["samples"], 20);
    assert_eq!(eval["metrics"]["per_saccade"].as_array().unwrap().len(), 3);

    let mut args = vec![
        "trace",
        "--checkpoint",
        ck3.to_str().unwrap(),
        "--index",
        "4",
        "--scale",
        "2",
    ];
    args.extend(base);
    common::run_ok(&args);
    let dir = out.join("trace_4");
    let centers = fs::read_to_string(dir.join("centers.csv")).unwrap();
    assert_eq!(centers.lines().count(), 1 + 4);
    for line in centers.lines().skip(1) {
        let v: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|s| s.parse().unwrap())
            .collect();
        assert!(v.iter().all(|c| (0.0..=27.0).contains(c)), "{line}");
    }
    for k in 0..3 {
        let p = ppm::read(dir.join(format!("patch_{k}.ppm"))).unwrap();
        assert_eq!((p.channels(), p.height(), p.width()), (3, 32, 32));
    }
    let overlay = ppm::read(dir.join("overlay.ppm")).unwrap();
    assert_eq!((overlay.height(), overlay.width()), (56, 56));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = common::bin()
        .args(["train", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    let missing = tmp.path().join("nothing");
    let out = common::bin()
        .args([
            "train",
            "--data-dir",
            missing.to_str().unwrap(),
            "--out-dir",
            tmp.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());

    let corrupt = tmp.path().join("bad.rtnt");
    fs::write(&corrupt, b"RTNT\x01\x00\x00\x00garbage").unwrap();
    let data = tmp.path().join("data");
    common::write_bars_mnist(&data, 10, 10);
    let out = common::bin()
        .args([
            "eval",
            "--checkpoint",
            corrupt.to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}
