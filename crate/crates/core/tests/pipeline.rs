use std::process::Command;
use std::sync::Arc;

use lsjstn::data::{synth_generate, Split, SynthParams};
use lsjstn::eval::{baseline_knn, evaluate, evaluate_model, EvalPlan, Idw, Interpolator};
use lsjstn::model::{self, Checkpoint, ModelConfig};
use lsjstn::pseudo::k_idw;
use lsjstn::train::{train, TrainConfig};

fn small_model() -> ModelConfig {
    ModelConfig {
        window: 9,
        short_window: 2,
        skip: 4,
        hidden: 8,
        layers: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn idw_strategy_equals_k_idw_over_all_known() {
    let ds = synth_generate(16, 300, 3, &SynthParams::default()).unwrap();
    let (nodes, known) = ds.evaluation_partition();
    let n_known = known.iter().filter(|&&k| k).count();
    for w in ds.windows(Split::Test, 1, &nodes, &known).unwrap().take(10) {
        let got = Idw { rho: 1.0 }.interpolate(&w, &ds.graph).unwrap();
        let want = k_idw(w.target(), &known, &ds.graph.dist, n_known, 1.0).unwrap();
        assert_eq!(got, want.values);
    }
}

#[test]
fn knn_over_all_training_sensors_is_the_mean() {
    let ds = synth_generate(12, 300, 4, &SynthParams::default()).unwrap();
    let n_train = ds.sensor_split.train.len();
    let report = baseline_knn(&ds, n_train).unwrap();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for t in ds.splits.test.clone() {
        let mean = ds
            .sensor_split
            .train
            .iter()
            .map(|&i| ds.raw(t, i))
            .sum::<f64>()
            / n_train as f64;
        for &u in &ds.sensor_split.test {
            pred.push(mean);
            truth.push(ds.raw(t, u));
        }
    }
    let want = lsjstn::eval::metrics(&pred, &truth).unwrap();
    assert!((report.mae - want.mae).abs() < 1e-12);
    assert!((report.rmse - want.rmse).abs() < 1e-12);
}

#[test]
fn untrained_model_reports_all_metrics() {
    let ds = synth_generate(12, 400, 5, &SynthParams::default()).unwrap();
    let cfg = small_model();
    let params = model::init_params(&cfg, 0).unwrap();
    let r = evaluate_model(&ds, &params, &cfg).unwrap();
    for rep in [&r.long, &r.short] {
        assert!(rep.mae.is_finite() && rep.rmse.is_finite() && rep.r2.is_some());
        assert_eq!(rep.per_sensor.len(), ds.sensor_split.test.len());
    }
    // Baselines and the model are scored on the same target frames.
    let strategy = lsjstn::eval::Lsjstn {
        params: Arc::new(params.clone()),
        config: cfg.clone(),
        head: lsjstn::eval::Head::Long,
    };
    let via_strategy = evaluate(&ds, &strategy, EvalPlan::new(Split::Test, cfg.window)).unwrap();
    assert_eq!(via_strategy.mae, r.long.mae);
    let idw = evaluate(
        &ds,
        &Idw { rho: 1.0 },
        EvalPlan::new(Split::Test, cfg.window),
    )
    .unwrap();
    assert_eq!(idw.n_points, r.long.n_points);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn training_loss_falls_over_first_epochs() {
    let cfg = ModelConfig::default();
    let mut first = Vec::new();
    let mut fifth = Vec::new();
    for seed in 0..3 {
        let ds = synth_generate(24, 1500, seed, &SynthParams::default()).unwrap();
        let tc = TrainConfig {
            epochs: 5,
            steps_per_epoch: 60,
            seed,
            ..TrainConfig::default()
        };
        let h = train(&ds, &cfg, &tc).unwrap().history;
        first.push(h[0].train_loss);
        fifth.push(h[4].train_loss);
    }
    assert!(
        median(fifth.clone()) < median(first.clone()),
        "{first:?} -> {fifth:?}"
    );
}

#[test]
fn checkpoint_survives_disk() {
    let cfg = small_model();
    let ck = Checkpoint::new(cfg.clone(), model::init_params(&cfg, 9).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.bin");
    ck.save(&p).unwrap();
    assert_eq!(Checkpoint::load(&p).unwrap(), ck);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lsjstn"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = cli(&["train", "--out", out, "--set", "train.bogus=1"]);
    assert_eq!(r.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let missing = dir.path().join("nope.json");
    let r = cli(&[
        "train",
        "--out",
        out,
        "--dataset",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn cli_pipeline_with_colocated_inference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    let small = [
        "--set",
        "model.window=9",
        "--set",
        "model.short_window=2",
        "--set",
        "model.hidden=8",
        "--set",
        "model.layers=2",
    ];
    let r = cli(&[
        "synth",
        "--out",
        &s("data"),
        "--seed",
        "2",
        "--set",
        "synth.sensors=16",
        "--set",
        "synth.steps=2000",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let (manifest, run) = (s("data/manifest.json"), s("run"));
    let mut train_args = vec![
        "train",
        "--dataset",
        &manifest,
        "--out",
        &run,
        "--set",
        "train.epochs=0",
    ];
    train_args.extend_from_slice(&small);
    let r = cli(&train_args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = cli(&[
        "eval",
        "--dataset",
        &s("data/manifest.json"),
        "--checkpoint",
        &s("run/checkpoint.bin"),
        "--out",
        &s("ev"),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    for m in ["lsjstn", "lsjstn-short", "knn", "idw"] {
        for k in ["mae", "rmse", "r2"] {
            assert!(report["methods"][m][k].is_number(), "{m} {k}");
        }
    }

    let coords = std::fs::read_to_string(d.join("data/coords.csv")).unwrap();
    let mut lines = coords.lines().skip(1);
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    std::fs::write(
        d.join("loc.csv"),
        format!("id,x,y\ntwin,{},{}\n", first[1], first[2]),
    )
    .unwrap();
    let r = cli(&[
        "infer",
        "--dataset",
        &s("data/manifest.json"),
        "--checkpoint",
        &s("run/checkpoint.bin"),
        "--locations",
        &s("loc.csv"),
        "--time",
        "1500",
        "--out",
        &s("inf"),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let mut rd = csv::Reader::from_path(d.join("inf/predictions.csv")).unwrap();
    let row = rd.records().next().unwrap().unwrap();
    let pseudo: f64 = row[3].parse().unwrap();
    let value: f64 = row[4].parse().unwrap();
    let mut readings = csv::Reader::from_path(d.join("data/readings.csv")).unwrap();
    let col = readings
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == first[0])
        .unwrap();
    let actual: f64 = readings.records().nth(1500).unwrap().unwrap()[col]
        .parse()
        .unwrap();
    assert!((pseudo - actual).abs() < 1e-9, "{pseudo} vs {actual}");
    assert!(value.is_finite());
}
