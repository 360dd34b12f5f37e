//! Command-line front end: `synth`, `train`, `eval`, `infer`, `attn-dump`.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde_json::json;

pub use config::{resolve, EvalConfig, MethodSpec, RunConfig, SynthConfig};

use crate::autodiff::Matrix;
use crate::data::{
    distances_from_coords, read_coords_csv, synth_generate, Dataset, DatasetManifest,
    ReadingWindow, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, BuildContext, EvalPlan, EvalReport, InterpolatorRegistry};
use crate::graph::{KernelConfig, SensorGraph};
use crate::jstgat::decay_factor;
use crate::model::{self, Checkpoint};
use crate::train::{write_history_csv, Trainer};

#[derive(Parser, Debug)]
#[command(
    name = "lsjstn",
    version,
    about = "Spatiotemporal kriging on sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dotted config override, e.g. `train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth(Common),
    /// Train a model; with --checkpoint, resume from a saved training state.
    Train(Common),
    /// Score the checkpoint and the baselines on the test range.
    Eval(Common),
    /// Predict readings at new locations for one time step.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Time index or timestamp.
        #[arg(long)]
        time: Option<String>,
        /// CSV of `id,x,y` locations.
        #[arg(long)]
        locations: Option<PathBuf>,
    },
    /// Export attention maps and adaptive adjacencies for one window.
    AttnDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        time: Option<String>,
    },
}

fn configure(c: &Common, time: Option<&String>, locations: Option<&PathBuf>) -> Result<RunConfig> {
    let mut cfg = resolve(c.config.as_deref(), &c.sets)?;
    if let Some(s) = c.seed {
        cfg.synth.seed = s;
        cfg.train.seed = s;
    }
    let pick = |flag: &Option<PathBuf>, slot: &mut Option<PathBuf>| {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    };
    pick(&c.out, &mut cfg.out);
    pick(&c.dataset, &mut cfg.dataset);
    pick(&c.checkpoint, &mut cfg.checkpoint);
    pick(&locations.cloned(), &mut cfg.locations);
    if let Some(t) = time {
        cfg.time = Some(t.clone());
    }
    Ok(cfg)
}

fn required<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("missing --{what}")))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = required(&cfg.out, "out")?.clone();
    fs::create_dir_all(&out)?;
    fs::write(
        out.join("resolved-config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    Ok(out)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<serde_json::Value> {
    let out = prepare_out(cfg)?;
    let s = &cfg.synth;
    let ds = synth_generate(s.sensors, s.steps, s.seed, &s.process)?;
    let mut manifest = DatasetManifest::new("readings.csv");
    manifest.kernel = s.process.kernel.clone();
    manifest.sensor_split_seed = s.seed;
    let path = ds.export(&out, &manifest)?;
    Ok(json!({"manifest": path, "stats": ds.stats()}))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::from_manifest(required(&cfg.dataset, "dataset")?)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)
}

fn cmd_train(cfg: &mut RunConfig) -> Result<serde_json::Value> {
    let ds = load_dataset(cfg)?;
    let mut trainer = match &cfg.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            cfg.model = ck.config.clone();
            Trainer::resume(&ds, &ck, cfg.train.clone())?
        }
        None => {
            let init = model::init_params(&cfg.model, cfg.train.seed)?;
            Trainer::new(&ds, cfg.model.clone(), cfg.train.clone(), init)?
        }
    };
    let out = prepare_out(cfg)?;
    while trainer.epoch() < cfg.train.epochs {
        trainer.run_epoch()?;
    }
    let (best, best_epoch) = trainer.best();
    let mut ck = Checkpoint::new(cfg.model.clone(), best.clone());
    ck.metadata = json!({"best_epoch": best_epoch, "seed": cfg.train.seed});
    ck.save(out.join("checkpoint.bin"))?;
    trainer.checkpoint().save(out.join("last.bin"))?;
    write_history_csv(out.join("history.csv"), trainer.history())?;
    Ok(json!({
        "checkpoint": out.join("checkpoint.bin"),
        "best_epoch": best_epoch,
        "epochs": trainer.epoch(),
        "param_count": best.param_count(),
    }))
}

fn write_per_sensor(path: &Path, reports: &IndexMap<String, EvalReport>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "id", "mae", "rmse", "n_points"])?;
    for (name, r) in reports {
        for s in &r.per_sensor {
            w.write_record([
                name.clone(),
                s.id.clone(),
                s.mae.to_string(),
                s.rmse.to_string(),
                s.n_points.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<serde_json::Value> {
    let ds = load_dataset(cfg)?;
    let ck = Arc::new(load_checkpoint(cfg)?);
    let out = prepare_out(cfg)?;
    let registry = InterpolatorRegistry::default();
    let ctx = BuildContext {
        checkpoint: Some(ck.clone()),
    };
    let methods = cfg
        .eval
        .methods
        .iter()
        .map(|m| registry.build(&m.name, &m.params, &ctx))
        .collect::<Result<Vec<_>>>()?;
    // Every method is scored on the same target frames.
    let history = methods.iter().map(|m| m.window_len()).max().unwrap_or(1);
    let plan = EvalPlan {
        split: Split::Test,
        history,
        stride: cfg.eval.stride,
    };
    let mut reports = IndexMap::new();
    for m in &methods {
        let mut label = m.name().to_string();
        let mut k = 2;
        while reports.contains_key(&label) {
            label = format!("{}#{k}", m.name());
            k += 1;
        }
        reports.insert(label, evaluate(&ds, m.as_ref(), plan)?);
    }
    write_per_sensor(&out.join("per_sensor.csv"), &reports)?;
    let summary: IndexMap<&String, serde_json::Value> = reports
        .iter()
        .map(|(k, r)| {
            (
                k,
                json!({"mae": r.mae, "rmse": r.rmse, "r2": r.r2, "n_points": r.n_points}),
            )
        })
        .collect();
    let report = json!({
        "split": "test",
        "history": history,
        "dataset": ds.stats(),
        "param_count": ck.params.param_count(),
        "methods": summary,
    });
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn parse_time(ds: &Dataset, time: Option<&String>, default: usize) -> Result<usize> {
    let Some(s) = time else { return Ok(default) };
    if let Some(ts) = &ds.timestamps {
        if let Some(i) = ts.iter().position(|t| t == s) {
            return Ok(i);
        }
    }
    s.parse().map_err(|_| {
        Error::Config(format!(
            "time {s:?} is neither an index nor a known timestamp"
        ))
    })
}

fn check_time(t: usize, window: usize, ds: &Dataset) -> Result<()> {
    if t + 1 < window || t >= ds.n_steps() {
        return Err(Error::Config(format!(
            "time {t} must lie in {}..{} to fit a {window}-frame window",
            window - 1,
            ds.n_steps()
        )));
    }
    Ok(())
}

fn cmd_infer(cfg: &RunConfig) -> Result<serde_json::Value> {
    let dataset_path = required(&cfg.dataset, "dataset")?;
    let (manifest, _) = DatasetManifest::load(dataset_path)?;
    let ds = Dataset::from_manifest(dataset_path)?;
    let ck = load_checkpoint(cfg)?;
    let (loc_ids, loc_coords) = read_coords_csv(required(&cfg.locations, "locations")?)?;
    let out = prepare_out(cfg)?;
    let sensor_coords =
        ds.graph.coords.as_ref().ok_or_else(|| {
            Error::Data("inference at new locations needs sensor coordinates".into())
        })?;
    let window = ck.config.window;
    let t = parse_time(&ds, cfg.time.as_ref(), ds.n_steps() - 1)?;
    check_time(t, window, &ds)?;

    let n = ds.n_sensors();
    let mut ids = ds.ids().to_vec();
    ids.extend(loc_ids.iter().cloned());
    let mut coords = sensor_coords.clone();
    coords.extend(loc_coords.iter().copied());
    let dist = distances_from_coords(&coords, manifest.distance_metric);
    let kernel = KernelConfig {
        sigma: Some(ds.graph.sigma),
        threshold: manifest.kernel.threshold,
    };
    let graph = SensorGraph::from_distances(ids, Some(coords), dist, &kernel, ds.graph.directed)?;

    let all: Vec<usize> = (0..n).collect();
    let frames = (t + 1 - window..=t)
        .map(|s| {
            let mut v = ds.frame(s, &all).into_vec();
            v.resize(n + loc_ids.len(), 0.0);
            Matrix::column(&v)
        })
        .collect();
    let mut known = vec![true; n];
    known.resize(n + loc_ids.len(), false);
    let w = ReadingWindow::new(frames, known, t);
    let res = model::forward(&w, &graph, &ck.params, &ck.config)?;
    let pseudo = res.frames.last().expect("window is nonempty");

    let mut wr = csv::Writer::from_path(out.join("predictions.csv"))?;
    wr.write_record(["id", "x", "y", "pseudo", "value"])?;
    for (j, (id, c)) in loc_ids.iter().zip(&loc_coords).enumerate() {
        wr.write_record([
            id.clone(),
            c[0].to_string(),
            c[1].to_string(),
            ds.normalizer.denorm(pseudo.get(n + j, 0)).to_string(),
            ds.normalizer.denorm(res.long.get(n + j, 0)).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(json!({"predictions": out.join("predictions.csv"), "time": t, "locations": loc_ids.len()}))
}

fn write_square_csv(path: &Path, ids: &[String], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("id".to_string()).chain(ids.iter().cloned()))?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record(std::iter::once(id.clone()).chain(m.row(i).iter().map(f64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_attn_dump(cfg: &RunConfig) -> Result<serde_json::Value> {
    let ds = load_dataset(cfg)?;
    let ck = load_checkpoint(cfg)?;
    let out = prepare_out(cfg)?;
    let window = ck.config.window;
    let default_t = (ds.splits.test.start + window - 1).min(ds.n_steps() - 1);
    let t = parse_time(&ds, cfg.time.as_ref(), default_t)?;
    check_time(t, window, &ds)?;
    let (nodes, known) = ds.evaluation_partition();
    let w = ds.window(t, window, &nodes, known)?;
    let res = model::forward(&w, &ds.graph, &ck.params, &ck.config)?;

    let dirs = ["fwd", "bwd"];
    let mut attention_files = Vec::new();
    for (d, maps) in res.attention.maps.iter().enumerate() {
        for (m, &offset) in res.attention.offsets.iter().enumerate() {
            let name = format!("attention_{}_offset{offset}.csv", dirs[d]);
            write_square_csv(&out.join(&name), ds.ids(), &maps[m])?;
            attention_files.push(json!({
                "file": name,
                "direction": dirs[d],
                "offset": offset,
                "decay": decay_factor(offset, ck.config.decay),
            }));
        }
    }
    let mut adaptive_files = Vec::new();
    for (k, (a, &step)) in res.adaptive.iter().zip(&res.steps).enumerate() {
        let name = format!("adaptive_step{k}.csv");
        write_square_csv(&out.join(&name), ds.ids(), a)?;
        adaptive_files.push(json!({"file": name, "frame": step, "time": t + 1 + step - window}));
    }
    let index = json!({
        "time": t,
        "window": window,
        "known": ds.sensor_split.train.iter().map(|&i| &ds.ids()[i]).collect::<Vec<_>>(),
        "attention": attention_files,
        "adaptive": adaptive_files,
    });
    write_json(&out.join("attention.json"), &index)?;
    Ok(index)
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Numeric(_) | Error::Backward(_) => 3,
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) | Error::Shape { .. } => 2,
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

fn dispatch(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Synth(c) => cmd_synth(&configure(&c, None, None)?),
        Command::Train(c) => cmd_train(&mut configure(&c, None, None)?),
        Command::Eval(c) => cmd_eval(&configure(&c, None, None)?),
        Command::Infer {
            common,
            time,
            locations,
        } => cmd_infer(&configure(&common, time.as_ref(), locations.as_ref())?),
        Command::AttnDump { common, time } => {
            cmd_attn_dump(&configure(&common, time.as_ref(), None)?)
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", e.to_string().trim());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            exit_code(&e)
        }
    }
}
