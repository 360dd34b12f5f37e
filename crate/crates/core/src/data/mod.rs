//! Datasets: ingestion, time and sensor splits, normalization, windowing and
//! a synthetic diffusion generator.

mod csvio;
mod synth;

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use csvio::{
    distances_from_coords, load_csv, read_coords_csv, read_distance_csv, read_readings_csv,
    write_coords_csv, write_distance_csv, write_readings_csv, DistanceMetric, GraphSource,
    RawReadings,
};
pub use synth::{synth_generate, SynthParams};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{KernelConfig, SensorGraph};

/// `T` consecutive frames for a node set, with the known/unknown partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadingWindow {
    /// Oldest first; each frame is `N x D`.
    pub frames: Vec<Matrix>,
    pub known_mask: Vec<bool>,
    /// Absolute time index of the last frame.
    pub target_time: usize,
    /// Which target-frame entries were actually observed (`None` = all).
    pub target_observed: Option<Vec<bool>>,
}

impl ReadingWindow {
    pub fn new(frames: Vec<Matrix>, known_mask: Vec<bool>, target_time: usize) -> Self {
        ReadingWindow {
            frames,
            known_mask,
            target_time,
            target_observed: None,
        }
    }

    pub fn target(&self) -> &Matrix {
        self.frames.last().expect("window has frames")
    }

    pub fn n_nodes(&self) -> usize {
        self.known_mask.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Contiguous, ordered, disjoint time ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSplits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl TimeSplits {
    pub fn from_fractions(total: usize, fractions: [f64; 3]) -> Result<Self> {
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let n_train = (total as f64 * fractions[0]).floor() as usize;
        let n_val = (total as f64 * fractions[1]).floor() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= total {
            return Err(Error::Data(format!(
                "{total} time points are too few to split"
            )));
        }
        Ok(TimeSplits {
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..total,
        })
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Partition of sensors into training (known at evaluation) and testing
/// (held out) sets. Both lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SensorSplit {
    pub fn random(n: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Data(
                "at least two sensors are needed for a sensor split".into(),
            ));
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_sensor_fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(SensorSplit { train, test })
    }
}

/// Z-score normalization with statistics from the training range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Normalizer {
                mean: 0.0,
                std: 1.0,
            };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Normalizer { mean, std }
    }

    pub fn norm(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denorm(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Summary in the shape of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_sensors: usize,
    pub n_time_points: usize,
    pub frequency: String,
    pub mean: f64,
    pub std: f64,
}

/// Dataset manifest (JSON). Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub readings: PathBuf,
    #[serde(default)]
    pub distances: Option<PathBuf>,
    #[serde(default)]
    pub coords: Option<PathBuf>,
    #[serde(default = "default_frequency")]
    pub frequency: String,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    #[serde(default = "default_train_sensor_fraction")]
    pub train_sensor_fraction: f64,
    #[serde(default)]
    pub sensor_split_seed: u64,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub distance_metric: DistanceMetric,
}

fn default_frequency() -> String {
    "unknown".into()
}

fn default_split_fractions() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}

fn default_train_sensor_fraction() -> f64 {
    0.5
}

impl DatasetManifest {
    pub fn new(readings: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            readings: readings.into(),
            distances: None,
            coords: None,
            frequency: default_frequency(),
            kernel: KernelConfig::default(),
            split_fractions: default_split_fractions(),
            train_sensor_fraction: default_train_sensor_fraction(),
            sensor_split_seed: 0,
            directed: false,
            distance_metric: DistanceMetric::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn options(&self) -> DatasetOptions {
        DatasetOptions {
            split_fractions: self.split_fractions,
            train_sensor_fraction: self.train_sensor_fraction,
            sensor_split_seed: self.sensor_split_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub split_fractions: [f64; 3],
    pub train_sensor_fraction: f64,
    pub sensor_split_seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            split_fractions: default_split_fractions(),
            train_sensor_fraction: default_train_sensor_fraction(),
            sensor_split_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `T_total x N` raw readings with gaps filled.
    pub readings: Matrix,
    /// `T_total x N` observation mask; `None` when nothing was missing.
    pub observed: Option<Vec<bool>>,
    pub timestamps: Option<Vec<String>>,
    pub frequency: String,
    pub graph: SensorGraph,
    pub splits: TimeSplits,
    pub sensor_split: SensorSplit,
    pub normalizer: Normalizer,
}

impl Dataset {
    pub fn new(
        readings: Matrix,
        observed: Option<Vec<bool>>,
        timestamps: Option<Vec<String>>,
        frequency: String,
        graph: SensorGraph,
        opts: &DatasetOptions,
    ) -> Result<Self> {
        if readings.cols() != graph.n_nodes() {
            return Err(Error::Data(format!(
                "{} reading columns for {} graph nodes",
                readings.cols(),
                graph.n_nodes()
            )));
        }
        if let Some(o) = &observed {
            if o.len() != readings.len() {
                return Err(Error::Data(
                    "observation mask does not match readings".into(),
                ));
            }
        }
        if !readings.is_finite() {
            return Err(Error::Data("readings contain non-finite values".into()));
        }
        let splits = TimeSplits::from_fractions(readings.rows(), opts.split_fractions)?;
        let sensor_split = SensorSplit::random(
            graph.n_nodes(),
            opts.train_sensor_fraction,
            opts.sensor_split_seed,
        )?;
        let mut ds = Dataset {
            readings,
            observed,
            timestamps,
            frequency,
            graph,
            splits,
            sensor_split,
            normalizer: Normalizer {
                mean: 0.0,
                std: 1.0,
            },
        };
        let n = ds.n_sensors();
        let fit_values: Vec<f64> = ds
            .splits
            .train
            .clone()
            .flat_map(|t| ds.sensor_split.train.iter().map(move |&i| (t, i)))
            .filter(|&(t, i)| ds.is_observed(t, i))
            .map(|(t, i)| ds.readings.as_slice()[t * n + i])
            .collect();
        ds.normalizer = Normalizer::fit(fit_values.into_iter());
        Ok(ds)
    }

    pub fn n_sensors(&self) -> usize {
        self.readings.cols()
    }

    pub fn n_steps(&self) -> usize {
        self.readings.rows()
    }

    pub fn ids(&self) -> &[String] {
        &self.graph.ids
    }

    pub fn is_observed(&self, t: usize, node: usize) -> bool {
        self.observed
            .as_ref()
            .is_none_or(|o| o[t * self.n_sensors() + node])
    }

    pub fn raw(&self, t: usize, node: usize) -> f64 {
        self.readings.get(t, node)
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.n_sensors();
        let vals = (0..self.n_steps())
            .flat_map(|t| (0..n).map(move |i| (t, i)))
            .filter(|&(t, i)| self.is_observed(t, i))
            .map(|(t, i)| self.raw(t, i));
        let fit = Normalizer::fit(vals);
        DatasetStats {
            n_sensors: n,
            n_time_points: self.n_steps(),
            frequency: self.frequency.clone(),
            mean: fit.mean,
            std: fit.std,
        }
    }

    /// Normalized frame at time `t` restricted to `nodes` (`|nodes| x 1`).
    pub fn frame(&self, t: usize, nodes: &[usize]) -> Matrix {
        let row = self.readings.row(t);
        Matrix::column(
            &nodes
                .iter()
                .map(|&i| self.normalizer.norm(row[i]))
                .collect::<Vec<_>>(),
        )
    }

    /// Window of `len` frames ending at `target` over `nodes`.
    pub fn window(
        &self,
        target: usize,
        len: usize,
        nodes: &[usize],
        known_mask: Vec<bool>,
    ) -> Result<ReadingWindow> {
        if len == 0 || target + 1 < len || target >= self.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "window of {len} frames ending at {target} does not fit {} steps",
                self.n_steps()
            )));
        }
        if known_mask.len() != nodes.len() {
            return Err(Error::InvalidArgument(
                "known mask and node list differ in length".into(),
            ));
        }
        let frames = (target + 1 - len..=target)
            .map(|t| self.frame(t, nodes))
            .collect();
        let target_observed = self
            .observed
            .as_ref()
            .map(|_| nodes.iter().map(|&i| self.is_observed(target, i)).collect());
        Ok(ReadingWindow {
            frames,
            known_mask,
            target_time: target,
            target_observed,
        })
    }

    /// Sliding windows (stride 1) over a split for the given node partition.
    pub fn windows<'a>(
        &'a self,
        split: Split,
        len: usize,
        nodes: &'a [usize],
        known_mask: &'a [bool],
    ) -> Result<impl Iterator<Item = ReadingWindow> + 'a> {
        let targets = make_windows(self.splits.range(split), len)?;
        Ok(targets.map(move |r| {
            self.window(r.end - 1, len, nodes, known_mask.to_vec())
                .expect("window inside split")
        }))
    }

    /// Node order and known mask for evaluation: all sensors, training
    /// sensors known, testing sensors unknown.
    pub fn evaluation_partition(&self) -> (Vec<usize>, Vec<bool>) {
        let nodes: Vec<usize> = (0..self.n_sensors()).collect();
        let mut known = vec![false; nodes.len()];
        for &i in &self.sensor_split.train {
            known[i] = true;
        }
        (nodes, known)
    }

    /// Writes `readings.csv`, `dist.csv`, optional `coords.csv` and
    /// `manifest.json` into `dir`, returning the manifest path.
    pub fn export(&self, dir: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut m = manifest.clone();
        m.readings = "readings.csv".into();
        m.distances = Some("dist.csv".into());
        write_readings_csv(
            dir.join("readings.csv"),
            self.ids(),
            &self.readings,
            self.observed.as_deref(),
            self.timestamps.as_deref(),
        )?;
        write_distance_csv(dir.join("dist.csv"), self.ids(), &self.graph.dist)?;
        if let Some(c) = &self.graph.coords {
            write_coords_csv(dir.join("coords.csv"), self.ids(), c)?;
            m.coords = Some("coords.csv".into());
        }
        m.frequency = self.frequency.clone();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let (m, base) = DatasetManifest::load(path)?;
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let source = match (&m.distances, &m.coords) {
            (Some(d), coords) => GraphSource::Distances {
                path: resolve(d),
                coords: coords.as_ref().map(resolve),
            },
            (None, Some(c)) => GraphSource::Coords {
                path: resolve(c),
                metric: m.distance_metric,
            },
            (None, None) => {
                return Err(Error::Config(
                    "manifest names neither distances nor coords".into(),
                ))
            }
        };
        load_csv(resolve(&m.readings), &source, &m)
    }
}

/// Target ranges of all stride-1 windows of length `len` inside `range`.
pub fn make_windows(range: Range<usize>, len: usize) -> Result<impl Iterator<Item = Range<usize>>> {
    if len == 0 || range.len() < len {
        return Err(Error::Data(format!(
            "split of {} frames is shorter than the window of {len}",
            range.len()
        )));
    }
    Ok((range.start..=range.end - len).map(move |s| s..s + len))
}
