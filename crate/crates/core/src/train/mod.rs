//! Inductive training: random subgraphs of the training sensors, random
//! masking inside each subgraph, a two-head L2 loss and Adam.

mod adam;

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};

use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, ReadingWindow, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model_on, EvalPlan, Partition};
use crate::graph::SubgraphSample;
use crate::model::{self, Checkpoint, ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    /// Windows per optimizer step.
    pub batch: usize,
    pub mask_fraction: f64,
    pub subgraph_min_fraction: f64,
    pub seed: u64,
    /// Global gradient norm cap; off when `None`.
    pub grad_clip: Option<f64>,
    /// Validation scores every `val_stride`-th window of the validation range.
    pub val_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            steps_per_epoch: 100,
            batch: 1,
            mask_fraction: 0.5,
            subgraph_min_fraction: 0.7,
            seed: 0,
            grad_clip: None,
            val_stride: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad("lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return bad("mask_fraction must lie strictly between 0 and 1");
        }
        if !(self.subgraph_min_fraction > 0.0 && self.subgraph_min_fraction <= 1.0) {
            return bad("subgraph_min_fraction must lie in (0, 1]");
        }
        if self.batch == 0 || self.steps_per_epoch == 0 || self.val_stride == 0 {
            return bad("batch, steps_per_epoch and val_stride must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Number of masked nodes in a subgraph of `n` nodes, kept in `1..n`.
pub fn masked_count(n: usize, mask_fraction: f64) -> usize {
    ((mask_fraction * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Draws one training window on a random, partially masked subgraph of the
/// training sensors.
pub fn sample_training_instance(
    dataset: &Dataset,
    config: &TrainConfig,
    window_len: usize,
    rng: &mut impl Rng,
) -> Result<(SubgraphSample, ReadingWindow)> {
    let range = dataset.splits.range(Split::Train);
    if window_len == 0 || range.len() < window_len {
        return Err(Error::Data(format!(
            "training range of {} frames cannot hold a window of {window_len}",
            range.len()
        )));
    }
    let pool = &dataset.sensor_split.train;
    if pool.len() < 2 {
        return Err(Error::Data(
            "training needs at least 2 training sensors".into(),
        ));
    }
    let start = rng.random_range(range.start..=range.end - window_len);
    let min_n =
        ((config.subgraph_min_fraction * pool.len() as f64).ceil() as usize).clamp(2, pool.len());
    let n = rng.random_range(min_n..=pool.len());
    let mut nodes: Vec<usize> = index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    nodes.sort_unstable();
    let mut known_mask = vec![true; n];
    for i in index::sample(rng, n, masked_count(n, config.mask_fraction)) {
        known_mask[i] = false;
    }
    let graph = dataset.graph.restrict(&nodes)?;
    let window = dataset.window(
        start + window_len - 1,
        window_len,
        &nodes,
        known_mask.clone(),
    )?;
    Ok((
        SubgraphSample {
            node_ids: nodes,
            known_mask,
            graph,
        },
        window,
    ))
}

/// Sum of the mean squared errors of both heads over all nodes.
pub fn loss(tape: &mut Tape, short: Var, long: Var, target: Var) -> Result<Var> {
    let mse = |tape: &mut Tape, y: Var| -> Result<Var> {
        let d = tape.sub(y, target)?;
        let sq = tape.hadamard(d, d)?;
        let s = tape.sum_all(sq);
        Ok(tape.scale(s, 1.0 / (target.rows() * target.cols()) as f64))
    };
    let a = mse(tape, short)?;
    let b = mse(tape, long)?;
    tape.add(a, b)
}

/// Loss and parameter gradients on one window.
pub fn loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    sample: &SubgraphSample,
    window: &ReadingWindow,
) -> Result<(f64, ModelParams)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = model::forward_on_tape(&mut tape, window, &sample.graph, &bound, cfg)?;
    let target = tape.constant(window.target().clone());
    let l = loss(&mut tape, out.short, out.long, target)?;
    let value = tape.value(l).get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    tape.backward(l)?;
    Ok((value, bound.grads(&tape)?))
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_r2: Option<f64>,
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_mae", "val_rmse", "val_r2"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_mae.to_string(),
            r.val_rmse.to_string(),
            r.val_r2.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed validation partition: training sensors only, a seeded subset masked.
fn validation_partition(dataset: &Dataset, config: &TrainConfig) -> Partition {
    let nodes = dataset.sensor_split.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a11);
    let mut known = vec![true; nodes.len()];
    for i in index::sample(
        &mut rng,
        nodes.len(),
        masked_count(nodes.len(), config.mask_fraction),
    ) {
        known[i] = false;
    }
    Partition { nodes, known }
}

/// Resumable training state.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    model: ModelConfig,
    config: TrainConfig,
    params: ModelParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
    best: Option<(f64, usize, ModelParams)>,
    val_part: Partition,
}

impl<'a> Trainer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        model: ModelConfig,
        config: TrainConfig,
        params: ModelParams,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        params.check_layout(&model::param_specs(&model))?;
        if dataset.graph.directed != model.directed {
            return Err(Error::Config(
                "dataset graph direction does not match model config".into(),
            ));
        }
        Ok(Trainer {
            dataset,
            adam: AdamState::new(&params),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            val_part: validation_partition(dataset, &config),
            model,
            config,
            params,
            epoch: 0,
            history: Vec::new(),
            best: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(dataset: &'a Dataset, ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Trainer::new(dataset, ck.config.clone(), config, ck.params.clone())?;
        if let Some(opt) = &ck.optimizer {
            t.adam = AdamState::from_snapshot(opt);
        }
        if let Some(pos) = ck.rng_word_pos {
            t.rng.set_word_pos(pos);
        }
        if let Some(e) = ck.metadata.get("epoch").and_then(|v| v.as_u64()) {
            t.epoch = e as usize;
        }
        if let Some(h) = ck.metadata.get("history") {
            t.history = serde_json::from_value(h.clone())?;
        }
        Ok(t)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Current state including optimizer moments and the random stream.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), self.params.clone());
        ck.optimizer = Some(self.adam.snapshot());
        ck.rng_word_pos = Some(self.rng.get_word_pos());
        ck.metadata = serde_json::json!({
            "epoch": self.epoch,
            "history": self.history,
        });
        ck
    }

    /// One optimizer step over `batch` sampled windows; returns the mean loss.
    pub fn step(&mut self) -> Result<f64> {
        let samples = (0..self.config.batch)
            .map(|_| {
                sample_training_instance(
                    self.dataset,
                    &self.config,
                    self.model.window,
                    &mut self.rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (params, model) = (&self.params, &self.model);
        let results: Vec<(f64, ModelParams)> = samples
            .par_iter()
            .map(|(s, w)| loss_and_grads(params, model, s, w))
            .collect::<Result<_>>()?;
        let scale = 1.0 / results.len() as f64;
        let mut iter = results.into_iter();
        let (mut total, mut grads) = iter.next().expect("batch is nonempty");
        for (l, g) in iter {
            total += l;
            for ((_, acc), (_, x)) in grads.iter_mut().zip(g.iter()) {
                acc.as_mut_slice()
                    .iter_mut()
                    .zip(x.as_slice())
                    .for_each(|(a, b)| *a += b);
            }
        }
        if scale != 1.0 {
            for (_, g) in grads.iter_mut() {
                g.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
            }
        }
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        adam_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            &self.config.adam(),
        )?;
        if !self.params.is_finite() {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        Ok(total * scale)
    }

    /// Validation metrics of the long-term head on masked training sensors.
    pub fn validate(&self) -> Result<crate::eval::EvalReport> {
        let plan = EvalPlan {
            split: Split::Val,
            history: self.model.window,
            stride: self.config.val_stride,
        };
        Ok(evaluate_model_on(
            self.dataset,
            &self.params,
            &self.model,
            plan,
            &self.val_part,
        )?
        .long)
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let mut sum = 0.0;
        for _ in 0..self.config.steps_per_epoch {
            sum += self.step()?;
        }
        let val = self.validate()?;
        self.epoch += 1;
        let rec = EpochRecord {
            epoch: self.epoch,
            train_loss: sum / self.config.steps_per_epoch as f64,
            val_mae: val.mae,
            val_rmse: val.rmse,
            val_r2: val.r2,
        };
        log::info!(
            "epoch {} loss {:.5} val mae {:.5} rmse {:.5}",
            rec.epoch,
            rec.train_loss,
            rec.val_mae,
            rec.val_rmse
        );
        if self.best.as_ref().is_none_or(|(m, _, _)| rec.val_mae < *m) {
            self.best = Some((rec.val_mae, rec.epoch, self.params.clone()));
        }
        self.history.push(rec);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Best-validation parameters seen so far (current ones before any epoch).
    pub fn best(&self) -> (&ModelParams, Option<usize>) {
        match &self.best {
            Some((_, e, p)) => (p, Some(*e)),
            None => (&self.params, None),
        }
    }
}

/// Result of a full training run.
pub struct TrainOutcome {
    /// Best-validation parameters.
    pub params: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    /// State after the last epoch, for resuming.
    pub last: Checkpoint,
}

/// Trains from a seeded initialization for `config.epochs` epochs.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = model::init_params(model_config, config.seed)?;
    let mut t = Trainer::new(dataset, model_config.clone(), config.clone(), init)?;
    for _ in 0..config.epochs {
        t.run_epoch()?;
    }
    let (best, best_epoch) = t.best();
    Ok(TrainOutcome {
        params: best.clone(),
        best_epoch,
        history: t.history.clone(),
        last: t.checkpoint(),
    })
}
