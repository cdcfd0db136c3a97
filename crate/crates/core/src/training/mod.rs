//! Optimizer, schedule, batching and the training loop.

mod adam;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::data::Structure;
use crate::error::{Error, Result};
use crate::geometry::{center, random_rotation, LossWeights, Point, PointCloud, ResidueGroups};
use crate::model::{Checkpoint, ParamEntry, QuantMode, TokenizerModel};
use crate::quantizer::{codebook_usage, TokenId};

const MAX_CONSECUTIVE_SKIPS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_power: f64,
    pub total_steps: u64,
    /// Structures per forward/backward micro-batch.
    pub batch_size: usize,
    /// Structures per optimizer update; a multiple of `batch_size`.
    pub effective_batch: usize,
    /// Longer structures are left out of training.
    pub max_seq_len: usize,
    pub augment_rotations: bool,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables periodic validation.
    pub validate_every: u64,
    /// Validate on at most this many held-out structures (0 = all).
    pub val_limit: usize,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    /// Rescale the averaged gradient to at most this global L2 norm (0 = off).
    pub clip_grad_norm: f64,
    /// Process structures one at a time on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_start: 3e-4,
            lr_end: 0.0,
            lr_power: 1.0,
            total_steps: 1000,
            batch_size: 8,
            effective_batch: 8,
            max_seq_len: 4160,
            augment_rotations: true,
            seed: 0,
            checkpoint_every: 0,
            validate_every: 100,
            val_limit: 0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            clip_grad_norm: 0.0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.batch_size == 0 || self.effective_batch == 0 || self.effective_batch % self.batch_size != 0 {
            return Err(Error::Config(format!(
                "effective_batch {} must be a positive multiple of batch_size {}",
                self.effective_batch, self.batch_size
            )));
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0 && self.lr_end <= self.lr_start && self.lr_power > 0.0) {
            return Err(Error::Config("learning rates must satisfy 0 <= lr_end <= lr_start and lr_power > 0".into()));
        }
        if !(self.clip_grad_norm >= 0.0) {
            return Err(Error::Config("clip_grad_norm must be non-negative".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}

/// `end + (start - end) * (1 - step / total)^power`, clamped to the schedule.
pub fn polynomial_lr(step: u64, cfg: &TrainConfig) -> f64 {
    let frac = (step.min(cfg.total_steps) as f64) / cfg.total_steps as f64;
    cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1.0 - frac).powf(cfg.lr_power)
}

/// Right-padded coordinates with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch x max_len]` points, zero at padded positions.
    pub coords: Vec<Point>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub groups: Vec<ResidueGroups>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// The unpadded points of structure `i`.
    pub fn structure(&self, i: usize) -> &[Point] {
        let start = i * self.max_len;
        &self.coords[start..start + self.lengths[i]]
    }
}

pub fn make_batch(structures: &[&PointCloud], max_seq_len: usize) -> Result<Batch> {
    if structures.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    if let Some(pc) = structures.iter().find(|pc| pc.len() > max_seq_len) {
        return Err(Error::invalid(format!("structure of {} atoms exceeds max_seq_len {max_seq_len}", pc.len())));
    }
    let max_len = structures.iter().map(|pc| pc.len()).max().unwrap_or(0);
    let mut coords = vec![[0.0; 3]; structures.len() * max_len];
    let mut mask = vec![false; structures.len() * max_len];
    for (i, pc) in structures.iter().enumerate() {
        coords[i * max_len..i * max_len + pc.len()].copy_from_slice(&pc.coords);
        mask[i * max_len..i * max_len + pc.len()].fill(true);
    }
    Ok(Batch {
        coords,
        mask,
        lengths: structures.iter().map(|pc| pc.len()).collect(),
        max_len,
        groups: structures.iter().map(|pc| pc.residue_groups()).collect(),
    })
}

/// Loss terms and parameter gradients for one structure.
#[derive(Clone, Debug)]
pub struct StructureGrad {
    pub total: f64,
    pub rmse: f64,
    pub interatomic: f64,
    pub tokens: Vec<TokenId>,
    pub grads: Vec<Vec<f32>>,
}

/// Builds a fresh graph for one structure and backpropagates its loss.
pub fn structure_gradient(model: &TokenizerModel, coords: &[Point], groups: &ResidueGroups, weights: LossWeights) -> Result<StructureGrad> {
    let net = model.network::<f32>(true)?;
    let f = net.forward(coords, groups, weights, QuantMode::Quantize)?;
    let total = f.loss.total.item() as f64;
    if total.is_finite() {
        f.loss.total.backward()?;
    }
    let grads = net
        .leaves()
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![if total.is_finite() { 0.0 } else { f32::NAN }; t.numel()]))
        .collect();
    Ok(StructureGrad {
        total,
        rmse: f.loss.rmse.item() as f64,
        interatomic: f.loss.interatomic.item() as f64,
        tokens: f.tokens.ids,
        grads,
    })
}

/// Sum of per-structure losses over the valid (unmasked) part of a batch,
/// with gradients summed in batch order.
pub fn batch_gradient(model: &TokenizerModel, batch: &Batch, weights: LossWeights, parallel: bool) -> Result<(f64, Vec<StructureGrad>)> {
    let one = |i: usize| structure_gradient(model, batch.structure(i), &batch.groups[i], weights);
    let parts: Vec<StructureGrad> = if parallel {
        (0..batch.len()).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..batch.len()).map(one).collect::<Result<_>>()?
    };
    Ok((parts.iter().map(|p| p.total).sum(), parts))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub rmse_term: f64,
    pub interatomic_term: f64,
    /// Global L2 norm of the averaged gradient before clipping.
    #[serde(default)]
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_rmse: Option<f64>,
    pub codebook_usage: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    step: u64,
    adam_t: u64,
    best_val_rmse: Option<f64>,
    consecutive_skips: u32,
}

/// Mutable training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub adam: AdamState,
    pub best_val_rmse: Option<f64>,
    pub consecutive_skips: u32,
}

/// Mean Kabsch RMSE of tokenize-then-decode over `structures`.
pub fn evaluate_rmse(model: &TokenizerModel, structures: &[Structure]) -> Result<f64> {
    if structures.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let rmses: Vec<f64> = structures
        .par_iter()
        .map(|s| model.inference()?.reconstruct(&s.cloud).map(|r| r.rmse))
        .collect::<Result<_>>()?;
    Ok(rmses.iter().sum::<f64>() / rmses.len() as f64)
}

pub struct Trainer {
    pub model: TokenizerModel,
    pub config: TrainConfig,
    pub state: TrainState,
    train: Vec<Structure>,
    val: Vec<Structure>,
    epoch: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    /// Structures longer than `max_seq_len` are dropped from `train` with a warning.
    pub fn new(model: TokenizerModel, config: TrainConfig, train: Vec<Structure>, val: Vec<Structure>) -> Result<Self> {
        config.validate()?;
        let before = train.len();
        let train: Vec<Structure> = train.into_iter().filter(|s| s.cloud.len() <= config.max_seq_len).collect();
        if train.len() < before {
            log::warn!("{} structures exceed max_seq_len {} and are not trained on", before - train.len(), config.max_seq_len);
        }
        if train.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let shapes: Vec<usize> = model.params.entries().iter().map(|e| e.values.len()).collect();
        let val = if config.val_limit > 0 { val.into_iter().take(config.val_limit).collect() } else { val };
        Ok(Trainer {
            model,
            config,
            state: TrainState {
                step: 0,
                adam: AdamState::new(&shapes),
                best_val_rmse: None,
                consecutive_skips: 0,
            },
            train,
            val,
            epoch: None,
        })
    }

    pub fn val_set(&self) -> &[Structure] {
        &self.val
    }

    /// Mean held-out RMSE of the current parameters.
    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        evaluate_rmse(&self.model, &self.val).map(Some)
    }

    /// Index of the structure at stream position `pos`. Every epoch is an
    /// independent seeded permutation, so any position can be recomputed.
    fn sample(&mut self, pos: u64) -> usize {
        let n = self.train.len() as u64;
        let epoch = pos / n;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(2 * epoch);
            let mut perm: Vec<usize> = (0..self.train.len()).collect();
            perm.shuffle(&mut rng);
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().expect("epoch").1[(pos % n) as usize]
    }

    fn step_inputs(&mut self) -> Vec<PointCloud> {
        let eb = self.config.effective_batch as u64;
        let step = self.state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * step + 1);
        (0..eb)
            .map(|j| {
                let idx = self.sample(step * eb + j);
                let pc = center(&self.train[idx].cloud);
                if self.config.augment_rotations {
                    pc.transformed(&random_rotation(&mut rng), [0.0; 3])
                } else {
                    pc
                }
            })
            .collect()
    }

    /// One optimizer update over `effective_batch` structures.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let clouds = self.step_inputs();
        let lr = polynomial_lr(self.state.step, &self.config);
        let parallel = !self.config.deterministic;
        let mut sum: Vec<Vec<f32>> = self.model.params.zeros_like();
        let (mut total, mut rmse, mut inter) = (0.0, 0.0, 0.0);
        let mut ids: Vec<TokenId> = Vec::new();
        for chunk in clouds.chunks(self.config.batch_size) {
            let refs: Vec<&PointCloud> = chunk.iter().collect();
            let batch = make_batch(&refs, self.config.max_seq_len)?;
            let (_, parts) = batch_gradient(&self.model, &batch, self.config.loss, parallel)?;
            for p in parts {
                total += p.total;
                rmse += p.rmse;
                inter += p.interatomic;
                ids.extend(p.tokens);
                for (s, g) in sum.iter_mut().zip(&p.grads) {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a += *b;
                    }
                }
            }
        }
        let n = clouds.len() as f64;
        let inv = 1.0 / n as f32;
        sum.iter_mut().flatten().for_each(|g| *g *= inv);
        let grad_norm = sum.iter().flatten().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
        let clip = self.config.clip_grad_norm;
        if clip > 0.0 && grad_norm > clip {
            let scale = (clip / grad_norm) as f32;
            sum.iter_mut().flatten().for_each(|g| *g *= scale);
        }

        let finite = total.is_finite();
        let applied = finite && {
            let mut views: Vec<&mut [f32]> = self.model.params.entries_mut().iter_mut().map(|e| e.values.as_mut_slice()).collect();
            adam_step(&mut views, &sum, &mut self.state.adam, lr, &self.config.adam)?
        };
        self.state.step += 1;
        if applied {
            self.state.consecutive_skips = 0;
        } else {
            self.state.consecutive_skips += 1;
            log::warn!("step {}: non-finite loss or gradient, update skipped", self.state.step);
            if self.state.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::TrainingAborted {
                    step: self.state.step,
                    reason: format!("{MAX_CONSECUTIVE_SKIPS} consecutive non-finite steps"),
                });
            }
        }
        let mut val_rmse = None;
        let ve = self.config.validate_every;
        if ve > 0 && (self.state.step % ve == 0 || self.state.step == self.config.total_steps) {
            val_rmse = self.validate()?;
            if let Some(v) = val_rmse {
                if self.state.best_val_rmse.map_or(true, |b| v < b) {
                    self.state.best_val_rmse = Some(v);
                }
            }
        }
        Ok(MetricsRecord {
            step: self.state.step,
            lr,
            train_loss: total / n,
            rmse_term: rmse / n,
            interatomic_term: inter / n,
            grad_norm,
            val_rmse,
            codebook_usage: codebook_usage(&ids, self.model.config.levels.codebook_size())?,
            skipped: !applied,
        })
    }

    /// Runs until `total_steps`, appending JSON lines to `log` and writing
    /// `latest.ckpt` / `final.ckpt` into `checkpoint_dir`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        while self.state.step < self.config.total_steps {
            let r = self.step()?;
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut **w, &r)?;
                w.write_all(b"\n")?;
            }
            records.push(r);
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.state.step % every == 0 {
                    self.checkpoint()?.save(&dir.join("latest.ckpt"))?;
                }
            }
        }
        if let Some(w) = log.as_mut() {
            w.flush()?;
        }
        if let Some(dir) = checkpoint_dir {
            self.checkpoint()?.save(&dir.join("final.ckpt"))?;
        }
        Ok(records)
    }

    /// Model parameters, Adam moments (`adam.m.*`, `adam.v.*`) and progress.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.model.to_checkpoint()?;
        let meta = TrainMeta {
            config: self.config.clone(),
            step: self.state.step,
            adam_t: self.state.adam.t,
            best_val_rmse: self.state.best_val_rmse,
            consecutive_skips: self.state.consecutive_skips,
        };
        ckpt.meta["train"] = serde_json::to_value(meta)?;
        for (prefix, moments) in [("adam.m", &self.state.adam.m), ("adam.v", &self.state.adam.v)] {
            for (e, values) in self.model.params.entries().iter().zip(moments) {
                ckpt.tensors.push(ParamEntry {
                    name: format!("{prefix}.{}", e.name),
                    shape: e.shape.clone(),
                    values: values.clone(),
                });
            }
        }
        Ok(ckpt)
    }

    /// Continues a run from [`checkpoint`](Self::checkpoint) output. The
    /// stored training config is used unless `config` overrides it.
    pub fn resume(ckpt: &Checkpoint, config: Option<TrainConfig>, train: Vec<Structure>, val: Vec<Structure>) -> Result<Self> {
        let model = TokenizerModel::from_checkpoint(ckpt)?;
        let meta: TrainMeta = serde_json::from_value(
            ckpt.meta
                .get("train")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no training state".into()))?,
        )?;
        let mut t = Trainer::new(model, config.unwrap_or(meta.config), train, val)?;
        let moment = |prefix: &str| -> Result<Vec<Vec<f32>>> {
            t.model
                .params
                .entries()
                .iter()
                .map(|e| {
                    let name = format!("{prefix}.{}", e.name);
                    ckpt.tensor(&name)
                        .filter(|m| m.shape == e.shape)
                        .map(|m| m.values.clone())
                        .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer tensor {name}")))
                })
                .collect()
        };
        t.state = TrainState {
            step: meta.step,
            adam: AdamState {
                m: moment("adam.m")?,
                v: moment("adam.v")?,
                t: meta.adam_t,
            },
            best_val_rmse: meta.best_val_rmse,
            consecutive_skips: meta.consecutive_skips,
        };
        Ok(t)
    }
}

/// Trains `model` from scratch on `train`, validating on `val`.
pub fn train(model: TokenizerModel, train: Vec<Structure>, val: Vec<Structure>, config: TrainConfig) -> Result<(TokenizerModel, Vec<MetricsRecord>)> {
    let mut t = Trainer::new(model, config, train, val)?;
    let records = t.run(None, None)?;
    Ok((t.model, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, synth_polymer, PolymerStyle, StructureKind};
    use crate::model::TokenizerConfig;
    use crate::quantizer::FsqSpec;

    fn tiny_model(seed: u64) -> TokenizerModel {
        TokenizerModel::new(TokenizerConfig {
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_model: 16,
            levels: FsqSpec::uniform(8, 4).unwrap(),
            d_state: 4,
            seed,
            ..TokenizerConfig::default()
        })
        .unwrap()
    }

    fn short_cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            batch_size: 2,
            effective_batch: 4,
            validate_every: 5,
            lr_start: 3e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig {
            lr_end: 1e-5,
            total_steps: 100,
            ..TrainConfig::default()
        };
        assert_eq!(polynomial_lr(0, &cfg), 3e-4);
        assert!((polynomial_lr(100, &cfg) - 1e-5).abs() < 1e-18);
        assert!((polynomial_lr(50, &cfg) - (3e-4 + 1e-5) / 2.0).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=100).map(|s| polynomial_lr(s, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn padding_and_mask() {
        let a = PointCloud::from_coords(vec![[1.0, 0.0, 0.0]; 10]).unwrap();
        let b = PointCloud::from_coords(vec![[0.0, 2.0, 0.0]; 20]).unwrap();
        let batch = make_batch(&[&a, &b], 64).unwrap();
        assert_eq!(batch.max_len, 20);
        assert_eq!(batch.mask.iter().filter(|m| !**m).count(), 10);
        assert!(batch.coords[10..20].iter().all(|p| *p == [0.0; 3]));
        assert_eq!(batch.structure(0), &a.coords[..]);
        let same = make_batch(&[&a, &a], 64).unwrap();
        assert!(same.mask.iter().all(|m| *m));
        assert!(make_batch(&[], 64).is_err());
        assert!(make_batch(&[&b], 10).is_err());
    }

    #[test]
    fn masked_loss_matches_unpadded() {
        let model = tiny_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = center(&synth_polymer(&mut rng, 6, 2, PolymerStyle::Coil).unwrap());
        let b = center(&synth_polymer(&mut rng, 11, 3, PolymerStyle::Helix).unwrap());
        let batch = make_batch(&[&a, &b], 100).unwrap();
        let (total, _) = batch_gradient(&model, &batch, LossWeights::default(), false).unwrap();
        let separate: f64 = [&a, &b].iter().map(|pc| model.evaluate_loss(pc, LossWeights::default()).unwrap().0).sum();
        assert!((total - separate).abs() <= 1e-5 * separate, "{total} vs {separate}");
        let (par, _) = batch_gradient(&model, &batch, LossWeights::default(), true).unwrap();
        assert_eq!(par, total);
    }

    #[test]
    fn augmentation_changes_losses() {
        let data = synth_dataset(1, 6, 20..=40, None).unwrap();
        let run = |augment| {
            let cfg = TrainConfig {
                augment_rotations: augment,
                validate_every: 0,
                ..short_cfg(3)
            };
            train(tiny_model(0), data.clone(), vec![], cfg).unwrap().1.iter().map(|r| r.train_loss).collect::<Vec<_>>()
        };
        let (on, off) = (run(true), run(false));
        assert_ne!(on, off);
        assert_eq!(run(true), on);
    }

    #[test]
    fn resume_is_bit_identical() {
        let data = synth_dataset(2, 8, 20..=40, None).unwrap();
        let val = synth_dataset(3, 2, 20..=40, None).unwrap();
        let cfg = TrainConfig {
            deterministic: true,
            ..short_cfg(10)
        };
        let mut full = Trainer::new(tiny_model(0), cfg.clone(), data.clone(), val.clone()).unwrap();
        let mut log_full = Vec::new();
        full.run(Some(&mut log_full), None).unwrap();

        let mut first = Trainer::new(tiny_model(0), cfg.clone(), data.clone(), val.clone()).unwrap();
        let mut log_split = Vec::new();
        for _ in 0..5 {
            let r = first.step().unwrap();
            serde_json::to_writer(&mut log_split, &r).unwrap();
            log_split.push(b'\n');
        }
        let bytes = first.checkpoint().unwrap().to_bytes().unwrap();
        let mut second = Trainer::resume(&Checkpoint::from_bytes(&bytes).unwrap(), None, data, val).unwrap();
        second.run(Some(&mut log_split), None).unwrap();
        assert_eq!(String::from_utf8(log_full).unwrap(), String::from_utf8(log_split).unwrap());
        assert_eq!(full.model, second.model);
    }

    #[test]
    fn overfits_one_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Structure {
            name: "one".into(),
            kind: StructureKind::Synthetic,
            cloud: synth_polymer(&mut rng, 8, 2, PolymerStyle::Coil).unwrap(),
        };
        let model = tiny_model(5);
        let before = evaluate_rmse(&model, std::slice::from_ref(&s)).unwrap();
        let cfg = TrainConfig {
            total_steps: 300,
            batch_size: 1,
            effective_batch: 1,
            augment_rotations: false,
            validate_every: 0,
            lr_start: 1e-2,
            lr_end: 1e-4,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model, vec![s.clone()], vec![], cfg).unwrap();
        let after = evaluate_rmse(&trained, std::slice::from_ref(&s)).unwrap();
        assert!(after < 0.25 * before, "{before} -> {after}");
        assert!(log.last().unwrap().train_loss < log[0].train_loss);
    }

    #[test]
    fn clipping_rescales_updates() {
        let data = synth_dataset(6, 4, 20..=40, None).unwrap();
        let run = |clip| {
            let cfg = TrainConfig {
                clip_grad_norm: clip,
                validate_every: 0,
                deterministic: true,
                ..short_cfg(3)
            };
            train(tiny_model(0), data.clone(), vec![], cfg).unwrap()
        };
        let (free, free_log) = run(0.0);
        let (clipped, clipped_log) = run(1e-3);
        assert!(free_log[0].grad_norm > 1e-3);
        assert_eq!(free_log[0].grad_norm, clipped_log[0].grad_norm);
        assert_ne!(free, clipped);
    }

    #[test]
    fn config_errors() {
        let bad = TrainConfig {
            batch_size: 3,
            effective_batch: 4,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { clip_grad_norm: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(Trainer::new(tiny_model(0), TrainConfig::default(), vec![], vec![]).is_err());
    }
}
