//! Training loop, prediction at original resolution, and held-out evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::freeze_normalization;
use crate::checkpoint::Checkpoint;
use crate::data::{
    augment_train, collate, generate_synthetic, load_dataset, prepare_image, sample_rng,
    AugmentConfig, Sample, SyntheticSpec,
};
use crate::error::{PfpnError, Result};
use crate::graph::{Graph, Mode};
use crate::loss::{total_loss, total_loss_grads, LossBreakdown};
use crate::maps::{GroundTruthMask, SaliencyMap};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{ModelConfig, Pfpn, SideOutputs};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Directory with `images/` and `masks/`.
    Directory(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<Sample>> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Directory(root) => load_dataset(root),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    pub freeze_backbone_bn: bool,
    pub augment: AugmentConfig,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            max_iterations: 300,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 0,
            freeze_backbone_bn: true,
            augment: AugmentConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PfpnError::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 {
            return Err(PfpnError::Config("max_iterations must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(PfpnError::Config("batch_size must be at least 1".into()));
        }
        if self.augment.crop != self.model.input_size {
            return Err(PfpnError::Config(format!(
                "augment.crop ({}) must equal model.input_size ({})",
                self.augment.crop, self.model.input_size
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub total: f64,
    #[serde(rename = "final")]
    pub final_loss: f64,
    pub sides: Vec<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

pub struct TrainOutcome {
    pub model: Pfpn,
    pub store: ParamStore,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.model.config().clone(),
            self.log.len(),
            self.store.clone(),
        )
    }
}

/// Trailing moving average of the total loss with the given window.
pub fn smoothed_losses(log: &[LogEntry], window: usize) -> Vec<f64> {
    (0..log.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            log[lo..=i].iter().map(|e| e.total).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Visits the training set in seeded epochs of shuffled order.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl Sampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order
            .shuffle(&mut sample_rng(self.seed ^ SHUFFLE_SALT, self.epoch));
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

const SHUFFLE_SALT: u64 = 0x5348_5546;
const AUGMENT_SALT: u64 = 0x4155_4745;

/// Loss breakdown and parameter gradients for one batch, plus the
/// normalization statistics observed in training mode.
pub fn batch_gradients(
    model: &Pfpn,
    store: &ParamStore,
    images: &Tensor,
    masks: &[GroundTruthMask],
) -> Result<(
    LossBreakdown,
    crate::graph::Gradients,
    Vec<crate::params::StatUpdate>,
)> {
    let mut g = Graph::new(store, Mode::Train);
    let x = g.input(images.clone());
    let out = model.forward(&mut g, x)?;
    let b = masks.len();
    let final_t = g.value(out.final_map).clone();
    let side_ts: Vec<Tensor> = out.sides.iter().map(|&v| g.value(v).clone()).collect();
    let mut breakdowns = Vec::with_capacity(b);
    let mut final_seed = Tensor::zeros(final_t.shape());
    let mut side_seeds: Vec<Tensor> = side_ts.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (n, mask) in masks.iter().enumerate() {
        let final_map = SaliencyMap::from_tensor(&final_t, n)?;
        let sides = SideOutputs::new(
            side_ts
                .iter()
                .map(|t| SaliencyMap::from_tensor(t, n))
                .collect::<Result<Vec<_>>>()?,
        );
        breakdowns.push(total_loss(&final_map, &sides, mask)?);
        let (gf, gs) = total_loss_grads(&final_map, &sides, mask)?;
        for (dst, src) in final_seed.item_mut(n).iter_mut().zip(gf) {
            *dst = src / b as f64;
        }
        for (seed, grad) in side_seeds.iter_mut().zip(gs) {
            for (dst, src) in seed.item_mut(n).iter_mut().zip(grad) {
                *dst = src / b as f64;
            }
        }
    }
    let mut seeds = vec![(out.final_map, final_seed)];
    seeds.extend(out.sides.iter().copied().zip(side_seeds));
    let (grads, _) = g.backward(&seeds, &[]);
    let updates = g.take_stat_updates();
    Ok((LossBreakdown::mean(&breakdowns), grads, updates))
}

/// Runs `max_iterations` Adam steps on the deep-supervision loss. With an
/// output directory, writes the per-step log, periodic checkpoints and the
/// final checkpoint there.
pub fn train(
    config: &TrainConfig,
    samples: &[Sample],
    output_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(PfpnError::Input("training set is empty".into()));
    }
    let (model, mut store) = Pfpn::build(&config.model)?;
    if config.freeze_backbone_bn {
        freeze_normalization(&mut store);
    }
    let mut log_file = match output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| PfpnError::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            Some((
                BufWriter::new(File::create(&path).map_err(|e| PfpnError::io(&path, e))?),
                path,
            ))
        }
        None => None,
    };
    let mut adam = Adam::new(&store, config.learning_rate);
    let mut sampler = Sampler::new(samples.len(), config.seed);
    let (mean, std) = (config.model.input_mean, config.model.input_std);
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.max_iterations);
    let mut draw = 0u64;
    for step in 1..=config.max_iterations {
        let batch: Vec<Sample> = (0..config.batch_size)
            .map(|_| {
                let sample = &samples[sampler.next()];
                let mut rng = sample_rng(config.seed ^ AUGMENT_SALT, draw);
                draw += 1;
                augment_train(sample, &config.augment, &mut rng)
            })
            .collect();
        let (images, masks) = collate(&batch, &mean, &std);
        let (loss, grads, updates) = batch_gradients(&model, &store, &images, &masks)?;
        if !loss.is_finite() {
            return Err(PfpnError::NonFinite {
                step,
                detail: format!(
                    "total {} (final {}, sides {:?})",
                    loss.total, loss.final_loss, loss.side_losses
                ),
            });
        }
        if !grads.all_finite() {
            return Err(PfpnError::NonFinite {
                step,
                detail: "gradient contains NaN or infinity".into(),
            });
        }
        adam.step(&mut store, &grads);
        store.apply_stat_updates(&updates);
        let entry = LogEntry {
            step,
            total: loss.total,
            final_loss: loss.final_loss,
            sides: loss.side_losses,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if let Some((w, path)) = &mut log_file {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| PfpnError::io(&*path, e))?;
        }
        if step % 50 == 0 || step == config.max_iterations {
            log::info!(
                "step {step}/{}: loss {:.4}",
                config.max_iterations,
                entry.total
            );
        }
        log.push(entry);
        if let Some(dir) = output_dir {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                Checkpoint::new(config.model.clone(), step, store.clone())
                    .save(&dir.join(checkpoint_name(step)))?;
            }
        }
    }
    let outcome = TrainOutcome { model, store, log };
    if let Some(dir) = output_dir {
        outcome.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(outcome)
}

/// Evaluation-mode predictions for `1 x 3 x H x W` images in [0, 1],
/// bilinearly resized back to each image's original resolution.
pub fn predict_images(
    model: &Pfpn,
    store: &ParamStore,
    images: &[Tensor],
) -> Result<Vec<SaliencyMap>> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        let prepared: Vec<_> = chunk
            .iter()
            .map(|img| prepare_image(img, cfg.input_size, &cfg.input_mean, &cfg.input_std))
            .collect();
        let batch = Tensor::stack(&prepared.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>());
        for ((map, _), (_, size)) in model.predict(store, &batch)?.into_iter().zip(&prepared) {
            out.push(map.resized(size.height, size.width));
        }
    }
    Ok(out)
}

pub fn predict_samples(
    model: &Pfpn,
    store: &ParamStore,
    samples: &[Sample],
) -> Result<Vec<SaliencyMap>> {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image().clone()).collect();
    predict_images(model, store, &images)
}

const PREDICT_BATCH: usize = 16;

pub fn evaluate_model(
    model: &Pfpn,
    store: &ParamStore,
    samples: &[Sample],
) -> Result<MetricsReport> {
    let preds = predict_samples(model, store, samples)?;
    let masks: Vec<GroundTruthMask> = samples.iter().map(|s| s.mask().clone()).collect();
    evaluate(&preds, &masks)
}
