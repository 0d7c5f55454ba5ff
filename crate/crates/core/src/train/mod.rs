//! Run configuration, the training loop and checkpoints.

pub mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{Mask, ProbMap};
use crate::metrics;
use crate::model::{Batch, ModelConfig, ModelKind, RnrModel};
use crate::nn::{clip_global_norm, poly_decay_lr, AdamW, AdamWConfig, ParamStore};
use crate::rng::{mix, rng};
use crate::tensor::Graph;

/// Everything that defines a training run. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub decay_power: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Dataset root holding `train/`, `val/` and `vocab.txt`.
    pub data_dir: PathBuf,
    /// Use only the first `train_limit` training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Laptop-scale run: batch 16, 30 epochs, lr0 1e-3.
    pub fn desk(kind: ModelKind) -> Self {
        TrainConfig {
            seed: 42,
            batch_size: 16,
            epochs: 30,
            lr0: 1e-3,
            weight_decay: 5e-4,
            decay_power: 0.5,
            clip_norm: 1.0,
            data_dir: PathBuf::from("data"),
            train_limit: None,
            model: ModelConfig::desk(kind),
        }
    }

    /// Published hyperparameters: 448² images, C = 512, T = 40, batch 64,
    /// lr0 1e-4.
    pub fn full(kind: ModelKind) -> Self {
        TrainConfig {
            batch_size: 64,
            lr0: 1e-4,
            model: ModelConfig::full(kind),
            ..TrainConfig::desk(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        let finite = [self.lr0, self.weight_decay, self.decay_power, self.clip_norm];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.lr0 == 0.0 {
            return Err(Error::Config(
                "lr0 must be positive; weight_decay, decay_power, clip_norm nonnegative".into(),
            ));
        }
        if self.train_limit == Some(0) {
            return Err(Error::Config("train_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        config::to_toml(self)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = config::from_toml(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies `key=value` overrides such as `epochs=5` or
    /// `model.channels=16`.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let c: TrainConfig = config::apply_overrides(self, overrides, &["train_limit"])?;
        c.validate()?;
        Ok(c)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_pgm: Option<f64>,
}

pub struct TrainOutcome {
    pub model: RnrModel,
    pub params: ParamStore<f32>,
    /// Parameters of the epoch with the highest validation PGM (earliest on
    /// ties); the final parameters when there is no validation set.
    pub best_params: ParamStore<f32>,
    pub best_epoch: usize,
    /// `(optimizer step, batch loss)`, steps counted from 0.
    pub loss_trace: Vec<(usize, f32)>,
    pub epochs: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.loss_trace)
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,val_pgm\n");
        for e in &self.epochs {
            let pgm = e.val_pgm.map(|p| p.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{}", e.epoch, e.mean_loss, pgm).unwrap();
        }
        s
    }
}

pub fn loss_csv(trace: &[(usize, f32)]) -> String {
    let mut s = String::from("step,loss\n");
    for (step, loss) in trace {
        writeln!(s, "{step},{loss}").unwrap();
    }
    s
}

/// Where training writes its artifacts and reports progress.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives `loss.csv`, `epochs.csv`, `final.ckpt` and `best.ckpt`.
    pub out_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochStats)>,
}

/// Probability maps for a whole dataset, in batches.
pub fn predict_dataset(
    model: &RnrModel,
    params: &ParamStore<f32>,
    ds: &Dataset,
    batch_size: usize,
) -> Result<Vec<ProbMap>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.examples.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = Batch::<f32>::from_examples(&refs)?;
        out.extend(model.predict(params, &batch)?);
    }
    Ok(out)
}

pub fn dataset_pgm(model: &RnrModel, params: &ParamStore<f32>, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let probs = predict_dataset(model, params, ds, batch_size)?;
    let gts: Vec<Mask> = ds.examples.iter().map(|e| e.mask.clone()).collect();
    Ok(metrics::evaluate(&probs, &gts, &[1], 0.5)?.pgm)
}

fn check_dataset(config: &ModelConfig, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Contract(format!("{what} set is empty")));
    }
    if ds.image_size != config.image_size {
        return Err(Error::Config(format!(
            "{what} images are {0}×{0}, model expects {1}×{1}",
            ds.image_size, config.image_size
        )));
    }
    let t = ds.examples[0].tokens.ids.len();
    if t != config.max_len {
        return Err(Error::Config(format!(
            "{what} commands are tokenized to {t}, model expects T = {}",
            config.max_len
        )));
    }
    Ok(())
}

/// Trains from freshly initialized parameters. Each epoch visits the
/// training set in an order drawn from `mix(seed, epoch)`; every batch is
/// one AdamW step at the polynomially decayed learning rate.
pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: Option<&Dataset>, hooks: TrainHooks) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = match config.train_limit {
        Some(n) => train_set.subset(n),
        None => train_set.clone(),
    };
    check_dataset(&config.model, &train_set, "training")?;
    if let Some(v) = val_set {
        check_dataset(&config.model, v, "validation")?;
    }
    let TrainHooks { out_dir, mut on_epoch } = hooks;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut params = ParamStore::<f32>::new();
    let model = RnrModel::new(config.model.clone(), &mut params, config.seed)?;
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let n = train_set.len();
    let total_steps = config.epochs * config.steps_per_epoch(n);
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(mix(config.seed, epoch as u64)));
        let mut loss_sum = 0.0f64;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<_> = idx.iter().map(|&i| &train_set.examples[i]).collect();
            let batch = Batch::<f32>::from_examples(&refs)?;
            let g = Graph::new();
            let loss = model.loss(&g, &params, &batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss is {value} at step {step} (epoch {epoch})"
                )));
            }
            let mut grads = g.backward(loss)?.into_params();
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm);
            }
            let lr = poly_decay_lr(step, total_steps, config.lr0, config.decay_power)?;
            opt.step(&mut params, &grads, lr)?;
            trace.push((step, value));
            loss_sum += value as f64;
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / config.steps_per_epoch(n) as f64,
            val_pgm: match val_set {
                Some(v) => Some(dataset_pgm(&model, &params, v, config.batch_size)?),
                None => None,
            },
        };
        let improved = match (&best, stats.val_pgm) {
            (None, _) => true,
            (Some((b, _, _)), Some(p)) => p > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((stats.val_pgm.unwrap_or(0.0), epoch, params.clone()));
            if let Some(dir) = out_dir {
                checkpoint::save(&dir.join("best.ckpt"), &config.model, &params)?;
            }
        }
        if let Some(f) = on_epoch.as_mut() {
            f(&stats);
        }
        epochs.push(stats);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let outcome = TrainOutcome {
        model,
        params,
        best_params,
        best_epoch,
        loss_trace: trace,
        epochs,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("loss.csv"), outcome.loss_csv())?;
        std::fs::write(dir.join("epochs.csv"), outcome.epochs_csv())?;
        checkpoint::save(&dir.join("final.ckpt"), &config.model, &outcome.params)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_their_hyperparameters() {
        let d = TrainConfig::desk(ModelKind::Tbm);
        assert_eq!((d.model.image_size, d.model.channels, d.model.max_len), (64, 32, 12));
        assert_eq!((d.batch_size, d.epochs, d.lr0), (16, 30, 1e-3));
        let f = TrainConfig::full(ModelKind::Tbm);
        assert_eq!((f.model.image_size, f.model.channels, f.model.max_len), (448, 512, 40));
        assert_eq!((f.batch_size, f.lr0, f.weight_decay, f.decay_power), (64, 1e-4, 5e-4, 0.5));
        d.validate().unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::desk(ModelKind::Baseline);
        let text = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn overrides_edit_nested_keys() {
        let c = TrainConfig::desk(ModelKind::Tbm)
            .with_overrides(&["epochs=5", "model.channels=16", "data_dir=/tmp/x", "train_limit=8"])
            .unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.train_limit, Some(8));
        let base = TrainConfig::desk(ModelKind::Tbm);
        assert!(base.with_overrides(&["epoch=5"]).is_err());
        assert!(base.with_overrides(&["model.chanels=5"]).is_err());
        assert!(base.with_overrides(&["epochs"]).is_err());
        assert!(base.with_overrides(&["epochs=0"]).is_err());
        assert!(base.with_overrides(&["model.kind=cnn"]).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(poly_decay_lr(0, 100, 1e-3, 0.5).unwrap(), 1e-3);
        assert_eq!(poly_decay_lr(100, 100, 1e-3, 0.5).unwrap(), 0.0);
    }
}
