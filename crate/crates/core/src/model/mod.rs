//! The two region-grounding models: a concatenation baseline and a
//! transformer-fused model sharing one backbone, text encoder and decoder.

mod config;
mod decoder;
mod encoders;
mod fusion;

pub use config::{ModelConfig, ModelKind, StageConfig};
pub use decoder::Decoder;
pub use encoders::{TextEncoder, VisualEncoder};
pub use fusion::{Fusion, FusionOutput};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::image::ProbMap;
use crate::nn::{Initializer, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// A batch of image/command pairs in model layout.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[N, 3, S, S]`
    pub images: Tensor<T>,
    /// `N × len` token ids, row-major.
    pub ids: Vec<usize>,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
    /// `[N, 1, S, S]` binary targets, when known.
    pub masks: Option<Tensor<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn from_examples(examples: &[&Example]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let s = first.mask.width;
        let seq_len = first.tokens.ids.len();
        let n = examples.len();
        let mut images = Vec::with_capacity(n * 3 * s * s);
        let mut masks = Vec::with_capacity(n * s * s);
        let mut ids = Vec::with_capacity(n * seq_len);
        let mut lengths = Vec::with_capacity(n);
        for e in examples {
            if e.image.len() != 3 * s * s || e.tokens.ids.len() != seq_len {
                return Err(Error::Contract(format!("{}: inconsistent sample size", e.id)));
            }
            images.extend(e.image.iter().map(|&v| T::lit(v as f64)));
            masks.extend(e.mask.data.iter().map(|&b| if b { T::one() } else { T::zero() }));
            ids.extend_from_slice(&e.tokens.ids);
            lengths.push(e.tokens.valid_len);
        }
        Ok(Batch {
            images: Tensor::new(&[n, 3, s, s], images)?,
            ids,
            seq_len,
            lengths,
            masks: Some(Tensor::new(&[n, 1, s, s], masks)?),
        })
    }
}

/// Everything a forward pass produces, for inspection and loss.
pub struct Forward {
    pub visual: Vec<Var>,
    pub words: Var,
    pub fusion: FusionOutput,
    /// `[N, 1, S, S]`
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct RnrModel {
    pub config: ModelConfig,
    pub visual: VisualEncoder,
    pub text: TextEncoder,
    pub fusion: Fusion,
    pub decoder: Decoder,
}

impl RnrModel {
    /// Builds the model and initializes its parameters into `store`.
    pub fn new<T: Scalar>(config: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = Initializer::new(seed);
        Ok(RnrModel {
            visual: VisualEncoder::new(&config, store, &init)?,
            text: TextEncoder::new(&config, store, &init),
            fusion: Fusion::new(&config, store, &init)?,
            decoder: Decoder::new(&config, store, &init),
            config,
        })
    }

    /// Architecture only, for loading parameters saved elsewhere.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        let mut scratch = ParamStore::<f32>::new();
        RnrModel::new(config, &mut scratch, 0)
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, batch: &Batch<T>) -> Result<Forward> {
        let s = self.config.image_size;
        let n = batch.len();
        if batch.images.shape() != [n, 3, s, s] {
            return Err(Error::Config(format!(
                "images have shape {:?}, model expects [{n}, 3, {s}, {s}]",
                batch.images.shape()
            )));
        }
        let images = g.constant(batch.images.clone());
        let visual = self.visual.forward(g, store, images)?;
        let words = self.text.forward(g, store, &batch.ids, batch.seq_len, &batch.lengths)?;
        let fusion = self.fusion.forward(g, store, &visual, words, &batch.lengths)?;
        let logits = self.decoder.forward(g, store, &fusion.fused, s)?;
        Ok(Forward {
            visual,
            words,
            fusion,
            logits,
        })
    }

    /// Mean pixel-wise BCE of the batch at full image resolution.
    pub fn loss<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, batch: &Batch<T>) -> Result<Var> {
        let masks = batch
            .masks
            .clone()
            .ok_or_else(|| Error::Contract("loss needs ground-truth masks".into()))?;
        let f = self.forward(g, store, batch)?;
        let target = g.constant(masks);
        g.bce_with_logits(f.logits, target)
    }

    /// Probability maps for every sample of the batch.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, batch: &Batch<T>) -> Result<Vec<ProbMap>> {
        let g = Graph::inference();
        let f = self.forward(&g, store, batch)?;
        let probs = g.sigmoid(f.logits)?;
        let p = g.value(probs);
        let s = self.config.image_size;
        p.data()
            .chunks(s * s)
            .map(|c| ProbMap::new(s, s, c.iter().map(|v| v.to_f64_lossy() as f32).collect()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(cfg: &ModelConfig, n: usize, with_masks: bool) -> Batch<f32> {
        let s = cfg.image_size;
        let init = Initializer::new(8);
        let images = init.normal::<f32>("img", &[n, 3, s, s], 0.3).map(|v| v + 0.5);
        let masks = Tensor::from_fn(&[n, 1, s, s], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        Batch {
            images,
            ids: (0..n * cfg.max_len).map(|i| 2 + i % (cfg.vocab_size - 2)).collect(),
            seq_len: cfg.max_len,
            lengths: (0..n).map(|i| 1 + i % cfg.max_len).collect(),
            masks: with_masks.then_some(masks),
        }
    }

    #[test]
    fn initialization_is_a_function_of_the_seed() {
        let cfg = ModelConfig::tiny(ModelKind::Tbm);
        let (mut a, mut b, mut c) = (ParamStore::<f32>::new(), ParamStore::new(), ParamStore::new());
        RnrModel::new(cfg.clone(), &mut a, 1).unwrap();
        RnrModel::new(cfg.clone(), &mut b, 1).unwrap();
        RnrModel::new(cfg, &mut c, 2).unwrap();
        let flat = |s: &ParamStore<f32>| s.iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn forward_shapes_for_both_kinds() {
        for kind in [ModelKind::Baseline, ModelKind::Tbm] {
            let cfg = ModelConfig::tiny(kind);
            let mut store = ParamStore::<f32>::new();
            let model = RnrModel::new(cfg.clone(), &mut store, 0).unwrap();
            let g = Graph::inference();
            let f = model.forward(&g, &store, &batch(&cfg, 3, false)).unwrap();
            assert_eq!(f.visual.len(), 3);
            assert_eq!(g.shape(f.words), [3, cfg.max_len, cfg.channels]);
            assert_eq!(g.shape(f.logits), [3, 1, cfg.image_size, cfg.image_size]);
            assert_eq!(f.fusion.attended.len(), if kind == ModelKind::Tbm { 3 } else { 0 });
            let probs = model.predict(&store, &batch(&cfg, 3, false)).unwrap();
            assert_eq!(probs.len(), 3);
            assert!(probs.iter().flat_map(|p| &p.data).all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn loss_is_finite_and_needs_masks() {
        let cfg = ModelConfig::tiny(ModelKind::Baseline);
        let mut store = ParamStore::<f32>::new();
        let model = RnrModel::new(cfg.clone(), &mut store, 0).unwrap();
        let g = Graph::new();
        let loss = model.loss(&g, &store, &batch(&cfg, 2, true)).unwrap();
        assert!(g.value(loss).item().is_finite() && g.value(loss).item() > 0.0);
        let g = Graph::new();
        assert!(matches!(model.loss(&g, &store, &batch(&cfg, 2, false)), Err(Error::Contract(_))));
    }

    #[test]
    fn malformed_batches_are_rejected() {
        let cfg = ModelConfig::tiny(ModelKind::Tbm);
        let mut store = ParamStore::<f32>::new();
        let model = RnrModel::new(cfg.clone(), &mut store, 0).unwrap();
        let g = Graph::inference();
        let mut b = batch(&cfg, 1, false);
        b.images = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(matches!(model.forward(&g, &store, &b), Err(Error::Config(_))));
        let mut b = batch(&cfg, 1, false);
        b.ids[0] = cfg.vocab_size;
        assert!(model.forward(&g, &store, &b).is_err());
        let mut b = batch(&cfg, 1, false);
        b.lengths[0] = 0;
        assert!(model.forward(&g, &store, &b).is_err());
    }

    #[test]
    fn skeleton_declares_the_same_parameters() {
        let cfg = ModelConfig::tiny(ModelKind::Tbm);
        let mut store = ParamStore::<f32>::new();
        RnrModel::new(cfg.clone(), &mut store, 3).unwrap();
        let skeleton = RnrModel::skeleton(cfg.clone()).unwrap();
        assert_eq!(skeleton.config, cfg);
        assert!(store.names().any(|n| n.starts_with("fusion.level2.layer0")));
    }
}
