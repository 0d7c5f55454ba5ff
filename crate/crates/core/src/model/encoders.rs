use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Initializer, Lstm, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Small convolutional backbone with three tapped stages, each aligned to
/// the common `C × grid × grid` shape by its own 3×3 conv.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    stem: Conv2d,
    stages: Vec<Conv2d>,
    align: Vec<Conv2d>,
    image_size: usize,
}

impl VisualEncoder {
    pub fn new<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, init: &Initializer) -> Result<Self> {
        let st = cfg.stem;
        let stem = Conv2d::new(store, init, "visual.stem", 3, st.width, 3, st.stride, st.dilation);
        let mut c_in = st.width;
        let mut stages = vec![];
        let mut align = vec![];
        for (i, (s, size)) in cfg.stages.iter().zip(cfg.level_sizes()).enumerate() {
            let level = i + 2;
            stages.push(Conv2d::new(
                store,
                init,
                &format!("visual.layer{level}"),
                c_in,
                s.width,
                3,
                s.stride,
                s.dilation,
            ));
            align.push(Conv2d::new(
                store,
                init,
                &format!("visual.align{level}"),
                s.width,
                cfg.channels,
                3,
                size / cfg.grid,
                1,
            ));
            c_in = s.width;
        }
        Ok(VisualEncoder {
            stem,
            stages,
            align,
            image_size: cfg.image_size,
        })
    }

    /// `[N, 3, S, S]` → levels V2, V3, V4, each `[N, C, grid, grid]`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, images: Var) -> Result<Vec<Var>> {
        let s = g.shape(images);
        if s.len() != 4 || s[1] != 3 || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Config(format!(
                "image batch {s:?} does not match configured size {}",
                self.image_size
            )));
        }
        let mut x = g.relu(self.stem.forward(g, store, images)?)?;
        let mut levels = vec![];
        for (stage, align) in self.stages.iter().zip(&self.align) {
            x = g.relu(stage.forward(g, store, x)?)?;
            levels.push(g.relu(align.forward(g, store, x)?)?);
        }
        Ok(levels)
    }
}

/// Word embeddings followed by an LSTM whose hidden size is C.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    embedding: String,
    lstm: Lstm,
    vocab_size: usize,
    max_len: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, init: &Initializer) -> Self {
        let embedding = "text.embedding".to_string();
        store.insert(&embedding, init.normal(&embedding, &[cfg.vocab_size, cfg.embed_dim], 1.0));
        TextEncoder {
            embedding,
            lstm: Lstm::new(store, init, "text.lstm", cfg.embed_dim, cfg.channels),
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_len,
        }
    }

    /// `ids` holds `N × seq_len` token ids; returns word features
    /// `[N, seq_len, C]`. Rows at or past a sample's length are padding.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        ids: &[usize],
        seq_len: usize,
        lengths: &[usize],
    ) -> Result<Var> {
        if seq_len == 0 || seq_len > self.max_len {
            return Err(Error::Contract(format!(
                "command length {seq_len} outside 1..={}",
                self.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let n = lengths.len();
        let table = g.param(store, &self.embedding)?;
        let emb = g.embedding(table, ids, &[n, seq_len])?;
        self.lstm.forward(g, store, emb, lengths)
    }
}
