use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Tbm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "tbm" => Ok(ModelKind::Tbm),
            _ => Err(Error::Config(format!("unknown model `{s}` (baseline, tbm)"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Tbm => "tbm",
        }
    }
}

/// One backbone convolution: 3×3, followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub width: usize,
    pub stride: usize,
    pub dilation: usize,
}

/// Architecture hyperparameters. The backbone is a stem followed by three
/// stages whose outputs are the visual levels; each level is aligned to a
/// `grid × grid` map of `channels` features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub image_size: usize,
    pub channels: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub stem: StageConfig,
    pub stages: [StageConfig; 3],
    pub grid: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    /// One transformer encoder for all levels instead of one per level.
    pub share_fusion: bool,
    pub pre_norm: bool,
    pub aspp_dilations: Vec<usize>,
}

const fn stage(width: usize, stride: usize, dilation: usize) -> StageConfig {
    StageConfig {
        width,
        stride,
        dilation,
    }
}

impl ModelConfig {
    /// Laptop-scale model: 64×64 images, C = 32, 8×8 grid, T = 12.
    pub fn desk(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            image_size: 64,
            channels: 32,
            max_len: 12,
            vocab_size: 48,
            embed_dim: 32,
            stem: stage(16, 2, 1),
            stages: [stage(24, 2, 1), stage(32, 2, 1), stage(32, 1, 2)],
            grid: 8,
            fusion_layers: 2,
            fusion_heads: 4,
            share_fusion: false,
            pre_norm: false,
            aspp_dilations: vec![2, 4],
        }
    }

    /// Published full-scale sizes: 448×448 images, C = 512, 14×14 grid,
    /// T = 40, 300-d word vectors.
    pub fn full(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            image_size: 448,
            channels: 512,
            max_len: 40,
            vocab_size: 48,
            embed_dim: 300,
            stem: stage(64, 4, 1),
            stages: [stage(128, 2, 1), stage(256, 2, 1), stage(512, 2, 1)],
            grid: 14,
            fusion_layers: 2,
            fusion_heads: 8,
            share_fusion: false,
            pre_norm: false,
            aspp_dilations: vec![6, 12, 18],
        }
    }

    /// Tiny model for finite-difference checks: C = 4, 2×2 grid, T = 3.
    pub fn tiny(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            image_size: 16,
            channels: 4,
            max_len: 3,
            vocab_size: 6,
            embed_dim: 4,
            stem: stage(3, 2, 1),
            stages: [stage(4, 2, 1), stage(4, 2, 1), stage(4, 1, 2)],
            grid: 2,
            fusion_layers: 1,
            fusion_heads: 2,
            share_fusion: false,
            pre_norm: false,
            aspp_dilations: vec![2],
        }
    }

    /// Spatial size of each visual level before alignment.
    pub fn level_sizes(&self) -> [usize; 3] {
        let mut s = self.image_size.div_ceil(self.stem.stride);
        let mut out = [0; 3];
        for (o, st) in out.iter_mut().zip(&self.stages) {
            s = s.div_ceil(st.stride);
            *o = s;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.grid == 0 || self.max_len == 0 || self.embed_dim == 0 {
            return bad("channels, grid, max_len and embed_dim must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad("vocabulary needs at least <unk> and <pad>".into());
        }
        for (i, s) in self.level_sizes().into_iter().enumerate() {
            if s % self.grid != 0 {
                return bad(format!("level {} has size {s}, not a multiple of grid {}", i + 2, self.grid));
            }
        }
        if self.kind == ModelKind::Tbm
            && (self.fusion_heads == 0 || self.channels % self.fusion_heads != 0)
        {
            return bad(format!(
                "channels {} not divisible by {} attention heads",
                self.channels, self.fusion_heads
            ));
        }
        Ok(())
    }

    /// Number of tokens the fusion transformer sees per level.
    pub fn token_count(&self) -> usize {
        self.grid * self.grid + self.max_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        for kind in [ModelKind::Baseline, ModelKind::Tbm] {
            for c in [ModelConfig::desk(kind), ModelConfig::full(kind), ModelConfig::tiny(kind)] {
                c.validate().unwrap();
            }
        }
        let d = ModelConfig::desk(ModelKind::Tbm);
        assert_eq!(d.level_sizes(), [16, 8, 8]);
        assert_eq!(d.token_count(), 76);
        let f = ModelConfig::full(ModelKind::Tbm);
        assert_eq!(f.level_sizes(), [56, 28, 14]);
        assert_eq!(ModelConfig::tiny(ModelKind::Tbm).level_sizes(), [4, 2, 2]);
    }

    #[test]
    fn bad_grid_is_a_config_error() {
        let mut c = ModelConfig::desk(ModelKind::Baseline);
        c.grid = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
