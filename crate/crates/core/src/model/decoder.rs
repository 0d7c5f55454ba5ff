use super::ModelConfig;
use crate::error::Result;
use crate::nn::{Aspp, Conv2d, Initializer, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Stacked levels → ASPP → two 3×3 convs → 1×1 to one channel → bilinear
/// upsampling to image resolution. Returns logits; apply a sigmoid for
/// probabilities.
#[derive(Clone, Debug)]
pub struct Decoder {
    aspp: Aspp,
    conv1: Conv2d,
    conv2: Conv2d,
    head: Conv2d,
}

impl Decoder {
    pub fn new<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, init: &Initializer) -> Self {
        let c = cfg.channels;
        Decoder {
            aspp: Aspp::new(store, init, "decoder.aspp", 3 * c, c, &cfg.aspp_dilations),
            conv1: Conv2d::new(store, init, "decoder.conv1", c, c, 3, 1, 1),
            conv2: Conv2d::new(store, init, "decoder.conv2", c, c, 3, 1, 1),
            head: Conv2d::new(store, init, "decoder.head", c, 1, 1, 1, 1),
        }
    }

    /// Levels `[N, C, H, W]` → logits `[N, 1, size, size]`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, fused: &[Var], size: usize) -> Result<Var> {
        let x = g.concat(fused, 1)?;
        let x = self.aspp.forward(g, store, x)?;
        let x = g.relu(self.conv1.forward(g, store, x)?)?;
        let x = g.relu(self.conv2.forward(g, store, x)?)?;
        let x = self.head.forward(g, store, x)?;
        g.bilinear_resize(x, size, size)
    }
}
