use super::{Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Logit added to masked attention positions. Large enough that `exp`
/// underflows to exactly zero in both precisions.
const MASKED_LOGIT: f64 = -1e9;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the last axis: `x · W + b` with `W [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: String,
    bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = join(prefix, "weight");
        let bias = join(prefix, "bias");
        store.insert(&weight, init.fan_in_uniform(&weight, &[in_dim, out_dim], in_dim));
        store.insert(&bias, Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::dim("linear", &shape, &[self.in_dim, self.out_dim]));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, self.in_dim])?;
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        let y = g.matmul(flat, w)?;
        let b = g.reshape(b, &[1, self.out_dim])?;
        let y = g.add_broadcast(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        g.reshape(y, &out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: String,
    bias: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let weight = join(prefix, "weight");
        let bias = join(prefix, "bias");
        let fan_in = c_in * kernel * kernel;
        store.insert(&weight, init.fan_in_uniform(&weight, &[c_out, c_in, kernel, kernel], fan_in));
        store.insert(&bias, Tensor::zeros(&[c_out]));
        Conv2d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            dilation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        g.conv2d(x, w, Some(b), self.stride, self.dilation)
    }
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: String,
    shift: String,
    dim: usize,
    eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        let gain = join(prefix, "weight");
        let shift = join(prefix, "bias");
        store.insert(&gain, Tensor::ones(&[dim]));
        store.insert(&shift, Tensor::zeros(&[dim]));
        LayerNorm {
            gain,
            shift,
            dim,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        let norm = g.layer_norm(x, self.eps)?;
        let mut bshape = vec![1; shape.len()];
        *bshape.last_mut().unwrap() = self.dim;
        let gain = g.param(store, &self.gain)?;
        let gain = g.reshape(gain, &bshape)?;
        let shift = g.param(store, &self.shift)?;
        let shift = g.reshape(shift, &bshape)?;
        let y = g.mul_broadcast(norm, gain)?;
        g.add_broadcast(y, shift)
    }
}

/// Additive attention bias `[N·heads, len_q, len_k]`: zero for visible keys,
/// a large negative logit where `masked[n][j]` is set.
pub fn attention_mask<T: Scalar>(masked: &[Vec<bool>], heads: usize, len_q: usize) -> Tensor<T> {
    let len_k = masked.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(masked.len() * heads * len_q * len_k);
    for row in masked {
        for _ in 0..heads * len_q {
            data.extend(row.iter().map(|&m| if m { T::lit(MASKED_LOGIT) } else { T::zero() }));
        }
    }
    Tensor::new(&[masked.len() * heads, len_q, len_k], data).expect("mask extents")
}

/// Scaled dot-product attention with `heads` heads over `[N, len, C]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q_proj: Linear,
    k_proj: Linear,
    v_proj: Linear,
    out_proj: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q_proj: Linear::new(store, init, &join(prefix, "q_proj"), dim, dim),
            k_proj: Linear::new(store, init, &join(prefix, "k_proj"), dim, dim),
            v_proj: Linear::new(store, init, &join(prefix, "v_proj"), dim, dim),
            out_proj: Linear::new(store, init, &join(prefix, "out_proj"), dim, dim),
            dim,
            heads,
        })
    }

    /// `[N, len, C]` → `[N·heads, len, C/heads]`
    fn split_heads<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let dh = self.dim / self.heads;
        let x = g.reshape(x, &[s[0], s[1], self.heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[s[0] * self.heads, s[1], dh])
    }

    #[allow(clippy::too_many_arguments)]
    fn attend<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        query: Var,
        key: Var,
        value: Var,
        key_padding: Option<&[Vec<bool>]>,
        with_weights: bool,
    ) -> Result<(Var, Option<Tensor<T>>)> {
        let (qs, ks) = (g.shape(query), g.shape(key));
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return Err(Error::dim("multi_head_attention", &qs, &ks));
        }
        let (batch, len_q, len_k) = (qs[0], qs[1], ks[1]);
        if let Some(mask) = key_padding {
            if mask.len() != batch || mask.iter().any(|m| m.len() != len_k) {
                return Err(Error::Contract(format!(
                    "key padding mask must be {batch} rows of {len_k} entries"
                )));
            }
        }
        let q = self.split_heads(g, self.q_proj.forward(g, store, query)?)?;
        let k = self.split_heads(g, self.k_proj.forward(g, store, key)?)?;
        let v = self.split_heads(g, self.v_proj.forward(g, store, value)?)?;

        let weights = if with_weights {
            Some(g.attention_weights(q, k, key_padding, self.heads)?)
        } else {
            None
        };
        let dh = self.dim / self.heads;
        let ctx = g.attention(q, k, v, key_padding, self.heads)?;
        let ctx = g.reshape(ctx, &[batch, self.heads, len_q, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch, len_q, self.dim])?;
        Ok((self.out_proj.forward(g, store, ctx)?, weights))
    }

    /// Returns the attended output `[N, len_q, C]` and the attention weights
    /// `[N·heads, len_q, len_k]`. `key_padding[n][j]` hides key `j` of
    /// sample `n`.
    pub fn forward_with_weights<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        query: Var,
        key: Var,
        value: Var,
        key_padding: Option<&[Vec<bool>]>,
    ) -> Result<(Var, Tensor<T>)> {
        let (out, w) = self.attend(g, store, query, key, value, key_padding, true)?;
        Ok((out, w.expect("weights requested")))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        query: Var,
        key: Var,
        value: Var,
        key_padding: Option<&[Vec<bool>]>,
    ) -> Result<Var> {
        self.attend(g, store, query, key, value, key_padding, false).map(|(out, _)| out)
    }
}

/// Self-attention and a ReLU feed-forward block (hidden width 4C), each with
/// a residual connection and layer normalization.
#[derive(Clone, Debug)]
pub struct TransformerEncoderLayer {
    attn: MultiHeadAttention,
    ff1: Linear,
    ff2: Linear,
    norm1: LayerNorm,
    norm2: LayerNorm,
    /// Normalize before each sublayer instead of after the residual add.
    pub pre_norm: bool,
}

impl TransformerEncoderLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        dim: usize,
        heads: usize,
        pre_norm: bool,
    ) -> Result<Self> {
        Ok(TransformerEncoderLayer {
            attn: MultiHeadAttention::new(store, init, &join(prefix, "attn"), dim, heads)?,
            ff1: Linear::new(store, init, &join(prefix, "ff1"), dim, 4 * dim),
            ff2: Linear::new(store, init, &join(prefix, "ff2"), 4 * dim, dim),
            norm1: LayerNorm::new(store, &join(prefix, "norm1"), dim),
            norm2: LayerNorm::new(store, &join(prefix, "norm2"), dim),
            pre_norm,
        })
    }

    fn feed_forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ff1.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.ff2.forward(g, store, h)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        key_padding: Option<&[Vec<bool>]>,
    ) -> Result<Var> {
        if self.pre_norm {
            let n = self.norm1.forward(g, store, x)?;
            let a = self.attn.forward(g, store, n, n, n, key_padding)?;
            let x = g.add(x, a)?;
            let n = self.norm2.forward(g, store, x)?;
            let f = self.feed_forward(g, store, n)?;
            g.add(x, f)
        } else {
            let a = self.attn.forward(g, store, x, x, x, key_padding)?;
            let x = g.add(x, a)?;
            let x = self.norm1.forward(g, store, x)?;
            let f = self.feed_forward(g, store, x)?;
            let x = g.add(x, f)?;
            self.norm2.forward(g, store, x)
        }
    }
}

/// Single-layer unidirectional LSTM. Gate order in the packed weights is
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    w_input: String,
    w_hidden: String,
    bias: String,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let w_input = join(prefix, "w_input");
        let w_hidden = join(prefix, "w_hidden");
        let bias = join(prefix, "bias");
        store.insert(&w_input, init.fan_in_uniform(&w_input, &[input_dim, 4 * hidden], input_dim));
        store.insert(&w_hidden, init.fan_in_uniform(&w_hidden, &[hidden, 4 * hidden], hidden));
        let forget_bias = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                T::one()
            } else {
                T::zero()
            }
        });
        store.insert(&bias, forget_bias);
        Lstm {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        }
    }

    /// Hidden state at every step of `x [N, T, E]`, as `[N, T, C]`.
    /// Steps past a sample's length are still computed; callers mask them.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        lengths: &[usize],
    ) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.input_dim {
            return Err(Error::dim("lstm", &s, &[0, 0, self.input_dim]));
        }
        let (batch, steps, c) = (s[0], s[1], self.hidden);
        if lengths.len() != batch {
            return Err(Error::Contract(format!("lstm: {} lengths for batch {batch}", lengths.len())));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > steps) {
            return Err(Error::Contract(format!("lstm: command length {bad} outside 1..={steps}")));
        }
        let w_in = g.param(store, &self.w_input)?;
        let w_hid = g.param(store, &self.w_hidden)?;
        let bias = g.param(store, &self.bias)?;
        let bias = g.reshape(bias, &[1, 4 * c])?;

        let flat = g.reshape(x, &[batch * steps, self.input_dim])?;
        let projected = g.matmul(flat, w_in)?;
        let projected = g.reshape(projected, &[batch, steps, 4 * c])?;

        let mut h = g.constant(Tensor::zeros(&[batch, c]));
        let mut cell = g.constant(Tensor::zeros(&[batch, c]));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.narrow(projected, 1, t, 1)?;
            let xt = g.reshape(xt, &[batch, 4 * c])?;
            let rec = g.matmul(h, w_hid)?;
            let gates = g.add(xt, rec)?;
            let gates = g.add_broadcast(gates, bias)?;
            let i = g.sigmoid(g.narrow(gates, 1, 0, c)?)?;
            let f = g.sigmoid(g.narrow(gates, 1, c, c)?)?;
            let cand = g.tanh(g.narrow(gates, 1, 2 * c, c)?)?;
            let o = g.sigmoid(g.narrow(gates, 1, 3 * c, c)?)?;
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, cand)?;
            cell = g.add(keep, write)?;
            let squashed = g.tanh(cell)?;
            h = g.mul(o, squashed)?;
            outputs.push(g.reshape(h, &[batch, 1, c])?);
        }
        g.concat(&outputs, 1)
    }
}

/// Atrous spatial pyramid pooling: a 1×1 branch, 3×3 branches at each
/// configured dilation, and an image-pooling branch, fused by a 1×1 conv.
#[derive(Clone, Debug)]
pub struct Aspp {
    pointwise: Conv2d,
    atrous: Vec<Conv2d>,
    pool_proj: Conv2d,
    fuse: Conv2d,
    pub c_out: usize,
}

impl Aspp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        dilations: &[usize],
    ) -> Self {
        let atrous = dilations
            .iter()
            .map(|&d| Conv2d::new(store, init, &join(prefix, &format!("atrous{d}")), c_in, c_out, 3, 1, d))
            .collect::<Vec<_>>();
        let branches = 2 + atrous.len();
        Aspp {
            pointwise: Conv2d::new(store, init, &join(prefix, "pointwise"), c_in, c_out, 1, 1, 1),
            pool_proj: Conv2d::new(store, init, &join(prefix, "pool_proj"), c_in, c_out, 1, 1, 1),
            fuse: Conv2d::new(store, init, &join(prefix, "fuse"), branches * c_out, c_out, 1, 1, 1),
            atrous,
            c_out,
        }
    }

    /// `[N, C_in, H, W]` → `[N, C_out, H, W]`
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let &[n, c_in, h, w] = s.as_slice() else {
            return Err(Error::Contract(format!("aspp expects [N,C,H,W], got {s:?}")));
        };
        let mut branches = vec![g.relu(self.pointwise.forward(g, store, x)?)?];
        for conv in &self.atrous {
            branches.push(g.relu(conv.forward(g, store, x)?)?);
        }
        let pooled = g.reshape(x, &[n, c_in, h * w])?;
        let pooled = g.mean_axis(pooled, 2)?;
        let pooled = g.reshape(pooled, &[n, c_in, 1, 1])?;
        let pooled = g.relu(self.pool_proj.forward(g, store, pooled)?)?;
        branches.push(g.broadcast_to(pooled, &[n, self.c_out, h, w])?);
        let cat = g.concat(&branches, 1)?;
        g.relu(self.fuse.forward(g, store, cat)?)
    }
}
