use super::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Initializer, ParamStore, TransformerEncoderLayer};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Per-level intermediate results of a fusion pass.
pub struct FusionOutput {
    /// `X_final_i`, each `[N, C, H, W]`.
    pub fused: Vec<Var>,
    /// `M_i`: `[N, 2C, H, W]` for the baseline, the token sequence
    /// `[N, HW + T, C]` for the transformer model.
    pub mixed: Vec<Var>,
    /// Averaged command feature per level, `[N, C]`.
    pub command: Vec<Var>,
    /// Attended visual (`[N, HW, C]`) and word (`[N, T, C]`) tokens; empty
    /// for the baseline.
    pub attended: Vec<(Var, Var)>,
}

#[derive(Clone, Debug)]
struct Transformer {
    layers: Vec<TransformerEncoderLayer>,
    grid_pos: String,
    word_pos: String,
}

#[derive(Clone, Debug)]
struct Level {
    transformer: Option<Transformer>,
    proj: Conv2d,
}

/// Combines visual levels with word features, one level at a time.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub kind: ModelKind,
    levels: Vec<Level>,
    channels: usize,
    grid: usize,
}

impl Fusion {
    pub fn new<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, init: &Initializer) -> Result<Self> {
        let c = cfg.channels;
        let mut levels = vec![];
        for level in 2..=4 {
            let transformer = match cfg.kind {
                ModelKind::Baseline => None,
                ModelKind::Tbm => {
                    let prefix = if cfg.share_fusion {
                        "fusion.shared".to_string()
                    } else {
                        format!("fusion.level{level}")
                    };
                    let grid_pos = format!("{prefix}.grid_pos");
                    let word_pos = format!("{prefix}.word_pos");
                    store.insert(&grid_pos, init.normal(&grid_pos, &[cfg.grid * cfg.grid, c], 0.02));
                    store.insert(&word_pos, init.normal(&word_pos, &[cfg.max_len, c], 0.02));
                    let layers = (0..cfg.fusion_layers)
                        .map(|l| {
                            TransformerEncoderLayer::new(
                                store,
                                init,
                                &format!("{prefix}.layer{l}"),
                                c,
                                cfg.fusion_heads,
                                cfg.pre_norm,
                            )
                        })
                        .collect::<Result<_>>()?;
                    Some(Transformer {
                        layers,
                        grid_pos,
                        word_pos,
                    })
                }
            };
            let proj = Conv2d::new(store, init, &format!("fusion.level{level}.proj"), 2 * c, c, 1, 1, 1);
            levels.push(Level { transformer, proj });
        }
        Ok(Fusion {
            kind: cfg.kind,
            levels,
            channels: c,
            grid: cfg.grid,
        })
    }

    /// `visual`: levels `[N, C, H, W]`; `words`: `[N, T, C]` with
    /// `lengths[n]` valid rows.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        visual: &[Var],
        words: Var,
        lengths: &[usize],
    ) -> Result<FusionOutput> {
        if visual.len() != self.levels.len() {
            return Err(Error::Contract(format!("expected {} visual levels", self.levels.len())));
        }
        let ws = g.shape(words);
        let (n, t, c) = (ws[0], ws[1], self.channels);
        if ws[2] != c {
            return Err(Error::Config(format!("word features have {} channels, visual {c}", ws[2])));
        }
        let key_padding: Vec<Vec<bool>> = lengths
            .iter()
            .map(|&len| {
                let mut row = vec![false; self.grid * self.grid + t];
                row[self.grid * self.grid + len..].fill(true);
                row
            })
            .collect();
        // the baseline's command average is the same for every level
        let avg_words = g.masked_mean(words, lengths)?;

        let mut out = FusionOutput {
            fused: vec![],
            mixed: vec![],
            command: vec![],
            attended: vec![],
        };
        for (level, &v) in self.levels.iter().zip(visual) {
            let vs = g.shape(v);
            if vs != [n, c, self.grid, self.grid] {
                return Err(Error::dim("fusion", &vs, &[n, c, self.grid, self.grid]));
            }
            let (h, w) = (vs[2], vs[3]);
            let (visual_part, command) = match &level.transformer {
                None => (v, avg_words),
                Some(tf) => {
                    let hw = h * w;
                    let flat = g.reshape(v, &[n, c, hw])?;
                    let tokens = g.permute(flat, &[0, 2, 1])?;
                    let seq = g.concat(&[tokens, words], 1)?;
                    out.mixed.push(seq);
                    let grid_pos = g.param(store, &tf.grid_pos)?;
                    let word_pos = g.param(store, &tf.word_pos)?;
                    let word_pos = g.narrow(word_pos, 0, 0, t)?;
                    let pos = g.concat(&[grid_pos, word_pos], 0)?;
                    let pos = g.reshape(pos, &[1, hw + t, c])?;
                    let mut x = g.add_broadcast(seq, pos)?;
                    for layer in &tf.layers {
                        x = layer.forward(g, store, x, Some(&key_padding))?;
                    }
                    let xv = g.narrow(x, 1, 0, hw)?;
                    let xl = g.narrow(x, 1, hw, t)?;
                    out.attended.push((xv, xl));
                    let xv = g.permute(xv, &[0, 2, 1])?;
                    (g.reshape(xv, &[n, c, h, w])?, g.masked_mean(xl, lengths)?)
                }
            };
            out.command.push(command);
            let tiled = g.reshape(command, &[n, c, 1, 1])?;
            let tiled = g.broadcast_to(tiled, &[n, c, h, w])?;
            let m = g.concat(&[visual_part, tiled], 1)?;
            if level.transformer.is_none() {
                out.mixed.push(m);
            }
            out.fused.push(g.relu(level.proj.forward(g, store, m)?)?);
        }
        Ok(out)
    }
}
