//! Finite-difference suite over every differentiable primitive and the
//! composite layers, run in 64-bit.

use std::time::Instant;

use rand::Rng as _;

use crate::error::Result;
use crate::model::{Decoder, ModelConfig, ModelKind, RnrModel};
use crate::nn::{Aspp, Initializer, LayerNorm, Linear, Lstm, MultiHeadAttention, ParamStore, TransformerEncoderLayer};
use crate::rng::rng;
use crate::tensor::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::tensor::{Graph, Tensor, Var};

/// Largest admissible relative error between tape and finite differences.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub seconds: f64,
}

type CaseFn = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: CaseFn,
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Reduces `out` to a scalar with fixed random weights, so that every
/// output coordinate reaches the loss with a distinct coefficient.
fn project(g: &Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out);
    let w = g.constant(uniform(&shape, 0x5EED ^ shape.iter().product::<usize>() as u64));
    let y = g.mul(out, w)?;
    g.sum(y)
}

fn unary(name: &'static str, shape: &[usize], seed: u64, op: fn(&Graph<f64>, Var) -> Result<Var>) -> Case {
    Case {
        name,
        inputs: vec![uniform(shape, seed)],
        f: Box::new(move |g, v| {
            let y = op(g, v[0])?;
            project(g, y)
        }),
    }
}

fn binary(name: &'static str, a: &[usize], b: &[usize], seed: u64, op: fn(&Graph<f64>, Var, Var) -> Result<Var>) -> Case {
    Case {
        name,
        inputs: vec![uniform(a, seed), uniform(b, seed + 1)],
        f: Box::new(move |g, v| {
            let y = op(g, v[0], v[1])?;
            project(g, y)
        }),
    }
}

/// A case whose trailing inputs are the parameters of `store`, bound by
/// name before `f` runs, so that both data and weights are checked.
fn with_params(
    name: &'static str,
    data: Vec<Tensor<f64>>,
    store: ParamStore<f64>,
    f: impl Fn(&Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let names: Vec<String> = store.names().cloned().collect();
    let n_data = data.len();
    let mut inputs = data;
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    Case {
        name,
        inputs,
        f: Box::new(move |g, v| {
            for (k, n) in names.iter().enumerate() {
                g.bind_param(n, v[n_data + k]);
            }
            f(g, &store, &v[..n_data])
        }),
    }
}

fn primitive_cases() -> Vec<Case> {
    vec![
        binary("add", &[2, 3], &[2, 3], 1, |g, a, b| g.add(a, b)),
        binary("sub", &[2, 3], &[2, 3], 2, |g, a, b| g.sub(a, b)),
        binary("mul", &[2, 3], &[2, 3], 3, |g, a, b| g.mul(a, b)),
        unary("scale", &[5], 4, |g, a| g.scale(a, -1.7)),
        unary("relu", &[6], 5, |g, a| g.relu(a)),
        unary("tanh", &[5], 6, |g, a| g.tanh(a)),
        unary("sigmoid", &[5], 7, |g, a| g.sigmoid(a)),
        unary("sum", &[2, 3], 8, |g, a| g.sum(a)),
        unary("mean", &[2, 3], 9, |g, a| g.mean(a)),
        unary("mean_axis", &[2, 3, 2], 10, |g, a| g.mean_axis(a, 1)),
        unary("reshape", &[2, 3], 11, |g, a| g.reshape(a, &[3, 2])),
        unary("permute", &[2, 3, 4], 12, |g, a| g.permute(a, &[2, 0, 1])),
        unary("transpose", &[3, 4], 13, |g, a| g.transpose(a)),
        unary("broadcast_to", &[1, 3], 14, |g, a| g.broadcast_to(a, &[2, 3])),
        binary("add_broadcast", &[2, 3, 2], &[1, 3, 1], 15, |g, a, b| g.add_broadcast(a, b)),
        binary("mul_broadcast", &[2, 3, 2], &[1, 3, 1], 16, |g, a, b| g.mul_broadcast(a, b)),
        binary("concat", &[2, 2, 3], &[2, 1, 3], 17, |g, a, b| g.concat(&[a, b], 1)),
        unary("narrow", &[2, 5], 18, |g, a| g.narrow(a, 1, 1, 3)),
        binary("matmul", &[3, 4], &[4, 2], 19, |g, a, b| g.matmul(a, b)),
        binary("bmm", &[2, 3, 4], &[2, 4, 2], 20, |g, a, b| g.bmm(a, b)),
        binary("bmm_nt", &[2, 3, 4], &[2, 5, 4], 21, |g, a, b| g.bmm_nt(a, b)),
        unary("embedding", &[5, 3], 22, |g, t| g.embedding(t, &[4, 0, 4, 2], &[2, 2])),
        unary("layer_norm", &[3, 4], 23, |g, a| g.layer_norm(a, 1e-5)),
        unary("softmax", &[3, 3], 24, |g, a| g.softmax(a, 1)),
        unary("softmax_outer_axis", &[3, 4], 25, |g, a| g.softmax(a, 0)),
        unary("masked_mean", &[2, 4, 3], 26, |g, a| g.masked_mean(a, &[2, 4])),
        Case {
            name: "bce_with_logits",
            inputs: vec![uniform(&[2, 4], 27).map(|v| 3.0 * v)],
            f: Box::new(|g, v| {
                let t = g.constant(Tensor::from_fn(&[2, 4], |i| (i % 3 == 0) as u8 as f64));
                g.bce_with_logits(v[0], t)
            }),
        },
        Case {
            name: "conv2d",
            inputs: vec![uniform(&[1, 1, 4, 4], 28), uniform(&[2, 1, 3, 3], 29), uniform(&[2], 30)],
            f: Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                project(g, y)
            }),
        },
        Case {
            name: "conv2d_strided",
            inputs: vec![uniform(&[2, 2, 5, 5], 31), uniform(&[3, 2, 3, 3], 32)],
            f: Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], None, 2, 1)?;
                project(g, y)
            }),
        },
        Case {
            name: "conv2d_dilated",
            inputs: vec![uniform(&[1, 2, 5, 5], 33), uniform(&[2, 2, 3, 3], 34), uniform(&[2], 35)],
            f: Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 2)?;
                project(g, y)
            }),
        },
        unary("bilinear_resize", &[1, 1, 2, 2], 36, |g, a| g.bilinear_resize(a, 4, 4)),
        unary("bilinear_resize_down", &[1, 2, 5, 3], 37, |g, a| g.bilinear_resize(a, 2, 4)),
        Case {
            name: "attention",
            inputs: vec![uniform(&[4, 3, 2], 38), uniform(&[4, 4, 2], 39), uniform(&[4, 4, 2], 40)],
            f: Box::new(|g, v| {
                let masked = vec![vec![false, false, false, true], vec![false, true, true, true]];
                let y = g.attention(v[0], v[1], v[2], Some(&masked), 2)?;
                project(g, y)
            }),
        },
    ]
}

fn composite_cases() -> Result<Vec<Case>> {
    let init = Initializer::new(7);
    let mut cases = Vec::new();

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, &init, "lin", 4, 3);
    cases.push(with_params("linear", vec![uniform(&[2, 4], 50)], s, move |g, st, v| {
        let y = lin.forward(g, st, v[0])?;
        project(g, y)
    }));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 4);
    for (_, t) in s.iter_mut() {
        *t = t.map(|v| v + 0.1);
    }
    cases.push(with_params("layer_norm_affine", vec![uniform(&[3, 4], 51)], s, move |g, st, v| {
        let y = ln.forward(g, st, v[0])?;
        project(g, y)
    }));

    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, &init, "mha", 4, 1)?;
    cases.push(with_params("attention_layer", vec![uniform(&[1, 3, 4], 52)], s, move |g, st, v| {
        let y = mha.forward(g, st, v[0], v[0], v[0], None)?;
        project(g, y)
    }));

    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, &init, "mha", 4, 2)?;
    cases.push(with_params("attention_layer_padded", vec![uniform(&[2, 4, 4], 53)], s, move |g, st, v| {
        let pad = vec![vec![false, false, true, true], vec![false; 4]];
        let y = mha.forward(g, st, v[0], v[0], v[0], Some(&pad))?;
        project(g, y)
    }));

    for (name, pre_norm) in [("encoder_layer", false), ("encoder_layer_pre_norm", true)] {
        let mut s = ParamStore::new();
        let layer = TransformerEncoderLayer::new(&mut s, &init, "enc", 4, 2, pre_norm)?;
        cases.push(with_params(name, vec![uniform(&[2, 5, 4], 54)], s, move |g, st, v| {
            let pad = vec![vec![false, false, false, true, true], vec![false; 5]];
            let y = layer.forward(g, st, v[0], Some(&pad))?;
            project(g, y)
        }));
    }

    let mut s = ParamStore::new();
    let lstm = Lstm::new(&mut s, &init, "lstm", 4, 4);
    cases.push(with_params("lstm", vec![uniform(&[2, 3, 4], 55)], s, move |g, st, v| {
        let y = lstm.forward(g, st, v[0], &[3, 2])?;
        project(g, y)
    }));

    let mut s = ParamStore::new();
    let aspp = Aspp::new(&mut s, &init, "aspp", 6, 4, &[1, 2]);
    cases.push(with_params("aspp", vec![uniform(&[1, 6, 4, 4], 56)], s, move |g, st, v| {
        let y = aspp.forward(g, st, v[0])?;
        project(g, y)
    }));

    let tiny = ModelConfig::tiny(ModelKind::Tbm);
    let mut s = ParamStore::new();
    let dec = Decoder::new(&tiny, &mut s, &init);
    let c = tiny.channels;
    let fused: Vec<Tensor<f64>> = (0..3).map(|l| uniform(&[1, c, 2, 2], 57 + l)).collect();
    cases.push(with_params("decoder_bce", fused, s, move |g, st, v| {
        let logits = dec.forward(g, st, v, 8)?;
        let target = g.constant(Tensor::from_fn(&[1, 1, 8, 8], |i| ((i / 8 + i % 8) % 3 == 0) as u8 as f64));
        g.bce_with_logits(logits, target)
    }));

    for (name, kind) in [("baseline_forward", ModelKind::Baseline), ("tbm_forward", ModelKind::Tbm)] {
        let cfg = ModelConfig::tiny(kind);
        let mut s = ParamStore::new();
        let model = RnrModel::new(cfg.clone(), &mut s, 11)?;
        // Zero biases behind dead ReLU channels put later ReLUs exactly on
        // their kink; jitter every parameter to check at a generic point.
        for (k, (_, t)) in s.iter_mut().enumerate() {
            let noise = uniform(t.shape(), 170 + k as u64);
            *t = Tensor::new(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + 0.1 * b).collect())?;
        }
        let size = cfg.image_size;
        let images = uniform(&[2, 3, size, size], 60).map(|v| 0.5 + 0.5 * v);
        let masks = Tensor::from_fn(&[2, 1, size, size], |i| (i % size > size / 2) as u8 as f64);
        let ids = vec![2, 3, 1, 4, 1, 1];
        // the image enters as a leaf so that its gradient is checked as well
        cases.push(with_params(name, vec![images], s, move |g, st, v| {
            let lengths = [2, 1];
            let visual = model.visual.forward(g, st, v[0])?;
            let words = model.text.forward(g, st, &ids, 3, &lengths)?;
            let fusion = model.fusion.forward(g, st, &visual, words, &lengths)?;
            let logits = model.decoder.forward(g, st, &fusion.fused, size)?;
            let target = g.constant(masks.clone());
            g.bce_with_logits(logits, target)
        }));
    }
    Ok(cases)
}

/// Runs every case, in a fixed order.
pub fn run(opts: GradCheckOptions) -> Result<Vec<CaseResult>> {
    let mut cases = primitive_cases();
    cases.extend(composite_cases()?);
    cases
        .into_iter()
        .map(|case| {
            let t = Instant::now();
            let report = grad_check(&case.f, &case.inputs, opts)?;
            Ok(CaseResult {
                name: case.name,
                report,
                seconds: t.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn default_options() -> GradCheckOptions {
    GradCheckOptions {
        tol: TOLERANCE,
        ..GradCheckOptions::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        let results = run(default_options()).unwrap();
        let failed: Vec<_> = results.iter().filter(|r| !r.report.passed).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(results.len() > 40);
    }
}
