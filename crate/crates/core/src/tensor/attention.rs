use std::cell::RefCell;
use std::rc::Rc;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax of `scale · s` over the keys that are not masked. With
/// every key masked the row falls back to an unmasked softmax, which is what
/// an additive large-negative mask produces.
fn masked_softmax_rows<T: Scalar>(s: &mut [T], len_k: usize, scale: T, masked: Option<&[bool]>) {
    let masked = masked.filter(|m| !m.iter().all(|&b| b));
    for row in s.chunks_mut(len_k) {
        if let Some(m) = masked {
            for (x, &hide) in row.iter_mut().zip(m) {
                if hide {
                    *x = T::neg_infinity();
                }
            }
        }
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b)) * scale;
        let mut total = T::zero();
        for x in row.iter_mut() {
            // exp(-inf) is exactly zero
            *x = (*x * scale - max).exp();
            total = total + *x;
        }
        let inv = T::one() / total;
        for x in row.iter_mut() {
            *x = *x * inv;
        }
    }
}

/// `s[i][j] = a[i] · b[j]` for row-major `a [m, d]`, `b [n, d]`.
fn dots<T: Scalar>(a: &[T], b: &[T], d: usize, s: &mut [T]) {
    let n = b.len() / d;
    // transpose b so the inner loop runs over contiguous keys
    let mut bt = vec![T::zero(); n * d];
    for (j, bj) in b.chunks_exact(d).enumerate() {
        for (c, &x) in bj.iter().enumerate() {
            bt[c * n + j] = x;
        }
    }
    for (ai, si) in a.chunks_exact(d).zip(s.chunks_exact_mut(n)) {
        si.iter_mut().for_each(|x| *x = T::zero());
        for (&aic, btc) in ai.iter().zip(bt.chunks_exact(n)) {
            for (o, &x) in si.iter_mut().zip(btc) {
                *o = *o + aic * x;
            }
        }
    }
}

/// `out[i] += Σ_j w[i][j] · v[j]` for `w [m, n]`, `v [n, d]`, `out [m, d]`.
fn weighted_rows<T: Scalar>(w: &[T], v: &[T], d: usize, out: &mut [T]) {
    let n = v.len() / d;
    for (wi, oi) in w.chunks_exact(n).zip(out.chunks_exact_mut(d)) {
        for (&wij, vj) in wi.iter().zip(v.chunks_exact(d)) {
            if wij != T::zero() {
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o = *o + wij * x;
                }
            }
        }
    }
}

/// `out[j] += Σ_i w[i][j] · u[i]` for `w [m, n]`, `u [m, d]`, `out [n, d]`.
fn weighted_rows_t<T: Scalar>(w: &[T], u: &[T], d: usize, out: &mut [T]) {
    let n = out.len() / d;
    for (wi, ui) in w.chunks_exact(n).zip(u.chunks_exact(d)) {
        for (&wij, oj) in wi.iter().zip(out.chunks_exact_mut(d)) {
            if wij != T::zero() {
                for (o, &x) in oj.iter_mut().zip(ui) {
                    *o = *o + wij * x;
                }
            }
        }
    }
}

struct Dims {
    batch: usize,
    len_q: usize,
    len_k: usize,
    d: usize,
    dv: usize,
    heads: usize,
}

impl<T: Scalar> Graph<T> {
    fn attention_dims(&self, q: Var, k: Var, v: Var, masked: Option<&[Vec<bool>]>, heads: usize) -> Result<Dims> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        let ok = qs.len() == 3
            && ks.len() == 3
            && vs.len() == 3
            && qs[0] == ks[0]
            && ks[0] == vs[0]
            && qs[2] == ks[2]
            && ks[1] == vs[1];
        if !ok {
            return Err(Error::dim("attention", &qs, &ks));
        }
        if heads == 0 || qs[0] % heads != 0 {
            return Err(Error::Contract(format!("attention: batch {} not divisible into {heads} heads", qs[0])));
        }
        if let Some(m) = masked {
            if m.len() != qs[0] / heads || m.iter().any(|r| r.len() != ks[1]) {
                return Err(Error::Contract(format!(
                    "attention: key mask must be {} rows of {} entries",
                    qs[0] / heads,
                    ks[1]
                )));
            }
        }
        Ok(Dims {
            batch: qs[0],
            len_q: qs[1],
            len_k: ks[1],
            d: qs[2],
            dv: vs[2],
            heads,
        })
    }

    /// Attention probabilities `softmax(q kᵀ / √d)` for `q [B, Lq, d]` and
    /// `k [B, Lk, d]`, where `B = N · heads` and `masked[n][j]` hides key `j`
    /// from every head of sample `n`. Not recorded on the tape.
    pub fn attention_weights(&self, q: Var, k: Var, masked: Option<&[Vec<bool>]>, heads: usize) -> Result<Tensor<T>> {
        let dm = self.attention_dims(q, k, k, masked, heads)?;
        let scale = T::lit(1.0 / (dm.d as f64).sqrt());
        let (qv, kv) = (self.value(q), self.value(k));
        let (lq, lk, d) = (dm.len_q, dm.len_k, dm.d);
        let mut p = vec![T::zero(); dm.batch * lq * lk];
        for b in 0..dm.batch {
            let pb = &mut p[b * lq * lk..(b + 1) * lq * lk];
            dots(&qv.data()[b * lq * d..][..lq * d], &kv.data()[b * lk * d..][..lk * d], d, pb);
            masked_softmax_rows(pb, lk, scale, masked.map(|m| m[b / heads].as_slice()));
        }
        Tensor::new(&[dm.batch, lq, lk], p)
    }

    /// Scaled dot-product attention `softmax(q kᵀ / √d) v` as one tape node,
    /// with the same batching and masking as [`Graph::attention_weights`].
    /// Masked keys get exactly zero weight.
    pub fn attention(&self, q: Var, k: Var, v: Var, masked: Option<&[Vec<bool>]>, heads: usize) -> Result<Var> {
        let dm = self.attention_dims(q, k, v, masked, heads)?;
        let Dims {
            batch,
            len_q: lq,
            len_k: lk,
            d,
            dv,
            heads,
        } = dm;
        let scale = T::lit(1.0 / (d as f64).sqrt());
        let masked: Option<Vec<Vec<bool>>> = masked.map(<[_]>::to_vec);
        let probs: Rc<RefCell<Vec<T>>> = Rc::default();
        let stash = Rc::clone(&probs);
        self.custom_op(
            &[q, k, v],
            move |x| {
                let (qd, kd, vd) = (x[0].data(), x[1].data(), x[2].data());
                let mut p = vec![T::zero(); batch * lq * lk];
                let mut out = vec![T::zero(); batch * lq * dv];
                for b in 0..batch {
                    let pb = &mut p[b * lq * lk..(b + 1) * lq * lk];
                    dots(&qd[b * lq * d..][..lq * d], &kd[b * lk * d..][..lk * d], d, pb);
                    masked_softmax_rows(pb, lk, scale, masked.as_ref().map(|m| m[b / heads].as_slice()));
                    weighted_rows(pb, &vd[b * lk * dv..][..lk * dv], dv, &mut out[b * lq * dv..][..lq * dv]);
                }
                *stash.borrow_mut() = p;
                Tensor::new(&[batch, lq, dv], out)
            },
            move |c| {
                let p = probs.borrow();
                let (qd, kd, vd, go) = (c.inputs[0].data(), c.inputs[1].data(), c.inputs[2].data(), c.grad.data());
                let mut gq = vec![T::zero(); batch * lq * d];
                let mut gk = vec![T::zero(); batch * lk * d];
                let mut gv = vec![T::zero(); batch * lk * dv];
                let mut ds = vec![T::zero(); lq * lk];
                for b in 0..batch {
                    let pb = &p[b * lq * lk..(b + 1) * lq * lk];
                    let gob = &go[b * lq * dv..][..lq * dv];
                    if c.needs[2] {
                        weighted_rows_t(pb, gob, dv, &mut gv[b * lk * dv..][..lk * dv]);
                    }
                    if !(c.needs[0] || c.needs[1]) {
                        continue;
                    }
                    // dP = dO · vᵀ, then the softmax Jacobian row by row
                    dots(gob, &vd[b * lk * dv..][..lk * dv], dv, &mut ds);
                    for (drow, prow) in ds.chunks_mut(lk).zip(pb.chunks(lk)) {
                        let dot: T = drow.iter().zip(prow).map(|(&g, &y)| g * y).sum();
                        for (g, &y) in drow.iter_mut().zip(prow) {
                            *g = y * (*g - dot) * scale;
                        }
                    }
                    if c.needs[0] {
                        weighted_rows(&ds, &kd[b * lk * d..][..lk * d], d, &mut gq[b * lq * d..][..lq * d]);
                    }
                    if c.needs[1] {
                        weighted_rows_t(&ds, &qd[b * lq * d..][..lq * d], d, &mut gk[b * lk * d..][..lk * d]);
                    }
                }
                let wrap = |need: bool, data: Vec<T>, i: usize| {
                    need.then(|| Tensor {
                        shape: c.inputs[i].shape.clone(),
                        data,
                    })
                };
                vec![wrap(c.needs[0], gq, 0), wrap(c.needs[1], gk, 1), wrap(c.needs[2], gv, 2)]
            },
        )
    }
}
