//! Differentiable primitives recorded on a [`Graph`].

use super::{numel, strides, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

/// Source offset for every destination element when walking `shape` in
/// row-major order with the given per-axis source strides.
fn odometer(shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn gather<T: Scalar>(src: &[T], map: &[usize]) -> Vec<T> {
    map.iter().map(|&i| src[i]).collect()
}

fn scatter_add<T: Scalar>(len: usize, vals: &[T], map: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for (&i, &v) in map.iter().zip(vals) {
        out[i] = out[i] + v;
    }
    out
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// (outer, axis extent, inner) split of `shape` around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn stable_sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, &sa, &sb));
        }
        Ok(())
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<Vec<usize>> {
        let s = self.shape(a);
        if axis >= s.len() {
            return Err(Error::Contract(format!(
                "{op}: axis {axis} out of range for shape {s:?}"
            )));
        }
        Ok(s)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        self.custom_op(
            &[a, b],
            |x| Ok(zip_with(x[0], x[1], |p, q| p + q)),
            |c| vec![c.needs[0].then(|| c.grad.clone()), c.needs[1].then(|| c.grad.clone())],
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        self.custom_op(
            &[a, b],
            |x| Ok(zip_with(x[0], x[1], |p, q| p - q)),
            |c| vec![c.needs[0].then(|| c.grad.clone()), c.needs[1].then(|| c.grad.map(|g| -g))],
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        self.custom_op(
            &[a, b],
            |x| Ok(zip_with(x[0], x[1], |p, q| p * q)),
            |c| {
                vec![
                    c.needs[0].then(|| zip_with(c.grad, c.inputs[1], |g, q| g * q)),
                    c.needs[1].then(|| zip_with(c.grad, c.inputs[0], |g, p| g * p)),
                ]
            },
        )
    }

    pub fn scale(&self, a: Var, factor: f64) -> Result<Var> {
        let k = T::lit(factor);
        self.custom_op(&[a], move |x| Ok(x[0].map(|v| v * k)), move |c| vec![Some(c.grad.map(|g| g * k))])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.custom_op(
            &[a],
            |x| Ok(x[0].map(|v| if v > T::zero() { v } else { T::zero() })),
            |c| {
                vec![Some(zip_with(c.grad, c.output, |g, y| {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            },
        )
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.custom_op(
            &[a],
            |x| Ok(x[0].map(|v| v.tanh())),
            |c| vec![Some(zip_with(c.grad, c.output, |g, y| g * (T::one() - y * y)))],
        )
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.custom_op(
            &[a],
            |x| Ok(x[0].map(stable_sigmoid)),
            |c| vec![Some(zip_with(c.grad, c.output, |g, y| g * y * (T::one() - y)))],
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.custom_op(
            &[a],
            |x| Ok(Tensor::scalar(x[0].data.iter().copied().sum())),
            |c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item()))],
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self, a: Var) -> Result<Var> {
        self.custom_op(
            &[a],
            |x| {
                let n = T::lit(x[0].numel() as f64);
                Ok(Tensor::scalar(x[0].data.iter().copied().sum::<T>() / n))
            },
            |c| {
                let n = T::lit(c.inputs[0].numel() as f64);
                vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item() / n))]
            },
        )
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("mean_axis", a, axis)?;
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let n = T::lit(len as f64);
        self.custom_op(
            &[a],
            move |x| {
                let d = &x[0].data;
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + d[base + i];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v = *v / n);
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let g = &c.grad.data;
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            gx[base + i] = g[o * inner + i] / n;
                        }
                    }
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: gx,
                })]
            },
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(a);
        if numel(&from) != numel(shape) || shape.contains(&0) {
            return Err(Error::dim("reshape", &from, shape));
        }
        let to = shape.to_vec();
        self.custom_op(
            &[a],
            move |x| x[0].clone().reshape(&to),
            move |c| vec![Some(c.grad.clone().reshape(&from).expect("same element count"))],
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = axes.to_vec();
        seen.sort_unstable();
        if seen != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::Contract(format!(
                "permute: {axes:?} is not a permutation of the axes of {shape:?}"
            )));
        }
        let in_str = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let src: Vec<usize> = axes.iter().map(|&ax| in_str[ax]).collect();
        let map = odometer(&out_shape, &src);
        let map_b = map.clone();
        self.custom_op(
            &[a],
            move |x| Tensor::new(&out_shape, gather(&x[0].data, &map)),
            move |c| {
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: scatter_add(c.inputs[0].numel(), &c.grad.data, &map_b),
                })]
            },
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Contract(format!("transpose needs rank 2, got {s:?}")));
        }
        self.permute(a, &[1, 0])
    }

    /// Repeats size-1 axes of `a` to reach `shape` (same rank).
    pub fn broadcast_to(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(a);
        if from.len() != shape.len()
            || from.iter().zip(shape).any(|(&f, &t)| f != t && f != 1)
        {
            return Err(Error::dim("broadcast_to", &from, shape));
        }
        if from == shape {
            return Ok(a);
        }
        let lead = from.iter().take_while(|&&f| f == 1).count();
        if from[lead..] == shape[lead..] {
            // repeated trailing block: tile forward, sum chunks backward
            let to = shape.to_vec();
            return self.custom_op(
                &[a],
                move |x| {
                    let reps = numel(&to) / x[0].numel().max(1);
                    Tensor::new(&to, x[0].data.repeat(reps))
                },
                move |c| {
                    let n = c.inputs[0].numel();
                    let mut g = vec![T::zero(); n];
                    if n > 0 {
                        for chunk in c.grad.data.chunks_exact(n) {
                            for (d, &s) in g.iter_mut().zip(chunk) {
                                *d = *d + s;
                            }
                        }
                    }
                    vec![Some(Tensor { shape: c.inputs[0].shape.clone(), data: g })]
                },
            );
        }
        let in_str = strides(&from);
        let src: Vec<usize> = from
            .iter()
            .zip(&in_str)
            .zip(shape)
            .map(|((&f, &s), &t)| if f == t { s } else { 0 })
            .collect();
        let to = shape.to_vec();
        let map = odometer(&to, &src);
        let map_b = map.clone();
        self.custom_op(
            &[a],
            move |x| Tensor::new(&to, gather(&x[0].data, &map)),
            move |c| {
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: scatter_add(c.inputs[0].numel(), &c.grad.data, &map_b),
                })]
            },
        )
    }

    /// `a + broadcast(b)`.
    pub fn add_broadcast(&self, a: Var, b: Var) -> Result<Var> {
        let b = self.broadcast_to(b, &self.shape(a))?;
        self.add(a, b)
    }

    /// `a * broadcast(b)`.
    pub fn mul_broadcast(&self, a: Var, b: Var) -> Result<Var> {
        let b = self.broadcast_to(b, &self.shape(a))?;
        self.mul(a, b)
    }

    /// Joins tensors along `axis`; other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.check_axis("concat", *first, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::dim("concat", &base, &s));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&base, axis);
        let lens_b = lens.clone();
        self.custom_op(
            parts,
            move |x| {
                let mut out = Vec::with_capacity(numel(&out_shape));
                for o in 0..outer {
                    for (t, &l) in x.iter().zip(&lens) {
                        out.extend_from_slice(&t.data[o * l * inner..(o + 1) * l * inner]);
                    }
                }
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let mut grads: Vec<Vec<T>> = lens_b
                    .iter()
                    .map(|&l| Vec::with_capacity(outer * l * inner))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (g, &l) in grads.iter_mut().zip(&lens_b) {
                        g.extend_from_slice(&c.grad.data[off..off + l * inner]);
                        off += l * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&c.inputs)
                    .zip(&c.needs)
                    .map(|((g, t), &need)| {
                        need.then(|| Tensor {
                            shape: t.shape.clone(),
                            data: g,
                        })
                    })
                    .collect()
            },
        )
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.check_axis("narrow", a, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "narrow: range {start}..{} outside axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.custom_op(
            &[a],
            move |x| {
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let s = (o * full + start) * inner;
                    out.extend_from_slice(&x[0].data[s..s + len * inner]);
                }
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let mut g = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let s = (o * full + start) * inner;
                    g[s..s + len * inner]
                        .copy_from_slice(&c.grad.data[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: g,
                })]
            },
        )
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        self.batched_matmul(a, b, 1, sa[0], sa[1], sb[1], false, "matmul")
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        self.batched_matmul(a, b, sa[0], sa[1], sa[2], sb[2], false, "bmm")
    }

    /// Batched product of `[B, m, k]` with the transpose of `[B, n, k]`.
    pub fn bmm_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::dim("bmm_nt", &sa, &sb));
        }
        self.batched_matmul(a, b, sa[0], sa[1], sa[2], sb[1], true, "bmm_nt")
    }

    #[allow(clippy::too_many_arguments)]
    fn batched_matmul(
        &self,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        op: &'static str,
    ) -> Result<Var> {
        let out_shape = if op == "matmul" {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        self.custom_op(
            &[a, b],
            move |x| {
                let mut out = vec![T::zero(); batch * m * n];
                for bi in 0..batch {
                    gemm(
                        false,
                        trans_b,
                        m,
                        k,
                        n,
                        &x[0].data[bi * m * k..(bi + 1) * m * k],
                        &x[1].data[bi * k * n..(bi + 1) * k * n],
                        &mut out[bi * m * n..(bi + 1) * m * n],
                        false,
                    );
                }
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let (av, bv, g) = (&c.inputs[0].data, &c.inputs[1].data, &c.grad.data);
                let ga = c.needs[0].then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        // dA = dC · op(B)ᵀ
                        gemm(
                            false,
                            !trans_b,
                            m,
                            n,
                            k,
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            false,
                        );
                    }
                    Tensor {
                        shape: c.inputs[0].shape.clone(),
                        data: ga,
                    }
                });
                let gb = c.needs[1].then(|| {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for bi in 0..batch {
                        let (a_s, g_s) = (
                            &av[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                        );
                        let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                        if trans_b {
                            // dB = dCᵀ · A, stored [n, k]
                            gemm(true, false, n, m, k, g_s, a_s, dst, false);
                        } else {
                            // dB = Aᵀ · dC
                            gemm(true, false, k, m, n, a_s, g_s, dst, false);
                        }
                    }
                    Tensor {
                        shape: c.inputs[1].shape.clone(),
                        data: gb,
                    }
                });
                vec![ga, gb]
            },
        )
    }

    /// Row lookup: `ids` select rows of `table [V, E]`; the result has shape
    /// `[*ids_shape, E]`.
    pub fn embedding(&self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::Contract(format!("embedding table must be 2-D, got {ts:?}")));
        }
        if numel(ids_shape) != ids.len() {
            return Err(Error::Contract("embedding: ids do not match ids_shape".into()));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Contract(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let mut out_shape = ids_shape.to_vec();
        out_shape.push(dim);
        let ids = ids.to_vec();
        let ids_b = ids.clone();
        self.custom_op(
            &[table],
            move |x| {
                let mut out = Vec::with_capacity(ids.len() * dim);
                for &i in &ids {
                    out.extend_from_slice(&x[0].data[i * dim..(i + 1) * dim]);
                }
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let mut g = vec![T::zero(); vocab * dim];
                for (r, &i) in ids_b.iter().enumerate() {
                    for d in 0..dim {
                        g[i * dim + d] = g[i * dim + d] + c.grad.data[r * dim + d];
                    }
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: g,
                })]
            },
        )
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// (biased) variance. No affine transform.
    pub fn layer_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a);
        let n = *shape
            .last()
            .ok_or_else(|| Error::Contract("layer_norm of a scalar".into()))?;
        let eps = T::lit(eps);
        let nf = T::lit(n as f64);
        let stats = move |row: &[T]| -> (T, T) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            (mean, (var + eps).sqrt())
        };
        self.custom_op(
            &[a],
            move |x| {
                let mut out = Vec::with_capacity(x[0].numel());
                for row in x[0].data.chunks(n) {
                    let (mean, sd) = stats(row);
                    out.extend(row.iter().map(|&v| (v - mean) / sd));
                }
                Tensor::new(&x[0].shape, out)
            },
            move |c| {
                let mut gx = Vec::with_capacity(c.grad.numel());
                for ((row, g), y) in c.inputs[0]
                    .data
                    .chunks(n)
                    .zip(c.grad.data.chunks(n))
                    .zip(c.output.data.chunks(n))
                {
                    let (_, sd) = stats(row);
                    let g_mean = g.iter().copied().sum::<T>() / nf;
                    let gy_mean = g.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    gx.extend(g.iter().zip(y).map(|(&gi, &yi)| (gi - g_mean - yi * gy_mean) / sd));
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: gx,
                })]
            },
        )
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.check_axis("softmax", a, axis)?;
        let (outer, len, inner) = split_at_axis(&shape, axis);
        self.custom_op(
            &[a],
            move |x| {
                let d = &x[0].data;
                let mut out = vec![T::zero(); d.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let max = (0..len).map(|l| d[at(l)]).fold(T::neg_infinity(), T::max);
                        let mut total = T::zero();
                        for l in 0..len {
                            let e = (d[at(l)] - max).exp();
                            out[at(l)] = e;
                            total = total + e;
                        }
                        for l in 0..len {
                            out[at(l)] = out[at(l)] / total;
                        }
                    }
                }
                Tensor::new(&x[0].shape, out)
            },
            move |c| {
                let (y, g) = (&c.output.data, &c.grad.data);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: gx,
                })]
            },
        )
    }

    /// Mean over the first `lengths[n]` rows of each `[T, C]` slice of
    /// `x [N, T, C]`, giving `[N, C]`. Each column is summed in sorted
    /// order, so the result does not depend on the order of the rows.
    pub fn masked_mean(&self, x: Var, lengths: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || lengths.len() != s[0] {
            return Err(Error::Contract(format!(
                "masked_mean: shape {s:?} with {} lengths",
                lengths.len()
            )));
        }
        let (batch, rows, cols) = (s[0], s[1], s[2]);
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > rows) {
            return Err(Error::Contract(format!("masked_mean: length {bad} outside 1..={rows}")));
        }
        let lengths = lengths.to_vec();
        let lengths_b = lengths.clone();
        self.custom_op(
            &[x],
            move |v| {
                let d = &v[0].data;
                let mut out = Vec::with_capacity(batch * cols);
                let mut column = Vec::with_capacity(rows);
                for (b, &len) in lengths.iter().enumerate() {
                    for c in 0..cols {
                        column.clear();
                        column.extend((0..len).map(|r| d[(b * rows + r) * cols + c]));
                        column.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
                        out.push(column.iter().copied().sum::<T>() / T::lit(len as f64));
                    }
                }
                Tensor::new(&[batch, cols], out)
            },
            move |c| {
                let mut g = vec![T::zero(); batch * rows * cols];
                for (b, &len) in lengths_b.iter().enumerate() {
                    let inv = T::lit(len as f64);
                    for r in 0..len {
                        for col in 0..cols {
                            g[(b * rows + r) * cols + col] = c.grad.data[b * cols + col] / inv;
                        }
                    }
                }
                vec![Some(Tensor {
                    shape: c.inputs[0].shape.clone(),
                    data: g,
                })]
            },
        )
    }

    /// Mean binary cross-entropy between logits `z` and binary targets `g`,
    /// in the overflow-free form `max(z,0) - z·g + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&self, z: Var, g: Var) -> Result<Var> {
        self.check_same("bce_with_logits", z, g)?;
        self.custom_op(
            &[z, g],
            |x| {
                let n = T::lit(x[0].numel() as f64);
                let total: T = x[0]
                    .data
                    .iter()
                    .zip(&x[1].data)
                    .map(|(&z, &g)| z.max(T::zero()) - z * g + (-z.abs()).exp().ln_1p())
                    .sum();
                Ok(Tensor::scalar(total / n))
            },
            |c| {
                let n = T::lit(c.inputs[0].numel() as f64);
                let up = c.grad.item() / n;
                vec![
                    c.needs[0].then(|| zip_with(c.inputs[0], c.inputs[1], |z, g| (stable_sigmoid(z) - g) * up)),
                    c.needs[1].then(|| c.inputs[0].map(|z| -z * up)),
                ]
            },
        )
    }
}
