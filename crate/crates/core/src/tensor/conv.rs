//! Spatial primitives: same-padded 2-D convolution and bilinear resizing.
//!
//! Both accept `[C, H, W]` or batched `[N, C, H, W]` inputs.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.h_out * self.w_out
    }

    /// Output positions `lo..hi` whose tap `tap` lands inside `0..extent`,
    /// and the input offset of that tap at output 0 (may be negative).
    fn valid_range(&self, tap: usize, extent: usize, out_len: usize) -> (usize, usize, isize) {
        let shift = (tap * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        // smallest o with o*s + shift >= 0, and past the last with o*s + shift < extent
        let lo = if shift >= 0 { 0 } else { ((-shift + s - 1) / s) as usize };
        let hi = if extent as isize - shift <= 0 {
            0
        } else {
            (((extent as isize - shift + s - 1) / s) as usize).min(out_len)
        };
        (lo.min(hi), hi, shift)
    }

    /// Calls `f(row, dst_offset, src_offset, lo, hi)` for every contiguous run
    /// of output columns whose input row is inside the image; the input
    /// column for output `ox` is `src_offset + ox * stride`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let hw_out = self.h_out * self.w_out;
        let ncols = self.cols();
        let ranges: Vec<_> = (0..self.k).map(|t| self.valid_range(t, self.w, self.w_out)).collect();
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                let (ylo, yhi, yshift) = self.valid_range(ky, self.h, self.h_out);
                for (kx, &(lo, hi, xshift)) in ranges.iter().enumerate() {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for n in 0..self.batch {
                        let plane = (n * self.c_in + ci) * self.h * self.w;
                        for oy in ylo..yhi {
                            let iy = (oy as isize * self.stride as isize + yshift) as usize;
                            let dst = row * ncols + n * hw_out + oy * self.w_out;
                            let src = (plane + iy * self.w) as isize + xshift;
                            f(row, dst, src as usize, lo, hi);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.patch() * self.cols()];
        let s = self.stride;
        self.for_each_run(|_, dst, src, lo, hi| {
            if s == 1 {
                cols[dst + lo..dst + hi].copy_from_slice(&x[src + lo..src + hi]);
            } else {
                for ox in lo..hi {
                    cols[dst + ox] = x[src + ox * s];
                }
            }
        });
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.batch * self.c_in * self.h * self.w];
        let s = self.stride;
        self.for_each_run(|_, dst, src, lo, hi| {
            for ox in lo..hi {
                let v = &mut x[src + ox * s];
                *v = *v + cols[dst + ox];
            }
        });
        x
    }

    /// `[C_out, N·HW]` matrix → `[N, C_out, HW]` layout.
    fn unfold_output<T: Scalar>(&self, mat: &[T]) -> Vec<T> {
        let hw = self.h_out * self.w_out;
        let mut out = Vec::with_capacity(mat.len());
        for n in 0..self.batch {
            for co in 0..self.c_out {
                out.extend_from_slice(&mat[co * self.cols() + n * hw..][..hw]);
            }
        }
        out
    }

    fn fold_output<T: Scalar>(&self, out: &[T]) -> Vec<T> {
        let hw = self.h_out * self.w_out;
        let mut mat = vec![T::zero(); out.len()];
        for n in 0..self.batch {
            for co in 0..self.c_out {
                mat[co * self.cols() + n * hw..][..hw]
                    .copy_from_slice(&out[(n * self.c_out + co) * hw..][..hw]);
            }
        }
        mat
    }
}

/// Splits a rank-3 or rank-4 image shape into (batch, channels, h, w).
fn image_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Contract(format!("{op}: expected [C,H,W] or [N,C,H,W], got {s:?}"))),
    }
}

/// Per-output (low index, high index, high weight) for align-corners-false
/// linear interpolation along one axis.
fn linear_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation with zero "same" padding: at stride 1 the spatial
    /// size is preserved, at stride `s` it becomes `ceil(H / s)`.
    pub fn conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (batch, c_in, h, w) = image_dims("conv2d", &xs)?;
        let &[c_out, wc_in, kh, kw] = ws.as_slice() else {
            return Err(Error::Contract(format!("conv2d: weight must be 4-D, got {ws:?}")));
        };
        if wc_in != c_in {
            return Err(Error::dim("conv2d", &xs, &ws));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Contract(format!("conv2d: kernel must be square and odd, got {ws:?}")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Contract("conv2d: stride and dilation must be >= 1".into()));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [c_out] {
                return Err(Error::dim("conv2d bias", &bs, &[c_out]));
            }
        }
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            dilation,
            pad: dilation * (kh - 1) / 2,
            h_out: (h - 1) / stride + 1,
            w_out: (w - 1) / stride + 1,
        };
        let out_shape = if xs.len() == 3 {
            vec![c_out, geom.h_out, geom.w_out]
        } else {
            vec![batch, c_out, geom.h_out, geom.w_out]
        };
        let inputs: Vec<Var> = [Some(x), Some(weight), bias].into_iter().flatten().collect();
        let stash: Rc<RefCell<Vec<T>>> = Rc::default();
        let saved = Rc::clone(&stash);
        let keep_cols = self.requires_grad(weight);
        self.custom_op(
            &inputs,
            move |v| {
                let cols = geom.im2col(&v[0].data);
                let mut mat = vec![T::zero(); c_out * geom.cols()];
                gemm(false, false, c_out, geom.patch(), geom.cols(), &v[1].data, &cols, &mut mat, false);
                if let Some(b) = v.get(2) {
                    for (co, row) in mat.chunks_mut(geom.cols()).enumerate() {
                        let bv = b.data[co];
                        row.iter_mut().for_each(|e| *e = *e + bv);
                    }
                }
                if keep_cols {
                    *saved.borrow_mut() = cols;
                }
                Tensor::new(&out_shape, geom.unfold_output(&mat))
            },
            move |c| {
                let gmat = geom.fold_output(&c.grad.data);
                let gx = c.needs[0].then(|| {
                    let mut gcols = vec![T::zero(); geom.patch() * geom.cols()];
                    gemm(true, false, geom.patch(), c_out, geom.cols(), &c.inputs[1].data, &gmat, &mut gcols, false);
                    Tensor {
                        shape: c.inputs[0].shape.clone(),
                        data: geom.col2im(&gcols),
                    }
                });
                let gw = c.needs[1].then(|| {
                    let cols = stash.borrow();
                    let mut gw = vec![T::zero(); c_out * geom.patch()];
                    gemm(false, true, c_out, geom.cols(), geom.patch(), &gmat, &cols, &mut gw, false);
                    Tensor {
                        shape: c.inputs[1].shape.clone(),
                        data: gw,
                    }
                });
                let mut grads = vec![gx, gw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| Tensor {
                        shape: vec![c_out],
                        data: gmat.chunks(geom.cols()).map(|r| r.iter().copied().sum()).collect(),
                    }));
                }
                grads
            },
        )
    }

    /// Bilinear interpolation of the last two axes (align-corners false).
    pub fn bilinear_resize(&self, x: Var, h_out: usize, w_out: usize) -> Result<Var> {
        if h_out == 0 || w_out == 0 {
            return Err(Error::Contract("bilinear_resize: target extents must be >= 1".into()));
        }
        let xs = self.shape(x);
        let (batch, ch, h, w) = image_dims("bilinear_resize", &xs)?;
        let planes = batch * ch;
        let ty = linear_taps(h, h_out);
        let tx = linear_taps(w, w_out);
        let mut out_shape = xs.clone();
        let r = out_shape.len();
        out_shape[r - 2] = h_out;
        out_shape[r - 1] = w_out;
        let (ty_b, tx_b) = (ty.clone(), tx.clone());
        self.custom_op(
            &[x],
            move |v| {
                let d = &v[0].data;
                let mut out = Vec::with_capacity(planes * h_out * w_out);
                for p in 0..planes {
                    let plane = &d[p * h * w..(p + 1) * h * w];
                    for &(y0, y1, wy) in &ty {
                        let wy = T::lit(wy);
                        for &(x0, x1, wx) in &tx {
                            let wx = T::lit(wx);
                            let top = plane[y0 * w + x0] + (plane[y0 * w + x1] - plane[y0 * w + x0]) * wx;
                            let bot = plane[y1 * w + x0] + (plane[y1 * w + x1] - plane[y1 * w + x0]) * wx;
                            out.push(top + (bot - top) * wy);
                        }
                    }
                }
                Tensor::new(&out_shape, out)
            },
            move |c| {
                let g = &c.grad.data;
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let plane = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ty_b.iter().enumerate() {
                        let wy = T::lit(wy);
                        for (ox, &(x0, x1, wx)) in tx_b.iter().enumerate() {
                            let wx = T::lit(wx);
                            let gv = g[(p * h_out + oy) * w_out + ox];
                            let (a, b) = (gv * (T::one() - wy), gv * wy);
                            plane[y0 * w + x0] = plane[y0 * w + x0] + a * (T::one() - wx);
                            plane[y0 * w + x1] = plane[y0 * w + x1] + a * wx;
                            plane[y1 * w + x0] = plane[y1 * w + x0] + b * (T::one() - wx);
                            plane[y1 * w + x1] = plane[y1 * w + x1] + b * wx;
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
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of the im2col path.
    fn direct_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &[f64],
        stride: usize,
        dilation: usize,
    ) -> Tensor<f64> {
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let pad = (dilation * (k - 1) / 2) as isize;
        let (ho, wo) = ((h - 1) / stride + 1, (wd - 1) / stride + 1);
        let mut out = vec![0.0; c_out * ho * wo];
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dilation) as isize - pad;
                                let ix = (ox * stride + kx * dilation) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((co * c_in + ci) * k + ky) * k + kx]
                                    * x.data()[(ci * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        Tensor::new(&[c_out, ho, wo], out).unwrap()
    }

    #[test]
    fn identity_1x1_conv_is_identity() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[3, 4, 5], |i| i as f64 * 0.5));
        let w = g.constant(Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn ones_kernel_on_constant_image_sums_nine_taps() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 5, 5], 5.0));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let v = g.value(y);
        assert_eq!(v.data()[2 * 5 + 2], 45.0);
        assert_eq!(v.data()[0], 20.0);
    }

    #[test]
    fn im2col_path_matches_direct_convolution() {
        for &(stride, dilation, k) in &[(1, 1, 3), (2, 1, 3), (1, 2, 3), (1, 4, 3), (2, 1, 1), (1, 1, 5)] {
            let x = Tensor::from_fn(&[3, 7, 6], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
            let w = Tensor::from_fn(&[4, 3, k, k], |i| ((i * 13 % 7) as f64 - 3.0) * 0.2);
            let b = [0.1, -0.2, 0.3, 0.0];
            let g = Graph::<f64>::new();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let bv = g.constant(Tensor::from_f64(&[4], &b).unwrap());
            let y = g.conv2d(xv, wv, Some(bv), stride, dilation).unwrap();
            let expect = direct_conv(&x, &w, &b, stride, dilation);
            assert_eq!(g.value(y).shape(), expect.shape());
            assert!(g.value(y).max_abs_diff(&expect) < 1e-6);
        }
    }

    #[test]
    fn batched_conv_matches_per_sample() {
        let g = Graph::<f64>::new();
        let x = Tensor::from_fn(&[2, 2, 4, 4], |i| (i as f64 * 0.31).cos());
        let w = g.constant(Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64 * 0.17).sin()));
        let xb = g.constant(x.clone());
        let yb = g.conv2d(xb, w, None, 2, 1).unwrap();
        for n in 0..2 {
            let xn = g.constant(Tensor::new(&[2, 4, 4], x.data()[n * 32..(n + 1) * 32].to_vec()).unwrap());
            let yn = g.conv2d(xn, w, None, 2, 1).unwrap();
            assert_eq!(&g.value(yb).data()[n * 12..(n + 1) * 12], g.value(yn).data());
        }
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn bilinear_linear_ramp_and_constant() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, 2], &[0.0, 1.0]).unwrap());
        let y = g.bilinear_resize(x, 1, 4).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.25, 0.75, 1.0]);

        let c = g.constant(Tensor::full(&[2, 3, 5], 1.7));
        let r = g.bilinear_resize(c, 7, 4).unwrap();
        assert!(g.value(r).data().iter().all(|&v| v == 1.7));
    }
}
