//! Layer primitives with exact backward passes.

use rayon::prelude::*;

use super::tensor::{Real, Tensor5};
use crate::error::{Error, Result};

/// 3D convolution geometry. Padding is `kernel / 2` on every axis (kernels
/// are odd), so stride 1 preserves the size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl ConvShape {
    pub fn cube(cin: usize, cout: usize, k: usize, spatial_stride: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: [k; 3],
            stride: [spatial_stride, spatial_stride, 1],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for i in 0..3 {
            let pad = self.kernel[i] / 2;
            o[i] = (dims[i] + 2 * pad - self.kernel[i]) / self.stride[i] + 1;
        }
        o
    }

    fn check(&self, x: &[usize; 5], w: usize, b: usize) -> Result<()> {
        if x[1] != self.cin {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.cin, x[1]
            )));
        }
        if self.kernel.iter().any(|k| k % 2 == 0) || self.stride.contains(&0) {
            return Err(Error::ShapeMismatch("conv kernels must be odd and strides >= 1".into()));
        }
        if w != self.weight_len() || b != self.cout {
            return Err(Error::ShapeMismatch(format!(
                "conv parameters have {w}/{b} values, expected {}/{}",
                self.weight_len(),
                self.cout
            )));
        }
        Ok(())
    }
}

/// Unfolds one sample `[cin][d][l][t]` into `[cin*kd*kl*kt][do*lo*to]`.
fn im2col<T: Real>(x: &[T], dims: [usize; 3], s: &ConvShape, out: [usize; 3], col: &mut [T]) {
    let [nd, nl, nt] = dims;
    let [kd, kl, kt] = s.kernel;
    let [sd, sl, st] = s.stride;
    let (pd, pl, pt) = ((kd / 2) as isize, (kl / 2) as isize, (kt / 2) as isize);
    let [od, ol, ot] = out;
    let p = od * ol * ot;
    let mut row = 0;
    for ci in 0..s.cin {
        let xc = &x[ci * nd * nl * nt..(ci + 1) * nd * nl * nt];
        for a in 0..kd {
            for b in 0..kl {
                for c in 0..kt {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for i in 0..od {
                        let id = (i * sd) as isize + a as isize - pd;
                        for j in 0..ol {
                            let il = (j * sl) as isize + b as isize - pl;
                            let seg = &mut dst[q..q + ot];
                            q += ot;
                            if id < 0 || id >= nd as isize || il < 0 || il >= nl as isize {
                                seg.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let src = &xc[(id as usize * nl + il as usize) * nt..][..nt];
                            for (k, v) in seg.iter_mut().enumerate() {
                                let it = (k * st) as isize + c as isize - pt;
                                *v = if it >= 0 && (it as usize) < nt {
                                    src[it as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im<T: Real>(col: &[T], dims: [usize; 3], s: &ConvShape, out: [usize; 3], dx: &mut [T]) {
    let [nd, nl, nt] = dims;
    let [kd, kl, kt] = s.kernel;
    let [sd, sl, st] = s.stride;
    let (pd, pl, pt) = ((kd / 2) as isize, (kl / 2) as isize, (kt / 2) as isize);
    let [od, ol, ot] = out;
    let p = od * ol * ot;
    let mut row = 0;
    for ci in 0..s.cin {
        let xc = &mut dx[ci * nd * nl * nt..(ci + 1) * nd * nl * nt];
        for a in 0..kd {
            for b in 0..kl {
                for c in 0..kt {
                    let src = &col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for i in 0..od {
                        let id = (i * sd) as isize + a as isize - pd;
                        for j in 0..ol {
                            let il = (j * sl) as isize + b as isize - pl;
                            let seg = &src[q..q + ot];
                            q += ot;
                            if id < 0 || id >= nd as isize || il < 0 || il >= nl as isize {
                                continue;
                            }
                            let dst = &mut xc[(id as usize * nl + il as usize) * nt..][..nt];
                            for (k, &v) in seg.iter().enumerate() {
                                let it = (k * st) as isize + c as isize - pt;
                                if it >= 0 && (it as usize) < nt {
                                    dst[it as usize] = dst[it as usize] + v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn dims_of(shape: &[usize; 5]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

/// Cross-correlation with zero padding `kernel / 2`.
pub fn conv3<T: Real>(x: &Tensor5<T>, w: &[T], bias: &[T], s: &ConvShape) -> Result<Tensor5<T>> {
    s.check(&x.shape, w.len(), bias.len())?;
    let dims = dims_of(&x.shape);
    let out = s.out_dims(dims);
    let p: usize = out.iter().product();
    let k = s.patch_len();
    let mut y = Tensor5::zeros([x.batch(), s.cout, out[0], out[1], out[2]]);
    let in_len = x.sample_len();
    y.data
        .par_chunks_mut(s.cout * p)
        .zip(x.data.par_chunks(in_len))
        .for_each(|(ys, xs)| {
            let mut col = vec![T::zero(); k * p];
            im2col(xs, dims, s, out, &mut col);
            super::tensor::matmul(s.cout, k, p, w, &col, ys);
            for (co, row) in ys.chunks_mut(p).enumerate() {
                let b = bias[co];
                row.iter_mut().for_each(|v| *v = *v + b);
            }
        });
    Ok(y)
}

/// Gradients of [`conv3`] with respect to input, weights and bias.
pub fn conv3_backward<T: Real>(
    x: &Tensor5<T>,
    w: &[T],
    dy: &Tensor5<T>,
    s: &ConvShape,
) -> Result<(Tensor5<T>, Vec<T>, Vec<T>)> {
    s.check(&x.shape, w.len(), s.cout)?;
    let dims = dims_of(&x.shape);
    let out = s.out_dims(dims);
    if dy.shape != [x.batch(), s.cout, out[0], out[1], out[2]] {
        return Err(Error::ShapeMismatch(format!(
            "conv output gradient has shape {:?}",
            dy.shape
        )));
    }
    let p: usize = out.iter().product();
    let k = s.patch_len();
    let in_len = x.sample_len();
    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data
        .par_chunks(in_len)
        .zip(dy.data.par_chunks(s.cout * p))
        .map(|(xs, dys)| {
            let mut col = vec![T::zero(); k * p];
            im2col(xs, dims, s, out, &mut col);
            let mut dw = vec![T::zero(); s.cout * k];
            // dW = dY col^T
            T::gemm(
                s.cout,
                p,
                k,
                T::one(),
                dys,
                p as isize,
                1,
                &col,
                1,
                p as isize,
                T::zero(),
                &mut dw,
                k as isize,
                1,
            );
            let db: Vec<T> = dys.chunks(p).map(|r| r.iter().copied().sum()).collect();
            // dcol = W^T dY
            T::gemm(
                k,
                s.cout,
                p,
                T::one(),
                w,
                1,
                k as isize,
                dys,
                p as isize,
                1,
                T::zero(),
                &mut col,
                p as isize,
                1,
            );
            let mut dx = vec![T::zero(); in_len];
            col2im(&col, dims, s, out, &mut dx);
            (dx, dw, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(x.data.len());
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); s.cout];
    for (dxs, dws, dbs) in parts {
        dx.extend_from_slice(&dxs);
        dw.iter_mut().zip(&dws).for_each(|(a, &b)| *a = *a + b);
        db.iter_mut().zip(&dbs).for_each(|(a, &b)| *a = *a + b);
    }
    Ok((Tensor5::from_vec(x.shape, dx)?, dw, db))
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Values kept from a training-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor5<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel batch statistics `(mean, population variance)`.
pub fn channel_stats<T: Real>(x: &Tensor5<T>) -> (Vec<T>, Vec<T>) {
    let c = x.channels();
    let v = x.volume();
    let n = T::of((x.batch() * v) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..x.batch() {
            s = s + x.sample(b)[ch * v..(ch + 1) * v].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut q = T::zero();
        for b in 0..x.batch() {
            q = q + x.sample(b)[ch * v..(ch + 1) * v]
                .iter()
                .map(|&u| (u - m) * (u - m))
                .sum::<T>();
        }
        mean[ch] = m;
        var[ch] = q / n;
    }
    (mean, var)
}

/// Normalizes with the given per-channel statistics, then scales and shifts.
pub fn batch_norm_apply<T: Real>(x: &Tensor5<T>, mean: &[T], var: &[T], gamma: &[T], beta: &[T]) -> Tensor5<T> {
    let v = x.volume();
    let c = x.channels();
    let eps = T::of(BN_EPS);
    let mut y = x.clone();
    for b in 0..x.batch() {
        let s = y.sample_mut(b);
        for ch in 0..c {
            let inv = T::one() / (var[ch] + eps).sqrt();
            let (m, g, be) = (mean[ch], gamma[ch], beta[ch]);
            for u in &mut s[ch * v..(ch + 1) * v] {
                *u = (*u - m) * inv * g + be;
            }
        }
    }
    y
}

/// Normalized output, backward cache, batch mean and batch variance.
pub type BnTrainOutput<T> = (Tensor5<T>, BnCache<T>, Vec<T>, Vec<T>);

/// Training-mode batch norm: normalizes with batch statistics and returns
/// them for the running averages.
pub fn batch_norm_train<T: Real>(x: &Tensor5<T>, gamma: &[T], beta: &[T]) -> Result<BnTrainOutput<T>> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "batch norm over {c} channels got {} / {} parameters",
            gamma.len(),
            beta.len()
        )));
    }
    let (mean, var) = channel_stats(x);
    let xhat = batch_norm_apply(x, &mean, &var, &vec![T::one(); c], &vec![T::zero(); c]);
    let v = x.volume();
    let mut y = xhat.clone();
    for b in 0..x.batch() {
        let s = y.sample_mut(b);
        for ch in 0..c {
            for u in &mut s[ch * v..(ch + 1) * v] {
                *u = *u * gamma[ch] + beta[ch];
            }
        }
    }
    let inv_std = var.iter().map(|&s| T::one() / (s + T::of(BN_EPS)).sqrt()).collect();
    Ok((y, BnCache { xhat, inv_std }, mean, var))
}

/// Gradients of training-mode batch norm: `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(dy: &Tensor5<T>, cache: &BnCache<T>, gamma: &[T]) -> (Tensor5<T>, Vec<T>, Vec<T>) {
    let c = dy.channels();
    let v = dy.volume();
    let n = T::of((dy.batch() * v) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..dy.batch() {
        let g = dy.sample(b);
        let h = cache.xhat.sample(b);
        for ch in 0..c {
            for i in ch * v..(ch + 1) * v {
                dgamma[ch] = dgamma[ch] + g[i] * h[i];
                dbeta[ch] = dbeta[ch] + g[i];
            }
        }
    }
    let mut dx = dy.clone();
    for b in 0..dy.batch() {
        let h = cache.xhat.sample(b).to_vec();
        let s = dx.sample_mut(b);
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            for i in ch * v..(ch + 1) * v {
                s[i] = k * (n * s[i] - dbeta[ch] - h[i] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu<T: Real>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor5<T>, dy: &Tensor5<T>) -> Tensor5<T> {
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor5 { shape: dy.shape, data }
}

fn pool_dims(shape: &[usize; 5]) -> [usize; 3] {
    [shape[2].div_ceil(2), shape[3].div_ceil(2), shape[4].div_ceil(2)]
}

/// 2x2x2 average pooling, stride 2, ceil mode: edge windows average only the
/// voxels they cover.
pub fn avg_pool2<T: Real>(x: &Tensor5<T>) -> Tensor5<T> {
    let [b, c, nd, nl, nt] = x.shape;
    let [od, ol, ot] = pool_dims(&x.shape);
    let mut y = Tensor5::zeros([b, c, od, ol, ot]);
    for bc in 0..b * c {
        let xs = &x.data[bc * nd * nl * nt..(bc + 1) * nd * nl * nt];
        let ys = &mut y.data[bc * od * ol * ot..(bc + 1) * od * ol * ot];
        for i in 0..od {
            for j in 0..ol {
                for k in 0..ot {
                    let mut s = T::zero();
                    let mut n = 0usize;
                    for d in 2 * i..(2 * i + 2).min(nd) {
                        for l in 2 * j..(2 * j + 2).min(nl) {
                            for t in 2 * k..(2 * k + 2).min(nt) {
                                s = s + xs[(d * nl + l) * nt + t];
                                n += 1;
                            }
                        }
                    }
                    ys[(i * ol + j) * ot + k] = s / T::of(n as f64);
                }
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Real>(x_shape: [usize; 5], dy: &Tensor5<T>) -> Tensor5<T> {
    let [b, c, nd, nl, nt] = x_shape;
    let [od, ol, ot] = pool_dims(&x_shape);
    let mut dx = Tensor5::zeros(x_shape);
    for bc in 0..b * c {
        let gs = &dy.data[bc * od * ol * ot..(bc + 1) * od * ol * ot];
        let xs = &mut dx.data[bc * nd * nl * nt..(bc + 1) * nd * nl * nt];
        for i in 0..od {
            for j in 0..ol {
                for k in 0..ot {
                    let d_hi = (2 * i + 2).min(nd);
                    let l_hi = (2 * j + 2).min(nl);
                    let t_hi = (2 * k + 2).min(nt);
                    let n = (d_hi - 2 * i) * (l_hi - 2 * j) * (t_hi - 2 * k);
                    let g = gs[(i * ol + j) * ot + k] / T::of(n as f64);
                    for d in 2 * i..d_hi {
                        for l in 2 * j..l_hi {
                            for t in 2 * k..t_hi {
                                let e = &mut xs[(d * nl + l) * nt + t];
                                *e = *e + g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the three trailing axes: `[batch][channel]`.
pub fn global_avg_pool<T: Real>(x: &Tensor5<T>) -> Vec<T> {
    let v = x.volume();
    let inv = T::one() / T::of(v as f64);
    x.data.chunks(v).map(|c| c.iter().copied().sum::<T>() * inv).collect()
}

pub fn global_avg_pool_backward<T: Real>(x_shape: [usize; 5], dy: &[T]) -> Tensor5<T> {
    let v: usize = x_shape[2..].iter().product();
    let inv = T::one() / T::of(v as f64);
    let mut data = Vec::with_capacity(dy.len() * v);
    for &g in dy {
        data.extend(std::iter::repeat_n(g * inv, v));
    }
    Tensor5 { shape: x_shape, data }
}

/// `y[b] = w . x[b] + bias` for `x` of shape `[batch][features]`.
pub fn linear<T: Real>(x: &[T], features: usize, w: &[T], bias: T) -> Vec<T> {
    x.chunks(features)
        .map(|f| f.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() + bias)
        .collect()
}

/// Gradients of [`linear`]: `(dx, dw, dbias)`.
pub fn linear_backward<T: Real>(x: &[T], features: usize, w: &[T], dy: &[T]) -> (Vec<T>, Vec<T>, T) {
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = vec![T::zero(); features];
    let mut db = T::zero();
    for (f, &g) in x.chunks(features).zip(dy) {
        dx.extend(w.iter().map(|&wi| wi * g));
        dw.iter_mut().zip(f).for_each(|(a, &xi)| *a = *a + xi * g);
        db = db + g;
    }
    (dx, dw, db)
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss<T: Real>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "loss over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = T::of(pred.len() as f64);
    let loss = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum::<T>() / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| T::of(2.0) * (p - t) / n)
        .collect();
    Ok((loss, grad))
}

/// Parameters of one composite layer (BN, ReLU, conv) of a dense block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub conv: ConvShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct DenseBlockCache<T> {
    layers: Vec<(BnCache<T>, Tensor5<T>)>,
}

/// Training-mode dense block: every layer sees the concatenation of the
/// block input and all earlier layer outputs.
pub fn dense_block<T: Real>(x: &Tensor5<T>, layers: &[DenseLayer<T>]) -> Result<(Tensor5<T>, DenseBlockCache<T>)> {
    let mut h = x.clone();
    let mut cache = Vec::with_capacity(layers.len());
    for layer in layers {
        let (u, bc, _, _) = batch_norm_train(&h, &layer.gamma, &layer.beta)?;
        let g = conv3(&relu(&u), &layer.w, &layer.b, &layer.conv)?;
        cache.push((bc, u));
        h = Tensor5::concat_channels(&[&h, &g])?;
    }
    Ok((h, DenseBlockCache { layers: cache }))
}

pub fn dense_block_backward<T: Real>(
    layers: &[DenseLayer<T>],
    cache: &DenseBlockCache<T>,
    dy: &Tensor5<T>,
) -> Result<(Tensor5<T>, Vec<DenseLayerGrads<T>>)> {
    let mut dh = dy.clone();
    let mut grads = Vec::with_capacity(layers.len());
    for (layer, (bc, u)) in layers.iter().zip(&cache.layers).rev() {
        let lo = dh.channels() - layer.conv.cout;
        let dg = dh.channel_range(lo, dh.channels());
        let (dr, dw, db) = conv3_backward(&relu(u), &layer.w, &dg, &layer.conv)?;
        let du = relu_backward(u, &dr);
        let (dx, dgamma, dbeta) = batch_norm_backward(&du, bc, &layer.gamma);
        let mut rest = dh.channel_range(0, lo);
        rest.data.iter_mut().zip(&dx.data).for_each(|(a, &b)| *a = *a + b);
        dh = rest;
        grads.push(DenseLayerGrads {
            gamma: dgamma,
            beta: dbeta,
            w: dw,
            b: db,
        });
    }
    grads.reverse();
    Ok((dh, grads))
}
