//! The DenseNet regressor: parameter layout, forward and backward passes,
//! and the Adam optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    avg_pool2, avg_pool2_backward, batch_norm_apply, batch_norm_backward, batch_norm_train, conv3, conv3_backward,
    global_avg_pool, global_avg_pool_backward, linear, linear_backward, relu, relu_backward, BnCache, ConvShape,
    BN_MOMENTUM,
};
use super::tensor::{Real, Tensor5};
use super::ArchSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSlot {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BnSlot {
    channels: usize,
    gamma: usize,
    beta: usize,
    /// Offset of the running mean; the running variance follows it.
    running: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    stem: Vec<(ConvSlot, BnSlot)>,
    dense: Vec<Vec<(BnSlot, ConvSlot)>>,
    head_w: usize,
    head_b: usize,
    features: usize,
    params: usize,
    running: usize,
}

impl Layout {
    fn new(arch: &ArchSpec) -> Self {
        let mut params = 0;
        let mut running = 0;
        let mut conv = |shape: ConvShape| {
            let w = params;
            params += shape.weight_len();
            let b = params;
            params += shape.cout;
            ConvSlot { shape, w, b }
        };
        let mut bn_slots = Vec::new();
        let mut stem_convs = Vec::new();
        let mut cin = 1;
        for (i, &c) in arch.stem.iter().enumerate() {
            let stride = if i < 2 { arch.spatial_stride } else { 1 };
            stem_convs.push(conv(ConvShape::cube(cin, c, arch.kernel, stride)));
            bn_slots.push(c);
            cin = c;
        }
        let mut dense_convs = Vec::new();
        for _ in 0..arch.blocks {
            let mut block = Vec::new();
            for _ in 0..arch.layers_per_block {
                block.push((cin, conv(ConvShape::cube(cin, arch.growth_rate, arch.kernel, 1))));
                cin += arch.growth_rate;
            }
            dense_convs.push(block);
        }
        let mut bn = |channels: usize| {
            let slot = BnSlot {
                channels,
                gamma: params,
                beta: params + channels,
                running,
            };
            params += 2 * channels;
            running += 2 * channels;
            slot
        };
        let stem = stem_convs
            .into_iter()
            .zip(bn_slots)
            .map(|(c, ch)| (c, bn(ch)))
            .collect();
        let dense = dense_convs
            .into_iter()
            .map(|block| block.into_iter().map(|(ch, c)| (bn(ch), c)).collect())
            .collect();
        let head_w = params;
        let head_b = params + cin;
        params += cin + 1;
        Self {
            stem,
            dense,
            head_w,
            head_b,
            features: cin,
            params,
            running,
        }
    }

    fn bn_slots(&self) -> Vec<BnSlot> {
        let mut out: Vec<BnSlot> = self.stem.iter().map(|(_, b)| *b).collect();
        for block in &self.dense {
            out.extend(block.iter().map(|(b, _)| *b));
        }
        out
    }
}

/// First and second moment estimates of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<T: Real> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
        let c2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
        let step = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(ADAM_EPS * c2.sqrt());
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            params[i] = params[i] - step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    stem: Vec<StemCache<T>>,
    blocks: Vec<Vec<DenseCache<T>>>,
    pool_shapes: Vec<[usize; 5]>,
    gap_shape: [usize; 5],
    features: Vec<T>,
    /// Batch `(mean, variance)` per batch-norm layer in slot order.
    stats: Vec<(Vec<T>, Vec<T>)>,
}

#[derive(Debug, Clone)]
struct StemCache<T> {
    input: Tensor5<T>,
    bn: BnCache<T>,
    pre: Tensor5<T>,
}

#[derive(Debug, Clone)]
struct DenseCache<T> {
    bn: BnCache<T>,
    pre: Tensor5<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

/// Trainable network with its running statistics and optimizer state.
///
/// Predictions are `label_offset + label_scale * (w . features + b)`; the
/// affine de-normalization is fixed when training starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub arch: ArchSpec,
    pub params: Vec<T>,
    /// Running mean then running variance for every batch-norm layer.
    pub running: Vec<T>,
    pub label_offset: f64,
    pub label_scale: f64,
    /// Spatial window size the network was trained on.
    pub window: Option<usize>,
    pub adam: Adam<T>,
    layout: Layout,
}

impl<T: Real> Model<T> {
    /// He-initialized network. Batch-norm scales start at 1, shifts and
    /// biases at 0.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.params];
        let convs = layout
            .stem
            .iter()
            .map(|(c, _)| *c)
            .chain(layout.dense.iter().flat_map(|b| b.iter().map(|(_, c)| *c)));
        for c in convs {
            let std = (2.0 / c.shape.patch_len() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[c.w..c.w + c.shape.weight_len()] {
                *p = T::of(normal.sample(&mut rng));
            }
        }
        let mut running = vec![T::zero(); layout.running];
        for bn in layout.bn_slots() {
            params[bn.gamma..bn.gamma + bn.channels].fill(T::one());
            running[bn.running + bn.channels..bn.running + 2 * bn.channels].fill(T::one());
        }
        let normal = Normal::new(0.0, (1.0 / layout.features as f64).sqrt()).expect("positive std");
        for p in &mut params[layout.head_w..layout.head_w + layout.features] {
            *p = T::of(normal.sample(&mut rng));
        }
        Ok(Self {
            arch,
            adam: Adam::new(layout.params),
            params,
            running,
            label_offset: 0.0,
            label_scale: 1.0,
            window: None,
            layout,
        })
    }

    /// Rebuilds a model from stored parts, checking their sizes.
    pub fn from_parts(
        arch: ArchSpec,
        params: Vec<T>,
        running: Vec<T>,
        label_offset: f64,
        label_scale: f64,
        adam: Adam<T>,
    ) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.params
            || running.len() != layout.running
            || adam.m.len() != layout.params
            || adam.v.len() != layout.params
        {
            return Err(Error::ShapeMismatch(format!(
                "architecture needs {} parameters and {} running values",
                layout.params, layout.running
            )));
        }
        Ok(Self {
            arch,
            params,
            running,
            label_offset,
            label_scale,
            window: None,
            adam,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.params
    }

    /// Offsets of the output weights and bias within `params`.
    pub fn head_offsets(&self) -> (usize, usize) {
        (self.layout.head_w, self.layout.head_b)
    }

    fn check_input(&self, x: &Tensor5<T>) -> Result<()> {
        if x.channels() != 1 || x.batch() == 0 || x.volume() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "network input must be [batch>0][1][d][l][t], got {:?}",
                x.shape
            )));
        }
        Ok(())
    }

    fn slice(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    fn conv(&self, x: &Tensor5<T>, c: &ConvSlot) -> Result<Tensor5<T>> {
        conv3(
            x,
            self.slice(c.w, c.shape.weight_len()),
            self.slice(c.b, c.shape.cout),
            &c.shape,
        )
    }

    fn bn(
        &self,
        x: &Tensor5<T>,
        s: &BnSlot,
        mode: Mode,
        cache: &mut Option<Cache<T>>,
    ) -> Result<(Tensor5<T>, Option<BnCache<T>>)> {
        let gamma = self.slice(s.gamma, s.channels);
        let beta = self.slice(s.beta, s.channels);
        match mode {
            Mode::Train => {
                let (y, bc, mean, var) = batch_norm_train(x, gamma, beta)?;
                if let Some(c) = cache.as_mut() {
                    c.stats.push((mean, var));
                }
                Ok((y, Some(bc)))
            }
            Mode::Eval => {
                let r = &self.running[s.running..s.running + 2 * s.channels];
                Ok((
                    batch_norm_apply(x, &r[..s.channels], &r[s.channels..], gamma, beta),
                    None,
                ))
            }
        }
    }

    fn run(&self, x: &Tensor5<T>, mode: Mode) -> Result<(Vec<T>, Option<Cache<T>>)> {
        self.check_input(x)?;
        let mut cache = (mode == Mode::Train).then(|| Cache {
            stem: Vec::new(),
            blocks: Vec::new(),
            pool_shapes: Vec::new(),
            gap_shape: [0; 5],
            features: Vec::new(),
            stats: Vec::new(),
        });
        let mut h = x.clone();
        for (conv, bn) in &self.layout.stem {
            let z = self.conv(&h, conv)?;
            let (u, bc) = self.bn(&z, bn, mode, &mut cache)?;
            let y = relu(&u);
            if let (Some(c), Some(bc)) = (cache.as_mut(), bc) {
                c.stem.push(StemCache {
                    input: h,
                    bn: bc,
                    pre: u,
                });
            }
            h = y;
        }
        for (bi, block) in self.layout.dense.iter().enumerate() {
            if bi > 0 {
                if let Some(c) = cache.as_mut() {
                    c.pool_shapes.push(h.shape);
                }
                h = avg_pool2(&h);
            }
            let mut layers = Vec::new();
            for (bn, conv) in block {
                let (u, bc) = self.bn(&h, bn, mode, &mut cache)?;
                let g = self.conv(&relu(&u), conv)?;
                if let Some(bc) = bc {
                    layers.push(DenseCache { bn: bc, pre: u });
                }
                h = Tensor5::concat_channels(&[&h, &g])?;
            }
            if let Some(c) = cache.as_mut() {
                c.blocks.push(layers);
            }
        }
        let features = global_avg_pool(&h);
        let pre = linear(
            &features,
            self.layout.features,
            self.slice(self.layout.head_w, self.layout.features),
            self.params[self.layout.head_b],
        );
        if let Some(c) = cache.as_mut() {
            c.gap_shape = h.shape;
            c.features = features;
        }
        let (off, scale) = (T::of(self.label_offset), T::of(self.label_scale));
        Ok((pre.into_iter().map(|v| off + scale * v).collect(), cache))
    }

    /// Inference with running batch-norm statistics.
    pub fn predict(&self, x: &Tensor5<T>) -> Result<Vec<T>> {
        Ok(self.run(x, Mode::Eval)?.0)
    }

    /// Training-mode forward pass using batch statistics.
    pub fn forward_train(&self, x: &Tensor5<T>) -> Result<(Vec<T>, Cache<T>)> {
        let (y, c) = self.run(x, Mode::Train)?;
        Ok((y, c.expect("train mode keeps a cache")))
    }

    /// Folds the batch statistics of `cache` into the running averages.
    pub fn update_running(&mut self, cache: &Cache<T>) {
        let m = T::of(BN_MOMENTUM);
        for (slot, (mean, var)) in self.layout.bn_slots().iter().zip(&cache.stats) {
            let r = &mut self.running[slot.running..slot.running + 2 * slot.channels];
            for c in 0..slot.channels {
                r[c] = m * r[c] + (T::one() - m) * mean[c];
                r[slot.channels + c] = m * r[slot.channels + c] + (T::one() - m) * var[c];
            }
        }
    }

    /// Gradients of `sum(dpred * pred)` with respect to the parameters and
    /// the input.
    pub fn backward(&self, cache: &Cache<T>, dpred: &[T]) -> Result<(Vec<T>, Tensor5<T>)> {
        let lay = &self.layout;
        if dpred.len() != cache.gap_shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "{} output gradients for a batch of {}",
                dpred.len(),
                cache.gap_shape[0]
            )));
        }
        let mut grads = vec![T::zero(); lay.params];
        let add = |grads: &mut Vec<T>, off: usize, g: &[T]| {
            for (a, &b) in grads[off..off + g.len()].iter_mut().zip(g) {
                *a = *a + b;
            }
        };
        let scale = T::of(self.label_scale);
        let dpre: Vec<T> = dpred.iter().map(|&g| g * scale).collect();
        let (df, dw, db) = linear_backward(
            &cache.features,
            lay.features,
            self.slice(lay.head_w, lay.features),
            &dpre,
        );
        add(&mut grads, lay.head_w, &dw);
        grads[lay.head_b] = db;
        let mut dh = global_avg_pool_backward(cache.gap_shape, &df);
        for bi in (0..lay.dense.len()).rev() {
            let block = &lay.dense[bi];
            let g = self.arch.growth_rate;
            let c_in = dh.channels() - block.len() * g;
            for j in (0..block.len()).rev() {
                let (bn, conv) = &block[j];
                let lc = &cache.blocks[bi][j];
                let lo = c_in + j * g;
                let dg = dh.channel_range(lo, lo + g);
                let r = relu(&lc.pre);
                let (dr, dw, db) = conv3_backward(&r, self.slice(conv.w, conv.shape.weight_len()), &dg, &conv.shape)?;
                add(&mut grads, conv.w, &dw);
                add(&mut grads, conv.b, &db);
                let du = relu_backward(&lc.pre, &dr);
                let (dx, dgamma, dbeta) = batch_norm_backward(&du, &lc.bn, self.slice(bn.gamma, bn.channels));
                add(&mut grads, bn.gamma, &dgamma);
                add(&mut grads, bn.beta, &dbeta);
                let mut rest = dh.channel_range(0, lo);
                for (a, &b) in rest.data.iter_mut().zip(&dx.data) {
                    *a = *a + b;
                }
                dh = rest;
            }
            if bi > 0 {
                dh = avg_pool2_backward(cache.pool_shapes[bi - 1], &dh);
            }
        }
        for (i, (conv, bn)) in lay.stem.iter().enumerate().rev() {
            let sc = &cache.stem[i];
            let du = relu_backward(&sc.pre, &dh);
            let (dz, dgamma, dbeta) = batch_norm_backward(&du, &sc.bn, self.slice(bn.gamma, bn.channels));
            add(&mut grads, bn.gamma, &dgamma);
            add(&mut grads, bn.beta, &dbeta);
            let (dx, dw, db) =
                conv3_backward(&sc.input, self.slice(conv.w, conv.shape.weight_len()), &dz, &conv.shape)?;
            add(&mut grads, conv.w, &dw);
            add(&mut grads, conv.b, &db);
            dh = dx;
        }
        Ok((grads, dh))
    }

    /// Converts parameters and state to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().expect("finite"))).collect::<Vec<U>>();
        Model {
            arch: self.arch.clone(),
            params: conv(&self.params),
            running: conv(&self.running),
            label_offset: self.label_offset,
            label_scale: self.label_scale,
            window: self.window,
            adam: Adam {
                m: conv(&self.adam.m),
                v: conv(&self.adam.v),
                step: self.adam.step,
            },
            layout: self.layout.clone(),
        }
    }
}
