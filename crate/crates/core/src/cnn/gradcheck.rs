//! Central finite-difference gradient checks in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::net::Model;
use super::tensor::Tensor5;
use super::ArchSpec;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|)`, falling back to the absolute difference when
/// both are below 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    let s = analytic.abs().max(numeric.abs());
    if s < 1e-8 {
        d
    } else {
        d / s
    }
}

/// Compares `analytic` against central differences of `f` around `values`.
pub fn check(analytic: &[f64], values: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut v = values.to_vec();
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + FD_STEP;
        let up = f(&v);
        v[i] = orig - FD_STEP;
        let down = f(&v);
        v[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor5<f64> {
    Tensor5::from_vec(shape, random(rng, shape.iter().product())).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(t: &Tensor5<f64>, data: &[f64]) -> Tensor5<f64> {
    Tensor5 {
        shape: t.shape,
        data: data.to_vec(),
    }
}

struct Suite {
    reports: Vec<GradReport>,
}

impl Suite {
    fn add(&mut self, name: &str, analytic: &[f64], values: &[f64], f: impl Fn(&[f64]) -> f64) {
        let max_rel_error = check(analytic, values, f);
        self.reports.push(GradReport {
            name: name.to_string(),
            checked: values.len(),
            max_rel_error,
        });
    }
}

fn conv_case(s: &mut Suite, rng: &mut ChaCha8Rng, name: &str, shape: ConvShape, dims: [usize; 3]) -> Result<()> {
    let x = tensor(rng, [2, shape.cin, dims[0], dims[1], dims[2]]);
    let w = random(rng, shape.weight_len());
    let b = random(rng, shape.cout);
    let y = conv3(&x, &w, &b, &shape)?;
    let r = random(rng, y.data.len());
    let (dx, dw, db) = conv3_backward(&x, &w, &Tensor5::from_vec(y.shape, r.clone())?, &shape)?;
    let loss = |x: &Tensor5<f64>, w: &[f64], b: &[f64]| dot(&conv3(x, w, b, &shape).expect("shape").data, &r);
    s.add(&format!("{name} input"), &dx.data, &x.data, |v| {
        loss(&with(&x, v), &w, &b)
    });
    s.add(&format!("{name} weights"), &dw, &w, |v| loss(&x, v, &b));
    s.add(&format!("{name} bias"), &db, &b, |v| loss(&x, &w, v));
    Ok(())
}

/// Runs the finite-difference check on every layer, a dense block and a
/// small full network. Each report holds the worst relative error.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Suite { reports: Vec::new() };

    conv_case(&mut s, &mut rng, "conv3", ConvShape::cube(2, 3, 3, 1), [4, 5, 3])?;
    conv_case(
        &mut s,
        &mut rng,
        "conv3 strided",
        ConvShape::cube(2, 2, 3, 2),
        [5, 4, 3],
    )?;

    let x = tensor(&mut rng, [3, 2, 2, 3, 2]);
    let gamma = random(&mut rng, 2);
    let beta = random(&mut rng, 2);
    let (y, cache, _, _) = batch_norm_train(&x, &gamma, &beta)?;
    let r = random(&mut rng, y.data.len());
    let (dx, dg, db) = batch_norm_backward(&Tensor5::from_vec(y.shape, r.clone())?, &cache, &gamma);
    let loss = |x: &Tensor5<f64>, g: &[f64], b: &[f64]| dot(&batch_norm_train(x, g, b).expect("shape").0.data, &r);
    s.add("batch_norm input", &dx.data, &x.data, |v| {
        loss(&with(&x, v), &gamma, &beta)
    });
    s.add("batch_norm gamma", &dg, &gamma, |v| loss(&x, v, &beta));
    s.add("batch_norm beta", &db, &beta, |v| loss(&x, &gamma, v));

    // keep inputs away from the kink
    let mut x = tensor(&mut rng, [2, 2, 3, 2, 2]);
    x.data.iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
    let r = random(&mut rng, x.data.len());
    let dx = relu_backward(&x, &Tensor5::from_vec(x.shape, r.clone())?);
    s.add("relu", &dx.data, &x.data, |v| dot(&relu(&with(&x, v)).data, &r));

    let x = tensor(&mut rng, [2, 2, 3, 5, 4]);
    let y = avg_pool2(&x);
    let r = random(&mut rng, y.data.len());
    let dx = avg_pool2_backward(x.shape, &Tensor5::from_vec(y.shape, r.clone())?);
    s.add("avg_pool", &dx.data, &x.data, |v| {
        dot(&avg_pool2(&with(&x, v)).data, &r)
    });

    let r = random(&mut rng, x.batch() * x.channels());
    let dx = global_avg_pool_backward(x.shape, &r);
    s.add("global_avg_pool", &dx.data, &x.data, |v| {
        dot(&global_avg_pool(&with(&x, v)), &r)
    });

    let feats = random(&mut rng, 3 * 5);
    let w = random(&mut rng, 5);
    let bias = 0.3;
    let r = random(&mut rng, 3);
    let (dx, dw, db) = linear_backward(&feats, 5, &w, &r);
    s.add("linear input", &dx, &feats, |v| dot(&linear(v, 5, &w, bias), &r));
    s.add("linear weights", &dw, &w, |v| dot(&linear(&feats, 5, v, bias), &r));
    s.add("linear bias", &[db], &[bias], |v| dot(&linear(&feats, 5, &w, v[0]), &r));

    let pred = random(&mut rng, 6);
    let target = random(&mut rng, 6);
    let (_, grad) = mse_loss(&pred, &target)?;
    s.add("mse", &grad, &pred, |v| mse_loss(v, &target).expect("shape").0);

    let (c_in, growth) = (3, 2);
    let layers: Vec<DenseLayer<f64>> = (0..4)
        .map(|j| {
            let conv = ConvShape::cube(c_in + j * growth, growth, 3, 1);
            DenseLayer {
                gamma: random(&mut rng, conv.cin).iter().map(|g| 1.0 + 0.5 * g).collect(),
                beta: random(&mut rng, conv.cin),
                w: random(&mut rng, conv.weight_len()),
                b: random(&mut rng, growth),
                conv,
            }
        })
        .collect();
    let x = tensor(&mut rng, [2, c_in, 3, 3, 2]);
    let (y, cache) = dense_block(&x, &layers)?;
    let r = random(&mut rng, y.data.len());
    let (dx, grads) = dense_block_backward(&layers, &cache, &Tensor5::from_vec(y.shape, r.clone())?)?;
    let block_loss = |x: &Tensor5<f64>, ls: &[DenseLayer<f64>]| dot(&dense_block(x, ls).expect("shape").0.data, &r);
    s.add("dense_block input", &dx.data, &x.data, |v| {
        block_loss(&with(&x, v), &layers)
    });
    let mut flat = Vec::new();
    let mut flat_grad = Vec::new();
    for (l, g) in layers.iter().zip(&grads) {
        for (p, d) in [(&l.gamma, &g.gamma), (&l.beta, &g.beta), (&l.w, &g.w), (&l.b, &g.b)] {
            flat.extend_from_slice(p);
            flat_grad.extend_from_slice(d);
        }
    }
    let unflatten = |v: &[f64]| {
        let mut out = layers.clone();
        let mut i = 0;
        for l in &mut out {
            for p in [&mut l.gamma, &mut l.beta, &mut l.w, &mut l.b] {
                let n = p.len();
                p.copy_from_slice(&v[i..i + n]);
                i += n;
            }
        }
        out
    };
    s.add("dense_block params", &flat_grad, &flat, |v| {
        block_loss(&x, &unflatten(v))
    });

    let arch = ArchSpec {
        stem: vec![2, 3, 3],
        growth_rate: 2,
        ..ArchSpec::default()
    };
    let mut model = Model::<f64>::new(arch, seed)?;
    model.label_offset = 20.0;
    model.label_scale = 3.0;
    let x = tensor(&mut rng, [3, 1, 7, 7, 6]);
    let target = random(&mut rng, 3);
    let (pred, cache) = model.forward_train(&x)?;
    let (_, dpred) = mse_loss(&pred, &target)?;
    let (grads, dx) = model.backward(&cache, &dpred)?;
    let net_loss = |m: &Model<f64>, x: &Tensor5<f64>| {
        let p = m.forward_train(x).expect("shape").0;
        mse_loss(&p, &target).expect("shape").0
    };
    s.add("network input", &dx.data, &x.data, |v| net_loss(&model, &with(&x, v)));
    let params = model.params.clone();
    let mut probe = model.clone();
    let cell = std::cell::RefCell::new(&mut probe);
    s.add("network params", &grads, &params, |v| {
        let mut m = cell.borrow_mut();
        m.params.copy_from_slice(v);
        net_loss(&m, &x)
    });
    Ok(s.reports)
}
