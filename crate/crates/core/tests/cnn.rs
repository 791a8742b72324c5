use swei_core::cnn::io::{decode_model, encode_model, load_model, save_model};
use swei_core::cnn::layers::{
    avg_pool2, batch_norm_apply, batch_norm_train, conv3, dense_block, ConvShape, DenseLayer, BN_EPS,
};
use swei_core::cnn::{finetune, predict_map, ArchSpec, Model, Tensor5, TrainConfig, TrainSet};
use swei_core::field::DisplacementSequence;
use swei_core::geom::{GridGeom, Pixel, PushDescriptor};
use swei_core::swd::{DatasetRecord, Label, RecordMeta};

fn sequence(depth: usize, lateral: usize, frames: usize) -> DisplacementSequence {
    let g = GridGeom::with_default_pitch(depth, lateral).unwrap();
    DisplacementSequence::from_fn(g, frames, 7000.0, PushDescriptor::centered(&g), |d, l, t| {
        ((d * 13 + l * 7 + t * 3) as f32 * 0.37).sin() * 1e-6
    })
    .unwrap()
}

/// Network whose every weight is zero and whose output bias is `kpa`.
fn constant_model(kpa: f32) -> Model<f32> {
    let mut m = Model::<f32>::new(ArchSpec::reduced().for_window(5), 3).unwrap();
    m.params.iter_mut().for_each(|p| *p = 0.0);
    let (_, b) = m.head_offsets();
    m.params[b] = kpa;
    m.label_offset = 0.0;
    m.label_scale = 1.0;
    m
}

#[test]
fn constant_network_gives_constant_map() {
    let seq = sequence(12, 14, 6);
    let map = predict_map(&constant_model(42.0), &seq, 5, 1, None).unwrap();
    for d in 0..12 {
        for l in 0..14 {
            let v = map.get(Pixel::new(d, l));
            if (2..10).contains(&d) && (2..12).contains(&l) {
                assert!((v.unwrap() - 42_000.0).abs() < 1e-2, "{v:?} at {d},{l}");
            } else {
                assert!(v.is_none(), "border pixel {d},{l} should be missing");
            }
        }
    }
}

#[test]
fn strided_map_matches_dense_map_on_lattice() {
    let seq = sequence(14, 16, 5);
    let m = Model::<f32>::new(ArchSpec::reduced().for_window(5), 11).unwrap();
    let dense = predict_map(&m, &seq, 5, 1, None).unwrap();
    let coarse = predict_map(&m, &seq, 5, 3, None).unwrap();
    for d in (2..12).step_by(3) {
        for l in (2..14).step_by(3) {
            let px = Pixel::new(d, l);
            assert_eq!(dense.get(px), coarse.get(px), "lattice pixel {d},{l}");
        }
    }
    assert_eq!(dense.present_count(), coarse.present_count());
}

#[test]
fn window_larger_than_image_is_rejected() {
    let seq = sequence(6, 20, 4);
    let m = constant_model(1.0);
    assert!(matches!(
        predict_map(&m, &seq, 7, 1, None),
        Err(swei_core::Error::WindowLargerThanImage { .. })
    ));
}

#[test]
fn saved_model_predicts_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.swd");
    let mut m = Model::<f32>::new(ArchSpec::reduced().for_window(5), 5).unwrap();
    m.label_offset = 55.0;
    m.label_scale = 30.0;
    m.window = Some(5);
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.window, Some(5));
    let seq = sequence(10, 10, 6);
    let a = predict_map(&m, &seq, 5, 1, None).unwrap();
    let b = predict_map(&back, &seq, 5, 1, None).unwrap();
    let bits = |m: &swei_core::field::ElasticityMap| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(encode_model(&back).unwrap(), encode_model(&m).unwrap());
    assert_eq!(decode_model(&encode_model(&m).unwrap()).unwrap().params, m.params);
}

#[test]
fn finetune_with_zero_epochs_is_identity() {
    let seq = sequence(12, 12, 5);
    let rec = DatasetRecord {
        sequence: seq,
        label: Label::Homogeneous(30e3),
        meta: RecordMeta {
            phantom_id: "p".into(),
            concentration: 0,
            position: 0,
            push: 1,
        },
    };
    let m = Model::<f32>::new(ArchSpec::reduced().for_window(5), 9).unwrap();
    let cfg = TrainConfig {
        window: 5,
        ..TrainConfig::default()
    };
    let out = finetune(
        &m,
        TrainSet {
            train: std::slice::from_ref(&rec),
            val: &[],
        },
        &cfg,
        0,
    )
    .unwrap();
    assert_eq!(out.model.params, m.params);
    assert_eq!(out.model.running, m.running);
    assert!(out.history.is_empty());
}

#[test]
fn one_by_one_conv_with_unit_weight_is_identity() {
    let x = Tensor5::from_vec([1, 1, 2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap();
    let s = ConvShape::cube(1, 1, 1, 1);
    let y = conv3(&x, &[1.0], &[0.0], &s).unwrap();
    assert_eq!(y, x);
}

#[test]
fn all_ones_cube_kernel_sums_its_neighbourhood() {
    let c = 2;
    let x = Tensor5::from_vec([1, c, 3, 3, 3], vec![1.0f64; c * 27]).unwrap();
    let s = ConvShape::cube(c, 1, 3, 1);
    let y = conv3(&x, &vec![1.0; s.weight_len()], &[0.0], &s).unwrap();
    // the center voxel sees the full 3x3x3 support of every channel
    assert_eq!(y.data[13], 27.0 * c as f64);
    // a corner sees 2x2x2 of it
    assert_eq!(y.data[0], 8.0 * c as f64);
}

#[test]
fn strided_conv_output_shape() {
    let x = Tensor5::<f64>::zeros([2, 1, 9, 9, 6]);
    let s = ConvShape::cube(1, 3, 3, 2);
    let y = conv3(&x, &vec![0.0; s.weight_len()], &[0.0; 3], &s).unwrap();
    assert_eq!(y.shape, [2, 3, 5, 5, 6]);
}

#[test]
fn batch_norm_normalizes_batch_statistics() {
    let x = Tensor5::from_vec([2, 1, 1, 1, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let (y, _, mean, var) = batch_norm_train(&x, &[1.0], &[0.0]).unwrap();
    assert_eq!(mean, vec![2.5]);
    assert_eq!(var, vec![1.25]);
    let sd = (1.25f64 + BN_EPS).sqrt();
    for (got, want) in y.data.iter().zip([-1.5, -0.5, 0.5, 1.5]) {
        assert!((got - want / sd).abs() < 1e-12);
    }
    let (y2, ..) = batch_norm_train(&x, &[2.0], &[1.0]).unwrap();
    for (a, b) in y2.data.iter().zip(&y.data) {
        assert!((a - (2.0 * b + 1.0)).abs() < 1e-12);
    }
    // inference with mean 0 and variance 1 leaves values unchanged up to eps
    let z = batch_norm_apply(&x, &[0.0], &[1.0], &[1.0], &[0.0]);
    for (a, b) in z.data.iter().zip(&x.data) {
        assert!((a - b / (1.0 + BN_EPS).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn average_pool_ceil_mode_averages_valid_voxels() {
    let x = Tensor5::from_vec([1, 1, 3, 1, 1], vec![1.0f64, 3.0, 8.0]).unwrap();
    let y = avg_pool2(&x);
    assert_eq!(y.shape, [1, 1, 2, 1, 1]);
    assert_eq!(y.data, vec![2.0, 8.0]);
}

#[test]
fn dense_block_grows_channels_and_maps_zero_to_zero() {
    let (cin, growth, n) = (3, 2, 4);
    let layers: Vec<DenseLayer<f64>> = (0..n)
        .map(|i| {
            let c = cin + i * growth;
            let conv = ConvShape::cube(c, growth, 3, 1);
            DenseLayer {
                gamma: vec![1.0; c],
                beta: vec![0.0; c],
                w: vec![0.1; conv.weight_len()],
                b: vec![0.0; growth],
                conv,
            }
        })
        .collect();
    let x = Tensor5::<f64>::zeros([2, cin, 3, 3, 4]);
    let (y, _) = dense_block(&x, &layers).unwrap();
    assert_eq!(y.shape, [2, cin + n * growth, 3, 3, 4]);
    assert!(y.data.iter().all(|&v| v == 0.0));
}
