use nnsam::encoder::{fuse, FrozenEncoder, FrozenEncoderSpec, EMBED_GRID};
use nnsam::model::{softmax, ModelOptions, NnSamModel};
use nnsam::optim::Sgd;
use nnsam::tensor::Tensor;
use nnsam_core::autoconfig::{plan, Fingerprint, PlanConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plan_for(side: usize) -> PlanConfig {
    plan(&Fingerprint {
        height: side,
        width: side,
        channels: 1,
        classes: 2,
        intensity_mean: vec![0.0],
        intensity_std: vec![1.0],
        spacing: (1.0, 1.0),
        sample_count: 4,
    })
    .unwrap()
}

fn options(fe: bool, reg: bool) -> ModelOptions {
    ModelOptions {
        frozen_encoder: fe.then(|| FrozenEncoderSpec::surrogate(0)),
        reg_head: reg,
    }
}

fn random_input(n: usize, side: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(n, 1, side, side, (0..n * side * side).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

#[test]
fn plain_model_output_shapes_at_256() {
    let p = plan_for(256);
    let mut m = NnSamModel::build(&p, &options(false, true), 0).unwrap();
    let out = m.forward(&random_input(1, 256, 1), false).unwrap();
    assert_eq!(out.logits.shape(), [1, 2, 256, 256]);
    assert_eq!(out.levelset.unwrap().shape(), [1, 2, 256, 256]);
    assert_eq!(m.frozen_param_count(), 0);
    assert!(m.frozen_checksum().is_none());
}

#[test]
fn frozen_branch_keeps_shapes_and_only_widens_d1() {
    let p = plan_for(64);
    let mut plain = NnSamModel::build(&p, &options(false, true), 3).unwrap();
    let mut full = NnSamModel::build(&p, &options(true, true), 3).unwrap();
    let x = random_input(1, 64, 2);
    let a = plain.forward(&x, false).unwrap();
    let b = full.forward(&x, false).unwrap();
    assert_eq!(a.logits.shape(), b.logits.shape());
    assert_eq!(a.levelset.unwrap().shape(), b.levelset.unwrap().shape());
    assert!(full.frozen_param_count() > 0);
    let bottleneck = *p.features_per_stage.last().unwrap();
    let f1 = p.features_per_stage[p.features_per_stage.len() - 2];
    assert_eq!(full.d1_in_channels(), bottleneck + 256);
    assert_eq!(plain.d1_in_channels(), bottleneck);
    // The only extra trainable weights are the upconv taps that read the fused channels.
    assert_eq!(full.trainable_param_count() - plain.trainable_param_count(), 256 * f1 * 4);
}

#[test]
fn every_plan_round_trips_spatial_dims() {
    for side in [32, 40, 48, 64, 80, 100] {
        let p = plan_for(side);
        let mut m = NnSamModel::build(&p, &options(false, true), 0).unwrap();
        let out = m.forward(&random_input(1, side, 0), false).unwrap();
        assert_eq!(out.logits.shape(), [1, 2, side, side], "side {side}");
    }
}

#[test]
fn same_seed_builds_identical_weights() {
    let p = plan_for(64);
    let a = NnSamModel::build(&p, &options(true, true), 11).unwrap();
    let b = NnSamModel::build(&p, &options(true, true), 11).unwrap();
    let c = NnSamModel::build(&p, &options(true, true), 12).unwrap();
    assert_eq!(a.trainable_checksum(), b.trainable_checksum());
    assert_ne!(a.trainable_checksum(), c.trainable_checksum());
    for (x, y) in a.trainable_params().iter().zip(b.trainable_params()) {
        assert_eq!(x.name, y.name);
        assert!(x.value.iter().zip(&y.value).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let mut m = NnSamModel::build(&plan_for(64), &options(false, true), 0).unwrap();
    assert!(m.forward(&random_input(1, 48, 0), false).is_err());
}

#[test]
fn invalid_plan_is_rejected() {
    let mut p = plan_for(64);
    p.features_per_stage.pop();
    assert!(matches!(NnSamModel::build(&p, &options(false, true), 0), Err(nnsam::Error::PlanInvalid(_))));
}

#[test]
fn outputs_are_finite_and_probabilities_normalised() {
    let mut m = NnSamModel::build(&plan_for(48), &options(false, true), 5).unwrap();
    let out = m.forward(&random_input(2, 48, 9), false).unwrap();
    assert!(out.logits.is_finite() && out.levelset.as_ref().unwrap().is_finite());
    let p = softmax(&out.logits);
    let plane = 48 * 48;
    for i in 0..2 {
        let s = p.sample(i);
        for k in 0..plane {
            assert!((s[k] + s[plane + k] - 1.0).abs() <= 1e-5);
        }
    }
}

#[test]
fn model_without_reg_head_returns_segmentation_only() {
    let mut m = NnSamModel::build(&plan_for(32), &options(false, false), 0).unwrap();
    assert!(!m.has_reg_head());
    assert!(m.forward(&random_input(1, 32, 0), false).unwrap().levelset.is_none());
}

#[test]
fn batch_items_do_not_interact() {
    let mut m = NnSamModel::build(&plan_for(48), &options(false, true), 1).unwrap();
    let one = random_input(1, 48, 4);
    let two = Tensor::stack(&[one.clone(), one.clone()]);
    for train in [false, true] {
        let out = m.forward(&two, train).unwrap();
        assert_eq!(out.logits.sample(0), out.logits.sample(1));
        let single = m.forward(&one, train).unwrap();
        assert_eq!(single.logits.sample(0), out.logits.sample(0));
    }
}

#[test]
fn every_trainable_tensor_receives_gradient() {
    let p = plan_for(32);
    let mut m = NnSamModel::build(&p, &options(true, true), 2).unwrap();
    let x = random_input(2, 32, 3);
    let out = m.forward(&x, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rand_like = |t: &Tensor| Tensor::from_vec(t.n, t.c, t.h, t.w, (0..t.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let dl = rand_like(&out.logits);
    let dr = rand_like(out.levelset.as_ref().unwrap());
    m.zero_grad();
    m.backward(&dl, Some(&dr));
    for param in m.trainable_params() {
        let norm: f64 = param.grad.iter().map(|g| (*g as f64).powi(2)).sum();
        assert!(norm > 0.0 && norm.is_finite(), "{} has no gradient", param.name);
    }
}

#[test]
fn whole_model_gradient_agrees_with_finite_differences() {
    // Directional derivatives of <dl, logits> along random steps on a few
    // tensors spread over the network. Small step: the untrained net is far from linear at 1e-3.
    let p = plan_for(32);
    let mut m = NnSamModel::build(&p, &options(true, false), 4).unwrap();
    let x = random_input(1, 32, 6);
    let emb = m.embed(&x).unwrap();
    let out = m.forward_with_embedding(&x, emb.as_ref(), true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dl: Vec<f32> = (0..out.logits.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    m.zero_grad();
    m.backward(&Tensor::from_vec(1, 2, 32, 32, dl.clone()), None);
    let names = ["head.seg.weight", "dec.3.1.norm.gamma", "dec.1.up.bias", "enc.3.0.norm.gamma", "enc.0.0.norm.beta"];
    for name in names {
        let idx = m.trainable_params().iter().position(|q| q.name == name).unwrap();
        let grad = m.trainable_params()[idx].grad.clone();
        let dir: Vec<f32> = (0..grad.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| *g as f64 * *d as f64).sum();
        let eval = |eps: f32| {
            let mut mm = m.clone();
            let q = &mut mm.trainable_params_mut()[idx];
            q.value.iter_mut().zip(&dir).for_each(|(v, d)| *v += eps * d);
            let o = mm.forward_with_embedding(&x, emb.as_ref(), true).unwrap();
            o.logits.data.iter().zip(&dl).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>()
        };
        let h = 1e-4;
        let numeric = (eval(h) - eval(-h)) / (2.0 * h as f64);
        assert!((numeric - analytic).abs() <= 0.05 * analytic.abs().max(1.0), "{name}: {numeric} vs {analytic}");
    }
    // The upconv taps reading the fused embedding channels are trained too.
    let up = m.trainable_params().into_iter().find(|q| q.name == "dec.1.up.weight").unwrap();
    let bottleneck = *p.features_per_stage.last().unwrap();
    let per_in = up.len() / m.d1_in_channels();
    assert!(up.grad[bottleneck * per_in..].iter().any(|g| *g != 0.0));
}

#[test]
fn optimizer_steps_never_touch_the_frozen_branch() {
    let p = plan_for(32);
    let mut m = NnSamModel::build(&p, &options(true, true), 0).unwrap();
    let frozen = m.frozen_checksum().unwrap();
    let trainable = m.trainable_checksum();
    let mut opt = Sgd::new(p.momentum, p.weight_decay);
    let x = random_input(2, 32, 1);
    for _ in 0..3 {
        let out = m.forward(&x, true).unwrap();
        let dl = Tensor::from_vec(2, 2, 32, 32, out.logits.data.iter().map(|v| v * 0.1).collect());
        m.zero_grad();
        m.backward(&dl, None);
        opt.step(&mut m.trainable_params_mut(), 0.01);
    }
    assert_eq!(m.frozen_checksum().unwrap(), frozen);
    assert_ne!(m.trainable_checksum(), trainable);
}

#[test]
fn encoder_output_is_64_grid_and_deterministic() {
    let enc = FrozenEncoder::build(&FrozenEncoderSpec::surrogate(0)).unwrap();
    let x = random_input(1, 256, 3);
    let a = enc.encode(&x).unwrap();
    assert_eq!(a.shape(), [1, 256, EMBED_GRID, EMBED_GRID]);
    let b = enc.encode(&x).unwrap();
    assert_eq!(a.data, b.data);
    let small = enc.encode(&random_input(1, 40, 3)).unwrap();
    assert_eq!(small.shape(), [1, 256, 64, 64]);
    assert!(a.is_finite());
}

#[test]
fn encoder_seeds_give_different_weights_and_outputs() {
    let a = FrozenEncoder::build(&FrozenEncoderSpec::surrogate(1)).unwrap();
    let b = FrozenEncoder::build(&FrozenEncoderSpec::surrogate(2)).unwrap();
    assert_ne!(a.checksum(), b.checksum());
    let x = random_input(1, 64, 0);
    assert_ne!(a.encode(&x).unwrap().data, b.encode(&x).unwrap().data);
}

#[test]
fn three_channel_input_with_equal_planes_matches_grayscale() {
    let enc = FrozenEncoder::build(&FrozenEncoderSpec::surrogate(0)).unwrap();
    let g = random_input(1, 32, 5);
    let rgb = Tensor::concat_channels(&Tensor::concat_channels(&g, &g), &g);
    assert_eq!(enc.encode(&g).unwrap().data, enc.encode(&rgb).unwrap().data);
    assert!(enc.encode(&Tensor::zeros(1, 2, 32, 32)).is_err());
}

#[test]
fn fuse_channel_arithmetic() {
    let emb = random_input(1, 64, 0);
    let emb = Tensor::from_vec(1, 256, 64, 64, emb.data.repeat(256));
    let bottleneck = Tensor::zeros(1, 512, 4, 4);
    assert_eq!(fuse(&emb, &bottleneck).shape(), [1, 768, 4, 4]);
}

#[test]
fn fuse_at_native_grid_is_a_copy() {
    let emb = Tensor::from_vec(1, 3, 64, 64, random_input(3, 64, 1).data);
    let b = Tensor::from_vec(1, 2, 64, 64, random_input(2, 64, 2).data);
    let f = fuse(&emb, &b);
    let (bb, e) = f.split_channels(2);
    assert_eq!(bb.data, b.data);
    assert_eq!(e.data, emb.data);
}

#[test]
fn fuse_keeps_constant_channels_constant() {
    let vals = [0.25f32, -3.5, 7.0];
    let data: Vec<f32> = vals.iter().flat_map(|&v| std::iter::repeat_n(v, 64 * 64)).collect();
    let emb = Tensor::from_vec(1, 3, 64, 64, data);
    for side in [5, 8, 16, 100] {
        let (_, e) = fuse(&emb, &Tensor::zeros(1, 1, side, side)).split_channels(1);
        for (c, v) in vals.iter().enumerate() {
            assert!(e.data[c * side * side..(c + 1) * side * side].iter().all(|x| x == v));
        }
    }
}
