mod common;

use common::{blobs, small_mlp};
use jointprune::net::softmax_cross_entropy;
use jointprune::pipeline::{adjust_dropout, apply_dropout_policy};
use jointprune::{LayerSpec, Masking, Mode, ModelKind, Optimizer, OptimizerConfig, Tensor, WeightMask, WinnerRateConfig};

fn batch() -> (Tensor<f32>, Vec<usize>) {
    let ds = blobs(16, 3);
    (ds.images.clone(), ds.labels.clone())
}

#[test]
fn forward_is_deterministic_per_seed() {
    let net = small_mlp(5);
    let (x, _) = batch();
    let rates = WinnerRateConfig::from_rates(&[0.25, 0.5, 1.0]).unwrap();
    let a = net.forward(&x, Mode::Train { seed: 9 }, Masking::Winners(&rates)).unwrap();
    let b = net.forward(&x, Mode::Train { seed: 9 }, Masking::Winners(&rates)).unwrap();
    assert_eq!(a.logits().data(), b.logits().data());
    let c = net.forward(&x, Mode::Train { seed: 10 }, Masking::Winners(&rates)).unwrap();
    assert_ne!(a.logits().data(), c.logits().data());
    assert_eq!(small_mlp(5).params(0).weights.data(), net.params(0).weights.data());
}

#[test]
fn rate_one_masks_are_the_identity() {
    let net = small_mlp(1);
    let (x, _) = batch();
    let dense = net.forward(&x, Mode::Eval, Masking::Off).unwrap();
    let ones = WinnerRateConfig::from_rates(&[1.0, 1.0, 1.0]).unwrap();
    let masked = net.forward(&x, Mode::Eval, Masking::Winners(&ones)).unwrap();
    assert_eq!(dense.logits().data(), masked.logits().data());
}

#[test]
fn masking_twice_is_masking_once() {
    // re-applying the winners of an already masked output keeps it unchanged
    let net = small_mlp(2);
    let (x, _) = batch();
    let rates = WinnerRateConfig::from_rates(&[0.25, 1.0, 1.0]).unwrap();
    let pass = net.forward(&x, Mode::Eval, Masking::Winners(&rates)).unwrap();
    let site = net.mask_site(0).unwrap();
    let out = pass.output(site);
    for n in 0..x.shape()[0] {
        let sample = out.sample(n);
        let again = jointprune::sparsity::select_winners_slice(sample, 0.25).unwrap();
        for (v, k) in sample.iter().zip(&again.keep) {
            if !k {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn losers_receive_no_gradient() {
    let mut net = small_mlp(4);
    net.set_dropout_rate(3, 0.0).unwrap();
    let (x, labels) = batch();
    let rates = WinnerRateConfig::from_rates(&[0.25, 0.5, 1.0]).unwrap();
    let pass = net.forward(&x, Mode::Train { seed: 0 }, Masking::Winners(&rates)).unwrap();
    net.zero_grads();
    net.loss_and_backward(&pass, &labels, 0.0).unwrap();
    // a hidden unit that lost on every sample cannot move its outgoing weights
    let site = net.mask_site(0).unwrap();
    let mask = pass.activation_mask(site).unwrap();
    let hidden = 32;
    let gw = net.params(1).weights.grad().unwrap();
    for u in 0..hidden {
        let ever = (0..x.shape()[0]).any(|n| mask[n * hidden + u]);
        if !ever {
            assert!(gw[u * 16..(u + 1) * 16].iter().all(|&g| g == 0.0), "unit {u}");
        }
    }
}

#[test]
fn masked_gradient_matches_explicitly_zeroed_network() {
    // backward through a mask equals backward through a net whose mask was
    // folded into the input of the next layer
    let mut net = small_mlp(8);
    net.set_dropout_rate(3, 0.0).unwrap();
    let (x, labels) = batch();
    let rates = WinnerRateConfig::from_rates(&[0.3, 1.0, 1.0]).unwrap();
    let pass = net.forward(&x, Mode::Train { seed: 0 }, Masking::Winners(&rates)).unwrap();
    let mut a = net.clone();
    a.zero_grads();
    a.loss_and_backward(&pass, &labels, 0.0).unwrap();

    let site = net.mask_site(0).unwrap();
    let masked_hidden = pass.output(site).clone();
    let tail = jointprune::Network::<f32>::new(
        &[32],
        vec![
            LayerSpec::Fc { inputs: 32, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Fc { inputs: 16, outputs: 4 },
        ],
        0,
    )
    .unwrap();
    let mut tail = tail;
    for j in 0..2 {
        let src = net.params(j + 1);
        let dst = tail.params_mut(j);
        dst.weights.data_mut().copy_from_slice(src.weights.data());
        dst.bias.data_mut().copy_from_slice(src.bias.data());
    }
    let tp = tail.forward(&masked_hidden, Mode::Train { seed: 0 }, Masking::Off).unwrap();
    assert_eq!(tp.logits().data(), pass.logits().data());
    let mut g = vec![0.0; tp.logits().len()];
    softmax_cross_entropy(tp.logits(), &labels, Some(&mut g)).unwrap();
    let g = Tensor::from_vec(tp.logits().shape(), g).unwrap();
    tail.zero_grads();
    tail.backward(&tp, &g, true).unwrap();
    assert_eq!(tail.params(0).weights.grad().unwrap(), a.params(1).weights.grad().unwrap());
}

#[test]
fn pruned_weights_stay_zero_through_training() {
    let mut net = small_mlp(3);
    let shape = net.params(0).weights.shape().to_vec();
    let keep: Vec<bool> = (0..net.weight_count(0)).map(|i| i % 3 != 0).collect();
    net.set_weight_mask(0, WeightMask::from_keep(&shape, keep.clone()).unwrap()).unwrap();
    let ds = blobs(64, 1);
    for cfg in [
        OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 },
        OptimizerConfig::Adadelta { lr: 1.0, rho: 0.95, eps: 1e-6 },
    ] {
        let mut opt = Optimizer::new(cfg, &net).unwrap();
        for step in 0..5 {
            let pass = net.forward(&ds.images, Mode::Train { seed: step }, Masking::Off).unwrap();
            net.zero_grads();
            net.loss_and_backward(&pass, &ds.labels, 1e-3).unwrap();
            opt.step(&mut net).unwrap();
        }
        for (w, k) in net.params(0).weights.data().iter().zip(&keep) {
            if !k {
                assert_eq!(*w, 0.0);
            }
        }
    }
}

#[test]
fn dropout_rates_follow_square_root_rule() {
    let mut net = ModelKind::Mlp3.build(0.5, 0).unwrap();
    let rates = WinnerRateConfig::from_rates(&[0.12, 0.24, 1.0]).unwrap();
    apply_dropout_policy(&mut net, 0.5, &rates).unwrap();
    let drops: Vec<f64> = net
        .layers()
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Dropout { rate } => Some(*rate),
            _ => None,
        })
        .collect();
    assert_eq!(drops, vec![0.5 * 0.12f64.sqrt(), 0.5 * 0.24f64.sqrt()]);
    assert_eq!(adjust_dropout(0.5, 1.0), 0.5);
    assert_eq!(adjust_dropout(0.5, 0.25), 0.25);
}
