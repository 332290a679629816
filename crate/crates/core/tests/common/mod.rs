//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use jointprune::net::softmax_cross_entropy;
use jointprune::{
    ConvGeometry, LayerSpec, Masking, Mode, Network, PoolGeometry, Tensor, WeightMask, WinnerRateConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error with an absolute floor so that entries that are zero up to
/// rounding do not dominate.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub struct GradCase {
    pub net: Network<f64>,
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
    pub rates: Option<WinnerRateConfig>,
    pub alpha: f64,
    pub kinds: Vec<&'static str>,
}

fn uni(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random small network drawn from three templates so that every layer kind
/// (including masks, dropout and the additive skip) appears across instances.
pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..5);
    let batch = rng.random_range(1..4);
    let (input_shape, layers, rates): (Vec<usize>, Vec<LayerSpec>, Vec<f64>) = match seed % 3 {
        0 => {
            let i = rng.random_range(3..8);
            let h = rng.random_range(4..9);
            let h2 = rng.random_range(3..7);
            (
                vec![i],
                vec![
                    LayerSpec::Fc { inputs: i, outputs: h },
                    LayerSpec::Relu,
                    LayerSpec::Dropout { rate: 0.3 },
                    LayerSpec::Fc { inputs: h, outputs: h2 },
                    LayerSpec::LeakyRelu { slope: 0.2 },
                    LayerSpec::Fc { inputs: h2, outputs: classes },
                ],
                vec![0.5, 0.6, 1.0],
            )
        }
        1 => {
            let c = rng.random_range(1..3);
            let hw = rng.random_range(5..8);
            let f1 = rng.random_range(2..4);
            let k = [1, 2, 3][rng.random_range(0..3)];
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..2);
            let g1 = ConvGeometry::square(c, f1, k, stride, pad);
            let (oh, _) = g1.output_hw(hw, hw).unwrap();
            let pool = if oh >= 3 {
                PoolGeometry { window: 2, stride: 1, padding: rng.random_range(0..2) }
            } else {
                PoolGeometry { window: 1, stride: 1, padding: 0 }
            };
            let (ph, pw) = pool.output_hw(oh, oh).unwrap();
            let g2 = ConvGeometry::square(f1, 2, 2.min(ph), 1, 1);
            let (qh, qw) = g2.output_hw(ph, pw).unwrap();
            let avg = PoolGeometry { window: 2.min(qh), stride: 1, padding: 0 };
            let (ah, aw) = avg.output_hw(qh, qw).unwrap();
            (
                vec![c, hw, hw],
                vec![
                    LayerSpec::Conv2d(g1),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool(pool),
                    LayerSpec::Conv2d(g2),
                    LayerSpec::LeakyRelu { slope: 0.1 },
                    LayerSpec::AvgPool(avg),
                    LayerSpec::Flatten,
                    LayerSpec::Fc { inputs: 2 * ah * aw, outputs: classes },
                ],
                vec![0.4, 0.7, 1.0],
            )
        }
        _ => {
            let hw = rng.random_range(3..6);
            (
                vec![2, hw, hw],
                vec![
                    LayerSpec::Conv2d(ConvGeometry::square(2, 3, 3, 1, 1)),
                    LayerSpec::LeakyRelu { slope: 0.1 },
                    LayerSpec::SkipSave,
                    LayerSpec::Conv2d(ConvGeometry::square(3, 3, 3, 1, 1)),
                    LayerSpec::LeakyRelu { slope: 0.1 },
                    LayerSpec::SkipAdd,
                    LayerSpec::Flatten,
                    LayerSpec::Fc { inputs: 3 * hw * hw, outputs: classes },
                ],
                vec![0.6, 0.5, 1.0],
            )
        }
    };
    let kinds = layers.iter().map(|l| l.kind()).collect();
    let mut net = Network::<f64>::new(&input_shape, layers, seed).unwrap();
    // He-initialised weights, small random biases and a few pruned weights
    for j in 0..net.num_weight_layers() {
        let p = net.params_mut(j);
        let n = p.weights.len();
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
        let keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let shape = net.params(j).weights.shape().to_vec();
        net.set_weight_mask(j, WeightMask::from_keep(&shape, keep).unwrap()).unwrap();
    }
    let per: usize = input_shape.iter().product();
    let mut shape = vec![batch];
    shape.extend(&input_shape);
    let input = Tensor::from_vec(&shape, uni(&mut rng, batch * per)).unwrap();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let rates = if seed.is_multiple_of(2) { Some(WinnerRateConfig::from_rates(&rates).unwrap()) } else { None };
    GradCase {
        net,
        input,
        labels,
        rates,
        alpha: if seed % 4 == 1 { 1e-2 } else { 0.0 },
        kinds,
    }
}

fn loss_at(net: &Network<f64>, case: &GradCase, input: &Tensor<f64>) -> f64 {
    let pass = net
        .forward(input, Mode::Train { seed: 17 }, Masking::from_rates(case.rates.as_ref()))
        .unwrap();
    net.loss(&pass, &case.labels, case.alpha).unwrap().total()
}

/// Worst relative error between analytic and central-difference gradients
/// over every kept weight, bias and input element; also checks that every
/// pruned weight has an exactly zero gradient.
pub fn check_case(case: &mut GradCase) -> (f64, usize) {
    let h = 1e-6;
    let pass = case
        .net
        .forward(&case.input, Mode::Train { seed: 17 }, Masking::from_rates(case.rates.as_ref()))
        .unwrap();
    let mut dlogits = vec![0.0; pass.logits().len()];
    softmax_cross_entropy(pass.logits(), &case.labels, Some(&mut dlogits)).unwrap();
    let dlogits = Tensor::from_vec(pass.logits().shape(), dlogits).unwrap();
    let dx = case.net.backward(&pass, &dlogits, true).unwrap().unwrap();
    // the full loss gradient (with ℓ1) for parameters
    case.net.loss_and_backward(&pass, &case.labels, case.alpha).unwrap();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let base = case.net.clone();
    // central differences lose about eps·|L|/h to rounding
    let floor = 1e-6 * loss_at(&base, case, &case.input).abs().max(1.0);
    for j in 0..base.num_weight_layers() {
        let gw = base.params(j).weights.grad().unwrap().to_vec();
        let gb = base.params(j).bias.grad().unwrap().to_vec();
        let keep = base.weight_mask(j).keep().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                assert_eq!(gw[i], 0.0, "pruned weight {i} of layer {j} has gradient");
                continue;
            }
            let mut plus = base.clone();
            plus.params_mut(j).weights.data_mut()[i] += h;
            let mut minus = base.clone();
            minus.params_mut(j).weights.data_mut()[i] -= h;
            let fd = (loss_at(&plus, case, &case.input) - loss_at(&minus, case, &case.input)) / (2.0 * h);
            worst = worst.max(rel_err(gw[i], fd, floor));
            checked += 1;
        }
        for i in 0..gb.len() {
            let mut plus = base.clone();
            plus.params_mut(j).bias.data_mut()[i] += h;
            let mut minus = base.clone();
            minus.params_mut(j).bias.data_mut()[i] -= h;
            let fd = (loss_at(&plus, case, &case.input) - loss_at(&minus, case, &case.input)) / (2.0 * h);
            worst = worst.max(rel_err(gb[i], fd, floor));
            checked += 1;
        }
    }
    // input gradient of the cross-entropy term alone
    let ce_case = GradCase {
        net: base.clone(),
        input: case.input.clone(),
        labels: case.labels.clone(),
        rates: case.rates.clone(),
        alpha: 0.0,
        kinds: Vec::new(),
    };
    for i in 0..case.input.len() {
        let mut p = case.input.clone();
        p.data_mut()[i] += h;
        let mut m = case.input.clone();
        m.data_mut()[i] -= h;
        let fd = (loss_at(&base, &ce_case, &p) - loss_at(&base, &ce_case, &m)) / (2.0 * h);
        worst = worst.max(rel_err(dx.data()[i], fd, floor));
        checked += 1;
    }
    (worst, checked)
}

/// Triple loop over (sample, input element, output) for fc, and over every
/// (sample, output position, out channel, tap) for conv; counts pairs whose
/// activation and weight are both nonzero.
pub fn brute_force_pairs(layer: &LayerSpec, in_shape: &[usize], x: &Tensor<f32>, w: &[f32]) -> u64 {
    let batch = x.shape()[0];
    let mut count = 0u64;
    match *layer {
        LayerSpec::Fc { inputs, outputs } => {
            for n in 0..batch {
                let xs = x.sample(n);
                for i in 0..inputs {
                    for o in 0..outputs {
                        if xs[i] != 0.0 && w[i * outputs + o] != 0.0 {
                            count += 1;
                        }
                    }
                }
            }
        }
        LayerSpec::Conv2d(g) => {
            let (c, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = g.output_hw(h, wd).unwrap();
            for n in 0..batch {
                let xs = x.sample(n);
                for o in 0..g.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                for ky in 0..g.kernel_h {
                                    for kx in 0..g.kernel_w {
                                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let a = xs[ch * h * wd + iy as usize * wd + ix as usize];
                                        let wv = w[((o * c + ch) * g.kernel_h + ky) * g.kernel_w + kx];
                                        if a != 0.0 && wv != 0.0 {
                                            count += 1;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    count
}

/// A random single-weight-layer instance with sparse input and pruned weights.
pub fn random_mac_case(seed: u64) -> (Network<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (shape, layers) = if seed.is_multiple_of(2) {
        let i = rng.random_range(1..20);
        let o = rng.random_range(1..20);
        (vec![i], vec![LayerSpec::Fc { inputs: i, outputs: o }])
    } else {
        let c = rng.random_range(1..4);
        let hw = rng.random_range(3..9);
        let k = rng.random_range(1..4).min(hw);
        let g = ConvGeometry::square(c, rng.random_range(1..5), k, rng.random_range(1..3), rng.random_range(0..2));
        (vec![c, hw, hw], vec![LayerSpec::Conv2d(g)])
    };
    let mut net = Network::<f32>::new(&shape, layers, seed).unwrap();
    let n = net.weight_count(0);
    let keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let wshape = net.params(0).weights.shape().to_vec();
    net.set_weight_mask(0, WeightMask::from_keep(&wshape, keep).unwrap()).unwrap();
    let batch = rng.random_range(1..4);
    let per: usize = shape.iter().product();
    let data = (0..batch * per)
        .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect();
    let mut s = vec![batch];
    s.extend(&shape);
    (net, Tensor::from_vec(&s, data).unwrap())
}

/// Top-k by full sort on (magnitude desc, index asc).
pub fn full_sort_top_k(acts: &[f32], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..acts.len()).collect();
    idx.sort_by(|&a, &b| acts[b].abs().partial_cmp(&acts[a].abs()).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; acts.len()];
    for &i in idx.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Four Gaussian-ish blobs in 16 dimensions, laid out as `[1, 4, 4]` images.
pub fn blobs(n: usize, seed: u64) -> jointprune::Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..4)
        .map(|c| (0..16).map(|d| if d % 4 == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut data = Vec::with_capacity(n * 16);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..4);
        labels.push(c);
        data.extend(centers[c].iter().map(|&m| m + rng.random_range(-0.4f32..0.4)));
    }
    let images = Tensor::from_vec(&[n, 1, 4, 4], data).unwrap();
    jointprune::Dataset::new(images, labels, jointprune::data::Role::Train).unwrap()
}

pub fn small_mlp(seed: u64) -> Network<f32> {
    Network::new(
        &[1, 4, 4],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Fc { inputs: 16, outputs: 32 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Fc { inputs: 32, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Fc { inputs: 16, outputs: 4 },
        ],
        seed,
    )
    .unwrap()
}
