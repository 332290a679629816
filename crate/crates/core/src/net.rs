//! Sequential networks with static weight masks and dynamic activation masks.
//!
//! Weight layers (fc, conv2d) are numbered from 0 in network order. The
//! activation tensor leaving weight layer `j` (after its nonlinearity and any
//! pooling/flatten, before dropout) is the *mask site* of layer `j`; a winner
//! rate for `j` masks that tensor per sample. Gradients flowing back through a
//! site are multiplied by the same mask.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::layer::LayerSpec;
use crate::sparsity::{self, SelectionMode, WeightMask, WinnerRateConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    mask: WeightMask,
}

impl<T: Scalar> LayerParams<T> {
    /// Parameters with every weight kept.
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Self {
        let mask = WeightMask::ones(weights.shape());
        LayerParams { weights, bias, mask }
    }

    pub fn with_mask(weights: Tensor<T>, bias: Tensor<T>, mask: WeightMask) -> Self {
        LayerParams { weights, bias, mask }
    }

    pub fn mask(&self) -> &WeightMask {
        &self.mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; its masks are drawn from `seed`.
    Train { seed: u64 },
    Eval,
}

/// Which activation masks a forward pass applies.
#[derive(Clone, Copy, Debug)]
pub enum Masking<'a> {
    Off,
    Winners(&'a WinnerRateConfig),
    /// Fixed magnitude thresholds per weight layer, `|a| > θ` survives.
    Static(&'a BTreeMap<usize, f64>),
}

impl<'a> Masking<'a> {
    pub fn from_rates(rates: Option<&'a WinnerRateConfig>) -> Self {
        rates.map_or(Masking::Off, Masking::Winners)
    }
}

/// Everything a forward pass produced, kept for backward and for measurement.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    batch: usize,
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    pre_mask: Vec<Option<Tensor<T>>>,
    act_masks: Vec<Option<Vec<bool>>>,
    cols: Vec<Option<Vec<T>>>,
    argmax: Vec<Option<Vec<u32>>>,
    dropout: Vec<Option<Vec<T>>>,
    train: bool,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().unwrap()
    }

    /// Output of layer `i` (post-mask at mask sites).
    pub fn output(&self, i: usize) -> &Tensor<T> {
        &self.outputs[i]
    }

    /// Input of layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor<T> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    /// Unmasked output of layer `i` when it is an active mask site.
    pub fn pre_mask(&self, i: usize) -> Option<&Tensor<T>> {
        self.pre_mask[i].as_ref()
    }

    /// Activation mask applied after layer `i`, flattened over the batch.
    pub fn activation_mask(&self, i: usize) -> Option<&[bool]> {
        self.act_masks[i].as_deref()
    }

    /// Argmax of the logits per sample (ties to the lowest class).
    pub fn predictions(&self) -> Vec<usize> {
        let logits = self.logits();
        (0..self.batch)
            .map(|n| {
                let row = logits.sample(n);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub l1: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.l1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams<T>>>,
    weight_layers: Vec<usize>,
    mask_sites: Vec<Option<usize>>,
    skip_sources: Vec<Option<usize>>,
    winner_rates: Option<WinnerRateConfig>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with fan-in scaled uniform (He) weights and zero biases.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|l| {
                l.weight_shape().map(|shape| {
                    let fan_in: usize = if shape.len() == 2 { shape[0] } else { shape[1..].iter().product() };
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let w = (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect();
                    LayerParams {
                        weights: Tensor::from_vec(&shape, w).unwrap(),
                        bias: Tensor::zeros(&[l.bias_len().unwrap()]),
                        mask: WeightMask::ones(&shape),
                    }
                })
            })
            .collect();
        Self::from_parts(input_shape, layers, params)
    }

    /// Assembles a network from explicit parameters (one entry per layer,
    /// `Some` exactly for weight layers). Pruned weights are zeroed.
    pub fn from_parts(input_shape: &[usize], layers: Vec<LayerSpec>, params: Vec<Option<LayerParams<T>>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        if params.len() != layers.len() {
            return Err(Error::invalid("one parameter slot per layer is required"));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        let mut skip_sources = vec![None; layers.len()];
        let mut open_skips: Vec<usize> = Vec::new();
        let mut current = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            current = layer.output_shape(i, &current)?;
            match layer {
                LayerSpec::SkipSave => open_skips.push(i),
                LayerSpec::SkipAdd => {
                    let src = open_skips
                        .pop()
                        .ok_or_else(|| Error::invalid(format!("layer {i}: skip_add without skip_save")))?;
                    if shapes[src] != current {
                        return Err(Error::LayerShape {
                            layer: i,
                            kind: "skip_add",
                            expected: shapes[src].clone(),
                            actual: current,
                        });
                    }
                    skip_sources[i] = Some(src);
                }
                _ => {}
            }
            shapes.push(current.clone());
        }
        if !open_skips.is_empty() {
            return Err(Error::invalid("unmatched skip_save"));
        }
        let weight_layers: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].has_weights()).collect();
        if weight_layers.is_empty() {
            return Err(Error::invalid("network has no weight layers"));
        }
        let mut mask_sites = Vec::with_capacity(weight_layers.len());
        for (j, &i) in weight_layers.iter().enumerate() {
            if j + 1 == weight_layers.len() {
                mask_sites.push(None);
                continue;
            }
            let mut k = i;
            while k + 1 < layers.len() && layers[k + 1].passes_mask_through() {
                k += 1;
            }
            mask_sites.push(Some(k));
        }
        let mut params = params;
        for (i, (layer, p)) in layers.iter().zip(params.iter_mut()).enumerate() {
            match (layer.weight_shape(), p) {
                (Some(shape), Some(p)) => {
                    if p.weights.shape() != shape.as_slice()
                        || p.mask.shape() != shape.as_slice()
                        || p.bias.shape() != [layer.bias_len().unwrap()]
                    {
                        return Err(Error::LayerShape {
                            layer: i,
                            kind: layer.kind(),
                            expected: shape,
                            actual: p.weights.shape().to_vec(),
                        });
                    }
                    zero_pruned(&mut p.weights, &p.mask);
                }
                (None, None) => {}
                _ => return Err(Error::invalid(format!("layer {i}: parameter slot does not match layer kind"))),
            }
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            weight_layers,
            mask_sites,
            skip_sources,
            winner_rates: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample output shape of layer `i`.
    pub fn layer_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    /// Layer indices of the fc/conv layers, in order.
    pub fn weight_layers(&self) -> &[usize] {
        &self.weight_layers
    }

    pub fn num_weight_layers(&self) -> usize {
        self.weight_layers.len()
    }

    /// Layer index whose output is masked for weight layer `j` (`None` for the output layer).
    pub fn mask_site(&self, j: usize) -> Option<usize> {
        self.mask_sites[j]
    }

    /// Per-sample activation count at each weight layer's mask site (logits for the last).
    pub fn site_sizes(&self) -> Vec<usize> {
        (0..self.num_weight_layers())
            .map(|j| {
                let i = self.mask_sites[j].unwrap_or(self.layers.len() - 1);
                self.shapes[i].iter().product()
            })
            .collect()
    }

    pub fn params(&self, j: usize) -> &LayerParams<T> {
        self.params[self.weight_layers[j]].as_ref().unwrap()
    }

    /// Mutable access to weights and bias. Callers that change pruned weights
    /// must restore them via [`Network::set_weight_mask`].
    pub fn params_mut(&mut self, j: usize) -> &mut LayerParams<T> {
        let i = self.weight_layers[j];
        self.params[i].as_mut().unwrap()
    }

    pub fn weight_mask(&self, j: usize) -> &WeightMask {
        &self.params(j).mask
    }

    /// Installs a weight mask and zeroes every pruned weight.
    pub fn set_weight_mask(&mut self, j: usize, mask: WeightMask) -> Result<()> {
        let p = self.params_mut(j);
        if mask.shape() != p.weights.shape() {
            return Err(Error::Shape(format!(
                "weight mask {:?} for weights {:?}",
                mask.shape(),
                p.weights.shape()
            )));
        }
        p.mask = mask;
        zero_pruned(&mut p.weights, &p.mask);
        Ok(())
    }

    pub fn weight_count(&self, j: usize) -> usize {
        self.params(j).weights.len()
    }

    pub fn weight_density(&self, j: usize) -> f64 {
        self.params(j).mask.density()
    }

    /// Kept weights over all weights, biases excluded.
    pub fn total_weight_density(&self) -> f64 {
        let (kept, total) = (0..self.num_weight_layers()).fold((0usize, 0usize), |(k, t), j| {
            (k + self.params(j).mask.count_kept(), t + self.weight_count(j))
        });
        kept as f64 / total as f64
    }

    pub fn winner_rates(&self) -> Option<&WinnerRateConfig> {
        self.winner_rates.as_ref()
    }

    pub fn set_winner_rates(&mut self, rates: Option<WinnerRateConfig>) -> Result<()> {
        if let Some(r) = &rates {
            r.validate(&self.site_sizes())?;
        }
        self.winner_rates = rates;
        Ok(())
    }

    pub fn set_dropout_rate(&mut self, layer: usize, rate: f64) -> Result<()> {
        match self.layers.get_mut(layer) {
            Some(LayerSpec::Dropout { rate: r }) if (0.0..1.0).contains(&rate) => {
                *r = rate;
                Ok(())
            }
            _ => Err(Error::invalid(format!("layer {layer} is not a dropout layer or rate {rate} is invalid"))),
        }
    }

    /// Weight layer whose mask site directly precedes dropout layer `layer`, if any.
    pub fn dropout_owner(&self, layer: usize) -> Option<usize> {
        (0..self.num_weight_layers()).find(|&j| self.mask_sites[j].map(|s| s + 1) == Some(layer))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: p.weights.cast(),
                        bias: p.bias.cast(),
                        mask: p.mask.clone(),
                    })
                })
                .collect(),
            weight_layers: self.weight_layers.clone(),
            mask_sites: self.mask_sites.clone(),
            skip_sources: self.skip_sources.clone(),
            winner_rates: self.winner_rates.clone(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut().flatten() {
            p.weights.zero_grad();
            p.bias.zero_grad();
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::LayerShape {
                layer: 0,
                kind: self.layers[0].kind(),
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Runs the network on a batch `[N, ...input_shape]`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode, masking: Masking<'_>) -> Result<ForwardPass<T>> {
        let batch = self.check_input(input)?;
        let train = matches!(mode, Mode::Train { .. });
        if let Masking::Winners(cfg) = masking {
            cfg.validate(&self.site_sizes())?;
        }
        let nl = self.layers.len();
        let mut pass = ForwardPass {
            batch,
            input: input.clone(),
            outputs: Vec::with_capacity(nl),
            pre_mask: vec![None; nl],
            act_masks: vec![None; nl],
            cols: vec![None; nl],
            argmax: vec![None; nl],
            dropout: vec![None; nl],
            train,
        };
        let site_of: BTreeMap<usize, usize> = self
            .mask_sites
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.map(|s| (s, j)))
            .collect();

        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { &pass.input } else { &pass.outputs[i - 1] };
            let in_shape: &[usize] = if i == 0 { &self.input_shape } else { &self.shapes[i - 1] };
            let out_shape = &self.shapes[i];
            let in_per: usize = in_shape.iter().product();
            let out_per: usize = out_shape.iter().product();
            let mut y = vec![T::ZERO; batch * out_per];
            match layer {
                LayerSpec::Fc { inputs, outputs } => {
                    let p = self.params[i].as_ref().unwrap();
                    for row in y.chunks_exact_mut(*outputs) {
                        row.copy_from_slice(p.bias.data());
                    }
                    T::gemm(
                        batch,
                        *inputs,
                        *outputs,
                        T::ONE,
                        x.data(),
                        (*inputs as isize, 1),
                        p.weights.data(),
                        (*outputs as isize, 1),
                        T::ONE,
                        &mut y,
                        (*outputs as isize, 1),
                    );
                }
                LayerSpec::Conv2d(g) => {
                    let p = self.params[i].as_ref().unwrap();
                    let (h, w) = (in_shape[1], in_shape[2]);
                    let (oh, ow) = (out_shape[1], out_shape[2]);
                    let patch = g.patch_len() * oh * ow;
                    let mut cols = vec![T::ZERO; if train { batch * patch } else { patch }];
                    for n in 0..batch {
                        let c = if train { &mut cols[n * patch..(n + 1) * patch] } else { &mut cols[..] };
                        kernels::im2col(x.sample(n), h, w, g, oh, ow, c);
                        kernels::conv_from_cols(
                            p.weights.data(),
                            p.bias.data(),
                            c,
                            g,
                            oh * ow,
                            &mut y[n * out_per..(n + 1) * out_per],
                        );
                    }
                    if train {
                        pass.cols[i] = Some(cols);
                    }
                }
                LayerSpec::MaxPool(g) => {
                    let mut am = if train { vec![0u32; batch * out_per] } else { Vec::new() };
                    for n in 0..batch {
                        kernels::maxpool_forward(
                            x.sample(n),
                            in_shape[0],
                            in_shape[1],
                            in_shape[2],
                            g,
                            out_shape[1],
                            out_shape[2],
                            &mut y[n * out_per..(n + 1) * out_per],
                            if train { Some(&mut am[n * out_per..(n + 1) * out_per]) } else { None },
                        );
                    }
                    if train {
                        pass.argmax[i] = Some(am);
                    }
                }
                LayerSpec::AvgPool(g) => {
                    for n in 0..batch {
                        kernels::avgpool_forward(
                            x.sample(n),
                            in_shape[0],
                            in_shape[1],
                            in_shape[2],
                            g,
                            out_shape[1],
                            out_shape[2],
                            &mut y[n * out_per..(n + 1) * out_per],
                        );
                    }
                }
                LayerSpec::Relu => {
                    for (o, &v) in y.iter_mut().zip(x.data()) {
                        *o = if v > T::ZERO { v } else { T::ZERO };
                    }
                }
                LayerSpec::LeakyRelu { slope } => {
                    let s = T::of(*slope);
                    for (o, &v) in y.iter_mut().zip(x.data()) {
                        *o = if v > T::ZERO { v } else { s * v };
                    }
                }
                LayerSpec::Dropout { rate } => {
                    y.copy_from_slice(x.data());
                    if let (Mode::Train { seed }, true) = (mode, *rate > 0.0) {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        let scale = T::of(1.0 / (1.0 - rate));
                        let factors: Vec<T> = (0..y.len())
                            .map(|_| if rng.random::<f64>() < *rate { T::ZERO } else { scale })
                            .collect();
                        for (o, &f) in y.iter_mut().zip(&factors) {
                            *o *= f;
                        }
                        pass.dropout[i] = Some(factors);
                    }
                }
                LayerSpec::Flatten | LayerSpec::SkipSave => y.copy_from_slice(x.data()),
                LayerSpec::SkipAdd => {
                    let src = &pass.outputs[self.skip_sources[i].unwrap()];
                    for ((o, &a), &b) in y.iter_mut().zip(x.data()).zip(src.data()) {
                        *o = a + b;
                    }
                }
            }
            debug_assert_eq!(in_per * batch, x.len());

            if let Some(&j) = site_of.get(&i) {
                if let Some(keep) = self.site_mask(j, &y, out_per, batch, masking)? {
                    pass.pre_mask[i] = Some(Tensor::from_vec(&batched(batch, out_shape), y.clone())?);
                    for (v, &k) in y.iter_mut().zip(&keep) {
                        if !k {
                            *v = T::ZERO;
                        }
                    }
                    pass.act_masks[i] = Some(keep);
                }
            }
            pass.outputs.push(Tensor::from_vec(&batched(batch, out_shape), y)?);
        }
        Ok(pass)
    }

    fn site_mask(&self, j: usize, y: &[T], per: usize, batch: usize, masking: Masking<'_>) -> Result<Option<Vec<bool>>> {
        match masking {
            Masking::Off => Ok(None),
            Masking::Winners(cfg) => {
                let rate = cfg.rate(j);
                if rate >= 1.0 {
                    return Ok(None);
                }
                let mut keep = vec![false; y.len()];
                match cfg.selection_mode {
                    SelectionMode::ExactTopk => {
                        let k = sparsity::winner_count(rate, per);
                        let mut scratch = Vec::with_capacity(per);
                        for n in 0..batch {
                            sparsity::mark_top_k(
                                &y[n * per..(n + 1) * per],
                                k,
                                &mut scratch,
                                &mut keep[n * per..(n + 1) * per],
                            );
                        }
                    }
                    SelectionMode::PredictedThreshold => {
                        let mut scratch = Vec::new();
                        let seed = cfg.offset_seed ^ (j as u64).wrapping_mul(0xA076_1D64_78BD_642F);
                        for n in 0..batch {
                            let sample = &y[n * per..(n + 1) * per];
                            let theta = sparsity::predict_threshold_with(sample, rate, cfg.downsample_rate, seed, &mut scratch)?;
                            for (kk, v) in keep[n * per..(n + 1) * per].iter_mut().zip(sample) {
                                *kk = v.abs().to_f64() > theta;
                            }
                        }
                    }
                }
                Ok(Some(keep))
            }
            Masking::Static(thresholds) => Ok(thresholds
                .get(&j)
                .map(|&theta| y.iter().map(|v| v.abs().to_f64() > theta).collect())),
        }
    }

    /// Mean softmax cross-entropy plus `l1_strength * Σ|w|` over kept weights.
    pub fn loss(&self, pass: &ForwardPass<T>, labels: &[usize], l1_strength: f64) -> Result<LossBreakdown> {
        let cross_entropy = softmax_cross_entropy(pass.logits(), labels, None)?;
        Ok(LossBreakdown {
            cross_entropy,
            l1: l1_strength * self.l1_norm(),
        })
    }

    /// Σ|w| over kept weights.
    pub fn l1_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(|p| {
                p.weights
                    .data()
                    .iter()
                    .zip(p.mask.keep())
                    .filter(|(_, &k)| k)
                    .map(|(w, _)| w.abs().to_f64())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Computes the loss for a train-mode pass and stores parameter gradients
    /// in each parameter tensor's gradient buffer.
    pub fn loss_and_backward(&mut self, pass: &ForwardPass<T>, labels: &[usize], l1_strength: f64) -> Result<LossBreakdown> {
        let mut grad = Tensor::zeros(pass.logits().shape());
        let cross_entropy = softmax_cross_entropy(pass.logits(), labels, Some(grad.data_mut()))?;
        self.backward(pass, &grad, false)?;
        let a = T::of(l1_strength);
        let mut l1 = 0.0;
        for p in self.params.iter_mut().flatten() {
            let keep = p.mask.keep().to_vec();
            let (w, g) = p.weights.data_and_grad_mut();
            let g = g.unwrap();
            for ((&wi, gi), &k) in w.iter().zip(g.iter_mut()).zip(&keep) {
                if k {
                    l1 += wi.abs().to_f64();
                    *gi += a * wi.signum();
                }
            }
        }
        Ok(LossBreakdown {
            cross_entropy,
            l1: l1_strength * l1,
        })
    }

    /// Back-propagates `grad_output` (gradient w.r.t. the logits) through a
    /// train-mode pass. Parameter gradients overwrite the gradient buffers;
    /// gradients of pruned weights are zero. Returns the input gradient when
    /// `want_input_grad` is set.
    pub fn backward(&mut self, pass: &ForwardPass<T>, grad_output: &Tensor<T>, want_input_grad: bool) -> Result<Option<Tensor<T>>> {
        if !pass.train {
            return Err(Error::invalid("backward needs a train-mode forward pass"));
        }
        if grad_output.shape() != pass.logits().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} for logits {:?}",
                grad_output.shape(),
                pass.logits().shape()
            )));
        }
        self.zero_grads();
        let batch = pass.batch;
        let first_weight = self.weight_layers[0];
        let mut dy: Vec<T> = grad_output.data().to_vec();
        let mut skip_grads: Vec<Vec<T>> = Vec::new();

        for i in (0..self.layers.len()).rev() {
            if let Some(mask) = &pass.act_masks[i] {
                for (g, &k) in dy.iter_mut().zip(mask) {
                    if !k {
                        *g = T::ZERO;
                    }
                }
            }
            let need_dx = want_input_grad || i > first_weight;
            let x = pass.layer_input(i);
            let in_shape: Vec<usize> = if i == 0 { self.input_shape.clone() } else { self.shapes[i - 1].clone() };
            let out_shape = &self.shapes[i];
            let in_per: usize = in_shape.iter().product();
            let out_per: usize = out_shape.iter().product();
            let layer = self.layers[i].clone();
            let mut dx = if need_dx { vec![T::ZERO; batch * in_per] } else { Vec::new() };
            match layer {
                LayerSpec::Fc { inputs, outputs } => {
                    let p = self.params[i].as_mut().unwrap();
                    let (w, gw) = p.weights.data_and_grad_mut();
                    let w: &[T] = w;
                    let gw = gw.unwrap();
                    T::gemm(
                        inputs,
                        batch,
                        outputs,
                        T::ONE,
                        x.data(),
                        (1, inputs as isize),
                        &dy,
                        (outputs as isize, 1),
                        T::ZERO,
                        gw,
                        (outputs as isize, 1),
                    );
                    let gb = p.bias.grad_mut().unwrap();
                    for row in dy.chunks_exact(outputs) {
                        for (b, &g) in gb.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    if need_dx {
                        T::gemm(
                            batch,
                            outputs,
                            inputs,
                            T::ONE,
                            &dy,
                            (outputs as isize, 1),
                            w,
                            (1, outputs as isize),
                            T::ZERO,
                            &mut dx,
                            (inputs as isize, 1),
                        );
                    }
                }
                LayerSpec::Conv2d(g) => {
                    let p = self.params[i].as_mut().unwrap();
                    let cols = pass.cols[i].as_ref().ok_or_else(|| Error::invalid("missing conv columns"))?;
                    let k = g.patch_len();
                    let o = g.out_channels;
                    let (oh, ow) = (out_shape[1], out_shape[2]);
                    let pp = oh * ow;
                    let patch = k * pp;
                    let w = p.weights.data().to_vec();
                    let mut dcols = if need_dx { vec![T::ZERO; patch] } else { Vec::new() };
                    for n in 0..batch {
                        let dyn_ = &dy[n * out_per..(n + 1) * out_per];
                        let cn = &cols[n * patch..(n + 1) * patch];
                        let gw = p.weights.grad_mut().unwrap();
                        T::gemm(o, pp, k, T::ONE, dyn_, (pp as isize, 1), cn, (1, pp as isize), T::ONE, gw, (k as isize, 1));
                        let gb = p.bias.grad_mut().unwrap();
                        for (oc, row) in dyn_.chunks_exact(pp).enumerate() {
                            let mut s = T::ZERO;
                            for &v in row {
                                s += v;
                            }
                            gb[oc] += s;
                        }
                        if need_dx {
                            T::gemm(k, o, pp, T::ONE, &w, (1, k as isize), dyn_, (pp as isize, 1), T::ZERO, &mut dcols, (pp as isize, 1));
                            kernels::col2im(&dcols, in_shape[1], in_shape[2], &g, oh, ow, &mut dx[n * in_per..(n + 1) * in_per]);
                        }
                    }
                }
                LayerSpec::MaxPool(_) => {
                    if need_dx {
                        let am = pass.argmax[i].as_ref().ok_or_else(|| Error::invalid("missing pool indices"))?;
                        for n in 0..batch {
                            let base = n * in_per;
                            for o in 0..out_per {
                                dx[base + am[n * out_per + o] as usize] += dy[n * out_per + o];
                            }
                        }
                    }
                }
                LayerSpec::AvgPool(g) => {
                    if need_dx {
                        for n in 0..batch {
                            kernels::avgpool_backward(
                                &dy[n * out_per..(n + 1) * out_per],
                                in_shape[0],
                                in_shape[1],
                                in_shape[2],
                                &g,
                                out_shape[1],
                                out_shape[2],
                                &mut dx[n * in_per..(n + 1) * in_per],
                            );
                        }
                    }
                }
                LayerSpec::Relu => {
                    if need_dx {
                        for ((d, &g), &v) in dx.iter_mut().zip(&dy).zip(x.data()) {
                            *d = if v > T::ZERO { g } else { T::ZERO };
                        }
                    }
                }
                LayerSpec::LeakyRelu { slope } => {
                    if need_dx {
                        let s = T::of(slope);
                        for ((d, &g), &v) in dx.iter_mut().zip(&dy).zip(x.data()) {
                            *d = if v > T::ZERO { g } else { s * g };
                        }
                    }
                }
                LayerSpec::Dropout { .. } => {
                    if need_dx {
                        match &pass.dropout[i] {
                            Some(f) => {
                                for ((d, &g), &s) in dx.iter_mut().zip(&dy).zip(f) {
                                    *d = g * s;
                                }
                            }
                            None => dx.copy_from_slice(&dy),
                        }
                    }
                }
                LayerSpec::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&dy);
                    }
                }
                LayerSpec::SkipAdd => {
                    skip_grads.push(dy.clone());
                    if need_dx {
                        dx.copy_from_slice(&dy);
                    }
                }
                LayerSpec::SkipSave => {
                    let extra = skip_grads.pop().ok_or_else(|| Error::invalid("unbalanced skip gradient"))?;
                    if need_dx {
                        for ((d, &g), &e) in dx.iter_mut().zip(&dy).zip(&extra) {
                            *d = g + e;
                        }
                    }
                }
            }
            dy = dx;
        }

        for p in self.params.iter_mut().flatten() {
            let keep = p.mask.keep().to_vec();
            let g = p.weights.grad_mut().unwrap();
            for (gi, &k) in g.iter_mut().zip(&keep) {
                if !k {
                    *gi = T::ZERO;
                }
            }
        }
        if want_input_grad {
            Ok(Some(Tensor::from_vec(pass.input.shape(), dy)?))
        } else {
            Ok(None)
        }
    }

    /// Class predictions for a batch.
    pub fn predict(&self, input: &Tensor<T>, masking: Masking<'_>) -> Result<Vec<usize>> {
        Ok(self.forward(input, Mode::Eval, masking)?.predictions())
    }
}

fn batched(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

fn zero_pruned<T: Scalar>(weights: &mut Tensor<T>, mask: &WeightMask) {
    for (w, &k) in weights.data_mut().iter_mut().zip(mask.keep()) {
        if !k {
            *w = T::ZERO;
        }
    }
}

/// Mean cross-entropy of softmax(logits) against `labels`; optionally writes
/// the gradient w.r.t. the logits into `grad`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], mut grad: Option<&mut [T]>) -> Result<f64> {
    let batch = logits.shape()[0];
    let classes = logits.len() / batch;
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut total = 0.0;
    let inv_n = 1.0 / batch as f64;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.sample(n);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let sum: f64 = row.iter().map(|v| (v.to_f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label].to_f64();
        if let Some(g) = grad.as_deref_mut() {
            for (c, v) in row.iter().enumerate() {
                let p = (v.to_f64() - log_z).exp();
                let target = if c == label { 1.0 } else { 0.0 };
                g[n * classes + c] = T::of((p - target) * inv_n);
            }
        }
    }
    Ok(total * inv_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{ConvGeometry, PoolGeometry};

    fn identity_fc(n: usize) -> Network<f64> {
        let layers = vec![LayerSpec::Fc { inputs: n, outputs: n }];
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let params = vec![Some(LayerParams {
            weights: Tensor::from_vec(&[n, n], w).unwrap(),
            bias: Tensor::zeros(&[n]),
            mask: WeightMask::ones(&[n, n]),
        })];
        Network::from_parts(&[n], layers, params).unwrap()
    }

    #[test]
    fn identity_fc_passes_input_through() {
        let net = identity_fc(4);
        let x = Tensor::from_vec(&[1, 4], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let pass = net.forward(&x, Mode::Eval, Masking::Off).unwrap();
        assert_eq!(pass.logits().data(), x.data());
    }

    #[test]
    fn leaky_relu_definition() {
        let layers = vec![
            LayerSpec::Fc { inputs: 2, outputs: 2 },
            LayerSpec::LeakyRelu { slope: 0.1 },
            LayerSpec::Fc { inputs: 2, outputs: 1 },
        ];
        let mut net = Network::<f64>::new(&[2], layers, 0).unwrap();
        let p = net.params_mut(0);
        p.weights.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap();
        let pass = net.forward(&x, Mode::Eval, Masking::Off).unwrap();
        let y = pass.output(1).data();
        assert!((y[0] + 0.1).abs() < 1e-15 && y[1] == 2.0);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let ce = softmax_cross_entropy(&logits, &[0, 5, 9], None).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 10, 1], None),
            Err(Error::LabelOutOfRange { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn wrong_input_shape_is_reported() {
        let net = identity_fc(4);
        let x = Tensor::<f64>::zeros(&[2, 5]);
        assert!(matches!(net.forward(&x, Mode::Eval, Masking::Off), Err(Error::LayerShape { layer: 0, .. })));
    }

    #[test]
    fn mask_sites_skip_nonlinearity_pool_and_flatten() {
        let layers = vec![
            LayerSpec::Conv2d(ConvGeometry::square(1, 2, 3, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::MaxPool(PoolGeometry::new(2, 2)),
            LayerSpec::Flatten,
            LayerSpec::Fc { inputs: 8, outputs: 4 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Fc { inputs: 4, outputs: 3 },
        ];
        let net = Network::<f32>::new(&[1, 4, 4], layers, 1).unwrap();
        assert_eq!(net.weight_layers(), &[0, 4, 7]);
        assert_eq!(net.mask_site(0), Some(3));
        assert_eq!(net.mask_site(1), Some(5));
        assert_eq!(net.mask_site(2), None);
        assert_eq!(net.site_sizes(), vec![8, 4, 3]);
        assert_eq!(net.dropout_owner(6), Some(1));
    }

    #[test]
    fn output_layer_cannot_be_masked() {
        let net = identity_fc(3);
        let cfg = WinnerRateConfig::single(0, 0.5).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 3]);
        assert!(net.forward(&x, Mode::Eval, Masking::Winners(&cfg)).is_err());
    }

    #[test]
    fn masked_weights_get_zero_gradient_and_stay_zero() {
        let layers = vec![
            LayerSpec::Fc { inputs: 3, outputs: 4 },
            LayerSpec::Relu,
            LayerSpec::Fc { inputs: 4, outputs: 2 },
        ];
        let mut net = Network::<f64>::new(&[3], layers, 5).unwrap();
        let keep = vec![true, false, true, true, false, true, true, true, true, true, false, true];
        net.set_weight_mask(0, WeightMask::from_keep(&[3, 4], keep.clone()).unwrap()).unwrap();
        for (w, &k) in net.params(0).weights.data().iter().zip(&keep) {
            assert!(k || *w == 0.0);
        }
        let x = Tensor::from_vec(&[2, 3], vec![0.5, -0.2, 0.9, 0.1, 0.3, -0.7]).unwrap();
        let pass = net.forward(&x, Mode::Train { seed: 0 }, Masking::Off).unwrap();
        net.loss_and_backward(&pass, &[1, 0], 0.01).unwrap();
        for (g, &k) in net.params(0).weights.grad().unwrap().iter().zip(&keep) {
            if !k {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn activation_mask_applied_and_recorded() {
        let layers = vec![
            LayerSpec::Fc { inputs: 4, outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Fc { inputs: 6, outputs: 2 },
        ];
        let net = Network::<f64>::new(&[4], layers, 9).unwrap();
        let cfg = WinnerRateConfig::single(0, 0.34).unwrap();
        let x = Tensor::from_vec(&[2, 4], vec![0.3, -0.1, 0.8, 0.2, -0.5, 0.4, 0.1, 0.9]).unwrap();
        let pass = net.forward(&x, Mode::Eval, Masking::Winners(&cfg)).unwrap();
        let mask = pass.activation_mask(1).unwrap();
        for n in 0..2 {
            assert_eq!(mask[n * 6..(n + 1) * 6].iter().filter(|&&k| k).count(), 3);
        }
        let out = pass.output(1).data();
        let pre = pass.pre_mask(1).unwrap().data();
        for ((&o, &p), &k) in out.iter().zip(pre).zip(mask) {
            assert_eq!(o, if k { p } else { 0.0 });
        }
    }
}
