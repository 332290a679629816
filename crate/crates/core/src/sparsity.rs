//! Dynamic activation winner selection and static magnitude-based weight masks.
//!
//! Activations are ranked by magnitude so that large negative responses of a
//! leaky ReLU survive. Exact selection keeps `ceil(rate * N)` elements per
//! sample; ties at the cut magnitude go to the lowest flat index. The predicted
//! variant estimates a magnitude threshold from a strided subsample and keeps
//! everything strictly above it, so its winner count is only approximate.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    ExactTopk,
    PredictedThreshold,
}

/// Per-layer winner rates, keyed by weight-layer index (0 = first fc/conv).
///
/// The rate of weight layer `j` applies to the activation tensor that leaves
/// layer `j` and feeds layer `j + 1`. The last weight layer produces the
/// logits and is never masked.
#[derive(Clone, Debug, PartialEq)]
pub struct WinnerRateConfig {
    per_layer_rate: BTreeMap<usize, f64>,
    pub downsample_rate: f64,
    pub selection_mode: SelectionMode,
    /// Seeds the offset of the strided subsample in predicted mode.
    pub offset_seed: u64,
}

impl WinnerRateConfig {
    pub fn new(per_layer_rate: BTreeMap<usize, f64>) -> Result<Self> {
        for (&layer, &rate) in &per_layer_rate {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::invalid(format!(
                    "winner rate {rate} for layer {layer} is outside (0, 1]"
                )));
            }
        }
        Ok(WinnerRateConfig {
            per_layer_rate,
            downsample_rate: 1.0,
            selection_mode: SelectionMode::ExactTopk,
            offset_seed: 0,
        })
    }

    /// Rates listed in weight-layer order; entries equal to 1.0 are dropped.
    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .enumerate()
                .filter(|(_, &r)| r != 1.0)
                .map(|(i, &r)| (i, r))
                .collect(),
        )
    }

    /// Masks nothing.
    pub fn dense() -> Self {
        Self::new(BTreeMap::new()).unwrap()
    }

    pub fn single(layer: usize, rate: f64) -> Result<Self> {
        Self::new([(layer, rate)].into_iter().collect())
    }

    pub fn with_prediction(mut self, downsample_rate: f64) -> Result<Self> {
        if !(downsample_rate > 0.0 && downsample_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "down-sampling rate {downsample_rate} is outside (0, 1]"
            )));
        }
        self.downsample_rate = downsample_rate;
        self.selection_mode = SelectionMode::PredictedThreshold;
        Ok(self)
    }

    pub fn rate(&self, layer: usize) -> f64 {
        self.per_layer_rate.get(&layer).copied().unwrap_or(1.0)
    }

    pub fn rates(&self) -> &BTreeMap<usize, f64> {
        &self.per_layer_rate
    }

    /// Rates for `count` weight layers, 1.0 where unset.
    pub fn rate_list(&self, count: usize) -> Vec<f64> {
        (0..count).map(|j| self.rate(j)).collect()
    }

    pub fn is_dense(&self) -> bool {
        self.per_layer_rate.values().all(|&r| r == 1.0)
    }

    /// Checks the config against a network with the given activation counts per
    /// weight layer (`site_sizes[j]` = per-sample size of the tensor leaving layer `j`).
    pub fn validate(&self, site_sizes: &[usize]) -> Result<()> {
        let last = site_sizes.len().saturating_sub(1);
        for (&layer, &rate) in &self.per_layer_rate {
            if layer >= site_sizes.len() {
                return Err(Error::invalid(format!(
                    "winner rate given for layer {layer}, network has {} weight layers",
                    site_sizes.len()
                )));
            }
            if layer == last && rate != 1.0 {
                return Err(Error::invalid(format!(
                    "output layer {layer} cannot be masked (rate {rate})"
                )));
            }
            if self.selection_mode == SelectionMode::PredictedThreshold
                && rate < 1.0
                && self.downsample_rate * (site_sizes[layer] as f64) < 1.0
            {
                return Err(Error::invalid(format!(
                    "down-sampling rate {} leaves no samples from {} activations of layer {layer}",
                    self.downsample_rate, site_sizes[layer]
                )));
            }
        }
        Ok(())
    }
}

/// Binary activation mask for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationMask {
    pub keep: Vec<bool>,
    pub winner_count: usize,
}

impl ActivationMask {
    pub fn all(n: usize) -> Self {
        ActivationMask {
            keep: vec![true; n],
            winner_count: n,
        }
    }

    pub fn none(n: usize) -> Self {
        ActivationMask {
            keep: vec![false; n],
            winner_count: 0,
        }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        let winner_count = keep.iter().filter(|&&k| k).count();
        ActivationMask { keep, winner_count }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

/// `ceil(rate * n)`, at least one for any positive rate.
pub fn winner_count(rate: f64, n: usize) -> usize {
    let k = (rate * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

#[inline]
fn by_magnitude_then_index<T: Scalar>(acts: &[T]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&i, &j| {
        let (a, b) = (acts[i as usize].abs(), acts[j as usize].abs());
        b.partial_cmp(&a)
            .unwrap_or(Ordering::Equal)
            .then_with(|| i.cmp(&j))
    }
}

/// Marks the `k` largest-magnitude entries of `acts` in `keep` (ties to the
/// lowest index). `scratch` is reused between calls.
pub fn mark_top_k<T: Scalar>(acts: &[T], k: usize, scratch: &mut Vec<u32>, keep: &mut [bool]) {
    let n = acts.len();
    debug_assert_eq!(keep.len(), n);
    if k >= n {
        keep.iter_mut().for_each(|x| *x = true);
        return;
    }
    keep.iter_mut().for_each(|x| *x = false);
    if k == 0 {
        return;
    }
    scratch.clear();
    scratch.extend(0..n as u32);
    scratch.select_nth_unstable_by(k - 1, by_magnitude_then_index(acts));
    for &i in &scratch[..k] {
        keep[i as usize] = true;
    }
}

/// Keeps the `ceil(rate * N)` entries of largest magnitude.
pub fn select_winners_exact<T: Scalar>(acts: &Tensor<T>, rate: f64) -> Result<ActivationMask> {
    select_winners_slice(acts.data(), rate)
}

pub fn select_winners_slice<T: Scalar>(acts: &[T], rate: f64) -> Result<ActivationMask> {
    if acts.is_empty() {
        return Err(Error::Empty("activation tensor"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("winner rate {rate} is outside (0, 1]")));
    }
    let k = winner_count(rate, acts.len());
    let mut keep = vec![false; acts.len()];
    mark_top_k(acts, k, &mut Vec::with_capacity(acts.len()), &mut keep);
    Ok(ActivationMask {
        keep,
        winner_count: k,
    })
}

/// Deterministic strided subsample: every `floor(1/eps)`-th element from a
/// seeded offset, `round(eps * N)` elements at most.
pub fn strided_subsample_indices(n: usize, downsample_rate: f64, offset_seed: u64) -> Vec<usize> {
    let target = (downsample_rate * n as f64).round() as usize;
    let stride = ((1.0 / downsample_rate).floor() as usize).max(1);
    let offset = (splitmix64(offset_seed) % stride as u64) as usize;
    (0..target)
        .map(|j| offset + j * stride)
        .take_while(|&i| i < n)
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Estimates the winner threshold from a down-sampled activation set.
///
/// With `k' = ceil(eps * k)`, returns the `k'`-th largest magnitude of the
/// strided subsample. Masking with the strict `|a| > θ` then keeps everything
/// above that order statistic, so with `eps = 1` the `k`-th winner itself is
/// dropped (distinct magnitudes give `k - 1` survivors).
pub fn predict_threshold<T: Scalar>(
    acts: &[T],
    rate: f64,
    downsample_rate: f64,
    offset_seed: u64,
) -> Result<f64> {
    let mut scratch = Vec::new();
    predict_threshold_with(acts, rate, downsample_rate, offset_seed, &mut scratch)
}

pub(crate) fn predict_threshold_with<T: Scalar>(
    acts: &[T],
    rate: f64,
    downsample_rate: f64,
    offset_seed: u64,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("winner rate {rate} is outside (0, 1]")));
    }
    if !(downsample_rate > 0.0 && downsample_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "down-sampling rate {downsample_rate} is outside (0, 1]"
        )));
    }
    let n = acts.len();
    let target = (downsample_rate * n as f64).round() as usize;
    if target < 1 {
        return Err(Error::invalid(format!(
            "down-sampling {n} activations at rate {downsample_rate} leaves an empty subsample"
        )));
    }
    let stride = ((1.0 / downsample_rate).floor() as usize).max(1);
    let offset = (splitmix64(offset_seed) % stride as u64) as usize;
    scratch.clear();
    scratch.extend(
        (0..target)
            .map(|j| offset + j * stride)
            .take_while(|&i| i < n)
            .map(|i| acts[i].abs().to_f64()),
    );
    let m = scratch.len();
    if m == 0 {
        return Err(Error::invalid("strided subsample is empty"));
    }
    let k = winner_count(rate, n);
    let k_sub = ((downsample_rate * k as f64 - 1e-9).ceil() as usize).clamp(1, m);
    let (_, nth, _) = scratch.select_nth_unstable_by(k_sub - 1, |a, b| b.total_cmp(a));
    Ok(*nth)
}

/// `|a| > threshold`, the comparison used with predicted and static thresholds.
pub fn threshold_mask<T: Scalar>(acts: &[T], threshold: f64) -> ActivationMask {
    ActivationMask::from_keep(acts.iter().map(|a| a.abs().to_f64() > threshold).collect())
}

pub fn apply_activation_mask<T: Scalar>(acts: &Tensor<T>, mask: &ActivationMask) -> Result<Tensor<T>> {
    if acts.len() != mask.len() {
        return Err(Error::Shape(format!(
            "activation tensor has {} elements, mask has {}",
            acts.len(),
            mask.len()
        )));
    }
    let data = acts
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&a, &k)| if k { a } else { T::ZERO })
        .collect();
    Tensor::from_vec(acts.shape(), data)
}

/// Static binary mask over a weight tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightMask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl WeightMask {
    pub fn ones(shape: &[usize]) -> Self {
        WeightMask {
            shape: shape.to_vec(),
            keep: vec![true; shape.iter().product()],
        }
    }

    pub fn from_keep(shape: &[usize], keep: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != keep.len() {
            return Err(Error::Shape(format!(
                "mask shape {shape:?} does not hold {} entries",
                keep.len()
            )));
        }
        Ok(WeightMask {
            shape: shape.to_vec(),
            keep,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn count_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn density(&self) -> f64 {
        self.count_kept() as f64 / self.keep.len() as f64
    }

    pub fn intersect(&self, other: &WeightMask) -> Result<WeightMask> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot intersect masks of shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(WeightMask {
            shape: self.shape.clone(),
            keep: self.keep.iter().zip(&other.keep).map(|(&a, &b)| a && b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &WeightMask) -> bool {
        self.shape == other.shape && self.keep.iter().zip(&other.keep).all(|(&a, &b)| !a || b)
    }
}

/// `mask[j] = |w[j]| > threshold`.
pub fn prune_weights_by_magnitude<T: Scalar>(weights: &Tensor<T>, threshold: f64) -> Result<WeightMask> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("pruning threshold {threshold} is negative")));
    }
    WeightMask::from_keep(
        weights.shape(),
        weights
            .data()
            .iter()
            .map(|w| w.abs().to_f64() > threshold)
            .collect(),
    )
}

/// Magnitude threshold that leaves `round(target * len)` weights above it.
///
/// The threshold is the largest magnitude outside the kept set, so with
/// distinct magnitudes the resulting density is exact up to rounding.
pub fn threshold_for_target_density<T: Scalar>(weights: &[T], target_density: f64) -> Result<f64> {
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::invalid(format!(
            "target density {target_density} is outside (0, 1]"
        )));
    }
    let n = weights.len();
    if n == 0 {
        return Err(Error::Empty("weight tensor"));
    }
    let keep = (target_density * n as f64).round() as usize;
    if keep >= n {
        return Ok(0.0);
    }
    let mut mags: Vec<f64> = weights.iter().map(|w| w.abs().to_f64()).collect();
    let (_, nth, _) = mags.select_nth_unstable_by(keep, |a, b| b.total_cmp(a));
    Ok(*nth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    /// Full sort by (|a| desc, index asc); the first k indices are the winners.
    fn sort_oracle(acts: &[f64], k: usize) -> Vec<bool> {
        let mut idx: Vec<usize> = (0..acts.len()).collect();
        idx.sort_by(|&i, &j| {
            acts[j]
                .abs()
                .partial_cmp(&acts[i].abs())
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut keep = vec![false; acts.len()];
        for &i in &idx[..k] {
            keep[i] = true;
        }
        keep
    }

    #[test]
    fn rate_one_keeps_everything() {
        let m = select_winners_exact(&t(&[0.0, -1.0, 2.0]), 1.0).unwrap();
        assert_eq!(m.keep, vec![true; 3]);
        assert_eq!(m.winner_count, 3);
    }

    #[test]
    fn keeps_largest_magnitudes_including_negatives() {
        let m = select_winners_exact(&t(&[3.0, -5.0, 1.0, 0.5]), 0.5).unwrap();
        assert_eq!(m.keep, vec![true, true, false, false]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = select_winners_exact(&t(&[1.0, -1.0, 1.0, 1.0]), 0.5).unwrap();
        assert_eq!(m.keep, vec![true, true, false, false]);
    }

    #[test]
    fn empty_and_bad_rate_are_errors() {
        assert!(matches!(select_winners_slice::<f32>(&[], 0.5), Err(Error::Empty(_))));
        assert!(select_winners_slice(&[1.0f32], 0.0).is_err());
        assert!(select_winners_slice(&[1.0f32], 1.5).is_err());
    }

    #[test]
    fn winner_count_is_ceiling() {
        assert_eq!(winner_count(0.12, 300), 36);
        assert_eq!(winner_count(0.24, 100), 24);
        assert_eq!(winner_count(0.1, 7), 1);
        assert_eq!(winner_count(0.001, 10), 1);
        assert_eq!(winner_count(1.0, 10), 10);
    }

    #[test]
    fn exact_selection_matches_full_sort_on_random_arrays() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = rng.random_range(1..300);
            // coarse values force plenty of ties
            let acts: Vec<f64> = (0..n)
                .map(|_| {
                    if trial % 2 == 0 {
                        rng.random_range(-4i32..=4) as f64
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            let rate: f64 = rng.random_range(0.01..=1.0);
            let mask = select_winners_slice(&acts, rate).unwrap();
            let k = winner_count(rate, n);
            assert_eq!(mask.keep, sort_oracle(&acts, k), "trial {trial}");
        }
    }

    #[test]
    fn predicted_threshold_without_downsampling_is_exact_kth_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let acts: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rate = rng.random_range(0.05..0.9);
            let theta = predict_threshold(&acts, rate, 1.0, 11).unwrap();
            let k = winner_count(rate, acts.len());
            let mut mags: Vec<f64> = acts.iter().map(|a| a.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(theta, mags[k - 1]);
            // strict comparison: the exact winners minus the k-th one
            let mut exact = select_winners_slice(&acts, rate).unwrap().keep;
            let kth = acts.iter().position(|a| a.abs() == theta).unwrap();
            exact[kth] = false;
            assert_eq!(threshold_mask(&acts, theta).keep, exact);
        }
    }

    #[test]
    fn constant_tensor_masks_to_empty() {
        let acts = vec![0.5f32; 100];
        let theta = predict_threshold(&acts, 0.3, 0.5, 0).unwrap();
        assert_eq!(theta, 0.5);
        assert_eq!(threshold_mask(&acts, theta).winner_count, 0);
    }

    #[test]
    fn predicted_threshold_rejects_empty_subsample() {
        let acts = vec![1.0f32; 4];
        assert!(predict_threshold(&acts, 0.5, 0.1, 0).is_err());
    }

    #[test]
    fn predicted_winner_count_is_close_on_uniform_data() {
        // Monte-Carlo against exact k = 1000 for N = 10^4, rate 0.1, eps 0.1.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut within = 0;
        for trial in 0..100 {
            let acts: Vec<f32> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
            let theta = predict_threshold(&acts, 0.1, 0.1, trial).unwrap();
            let count = threshold_mask(&acts, theta).winner_count as f64;
            if (count - 1000.0).abs() <= 200.0 {
                within += 1;
            }
        }
        assert!(within >= 95, "{within}/100 trials within 20%");
    }

    #[test]
    fn strided_subsample_has_expected_size() {
        let idx = strided_subsample_indices(300, 0.1, 5);
        assert_eq!(idx.len(), 30);
        assert!(idx.windows(2).all(|w| w[1] - w[0] == 10));
    }

    #[test]
    fn apply_mask_edge_cases() {
        let acts = t(&[1.0, -2.0, 0.0, 4.0]);
        assert_eq!(apply_activation_mask(&acts, &ActivationMask::all(4)).unwrap(), acts);
        assert_eq!(
            apply_activation_mask(&acts, &ActivationMask::none(4)).unwrap().data(),
            &[0.0; 4]
        );
        assert!(apply_activation_mask(&acts, &ActivationMask::all(3)).is_err());
    }

    #[test]
    fn masked_nonzero_count_matches_direct_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..64);
            let acts: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            let keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let expected = acts.iter().zip(&keep).filter(|(&a, &k)| k && a != 0.0).count();
            let out = apply_activation_mask(&t(&acts), &ActivationMask::from_keep(keep)).unwrap();
            assert_eq!(out.count_nonzero(), expected);
        }
    }

    #[test]
    fn prune_examples() {
        let w = t(&[0.1, -0.5, 0.02]);
        assert_eq!(prune_weights_by_magnitude(&w, 0.05).unwrap().keep(), &[true, true, false]);
        let w = t(&[0.0, 1.0, -0.0, 2.0]);
        assert_eq!(prune_weights_by_magnitude(&w, 0.0).unwrap().keep(), &[false, true, false, true]);
        assert!(prune_weights_by_magnitude(&w, -1.0).is_err());
    }

    #[test]
    fn target_density_one_is_zero_threshold() {
        assert_eq!(threshold_for_target_density(&[1.0f32, -2.0, 0.5], 1.0).unwrap(), 0.0);
        assert!(threshold_for_target_density(&[1.0f32], 0.0).is_err());
    }

    #[test]
    fn quantile_threshold_density_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(10..2000);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = rng.random_range(0.0..0.99);
            // oracle: sort magnitudes ascending, threshold at the q-quantile
            let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let theta = mags[((q * n as f64).floor() as usize).min(n - 1)];
            let mask = prune_weights_by_magnitude(&t(&w), theta).unwrap();
            assert!((mask.density() - (1.0 - q)).abs() <= 1.0 / n as f64 + 1e-12);

            let target = rng.random_range(0.01..=1.0);
            let th = threshold_for_target_density(&w, target).unwrap();
            let d = prune_weights_by_magnitude(&t(&w), th).unwrap().density();
            assert!((d - target).abs() <= 1.0 / n as f64 + 1e-12, "{d} vs {target}");
        }
    }

    proptest! {
        #[test]
        fn exact_winner_count_and_dominance(
            acts in prop::collection::vec(-10.0f64..10.0, 1..200),
            rate in 0.001f64..=1.0,
        ) {
            let mask = select_winners_slice(&acts, rate).unwrap();
            let k = winner_count(rate, acts.len());
            prop_assert_eq!(mask.keep.iter().filter(|&&x| x).count(), k);
            let min_win = acts.iter().zip(&mask.keep).filter(|(_, &k)| k)
                .map(|(a, _)| a.abs()).fold(f64::INFINITY, f64::min);
            let max_lose = acts.iter().zip(&mask.keep).filter(|(_, &k)| !k)
                .map(|(a, _)| a.abs()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_win >= max_lose);
        }

        #[test]
        fn selection_is_scale_equivariant(
            acts in prop::collection::vec(-10.0f64..10.0, 1..200),
            rate in 0.01f64..=1.0,
            exponent in -20i32..20,
        ) {
            // powers of two scale exactly, so no magnitudes merge through rounding
            let scale = 2f64.powi(exponent);
            let scaled: Vec<f64> = acts.iter().map(|a| a * scale).collect();
            prop_assert_eq!(
                select_winners_slice(&acts, rate).unwrap(),
                select_winners_slice(&scaled, rate).unwrap()
            );
        }

        #[test]
        fn weight_pruning_is_idempotent_and_monotone(
            w in prop::collection::vec(-1.0f64..1.0, 1..300),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..1.0,
        ) {
            let w = t(&w);
            let m1 = prune_weights_by_magnitude(&w, t1).unwrap();
            let pruned: Vec<f64> = w.data().iter().zip(m1.keep())
                .map(|(&x, &k)| if k { x } else { 0.0 }).collect();
            let m1b = prune_weights_by_magnitude(&t(&pruned), t1).unwrap();
            prop_assert_eq!(&m1, &m1b);
            let m2 = prune_weights_by_magnitude(&w, t1 + dt).unwrap();
            prop_assert!(m2.is_subset_of(&m1));
        }
    }
}
