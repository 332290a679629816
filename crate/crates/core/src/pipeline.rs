//! Dense training, sensitivity analysis, joint finetuning and evaluation.

use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::metrics::{CsvReport, MacCounter, MacReport};
use crate::net::{Masking, Mode, Network};
use crate::optim::{decayed_lr, Optimizer, OptimizerConfig};
use crate::sparsity::{self, WinnerRateConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Dense baseline epochs.
    pub epochs: usize,
    /// Optimizer of the dense model; also used for warm-up at `lr_scale`.
    pub optimizer: OptimizerConfig,
    /// Per-epoch learning-rate multiplier.
    pub lr_decay: f64,
    /// ℓ1 strength on kept weights during warm-up and finetuning.
    pub l1_strength: f64,
    pub lr_scale: f64,
    pub warmup_epochs: usize,
    pub finetune_epochs: usize,
    /// Finetuning optimizer; its learning rate is multiplied by `lr_scale`.
    pub finetune_optimizer: OptimizerConfig,
    /// Finetune epochs over which weight density falls (cubically) to the targets.
    pub prune_ramp_epochs: usize,
    /// Dropout rate of the dense model; rescaled after masked fc layers.
    pub base_dropout: f64,
    /// Kept-weight fraction per weight layer (missing entries: 1.0).
    pub weight_target_density: Vec<f64>,
    /// Prune/finetune rounds after warm-up.
    pub iterations: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            batch_size: 64,
            epochs: 10,
            optimizer: OptimizerConfig::Sgd { lr: 0.05, momentum: 0.9 },
            lr_decay: 0.9,
            l1_strength: 1e-5,
            lr_scale: 0.1,
            warmup_epochs: 1,
            finetune_epochs: 10,
            finetune_optimizer: OptimizerConfig::Adadelta {
                lr: 1.0,
                rho: 0.95,
                eps: 1e-6,
            },
            prune_ramp_epochs: 3,
            base_dropout: 0.5,
            weight_target_density: Vec::new(),
            iterations: 1,
            eval_batch_size: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size", "must be positive".into());
        }
        if !(0.01..=1.0).contains(&self.lr_scale) {
            return bad("lr_scale", format!("{} is outside [0.01, 1]", self.lr_scale));
        }
        if !(self.l1_strength >= 0.0 && self.l1_strength.is_finite()) {
            return bad("l1_strength", format!("{} must be a finite non-negative number", self.l1_strength));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", format!("{} is outside (0, 1]", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.base_dropout) {
            return bad("base_dropout", format!("{} is outside [0, 1)", self.base_dropout));
        }
        if let Some(d) = self.weight_target_density.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return bad("weight_target_density", format!("{d} is outside (0, 1]"));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config { key: "optimizer".into(), msg: e.to_string() })?;
        self.finetune_optimizer
            .validate()
            .map_err(|e| Error::Config { key: "finetune_optimizer".into(), msg: e.to_string() })
    }

    pub fn target_density(&self, j: usize) -> f64 {
        self.weight_target_density.get(j).copied().unwrap_or(1.0)
    }
}

/// Dropout rate after a masked layer with winner rate `rate`.
pub fn adjust_dropout(base: f64, rate: f64) -> f64 {
    base * rate.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Dense,
    Warmup,
    Finetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    pub cross_entropy: f64,
    pub l1: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub weight_density: Vec<f64>,
    pub activation_density: Vec<f64>,
    /// Largest |gradient| seen on a pruned weight during the epoch.
    pub max_masked_grad: f64,
}

impl EpochRecord {
    pub fn loss(&self) -> f64 {
        self.cross_entropy + self.l1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl CsvReport for History {
    fn header(&self) -> Vec<String> {
        let n = self.records.first().map_or(0, |r| r.weight_density.len());
        let mut h: Vec<String> = [
            "phase",
            "epoch",
            "lr",
            "loss",
            "cross_entropy",
            "l1",
            "train_accuracy",
            "val_accuracy",
            "max_masked_grad",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend((0..n).map(|j| format!("weight_density_{j}")));
        h.extend((0..n).map(|j| format!("acti_density_{j}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![
                    serde_plain(r.phase),
                    r.epoch.to_string(),
                    r.lr.to_string(),
                    r.loss().to_string(),
                    r.cross_entropy.to_string(),
                    r.l1.to_string(),
                    r.train_accuracy.to_string(),
                    r.val_accuracy.map_or_else(String::new, |v| v.to_string()),
                    r.max_masked_grad.to_string(),
                ];
                row.extend(r.weight_density.iter().map(|v| v.to_string()));
                row.extend(r.activation_density.iter().map(|v| v.to_string()));
                row
            })
            .collect()
    }
}

fn serde_plain(p: Phase) -> String {
    match p {
        Phase::Dense => "dense",
        Phase::Warmup => "warmup",
        Phase::Finetune => "finetune",
    }
    .into()
}

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^ (x >> 33)
}

struct EpochOutcome {
    cross_entropy: f64,
    l1: f64,
    accuracy: f64,
    max_masked_grad: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    net: &mut Network<f32>,
    opt: &mut Optimizer,
    train: &Dataset,
    batch_size: usize,
    rates: Option<&WinnerRateConfig>,
    alpha: f64,
    seed: u64,
    epoch: usize,
) -> Result<EpochOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let snapshot = net.clone();
    let batches = train.batch_indices(batch_size, Some(mix(seed, epoch as u64)));
    let (mut ce, mut l1, mut correct, mut seen, mut max_masked) = (0.0, 0.0, 0usize, 0usize, 0.0f64);
    let diverged = |b: usize| Error::Diverged {
        epoch,
        batch: b,
        last_good: Some(Box::new(snapshot.clone())),
    };
    for (b, idx) in batches.iter().enumerate() {
        let x = train.images.gather_samples(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let mode = Mode::Train {
            seed: mix(mix(seed, epoch as u64), b as u64),
        };
        let pass = net.forward(&x, mode, Masking::from_rates(rates))?;
        let loss = net.loss_and_backward(&pass, &labels, alpha)?;
        if !loss.total().is_finite() {
            return Err(diverged(b));
        }
        for j in 0..net.num_weight_layers() {
            let p = net.params(j);
            for (g, &k) in p.weights.grad().unwrap().iter().zip(p.mask().keep()) {
                if !k {
                    max_masked = max_masked.max(g.abs() as f64);
                }
            }
        }
        match opt.step(net) {
            Err(Error::NonFinite(_)) => return Err(diverged(b)),
            other => other?,
        }
        let n = idx.len();
        ce += loss.cross_entropy * n as f64;
        l1 += loss.l1 * n as f64;
        correct += pass.predictions().iter().zip(&labels).filter(|(p, l)| p == l).count();
        seen += n;
    }
    Ok(EpochOutcome {
        cross_entropy: ce / seen as f64,
        l1: l1 / seen as f64,
        accuracy: correct as f64 / seen as f64,
        max_masked_grad: max_masked,
    })
}

fn record(
    net: &Network<f32>,
    phase: Phase,
    epoch: usize,
    lr: f64,
    out: EpochOutcome,
    val: Option<&Dataset>,
    eval_batch: usize,
) -> Result<EpochRecord> {
    let (val_accuracy, activation_density) = match val {
        Some(v) => {
            let r = evaluate_with(net, v, Masking::from_rates(net.winner_rates()), eval_batch)?;
            let ad = r.report.layers.iter().map(|l| l.acti_density_out()).collect();
            (Some(r.accuracy), ad)
        }
        None => (None, Vec::new()),
    };
    let rec = EpochRecord {
        phase,
        epoch,
        lr,
        cross_entropy: out.cross_entropy,
        l1: out.l1,
        train_accuracy: out.accuracy,
        val_accuracy,
        weight_density: (0..net.num_weight_layers()).map(|j| net.weight_density(j)).collect(),
        activation_density,
        max_masked_grad: out.max_masked_grad,
    };
    info!(
        "{:?} epoch {} lr {:.4} loss {:.4} (ce {:.4} + l1 {:.4}) train {:.4} val {} weights {:.4}",
        phase,
        epoch,
        lr,
        rec.loss(),
        rec.cross_entropy,
        rec.l1,
        rec.train_accuracy,
        rec.val_accuracy.map_or("-".to_string(), |v| format!("{v:.4}")),
        net.total_weight_density()
    );
    Ok(rec)
}

/// Trains a dense model with the original optimizer and per-epoch decay.
pub fn train_dense(net: &mut Network<f32>, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, net)?;
    let mut history = History::default();
    for e in 0..cfg.epochs {
        let lr = decayed_lr(cfg.optimizer.lr(), cfg.lr_decay, e);
        opt.set_lr(lr);
        let out = run_epoch(net, &mut opt, train, cfg.batch_size, None, 0.0, cfg.seed, e)?;
        history.records.push(record(net, Phase::Dense, e, lr, out, val, cfg.eval_batch_size)?);
    }
    Ok(history)
}

/// Prunes weight layer `j` down to `density` of its weights by magnitude,
/// never reviving a pruned weight.
pub fn prune_to_density(net: &mut Network<f32>, j: usize, density: f64) -> Result<()> {
    let p = net.params(j);
    let t = sparsity::threshold_for_target_density(p.weights.data(), density)?;
    let fresh = sparsity::prune_weights_by_magnitude(&p.weights, t)?;
    let mask = net.weight_mask(j).intersect(&fresh)?;
    net.set_weight_mask(j, mask)
}

/// Density target for finetune epoch `e` on a cubic ramp from 1 to `target`.
pub fn ramp_density(target: f64, e: usize, ramp: usize) -> f64 {
    if ramp == 0 || e + 1 >= ramp {
        return target;
    }
    let f = 1.0 - (e + 1) as f64 / ramp as f64;
    target + (1.0 - target) * f * f * f
}

/// Sets every dropout layer to the base rate, rescaled after masked fc layers.
pub fn apply_dropout_policy(net: &mut Network<f32>, base: f64, rates: &WinnerRateConfig) -> Result<()> {
    let dropouts: Vec<usize> = (0..net.layers().len())
        .filter(|&i| matches!(net.layers()[i], LayerSpec::Dropout { .. }))
        .collect();
    for i in dropouts {
        let rate = match net.dropout_owner(i) {
            Some(j) if matches!(net.layers()[net.weight_layers()[j]], LayerSpec::Fc { .. }) => rates.rate(j),
            _ => 1.0,
        };
        net.set_dropout_rate(i, adjust_dropout(base, rate))?;
    }
    Ok(())
}

/// Joint regularization: warm-up with the original optimizer (ℓ1 and
/// activation masks on, no pruning), then Adadelta finetuning that re-prunes
/// weights once per epoch.
pub fn joint_finetune(
    net: &mut Network<f32>,
    rates: &WinnerRateConfig,
    cfg: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<History> {
    cfg.validate()?;
    net.set_winner_rates(Some(rates.clone()))?;
    apply_dropout_policy(net, cfg.base_dropout, rates)?;
    let rates = Some(rates);
    let mut history = History::default();
    let mut epoch = 0;

    let warm_lr = cfg.optimizer.lr() * cfg.lr_scale;
    let mut opt = Optimizer::new(cfg.optimizer.with_lr(warm_lr), net)?;
    for _ in 0..cfg.warmup_epochs {
        let out = run_epoch(net, &mut opt, train, cfg.batch_size, rates, cfg.l1_strength, cfg.seed ^ 0xA5A5, epoch)?;
        history.records.push(record(net, Phase::Warmup, epoch, warm_lr, out, val, cfg.eval_batch_size)?);
        epoch += 1;
    }

    let ft_lr = cfg.finetune_optimizer.lr() * cfg.lr_scale;
    for it in 0..cfg.iterations.max(1) {
        let mut opt = Optimizer::new(cfg.finetune_optimizer.with_lr(ft_lr), net)?;
        for e in 0..cfg.finetune_epochs {
            for j in 0..net.num_weight_layers() {
                let ramp = if it == 0 { cfg.prune_ramp_epochs } else { 0 };
                prune_to_density(net, j, ramp_density(cfg.target_density(j), e, ramp))?;
            }
            let out = run_epoch(net, &mut opt, train, cfg.batch_size, rates, cfg.l1_strength, cfg.seed ^ 0x5A5A, epoch)?;
            history.records.push(record(net, Phase::Finetune, epoch, ft_lr, out, val, cfg.eval_batch_size)?);
            epoch += 1;
        }
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// No activation masks.
    Dense,
    /// Weight masks only; activation masks ignored.
    WpOnly,
    /// Weight masks and the network's winner rates.
    Jp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub report: MacReport,
}

pub fn evaluate(net: &Network<f32>, ds: &Dataset, mode: EvalMode, batch: usize) -> Result<EvalResult> {
    let masking = match mode {
        EvalMode::Dense | EvalMode::WpOnly => Masking::Off,
        EvalMode::Jp => Masking::Winners(
            net.winner_rates()
                .ok_or_else(|| Error::invalid("jp evaluation needs winner rates on the network"))?,
        ),
    };
    evaluate_with(net, ds, masking, batch)
}

/// Accuracy and MAC/sparsity report over a whole dataset, streamed in batches.
pub fn evaluate_with(net: &Network<f32>, ds: &Dataset, masking: Masking<'_>, batch: usize) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut counter = MacCounter::new(net, None);
    let mut correct = 0;
    for idx in ds.batch_indices(batch, None) {
        let x = ds.images.gather_samples(&idx);
        let pass = net.forward(&x, Mode::Eval, masking)?;
        counter.add_pass(net, &pass);
        correct += pass
            .predictions()
            .iter()
            .zip(&idx)
            .filter(|(p, &i)| **p == ds.labels[i])
            .count();
    }
    Ok(EvalResult {
        accuracy: correct as f64 / ds.len() as f64,
        correct,
        report: counter.finish(net),
    })
}

pub fn accuracy(net: &Network<f32>, ds: &Dataset, masking: Masking<'_>, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0;
    for idx in ds.batch_indices(batch, None) {
        let x = ds.images.gather_samples(&idx);
        let preds = net.predict(&x, masking)?;
        correct += preds.iter().zip(&idx).filter(|(p, &i)| **p == ds.labels[i]).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Accuracy drop per (weight layer, winner rate), each layer masked alone.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityCurve {
    pub baseline_accuracy: f64,
    /// layer → (rate, accuracy drop), sorted by rate.
    pub points: BTreeMap<usize, Vec<(f64, f64)>>,
}

impl CsvReport for SensitivityCurve {
    fn header(&self) -> Vec<String> {
        ["layer", "rate", "accuracy", "drop"].iter().map(|s| s.to_string()).collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .flat_map(|(&j, pts)| {
                pts.iter().map(move |&(r, d)| {
                    vec![
                        j.to_string(),
                        r.to_string(),
                        (self.baseline_accuracy - d).to_string(),
                        d.to_string(),
                    ]
                })
            })
            .collect()
    }
}

pub fn sensitivity_sweep(net: &Network<f32>, val: &Dataset, grid: &[f64], batch: usize) -> Result<SensitivityCurve> {
    if grid.is_empty() {
        return Err(Error::Empty("winner-rate grid"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let baseline_accuracy = accuracy(net, val, Masking::Off, batch)?;
    let mut points = BTreeMap::new();
    for j in 0..net.num_weight_layers() - 1 {
        let mut pts = Vec::with_capacity(grid.len());
        for &r in &grid {
            let cfg = WinnerRateConfig::single(j, r)?;
            let acc = accuracy(net, val, Masking::Winners(&cfg), batch)?;
            pts.push((r, baseline_accuracy - acc));
        }
        points.insert(j, pts);
    }
    Ok(SensitivityCurve {
        baseline_accuracy,
        points,
    })
}

/// Per layer, the smallest rate whose drop is within `tolerable_drop`.
pub fn choose_winner_rates(curves: &SensitivityCurve, tolerable_drop: f64) -> Result<WinnerRateConfig> {
    let mut rates = BTreeMap::new();
    for (&j, pts) in &curves.points {
        match pts.iter().filter(|(_, d)| *d <= tolerable_drop).map(|(r, _)| *r).reduce(f64::min) {
            Some(r) => {
                rates.insert(j, r);
            }
            None => {
                warn!("layer {j}: no winner rate within a drop of {tolerable_drop}; leaving it dense");
                rates.insert(j, 1.0);
            }
        }
    }
    WinnerRateConfig::new(rates)
}

/// Per-layer magnitude thresholds whose pass rate over `ds` matches the
/// winner rates. Layers are calibrated in order with upstream thresholds applied.
pub fn calibrate_static_thresholds(
    net: &Network<f32>,
    ds: &Dataset,
    rates: &WinnerRateConfig,
    batch: usize,
) -> Result<BTreeMap<usize, f64>> {
    let mut thresholds = BTreeMap::new();
    for (&j, &rate) in rates.rates() {
        if rate >= 1.0 {
            continue;
        }
        let site = net.mask_site(j).ok_or_else(|| Error::invalid(format!("layer {j} has no mask site")))?;
        let mut mags: Vec<f32> = Vec::new();
        for idx in ds.batch_indices(batch, None) {
            let x = ds.images.gather_samples(&idx);
            let pass = net.forward(&x, Mode::Eval, Masking::Static(&thresholds))?;
            mags.extend(pass.output(site).data().iter().map(|v| v.abs()));
        }
        let keep = ((rate * mags.len() as f64).round() as usize).min(mags.len());
        let theta = if keep == 0 {
            f32::INFINITY as f64
        } else if keep >= mags.len() {
            -1.0
        } else {
            let (_, nth, _) = mags.select_nth_unstable_by(keep, |a, b| b.total_cmp(a));
            *nth as f64
        };
        thresholds.insert(j, theta);
    }
    Ok(thresholds)
}

/// One ε of the threshold-prediction study.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionPoint {
    pub downsample_rate: f64,
    pub accuracy: f64,
    pub exact_accuracy: f64,
    /// Per masked layer: fraction of samples whose winner count is within ±20% of k.
    pub within_20pct: BTreeMap<usize, f64>,
    /// Per masked layer: mean realized winner count over k.
    pub count_ratio: BTreeMap<usize, f64>,
}

impl PredictionPoint {
    pub fn drop(&self) -> f64 {
        self.exact_accuracy - self.accuracy
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionStudy {
    pub points: Vec<PredictionPoint>,
}

impl CsvReport for PredictionStudy {
    fn header(&self) -> Vec<String> {
        ["downsample_rate", "layer", "accuracy", "exact_accuracy", "drop", "within_20pct", "count_ratio"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for p in &self.points {
            for (j, w) in &p.within_20pct {
                rows.push(vec![
                    p.downsample_rate.to_string(),
                    j.to_string(),
                    p.accuracy.to_string(),
                    p.exact_accuracy.to_string(),
                    p.drop().to_string(),
                    w.to_string(),
                    p.count_ratio[j].to_string(),
                ]);
            }
        }
        rows
    }
}

/// Evaluates predicted-threshold masking at each ε against exact selection.
pub fn predict_threshold_study(
    net: &Network<f32>,
    ds: &Dataset,
    rates: &WinnerRateConfig,
    eps_grid: &[f64],
    batch: usize,
) -> Result<PredictionStudy> {
    if eps_grid.is_empty() {
        return Err(Error::Empty("down-sampling grid"));
    }
    let mut exact = rates.clone();
    exact.selection_mode = sparsity::SelectionMode::ExactTopk;
    let exact_accuracy = accuracy(net, ds, Masking::Winners(&exact), batch)?;
    let sizes = net.site_sizes();
    let mut study = PredictionStudy::default();
    for &eps in eps_grid {
        let cfg = exact.clone().with_prediction(eps)?;
        let masked: Vec<usize> = cfg.rates().iter().filter(|(_, &r)| r < 1.0).map(|(&j, _)| j).collect();
        let mut within: BTreeMap<usize, usize> = masked.iter().map(|&j| (j, 0)).collect();
        let mut ratio: BTreeMap<usize, f64> = masked.iter().map(|&j| (j, 0.0)).collect();
        let mut correct = 0;
        for idx in ds.batch_indices(batch, None) {
            let x = ds.images.gather_samples(&idx);
            let pass = net.forward(&x, Mode::Eval, Masking::Winners(&cfg))?;
            correct += pass.predictions().iter().zip(&idx).filter(|(p, &i)| **p == ds.labels[i]).count();
            for &j in &masked {
                let n = sizes[j];
                let k = sparsity::winner_count(cfg.rate(j), n) as f64;
                let mask = pass.activation_mask(net.mask_site(j).unwrap()).unwrap();
                for s in mask.chunks_exact(n) {
                    let c = s.iter().filter(|&&b| b).count() as f64;
                    if (c - k).abs() <= 0.2 * k {
                        *within.get_mut(&j).unwrap() += 1;
                    }
                    *ratio.get_mut(&j).unwrap() += c / k;
                }
            }
        }
        let total = ds.len() as f64;
        study.points.push(PredictionPoint {
            downsample_rate: eps,
            accuracy: correct as f64 / total,
            exact_accuracy,
            within_20pct: within.into_iter().map(|(j, c)| (j, c as f64 / total)).collect(),
            count_ratio: ratio.into_iter().map(|(j, r)| (j, r / total)).collect(),
        });
    }
    Ok(study)
}

/// Logits of one batch, for callers that need raw outputs.
pub fn logits(net: &Network<f32>, x: &Tensor<f32>, masking: Masking<'_>) -> Result<Tensor<f32>> {
    Ok(net.forward(x, Mode::Eval, masking)?.logits().clone())
}
