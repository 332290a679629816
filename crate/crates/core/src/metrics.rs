//! MAC accounting, CSV reports and the condensed fc timing harness.
//!
//! A multiply-accumulate is *effective* when its input activation is nonzero
//! and its weight is kept. Counts are exact per sample and averaged over the
//! samples seen. Pooling, bias adds and mask selection are not counted.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::net::{ForwardPass, Network};
use crate::sparsity;
use crate::tensor::{Scalar, Tensor};

/// Dense MACs per weight layer at batch size 1.
pub fn count_dense_macs<T: Scalar>(net: &Network<T>) -> Vec<u64> {
    net.weight_layers()
        .iter()
        .map(|&i| match &net.layers()[i] {
            LayerSpec::Fc { inputs, outputs } => (inputs * outputs) as u64,
            LayerSpec::Conv2d(g) => {
                let out = net.layer_shape(i);
                (out[1] * out[2] * g.kernel_h * g.kernel_w * g.in_channels * g.out_channels) as u64
            }
            _ => unreachable!(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMacs {
    pub name: String,
    pub weights: u64,
    pub kept_weights: u64,
    pub dense_macs: u64,
    /// Mean per sample.
    pub effective_macs: f64,
    pub input_size: u64,
    /// Mean nonzero input activations per sample.
    pub input_nonzero: f64,
    /// Per-sample size of the (masked) tensor leaving this layer toward the next weight layer.
    pub site_size: u64,
    pub site_nonzero: f64,
}

impl LayerMacs {
    pub fn weight_density(&self) -> f64 {
        ratio(self.kept_weights as f64, self.weights as f64)
    }
    pub fn mac_fraction(&self) -> f64 {
        ratio(self.effective_macs, self.dense_macs as f64)
    }
    pub fn acti_density_in(&self) -> f64 {
        ratio(self.input_nonzero, self.input_size as f64)
    }
    pub fn acti_density_out(&self) -> f64 {
        ratio(self.site_nonzero, self.site_size as f64)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MacReport {
    pub layers: Vec<LayerMacs>,
    pub samples: u64,
}

impl MacReport {
    /// Sum over layers; the densities of the result are the aggregates
    /// (activation density counts every site including the logits).
    pub fn total(&self) -> LayerMacs {
        let mut t = LayerMacs {
            name: "total".into(),
            weights: 0,
            kept_weights: 0,
            dense_macs: 0,
            effective_macs: 0.0,
            input_size: 0,
            input_nonzero: 0.0,
            site_size: 0,
            site_nonzero: 0.0,
        };
        for l in &self.layers {
            t.weights += l.weights;
            t.kept_weights += l.kept_weights;
            t.dense_macs += l.dense_macs;
            t.effective_macs += l.effective_macs;
            t.input_size += l.input_size;
            t.input_nonzero += l.input_nonzero;
            t.site_size += l.site_size;
            t.site_nonzero += l.site_nonzero;
        }
        t
    }

    pub fn mac_fraction(&self) -> f64 {
        self.total().mac_fraction()
    }

    pub fn weight_density(&self) -> f64 {
        self.total().weight_density()
    }

    pub fn activation_density(&self) -> f64 {
        self.total().acti_density_out()
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        if header != MAC_HEADER {
            return Err(Error::format(path, "unexpected MAC report header"));
        }
        let mut layers = Vec::new();
        let mut samples = 0;
        for row in rows.iter().filter(|r| r[0] != "total") {
            let f = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| Error::format(path, format!("bad number `{}`", row[i])))
            };
            let u = |i: usize| -> Result<u64> {
                row[i].parse().map_err(|_| Error::format(path, format!("bad integer `{}`", row[i])))
            };
            samples = u(1)?;
            layers.push(LayerMacs {
                name: row[0].clone(),
                weights: u(2)?,
                kept_weights: u(3)?,
                dense_macs: u(5)?,
                effective_macs: f(6)?,
                input_size: u(8)?,
                input_nonzero: f(9)?,
                site_size: u(11)?,
                site_nonzero: f(12)?,
            });
        }
        Ok(MacReport { layers, samples })
    }
}

const MAC_HEADER: [&str; 14] = [
    "layer",
    "samples",
    "weights",
    "kept_weights",
    "weight_density",
    "dense_macs",
    "effective_macs",
    "mac_fraction",
    "input_size",
    "input_nonzero",
    "acti_density_in",
    "site_size",
    "site_nonzero",
    "acti_density_out",
];

/// Anything that can be written as a CSV table with a fixed header.
pub trait CsvReport {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

impl CsvReport for MacReport {
    fn header(&self) -> Vec<String> {
        MAC_HEADER.iter().map(|s| s.to_string()).collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        if self.layers.is_empty() {
            return Vec::new();
        }
        let row = |l: &LayerMacs| {
            vec![
                l.name.clone(),
                self.samples.to_string(),
                l.weights.to_string(),
                l.kept_weights.to_string(),
                l.weight_density().to_string(),
                l.dense_macs.to_string(),
                l.effective_macs.to_string(),
                l.mac_fraction().to_string(),
                l.input_size.to_string(),
                l.input_nonzero.to_string(),
                l.acti_density_in().to_string(),
                l.site_size.to_string(),
                l.site_nonzero.to_string(),
                l.acti_density_out().to_string(),
            ]
        };
        let mut rows: Vec<_> = self.layers.iter().map(row).collect();
        rows.push(row(&self.total()));
        rows
    }
}

/// Accumulates effective MACs and activation counts over forward passes.
#[derive(Clone, Debug)]
pub struct MacCounter {
    names: Vec<String>,
    dense: Vec<u64>,
    eff: Vec<f64>,
    in_nz: Vec<f64>,
    site_nz: Vec<f64>,
    samples: u64,
}

impl MacCounter {
    pub fn new<T: Scalar>(net: &Network<T>, names: Option<&[&str]>) -> Self {
        let n = net.num_weight_layers();
        let names = (0..n)
            .map(|j| names.and_then(|s| s.get(j)).map_or_else(|| format!("layer{j}"), |s| s.to_string()))
            .collect();
        MacCounter {
            names,
            dense: count_dense_macs(net),
            eff: vec![0.0; n],
            in_nz: vec![0.0; n],
            site_nz: vec![0.0; n],
            samples: 0,
        }
    }

    /// Adds every sample of an eval/train pass of `net`.
    pub fn add_pass<T: Scalar>(&mut self, net: &Network<T>, pass: &ForwardPass<T>) {
        for (j, &i) in net.weight_layers().iter().enumerate() {
            let x = pass.layer_input(i);
            self.eff[j] += effective_macs(net, j, x) as f64;
            self.in_nz[j] += x.count_nonzero() as f64;
            let site = net.mask_site(j).unwrap_or(net.layers().len() - 1);
            self.site_nz[j] += pass.output(site).count_nonzero() as f64;
        }
        self.samples += pass.batch() as u64;
    }

    pub fn finish<T: Scalar>(&self, net: &Network<T>) -> MacReport {
        let s = self.samples.max(1) as f64;
        let sizes = net.site_sizes();
        let layers = (0..self.names.len())
            .map(|j| {
                let i = net.weight_layers()[j];
                let input_size: usize = if i == 0 {
                    net.input_shape().iter().product()
                } else {
                    net.layer_shape(i - 1).iter().product()
                };
                LayerMacs {
                    name: self.names[j].clone(),
                    weights: net.weight_count(j) as u64,
                    kept_weights: net.weight_mask(j).count_kept() as u64,
                    dense_macs: self.dense[j],
                    effective_macs: self.eff[j] / s,
                    input_size: input_size as u64,
                    input_nonzero: self.in_nz[j] / s,
                    site_size: sizes[j] as u64,
                    site_nonzero: self.site_nz[j] / s,
                }
            })
            .collect();
        MacReport {
            layers,
            samples: self.samples,
        }
    }
}

/// Effective MACs of weight layer `j` summed over the batch `x` (its input).
pub fn effective_macs<T: Scalar>(net: &Network<T>, j: usize, x: &Tensor<T>) -> u64 {
    let i = net.weight_layers()[j];
    let p = net.params(j);
    let keep = p.mask().keep();
    let w = p.weights.data();
    let live = |idx: usize| keep[idx] && w[idx] != T::ZERO;
    let batch = x.shape()[0];
    match &net.layers()[i] {
        LayerSpec::Fc { inputs, outputs } => {
            let row_nnz: Vec<u64> = (0..*inputs)
                .map(|r| (0..*outputs).filter(|&c| live(r * outputs + c)).count() as u64)
                .collect();
            (0..batch)
                .map(|n| {
                    x.sample(n)
                        .iter()
                        .zip(&row_nnz)
                        .filter(|(v, _)| **v != T::ZERO)
                        .map(|(_, &c)| c)
                        .sum::<u64>()
                })
                .sum()
        }
        LayerSpec::Conv2d(g) => {
            let (kh, kw, c) = (g.kernel_h, g.kernel_w, g.in_channels);
            // live out-channels per tap (c, ky, kx)
            let taps: Vec<u64> = (0..c * kh * kw)
                .map(|t| (0..g.out_channels).filter(|&o| live(o * c * kh * kw + t)).count() as u64)
                .collect();
            let in_shape = if i == 0 { net.input_shape() } else { net.layer_shape(i - 1) };
            let (h, wd) = (in_shape[1], in_shape[2]);
            let out = net.layer_shape(i);
            let (oh, ow) = (out[1], out[2]);
            let mut total = 0u64;
            for n in 0..batch {
                let xs = x.sample(n);
                for ch in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let cnt = taps[(ch * kh + ky) * kw + kx];
                            if cnt == 0 {
                                continue;
                            }
                            let mut hits = 0u64;
                            for oy in 0..oh {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = &xs[ch * h * wd + iy as usize * wd..][..wd];
                                for ox in 0..ow {
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if ix >= 0 && ix < wd as isize && row[ix as usize] != T::ZERO {
                                        hits += 1;
                                    }
                                }
                            }
                            total += hits * cnt;
                        }
                    }
                }
            }
            total
        }
        _ => unreachable!(),
    }
}

/// Writes a report with the csv crate. Floats use Rust's shortest
/// round-trip formatting, so parse-and-rewrite reproduces the file.
pub fn emit_report<R: CsvReport + ?Sized>(report: &R, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_csv(path, &report.header(), &report.rows())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and rows of a CSV file as strings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Plain table for ad-hoc reports (history, sweeps).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        Ok(Table { header, rows })
    }
}

impl CsvReport for Table {
    fn header(&self) -> Vec<String> {
        self.header.clone()
    }
    fn rows(&self) -> Vec<Vec<String>> {
        self.rows.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub rate: f64,
    pub trials: usize,
    /// Median seconds per dense matvec.
    pub time_original: f64,
    /// Median seconds for winner selection plus condensed matvec.
    pub time_prune_plus_mac: f64,
    pub time_selection: f64,
    pub speedup: f64,
    /// Largest output error relative to Σ|x_i w_ij|.
    pub max_rel_err: f64,
    pub unstable: bool,
}

impl CsvReport for SpeedupRecord {
    fn header(&self) -> Vec<String> {
        [
            "inputs",
            "outputs",
            "rate",
            "trials",
            "time_original_s",
            "time_prune_plus_mac_s",
            "time_selection_s",
            "speedup",
            "max_rel_err",
            "unstable",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.inputs.to_string(),
            self.outputs.to_string(),
            self.rate.to_string(),
            self.trials.to_string(),
            self.time_original.to_string(),
            self.time_prune_plus_mac.to_string(),
            self.time_selection.to_string(),
            self.speedup.to_string(),
            self.max_rel_err.to_string(),
            self.unstable.to_string(),
        ]]
    }
}

/// `y = x · W` for one sample over the rows listed in `rows`.
pub fn condensed_matvec(x: &[f32], w: &[f32], outputs: usize, rows: &[u32], y: &mut [f32]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for &r in rows {
        let a = x[r as usize];
        let wr = &w[r as usize * outputs..(r as usize + 1) * outputs];
        for (o, &wv) in y.iter_mut().zip(wr) {
            *o += a * wv;
        }
    }
}

/// Indices of the top-`rate` inputs by magnitude, ascending.
pub fn select_rows(x: &[f32], rate: f64, scratch: &mut Vec<u32>, keep: &mut [bool], rows: &mut Vec<u32>) {
    let k = sparsity::winner_count(rate, x.len());
    sparsity::mark_top_k(x, k, scratch, keep);
    rows.clear();
    rows.extend(keep.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32));
}

pub const WARMUP_RUNS: usize = 10;

/// Times a dense `1×I · I×O` product against selecting the top `rate` inputs
/// and multiplying only their weight rows. Equivalence of the two outputs is
/// checked before timing.
pub fn bench_condensed_fc(inputs: usize, outputs: usize, rate: f64, trials: usize, seed: u64) -> Result<SpeedupRecord> {
    if inputs == 0 || outputs == 0 || !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("bench shape {inputs}x{outputs} rate {rate}")));
    }
    let trials = trials.max(100);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f32> = (0..inputs * outputs).map(|_| rng.random_range(-0.05..0.05)).collect();
    let x: Vec<f32> = (0..inputs).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut y_dense = vec![0.0f32; outputs];
    let mut y_cond = vec![0.0f32; outputs];
    let mut scratch = Vec::with_capacity(inputs);
    let mut keep = vec![false; inputs];
    let mut rows = Vec::with_capacity(inputs);

    // equivalence against an f64 reference product of the masked input
    select_rows(&x, rate, &mut scratch, &mut keep, &mut rows);
    condensed_matvec(&x, &w, outputs, &rows, &mut y_cond);
    let mut max_rel_err = 0.0f64;
    for o in 0..outputs {
        let (mut exact, mut scale) = (0.0f64, 0.0f64);
        for (r, (&xv, &k)) in x.iter().zip(&keep).enumerate() {
            if k {
                let p = xv as f64 * w[r * outputs + o] as f64;
                exact += p;
                scale += p.abs();
            }
        }
        max_rel_err = max_rel_err.max((y_cond[o] as f64 - exact).abs() / scale.max(f64::MIN_POSITIVE));
    }
    if max_rel_err > 1e-5 {
        return Err(Error::NonFinite(format!(
            "condensed output deviates from dense by {max_rel_err:e}"
        )));
    }

    let mut t_dense = Vec::with_capacity(trials);
    let mut t_cond = Vec::with_capacity(trials);
    let mut t_sel = Vec::with_capacity(trials);
    for t in 0..WARMUP_RUNS + trials {
        let s = Instant::now();
        dense_matvec(&x, &w, outputs, &mut y_dense);
        let d = s.elapsed().as_secs_f64();
        std::hint::black_box(&y_dense);

        let s = Instant::now();
        select_rows(std::hint::black_box(&x), rate, &mut scratch, &mut keep, &mut rows);
        let sel = s.elapsed().as_secs_f64();
        condensed_matvec(&x, &w, outputs, &rows, &mut y_cond);
        let c = s.elapsed().as_secs_f64();
        std::hint::black_box(&y_cond);
        if t >= WARMUP_RUNS {
            t_dense.push(d);
            t_cond.push(c);
            t_sel.push(sel);
        }
    }
    let unstable = relative_sd(&t_dense) > 0.2 || relative_sd(&t_cond) > 0.2;
    let (time_original, time_prune_plus_mac) = (median(&mut t_dense), median(&mut t_cond));
    Ok(SpeedupRecord {
        inputs,
        outputs,
        rate,
        trials,
        time_original,
        time_prune_plus_mac,
        time_selection: median(&mut t_sel),
        speedup: time_original / time_prune_plus_mac,
        max_rel_err,
        unstable,
    })
}

/// Dense `y = x · W`, streaming every weight row with the same kernel as
/// [`condensed_matvec`].
pub fn dense_matvec(x: &[f32], w: &[f32], outputs: usize, y: &mut [f32]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (&a, wr) in x.iter().zip(w.chunks_exact(outputs)) {
        for (o, &wv) in y.iter_mut().zip(wr) {
            *o += a * wv;
        }
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn relative_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}
