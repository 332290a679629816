//! Binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header (24 bytes)
//!   0  magic        b"JPNC"
//!   4  version      u8 (= 1)
//!   5  reserved     3 x u8 (= 0)
//!   8  payload_len  u64
//!  16  payload_crc  u32   CRC-32 (IEEE) of the payload
//!  20  header_crc   u32   CRC-32 of bytes 0..20
//! payload
//!   meta            seed u64, epochs u32, config_hash u64, model (u32 len + UTF-8)
//!   input_shape     u32 rank, rank x u32
//!   layers          u32 count, each: u8 tag + fields (see `write_layer`)
//!   winner_rates    u8 present; if 1: u8 mode (0 exact, 1 predicted),
//!                   f64 downsample, u64 offset_seed, u32 count, count x (u32 layer, f64 rate)
//!   params          per weight layer: u32 rank, rank x u32 dims, weights f32[n],
//!                   u32 bias_len, bias f32[bias_len], mask ceil(n/8) bytes, LSB first
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::{ConvGeometry, LayerSpec, PoolGeometry};
use crate::net::{LayerParams, Network};
use crate::sparsity::{SelectionMode, WeightMask, WinnerRateConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"JPNC";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: u32,
    pub config_hash: u64,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, meta: CheckpointMeta) -> Self {
        Checkpoint { network, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Writer(Vec::new());
        let m = &self.meta;
        p.u64(m.seed);
        p.u32(m.epochs);
        p.u64(m.config_hash);
        p.str(&m.model);

        let net = &self.network;
        p.dims(net.input_shape());
        p.u32(net.layers().len() as u32);
        for l in net.layers() {
            write_layer(&mut p, l);
        }
        match net.winner_rates() {
            None => p.u8(0),
            Some(w) => {
                p.u8(1);
                p.u8(match w.selection_mode {
                    SelectionMode::ExactTopk => 0,
                    SelectionMode::PredictedThreshold => 1,
                });
                p.f64(w.downsample_rate);
                p.u64(w.offset_seed);
                p.u32(w.rates().len() as u32);
                for (&layer, &rate) in w.rates() {
                    p.u32(layer as u32);
                    p.f64(rate);
                }
            }
        }
        for j in 0..net.num_weight_layers() {
            let lp = net.params(j);
            p.dims(lp.weights.shape());
            for &w in lp.weights.data() {
                p.0.extend_from_slice(&w.to_le_bytes());
            }
            p.u32(lp.bias.len() as u32);
            for &b in lp.bias.data() {
                p.0.extend_from_slice(&b.to_le_bytes());
            }
            p.0.extend(pack_bits(lp.mask().keep()));
        }

        let payload = p.0;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        let hcrc = crc32fast::hash(&out);
        out.extend_from_slice(&hcrc.to_le_bytes());
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(path, "file shorter than the checkpoint header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let stored = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..20]);
        if stored != computed {
            return Err(Error::Crc {
                section: "header",
                stored,
                computed,
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: bytes[4],
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, header says {len}", payload.len()),
            ));
        }
        let stored = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Crc {
                section: "payload",
                stored,
                computed,
            });
        }

        let mut r = Reader { b: payload, at: 0, path };
        let meta = CheckpointMeta {
            seed: r.u64()?,
            epochs: r.u32()?,
            config_hash: r.u64()?,
            model: r.str()?,
        };
        let input_shape = r.dims()?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            layers.push(read_layer(&mut r)?);
        }
        let rates = match r.u8()? {
            0 => None,
            1 => {
                let mode = match r.u8()? {
                    0 => SelectionMode::ExactTopk,
                    1 => SelectionMode::PredictedThreshold,
                    m => return Err(Error::format(path, format!("unknown selection mode {m}"))),
                };
                let downsample_rate = r.f64()?;
                let offset_seed = r.u64()?;
                let n = r.u32()? as usize;
                let mut map = BTreeMap::new();
                for _ in 0..n {
                    let layer = r.u32()? as usize;
                    map.insert(layer, r.f64()?);
                }
                let mut cfg = WinnerRateConfig::new(map)?;
                cfg.selection_mode = mode;
                cfg.downsample_rate = downsample_rate;
                cfg.offset_seed = offset_seed;
                Some(cfg)
            }
            f => return Err(Error::format(path, format!("bad winner-rate flag {f}"))),
        };
        let mut params = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if !l.has_weights() {
                params.push(None);
                continue;
            }
            let shape = r.dims()?;
            let n: usize = shape.iter().product();
            let w = r.f32s(n)?;
            let nb = r.u32()? as usize;
            let b = r.f32s(nb)?;
            let keep = unpack_bits(r.take(n.div_ceil(8))?, n);
            let weights = Tensor::from_vec(&shape, w).map_err(|e| Error::format(path, format!("layer {i}: {e}")))?;
            let bias = Tensor::from_vec(&[nb], b).map_err(|e| Error::format(path, format!("layer {i}: {e}")))?;
            let mask = WeightMask::from_keep(&shape, keep)?;
            params.push(Some(LayerParams::with_mask(weights, bias, mask)));
        }
        if r.at != payload.len() {
            return Err(Error::format(path, "trailing bytes after parameters"));
        }
        let mut network = Network::from_parts(&input_shape, layers, params)?;
        network.set_winner_rates(rates)?;
        Ok(Checkpoint { network, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

// tags: 0 fc, 1 conv2d, 2 maxpool, 3 avgpool, 4 relu, 5 leaky_relu, 6 dropout,
// 7 flatten, 8 skip_save, 9 skip_add
fn write_layer(p: &mut Writer, l: &LayerSpec) {
    match *l {
        LayerSpec::Fc { inputs, outputs } => {
            p.u8(0);
            p.u32(inputs as u32);
            p.u32(outputs as u32);
        }
        LayerSpec::Conv2d(g) => {
            p.u8(1);
            for v in [g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding] {
                p.u32(v as u32);
            }
        }
        LayerSpec::MaxPool(g) | LayerSpec::AvgPool(g) => {
            p.u8(if matches!(l, LayerSpec::MaxPool(_)) { 2 } else { 3 });
            for v in [g.window, g.stride, g.padding] {
                p.u32(v as u32);
            }
        }
        LayerSpec::Relu => p.u8(4),
        LayerSpec::LeakyRelu { slope } => {
            p.u8(5);
            p.f64(slope);
        }
        LayerSpec::Dropout { rate } => {
            p.u8(6);
            p.f64(rate);
        }
        LayerSpec::Flatten => p.u8(7),
        LayerSpec::SkipSave => p.u8(8),
        LayerSpec::SkipAdd => p.u8(9),
    }
}

fn read_layer(r: &mut Reader) -> Result<LayerSpec> {
    Ok(match r.u8()? {
        0 => LayerSpec::Fc {
            inputs: r.u32()? as usize,
            outputs: r.u32()? as usize,
        },
        1 => {
            let mut v = [0usize; 6];
            for x in &mut v {
                *x = r.u32()? as usize;
            }
            LayerSpec::Conv2d(ConvGeometry {
                in_channels: v[0],
                out_channels: v[1],
                kernel_h: v[2],
                kernel_w: v[3],
                stride: v[4],
                padding: v[5],
            })
        }
        t @ (2 | 3) => {
            let g = PoolGeometry {
                window: r.u32()? as usize,
                stride: r.u32()? as usize,
                padding: r.u32()? as usize,
            };
            if t == 2 {
                LayerSpec::MaxPool(g)
            } else {
                LayerSpec::AvgPool(g)
            }
        }
        4 => LayerSpec::Relu,
        5 => LayerSpec::LeakyRelu { slope: r.f64()? },
        6 => LayerSpec::Dropout { rate: r.f64()? },
        7 => LayerSpec::Flatten,
        8 => LayerSpec::SkipSave,
        9 => LayerSpec::SkipAdd,
        t => return Err(Error::format(r.path, format!("unknown layer tag {t}"))),
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dims(&mut self, d: &[usize]) {
        self.u32(d.len() as u32);
        for &x in d {
            self.u32(x as u32);
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.at < n {
            return Err(Error::format(self.path, "unexpected end of payload"));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "model name is not UTF-8"))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 8 {
            return Err(Error::format(self.path, format!("implausible tensor rank {n}")));
        }
        (0..n).map(|_| Ok(self.u32()? as usize)).collect()
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
