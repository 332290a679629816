//! Layer descriptions and shape inference.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// Rows of the unfolded input (`in_channels * kernel_h * kernel_w`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeometry {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolGeometry {
            window,
            stride,
            padding: 0,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || self.window == 0 || ph < self.window || pw < self.window || self.padding >= self.window {
            return None;
        }
        Some(((ph - self.window) / self.stride + 1, (pw - self.window) / self.stride + 1))
    }
}

/// One stage of a sequential network.
///
/// `SkipSave` / `SkipAdd` form an additive shortcut: the tensor flowing past
/// `SkipSave` is added to the output of the layer before the matching
/// `SkipAdd` (innermost pairs match first).
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Fc { inputs: usize, outputs: usize },
    Conv2d(ConvGeometry),
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
    Relu,
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
    Flatten,
    SkipSave,
    SkipAdd,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::AvgPool(_) => "avgpool",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::SkipSave => "skip_save",
            LayerSpec::SkipAdd => "skip_add",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::Conv2d(_))
    }

    /// Shape of the weight tensor: `[inputs, outputs]` for fc,
    /// `[out_channels, in_channels, kernel_h, kernel_w]` for conv.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Fc { inputs, outputs } => Some(vec![inputs, outputs]),
            LayerSpec::Conv2d(g) => Some(vec![g.out_channels, g.in_channels, g.kernel_h, g.kernel_w]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Fc { outputs, .. } => Some(outputs),
            LayerSpec::Conv2d(g) => Some(g.out_channels),
            _ => None,
        }
    }

    /// Layers a dynamic activation mask may sit behind without changing what it sees.
    pub(crate) fn passes_mask_through(&self) -> bool {
        matches!(
            self,
            LayerSpec::Relu
                | LayerSpec::LeakyRelu { .. }
                | LayerSpec::MaxPool(_)
                | LayerSpec::AvgPool(_)
                | LayerSpec::Flatten
                | LayerSpec::SkipAdd
        )
    }

    fn check_params(&self) -> std::result::Result<(), String> {
        match *self {
            LayerSpec::Fc { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err("fc dimensions must be positive".into())
            }
            LayerSpec::Conv2d(g)
                if g.in_channels == 0 || g.out_channels == 0 || g.kernel_h == 0 || g.kernel_w == 0 || g.stride == 0 =>
            {
                Err("conv2d geometry must be positive".into())
            }
            LayerSpec::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => {
                Err(format!("leaky_relu slope {slope} is outside (0, 1)"))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(format!("dropout rate {rate} is outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        self.check_params().map_err(|msg| Error::invalid(format!("layer {index}: {msg}")))?;
        let mismatch = |expected: Vec<usize>| Error::LayerShape {
            layer: index,
            kind: self.kind(),
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerSpec::Fc { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch(vec![inputs]));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d(g) => {
                if input.len() != 3 || input[0] != g.in_channels {
                    return Err(mismatch(vec![g.in_channels, 0, 0]));
                }
                let (oh, ow) = g
                    .output_hw(input[1], input[2])
                    .ok_or_else(|| mismatch(vec![g.in_channels, g.kernel_h, g.kernel_w]))?;
                Ok(vec![g.out_channels, oh, ow])
            }
            LayerSpec::MaxPool(p) | LayerSpec::AvgPool(p) => {
                if input.len() != 3 {
                    return Err(mismatch(vec![0, p.window, p.window]));
                }
                let (oh, ow) = p
                    .output_hw(input[1], input[2])
                    .ok_or_else(|| mismatch(vec![input[0], p.window, p.window]))?;
                Ok(vec![input[0], oh, ow])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            _ => Ok(input.to_vec()),
        }
    }
}
