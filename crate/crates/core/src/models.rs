//! The reference architectures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{ConvGeometry, LayerSpec, PoolGeometry};
use crate::net::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// 784-300-100-10 perceptron.
    Mlp3,
    /// Two 5x5 conv layers (20, 50 filters) and two fc layers.
    Lenet4,
    /// Two 5x5x64 conv layers and three fc layers on 24x24 crops.
    Convnet5,
    /// Five 3x3 conv layers with leaky ReLU, one residual shortcut, one fc layer.
    LeakyCnn6,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mlp3, ModelKind::Lenet4, ModelKind::Convnet5, ModelKind::LeakyCnn6];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp3 => "mlp3",
            ModelKind::Lenet4 => "lenet4",
            ModelKind::Convnet5 => "convnet5",
            ModelKind::LeakyCnn6 => "leaky_cnn6",
        }
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            ModelKind::Mlp3 | ModelKind::Lenet4 => [1, 28, 28],
            ModelKind::Convnet5 => [3, 24, 24],
            ModelKind::LeakyCnn6 => [3, 32, 32],
        }
    }

    /// Display names of the weight layers, in order.
    pub fn weight_layer_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Mlp3 => &["fc1", "fc2", "fc3"],
            ModelKind::Lenet4 => &["conv1", "conv2", "fc1", "fc2"],
            ModelKind::Convnet5 => &["conv1", "conv2", "fc1", "fc2", "fc3"],
            ModelKind::LeakyCnn6 => &["conv1", "conv2", "conv3", "conv4", "conv5", "fc1"],
        }
    }

    pub fn layers(self, dropout: f64) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let conv = |c, o, k, p| Conv2d(ConvGeometry::square(c, o, k, 1, p));
        match self {
            ModelKind::Mlp3 => vec![
                Flatten,
                Fc { inputs: 784, outputs: 300 },
                Relu,
                Dropout { rate: dropout },
                Fc { inputs: 300, outputs: 100 },
                Relu,
                Dropout { rate: dropout },
                Fc { inputs: 100, outputs: 10 },
            ],
            ModelKind::Lenet4 => vec![
                conv(1, 20, 5, 2),
                Relu,
                MaxPool(PoolGeometry::new(2, 2)),
                conv(20, 50, 5, 2),
                Relu,
                MaxPool(PoolGeometry::new(2, 2)),
                Flatten,
                Fc { inputs: 2450, outputs: 500 },
                Relu,
                Dropout { rate: dropout },
                Fc { inputs: 500, outputs: 10 },
            ],
            ModelKind::Convnet5 => {
                let pool = PoolGeometry {
                    window: 3,
                    stride: 2,
                    padding: 1,
                };
                vec![
                    conv(3, 64, 5, 2),
                    Relu,
                    MaxPool(pool),
                    conv(64, 64, 5, 2),
                    Relu,
                    MaxPool(pool),
                    Flatten,
                    Fc { inputs: 2304, outputs: 384 },
                    Relu,
                    Dropout { rate: dropout },
                    Fc { inputs: 384, outputs: 192 },
                    Relu,
                    Dropout { rate: dropout },
                    Fc { inputs: 192, outputs: 10 },
                ]
            }
            ModelKind::LeakyCnn6 => {
                let lrelu = LeakyRelu { slope: 0.1 };
                vec![
                    conv(3, 16, 3, 1),
                    lrelu.clone(),
                    SkipSave,
                    conv(16, 16, 3, 1),
                    lrelu.clone(),
                    conv(16, 16, 3, 1),
                    SkipAdd,
                    lrelu.clone(),
                    MaxPool(PoolGeometry::new(2, 2)),
                    conv(16, 32, 3, 1),
                    lrelu.clone(),
                    MaxPool(PoolGeometry::new(2, 2)),
                    conv(32, 64, 3, 1),
                    lrelu,
                    AvgPool(PoolGeometry::new(8, 8)),
                    Flatten,
                    Dropout { rate: dropout },
                    Fc { inputs: 64, outputs: 10 },
                ]
            }
        }
    }

    pub fn build(self, dropout: f64, seed: u64) -> Result<Network<f32>> {
        Network::new(&self.input_shape(), self.layers(dropout), seed)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_models_build_with_consistent_names() {
        for m in ModelKind::ALL {
            let net = m.build(0.5, 1).unwrap();
            assert_eq!(net.num_weight_layers(), m.weight_layer_names().len(), "{m}");
            assert_eq!(net.num_classes(), 10);
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
    }

    #[test]
    fn convnet5_flattens_to_2304() {
        let net = ModelKind::Convnet5.build(0.5, 0).unwrap();
        assert_eq!(net.layer_shape(6), &[2304]);
    }

    #[test]
    fn leaky_cnn6_mask_sites() {
        let net = ModelKind::LeakyCnn6.build(0.0, 0).unwrap();
        let sites: Vec<_> = (0..6).map(|j| net.mask_site(j)).collect();
        assert_eq!(sites, vec![Some(1), Some(4), Some(8), Some(11), Some(15), None]);
    }

    #[test]
    fn lenet_masks_after_pooling() {
        let net = ModelKind::Lenet4.build(0.5, 0).unwrap();
        assert_eq!(net.site_sizes(), vec![20 * 14 * 14, 2450, 500, 10]);
    }
}
