//! Parameter updates. Both optimizers skip weights whose mask bit is 0, so
//! pruned weights stay exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adadelta { lr: f64, rho: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => {
                if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid(format!("sgd lr {lr} / momentum {momentum}")));
                }
            }
            OptimizerConfig::Adadelta { lr, rho, eps } => {
                if !(lr > 0.0 && lr.is_finite()) || !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
                    return Err(Error::invalid(format!("adadelta lr {lr} / rho {rho} / eps {eps}")));
                }
            }
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adadelta { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adadelta { lr, .. } => *lr = new_lr,
        }
        self
    }
}

/// Optimizer state for every weight and bias tensor of one network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    // (weights, bias) per weight layer; sgd uses only the first buffer.
    state: Vec<[(Vec<f64>, Vec<f64>); 2]>,
}

impl Optimizer {
    pub fn new<T: Scalar>(config: OptimizerConfig, net: &Network<T>) -> Result<Self> {
        config.validate()?;
        let state = (0..net.num_weight_layers())
            .map(|j| {
                let p = net.params(j);
                let w = p.weights.len();
                let b = p.bias.len();
                [(vec![0.0; w], vec![0.0; w]), (vec![0.0; b], vec![0.0; b])]
            })
            .collect();
        Ok(Optimizer {
            config,
            lr: config.lr(),
            state,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update from the gradients stored in `net`. A non-finite
    /// gradient aborts before any parameter changes.
    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>) -> Result<()> {
        if self.state.len() != net.num_weight_layers() {
            return Err(Error::invalid("optimizer state does not match the network"));
        }
        for j in 0..net.num_weight_layers() {
            let p = net.params(j);
            for (name, g) in [("weight", p.weights.grad()), ("bias", p.bias.grad())] {
                let g = g.ok_or_else(|| Error::invalid("step called before backward"))?;
                if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("{name} gradient of weight layer {j} at index {pos}")));
                }
            }
        }
        for j in 0..net.num_weight_layers() {
            let p = net.params_mut(j);
            let keep = p.mask().keep().to_vec();
            let [ws, bs] = &mut self.state[j];
            let (w, gw) = p.weights.data_and_grad_mut();
            update(&self.config, self.lr, w, gw.unwrap(), Some(&keep), ws);
            let (b, gb) = p.bias.data_and_grad_mut();
            update(&self.config, self.lr, b, gb.unwrap(), None, bs);
        }
        Ok(())
    }
}

fn update<T: Scalar>(
    config: &OptimizerConfig,
    lr: f64,
    params: &mut [T],
    grads: &[T],
    keep: Option<&[bool]>,
    (s0, s1): &mut (Vec<f64>, Vec<f64>),
) {
    for i in 0..params.len() {
        if keep.is_some_and(|k| !k[i]) {
            continue;
        }
        let g = grads[i].to_f64();
        let delta = match *config {
            OptimizerConfig::Sgd { momentum, .. } => {
                s0[i] = momentum * s0[i] + g;
                s0[i]
            }
            OptimizerConfig::Adadelta { rho, eps, .. } => {
                s0[i] = rho * s0[i] + (1.0 - rho) * g * g;
                let d = (s1[i] + eps).sqrt() / (s0[i] + eps).sqrt() * g;
                s1[i] = rho * s1[i] + (1.0 - rho) * d * d;
                d
            }
        };
        params[i] = T::of(params[i].to_f64() - lr * delta);
    }
}

/// Exponential learning-rate decay per epoch.
pub fn decayed_lr(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}
