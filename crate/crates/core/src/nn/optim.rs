use std::fmt;
use std::str::FromStr;

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    /// Plain gradient descent, no momentum.
    Sgd,
    /// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with the same L2 term and
    /// learning-rate schedule.
    Adam,
}

impl OptimizerKind {
    pub fn tag(self) -> u32 {
        match self {
            Self::Sgd => 0,
            Self::Adam => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Self::Sgd),
            1 => Some(Self::Adam),
            _ => None,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::InvalidInput(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub decay_rate: f64,
    /// Optimizer steps between learning-rate decays.
    pub decay_steps: u64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            base_lr: 0.0015,
            decay_rate: 0.9985,
            decay_steps: 20,
            weight_decay: 0.001,
        }
    }
}

impl OptimizerConfig {
    /// Staircase exponential decay: `base_lr * decay_rate^floor(step / decay_steps)`.
    pub fn lr(&self, step: u64) -> f64 {
        let exponent = step / self.decay_steps.max(1);
        self.base_lr * self.decay_rate.powf(exponent as f64)
    }
}

/// A learnable tensor handed to the optimizer. `decay` is false for biases
/// and batch-norm scale/shift, which are exempt from weight decay.
pub struct ParamSlot<'a, T> {
    pub name: String,
    pub values: &'a mut [T],
    pub decay: bool,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub global_step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            global_step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr(self.global_step)
    }

    /// Applies one update and advances the step counter. Non-finite
    /// gradients abort the step without touching any parameter.
    pub fn step<T: Real>(&mut self, params: Vec<ParamSlot<'_, T>>, grads: &[Vec<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.values.len() != g.len() {
                return Err(Error::shape("optimizer", &[p.values.len()], &[g.len()]));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {}[{i}] at step {}",
                    p.name, self.global_step
                )));
            }
        }
        let lr = self.lr();
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &gv) in p.values.iter_mut().zip(g) {
                        let mut d = gv.as_f64();
                        if p.decay {
                            d += wd * w.as_f64();
                        }
                        *w = T::lit(w.as_f64() - lr * d);
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = (self.global_step + 1) as f64;
                let c1 = 1.0 - ADAM_BETA1.powf(t);
                let c2 = 1.0 - ADAM_BETA2.powf(t);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((w, &gv), mi), vi) in p.values.iter_mut().zip(g).zip(m).zip(v) {
                        let mut d = gv.as_f64();
                        if p.decay {
                            d += wd * w.as_f64();
                        }
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                        *w = T::lit(w.as_f64() - update);
                    }
                }
            }
        }
        self.global_step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staircase_schedule() {
        let c = OptimizerConfig::default();
        assert_eq!(c.lr(0), 0.0015);
        assert_eq!(c.lr(19), 0.0015);
        assert_eq!(c.lr(20), 0.0015 * 0.9985);
        assert!((c.lr(45) - 0.0015 * 0.9985 * 0.9985).abs() < 1e-18);
        let mut prev = c.lr(0);
        for t in (0..200_000).step_by(997) {
            let lr = c.lr(t);
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_update_rule() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut w = vec![2.0f64, -1.0];
        let mut b = vec![2.0f64];
        let grads = vec![vec![0.5, 0.0], vec![0.5]];
        opt.step(
            vec![
                ParamSlot { name: "w".into(), values: &mut w, decay: true },
                ParamSlot { name: "b".into(), values: &mut b, decay: false },
            ],
            &grads,
        )
        .unwrap();
        assert!((w[0] - (2.0 - 0.0015 * (0.5 + 0.001 * 2.0))).abs() < 1e-15);
        assert!((w[1] - (-1.0 - 0.0015 * (0.001 * -1.0))).abs() < 1e-15);
        assert!((b[0] - (2.0 - 0.0015 * 0.5)).abs() < 1e-15);
        assert_eq!(opt.global_step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(OptimizerConfig {
                kind,
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            });
            let mut w = vec![0.3f32, -7.0];
            opt.step(
                vec![ParamSlot { name: "w".into(), values: &mut w, decay: true }],
                &[vec![0.0, 0.0]],
            )
            .unwrap();
            assert_eq!(w, vec![0.3, -7.0]);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut w = vec![1.0f32, 1.0];
        let err = opt
            .step(
                vec![ParamSlot { name: "fc.weight".into(), values: &mut w, decay: true }],
                &[vec![0.1, f32::NAN]],
            )
            .unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("fc.weight[1]"));
        assert_eq!(w, vec![1.0, 1.0]);
        assert_eq!(opt.global_step, 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Adam,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        });
        let mut w = vec![1.0f64];
        opt.step(
            vec![ParamSlot { name: "w".into(), values: &mut w, decay: true }],
            &[vec![3.0]],
        )
        .unwrap();
        assert!((w[0] - (1.0 - 0.0015)).abs() < 1e-9);
    }
}
