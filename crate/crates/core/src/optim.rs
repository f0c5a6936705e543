use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::params::Parameters;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[default]
    Adamw,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamw => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::Adamw),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

/// SGD and Adam variants. Adam folds weight decay into the gradient; AdamW
/// decays the weights directly.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    weight_decay: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay: T::lit(weight_decay),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: T) {
        let wd = self.weight_decay;
        let grads = grads.slices();
        let mut slots = params.slices_mut();
        if self.m.is_empty() && self.kind != OptimizerKind::Sgd {
            self.m = slots.iter().map(|s| vec![T::zero(); s.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (i, (p, g)) in slots.iter_mut().zip(&grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in p.iter_mut().zip(g.iter()) {
                        *w = *w - lr * (g + wd * *w);
                    }
                }
                OptimizerKind::Adam | OptimizerKind::Adamw => {
                    let decoupled = self.kind == OptimizerKind::Adamw;
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for k in 0..p.len() {
                        let mut g = g[k];
                        if decoupled {
                            p[k] = p[k] * (T::one() - lr * wd);
                        } else {
                            g = g + wd * p[k];
                        }
                        m[k] = self.beta1 * m[k] + (T::one() - self.beta1) * g;
                        v[k] = self.beta2 * v[k] + (T::one() - self.beta2) * g * g;
                        let m_hat = m[k] / c1;
                        let v_hat = v[k] / c2;
                        p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// `lr · γ^⌊epoch / step⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub step: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.step.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct One(Vec<f64>);

    impl Parameters<f64> for One {
        fn slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn adam_first_step() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Adamw] {
            let mut p = One(vec![0.0]);
            let mut opt = Optimizer::new(kind, 0.0);
            opt.step(&mut p, &One(vec![1.0]), 0.1);
            assert!((p.0[0] + 0.1).abs() < 1e-8);
        }
    }

    #[test]
    fn sgd_with_decay() {
        let mut p = One(vec![2.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(&mut p, &One(vec![1.0]), 0.1);
        assert!((p.0[0] - (2.0 - 0.1 * (1.0 + 1.0))).abs() < 1e-15);
    }

    #[test]
    fn adamw_decays_independently_of_gradient() {
        let mut p = One(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adamw, 0.1);
        opt.step(&mut p, &One(vec![0.0]), 0.5);
        assert!((p.0[0] - 0.95).abs() < 1e-15);
        let mut p = One(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        opt.step(&mut p, &One(vec![0.0]), 0.5);
        // L2 gradient 0.1 normalizes to a full unit step.
        assert!((p.0[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn step_lr() {
        let s = StepLr {
            base: 1e-3,
            step: 100,
            gamma: 0.7,
        };
        assert!((s.lr_at(250) - 4.9e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(99), 1e-3);
        assert_eq!(s.lr_at(0), 1e-3);
    }

    #[test]
    fn parse_kind() {
        assert_eq!(
            "AdamW".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adamw
        );
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
