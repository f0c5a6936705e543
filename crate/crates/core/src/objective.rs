//! Per-sample losses over the logits of a sample's observed choices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// List-wise categorical cross-entropy.
    #[default]
    Cce,
    /// Independent binary cross-entropy per choice.
    Bce,
}

impl LossKind {
    pub fn evaluate<T: Scalar>(self, batch: &ChoiceBatch<'_, T>) -> (T, Vec<T>) {
        match self {
            LossKind::Cce => cce_loss(batch),
            LossKind::Bce => bce_loss(batch),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Cce => "cce",
            LossKind::Bce => "bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "cce" => Ok(LossKind::Cce),
            "bce" => Ok(LossKind::Bce),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

/// Logits, binary labels and observation mask for one sample.
#[derive(Clone, Copy, Debug)]
pub struct ChoiceBatch<'a, T> {
    pub logits: &'a [T],
    pub labels: &'a [bool],
    pub mask: &'a [bool],
}

impl<'a, T> ChoiceBatch<'a, T> {
    pub fn new(logits: &'a [T], labels: &'a [bool], mask: &'a [bool]) -> Self {
        assert_eq!(logits.len(), labels.len(), "labels length");
        assert_eq!(logits.len(), mask.len(), "mask length");
        Self {
            logits,
            labels,
            mask,
        }
    }

    /// Every entry observed.
    pub fn dense(logits: &'a [T], labels: &'a [bool]) -> Self {
        Self {
            logits,
            labels,
            mask: &[],
        }
    }

    fn observed(&self, k: usize) -> bool {
        self.mask.is_empty() || self.mask[k]
    }
}

/// `log(exp(0) + Σ exp(t))`, shifted by the running maximum.
fn log1p_sum_exp<T: Scalar>(terms: impl Iterator<Item = T> + Clone) -> T {
    let m = terms.clone().fold(T::zero(), T::max);
    let sum: T = terms.map(|t| (t - m).exp()).sum();
    m + ((-m).exp() + sum).ln()
}

/// `log(1 + Σ_{p=0} e^{s}) + log(1 + Σ_{p=1} e^{-s})` over observed entries.
pub fn cce_loss<T: Scalar>(batch: &ChoiceBatch<'_, T>) -> (T, Vec<T>) {
    let n = batch.logits.len();
    let idx = (0..n).filter(|&k| batch.observed(k));
    let neg = idx
        .clone()
        .filter(|&k| !batch.labels[k])
        .map(|k| batch.logits[k]);
    let pos = idx
        .clone()
        .filter(|&k| batch.labels[k])
        .map(|k| -batch.logits[k]);
    let l_neg = log1p_sum_exp(neg);
    let l_pos = log1p_sum_exp(pos);
    let mut grad = vec![T::zero(); n];
    for k in idx {
        let s = batch.logits[k];
        grad[k] = if batch.labels[k] {
            -(-s - l_pos).exp()
        } else {
            (s - l_neg).exp()
        };
    }
    (l_neg + l_pos, grad)
}

fn softplus<T: Scalar>(s: T) -> T {
    s.max(T::zero()) + (-s.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over observed entries.
pub fn bce_loss<T: Scalar>(batch: &ChoiceBatch<'_, T>) -> (T, Vec<T>) {
    let n = batch.logits.len();
    let count = (0..n).filter(|&k| batch.observed(k)).count();
    let mut grad = vec![T::zero(); n];
    if count == 0 {
        return (T::zero(), grad);
    }
    let inv = T::one() / T::lit(count as f64);
    let mut loss = T::zero();
    for k in (0..n).filter(|&k| batch.observed(k)) {
        let s = batch.logits[k];
        let p = if batch.labels[k] { T::one() } else { T::zero() };
        loss = loss + softplus(s) - p * s;
        grad[k] = (crate::learner::score_sigmoid(s) - p) * inv;
    }
    (loss * inv, grad)
}
