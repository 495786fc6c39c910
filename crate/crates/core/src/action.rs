//! Per-agent action spaces, actions, and action distributions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionSpace {
    Discrete {
        n: usize,
    },
    /// Axis-aligned box `[low, high]^dim`.
    Box {
        dim: usize,
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }
}

impl ActionSpace {
    /// Width of the critic-facing encoding: one-hot for discrete spaces,
    /// the raw dimension for boxes.
    pub fn encoding_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete { n } => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    pub fn contains(&self, a: &Action) -> bool {
        match (self, a) {
            (ActionSpace::Discrete { n }, Action::Discrete(k)) => k < n,
            (ActionSpace::Box { dim, low, high }, Action::Continuous(v)) => {
                v.len() == *dim && v.iter().all(|x| x.is_finite() && *x >= *low && *x <= *high)
            }
            _ => false,
        }
    }

    /// Appends the encoding of `a`. Box actions are divided by the largest
    /// bound magnitude so encodings stay within `[-1, 1]`.
    pub fn encode_into(&self, a: &Action, out: &mut Vec<f64>) -> Result<()> {
        match (self, a) {
            (ActionSpace::Discrete { n }, Action::Discrete(k)) => {
                if k >= n {
                    return Err(Error::arg(format!("action {k} outside 0..{n}")));
                }
                let start = out.len();
                out.resize(start + n, 0.0);
                out[start + k] = 1.0;
                Ok(())
            }
            (ActionSpace::Box { dim, low, high }, Action::Continuous(v)) => {
                if v.len() != *dim {
                    return Err(Error::Dimension {
                        context: "continuous action",
                        expected: *dim,
                        got: v.len(),
                    });
                }
                let scale = low.abs().max(high.abs()).max(f64::MIN_POSITIVE);
                out.extend(v.iter().map(|x| x / scale));
                Ok(())
            }
            _ => Err(Error::arg("action does not match its space")),
        }
    }
}

/// A per-agent action distribution evaluated at one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Categorical {
        probs: Vec<f64>,
    },
    /// Diagonal Gaussian; samples are clamped to `[low, high]`.
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
        low: f64,
        high: f64,
    },
}

impl ActionDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDist::Categorical { probs } => Action::Discrete(sample_categorical(probs, rng)),
            ActionDist::Gaussian {
                mean,
                std,
                low,
                high,
            } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        (m + s * z).clamp(*low, *high)
                    })
                    .collect(),
            ),
        }
    }

    /// Greedy action: the mode for categorical, the clamped mean for Gaussian.
    pub fn mode(&self) -> Action {
        match self {
            ActionDist::Categorical { probs } => {
                let mut best = 0;
                for (k, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = k;
                    }
                }
                Action::Discrete(best)
            }
            ActionDist::Gaussian {
                mean, low, high, ..
            } => Action::Continuous(mean.iter().map(|m| m.clamp(*low, *high)).collect()),
        }
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            ActionDist::Categorical { probs } => Some(probs),
            ActionDist::Gaussian { .. } => None,
        }
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding: fall back to the last action with nonzero mass
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Row-major index of a discrete joint action, agent 0 most significant.
pub fn joint_index(counts: &[usize], actions: &[usize]) -> usize {
    actions
        .iter()
        .zip(counts)
        .fold(0, |acc, (&a, &n)| acc * n + a)
}

/// Inverse of [`joint_index`].
pub fn joint_from_index(counts: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; counts.len()];
    for (slot, &n) in out.iter_mut().zip(counts).rev() {
        *slot = index % n;
        index /= n;
    }
    out
}
