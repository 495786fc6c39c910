//! Per-agent stochastic policies and the clipped-surrogate actor update.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::action::{sample_categorical, Action, ActionDist, ActionSpace};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer};

const LOG_STD_RANGE: (f64, f64) = (-5.0, 2.0);
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Softmax over `obs → logits`. With no hidden layers and one-hot
/// observations this is a tabular softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

/// Diagonal Gaussian with a network mean and a state-independent log-std.
/// Samples are clamped to `[low, high]` by the environment; log-probabilities
/// refer to the unclamped draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    Categorical(CategoricalPolicy),
    Gaussian(GaussianPolicy),
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn categorical_entropy(logits: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
    // ∂H/∂z_k = −p_k (log p_k + H)
    let d = lp.iter().map(|l| -l.exp() * (l + h)).collect();
    (h, d)
}

impl Policy {
    /// A freshly initialised policy for `space` with the given hidden sizes.
    pub fn new<R: Rng + ?Sized>(
        space: &ActionSpace,
        obs_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let out = space.encoding_dim();
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(out))
            .collect();
        let net = Mlp::new(&sizes, 1.0, 0.01, rng);
        match *space {
            ActionSpace::Discrete { .. } => Policy::Categorical(CategoricalPolicy { net }),
            ActionSpace::Box { dim, low, high } => Policy::Gaussian(GaussianPolicy {
                mean: net,
                log_std: vec![init_log_std; dim],
                low,
                high,
            }),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Policy::Categorical(p) => p.net.params().len(),
            Policy::Gaussian(p) => p.mean.params().len() + p.log_std.len(),
        }
    }

    /// All parameters as one vector: network weights, then log-std.
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Policy::Categorical(p) => p.net.params().to_vec(),
            Policy::Gaussian(p) => p.mean.params().iter().chain(&p.log_std).copied().collect(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "policy parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        match self {
            Policy::Categorical(p) => p.net.params_mut().copy_from_slice(flat),
            Policy::Gaussian(p) => {
                let k = p.mean.params().len();
                p.mean.params_mut().copy_from_slice(&flat[..k]);
                p.log_std.copy_from_slice(&flat[k..]);
            }
        }
        Ok(())
    }

    pub fn dist(&self, obs: &[f64]) -> Result<ActionDist> {
        match self {
            Policy::Categorical(p) => Ok(ActionDist::Categorical {
                probs: softmax(&p.net.forward(obs)?),
            }),
            Policy::Gaussian(p) => Ok(ActionDist::Gaussian {
                mean: p.mean.forward(obs)?,
                std: p.log_std.iter().map(|l| l.exp()).collect(),
                low: p.low,
                high: p.high,
            }),
        }
    }

    /// Draws an action and its log-probability. Gaussian draws are returned
    /// unclamped so the log-probability refers to the returned action.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        rng: &mut R,
    ) -> Result<(Action, f64)> {
        match self {
            Policy::Categorical(p) => {
                let lp = log_softmax(&p.net.forward(obs)?);
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                let a = sample_categorical(&probs, rng);
                Ok((Action::Discrete(a), lp[a]))
            }
            Policy::Gaussian(p) => {
                let mean = p.mean.forward(obs)?;
                let x: Vec<f64> = mean
                    .iter()
                    .zip(&p.log_std)
                    .map(|(m, l)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + l.exp() * z
                    })
                    .collect();
                let lp = gaussian_log_prob(&mean, &p.log_std, &x);
                Ok((Action::Continuous(x), lp))
            }
        }
    }

    /// Mode for categorical policies, mean for Gaussian ones (unclamped).
    pub fn greedy_action(&self, obs: &[f64]) -> Result<Action> {
        match self {
            Policy::Categorical(_) => Ok(self.dist(obs)?.mode()),
            Policy::Gaussian(p) => Ok(Action::Continuous(p.mean.forward(obs)?)),
        }
    }

    /// Projects an action into the policy's support box (identity for
    /// categorical actions).
    pub fn clamp(&self, a: Action) -> Action {
        match (self, a) {
            (Policy::Gaussian(p), Action::Continuous(v)) => {
                Action::Continuous(v.into_iter().map(|x| x.clamp(p.low, p.high)).collect())
            }
            (_, a) => a,
        }
    }

    pub fn log_prob(&self, obs: &[f64], action: &Action) -> Result<f64> {
        match (self, action) {
            (Policy::Categorical(p), Action::Discrete(a)) => {
                let lp = log_softmax(&p.net.forward(obs)?);
                lp.get(*a)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("action {a} outside 0..{}", lp.len())))
            }
            (Policy::Gaussian(p), Action::Continuous(x)) => {
                if x.len() != p.log_std.len() || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg(
                        "continuous action has the wrong dimension or is not finite",
                    ));
                }
                Ok(gaussian_log_prob(&p.mean.forward(obs)?, &p.log_std, x))
            }
            _ => Err(Error::arg("action kind does not match the policy")),
        }
    }

    pub fn entropy(&self, obs: &[f64]) -> Result<f64> {
        match self {
            Policy::Categorical(p) => Ok(categorical_entropy(&p.net.forward(obs)?).0),
            Policy::Gaussian(p) => Ok(p.log_std.iter().map(|l| 0.5 + HALF_LOG_2PI + l).sum()),
        }
    }

    /// Adds `w_lp·∇log π(a|o) + w_ent·∇H(π(·|o))` into `grad` and returns
    /// `(log π(a|o), H)`.
    fn accumulate(
        &self,
        obs: &[f64],
        action: &Action,
        w_lp: f64,
        w_ent: f64,
        grad: &mut [f64],
    ) -> Result<(f64, f64)> {
        match (self, action) {
            (Policy::Categorical(p), Action::Discrete(a)) => {
                let trace = p.net.forward_trace(obs)?;
                let logits = trace.output();
                if *a >= logits.len() {
                    return Err(Error::arg(format!(
                        "action {a} outside 0..{}",
                        logits.len()
                    )));
                }
                let lp = log_softmax(logits);
                let (h, dh) = categorical_entropy(logits);
                let d: Vec<f64> = lp
                    .iter()
                    .enumerate()
                    .map(|(k, l)| w_lp * (f64::from(u8::from(k == *a)) - l.exp()) + w_ent * dh[k])
                    .collect();
                p.net.backward(&trace, &d, grad);
                Ok((lp[*a], h))
            }
            (Policy::Gaussian(p), Action::Continuous(x)) => {
                let trace = p.mean.forward_trace(obs)?;
                let mean = trace.output().to_vec();
                let k = p.mean.params().len();
                let mut d_mean = vec![0.0; mean.len()];
                for (j, ((m, l), xv)) in mean.iter().zip(&p.log_std).zip(x).enumerate() {
                    let var = (2.0 * l).exp();
                    d_mean[j] = w_lp * (xv - m) / var;
                    grad[k + j] += w_lp * ((xv - m).powi(2) / var - 1.0) + w_ent;
                }
                p.mean.backward(&trace, &d_mean, &mut grad[..k]);
                let h = p.log_std.iter().map(|l| 0.5 + HALF_LOG_2PI + l).sum();
                Ok((gaussian_log_prob(&mean, &p.log_std, x), h))
            }
            _ => Err(Error::arg("action kind does not match the policy")),
        }
    }

    fn clamp_log_std(&mut self) {
        if let Policy::Gaussian(p) = self {
            p.log_std
                .iter_mut()
                .for_each(|l| *l = l.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1));
        }
    }
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, l), xv)| {
            let z = (xv - m) / l.exp();
            -0.5 * z * z - l - HALF_LOG_2PI
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub actor_lr: f64,
}

impl PpoConfig {
    /// Matrix-game defaults.
    pub fn matrix() -> Self {
        Self {
            clip: 0.3,
            entropy_coef: 1e-3,
            epochs: 10,
            actor_lr: 5e-4,
        }
    }

    /// Differential-game defaults.
    pub fn differential() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 1e-4,
            epochs: 10,
            actor_lr: 5e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("train.ppo.{key}"),
                message,
            })
        };
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip", format!("expected (0, 1), got {}", self.clip));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return bad(
                "entropy_coef",
                format!("expected ≥ 0, got {}", self.entropy_coef),
            );
        }
        if self.epochs == 0 {
            return bad("epochs", "expected ≥ 1".into());
        }
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return bad("actor_lr", format!("expected > 0, got {}", self.actor_lr));
        }
        Ok(())
    }
}

/// One agent's view of one collected timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample {
    pub obs: Vec<f64>,
    pub action: Action,
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoReport {
    /// Surrogate (without the entropy bonus) before the first step.
    pub surrogate: f64,
    pub entropy: f64,
    /// Fraction of samples on the clipped branch during the last epoch.
    pub clip_fraction: f64,
}

/// `mean_t min(r_t Â_t, clip(r_t) Â_t) + c·mean_t H_t` and its gradient.
/// Returns `(objective, surrogate, entropy, clip_fraction, gradient)`.
pub fn surrogate_and_grad(
    policy: &Policy,
    batch: &[PpoSample],
    cfg: &PpoConfig,
) -> Result<(f64, f64, f64, f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::arg("actor batch is empty"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; policy.param_count()];
    let (mut surr, mut ent, mut clipped) = (0.0, 0.0, 0usize);
    for s in batch {
        // evaluate first to decide which branch of the min is active
        let lp = policy.log_prob(&s.obs, &s.action)?;
        let r = (lp - s.old_log_prob).exp();
        let rc = r.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let (unclipped, clipped_term) = (r * s.advantage, rc * s.advantage);
        let on_clip = clipped_term < unclipped;
        surr += unclipped.min(clipped_term) * scale;
        clipped += usize::from(on_clip);
        let w_lp = if on_clip {
            0.0
        } else {
            s.advantage * r * scale
        };
        let (_, h) =
            policy.accumulate(&s.obs, &s.action, w_lp, cfg.entropy_coef * scale, &mut grad)?;
        ent += h * scale;
    }
    let objective = surr + cfg.entropy_coef * ent;
    if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "actor surrogate {surr} / entropy {ent} over {} samples",
            batch.len()
        )));
    }
    Ok((objective, surr, ent, clipped as f64 * scale, grad))
}

/// Runs `cfg.epochs` full-batch ascent steps on the clipped surrogate.
pub fn ppo_actor_update(
    policy: &mut Policy,
    opt: &mut Optimizer,
    batch: &[PpoSample],
    cfg: &PpoConfig,
) -> Result<PpoReport> {
    let mut report = PpoReport::default();
    let mut params = policy.flat_params();
    for epoch in 0..cfg.epochs {
        let (_, surr, ent, clip_fraction, grad) = surrogate_and_grad(policy, batch, cfg)?;
        if epoch == 0 {
            report.surrogate = surr;
            report.entropy = ent;
        }
        report.clip_fraction = clip_fraction;
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.step(&mut params, &descent);
        policy.set_flat_params(&params)?;
        policy.clamp_log_std();
        params = policy.flat_params();
    }
    Ok(report)
}
