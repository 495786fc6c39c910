//! State-value and twin action-value critics, coalitional advantage
//! estimation, and generalized advantage estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{joint_from_index, Action, ActionDist, ActionSpace};
use crate::coalition::Coalition;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer};

pub const DEFAULT_MC_SAMPLES: usize = 16;
/// Non-coalition joint spaces up to this size are enumerated exactly.
pub const EXACT_ENUMERATION_LIMIT: usize = 4096;
pub const OUTPUT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaeConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gae_lambda")]
    pub lambda: f64,
}

fn default_gamma() -> f64 {
    0.99
}
fn default_gae_lambda() -> f64 {
    0.95
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            lambda: default_gae_lambda(),
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config {
                key: "train.gae.gamma".into(),
                message: format!("expected [0, 1), got {}", self.gamma),
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config {
                key: "train.gae.lambda".into(),
                message: format!("expected [0, 1], got {}", self.lambda),
            });
        }
        Ok(())
    }
}

/// Backward GAE recursion. `values[t]` is `V(s_t)`; the value after the last
/// step is `bootstrap` unless that step is terminal. A `done` flag at `t`
/// cuts both bootstrapping and the trace at `t`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    cfg: &GaeConfig,
    dones: &[bool],
) -> Result<Vec<f64>> {
    let t_len = rewards.len();
    for (context, len) in [
        ("gae values", values.len()),
        ("gae done flags", dones.len()),
    ] {
        if len != t_len {
            return Err(Error::Dimension {
                context,
                expected: t_len,
                got: len,
            });
        }
    }
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < t_len {
            values[t + 1]
        } else {
            bootstrap
        };
        let delta = rewards[t] + cfg.gamma * next_value - values[t];
        if dones[t] {
            running = 0.0;
        }
        running = delta + cfg.gamma * cfg.lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Affine map from network outputs to target units, `μ + σ·raw`, tracked
/// from exponential moving averages of the TD targets. Rescaling rewrites
/// the output layers so predictions are unchanged at the moment of update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
    first_moment: f64,
    second_moment: f64,
    weight: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            first_moment: 0.0,
            second_moment: 0.0,
            weight: 0.0,
        }
    }
}

pub const TARGET_SCALE_DECAY: f64 = 0.99;
const MIN_TARGET_STD: f64 = 1e-2;

impl TargetScale {
    pub fn to_target(&self, raw: f64) -> f64 {
        self.mean + self.std * raw
    }

    pub fn to_raw(&self, target: f64) -> f64 {
        (target - self.mean) / self.std
    }

    /// Folds a batch of targets into the moving averages and returns the new
    /// scale; `self` is left untouched.
    fn observe(&self, targets: &[f64], decay: f64) -> Self {
        if targets.is_empty() {
            return *self;
        }
        let k = targets.len() as f64;
        let m1 = targets.iter().sum::<f64>() / k;
        let m2 = targets.iter().map(|t| t * t).sum::<f64>() / k;
        let mut next = *self;
        next.first_moment = decay * self.first_moment + (1.0 - decay) * m1;
        next.second_moment = decay * self.second_moment + (1.0 - decay) * m2;
        next.weight = decay * self.weight + (1.0 - decay);
        next.mean = next.first_moment / next.weight;
        let var = next.second_moment / next.weight - next.mean * next.mean;
        next.std = var.max(0.0).sqrt().max(MIN_TARGET_STD);
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCritic {
    pub net: Mlp,
    #[serde(default)]
    pub scale: TargetScale,
}

impl ValueCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Self {
            net: Mlp::new(&sizes, 1.0, OUTPUT_GAIN, rng),
            scale: TargetScale::default(),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        Self {
            net,
            scale: TargetScale::default(),
        }
    }

    pub fn predict(&self, state: &[f64]) -> Result<f64> {
        Ok(self.scale.to_target(self.net.forward(state)?[0]))
    }
}

pub fn predict_v(critic: &ValueCritic, state: &[f64]) -> Result<f64> {
    critic.predict(state)
}

/// `Q(s,a) = b(s) + Σ_i ⟨u_i(s), a_i⟩ + Σ_{i<j} a_iᵀ W_ij(s) a_j`, with all
/// coefficients produced by one network over the state features. With no
/// hidden layers and one-hot states the coefficients are tabular by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCritic {
    pub net: Mlp,
    dims: Vec<usize>,
}

impl QuadraticCritic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        dims: &[usize],
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(Self::feature_len(dims)))
            .collect();
        Self {
            net: Mlp::new(&sizes, 1.0, OUTPUT_GAIN, rng),
            dims: dims.to_vec(),
        }
    }

    /// Builds a critic from explicit per-state coefficients laid out as
    /// `[b, u_0, …, u_{n-1}, W_01, W_02, …]` (each `W_ij` row-major over
    /// `(a_i, a_j)`), one row per one-hot state.
    pub fn tabular(dims: &[usize], coefficients: &[Vec<f64>]) -> Result<Self> {
        let f = Self::feature_len(dims);
        let states = coefficients.len();
        let mut params = vec![0.0; Mlp::param_count(&[states, f])];
        for (s, row) in coefficients.iter().enumerate() {
            if row.len() != f {
                return Err(Error::Dimension {
                    context: "quadratic coefficients",
                    expected: f,
                    got: row.len(),
                });
            }
            params[s * f..(s + 1) * f].copy_from_slice(row);
        }
        Ok(Self {
            net: Mlp::from_params(&[states, f], params)?,
            dims: dims.to_vec(),
        })
    }

    pub fn feature_len(dims: &[usize]) -> usize {
        let mut len = 1 + dims.iter().sum::<usize>();
        for i in 0..dims.len() {
            for j in i + 1..dims.len() {
                len += dims[i] * dims[j];
            }
        }
        len
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// The feature vector `φ(a)` with `Q = coeffs(s)·φ(a)`. Multilinear in the
    /// per-agent encodings, so substituting expected encodings yields the
    /// exact expectation under independent per-agent distributions.
    pub fn features(&self, encs: &[Vec<f64>]) -> Vec<f64> {
        let mut phi = Vec::with_capacity(Self::feature_len(&self.dims));
        phi.push(1.0);
        for e in encs {
            phi.extend_from_slice(e);
        }
        for i in 0..encs.len() {
            for j in i + 1..encs.len() {
                for x in &encs[i] {
                    phi.extend(encs[j].iter().map(|y| x * y));
                }
            }
        }
        phi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QHead {
    Mlp { net: Mlp },
    Quadratic(QuadraticCritic),
}

impl QHead {
    fn net(&self) -> &Mlp {
        match self {
            QHead::Mlp { net } => net,
            QHead::Quadratic(q) => &q.net,
        }
    }

    pub fn params(&self) -> &[f64] {
        self.net().params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            QHead::Mlp { net } => net.params_mut(),
            QHead::Quadratic(q) => q.net.params_mut(),
        }
    }

    /// Keeps `old.to_target(raw)` equal to `new.to_target(raw')`.
    fn rescale(&mut self, old: &TargetScale, new: &TargetScale) {
        let ratio = old.std / new.std;
        let shift = (old.mean - new.mean) / new.std;
        match self {
            QHead::Mlp { net } => net.rescale_output(ratio, &[shift]),
            QHead::Quadratic(q) => {
                // φ(a)[0] = 1, so the shift goes on the constant coefficient
                let mut shifts = vec![0.0; q.net.output_dim()];
                shifts[0] = shift;
                q.net.rescale_output(ratio, &shifts);
            }
        }
    }

    /// Raw (scale-free) Q from per-agent encodings (one-hot, scaled box, or
    /// expected one-hot for the quadratic form).
    pub fn predict_encoded(&self, state: &[f64], encs: &[Vec<f64>]) -> Result<f64> {
        match self {
            QHead::Mlp { net } => {
                let mut x = state.to_vec();
                for e in encs {
                    x.extend_from_slice(e);
                }
                Ok(net.forward(&x)?[0])
            }
            QHead::Quadratic(q) => {
                let coeffs = q.net.forward(state)?;
                let phi = q.features(encs);
                if phi.len() != coeffs.len() {
                    return Err(Error::Dimension {
                        context: "quadratic features",
                        expected: coeffs.len(),
                        got: phi.len(),
                    });
                }
                Ok(coeffs.iter().zip(&phi).map(|(c, f)| c * f).sum())
            }
        }
    }

    /// Adds `d_out · ∂Q/∂θ` into `grad` and returns the prediction.
    fn accumulate_grad(
        &self,
        state: &[f64],
        encs: &[Vec<f64>],
        d_out: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        match self {
            QHead::Mlp { net } => {
                let mut x = state.to_vec();
                for e in encs {
                    x.extend_from_slice(e);
                }
                let trace = net.forward_trace(&x)?;
                let q = trace.output()[0];
                net.backward(&trace, &[d_out], grad);
                Ok(q)
            }
            QHead::Quadratic(q) => {
                let trace = q.net.forward_trace(state)?;
                let phi = q.features(encs);
                let value = trace.output().iter().zip(&phi).map(|(c, f)| c * f).sum();
                let d: Vec<f64> = phi.iter().map(|f| d_out * f).collect();
                q.net.backward(&trace, &d, grad);
                Ok(value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QCriticKind {
    Mlp,
    Quadratic,
}

/// Two independently initialised action-value heads of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinQCritic {
    pub heads: [QHead; 2],
    pub spaces: Vec<ActionSpace>,
    #[serde(default)]
    pub scale: TargetScale,
}

impl TwinQCritic {
    pub fn new<R: Rng + ?Sized>(
        kind: &QCriticKind,
        state_dim: usize,
        spaces: &[ActionSpace],
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let dims: Vec<usize> = spaces.iter().map(ActionSpace::encoding_dim).collect();
        let make = |rng: &mut R| match kind {
            QCriticKind::Mlp => {
                let sizes: Vec<usize> = std::iter::once(state_dim + dims.iter().sum::<usize>())
                    .chain(hidden.iter().copied())
                    .chain(std::iter::once(1))
                    .collect();
                QHead::Mlp {
                    net: Mlp::new(&sizes, 1.0, OUTPUT_GAIN, rng),
                }
            }
            QCriticKind::Quadratic => {
                QHead::Quadratic(QuadraticCritic::new(state_dim, &dims, hidden, rng))
            }
        };
        let first = make(rng);
        let second = make(rng);
        Self {
            heads: [first, second],
            spaces: spaces.to_vec(),
            scale: TargetScale::default(),
        }
    }

    pub fn from_heads(first: QHead, second: QHead, spaces: &[ActionSpace]) -> Self {
        Self {
            heads: [first, second],
            spaces: spaces.to_vec(),
            scale: TargetScale::default(),
        }
    }

    pub fn encode(&self, joint: &[Action]) -> Result<Vec<Vec<f64>>> {
        if joint.len() != self.spaces.len() {
            return Err(Error::Dimension {
                context: "joint action",
                expected: self.spaces.len(),
                got: joint.len(),
            });
        }
        self.spaces
            .iter()
            .zip(joint)
            .map(|(space, a)| {
                let mut e = Vec::with_capacity(space.encoding_dim());
                space.encode_into(a, &mut e)?;
                Ok(e)
            })
            .collect()
    }

    pub fn predict(&self, head: usize, state: &[f64], joint: &[Action]) -> Result<f64> {
        Ok(self
            .scale
            .to_target(self.heads[head].predict_encoded(state, &self.encode(joint)?)?))
    }

    pub fn predict_both(&self, state: &[f64], joint: &[Action]) -> Result<[f64; 2]> {
        self.predict_both_encoded(state, &self.encode(joint)?)
    }

    fn predict_both_encoded(&self, state: &[f64], encs: &[Vec<f64>]) -> Result<[f64; 2]> {
        Ok([
            self.scale
                .to_target(self.heads[0].predict_encoded(state, encs)?),
            self.scale
                .to_target(self.heads[1].predict_encoded(state, encs)?),
        ])
    }
}

/// `min(Q₁(s,a), Q₂(s,a))`.
pub fn predict_q_clipped(q: &TwinQCritic, state: &[f64], joint: &[Action]) -> Result<f64> {
    let [a, b] = q.predict_both(state, joint)?;
    Ok(a.min(b))
}

/// How the expectation over non-coalition actions is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginalization {
    /// Analytic for quadratic heads on discrete actions, enumeration when the
    /// non-coalition joint space is small and discrete, sampling otherwise.
    Auto,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub samples: usize,
    pub marginalization: Marginalization,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            marginalization: Marginalization::Auto,
        }
    }
}

/// Per-head estimates of `E_{a_{N∖C}∼π}[Q_j(s, a_C, a_{N∖C})]`.
pub fn marginal_q_per_head(
    q: &TwinQCritic,
    state: &[f64],
    coalition: Coalition,
    joint: &[Action],
    dists: &[ActionDist],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<[f64; 2]> {
    let n = q.spaces.len();
    if coalition.is_empty() {
        return Err(Error::arg("coalition must be nonempty"));
    }
    if dists.len() != n {
        return Err(Error::Dimension {
            context: "policy distributions",
            expected: n,
            got: dists.len(),
        });
    }
    let encs = q.encode(joint)?;
    let outside: Vec<usize> = (0..n).filter(|&i| !coalition.contains(i)).collect();
    if outside.is_empty() {
        return q.predict_both_encoded(state, &encs);
    }
    let discrete_outside = outside.iter().all(|&i| q.spaces[i].is_discrete());
    let both_quadratic = q.heads.iter().all(|h| matches!(h, QHead::Quadratic(_)));

    if cfg.marginalization == Marginalization::Auto && discrete_outside {
        if both_quadratic {
            let mut mean_encs = encs.clone();
            for &j in &outside {
                mean_encs[j] = dists[j]
                    .probs()
                    .ok_or_else(|| {
                        Error::arg(format!("agent {j} needs a categorical distribution"))
                    })?
                    .to_vec();
            }
            return q.predict_both_encoded(state, &mean_encs);
        }
        let counts: Vec<usize> = outside
            .iter()
            .map(|&i| q.spaces[i].encoding_dim())
            .collect();
        let size = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&s| s <= EXACT_ENUMERATION_LIMIT);
        if let Some(size) = size {
            let probs = outside
                .iter()
                .map(|&j| {
                    dists[j].probs().ok_or_else(|| {
                        Error::arg(format!("agent {j} needs a categorical distribution"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = [0.0; 2];
            let mut e = encs.clone();
            for k in 0..size {
                let picks = joint_from_index(&counts, k);
                let mut w = 1.0;
                for ((&j, &a), p) in outside.iter().zip(&picks).zip(&probs) {
                    w *= p[a];
                    e[j].iter_mut().for_each(|v| *v = 0.0);
                    e[j][a] = 1.0;
                }
                if w == 0.0 {
                    continue;
                }
                for (v, t) in q
                    .predict_both_encoded(state, &e)?
                    .iter()
                    .zip(total.iter_mut())
                {
                    *t += w * v;
                }
            }
            return Ok(total);
        }
    }

    if cfg.samples == 0 {
        return Err(Error::arg("Monte-Carlo sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = [0.0; 2];
    let mut e = encs;
    for _ in 0..cfg.samples {
        for &j in &outside {
            let a = dists[j].sample(&mut rng);
            let a = clamp_to_space(&q.spaces[j], a);
            e[j].clear();
            q.spaces[j].encode_into(&a, &mut e[j])?;
        }
        for (v, t) in q
            .predict_both_encoded(state, &e)?
            .iter()
            .zip(total.iter_mut())
        {
            *t += v;
        }
    }
    let k = cfg.samples as f64;
    Ok([total[0] / k, total[1] / k])
}

fn clamp_to_space(space: &ActionSpace, a: Action) -> Action {
    match (space, a) {
        (ActionSpace::Box { low, high, .. }, Action::Continuous(v)) => {
            Action::Continuous(v.into_iter().map(|x| x.clamp(*low, *high)).collect())
        }
        (_, a) => a,
    }
}

/// `A_C = min_j E[Q_j(s, a_C, a_{N∖C})] − V(s)`. Only the coalition members'
/// entries of `joint` are read when marginalising; `dists[i]` is agent `i`'s
/// current action distribution at this state.
#[allow(clippy::too_many_arguments)]
pub fn estimate_coalitional_advantage(
    q: &TwinQCritic,
    v: f64,
    state: &[f64],
    coalition: Coalition,
    joint: &[Action],
    dists: &[ActionDist],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<f64> {
    let [a, b] = marginal_q_per_head(q, state, coalition, joint, dists, cfg, seed)?;
    Ok(a.min(b) - v)
}

/// Exact `E_{a_{N∖C}∼π}[Q(s, a_C, a_{N∖C})]` for a quadratic critic on
/// discrete actions, by substituting each outside agent's probabilities for
/// its one-hot encoding.
pub fn marginalize_quadratic(
    critic: &QuadraticCritic,
    spaces: &[ActionSpace],
    state: &[f64],
    coalition: Coalition,
    joint: &[Action],
    dists: &[ActionDist],
) -> Result<f64> {
    if spaces.iter().any(|s| !s.is_discrete()) {
        return Err(Error::Unsupported(
            "quadratic marginalization requires discrete actions".into(),
        ));
    }
    let n = spaces.len();
    if joint.len() != n || dists.len() != n {
        return Err(Error::Dimension {
            context: "joint action",
            expected: n,
            got: joint.len().min(dists.len()),
        });
    }
    let mut encs = Vec::with_capacity(n);
    for i in 0..n {
        if coalition.contains(i) {
            let mut e = Vec::new();
            spaces[i].encode_into(&joint[i], &mut e)?;
            encs.push(e);
        } else {
            let p = dists[i].probs().ok_or_else(|| {
                Error::Unsupported("quadratic marginalization requires categorical policies".into())
            })?;
            encs.push(p.to_vec());
        }
    }
    QHead::Quadratic(critic.clone()).predict_encoded(state, &encs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub joint: Vec<Action>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticOptimizers {
    pub v: Optimizer,
    pub q: [Optimizer; 2],
}

impl CriticOptimizers {
    pub fn sgd(lr: f64) -> Self {
        Self {
            v: Optimizer::sgd(lr),
            q: [Optimizer::sgd(lr), Optimizer::sgd(lr)],
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            v: Optimizer::adam(lr),
            q: [Optimizer::adam(lr), Optimizer::adam(lr)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticLosses {
    pub v: f64,
    pub q: [f64; 2],
}

impl CriticLosses {
    pub fn total(&self) -> f64 {
        self.v + self.q[0] + self.q[1]
    }
}

/// One-step TD targets `y = r + γV(s')` (no bootstrap at terminal steps).
pub fn td_targets(v: &ValueCritic, batch: &[Transition], gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let next = if t.done {
                0.0
            } else {
                v.predict(&t.next_state)?
            };
            Ok(t.reward + gamma * next)
        })
        .collect()
}

/// Updates the target scale of both critics from a batch of targets,
/// rewriting output layers so current predictions are unchanged.
pub fn rescale_critics(v: &mut ValueCritic, q: &mut TwinQCritic, targets: &[f64], decay: f64) {
    let old = v.scale;
    let new = old.observe(targets, decay);
    v.net
        .rescale_output(old.std / new.std, &[(old.mean - new.mean) / new.std]);
    v.scale = new;
    let old_q = q.scale;
    let new_q = old_q.observe(targets, decay);
    for h in &mut q.heads {
        h.rescale(&old_q, &new_q);
    }
    q.scale = new_q;
}

/// Mean squared error of `V` against fixed targets, in the critic's raw
/// output units, and its gradient.
pub fn value_loss_and_grad(
    v: &ValueCritic,
    batch: &[Transition],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; v.net.params().len()];
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let trace = v.net.forward_trace(&t.state)?;
        let err = trace.output()[0] - v.scale.to_raw(*y);
        loss += err * err * scale;
        v.net.backward(&trace, &[2.0 * err * scale], &mut grad);
    }
    Ok((loss, grad))
}

/// Mean squared error of one Q head against fixed targets, in raw output
/// units, and its gradient.
pub fn q_loss_and_grad(
    q: &TwinQCritic,
    head: usize,
    batch: &[Transition],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let h = &q.heads[head];
    let mut grad = vec![0.0; h.params().len()];
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut scratch = vec![0.0; grad.len()];
    for (t, y) in batch.iter().zip(targets) {
        let encs = q.encode(&t.joint)?;
        // unit-scale ∂Q/∂θ, reweighted once the residual is known
        scratch.iter_mut().for_each(|g| *g = 0.0);
        let pred = h.accumulate_grad(&t.state, &encs, 1.0, &mut scratch)?;
        let err = pred - q.scale.to_raw(*y);
        loss += err * err * scale;
        let w = 2.0 * err * scale;
        for (g, s) in grad.iter_mut().zip(&scratch) {
            *g += w * s;
        }
    }
    Ok((loss, grad))
}

/// One gradient step of mean-squared TD error for `V` and both Q heads. The
/// targets are computed with the value network as it was before the step.
pub fn update_critics(
    v: &mut ValueCritic,
    q: &mut TwinQCritic,
    batch: &[Transition],
    opt: &mut CriticOptimizers,
    gamma: f64,
) -> Result<CriticLosses> {
    if batch.is_empty() {
        return Err(Error::arg("critic batch is empty"));
    }
    let targets = td_targets(v, batch, gamma)?;
    let (v_loss, v_grad) = value_loss_and_grad(v, batch, &targets)?;
    let (q0_loss, q0_grad) = q_loss_and_grad(q, 0, batch, &targets)?;
    let (q1_loss, q1_grad) = q_loss_and_grad(q, 1, batch, &targets)?;
    let losses = CriticLosses {
        v: v_loss,
        q: [q0_loss, q1_loss],
    };
    if !losses.total().is_finite() {
        return Err(Error::NonFinite(format!(
            "critic loss (v={v_loss}, q1={q0_loss}, q2={q1_loss}) over {} transitions",
            batch.len()
        )));
    }
    opt.v.step(v.net.params_mut(), &v_grad);
    opt.q[0].step(q.heads[0].params_mut(), &q0_grad);
    opt.q[1].step(q.heads[1].params_mut(), &q1_grad);
    Ok(losses)
}
