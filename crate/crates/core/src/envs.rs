//! Desk-scale cooperative environments: the Matrix Team Game, its
//! multi-peak variant, and Gaussian-potential differential games.
//!
//! All randomness is drawn from the spec's seed at construction, so two
//! environments built from the same spec are bit-identical.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{joint_from_index, joint_index, Action, ActionSpace};
use crate::error::{Error, Result};

pub const MATRIX_REWARD_RANGE: (f64, f64) = (-10.0, 20.0);
pub const DIFF_HEIGHT_RANGE: (f64, f64) = (5.0, 10.0);
pub const DIFF_WIDTH_RANGE: (f64, f64) = (1.0, 2.0);
pub const DIFF_ACTION_BOUND: f64 = 5.0;
/// Largest discrete joint-action space the oracle will enumerate.
pub const MATRIX_ORACLE_CAPACITY: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatrixVariant {
    Base,
    /// Background noise with `peaks` designated joint actions per step, one
    /// of which (the global peak) is strictly the best.
    Multipeak {
        peaks: usize,
        #[serde(default = "default_background")]
        background: (f64, f64),
        #[serde(default = "default_global_peak")]
        global_peak: (f64, f64),
        #[serde(default = "default_local_peak")]
        local_peak: (f64, f64),
    },
}

fn default_background() -> (f64, f64) {
    (-10.0, 0.0)
}
fn default_global_peak() -> (f64, f64) {
    (15.0, 20.0)
}
fn default_local_peak() -> (f64, f64) {
    (5.0, 12.0)
}

impl MatrixVariant {
    pub fn multipeak(peaks: usize) -> Self {
        MatrixVariant::Multipeak {
            peaks,
            background: default_background(),
            global_peak: default_global_peak(),
            local_peak: default_local_peak(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGameSpec {
    pub n_agents: usize,
    pub actions_per_agent: usize,
    #[serde(default = "default_matrix_horizon")]
    pub horizon: usize,
    #[serde(default = "default_variant")]
    pub variant: MatrixVariant,
    #[serde(default)]
    pub seed: u64,
}

fn default_matrix_horizon() -> usize {
    10
}
fn default_variant() -> MatrixVariant {
    MatrixVariant::Base
}

impl MatrixGameSpec {
    pub fn base(n_agents: usize, actions_per_agent: usize, seed: u64) -> Self {
        Self {
            n_agents,
            actions_per_agent,
            horizon: default_matrix_horizon(),
            variant: MatrixVariant::Base,
            seed,
        }
    }

    pub fn multipeak(n_agents: usize, actions_per_agent: usize, peaks: usize, seed: u64) -> Self {
        Self {
            variant: MatrixVariant::multipeak(peaks),
            ..Self::base(n_agents, actions_per_agent, seed)
        }
    }

    fn joint_size(&self) -> Option<usize> {
        (0..self.n_agents).try_fold(1usize, |acc, _| acc.checked_mul(self.actions_per_agent))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: key.into(),
            message: msg,
        };
        if self.n_agents < 2 {
            return Err(bad(
                "env.n_agents",
                format!("expected ≥ 2, got {}", self.n_agents),
            ));
        }
        if self.actions_per_agent < 2 {
            return Err(bad(
                "env.actions_per_agent",
                format!("expected ≥ 2, got {}", self.actions_per_agent),
            ));
        }
        if self.horizon == 0 {
            return Err(bad("env.horizon", "expected ≥ 1".into()));
        }
        let size = self
            .joint_size()
            .filter(|&s| s <= MATRIX_ORACLE_CAPACITY)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "joint action space exceeds {MATRIX_ORACLE_CAPACITY}"
                ))
            })?;
        if let MatrixVariant::Multipeak {
            peaks,
            background,
            global_peak,
            local_peak,
        } = &self.variant
        {
            if *peaks == 0 || *peaks > size {
                return Err(bad(
                    "env.variant.peaks",
                    format!("expected 1..={size}, got {peaks}"),
                ));
            }
            let within = |r: (f64, f64), lo: f64, hi: f64| r.0 <= r.1 && r.0 >= lo && r.1 <= hi;
            if !within(*background, -10.0, 0.0) {
                return Err(bad(
                    "env.variant.background",
                    "expected a sub-range of [-10, 0]".into(),
                ));
            }
            if !(global_peak.0 <= global_peak.1 && local_peak.0 <= local_peak.1) {
                return Err(bad("env.variant", "peak ranges must be ordered".into()));
            }
            if global_peak.0 <= local_peak.1
                || global_peak.0 <= background.1
                || local_peak.0 <= background.1
            {
                return Err(bad(
                    "env.variant.global_peak",
                    "global peaks must exceed local peaks, which must exceed the background".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One Gaussian potential field `h·exp(−‖x − c‖²/σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialField {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

impl PotentialField {
    fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c).powi(2))
            .sum();
        self.height * (-d2 / (self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffGameSpec {
    /// Each agent controls one coordinate of the joint action.
    pub n_agents: usize,
    #[serde(default = "default_fields")]
    pub fields: usize,
    #[serde(default = "default_diff_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit fields; when present they replace the seeded draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_fields: Option<Vec<PotentialField>>,
}

fn default_fields() -> usize {
    5
}
fn default_diff_horizon() -> usize {
    1
}

impl DiffGameSpec {
    pub fn seeded(n_agents: usize, fields: usize, seed: u64) -> Self {
        Self {
            n_agents,
            fields,
            horizon: 1,
            seed,
            explicit_fields: None,
        }
    }

    pub fn with_fields(n_agents: usize, fields: Vec<PotentialField>) -> Self {
        Self {
            n_agents,
            fields: fields.len(),
            horizon: 1,
            seed: 0,
            explicit_fields: Some(fields),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: key.into(),
            message: msg,
        };
        if !(1..=5).contains(&self.n_agents) {
            return Err(bad(
                "env.n_agents",
                format!("expected 1..=5, got {}", self.n_agents),
            ));
        }
        if self.horizon == 0 {
            return Err(bad("env.horizon", "expected ≥ 1".into()));
        }
        if let Some(fields) = &self.explicit_fields {
            if fields.is_empty() {
                return Err(bad(
                    "env.explicit_fields",
                    "at least one field is required".into(),
                ));
            }
            for f in fields {
                if f.center.len() != self.n_agents
                    || f.center
                        .iter()
                        .any(|c| c.abs() > DIFF_ACTION_BOUND || !c.is_finite())
                {
                    return Err(bad(
                        "env.explicit_fields.center",
                        "expected coordinates within [-5, 5]".into(),
                    ));
                }
                if !(DIFF_HEIGHT_RANGE.0..=DIFF_HEIGHT_RANGE.1).contains(&f.height) {
                    return Err(bad(
                        "env.explicit_fields.height",
                        format!("expected [5, 10], got {}", f.height),
                    ));
                }
                if !(DIFF_WIDTH_RANGE.0..=DIFF_WIDTH_RANGE.1).contains(&f.width) {
                    return Err(bad(
                        "env.explicit_fields.width",
                        format!("expected [1, 2], got {}", f.width),
                    ));
                }
            }
        } else if self.fields == 0 {
            return Err(bad("env.fields", "expected ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvSpec {
    Matrix(MatrixGameSpec),
    Differential(DiffGameSpec),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Matrix(MatrixGameSpec::base(2, 5, 0))
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Matrix(s) => s.validate(),
            EnvSpec::Differential(s) => s.validate(),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvSpec::Matrix(s) => s.n_agents,
            EnvSpec::Differential(s) => s.n_agents,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Matrix(s) => s.horizon,
            EnvSpec::Differential(s) => s.horizon,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EnvSpec::Matrix(s) => s.seed,
            EnvSpec::Differential(s) => s.seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON form (sorted keys).
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("env spec serializes");
        let mut h = Sha256::new();
        h.update(value.to_string().as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// A constructed game: the spec plus everything drawn from its seed.
#[derive(Debug, Clone, PartialEq)]
pub enum Game {
    Matrix(MatrixGame),
    Differential(DiffGame),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    pub spec: MatrixGameSpec,
    /// `rewards[t][joint_index]`.
    pub rewards: Vec<Vec<f64>>,
    /// Peak joint indices per step, global peak first (multipeak only).
    pub peaks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffGame {
    pub spec: DiffGameSpec,
    pub fields: Vec<PotentialField>,
}

impl MatrixGame {
    fn build(spec: &MatrixGameSpec) -> Self {
        let size = spec.joint_size().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut rewards = Vec::with_capacity(spec.horizon);
        let mut peaks = Vec::new();
        for _ in 0..spec.horizon {
            match &spec.variant {
                MatrixVariant::Base => {
                    let (lo, hi) = MATRIX_REWARD_RANGE;
                    rewards.push((0..size).map(|_| rng.gen_range(lo..=hi)).collect());
                }
                MatrixVariant::Multipeak {
                    peaks: count,
                    background,
                    global_peak,
                    local_peak,
                } => {
                    let mut step: Vec<f64> = (0..size)
                        .map(|_| rng.gen_range(background.0..=background.1))
                        .collect();
                    let chosen: Vec<usize> = index::sample(&mut rng, size, *count).into_vec();
                    for (k, &j) in chosen.iter().enumerate() {
                        step[j] = if k == 0 {
                            rng.gen_range(global_peak.0..=global_peak.1)
                        } else {
                            rng.gen_range(local_peak.0..=local_peak.1)
                        };
                    }
                    rewards.push(step);
                    peaks.push(chosen);
                }
            }
        }
        Self {
            spec: spec.clone(),
            rewards,
            peaks,
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        vec![self.spec.actions_per_agent; self.spec.n_agents]
    }

    pub fn reward(&self, step: usize, actions: &[usize]) -> f64 {
        self.rewards[step][joint_index(&self.counts(), actions)]
    }

    /// Per-step best joint action and its reward.
    pub fn step_optimum(&self, step: usize) -> (Vec<usize>, f64) {
        let row = &self.rewards[step];
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        (joint_from_index(&self.counts(), best), row[best])
    }
}

impl DiffGame {
    fn build(spec: &DiffGameSpec) -> Self {
        let fields = match &spec.explicit_fields {
            Some(f) => f.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                (0..spec.fields)
                    .map(|_| PotentialField {
                        center: (0..spec.n_agents)
                            .map(|_| rng.gen_range(-DIFF_ACTION_BOUND..=DIFF_ACTION_BOUND))
                            .collect(),
                        height: rng.gen_range(DIFF_HEIGHT_RANGE.0..=DIFF_HEIGHT_RANGE.1),
                        width: rng.gen_range(DIFF_WIDTH_RANGE.0..=DIFF_WIDTH_RANGE.1),
                    })
                    .collect()
            }
        };
        Self {
            spec: spec.clone(),
            fields,
        }
    }

    pub fn reward(&self, x: &[f64]) -> f64 {
        self.fields.iter().map(|f| f.value(x)).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for f in &self.fields {
            let v = f.value(x);
            let s2 = f.width * f.width;
            for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(&f.center)) {
                *gi += -2.0 * (xi - ci) / s2 * v;
            }
        }
        g
    }

    /// Projected gradient ascent with backtracking from `x`.
    fn local_ascent(&self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        let b = DIFF_ACTION_BOUND;
        let mut fx = self.reward(&x);
        let mut step = 0.1;
        for _ in 0..2000 {
            let g = self.gradient(&x);
            let mut improved = false;
            while step > 1e-14 {
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .map(|(xi, gi)| (xi + step * gi).clamp(-b, b))
                    .collect();
                let fc = self.reward(&cand);
                if fc > fx {
                    let moved = cand
                        .iter()
                        .zip(&x)
                        .map(|(a, c)| (a - c).abs())
                        .fold(0.0, f64::max);
                    x = cand;
                    fx = fc;
                    improved = moved > 1e-13;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (x, fx)
    }

    /// Global maximum of the reward over the action box: dense grid (0.01 for
    /// two agents, coarser for more) followed by local ascent from the best
    /// grid points and from every field center.
    pub fn optimum(&self) -> (Vec<f64>, f64) {
        let n = self.spec.n_agents;
        let b = DIFF_ACTION_BOUND;
        let spacing = match n {
            1 | 2 => 0.01,
            3 => 0.1,
            _ => 0.5,
        };
        let per_dim = (2.0 * b / spacing).round() as usize + 1;
        let total = per_dim.pow(n as u32);
        let keep = 16;
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(keep + 1);
        let mut point = vec![0.0; n];
        for k in 0..total {
            let mut rem = k;
            for p in point.iter_mut() {
                *p = -b + (rem % per_dim) as f64 * spacing;
                rem /= per_dim;
            }
            let v = self.reward(&point);
            if best.len() < keep || v > best[best.len() - 1].0 {
                best.push((v, k));
                best.sort_by(|a, c| c.0.total_cmp(&a.0));
                best.truncate(keep);
            }
        }
        let mut starts: Vec<Vec<f64>> = best
            .iter()
            .map(|&(_, k)| {
                let mut rem = k;
                (0..n)
                    .map(|_| {
                        let v = -b + (rem % per_dim) as f64 * spacing;
                        rem /= per_dim;
                        v
                    })
                    .collect()
            })
            .collect();
        starts.extend(self.fields.iter().map(|f| f.center.clone()));
        starts
            .into_iter()
            .map(|s| self.local_ascent(s))
            .max_by(|a, c| a.1.total_cmp(&c.1))
            .expect("at least one start point")
    }
}

impl Game {
    pub fn new(spec: &EnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            EnvSpec::Matrix(s) => Game::Matrix(MatrixGame::build(s)),
            EnvSpec::Differential(s) => Game::Differential(DiffGame::build(s)),
        })
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Game::Matrix(g) => g.spec.n_agents,
            Game::Differential(g) => g.spec.n_agents,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Game::Matrix(g) => g.spec.horizon,
            Game::Differential(g) => g.spec.horizon,
        }
    }

    pub fn action_space(&self, _agent: usize) -> ActionSpace {
        match self {
            Game::Matrix(g) => ActionSpace::Discrete {
                n: g.spec.actions_per_agent,
            },
            Game::Differential(_) => ActionSpace::Box {
                dim: 1,
                low: -DIFF_ACTION_BOUND,
                high: DIFF_ACTION_BOUND,
            },
        }
    }

    pub fn action_spaces(&self) -> Vec<ActionSpace> {
        (0..self.n_agents()).map(|i| self.action_space(i)).collect()
    }

    /// Width of the global state (and of every agent's observation).
    pub fn state_dim(&self) -> usize {
        match self {
            Game::Matrix(g) => g.spec.horizon,
            Game::Differential(_) => 1,
        }
    }

    /// Global state at step `t`: one-hot step index for matrix games (all
    /// zeros once the episode has ended), a constant for differential games.
    pub fn state_at(&self, t: usize) -> Vec<f64> {
        match self {
            Game::Matrix(g) => {
                let mut s = vec![0.0; g.spec.horizon];
                if t < g.spec.horizon {
                    s[t] = 1.0;
                }
                s
            }
            Game::Differential(_) => vec![1.0],
        }
    }

    pub fn reward(&self, t: usize, joint: &[Action]) -> Result<f64> {
        if joint.len() != self.n_agents() {
            return Err(Error::Dimension {
                context: "joint action",
                expected: self.n_agents(),
                got: joint.len(),
            });
        }
        match self {
            Game::Matrix(g) => {
                let n = g.spec.actions_per_agent;
                let acts = joint
                    .iter()
                    .map(|a| match a.as_discrete() {
                        Some(k) if k < n => Ok(k),
                        _ => Err(Error::arg(format!(
                            "discrete action {a:?} out of range 0..{n}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(g.reward(t.min(g.spec.horizon - 1), &acts))
            }
            Game::Differential(g) => {
                let x = joint
                    .iter()
                    .map(|a| match a.as_continuous() {
                        Some([v]) if v.is_finite() => {
                            Ok(v.clamp(-DIFF_ACTION_BOUND, DIFF_ACTION_BOUND))
                        }
                        _ => Err(Error::arg(format!(
                            "expected a scalar continuous action, got {a:?}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(g.reward(&x))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    /// Per-agent observations after the step.
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Index of the step just taken.
    pub step_index: usize,
}

/// A running episode over a shared [`Game`].
#[derive(Debug, Clone)]
pub struct Env<'g> {
    game: &'g Game,
    t: usize,
}

pub fn make_env(game: &Game) -> Env<'_> {
    Env { game, t: 0 }
}

impl<'g> Env<'g> {
    pub fn game(&self) -> &'g Game {
        self.game
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn state(&self) -> Vec<f64> {
        self.game.state_at(self.t)
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        vec![self.state(); self.game.n_agents()]
    }

    pub fn reset(&mut self) -> Vec<Vec<f64>> {
        self.t = 0;
        self.observations()
    }

    pub fn step(&mut self, joint: &[Action]) -> Result<EnvStepResult> {
        if self.t >= self.game.horizon() {
            return Err(Error::arg("episode already finished; call reset"));
        }
        let reward = self.game.reward(self.t, joint)?;
        let step_index = self.t;
        self.t += 1;
        Ok(EnvStepResult {
            observations: self.observations(),
            state: self.state(),
            reward,
            done: self.t >= self.game.horizon(),
            step_index,
        })
    }
}

/// Best achievable episode return and, for differential games, where it is
/// attained.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptimum {
    pub value: f64,
    pub argmax: Option<Vec<f64>>,
}

pub fn oracle_optimal_return(spec: &EnvSpec) -> Result<OracleOptimum> {
    oracle_for_game(&Game::new(spec)?)
}

pub fn oracle_for_game(game: &Game) -> Result<OracleOptimum> {
    match game {
        Game::Matrix(g) => Ok(OracleOptimum {
            value: (0..g.spec.horizon).map(|t| g.step_optimum(t).1).sum(),
            argmax: None,
        }),
        Game::Differential(g) => {
            if g.spec.n_agents > 5 {
                return Err(Error::Capacity(
                    "differential oracle supports at most 5 agents".into(),
                ));
            }
            let (x, v) = g.optimum();
            Ok(OracleOptimum {
                value: v * g.spec.horizon as f64,
                argmax: Some(x),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_field() -> DiffGameSpec {
        DiffGameSpec::with_fields(
            2,
            vec![PotentialField {
                center: vec![1.0, -2.0],
                height: 7.0,
                width: 1.5,
            }],
        )
    }

    #[test]
    fn same_seed_same_rewards() {
        let spec = EnvSpec::Matrix(MatrixGameSpec::base(2, 5, 42));
        assert_eq!(Game::new(&spec).unwrap(), Game::new(&spec).unwrap());
        let other = EnvSpec::Matrix(MatrixGameSpec::base(2, 5, 43));
        assert_ne!(Game::new(&spec).unwrap(), Game::new(&other).unwrap());
    }

    #[test]
    fn base_entries_within_range() {
        let Game::Matrix(g) = Game::new(&EnvSpec::Matrix(MatrixGameSpec::base(3, 4, 1))).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(g.rewards.len(), 10);
        assert!(g
            .rewards
            .iter()
            .flatten()
            .all(|v| (-10.0..=20.0).contains(v)));
    }

    #[test]
    fn multipeak_structure() {
        let Game::Matrix(g) =
            Game::new(&EnvSpec::Matrix(MatrixGameSpec::multipeak(2, 5, 5, 9))).unwrap()
        else {
            unreachable!()
        };
        for (t, row) in g.rewards.iter().enumerate() {
            let above: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
            assert_eq!(above.len(), 5);
            let (best, v) = g.step_optimum(t);
            assert_eq!(joint_index(&g.counts(), &best), g.peaks[t][0]);
            let second = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != g.peaks[t][0])
                .map(|(_, v)| *v)
                .fold(f64::MIN, f64::max);
            assert!(v - second >= 3.0);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(Game::new(&EnvSpec::Matrix(MatrixGameSpec::multipeak(2, 2, 5, 0))).is_err());
        assert!(Game::new(&EnvSpec::Matrix(MatrixGameSpec::base(1, 5, 0))).is_err());
        let mut s = single_field();
        s.explicit_fields.as_mut().unwrap()[0].height = 11.0;
        assert!(Game::new(&EnvSpec::Differential(s)).is_err());
        assert!(matches!(
            Game::new(&EnvSpec::Matrix(MatrixGameSpec::base(12, 5, 0))),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn differential_rewards() {
        let game = Game::new(&EnvSpec::Differential(single_field())).unwrap();
        let at = |x: f64, y: f64| {
            game.reward(
                0,
                &[Action::Continuous(vec![x]), Action::Continuous(vec![y])],
            )
            .unwrap()
        };
        assert!((at(1.0, -2.0) - 7.0).abs() < 1e-12);
        assert!((at(1.0 + 1.5, -2.0) - 7.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn matrix_step_is_lookup_and_episode_ends() {
        let game = Game::new(&EnvSpec::Matrix(MatrixGameSpec::base(2, 3, 5))).unwrap();
        let Game::Matrix(g) = &game else {
            unreachable!()
        };
        let mut env = make_env(&game);
        env.reset();
        for t in 0..10 {
            let r = env
                .step(&[Action::Discrete(2), Action::Discrete(1)])
                .unwrap();
            assert_eq!(r.reward, g.rewards[t][2 * 3 + 1]);
            assert_eq!(r.done, t == 9);
        }
        assert!(env
            .step(&[Action::Discrete(0), Action::Discrete(0)])
            .is_err());
        env.reset();
        assert!(env
            .step(&[Action::Discrete(3), Action::Discrete(0)])
            .is_err());
    }

    #[test]
    fn oracle_values() {
        let spec = EnvSpec::Matrix(MatrixGameSpec::base(2, 5, 3));
        let Game::Matrix(g) = Game::new(&spec).unwrap() else {
            unreachable!()
        };
        let expect: f64 = g
            .rewards
            .iter()
            .map(|r| r.iter().cloned().fold(f64::MIN, f64::max))
            .sum();
        assert_eq!(oracle_optimal_return(&spec).unwrap().value, expect);

        let o = oracle_optimal_return(&EnvSpec::Differential(single_field())).unwrap();
        assert!((o.value - 7.0).abs() < 1e-9);
        let x = o.argmax.unwrap();
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn spec_json_round_trip_and_digest() {
        let spec = EnvSpec::Matrix(MatrixGameSpec::multipeak(2, 5, 10, 7));
        let text = serde_json::to_string(&spec).unwrap();
        let back: EnvSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.digest(), spec.digest());
        let err = serde_json::from_str::<EnvSpec>(
            r#"{"kind":"matrix","n_agents":2,"actions_per_agent":5,"bogus":1}"#,
        );
        assert!(err.is_err());
    }
}
