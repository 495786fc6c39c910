//! Rollout collection, per-timestep credit assignment, actor and critic
//! updates, and the coalition-sampling benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::coalition::{
    all_proper, exact_violation_ratio, sample_coalitions, solve_core, solve_core_with,
    CoalitionAdvantageTable, CoreSolveOptions, CoreStatus, SamplingMode, SamplingPlan,
    DEFAULT_LAMBDA_REG,
};
use crate::config::{derive_seed, mean_ci95, mix_seed, CurveRow};
use crate::critics::{
    estimate_coalitional_advantage, gae_advantages, rescale_critics, td_targets, update_critics,
    CriticLosses, CriticOptimizers, EstimatorConfig, GaeConfig, Marginalization, QCriticKind,
    Transition, TwinQCritic, ValueCritic, DEFAULT_MC_SAMPLES, TARGET_SCALE_DECAY,
};
use crate::envs::{EnvSpec, Game};
use crate::error::{Error, Result};
use crate::nn::Optimizer;
use crate::policy::{ppo_actor_update, Policy, PpoConfig, PpoSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Regularized least-core credits.
    Cora,
    /// Least-core credits with the variance term replaced by a min-norm
    /// tie-break.
    CoraNoStd,
    /// Every agent receives the full grand advantage.
    SharedAdvantage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub sampling: SamplingMode,
    pub lambda_reg: f64,
    /// Monte-Carlo samples per coalition estimate.
    pub mc_samples: usize,
    pub q_critic: QCriticKind,
    pub ppo: PpoConfig,
    pub critic_lr: f64,
    /// Critic gradient steps per collected batch.
    pub critic_steps: usize,
    /// Track the scale of the TD targets and learn critics in standardised
    /// units (outputs are preserved whenever the scale moves).
    pub normalize_targets: bool,
    pub gae: GaeConfig,
    pub total_env_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub parallel_envs: usize,
    pub seed: u64,
    pub normalize_advantages: bool,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Hidden sizes of the quadratic critic's coefficient network; empty
    /// means tabular by state.
    pub quadratic_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub qp_max_iter: Option<usize>,
}

impl TrainConfig {
    pub fn defaults_for(env: &EnvSpec) -> Self {
        let n = env.n_agents().max(2);
        let (ppo, critic_lr, q_critic, total, eval_every) = match env {
            EnvSpec::Matrix(_) => (
                PpoConfig::matrix(),
                5e-3,
                QCriticKind::Quadratic,
                200_000,
                2_000,
            ),
            EnvSpec::Differential(_) => (
                PpoConfig::differential(),
                5e-4,
                QCriticKind::Mlp,
                100_000,
                1_000,
            ),
        };
        Self {
            algorithm: Algorithm::Cora,
            sampling: SamplingPlan::half(n, 0).mode,
            lambda_reg: DEFAULT_LAMBDA_REG,
            mc_samples: DEFAULT_MC_SAMPLES,
            q_critic,
            ppo,
            critic_lr,
            critic_steps: 1,
            normalize_targets: true,
            gae: GaeConfig::default(),
            total_env_steps: total,
            eval_every,
            eval_episodes: 4,
            parallel_envs: 4,
            seed: 0,
            normalize_advantages: false,
            policy_hidden: vec![64],
            critic_hidden: vec![64],
            quadratic_hidden: Vec::new(),
            init_log_std: 0.0,
            qp_max_iter: None,
        }
    }

    pub fn validate(&self, env: &EnvSpec) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("train.{key}"),
                message,
            })
        };
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(
                "lambda_reg",
                format!("expected ≥ 0, got {}", self.lambda_reg),
            );
        }
        if self.algorithm == Algorithm::Cora && self.lambda_reg == 0.0 {
            return bad(
                "lambda_reg",
                "cora needs a positive weight; use cora_no_std for zero".into(),
            );
        }
        if self.critic_steps == 0 {
            return bad("critic_steps", "expected ≥ 1".into());
        }
        if self.mc_samples == 0 {
            return bad("mc_samples", "expected ≥ 1".into());
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return bad("critic_lr", format!("expected > 0, got {}", self.critic_lr));
        }
        if self.parallel_envs == 0 {
            return bad("parallel_envs", "expected ≥ 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "expected ≥ 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "expected ≥ 1".into());
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std", "expected a finite value".into());
        }
        if self.q_critic == QCriticKind::Quadratic && matches!(env, EnvSpec::Differential(_)) {
            return bad(
                "q_critic",
                "the quadratic critic supports discrete actions only".into(),
            );
        }
        self.ppo.validate()?;
        self.gae.validate()?;
        SamplingPlan {
            mode: self.sampling,
            seed: 0,
        }
        .validate(env.n_agents())
        .map_err(|e| Error::Config {
            key: "train.sampling".into(),
            message: e.to_string(),
        })
    }
}

/// One joint transition, with the per-step fields filled in by
/// [`assign_credits`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    /// Actions as sampled (used for log-probabilities).
    pub actions: Vec<Action>,
    /// Actions as executed (clamped into the action box).
    pub env_actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub next_state: Vec<f64>,
    pub grand_advantage: f64,
    pub credits: Vec<f64>,
    pub epsilon: f64,
    pub qp_iterations: usize,
    /// False when the allocation QP failed and the step is left out of the
    /// actor update.
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    /// `V` of the state after the last step, or 0 if it was terminal.
    pub bootstrap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_agents: usize,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBatch {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.trajectories.iter().flat_map(|t| &t.steps)
    }

    pub fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.steps()
            .map(|s| Transition {
                state: s.state.clone(),
                joint: s.env_actions.clone(),
                reward: s.reward,
                next_state: s.next_state.clone(),
                done: s.done,
            })
            .collect()
    }
}

/// Runs every environment instance for `steps` steps starting at its
/// cursor (the within-episode step index), resetting on episode end.
/// Instance `e` draws from its own stream seeded by `mix_seed(seed, e)`.
pub fn collect_rollouts(
    game: &Game,
    policies: &[Policy],
    v: &ValueCritic,
    cursors: &mut [usize],
    steps: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let n = game.n_agents();
    if policies.len() != n {
        return Err(Error::Dimension {
            context: "policies",
            expected: n,
            got: policies.len(),
        });
    }
    let horizon = game.horizon();
    let results: Vec<Result<(Trajectory, usize)>> = cursors
        .par_iter()
        .enumerate()
        .map(|(e, &start)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, e as u64));
            let mut t = start;
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                let state = game.state_at(t);
                let observations = vec![state.clone(); n];
                let mut actions = Vec::with_capacity(n);
                let mut env_actions = Vec::with_capacity(n);
                let mut old_log_probs = Vec::with_capacity(n);
                for (p, o) in policies.iter().zip(&observations) {
                    let (a, lp) = p.sample_action(o, &mut rng)?;
                    env_actions.push(p.clamp(a.clone()));
                    actions.push(a);
                    old_log_probs.push(lp);
                }
                let reward = game
                    .reward(t, &env_actions)
                    .map_err(|err| Error::arg(format!("environment {e} at step {t}: {err}")))?;
                let value = v.predict(&state)?;
                let done = t + 1 >= horizon;
                let next_state = game.state_at(t + 1);
                out.push(StepRecord {
                    t,
                    state,
                    observations,
                    actions,
                    env_actions,
                    old_log_probs,
                    reward,
                    value,
                    done,
                    next_state,
                    grand_advantage: 0.0,
                    credits: Vec::new(),
                    epsilon: 0.0,
                    qp_iterations: 0,
                    usable: true,
                });
                t = if done { 0 } else { t + 1 };
            }
            let bootstrap = match out.last() {
                Some(s) if !s.done => v.predict(&s.next_state)?,
                _ => 0.0,
            };
            Ok((
                Trajectory {
                    steps: out,
                    bootstrap,
                },
                t,
            ))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(results.len());
    for (slot, r) in cursors.iter_mut().zip(results) {
        let (traj, next) = r?;
        *slot = next;
        trajectories.push(traj);
    }
    Ok(RolloutBatch {
        n_agents: n,
        trajectories,
    })
}

/// Fills `grand_advantage` on every step with GAE over its trajectory.
pub fn compute_grand_advantages(batch: &mut RolloutBatch, cfg: &GaeConfig) -> Result<()> {
    for traj in &mut batch.trajectories {
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
        let adv = gae_advantages(&rewards, &values, traj.bootstrap, cfg, &dones)?;
        for (s, a) in traj.steps.iter_mut().zip(adv) {
            s.grand_advantage = a;
        }
    }
    Ok(())
}

/// Settings for [`assign_credits`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditSettings {
    pub algorithm: Algorithm,
    pub sampling: SamplingMode,
    pub lambda_reg: f64,
    pub estimator: EstimatorConfig,
    pub qp_max_iter: Option<usize>,
    pub seed: u64,
}

impl CreditSettings {
    pub fn from_config(cfg: &TrainConfig, seed: u64) -> Self {
        Self {
            algorithm: cfg.algorithm,
            sampling: cfg.sampling,
            lambda_reg: cfg.lambda_reg,
            estimator: EstimatorConfig {
                samples: cfg.mc_samples,
                marginalization: Marginalization::Auto,
            },
            qp_max_iter: cfg.qp_max_iter,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CreditStats {
    pub mean_epsilon: f64,
    pub max_epsilon: f64,
    pub qp_iters_mean: f64,
    pub retried: usize,
    pub dropped: usize,
    /// Largest `|Σ_i Â_i − A_N|` over usable steps.
    pub efficiency_residual: f64,
}

/// Iteration budget the QP solver uses when none is given.
fn default_qp_budget(constraints: usize) -> usize {
    50 * (constraints + 2)
}

/// Builds the coalition table for one step.
pub fn coalition_table(
    step: &StepRecord,
    q: &TwinQCritic,
    policies: &[Policy],
    coalitions: &[crate::coalition::Coalition],
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<CoalitionAdvantageTable> {
    let dists = policies
        .iter()
        .zip(&step.observations)
        .map(|(p, o)| p.dist(o))
        .collect::<Result<Vec<_>>>()?;
    let entries = coalitions
        .iter()
        .map(|&c| {
            let a = estimate_coalitional_advantage(
                q,
                step.value,
                &step.state,
                c,
                &step.env_actions,
                &dists,
                estimator,
                mix_seed(seed, c.mask() as u64),
            )?;
            Ok((c, a))
        })
        .collect::<Result<Vec<_>>>()?;
    CoalitionAdvantageTable::new(policies.len(), entries, step.grand_advantage)
}

/// Per-agent credits for every step, using critics and policies as they are
/// now. Steps within one trajectory are solved in order with warm starts;
/// trajectories are processed in parallel.
pub fn assign_credits(
    batch: &mut RolloutBatch,
    q: &TwinQCritic,
    policies: &[Policy],
    settings: &CreditSettings,
) -> Result<CreditStats> {
    let n = batch.n_agents;
    if settings.algorithm == Algorithm::SharedAdvantage {
        for s in batch
            .trajectories
            .iter_mut()
            .flat_map(|t| t.steps.iter_mut())
        {
            s.credits = vec![s.grand_advantage; n];
            s.epsilon = 0.0;
            s.qp_iterations = 0;
            s.usable = true;
        }
        return Ok(CreditStats::default());
    }
    let lambda = match settings.algorithm {
        Algorithm::CoraNoStd => 0.0,
        _ => settings.lambda_reg,
    };
    let results: Vec<Result<usize>> = batch
        .trajectories
        .par_iter_mut()
        .enumerate()
        .map(|(e, traj)| {
            let mut warm: Option<Vec<f64>> = None;
            let mut retried = 0;
            for (k, step) in traj.steps.iter_mut().enumerate() {
                let step_seed = mix_seed(settings.seed, ((e as u64) << 32) | k as u64);
                let plan = SamplingPlan {
                    mode: settings.sampling,
                    seed: step_seed,
                };
                let coalitions = sample_coalitions(n, &plan)?;
                let table = coalition_table(
                    step,
                    q,
                    policies,
                    &coalitions,
                    &settings.estimator,
                    step_seed,
                )?;
                let mut opts = CoreSolveOptions::new(lambda);
                opts.max_iter = settings.qp_max_iter;
                opts.warm_start = warm.take();
                let mut alloc = solve_core_with(&table, &opts)?;
                if alloc.status == CoreStatus::MaxIter {
                    retried += 1;
                    opts.max_iter = Some(
                        2 * settings
                            .qp_max_iter
                            .unwrap_or(default_qp_budget(coalitions.len())),
                    );
                    alloc = solve_core_with(&table, &opts)?;
                }
                step.usable = alloc.status == CoreStatus::Optimal;
                step.epsilon = alloc.epsilon;
                step.qp_iterations = alloc.iterations;
                if step.usable {
                    warm = Some(alloc.per_agent.clone());
                }
                step.credits = alloc.per_agent;
            }
            Ok(retried)
        })
        .collect();
    let mut stats = CreditStats::default();
    for r in results {
        stats.retried += r?;
    }
    let total = batch.len().max(1) as f64;
    for s in batch.steps() {
        stats.mean_epsilon += s.epsilon / total;
        stats.max_epsilon = stats.max_epsilon.max(s.epsilon);
        stats.qp_iters_mean += s.qp_iterations as f64 / total;
        if s.usable {
            let resid = (s.credits.iter().sum::<f64>() - s.grand_advantage).abs();
            stats.efficiency_residual = stats.efficiency_residual.max(resid);
        } else {
            stats.dropped += 1;
        }
    }
    Ok(stats)
}

/// Per-agent actor batches from usable steps, optionally standardising
/// each agent's credits over the batch.
pub fn actor_batches(batch: &RolloutBatch, normalize: bool) -> Vec<Vec<PpoSample>> {
    (0..batch.n_agents)
        .map(|i| {
            let mut samples: Vec<PpoSample> = batch
                .steps()
                .filter(|s| s.usable)
                .map(|s| PpoSample {
                    obs: s.observations[i].clone(),
                    action: s.actions[i].clone(),
                    old_log_prob: s.old_log_probs[i],
                    advantage: s.credits[i],
                })
                .collect();
            if normalize && samples.len() > 1 {
                let m = samples.len() as f64;
                let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / m;
                let var = samples
                    .iter()
                    .map(|s| (s.advantage - mean).powi(2))
                    .sum::<f64>()
                    / m;
                let sd = var.sqrt().max(1e-8);
                samples
                    .iter_mut()
                    .for_each(|s| s.advantage = (s.advantage - mean) / sd);
            }
            samples
        })
        .collect()
}

/// Policies, critics and their optimizer states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub policies: Vec<Policy>,
    pub v: ValueCritic,
    pub q: TwinQCritic,
    pub actor_opts: Vec<Optimizer>,
    pub critic_opts: CriticOptimizers,
}

impl Learner {
    pub fn new(game: &Game, cfg: &TrainConfig) -> Self {
        let spaces = game.action_spaces();
        let sd = game.state_dim();
        let mut policy_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "policy-init"));
        let policies = spaces
            .iter()
            .map(|s| Policy::new(s, sd, &cfg.policy_hidden, cfg.init_log_std, &mut policy_rng))
            .collect();
        let mut critic_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "critic-init"));
        let v = ValueCritic::new(sd, &cfg.critic_hidden, &mut critic_rng);
        let q_hidden = match cfg.q_critic {
            QCriticKind::Mlp => &cfg.critic_hidden,
            QCriticKind::Quadratic => &cfg.quadratic_hidden,
        };
        let q = TwinQCritic::new(&cfg.q_critic, sd, &spaces, q_hidden, &mut critic_rng);
        Self {
            actor_opts: vec![Optimizer::adam(cfg.ppo.actor_lr); spaces.len()],
            critic_opts: CriticOptimizers::adam(cfg.critic_lr),
            policies,
            v,
            q,
        }
    }
}

/// Mean and 95% interval of greedy-policy episode returns.
pub fn evaluate(game: &Game, policies: &[Policy], episodes: usize) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut total = 0.0;
        for t in 0..game.horizon() {
            let state = game.state_at(t);
            let joint = policies
                .iter()
                .map(|p| Ok(p.clamp(p.greedy_action(&state)?)))
                .collect::<Result<Vec<_>>>()?;
            total += game.reward(t, &joint)?;
        }
        returns.push(total);
    }
    Ok(mean_ci95(&returns))
}

/// Greedy joint action at the first step (clamped), e.g. the learned
/// Gaussian means in a one-shot differential game.
pub fn greedy_joint(game: &Game, policies: &[Policy]) -> Result<Vec<Action>> {
    let state = game.state_at(0);
    policies
        .iter()
        .map(|p| Ok(p.clamp(p.greedy_action(&state)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub update: u64,
    pub step: u64,
    pub mean_reward: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub critic_loss: f64,
    pub mean_epsilon: f64,
    pub max_epsilon: f64,
    pub qp_iters_mean: f64,
    pub qp_retried: usize,
    pub qp_dropped: usize,
    pub efficiency_residual: f64,
}

pub const DIAG_COLUMNS: &str = "update,step,mean_reward,surrogate,entropy,clip_fraction,critic_loss,mean_epsilon,max_epsilon,qp_iters_mean,qp_retried,qp_dropped,efficiency_residual";

pub fn diag_csv(rows: &[DiagRow]) -> String {
    let mut out = format!("{DIAG_COLUMNS}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.update,
            r.step,
            r.mean_reward,
            r.surrogate,
            r.entropy,
            r.clip_fraction,
            r.critic_loss,
            r.mean_epsilon,
            r.max_epsilon,
            r.qp_iters_mean,
            r.qp_retried,
            r.qp_dropped,
            r.efficiency_residual
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub curve: Vec<CurveRow>,
    pub diag: Vec<DiagRow>,
    pub learner: Learner,
    pub env_steps: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Window {
    actor_loss: f64,
    critic_loss: f64,
    epsilon: f64,
    qp_iters: f64,
    updates: usize,
}

impl Window {
    fn row(&mut self, step: u64, eval: (f64, f64)) -> CurveRow {
        let k = self.updates.max(1) as f64;
        let row = CurveRow {
            step,
            eval_return_mean: eval.0,
            eval_return_ci95: eval.1,
            actor_loss: self.actor_loss / k,
            critic_loss: self.critic_loss / k,
            mean_epsilon: self.epsilon / k,
            qp_iters_mean: self.qp_iters / k,
        };
        *self = Window::default();
        row
    }
}

/// Collect → credit → actor update → critic update, until the step budget is
/// spent. Evaluates at step 0, then whenever `eval_every` more environment
/// steps have elapsed, and once at the end.
pub fn train(cfg: &TrainConfig, env: &EnvSpec) -> Result<TrainRun> {
    cfg.validate(env)?;
    let game = Game::new(env)?;
    let mut learner = Learner::new(&game, cfg);
    let horizon = game.horizon();
    let mut cursors = vec![0usize; cfg.parallel_envs];
    let rollout_seed = derive_seed(cfg.seed, "rollout");
    let credit_seed = derive_seed(cfg.seed, "coalition-sampling");
    let mut curve =
        vec![Window::default().row(0, evaluate(&game, &learner.policies, cfg.eval_episodes)?)];
    let mut diag = Vec::new();
    let mut window = Window::default();
    let mut env_steps = 0u64;
    let mut next_eval = cfg.eval_every;
    let mut update = 0u64;
    while env_steps < cfg.total_env_steps {
        let mut batch = collect_rollouts(
            &game,
            &learner.policies,
            &learner.v,
            &mut cursors,
            horizon,
            mix_seed(rollout_seed, update),
        )?;
        env_steps += batch.len() as u64;
        compute_grand_advantages(&mut batch, &cfg.gae)?;
        let settings = CreditSettings::from_config(cfg, mix_seed(credit_seed, update));
        let stats = assign_credits(&mut batch, &learner.q, &learner.policies, &settings)?;

        let samples = actor_batches(&batch, cfg.normalize_advantages);
        let reports: Vec<Result<_>> = learner
            .policies
            .par_iter_mut()
            .zip(learner.actor_opts.par_iter_mut())
            .zip(samples.par_iter())
            .map(|((p, opt), s)| {
                if s.is_empty() {
                    return Ok(Default::default());
                }
                ppo_actor_update(p, opt, s, &cfg.ppo)
            })
            .collect();
        let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
        let n = reports.len() as f64;
        let surrogate = reports.iter().map(|r| r.surrogate).sum::<f64>() / n;
        let entropy = reports.iter().map(|r| r.entropy).sum::<f64>() / n;
        let clip_fraction = reports.iter().map(|r| r.clip_fraction).sum::<f64>() / n;

        let transitions = batch.transitions();
        if cfg.normalize_targets {
            let targets = td_targets(&learner.v, &transitions, cfg.gae.gamma)?;
            rescale_critics(&mut learner.v, &mut learner.q, &targets, TARGET_SCALE_DECAY);
        }
        let mut losses = CriticLosses {
            v: 0.0,
            q: [0.0; 2],
        };
        for k in 0..cfg.critic_steps {
            let l = update_critics(
                &mut learner.v,
                &mut learner.q,
                &transitions,
                &mut learner.critic_opts,
                cfg.gae.gamma,
            )?;
            if k == 0 {
                losses = l;
            }
        }

        update += 1;
        let mean_reward = batch.steps().map(|s| s.reward).sum::<f64>() / batch.len() as f64;
        diag.push(DiagRow {
            update,
            step: env_steps,
            mean_reward,
            surrogate,
            entropy,
            clip_fraction,
            critic_loss: losses.total(),
            mean_epsilon: stats.mean_epsilon,
            max_epsilon: stats.max_epsilon,
            qp_iters_mean: stats.qp_iters_mean,
            qp_retried: stats.retried,
            qp_dropped: stats.dropped,
            efficiency_residual: stats.efficiency_residual,
        });
        window.actor_loss -= surrogate;
        window.critic_loss += losses.total();
        window.epsilon += stats.mean_epsilon;
        window.qp_iters += stats.qp_iters_mean;
        window.updates += 1;
        if env_steps >= next_eval || env_steps >= cfg.total_env_steps {
            while next_eval <= env_steps {
                next_eval += cfg.eval_every;
            }
            curve.push(window.row(
                env_steps,
                evaluate(&game, &learner.policies, cfg.eval_episodes)?,
            ));
        }
    }
    Ok(TrainRun {
        curve,
        diag,
        learner,
        env_steps,
    })
}

/// Saved policies and critics with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: crate::config::RunConfig,
    pub env_steps: u64,
    pub learner: Learner,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config {
                key: "version".into(),
                message: format!("unsupported checkpoint version {}", ck.version),
            });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    pub violation_ratio: f64,
    pub objective_gap: f64,
    pub time_sampled_ms: f64,
    pub time_full_ms: f64,
}

pub const BENCH_COLUMNS: &str = "m,violation_ratio,objective_gap,time_sampled_ms,time_full_ms";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_COLUMNS}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.m, r.violation_ratio, r.objective_gap, r.time_sampled_ms, r.time_full_ms
        ));
    }
    out
}

/// Random table over all proper coalitions with advantages uniform in
/// `[-10, 10]`.
pub fn random_full_table<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> Result<CoalitionAdvantageTable> {
    let entries = all_proper(n)?
        .into_iter()
        .map(|c| (c, rng.gen_range(-10.0..=10.0)))
        .collect();
    CoalitionAdvantageTable::new(n, entries, rng.gen_range(-10.0..=10.0))
}

/// For each `m`, solves the allocation on `m` sampled coalitions and compares
/// it with the full-constraint solve on the same random table: share of all
/// proper coalitions violated, relative objective gap (denominator floored
/// at 1), and mean wall-clock time per solve.
pub fn run_approx_benchmark(
    n: usize,
    trials: usize,
    m_grid: &[usize],
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if !(2..=12).contains(&n) {
        return Err(Error::Capacity(format!(
            "benchmark supports 2..=12 agents, got {n}"
        )));
    }
    let total = (1usize << n) - 2;
    if let Some(&m) = m_grid.iter().find(|&&m| m > total) {
        return Err(Error::arg(format!(
            "m = {m} exceeds the {total} proper coalitions"
        )));
    }
    let mut table_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bench-tables"));
    let sample_seed = derive_seed(seed, "bench-sampling");
    let mut rows: Vec<BenchRow> = m_grid
        .iter()
        .map(|&m| BenchRow {
            m,
            violation_ratio: 0.0,
            objective_gap: 0.0,
            time_sampled_ms: 0.0,
            time_full_ms: 0.0,
        })
        .collect();
    let k = trials.max(1) as f64;
    for trial in 0..trials {
        let full = random_full_table(n, &mut table_rng)?;
        let started = Instant::now();
        let reference = solve_core(&full, DEFAULT_LAMBDA_REG)?;
        let full_ms = started.elapsed().as_secs_f64() * 1e3;
        for (row, &m) in rows.iter_mut().zip(m_grid) {
            let plan =
                SamplingPlan::fixed(m, mix_seed(sample_seed, ((trial as u64) << 16) | m as u64));
            let sampled = full.restrict(&sample_coalitions(n, &plan)?)?;
            let started = Instant::now();
            let alloc = solve_core(&sampled, DEFAULT_LAMBDA_REG)?;
            row.time_sampled_ms += started.elapsed().as_secs_f64() * 1e3 / k;
            row.time_full_ms += full_ms / k;
            row.violation_ratio += exact_violation_ratio(&full, &alloc) / k;
            row.objective_gap += (reference.objective - alloc.objective).abs()
                / reference.objective.abs().max(1.0)
                / k;
        }
    }
    Ok(rows)
}
