//! On-policy exploration loop: roll out with peeked intrinsic rewards, improve
//! the policy on `r + β·r_i`, then replay the batch into the clustering.
//!
//! The policy improver is the cross-entropy method over the parameters of a
//! deterministic linear policy `a = W s + b`. The environment is a sparse
//! reward box with a single goal ball.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterModel, InitPolicy};
use crate::density::SupportBox;
use crate::error::{KmeError, Result};
use crate::objective::{FChoice, ObjectiveSpec, DEFAULT_LOG_FLOOR};
use crate::reward::RewardEngine;

/// Minimal episodic environment interface.
pub trait EnvContract {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Returns the start state. Deterministic.
    fn reset(&mut self) -> Vec<f64>;
    /// Returns `(next state, extrinsic reward, done)`.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
}

/// Point mass in `[−1, 1]^d` starting at the origin. The action is a velocity,
/// rescaled to norm `max_speed` when longer. Reward is 1 inside the goal ball
/// and 0 elsewhere; episodes end only on the step limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseBoxEnv {
    pub d: usize,
    pub goal: Vec<f64>,
    pub goal_radius: f64,
    pub max_episode_steps: usize,
    pub max_speed: f64,
    #[serde(skip)]
    position: Vec<f64>,
    #[serde(skip)]
    t: usize,
}

impl SparseBoxEnv {
    pub fn new(
        goal: Vec<f64>,
        goal_radius: f64,
        max_episode_steps: usize,
        max_speed: f64,
    ) -> Result<Self> {
        let d = goal.len();
        if d == 0 {
            return Err(KmeError::ZeroDimension);
        }
        if goal.iter().any(|g| !(g.is_finite() && g.abs() <= 1.0)) {
            return Err(KmeError::InvalidConfig("goal must lie inside [-1, 1]^d".into()));
        }
        if !(goal_radius.is_finite() && goal_radius > 0.0) {
            return Err(KmeError::InvalidHyperparameter {
                name: "goal_radius",
                value: goal_radius,
            });
        }
        if !(max_speed.is_finite() && max_speed > 0.0) {
            return Err(KmeError::InvalidHyperparameter {
                name: "max_speed",
                value: max_speed,
            });
        }
        if max_episode_steps == 0 {
            return Err(KmeError::InvalidConfig("max_episode_steps must be positive".into()));
        }
        Ok(Self {
            d,
            goal,
            goal_radius,
            max_episode_steps,
            max_speed,
            position: vec![0.0; d],
            t: 0,
        })
    }

    /// Goal near the `(1, …, 1)` corner, as used by the exploration experiment.
    pub fn corner(d: usize) -> Result<Self> {
        Self::new(vec![0.85; d], 0.15, 64, 0.1)
    }

    pub fn in_goal(&self, s: &[f64]) -> bool {
        let dist2: f64 = s.iter().zip(&self.goal).map(|(a, b)| (a - b) * (a - b)).sum();
        dist2.sqrt() <= self.goal_radius
    }

    pub fn bounds(&self) -> SupportBox {
        SupportBox::new(vec![-1.0; self.d], vec![1.0; self.d]).expect("unit box is valid")
    }
}

impl EnvContract for SparseBoxEnv {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn action_dim(&self) -> usize {
        self.d
    }

    fn reset(&mut self) -> Vec<f64> {
        self.position = vec![0.0; self.d];
        self.t = 0;
        self.position.clone()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        if self.position.len() != self.d {
            self.reset();
        }
        let norm = action.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = if norm > self.max_speed {
            self.max_speed / norm
        } else if norm.is_finite() {
            1.0
        } else {
            0.0
        };
        for (p, a) in self.position.iter_mut().zip(action) {
            *p = (*p + a * scale).clamp(-1.0, 1.0);
        }
        self.t += 1;
        let r = if self.in_goal(&self.position) { 1.0 } else { 0.0 };
        (self.position.clone(), r, self.t >= self.max_episode_steps)
    }
}

/// Deterministic linear policy `a = W s + b`. Parameters are stored as the
/// row-major `W` followed by `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub state_dim: usize,
    pub action_dim: usize,
    pub params: Vec<f64>,
}

impl LinearPolicy {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            params: vec![0.0; Self::param_count(state_dim, action_dim)],
        }
    }

    pub fn param_count(state_dim: usize, action_dim: usize) -> usize {
        action_dim * (state_dim + 1)
    }

    pub fn act(&self, s: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.action_dim * self.state_dim);
        (0..self.action_dim)
            .map(|r| {
                let row = &w[r * self.state_dim..(r + 1) * self.state_dim];
                row.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() + b[r]
            })
            .collect()
    }
}

/// One environment transition. `state` is the state reached by `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub extrinsic: f64,
    pub intrinsic: f64,
    pub augmented: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.state.as_slice()).collect()
    }

    /// Per-episode sums of `pick(record)`, discounted by `gamma`. An episode
    /// cut short by the end of the trajectory still counts.
    pub fn episode_returns(&self, gamma: f64, pick: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        let mut out = Vec::new();
        let (mut acc, mut disc, mut open) = (0.0, 1.0, false);
        for r in &self.records {
            acc += disc * pick(r);
            disc *= gamma;
            open = true;
            if r.done {
                out.push(acc);
                (acc, disc, open) = (0.0, 1.0, false);
            }
        }
        if open {
            out.push(acc);
        }
        out
    }

    /// Hash of every state and action bit, for step-for-step comparisons.
    pub fn digest(&self, h: &mut impl Hasher) {
        for r in &self.records {
            for v in r.state.iter().chain(&r.action) {
                v.to_bits().hash(h);
            }
            r.done.hash(h);
        }
    }
}

/// Collects `steps` transitions starting from a reset. Intrinsic rewards come
/// from [`RewardEngine::peek_reward`], so the engine is left untouched;
/// without an engine they are zero.
pub fn rollout<E: EnvContract>(
    policy: &LinearPolicy,
    env: &mut E,
    engine: Option<&RewardEngine>,
    steps: usize,
    beta: f64,
) -> Result<Trajectory> {
    if let Some(e) = engine {
        if e.dim() != env.state_dim() {
            return Err(KmeError::DimensionMismatch {
                expected: e.dim(),
                got: env.state_dim(),
            });
        }
    }
    if policy.state_dim != env.state_dim() || policy.action_dim != env.action_dim() {
        return Err(KmeError::DimensionMismatch {
            expected: env.state_dim(),
            got: policy.state_dim,
        });
    }
    let mut records = Vec::with_capacity(steps);
    let mut s = env.reset();
    for _ in 0..steps {
        let action = policy.act(&s);
        let (next, extrinsic, done) = env.step(&action);
        let intrinsic = match engine {
            Some(e) => e.peek_reward(&next)?,
            None => 0.0,
        };
        records.push(StepRecord {
            augmented: extrinsic + beta * intrinsic,
            state: next.clone(),
            action,
            extrinsic,
            intrinsic,
            done,
        });
        s = if done { env.reset() } else { next };
    }
    Ok(Trajectory { records })
}

/// Fraction of the `cells_per_axis^d` grid cells over `bbox` holding at least
/// one state. States outside the box count towards the nearest edge cell.
pub fn coverage_metric<S: AsRef<[f64]>>(
    states: &[S],
    bbox: &SupportBox,
    cells_per_axis: usize,
) -> Result<f64> {
    let d = bbox.dim();
    if cells_per_axis == 0 {
        return Err(KmeError::InvalidConfig("cells_per_axis must be at least 1".into()));
    }
    if d > 4 {
        return Err(KmeError::GridTooLarge(d));
    }
    let total = cells_per_axis
        .checked_pow(d as u32)
        .filter(|&n| n <= 1 << 26)
        .ok_or(KmeError::GridTooLarge(d))?;
    let mut seen = vec![false; total];
    for s in states {
        let s = s.as_ref();
        if s.len() != d {
            return Err(KmeError::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
        let mut cell = 0;
        for j in (0..d).rev() {
            let (lo, hi) = (bbox.lower()[j], bbox.upper()[j]);
            let t = ((s[j] - lo) / (hi - lo) * cells_per_axis as f64).floor();
            let c = (t.max(0.0) as usize).min(cells_per_axis - 1);
            cell = cell * cells_per_axis + c;
        }
        seen[cell] = true;
    }
    Ok(seen.iter().filter(|&&v| v).count() as f64 / total as f64)
}

/// Hyperparameters of [`train`]. Engine settings default to `k = 300`,
/// `α = 0.05`, `κ = 1e−4`; the bonus scale to `β = 0.01`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    /// Environment steps per batch, spread over the CEM population.
    pub batch_size: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Number of batches.
    pub t_max: usize,
    pub seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub f: FChoice,
    pub init: InitPolicy,
    pub population: usize,
    pub elite_fraction: f64,
    /// Initial standard deviation of every policy parameter.
    pub init_std: f64,
    /// Lower bound on the per-parameter standard deviation after each update.
    pub min_std: f64,
    pub coverage_cells: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            beta: 0.01,
            gamma: 0.99,
            t_max: 200,
            seed: 0,
            k: 300,
            alpha: 0.05,
            kappa: 1e-4,
            f: FChoice::Sqrt,
            init: InitPolicy::Zero,
            population: 32,
            elite_fraction: 0.25,
            init_std: 0.001,
            min_std: 0.001,
            coverage_cells: 20,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, value: f64| Err(KmeError::InvalidHyperparameter { name, value });
        if self.batch_size == 0 {
            return bad("batch_size", 0.0);
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta", self.beta);
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", self.gamma);
        }
        if self.population < 2 || self.population > self.batch_size {
            return bad("population", self.population as f64);
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return bad("elite_fraction", self.elite_fraction);
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std", self.init_std);
        }
        if !(self.min_std.is_finite() && self.min_std >= 0.0) {
            return bad("min_std", self.min_std);
        }
        if self.coverage_cells == 0 {
            return bad("coverage_cells", 0.0);
        }
        ClusterModel::new(self.k, 1, self.alpha, self.kappa, self.init)?;
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }

    pub fn new_engine(&self, d: usize) -> Result<RewardEngine> {
        let model = ClusterModel::new(self.k, d, self.alpha, self.kappa, self.init)?;
        Ok(RewardEngine::new(
            model,
            ObjectiveSpec::new(self.f, DEFAULT_LOG_FLOOR)?,
        ))
    }
}

/// One row of the learning record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRecord {
    pub batch_index: usize,
    pub env_steps: usize,
    /// Mean undiscounted extrinsic return per episode in the batch.
    pub extrinsic_return: f64,
    /// Mean undiscounted intrinsic return per episode in the batch.
    pub intrinsic_return: f64,
    /// Cumulative coverage of every state visited so far.
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<LearningRecord>,
    /// Hash of every state, action and episode boundary visited, in order.
    pub trajectory_digest: u64,
    pub final_policy_mean: Vec<f64>,
    pub engine: Option<RewardEngine>,
}

impl TrainReport {
    pub fn final_coverage(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.coverage)
    }

    /// First batch with a nonzero extrinsic return.
    pub fn first_success(&self) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.extrinsic_return > 0.0)
            .map(|r| r.batch_index)
    }
}

/// Runs the loop with a fresh engine built from `config`.
pub fn train<E>(config: &ExploreConfig, env: &E) -> Result<TrainReport>
where
    E: EnvContract + Clone + Send + Sync,
{
    let engine = config.new_engine(env.state_dim())?;
    run(config, env, Some(engine))
}

/// Same loop with no reward engine: intrinsic rewards are zero and nothing is
/// replayed.
pub fn train_without_engine<E>(config: &ExploreConfig, env: &E) -> Result<TrainReport>
where
    E: EnvContract + Clone + Send + Sync,
{
    run(config, env, None)
}

fn run<E>(config: &ExploreConfig, env: &E, mut engine: Option<RewardEngine>) -> Result<TrainReport>
where
    E: EnvContract + Clone + Send + Sync,
{
    config.validate()?;
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let n_params = LinearPolicy::param_count(sd, ad);
    let mut mean = vec![0.0; n_params];
    let mut std = vec![config.init_std; n_params];

    // Policy sampling and replay shuffles draw from separate streams so that
    // attaching an engine cannot shift the policy noise.
    let mut policy_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(config.seed);
    replay_rng.set_stream(1);

    let pop = config.population;
    let n_elite = config.elite_count();
    let bbox = SupportBox::new(vec![-1.0; sd], vec![1.0; sd])?;
    let mut visited: Vec<Vec<f64>> = Vec::new();
    let mut hasher = DefaultHasher::new();
    let mut records = Vec::with_capacity(config.t_max);
    let mut env_steps = 0;

    for batch in 0..config.t_max {
        let candidates: Vec<LinearPolicy> = (0..pop)
            .map(|_| LinearPolicy {
                state_dim: sd,
                action_dim: ad,
                params: mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut policy_rng);
                        m + s * z
                    })
                    .collect(),
            })
            .collect();

        let per = config.batch_size / pop;
        let extra = config.batch_size % pop;
        let hash_before = engine.as_ref().map(RewardEngine::state_hash);
        let trajectories: Vec<Trajectory> = candidates
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let steps = per + usize::from(i < extra);
                rollout(p, &mut env.clone(), engine.as_ref(), steps, config.beta)
            })
            .collect::<Result<_>>()?;
        debug_assert_eq!(hash_before, engine.as_ref().map(RewardEngine::state_hash));

        // Elite selection on mean discounted augmented episode return. The
        // sort is stable, so ties keep candidate order.
        let scores: Vec<f64> = trajectories
            .iter()
            .map(|t| mean_of(&t.episode_returns(config.gamma, |r| r.augmented)))
            .collect();
        let mut order: Vec<usize> = (0..pop).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let elites = &order[..n_elite];
        for p in 0..n_params {
            let m = elites.iter().map(|&e| candidates[e].params[p]).sum::<f64>() / n_elite as f64;
            let v = elites
                .iter()
                .map(|&e| (candidates[e].params[p] - m).powi(2))
                .sum::<f64>()
                / n_elite as f64;
            mean[p] = m;
            std[p] = v.sqrt().max(config.min_std);
        }

        let mut ext = Vec::new();
        let mut int = Vec::new();
        for t in &trajectories {
            t.digest(&mut hasher);
            ext.extend(t.episode_returns(1.0, |r| r.extrinsic));
            int.extend(t.episode_returns(1.0, |r| r.intrinsic));
            visited.extend(t.records.iter().map(|r| r.state.clone()));
        }
        env_steps += config.batch_size;

        let shuffle_seed = replay_rng.next_u64();
        if let Some(e) = engine.as_mut() {
            let states: Vec<&[f64]> = trajectories.iter().flat_map(Trajectory::states).collect();
            e.batch_replay(&states, shuffle_seed)?;
        }

        records.push(LearningRecord {
            batch_index: batch,
            env_steps,
            extrinsic_return: mean_of(&ext),
            intrinsic_return: mean_of(&int),
            coverage: coverage_metric(&visited, &bbox, config.coverage_cells)?,
        });
    }

    Ok(TrainReport {
        records,
        trajectory_digest: hasher.finish(),
        final_policy_mean: mean,
        engine,
    })
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Writes the learning record as CSV.
pub fn write_learning_csv<W: std::io::Write>(mut out: W, records: &[LearningRecord]) -> std::io::Result<()> {
    writeln!(out, "batch_index,env_steps,extrinsic_return,intrinsic_return,coverage")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.batch_index, r.env_steps, r.extrinsic_return, r.intrinsic_return, r.coverage
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_clips_and_rewards_sparsely() {
        let mut env = SparseBoxEnv::new(vec![0.9, 0.9], 0.1, 5, 0.5).unwrap();
        assert_eq!(env.reset(), vec![0.0, 0.0]);
        let (s, r, done) = env.step(&[3.0, 4.0]);
        assert!((s[0] - 0.3).abs() < 1e-15 && (s[1] - 0.4).abs() < 1e-15);
        assert_eq!((r, done), (0.0, false));
        for _ in 0..3 {
            env.step(&[0.0, 0.5]);
        }
        let (s, _, done) = env.step(&[0.5, 0.0]);
        assert_eq!(s[1], 1.0);
        assert!(done);
        env.reset();
        let (s, r, _) = env.step(&[0.0, 0.0]);
        assert_eq!((s, r), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn env_goal_reward() {
        let mut env = SparseBoxEnv::new(vec![0.1], 0.05, 10, 1.0).unwrap();
        env.reset();
        assert_eq!(env.step(&[0.12]).1, 1.0);
        assert_eq!(env.step(&[0.1]).1, 0.0);
    }

    #[test]
    fn linear_policy_layout() {
        let p = LinearPolicy {
            state_dim: 2,
            action_dim: 2,
            params: vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5],
        };
        assert_eq!(p.act(&[1.0, 1.0]), vec![3.5, 6.5]);
    }

    #[test]
    fn episode_returns_split_on_done() {
        let rec = |x: f64, done| StepRecord {
            state: vec![0.0],
            action: vec![0.0],
            extrinsic: x,
            intrinsic: 0.0,
            augmented: x,
            done,
        };
        let t = Trajectory {
            records: vec![rec(1.0, false), rec(1.0, true), rec(2.0, false)],
        };
        assert_eq!(t.episode_returns(0.5, |r| r.extrinsic), vec![1.5, 2.0]);
    }
}
