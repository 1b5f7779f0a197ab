//! Intrinsic reward as the change in `L_f` caused by observing a state.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{repair_cache, ClusterModel, ModelSnapshot, NeighborCache, Overlay};
use crate::error::{check_vector, KmeError, Result};
use crate::objective::{bound_from_log_objective, objective_value, FChoice, ObjectiveSpec};

/// Clustering state plus the reward function and instrumentation counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEngine {
    model: ClusterModel,
    cache: NeighborCache,
    spec: ObjectiveSpec,
    commit_count: u64,
    pathological_count: u64,
}

impl RewardEngine {
    pub fn new(model: ClusterModel, spec: ObjectiveSpec) -> Self {
        let cache = model.rebuild_cache();
        Self {
            model,
            cache,
            spec,
            commit_count: 0,
            pathological_count: 0,
        }
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    pub fn cache(&self) -> &NeighborCache {
        &self.cache
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn commit_count(&self) -> u64 {
        self.commit_count
    }

    pub fn pathological_count(&self) -> u64 {
        self.pathological_count
    }

    pub fn dim(&self) -> usize {
        self.model.d()
    }

    /// Current `L_f` under the engine's own `f`.
    pub fn objective(&self) -> f64 {
        objective_value(&self.cache, &self.spec)
    }

    /// Current `L_f` under an arbitrary `f`.
    pub fn objective_with(&self, spec: &ObjectiveSpec) -> f64 {
        objective_value(&self.cache, spec)
    }

    /// Approximate entropy lower bound of the current clustering.
    pub fn entropy_lower_bound(&self) -> f64 {
        let log_spec = ObjectiveSpec {
            f_choice: FChoice::Log,
            log_floor: self.spec.log_floor,
        };
        bound_from_log_objective(
            objective_value(&self.cache, &log_spec),
            self.model.k(),
            self.model.d(),
        )
    }

    /// Reward a commit of `s` would produce, without changing any state.
    ///
    /// Only the moved cluster's row and column of weighted distances are
    /// re-evaluated, on copies of the two `O(k)` cache arrays.
    pub fn peek_reward(&self, s: &[f64]) -> Result<f64> {
        check_vector(s, self.model.d())?;
        let before = self.spec.sum(&self.cache.nearest_dist);

        let (moved, adopt) = self.model.target(s);
        let center = self.model.moved_center(moved, s, adopt);
        let view = Overlay {
            model: &self.model,
            moved,
            center: &center,
            count: self.model.counts()[moved] + 1,
        };
        let mut index = self.cache.nearest_index.clone();
        let mut dist = self.cache.nearest_dist.clone();
        repair_cache(&view, &mut index, &mut dist, moved);

        Ok(self.spec.sum(&dist) - before)
    }

    /// Commits `s` and returns `L_f(after) − L_f(before)`.
    pub fn commit_reward(&mut self, s: &[f64]) -> Result<f64> {
        let before = self.spec.sum(&self.cache.nearest_dist);
        let outcome = self.model.commit_point(&mut self.cache, s)?;
        self.commit_count += 1;
        if outcome.pathological {
            self.pathological_count += 1;
        }
        Ok(self.spec.sum(&self.cache.nearest_dist) - before)
    }

    /// Commits every state once, in a seeded uniformly shuffled order.
    /// Rewards are discarded.
    pub fn batch_replay<S: AsRef<[f64]>>(&mut self, states: &[S], shuffle_seed: u64) -> Result<()> {
        for s in states {
            check_vector(s.as_ref(), self.model.d())?;
        }
        let mut order: Vec<usize> = (0..states.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        order.shuffle(&mut rng);
        for i in order {
            self.commit_reward(states[i].as_ref())?;
        }
        Ok(())
    }

    /// Fraction of commits whose cache repair was pathological.
    pub fn pathological_fraction(&self) -> Result<f64> {
        if self.commit_count == 0 {
            return Err(KmeError::NoCommits);
        }
        Ok(self.pathological_count as f64 / self.commit_count as f64)
    }

    /// Hash of every bit of engine state; equal hashes before and after an
    /// operation mean it did not mutate the engine.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let m = &self.model;
        (m.k(), m.d(), m.count_sum(), m.alpha().to_bits(), m.kappa().to_bits()).hash(&mut h);
        m.rescan_threshold().to_bits().hash(&mut h);
        m.init_policy().hash(&mut h);
        m.adopted().hash(&mut h);
        for c in m.centers() {
            c.to_bits().hash(&mut h);
        }
        m.counts().hash(&mut h);
        self.cache.nearest_index.hash(&mut h);
        for v in &self.cache.nearest_dist {
            v.to_bits().hash(&mut h);
        }
        self.spec.f_choice.hash(&mut h);
        self.spec.log_floor.to_bits().hash(&mut h);
        (self.commit_count, self.pathological_count).hash(&mut h);
        h.finish()
    }

    pub fn to_checkpoint(&self) -> EngineCheckpoint {
        EngineCheckpoint {
            model: self.model.to_snapshot(),
            cache: self.cache.clone(),
            spec: self.spec,
            commit_count: self.commit_count,
            pathological_count: self.pathological_count,
        }
    }

    pub fn from_checkpoint(cp: EngineCheckpoint) -> Result<Self> {
        let model = ClusterModel::from_snapshot(cp.model)?;
        let k = model.k();
        if cp.cache.nearest_index.len() != k || cp.cache.nearest_dist.len() != k {
            return Err(KmeError::Snapshot("cache length does not match k".into()));
        }
        if cp.cache.nearest_index.iter().any(|&j| j >= k) {
            return Err(KmeError::Snapshot("cache index out of range".into()));
        }
        if cp.pathological_count > cp.commit_count {
            return Err(KmeError::Snapshot(
                "pathological_count exceeds commit_count".into(),
            ));
        }
        let spec = ObjectiveSpec::new(cp.spec.f_choice, cp.spec.log_floor)?;
        Ok(Self {
            model,
            cache: cp.cache,
            spec,
            commit_count: cp.commit_count,
            pathological_count: cp.pathological_count,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cp: EngineCheckpoint =
            serde_json::from_str(json).map_err(|e| KmeError::Snapshot(e.to_string()))?;
        Self::from_checkpoint(cp)
    }
}

/// JSON checkpoint of a [`RewardEngine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCheckpoint {
    pub model: ModelSnapshot,
    pub cache: NeighborCache,
    pub spec: ObjectiveSpec,
    pub commit_count: u64,
    pub pathological_count: u64,
}
