//! Additively-weighted online k-means with count-based balancing weights.
//!
//! A state `s` joins the cluster minimising `‖μ_i − s‖ − w_i`, where the
//! balancing weight is `w_i = κ(mean(n) − n_i)`. Only the assigned centre
//! moves: `μ_i ← αs + (1 − α)μ_i`.
//!
//! Alongside the model, a [`NeighborCache`] records for every cluster the
//! other cluster minimising the weighted pair distance
//! `‖μ_i − μ_j‖ + κ(n_j − n_i)` and that minimum. A commit only changes one
//! centre and one count, so the cache is repaired in `O(kd)` unless the moved
//! cluster was the cached neighbour of many others and moved away from them.

use serde::{Deserialize, Serialize};

use crate::error::{check_vector, KmeError, Result};

/// Default fraction of clusters that may be rescanned by a single cache
/// repair before the update is reported as pathological.
pub const DEFAULT_RESCAN_THRESHOLD: f64 = 0.10;

/// How cluster centres are placed before any data has been seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Every centre starts at the origin.
    #[default]
    Zero,
    /// The first `k` committed points become the centres verbatim. The first
    /// point goes to centre 0 and the rest fill centres `k − 1` down to 1.
    ///
    /// Unadopted centres all tie at the origin, and the lowest-index tie rule
    /// makes each of them cache the lowest other unadopted index. Adopting
    /// from the top keeps the moving centre out of those cache entries.
    FirstPoints,
}

/// Centres, counts and hyperparameters of the online clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    k: usize,
    d: usize,
    centers: Vec<f64>,
    counts: Vec<u64>,
    count_sum: u64,
    alpha: f64,
    kappa: f64,
    init: InitPolicy,
    /// Centres already adopted under [`InitPolicy::FirstPoints`].
    adopted: usize,
    rescan_threshold: f64,
}

/// Per-cluster weighted nearest neighbour (`m`) and its weighted distance (`M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborCache {
    pub nearest_index: Vec<usize>,
    pub nearest_dist: Vec<f64>,
}

/// Result of committing one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitOutcome {
    pub cluster: usize,
    pub pathological: bool,
    /// Rows other than the moved cluster's that had to be rescanned.
    pub rescans: usize,
}

/// Read access to centres and counts. Lets the cache repair run both on a
/// committed model and on a hypothetical one without copying it.
pub(crate) trait CenterView {
    fn k(&self) -> usize;
    fn kappa(&self) -> f64;
    fn center(&self, i: usize) -> &[f64];
    fn count(&self, i: usize) -> u64;

    fn weighted(&self, i: usize, j: usize) -> f64 {
        euclidean(self.center(i), self.center(j))
            + self.kappa() * (self.count(j) as f64 - self.count(i) as f64)
    }
}

impl CenterView for ClusterModel {
    fn k(&self) -> usize {
        self.k
    }
    fn kappa(&self) -> f64 {
        self.kappa
    }
    fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }
    fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }
}

/// A model with one cluster's centre and count replaced.
pub(crate) struct Overlay<'a> {
    pub model: &'a ClusterModel,
    pub moved: usize,
    pub center: &'a [f64],
    pub count: u64,
}

impl CenterView for Overlay<'_> {
    fn k(&self) -> usize {
        self.model.k
    }
    fn kappa(&self) -> f64 {
        self.model.kappa
    }
    fn center(&self, i: usize) -> &[f64] {
        if i == self.moved {
            self.center
        } else {
            CenterView::center(self.model, i)
        }
    }
    fn count(&self, i: usize) -> u64 {
        if i == self.moved {
            self.count
        } else {
            self.model.counts[i]
        }
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums let the compiler vectorise the loop.
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = x - y;
        tail += t * t;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail).sqrt()
}

/// Minimum of row `i` over `j ≠ i`; lowest index wins ties.
fn scan_row<V: CenterView>(view: &V, i: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..view.k() {
        if j == i {
            continue;
        }
        let v = view.weighted(i, j);
        if v < best.1 || best.0 == usize::MAX {
            best = (j, v);
        }
    }
    best
}

/// Repairs the cache after cluster `moved` changed centre and/or count.
/// Returns how many rows other than `moved` were rescanned.
pub(crate) fn repair_cache<V: CenterView>(
    view: &V,
    nearest_index: &mut [usize],
    nearest_dist: &mut [f64],
    moved: usize,
) -> usize {
    let (m, dist) = scan_row(view, moved);
    nearest_index[moved] = m;
    nearest_dist[moved] = dist;

    let mut rescans = 0;
    for i in 0..view.k() {
        if i == moved {
            continue;
        }
        // Only the (i, moved) entry of row i changed.
        let v = view.weighted(i, moved);
        if nearest_index[i] == moved {
            if v <= nearest_dist[i] {
                nearest_dist[i] = v;
            } else {
                let (m, dist) = scan_row(view, i);
                nearest_index[i] = m;
                nearest_dist[i] = dist;
                rescans += 1;
            }
        } else if v < nearest_dist[i] || (v == nearest_dist[i] && moved < nearest_index[i]) {
            nearest_index[i] = moved;
            nearest_dist[i] = v;
        }
    }
    rescans
}

impl ClusterModel {
    pub fn new(k: usize, d: usize, alpha: f64, kappa: f64, init: InitPolicy) -> Result<Self> {
        if k < 2 {
            return Err(KmeError::TooFewClusters(k));
        }
        if d == 0 {
            return Err(KmeError::ZeroDimension);
        }
        if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
            return Err(KmeError::InvalidHyperparameter {
                name: "alpha",
                value: alpha,
            });
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(KmeError::InvalidHyperparameter {
                name: "kappa",
                value: kappa,
            });
        }
        Ok(Self {
            k,
            d,
            centers: vec![0.0; k * d],
            counts: vec![0; k],
            count_sum: 0,
            alpha,
            kappa,
            init,
            adopted: 0,
            rescan_threshold: DEFAULT_RESCAN_THRESHOLD,
        })
    }

    /// Sets the rescan fraction above which a cache repair counts as pathological.
    pub fn with_rescan_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold.is_finite() && (0.0..=1.0).contains(&threshold)) {
            return Err(KmeError::InvalidHyperparameter {
                name: "rescan_threshold",
                value: threshold,
            });
        }
        self.rescan_threshold = threshold;
        Ok(self)
    }

    /// Builds a model from explicit centres (row-major) and counts.
    pub fn from_parts(
        centers: Vec<f64>,
        counts: Vec<u64>,
        d: usize,
        alpha: f64,
        kappa: f64,
    ) -> Result<Self> {
        let k = counts.len();
        let mut model = Self::new(k, d, alpha, kappa, InitPolicy::Zero)?;
        if centers.len() != k * d {
            return Err(KmeError::DimensionMismatch {
                expected: k * d,
                got: centers.len(),
            });
        }
        if centers.iter().any(|x| !x.is_finite()) {
            return Err(KmeError::NonFinite);
        }
        model.count_sum = counts.iter().sum();
        model.centers = centers;
        model.counts = counts;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn init_policy(&self) -> InitPolicy {
        self.init
    }

    /// Centres adopted so far under [`InitPolicy::FirstPoints`].
    pub fn adopted(&self) -> usize {
        self.adopted
    }

    pub fn rescan_threshold(&self) -> f64 {
        self.rescan_threshold
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &[f64] {
        CenterView::center(self, i)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count_sum(&self) -> u64 {
        self.count_sum
    }

    pub fn mean_count(&self) -> f64 {
        self.count_sum as f64 / self.k as f64
    }

    /// Balancing weight `w_i = κ(mean(n) − n_i)`.
    ///
    /// Evaluated as `κ(Σn − k·n_i)/k` in integers first, so shifting every
    /// count by the same constant leaves it bit-identical.
    pub fn weight(&self, i: usize) -> f64 {
        let excess = (self.k as i64)
            .checked_mul(self.counts[i] as i64)
            .and_then(|kn| (self.count_sum as i64).checked_sub(kn))
            .filter(|_| self.count_sum <= i64::MAX as u64 && self.counts[i] <= i64::MAX as u64);
        let excess = match excess {
            Some(e) => e as f64,
            None => (self.count_sum as i128 - self.k as i128 * self.counts[i] as i128) as f64,
        };
        self.kappa * (excess / self.k as f64)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.weight(i)).collect()
    }

    /// Index minimising `‖μ_i − s‖ − w_i`; lowest index wins ties.
    pub fn assign(&self, s: &[f64]) -> Result<usize> {
        check_vector(s, self.d)?;
        Ok(self.assign_unchecked(s))
    }

    pub(crate) fn assign_unchecked(&self, s: &[f64]) -> usize {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for i in 0..self.k {
            let v = euclidean(CenterView::center(self, i), s) - self.weight(i);
            if v < best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }

    /// `‖μ_i − μ_j‖ + κ(n_j − n_i)`.
    pub fn weighted_pair_distance(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.k {
            return Err(KmeError::IndexOutOfRange(i));
        }
        if j >= self.k {
            return Err(KmeError::IndexOutOfRange(j));
        }
        if i == j {
            return Err(KmeError::SameCluster(i));
        }
        Ok(self.weighted(i, j))
    }

    /// Exact `O(k²d)` construction of the neighbour cache.
    pub fn rebuild_cache(&self) -> NeighborCache {
        let (nearest_index, nearest_dist) = (0..self.k).map(|i| scan_row(self, i)).unzip();
        NeighborCache {
            nearest_index,
            nearest_dist,
        }
    }

    /// Cluster a commit of `s` would move, and whether it adopts `s` verbatim.
    pub(crate) fn target(&self, s: &[f64]) -> (usize, bool) {
        if self.init == InitPolicy::FirstPoints && self.adopted < self.k {
            let slot = if self.adopted == 0 { 0 } else { self.k - self.adopted };
            (slot, true)
        } else {
            (self.assign_unchecked(s), false)
        }
    }

    /// Centre of cluster `i` after a commit of `s`.
    pub(crate) fn moved_center(&self, i: usize, s: &[f64], adopt: bool) -> Vec<f64> {
        if adopt {
            return s.to_vec();
        }
        let a = self.alpha;
        CenterView::center(self, i)
            .iter()
            .zip(s)
            .map(|(mu, x)| a * x + (1.0 - a) * mu)
            .collect()
    }

    /// Moves the assigned centre, increments its count and repairs `cache`.
    pub fn commit_point(&mut self, cache: &mut NeighborCache, s: &[f64]) -> Result<CommitOutcome> {
        check_vector(s, self.d)?;
        let (cluster, adopt) = self.target(s);
        let center = self.moved_center(cluster, s, adopt);
        self.centers[cluster * self.d..(cluster + 1) * self.d].copy_from_slice(&center);
        self.counts[cluster] += 1;
        self.count_sum += 1;
        if adopt {
            self.adopted += 1;
        }
        let rescans = self.repair(cache, cluster);
        Ok(CommitOutcome {
            cluster,
            pathological: self.is_pathological(rescans),
            rescans,
        })
    }

    /// Repairs `cache` after cluster `moved` changed. Returns the pathological flag.
    pub fn update_cache(&self, cache: &mut NeighborCache, moved: usize) -> bool {
        let rescans = self.repair(cache, moved);
        self.is_pathological(rescans)
    }

    fn repair(&self, cache: &mut NeighborCache, moved: usize) -> usize {
        repair_cache(
            self,
            &mut cache.nearest_index,
            &mut cache.nearest_dist,
            moved,
        )
    }

    pub(crate) fn is_pathological(&self, rescans: usize) -> bool {
        rescans as f64 > self.rescan_threshold * self.k as f64
    }

    pub fn to_snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            k: self.k,
            d: self.d,
            alpha: self.alpha,
            kappa: self.kappa,
            centers: self.centers.clone(),
            counts: self.counts.clone(),
            init: self.init,
            adopted: self.adopted,
            rescan_threshold: self.rescan_threshold,
        }
    }

    pub fn from_snapshot(snap: ModelSnapshot) -> Result<Self> {
        if snap.counts.len() != snap.k {
            return Err(KmeError::Snapshot(format!(
                "{} counts for k = {}",
                snap.counts.len(),
                snap.k
            )));
        }
        if snap.adopted > snap.k {
            return Err(KmeError::Snapshot("adopted exceeds k".into()));
        }
        let mut model = Self::from_parts(snap.centers, snap.counts, snap.d, snap.alpha, snap.kappa)?
            .with_rescan_threshold(snap.rescan_threshold)?;
        model.init = snap.init;
        model.adopted = snap.adopted;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let snap: ModelSnapshot =
            serde_json::from_str(json).map_err(|e| KmeError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }
}

/// Checkpoint record of a [`ClusterModel`]; centres are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub k: usize,
    pub d: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub adopted: usize,
    #[serde(default = "default_threshold")]
    pub rescan_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_RESCAN_THRESHOLD
}
