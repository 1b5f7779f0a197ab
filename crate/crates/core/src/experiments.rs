//! Desk-scale experiments: entropy curves on samples and random walks, the
//! density and bound checks, and commit timing. All runs are seeded and
//! build their engines from one shared [`EngineParams`] block.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterModel, InitPolicy};
use crate::density::{cluster_measures_mc, density_estimate, SupportBox};
use crate::error::{KmeError, Result};
use crate::objective::{FChoice, ObjectiveSpec, DEFAULT_LOG_FLOOR};
use crate::reward::RewardEngine;
use crate::synth::{sample, DistributionSpec, SampleStream};

/// Engine hyperparameters shared by every experiment. Centres start from the
/// first `k` points: with zero init and `κ = 1e−4`, most centres never leave
/// the origin on a static stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    pub k: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub f: FChoice,
    pub init: InitPolicy,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            k: 300,
            alpha: 0.05,
            kappa: 1e-4,
            f: FChoice::Sqrt,
            init: InitPolicy::FirstPoints,
        }
    }
}

impl EngineParams {
    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn with_init(self, init: InitPolicy) -> Self {
        Self { init, ..self }
    }

    pub fn engine(&self, d: usize) -> Result<RewardEngine> {
        let model = ClusterModel::new(self.k, d, self.alpha, self.kappa, self.init)?;
        Ok(RewardEngine::new(
            model,
            ObjectiveSpec::new(self.f, DEFAULT_LOG_FLOOR)?,
        ))
    }
}

/// Independent per-run seed from a base seed and a run index (SplitMix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub sqrt_objective: f64,
    pub log_objective: f64,
    pub bound: f64,
}

/// Objective trajectory of one engine fed one sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub label: String,
    pub d: usize,
    pub true_entropy: Option<f64>,
    pub points: Vec<CurvePoint>,
    pub pathological_fraction: Option<f64>,
}

impl EntropyCurve {
    /// Entropy estimate at the end of the run: the `√` objective.
    pub fn final_estimate(&self) -> Option<f64> {
        self.points.last().map(|p| p.sqrt_objective)
    }
}

fn curve_point(step: usize, e: &RewardEngine) -> CurvePoint {
    CurvePoint {
        step,
        sqrt_objective: e.objective_with(&ObjectiveSpec::sqrt()),
        log_objective: e.objective_with(&ObjectiveSpec {
            f_choice: FChoice::Log,
            log_floor: e.spec().log_floor,
        }),
        bound: e.entropy_lower_bound(),
    }
}

/// Commits `points` one at a time, recording every `record_every` steps and
/// after the last one.
fn stream_curve<I>(
    params: &EngineParams,
    spec: &DistributionSpec,
    points: I,
    record_every: usize,
) -> Result<EntropyCurve>
where
    I: Iterator<Item = Vec<f64>>,
{
    let d = spec.dim();
    let mut engine = params.engine(d)?;
    let every = record_every.max(1);
    let mut out = Vec::new();
    let mut step = 0;
    for p in points {
        engine.commit_reward(&p)?;
        step += 1;
        if step % every == 0 {
            out.push(curve_point(step, &engine));
        }
    }
    if step > 0 && step % every != 0 {
        out.push(curve_point(step, &engine));
    }
    Ok(EntropyCurve {
        label: spec.label(),
        d,
        true_entropy: spec.true_entropy(),
        points: out,
        pathological_fraction: engine.pathological_fraction().ok(),
    })
}

/// Streams `n` samples of each distribution through a fresh engine. The
/// distributions run in parallel; distribution `i` draws with
/// `derive_seed(seed, i)`.
pub fn entropy_sample(
    params: &EngineParams,
    specs: &[DistributionSpec],
    n: usize,
    seed: u64,
    record_every: usize,
) -> Result<Vec<EntropyCurve>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.validate()?;
            let stream = SampleStream::new(spec.clone(), derive_seed(seed, i as u64))?;
            stream_curve(params, spec, stream.take(n), record_every)
        })
        .collect()
}

/// Streams each random walk through a fresh engine.
pub fn entropy_walk(
    params: &EngineParams,
    walks: &[DistributionSpec],
    seed: u64,
    record_every: usize,
) -> Result<Vec<EntropyCurve>> {
    if walks.is_empty() {
        return Err(KmeError::InvalidConfig("no walks given".into()));
    }
    walks
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            if !matches!(spec, DistributionSpec::RandomWalk { .. }) {
                return Err(KmeError::InvalidDistribution(format!(
                    "{} is not a random walk",
                    spec.label()
                )));
            }
            spec.validate()?;
            let stream = SampleStream::new(spec.clone(), derive_seed(seed, i as u64))?;
            stream_curve(params, spec, stream, record_every)
        })
        .collect()
}

/// Commits every point once, in order, and returns the engine.
pub fn fit(params: &EngineParams, points: &[Vec<f64>]) -> Result<RewardEngine> {
    let d = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| KmeError::InvalidConfig("no points to fit".into()))?;
    let mut engine = params.engine(d)?;
    for p in points {
        engine.commit_reward(p)?;
    }
    Ok(engine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub k: usize,
    pub median_rel_error: f64,
    pub q25_rel_error: f64,
    pub q75_rel_error: f64,
    pub max_rel_error: f64,
    /// Grid points that fell in a cell with no Monte-Carlo hits.
    pub empty_cells: usize,
}

/// Settings of [`density_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub ks: Vec<usize>,
    pub n_train: usize,
    pub mc_samples: usize,
    pub grid_per_axis: usize,
    pub grid_inset: f64,
    pub bbox_margin: f64,
}

impl Default for DensityCheck {
    fn default() -> Self {
        Self {
            ks: vec![10, 100, 1000],
            n_train: 100_000,
            mc_samples: 1_000_000,
            grid_per_axis: 5,
            grid_inset: 0.1,
            bbox_margin: 0.01,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fits one model per `k` on the same training sample and compares
/// `1/(k·m̂(c))` with the true pdf on an interior grid of the support box.
pub fn density_check(
    params: &EngineParams,
    spec: &DistributionSpec,
    check: &DensityCheck,
    seed: u64,
) -> Result<Vec<DensityRow>> {
    spec.validate()?;
    let d = spec.dim();
    if d > 2 {
        return Err(KmeError::InvalidConfig(format!(
            "density check supports d <= 2, got {d}"
        )));
    }
    if spec.pdf(&vec![0.0; d]).is_none() {
        return Err(KmeError::InvalidDistribution(format!(
            "{} has no closed-form pdf",
            spec.label()
        )));
    }
    let train = sample(spec, check.n_train, derive_seed(seed, 0))?;
    let bbox = SupportBox::from_points(&train, check.bbox_margin)?;
    let grid = bbox.interior_grid(check.grid_per_axis, check.grid_inset);
    check
        .ks
        .par_iter()
        .map(|&k| {
            let engine = fit(&params.with_k(k), &train)?;
            let model = engine.model();
            let est = cluster_measures_mc(model, &bbox, check.mc_samples, derive_seed(seed, 1))?;
            let mut errs = Vec::with_capacity(grid.len());
            let mut empty = 0;
            for x in &grid {
                let truth = spec.pdf(x).expect("pdf checked above");
                match density_estimate(model, &est, x) {
                    Ok(p) => errs.push((p - truth).abs() / truth),
                    Err(KmeError::ZeroMeasure(_)) => {
                        empty += 1;
                        errs.push(f64::INFINITY);
                    }
                    Err(e) => return Err(e),
                }
            }
            errs.sort_by(f64::total_cmp);
            Ok(DensityRow {
                k,
                median_rel_error: quantile(&errs, 0.5),
                q25_rel_error: quantile(&errs, 0.25),
                q75_rel_error: quantile(&errs, 0.75),
                max_rel_error: *errs.last().unwrap_or(&f64::NAN),
                empty_cells: empty,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub seed: u64,
    pub bound: f64,
    pub true_entropy: f64,
    /// `bound − true_entropy`.
    pub gap: f64,
}

/// Fits a `params.k` model on `n` samples per seed and reports the entropy
/// bound against the closed-form entropy.
pub fn bound_check(
    params: &EngineParams,
    spec: &DistributionSpec,
    n: usize,
    seeds: &[u64],
) -> Result<Vec<BoundRow>> {
    spec.validate()?;
    let h = spec
        .true_entropy()
        .ok_or_else(|| KmeError::EntropyUnavailable(spec.label()))?;
    seeds
        .par_iter()
        .map(|&seed| {
            let engine = fit(params, &sample(spec, n, seed)?)?;
            let bound = engine.entropy_lower_bound();
            Ok(BoundRow {
                seed,
                bound,
                true_entropy: h,
                gap: bound - h,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub d: usize,
    pub commits: usize,
    pub mean_commit_secs: f64,
    pub commits_per_sec: f64,
    pub pathological_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `log(time)` against `log(k)`.
    pub fitted_exponent: Option<f64>,
}

/// Times `commits` commits of uniform `[0,1]^d` states per `k`, after
/// `warmup` untimed commits. Runs sequentially so timings do not compete.
pub fn bench(
    params: &EngineParams,
    workload: &DistributionSpec,
    ks: &[usize],
    warmup: usize,
    commits: usize,
    seed: u64,
) -> Result<BenchReport> {
    workload.validate()?;
    let d = workload.dim();
    let mut rows = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let mut engine = params.with_k(k).engine(d)?;
        let mut stream = SampleStream::new(workload.clone(), derive_seed(seed, i as u64))?;
        for p in stream.by_ref().take(warmup) {
            engine.commit_reward(&p)?;
        }
        let timed: Vec<Vec<f64>> = stream.by_ref().take(commits).collect();
        if timed.len() < commits {
            return Err(KmeError::InvalidConfig(format!(
                "workload {} ran out after {} timed points",
                workload.label(),
                timed.len()
            )));
        }
        let before = (engine.commit_count(), engine.pathological_count());
        let start = Instant::now();
        for p in &timed {
            engine.commit_reward(p)?;
        }
        let secs = start.elapsed().as_secs_f64();
        let n = engine.commit_count() - before.0;
        let path = engine.pathological_count() - before.1;
        rows.push(BenchRow {
            k,
            d,
            commits,
            mean_commit_secs: if commits > 0 { secs / commits as f64 } else { 0.0 },
            commits_per_sec: if secs > 0.0 { commits as f64 / secs } else { 0.0 },
            pathological_fraction: (n > 0).then(|| path as f64 / n as f64),
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.commits > 0 && r.mean_commit_secs > 0.0)
        .map(|r| ((r.k as f64).ln(), r.mean_commit_secs.ln()))
        .collect();
    Ok(BenchReport {
        fitted_exponent: loglog_slope(&pts),
        rows,
    })
}

fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
