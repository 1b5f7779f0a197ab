//! Non-parametric density estimate `p̂(x) = 1 / (k · m(c_i))`, where `c_i` is
//! the weighted Voronoi cell containing `x` and `m` its Lebesgue measure.
//!
//! Cell measures have no closed form for additively-weighted diagrams, so
//! they are estimated by Monte-Carlo over an axis-aligned box bounding the
//! support.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{check_vector, KmeError, Result};

const MC_CHUNK: usize = 1 << 15;

/// Axis-aligned bounding box of the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SupportBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(KmeError::ZeroDimension);
        }
        if lower.len() != upper.len() {
            return Err(KmeError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        let ok = lower
            .iter()
            .zip(&upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && l < u);
        if !ok {
            return Err(KmeError::InvalidConfig(
                "support box needs finite lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Empirical bounding box of `points`, widened by `margin` of its width on each side.
    pub fn from_points<S: AsRef<[f64]>>(points: &[S], margin: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| KmeError::InvalidConfig("no points to bound".into()))?
            .as_ref();
        let mut lower = first.to_vec();
        let mut upper = first.to_vec();
        for p in points {
            check_vector(p.as_ref(), lower.len())?;
            for (j, &v) in p.as_ref().iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        for j in 0..lower.len() {
            let w = (upper[j] - lower[j]).max(f64::EPSILON);
            lower[j] -= margin * w;
            upper[j] += margin * w;
        }
        Self::new(lower, upper)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Points on an `n`-per-axis grid spanning the central `1 − 2·inset`
    /// fraction of every axis.
    pub fn interior_grid(&self, per_axis: usize, inset: f64) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(per_axis.pow(d as u32));
        let step = if per_axis > 1 {
            (1.0 - 2.0 * inset) / (per_axis - 1) as f64
        } else {
            0.0
        };
        let offset = if per_axis > 1 { inset } else { 0.5 };
        let mut idx = vec![0usize; d];
        loop {
            out.push(
                (0..d)
                    .map(|j| {
                        let t = offset + step * idx[j] as f64;
                        self.lower[j] + t * (self.upper[j] - self.lower[j])
                    })
                    .collect(),
            );
            let mut j = 0;
            loop {
                if j == d {
                    return out;
                }
                idx[j] += 1;
                if idx[j] < per_axis {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// Monte-Carlo estimate of every cell's Lebesgue measure within a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub measures: Vec<f64>,
    pub hits: Vec<u64>,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Assigns `mc_samples` uniform box samples to cells. Chunks of samples run
/// in parallel, each on its own ChaCha stream, so the result depends only on
/// `seed`.
pub fn cluster_measures_mc(
    model: &ClusterModel,
    bbox: &SupportBox,
    mc_samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    if mc_samples == 0 {
        return Err(KmeError::InvalidConfig("mc_samples must be at least 1".into()));
    }
    if bbox.dim() != model.d() {
        return Err(KmeError::DimensionMismatch {
            expected: model.d(),
            got: bbox.dim(),
        });
    }
    let k = model.k();
    let chunks = mc_samples.div_ceil(MC_CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(mc_samples - c * MC_CHUNK);
            let mut local = vec![0u64; k];
            let mut x = vec![0.0; model.d()];
            for _ in 0..n {
                for (j, v) in x.iter_mut().enumerate() {
                    *v = bbox.lower[j] + (bbox.upper[j] - bbox.lower[j]) * rng.random::<f64>();
                }
                local[model.assign_unchecked(&x)] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; k],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let vol = bbox.volume();
    let measures = hits
        .iter()
        .map(|&h| vol * h as f64 / mc_samples as f64)
        .collect();
    Ok(MeasureEstimate {
        measures,
        hits,
        mc_samples,
        seed,
    })
}

/// `1 / (k · m̂(c_i))` for the cell containing `x`.
pub fn density_estimate(model: &ClusterModel, est: &MeasureEstimate, x: &[f64]) -> Result<f64> {
    if est.measures.len() != model.k() {
        return Err(KmeError::DimensionMismatch {
            expected: model.k(),
            got: est.measures.len(),
        });
    }
    let i = model.assign(x)?;
    let m = est.measures[i];
    if m <= 0.0 {
        return Err(KmeError::ZeroMeasure(i));
    }
    Ok(1.0 / (model.k() as f64 * m))
}

/// Per-cluster CSV: `index,count,measure,density_at_center`. Cells with no
/// Monte-Carlo hits report an empty density.
pub fn write_cluster_csv<W: Write>(
    mut out: W,
    model: &ClusterModel,
    est: &MeasureEstimate,
) -> std::io::Result<()> {
    writeln!(out, "index,count,measure,density_at_center")?;
    for i in 0..model.k() {
        let density = density_estimate(model, est, model.center(i))
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{i},{},{},{density}",
            model.counts()[i],
            est.measures[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval() -> SupportBox {
        SupportBox::new(vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn symmetric_pair_halves_the_interval() {
        let m = ClusterModel::from_parts(vec![0.25, 0.75], vec![3, 3], 1, 0.05, 0.1).unwrap();
        let est = cluster_measures_mc(&m, &unit_interval(), 200_000, 1).unwrap();
        // Binomial standard error ≈ 0.0011.
        assert!((est.measures[0] - 0.5).abs() < 0.006);
        let p = density_estimate(&m, &est, &[0.1]).unwrap();
        assert!((p - 1.0).abs() < 0.03);
    }

    #[test]
    fn measures_partition_the_box() {
        let m = ClusterModel::from_parts(
            vec![0.1, 0.2, 0.8, 0.5, 0.4, 0.9],
            vec![5, 0, 2],
            2,
            0.05,
            0.01,
        )
        .unwrap();
        let bbox = SupportBox::new(vec![-1.0, 0.0], vec![2.0, 1.5]).unwrap();
        let est = cluster_measures_mc(&m, &bbox, 100_003, 7).unwrap();
        assert_eq!(est.hits.iter().sum::<u64>(), 100_003);
        let total: f64 = est.measures.iter().sum();
        assert!((total - bbox.volume()).abs() < 1e-12 * bbox.volume());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = ClusterModel::from_parts(vec![0.2, 0.7, 0.9], vec![1, 2, 3], 1, 0.05, 0.0).unwrap();
        let a = cluster_measures_mc(&m, &unit_interval(), 70_000, 3).unwrap();
        let b = cluster_measures_mc(&m, &unit_interval(), 70_000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_measure_is_an_error() {
        // Cluster 1 sits far outside the box and never wins a sample.
        let m = ClusterModel::from_parts(vec![0.5, 50.0], vec![0, 0], 1, 0.05, 0.0).unwrap();
        let est = cluster_measures_mc(&m, &unit_interval(), 1000, 0).unwrap();
        assert_eq!(est.hits[1], 0);
        assert_eq!(
            density_estimate(&m, &est, &[60.0]),
            Err(KmeError::ZeroMeasure(1))
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = ClusterModel::from_parts(vec![0.2, 0.7], vec![0, 0], 1, 0.05, 0.0).unwrap();
        assert!(cluster_measures_mc(&m, &unit_interval(), 0, 0).is_err());
        let square = SupportBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(cluster_measures_mc(&m, &square, 10, 0).is_err());
        assert!(SupportBox::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn bounding_box_margin() {
        let b = SupportBox::from_points(&[vec![0.0, 2.0], vec![1.0, 4.0]], 0.01).unwrap();
        assert_eq!(b.lower(), &[-0.01, 1.98]);
        assert_eq!(b.upper(), &[1.01, 4.02]);
    }

    #[test]
    fn interior_grid_layout() {
        let b = SupportBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = b.interior_grid(5, 0.1);
        assert_eq!(g.len(), 25);
        assert!(g.iter().all(|p| (0.1..=0.9).contains(&p[0]) && (0.2..=1.8).contains(&p[1])));
        assert!((g[0][0] - 0.1).abs() < 1e-15 && (g[24][1] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn cluster_csv_rows() {
        let m = ClusterModel::from_parts(vec![0.25, 0.75], vec![1, 2], 1, 0.05, 0.0).unwrap();
        let est = cluster_measures_mc(&m, &unit_interval(), 10_000, 0).unwrap();
        let mut buf = Vec::new();
        write_cluster_csv(&mut buf, &m, &est).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,count,measure,density_at_center");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,2,"));
    }
}
