//! Seeded synthetic samplers with closed-form entropies where they exist.

use std::f64::consts::{E, PI};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KmeError, Result};

/// Component variance of the mixtures in [`sample_suite`].
///
/// Well-separated mixtures of `n` equal components have entropy close to
/// `log n + H(N(σ²))`, so the suite's ordering `U₂ > 4N > 2N > N(0.02)`
/// requires `0.01 < σ² < 1/(8πe) ≈ 0.0146`.
pub const MIXTURE_SIGMA2: f64 = 0.012;

/// Walk increment standard deviations used by [`walk_suite`].
pub const WALK_SIGMAS: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sigma2: f64,
}

/// Declarative description of a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Isotropic Gaussian with per-coordinate variance `sigma2`.
    Gaussian {
        mean: Vec<f64>,
        sigma2: f64,
    },
    GaussianMixture {
        components: Vec<MixtureComponent>,
    },
    /// `x_0 = 0`, `x_{t+1} = x_t + ξ_t` with `ξ_t ~ N(0, σ² I)`. Yields
    /// `x_1 … x_steps`. With `ar_coefficient = Some(ρ)` the update becomes
    /// `x_{t+1} = ρ x_t + √(1 − ρ²) ξ_t`, whose stationary law is `N(0, σ² I)`.
    RandomWalk {
        sigma: f64,
        d: usize,
        steps: usize,
        #[serde(default)]
        ar_coefficient: Option<f64>,
    },
}

impl DistributionSpec {
    pub fn unit_square() -> Self {
        Self::UniformBox {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        }
    }

    pub fn gaussian(mean: Vec<f64>, sigma2: f64) -> Self {
        Self::Gaussian { mean, sigma2 }
    }

    /// Equal-weight mixture with the given component means.
    pub fn equal_mixture(means: Vec<Vec<f64>>, sigma2: f64) -> Self {
        let w = 1.0 / means.len() as f64;
        Self::GaussianMixture {
            components: means
                .into_iter()
                .map(|mean| MixtureComponent {
                    weight: w,
                    mean,
                    sigma2,
                })
                .collect(),
        }
    }

    pub fn random_walk(sigma: f64, d: usize, steps: usize) -> Self {
        Self::RandomWalk {
            sigma,
            d,
            steps,
            ar_coefficient: None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lower, .. } => lower.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::GaussianMixture { components } => {
                components.first().map_or(0, |c| c.mean.len())
            }
            Self::RandomWalk { d, .. } => *d,
        }
    }

    /// Short human-readable name used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::UniformBox { lower, .. } => format!("U{}", lower.len()),
            Self::Gaussian { sigma2, .. } => format!("N({sigma2})"),
            Self::GaussianMixture { components } => format!("{}N", components.len()),
            Self::RandomWalk {
                sigma,
                d,
                ar_coefficient,
                ..
            } => match ar_coefficient {
                None => format!("walk(d={d},sigma={sigma})"),
                Some(r) => format!("ar1(d={d},sigma={sigma},rho={r})"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KmeError::InvalidDistribution(msg));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::UniformBox { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return bad("box bounds must be non-empty and equally long".into());
                }
                if !finite(lower) || !finite(upper) || lower.iter().zip(upper).any(|(l, u)| l >= u) {
                    return bad("box needs finite lower < upper in every coordinate".into());
                }
            }
            Self::Gaussian { mean, sigma2 } => {
                if mean.is_empty() || !finite(mean) {
                    return bad("gaussian mean must be non-empty and finite".into());
                }
                if !(sigma2.is_finite() && *sigma2 > 0.0) {
                    return bad(format!("sigma2 must be positive, got {sigma2}"));
                }
            }
            Self::GaussianMixture { components } => {
                let Some(first) = components.first() else {
                    return bad("mixture needs at least one component".into());
                };
                let d = first.mean.len();
                let mut total = 0.0;
                for c in components {
                    if c.mean.len() != d || d == 0 || !finite(&c.mean) {
                        return bad("mixture means must share a positive dimension".into());
                    }
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return bad(format!("mixture weight must be positive, got {}", c.weight));
                    }
                    if !(c.sigma2.is_finite() && c.sigma2 > 0.0) {
                        return bad(format!("sigma2 must be positive, got {}", c.sigma2));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}"));
                }
            }
            Self::RandomWalk {
                sigma,
                d,
                ar_coefficient,
                ..
            } => {
                if *d == 0 {
                    return bad("walk dimension must be positive".into());
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return bad(format!("walk sigma must be positive, got {sigma}"));
                }
                if let Some(r) = ar_coefficient {
                    if !(r.is_finite() && r.abs() < 1.0) {
                        return bad(format!("AR coefficient must lie in (-1, 1), got {r}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Closed-form differential entropy, when one exists.
    pub fn true_entropy(&self) -> Option<f64> {
        match self {
            Self::UniformBox { lower, upper } => {
                Some(lower.iter().zip(upper).map(|(l, u)| (u - l).ln()).sum())
            }
            Self::Gaussian { mean, sigma2 } => {
                Some(mean.len() as f64 / 2.0 * (2.0 * PI * E * sigma2).ln())
            }
            Self::GaussianMixture { .. } | Self::RandomWalk { .. } => None,
        }
    }

    /// Probability density at `x`, for the static distributions.
    pub fn pdf(&self, x: &[f64]) -> Option<f64> {
        match self {
            Self::UniformBox { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (l, u))| *l <= *v && *v <= *u);
                let vol: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).product();
                Some(if inside { 1.0 / vol } else { 0.0 })
            }
            Self::Gaussian { mean, sigma2 } => Some(gaussian_pdf(x, mean, *sigma2)),
            Self::GaussianMixture { components } => Some(
                components
                    .iter()
                    .map(|c| c.weight * gaussian_pdf(x, &c.mean, c.sigma2))
                    .sum(),
            ),
            Self::RandomWalk { .. } => None,
        }
    }
}

fn gaussian_pdf(x: &[f64], mean: &[f64], sigma2: f64) -> f64 {
    let d = mean.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    (-0.5 * sq / sigma2).exp() / (2.0 * PI * sigma2).powf(d / 2.0)
}

/// Deterministic stream of points from a [`DistributionSpec`].
///
/// Static distributions never end; random walks end after `steps` points.
pub struct SampleStream {
    spec: DistributionSpec,
    rng: ChaCha8Rng,
    walk: Vec<f64>,
    emitted: usize,
}

impl SampleStream {
    pub fn new(spec: DistributionSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let walk = vec![0.0; spec.dim()];
        Ok(Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            walk,
            emitted: 0,
        })
    }

    fn gaussian_into(rng: &mut ChaCha8Rng, mean: &[f64], sd: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(mean.iter().map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            m + sd * z
        }));
    }
}

impl Iterator for SampleStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.walk.len());
        match &self.spec {
            DistributionSpec::UniformBox { lower, upper } => {
                out.extend(
                    lower
                        .iter()
                        .zip(upper)
                        .map(|(l, u)| l + (u - l) * self.rng.random::<f64>()),
                );
            }
            DistributionSpec::Gaussian { mean, sigma2 } => {
                Self::gaussian_into(&mut self.rng, mean, sigma2.sqrt(), &mut out);
            }
            DistributionSpec::GaussianMixture { components } => {
                // A single component skips the selection draw so it follows the
                // same random path as the equivalent Gaussian.
                let c = if components.len() == 1 {
                    &components[0]
                } else {
                    let u: f64 = self.rng.random();
                    let mut acc = 0.0;
                    components
                        .iter()
                        .find(|c| {
                            acc += c.weight;
                            u < acc
                        })
                        .unwrap_or_else(|| components.last().expect("validated non-empty"))
                };
                Self::gaussian_into(&mut self.rng, &c.mean, c.sigma2.sqrt(), &mut out);
            }
            DistributionSpec::RandomWalk {
                sigma,
                steps,
                ar_coefficient,
                ..
            } => {
                if self.emitted >= *steps {
                    return None;
                }
                let (keep, scale) = match ar_coefficient {
                    None => (1.0, *sigma),
                    Some(r) => (*r, sigma * (1.0 - r * r).sqrt()),
                };
                for x in self.walk.iter_mut() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *x = keep * *x + scale * z;
                }
                out.extend_from_slice(&self.walk);
            }
        }
        self.emitted += 1;
        Some(out)
    }
}

/// `n` points (or the whole trajectory, for random walks) from `spec`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let stream = SampleStream::new(spec.clone(), seed)?;
    Ok(match spec {
        DistributionSpec::RandomWalk { .. } => stream.collect(),
        _ => {
            if n == 0 {
                return Err(KmeError::InvalidDistribution("n must be at least 1".into()));
            }
            stream.take(n).collect()
        }
    })
}

/// Monte-Carlo estimate of `−E[log p(X)]` for distributions with a density.
pub fn mc_entropy(spec: &DistributionSpec, n: usize, seed: u64) -> Option<f64> {
    spec.pdf(&vec![0.0; spec.dim()])?;
    let stream = SampleStream::new(spec.clone(), seed).ok()?;
    let total: f64 = stream
        .take(n)
        .map(|x| -spec.pdf(&x).expect("density exists").ln())
        .sum();
    Some(total / n as f64)
}

/// The two-dimensional suite in decreasing order of entropy:
/// `U₂, 4N, 2N, N(0.02), N(0.01), N(0.005)`.
pub fn sample_suite() -> Vec<DistributionSpec> {
    let grid4 = vec![
        vec![0.25, 0.25],
        vec![0.25, 0.75],
        vec![0.75, 0.25],
        vec![0.75, 0.75],
    ];
    let pair = vec![vec![0.25, 0.5], vec![0.75, 0.5]];
    vec![
        DistributionSpec::unit_square(),
        DistributionSpec::equal_mixture(grid4, MIXTURE_SIGMA2),
        DistributionSpec::equal_mixture(pair, MIXTURE_SIGMA2),
        DistributionSpec::gaussian(vec![0.5, 0.5], 0.02),
        DistributionSpec::gaussian(vec![0.5, 0.5], 0.01),
        DistributionSpec::gaussian(vec![0.5, 0.5], 0.005),
    ]
}

/// Random walks for every `(d, σ)` pair, grouped by dimension.
pub fn walk_suite(dims: &[usize], sigmas: &[f64], steps: usize) -> Vec<DistributionSpec> {
    dims.iter()
        .flat_map(|&d| sigmas.iter().map(move |&s| DistributionSpec::random_walk(s, d, steps)))
        .collect()
}

/// Writes one CSV row per point, with an `x0,x1,…` header.
pub fn write_points_csv<W: Write>(mut out: W, points: &[Vec<f64>]) -> std::io::Result<()> {
    let d = points.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_points_inside_and_reproducible() {
        let spec = DistributionSpec::unit_square();
        let a = sample(&spec, 4, 11).unwrap();
        let b = sample(&spec, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
        assert_ne!(a, sample(&spec, 4, 12).unwrap());
    }

    #[test]
    fn closed_form_entropies() {
        assert_eq!(DistributionSpec::unit_square().true_entropy(), Some(0.0));
        let g = DistributionSpec::gaussian(vec![0.0, 0.0], 1.0);
        assert!((g.true_entropy().unwrap() - 2.837877066409345).abs() < 1e-12);
        let g = DistributionSpec::gaussian(vec![0.0, 0.0], 0.01);
        assert!((g.true_entropy().unwrap() - (-1.767293119578746)).abs() < 1e-12);
        let mix = DistributionSpec::equal_mixture(vec![vec![0.0; 2], vec![1.0; 2]], 0.01);
        assert_eq!(mix.true_entropy(), None);
        assert_eq!(DistributionSpec::random_walk(0.1, 2, 5).true_entropy(), None);
    }

    #[test]
    fn single_component_mixture_matches_gaussian_path() {
        let g = DistributionSpec::gaussian(vec![0.3, -0.2], 0.04);
        let m = DistributionSpec::equal_mixture(vec![vec![0.3, -0.2]], 0.04);
        assert_eq!(sample(&g, 50, 5).unwrap(), sample(&m, 50, 5).unwrap());
    }

    #[test]
    fn walk_single_step_variance() {
        // One step from the origin is N(0, σ²) per coordinate; pool many seeds.
        let sigma = 0.3;
        let spec = DistributionSpec::random_walk(sigma, 3, 1);
        let mut values = Vec::new();
        for seed in 0..4000 {
            let pts = sample(&spec, 1, seed).unwrap();
            assert_eq!(pts.len(), 1);
            values.extend_from_slice(&pts[0]);
        }
        let n = values.len() as f64;
        let var = values.iter().map(|v| v * v).sum::<f64>() / n;
        // (n·var/σ²) ~ χ²_n; its standard deviation relative to n is √(2/n).
        let z = (var / (sigma * sigma) - 1.0) / (2.0 / n).sqrt();
        assert!(z.abs() < 4.0, "variance {var} z-score {z}");
    }

    #[test]
    fn walk_lengths() {
        assert!(sample(&DistributionSpec::random_walk(1.0, 2, 0), 1, 0).unwrap().is_empty());
        assert_eq!(sample(&DistributionSpec::random_walk(1.0, 2, 17), 1, 0).unwrap().len(), 17);
        let ar = DistributionSpec::RandomWalk {
            sigma: 1.0,
            d: 2,
            steps: 10,
            ar_coefficient: Some(0.9),
        };
        assert_eq!(sample(&ar, 1, 0).unwrap().len(), 10);
    }

    #[test]
    fn gaussian_mean_within_four_standard_errors() {
        let spec = DistributionSpec::gaussian(vec![1.0, -2.0, 0.5], 0.25);
        let n = 20_000;
        let pts = sample(&spec, n, 99).unwrap();
        for (j, m) in [1.0, -2.0, 0.5].iter().enumerate() {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            assert!((mean - m).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        }
    }

    #[test]
    fn validation() {
        let bad = [
            DistributionSpec::gaussian(vec![0.0], 0.0),
            DistributionSpec::UniformBox {
                lower: vec![1.0],
                upper: vec![0.0],
            },
            DistributionSpec::GaussianMixture {
                components: vec![MixtureComponent {
                    weight: 0.5,
                    mean: vec![0.0],
                    sigma2: 1.0,
                }],
            },
            DistributionSpec::GaussianMixture { components: vec![] },
            DistributionSpec::random_walk(-1.0, 2, 3),
            DistributionSpec::random_walk(1.0, 0, 3),
        ];
        for spec in bad {
            assert!(sample(&spec, 3, 0).is_err(), "{spec:?}");
        }
        assert!(sample(&DistributionSpec::unit_square(), 0, 0).is_err());
    }

    #[test]
    fn suite_entropy_ordering() {
        let suite = sample_suite();
        let h: Vec<f64> = suite
            .iter()
            .enumerate()
            .map(|(i, s)| s.true_entropy().unwrap_or_else(|| mc_entropy(s, 200_000, i as u64).unwrap()))
            .collect();
        for w in h.windows(2) {
            assert!(w[0] > w[1] + 0.05, "entropies not decreasing: {h:?}");
        }
    }

    #[test]
    fn mc_entropy_agrees_with_closed_form() {
        let g = DistributionSpec::gaussian(vec![0.0, 0.0], 0.02);
        let est = mc_entropy(&g, 200_000, 3).unwrap();
        assert!((est - g.true_entropy().unwrap()).abs() < 0.01);
    }

    #[test]
    fn csv_output() {
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &[vec![1.0, 2.5], vec![-0.5, 0.0]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,x1\n1,2.5\n-0.5,0\n");
    }
}
