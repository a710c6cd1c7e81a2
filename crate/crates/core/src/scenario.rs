//! Inflow sampling, empirical discretization, and the stagewise-independent
//! scenario lattice.
//!
//! Raw draws come from one of four configurable "true" distributions (or from
//! a CSV of historical observations). A stage support compresses a sample
//! batch into `S` equal-probability quantile bins, each represented by its
//! bin mean; the per-stage supports form a [`Lattice`].
//!
//! All sampling is driven by a seedable, portable generator with one RNG
//! substream per stage, so lattices are bit-reproducible across runs and
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as GaussRef};
use statrs::function::gamma::gamma;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("insufficient data: need at least {needed} samples, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("horizon must be at least 2, got {0}")]
    BadHorizon(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv: {0}")]
    Malformed(String),
}

/// Families of "true" inflow distributions, all with nonnegative support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrueDistribution {
    /// ln X ~ N(mu, sigma^2).
    Lognormal { mu: f64, sigma: f64 },
    /// N(mean, std_dev^2) conditioned on being nonnegative.
    TruncatedNormal { mean: f64, std_dev: f64 },
    Weibull { shape: f64, scale: f64 },
    Exponential { rate: f64 },
}

impl TrueDistribution {
    pub fn kind(&self) -> &'static str {
        match self {
            TrueDistribution::Lognormal { .. } => "lognormal",
            TrueDistribution::TruncatedNormal { .. } => "truncated-normal",
            TrueDistribution::Weibull { .. } => "weibull",
            TrueDistribution::Exponential { .. } => "exponential",
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok = match *self {
            TrueDistribution::Lognormal { mu, sigma } => mu.is_finite() && sigma > 0.0,
            TrueDistribution::TruncatedNormal { mean, std_dev } => {
                mean.is_finite() && std_dev > 0.0
            }
            TrueDistribution::Weibull { shape, scale } => shape > 0.0 && scale > 0.0,
            TrueDistribution::Exponential { rate } => rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ScenarioError::InvalidParameters(format!("{self:?}")))
        }
    }

    /// Analytic mean of the distribution.
    pub fn mean(&self) -> f64 {
        match *self {
            TrueDistribution::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            TrueDistribution::TruncatedNormal { mean, std_dev } => {
                let std_normal = GaussRef::new(0.0, 1.0).expect("unit normal");
                let a = mean / std_dev;
                mean + std_dev * std_normal.pdf(a) / std_normal.cdf(a)
            }
            TrueDistribution::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
            TrueDistribution::Exponential { rate } => 1.0 / rate,
        }
    }

    /// CDF of the distribution, used by convergence diagnostics.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            TrueDistribution::Lognormal { mu, sigma } => {
                let std_normal = GaussRef::new(0.0, 1.0).expect("unit normal");
                std_normal.cdf((x.ln() - mu) / sigma)
            }
            TrueDistribution::TruncatedNormal { mean, std_dev } => {
                let normal = GaussRef::new(mean, std_dev).expect("validated");
                let mass_at_zero = normal.cdf(0.0);
                (normal.cdf(x) - mass_at_zero) / (1.0 - mass_at_zero)
            }
            TrueDistribution::Weibull { shape, scale } => {
                1.0 - (-(x / scale).powf(shape)).exp()
            }
            TrueDistribution::Exponential { rate } => 1.0 - (-rate * x).exp(),
        }
    }

    fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            TrueDistribution::Lognormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma).expect("validated");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            TrueDistribution::TruncatedNormal { mean, std_dev } => {
                let dist = Normal::new(mean, std_dev).expect("validated");
                (0..n)
                    .map(|_| loop {
                        let x = dist.sample(rng);
                        if x >= 0.0 {
                            break x;
                        }
                    })
                    .collect()
            }
            TrueDistribution::Weibull { shape, scale } => {
                let dist = Weibull::new(scale, shape).expect("validated");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            TrueDistribution::Exponential { rate } => {
                let dist = Exp::new(rate).expect("validated");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        }
    }
}

/// Draw `n` i.i.d. samples, deterministically for a given seed.
pub fn sample_true(
    dist: &TrueDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, ScenarioError> {
    dist.validate()?;
    if n == 0 {
        return Err(ScenarioError::InsufficientData { needed: 1, have: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dist.sample_with(n, &mut rng))
}

/// Finite support of one stochastic stage: `S` strictly increasing scenario
/// values with their empirical probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSupport {
    pub values: Vec<f64>,
    pub f0: Vec<f64>,
}

impl StageSupport {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sizes of the `s` quantile bins over `n` sorted samples: near-equal, with
/// the remainder spread over the leading bins.
pub(crate) fn bin_sizes(n: usize, s: usize) -> Vec<usize> {
    let base = n / s;
    let extra = n % s;
    (0..s).map(|r| base + usize::from(r < extra)).collect()
}

/// Compress samples into `s` equal-probability bins; each scenario value is
/// its bin's sample mean and carries mass `bin count / total count`.
///
/// Bins whose means coincide (possible only with heavily duplicated samples)
/// are merged so the support stays strictly increasing.
pub fn build_stage_support(samples: &[f64], s: usize) -> Result<StageSupport, ScenarioError> {
    if s == 0 || samples.len() < s {
        return Err(ScenarioError::InsufficientData {
            needed: s.max(1),
            have: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(ScenarioError::InvalidParameters(format!(
            "non-finite sample {bad}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();

    let mut values = Vec::with_capacity(s);
    let mut counts: Vec<usize> = Vec::with_capacity(s);
    let mut start = 0;
    for size in bin_sizes(n, s) {
        let bin = &sorted[start..start + size];
        let mean = bin.iter().sum::<f64>() / size as f64;
        match values.last() {
            Some(&prev) if prev == mean => {
                *counts.last_mut().expect("values nonempty") += size;
            }
            _ => {
                values.push(mean);
                counts.push(size);
            }
        }
        start += size;
    }

    let mut f0: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    // Pin the total mass to exactly one.
    let k = f0.len();
    f0[k - 1] = 1.0 - f0.iter().take(k - 1).sum::<f64>();
    Ok(StageSupport { values, f0 })
}

/// Per-stage supports for the stochastic stages `t = 2..=T` of a horizon-`T`
/// problem. Stage 1 is deterministic and carries no support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lattice {
    pub horizon: usize,
    /// `supports[k]` belongs to stage `k + 2`.
    pub supports: Vec<StageSupport>,
}

impl Lattice {
    /// Support of stage `t` (1-based); `None` for the deterministic stage 1.
    pub fn stage_support(&self, t: usize) -> Option<&StageSupport> {
        if t < 2 || t > self.horizon {
            None
        } else {
            Some(&self.supports[t - 2])
        }
    }
}

/// Sample `n_per_stage` draws for every stochastic stage and reduce each
/// batch to an `s`-point support. Each stage consumes its own RNG substream
/// (stream id = stage index), so growing the horizon does not disturb the
/// draws of earlier stages.
pub fn build_lattice(
    dist: &TrueDistribution,
    horizon: usize,
    n_per_stage: usize,
    s: usize,
    seed: u64,
) -> Result<Lattice, ScenarioError> {
    dist.validate()?;
    if horizon < 2 {
        return Err(ScenarioError::BadHorizon(horizon));
    }
    let mut supports = Vec::with_capacity(horizon - 1);
    for stage in 2..=horizon {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stage as u64);
        let samples = dist.sample_with(n_per_stage, &mut rng);
        supports.push(build_stage_support(&samples, s)?);
    }
    Ok(Lattice { horizon, supports })
}

/// Parse historical observations: a header row of stage indices, then one
/// column per stochastic stage and one row per observation. Returns the
/// per-stage sample columns in file order.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let width = rdr.headers()?.len();
    if width == 0 {
        return Err(ScenarioError::Malformed("no stage columns".to_string()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); width];
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(ScenarioError::Malformed(format!(
                "row {} has {} fields, expected {width}",
                line + 2,
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                ScenarioError::Malformed(format!("row {}, column {col}: {field:?}", line + 2))
            })?;
            columns[col].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(ScenarioError::Malformed("no observations".to_string()));
    }
    Ok(columns)
}

/// Build a lattice from raw per-stage sample columns (stages `2..=T` in
/// order), as ingested by [`read_samples_csv`].
pub fn lattice_from_samples(columns: &[Vec<f64>], s: usize) -> Result<Lattice, ScenarioError> {
    if columns.is_empty() {
        return Err(ScenarioError::BadHorizon(1));
    }
    let supports = columns
        .iter()
        .map(|c| build_stage_support(c, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Lattice {
        horizon: columns.len() + 1,
        supports,
    })
}
