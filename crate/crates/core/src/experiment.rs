//! Experiment driver: consistency studies, convergence traces, and
//! out-of-sample policy evaluation over the hydrothermal instance.
//!
//! A study cell fixes a true distribution and a sample count `N`, builds a
//! lattice from `N` draws, runs the robust engine, and compares its terminal
//! lower bound `Z_a` against the risk-neutral value `Z_n` obtained from a
//! large calibration sample of the same distribution with a zero ambiguity
//! radius. `Gap = (Z_a - Z_n) / Z_n` shrinks as `N` grows.
//!
//! Output files are CSV (stable column order) and JSON, written atomically
//! (temp file + rename).

use crate::hydro::{build_hydro_templates, HydroConfig, HydroError};
use crate::scenario::{build_lattice, ScenarioError, TrueDistribution};
use crate::sddp::{Engine, Policy, RunRecord, SddpConfig, SddpError, StopTolerance};
use crate::cuts::StageTemplate;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellFailure {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Hydro(#[from] HydroError),
    #[error(transparent)]
    Sddp(#[from] SddpError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    BadSpec(String),
    #[error("[{distribution}, N={n}] {source}")]
    Cell {
        distribution: String,
        n: usize,
        #[source]
        source: CellFailure,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Settings of one experiment campaign.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub distributions: Vec<TrueDistribution>,
    /// Raw sample counts `N` to sweep.
    pub sample_sizes: Vec<usize>,
    /// Scenarios per stage `S` (clamped to `N` when data is scarcer).
    pub scenarios: usize,
    pub horizon: usize,
    /// Relative optimality gap of the stopping rule.
    pub epsilon: f64,
    pub max_iters: usize,
    pub paths: usize,
    /// Confidence level feeding both the ambiguity radius and the stopping
    /// statistic through `z = quantile(1 - alpha/2)`.
    pub alpha: f64,
    pub seed: u64,
    /// Draws used to discretize the true distribution for the risk-neutral
    /// baseline.
    pub calibration_samples: usize,
    pub parallel: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            distributions: all_default_distributions(),
            sample_sizes: vec![10, 100, 1000, 9000],
            scenarios: 12,
            horizon: 12,
            epsilon: 0.05,
            max_iters: 300,
            paths: 6,
            alpha: 0.05,
            seed: 7,
            calibration_samples: 100_000,
            parallel: true,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.distributions.is_empty() {
            return Err(ExperimentError::BadSpec("no distributions".to_string()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|n| *n == 0) {
            return Err(ExperimentError::BadSpec(
                "sample sizes must be positive".to_string(),
            ));
        }
        if self.scenarios == 0 || self.paths < 2 || self.max_iters == 0 {
            return Err(ExperimentError::BadSpec(
                "scenarios, paths and iteration cap must be positive (paths >= 2)".to_string(),
            ));
        }
        if self.horizon < 2 {
            return Err(ExperimentError::BadSpec(format!(
                "horizon {} below 2",
                self.horizon
            )));
        }
        if !(0.0 < self.epsilon && self.epsilon < 1.0) {
            return Err(ExperimentError::BadSpec(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(ExperimentError::BadSpec(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.calibration_samples < self.scenarios {
            return Err(ExperimentError::BadSpec(
                "calibration sample smaller than the scenario count".to_string(),
            ));
        }
        Ok(())
    }

    pub fn z_half_alpha(&self) -> f64 {
        z_score(self.alpha)
    }
}

/// Two-sided z-score: `quantile(1 - alpha/2)` of the standard normal.
pub fn z_score(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

/// Target mean of the default inflow distributions (MWh per week).
pub const DEFAULT_MEAN_INFLOW: f64 = 50_000.0;

/// Named default inflow models, all with mean [`DEFAULT_MEAN_INFLOW`].
/// `"normal"` is accepted as an alias for the truncated normal.
pub fn default_distribution(kind: &str) -> Option<TrueDistribution> {
    let m = DEFAULT_MEAN_INFLOW;
    match kind {
        "lognormal" => Some(TrueDistribution::Lognormal {
            mu: m.ln() - 0.125,
            sigma: 0.5,
        }),
        "normal" | "truncated-normal" => Some(TrueDistribution::TruncatedNormal {
            mean: m,
            std_dev: 0.4 * m,
        }),
        "weibull" => Some(TrueDistribution::Weibull {
            shape: 2.0,
            scale: m / statrs::function::gamma::gamma(1.5),
        }),
        "exponential" => Some(TrueDistribution::Exponential { rate: 1.0 / m }),
        _ => None,
    }
}

pub fn all_default_distributions() -> Vec<TrueDistribution> {
    ["lognormal", "exponential", "truncated-normal", "weibull"]
        .iter()
        .map(|k| default_distribution(k).expect("known kind"))
        .collect()
}

/// One row of the consistency table.
#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub distribution: String,
    pub n: usize,
    pub gap: f64,
    pub steps: usize,
    pub z_a: f64,
    pub z_n: f64,
    pub seconds: f64,
}

/// Everything produced by one engine run on one instance.
#[derive(Debug)]
pub struct InstanceRun {
    pub config: HydroConfig,
    pub policy: Policy,
    pub records: Vec<RunRecord>,
    /// Terminal lower bound.
    pub lower_bound: f64,
    pub steps: usize,
    pub seconds: f64,
}

fn cell_seed(seed: u64, kind: &str, n: usize) -> u64 {
    let mut h = seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in kind.bytes() {
        h = h.rotate_left(7) ^ (b as u64).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    }
    h
}

/// Build the hydro templates of one study cell. The hydro instance itself
/// (thermal costs, storage) depends only on the campaign seed, so every cell
/// of a study prices the same system; the lattice seed varies per cell.
pub fn build_instance(
    spec: &ExperimentSpec,
    dist: &TrueDistribution,
    n_samples: usize,
    base_config: Option<&HydroConfig>,
    risk_neutral: bool,
) -> Result<(HydroConfig, Vec<StageTemplate>), ExperimentError> {
    let tag = |source: CellFailure| ExperimentError::Cell {
        distribution: dist.kind().to_string(),
        n: n_samples,
        source,
    };
    let cfg = match base_config {
        Some(c) => c.clone(),
        None => HydroConfig::full_scale(spec.horizon, dist.mean(), spec.seed),
    };
    let s_eff = spec.scenarios.min(n_samples);
    let lattice = build_lattice(
        dist,
        spec.horizon,
        n_samples,
        s_eff,
        cell_seed(spec.seed, dist.kind(), n_samples),
    )
    .map_err(|e| tag(e.into()))?;
    let z = if risk_neutral { 0.0 } else { spec.z_half_alpha() };
    let templates =
        build_hydro_templates(&cfg, &lattice, n_samples, z).map_err(|e| tag(e.into()))?;
    Ok((cfg, templates))
}

/// Build and solve one instance end to end.
pub fn run_instance(
    spec: &ExperimentSpec,
    dist: &TrueDistribution,
    n_samples: usize,
    base_config: Option<&HydroConfig>,
    risk_neutral: bool,
) -> Result<InstanceRun, ExperimentError> {
    spec.validate()?;
    let (config, templates) = build_instance(spec, dist, n_samples, base_config, risk_neutral)?;
    let sddp = SddpConfig {
        max_iters: spec.max_iters,
        paths: spec.paths,
        tolerance: StopTolerance::Relative(spec.epsilon),
        z_half_alpha: spec.z_half_alpha(),
        seed: cell_seed(spec.seed, dist.kind(), n_samples),
        risk_neutral,
        parallel: spec.parallel,
    };
    let tag = |source: SddpError| ExperimentError::Cell {
        distribution: dist.kind().to_string(),
        n: n_samples,
        source: source.into(),
    };
    let engine = Engine::new(&templates, sddp).map_err(tag)?;
    let (policy, records) = engine.run().map_err(tag)?;
    let lower_bound = records.last().map(|r| r.lower_bound).unwrap_or(f64::NAN);
    let steps = records.len();
    let seconds = records.last().map(|r| r.seconds).unwrap_or(0.0);
    Ok(InstanceRun {
        config,
        policy,
        records,
        lower_bound,
        steps,
        seconds,
    })
}

/// Sweep every (distribution, N) cell: robust value from `N` samples against
/// the risk-neutral value under the calibrated true distribution.
pub fn run_consistency_study(
    spec: &ExperimentSpec,
    base_config: Option<&HydroConfig>,
) -> Result<Vec<GapRow>, ExperimentError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for dist in &spec.distributions {
        let baseline = run_instance(spec, dist, spec.calibration_samples, base_config, true)?;
        let z_n = baseline.lower_bound;
        for &n in &spec.sample_sizes {
            let run = run_instance(spec, dist, n, base_config, false)?;
            rows.push(GapRow {
                distribution: dist.kind().to_string(),
                n,
                gap: (run.lower_bound - z_n) / z_n,
                steps: run.steps,
                z_a: run.lower_bound,
                z_n,
                seconds: run.seconds,
            });
        }
    }
    Ok(rows)
}

/// Out-of-sample simulation summary of a fixed policy.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub paths: usize,
    /// Risk-adjusted path costs (the engine's upper-bound statistic).
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    /// Plain cumulative stage costs, no risk adjustment.
    pub mean_plain: f64,
    pub std_plain: f64,
}

/// Simulate `paths` fresh forward paths under a fixed policy (no new cuts).
pub fn evaluate_policy(
    templates: &[StageTemplate],
    policy: &Policy,
    paths: usize,
    seed: u64,
    parallel: bool,
) -> Result<EvalSummary, ExperimentError> {
    let cfg = SddpConfig {
        paths,
        seed,
        parallel,
        ..SddpConfig::default()
    };
    let wrap = |source: SddpError| ExperimentError::Cell {
        distribution: "eval".to_string(),
        n: paths,
        source: source.into(),
    };
    let engine = Engine::new(templates, cfg).map_err(wrap)?;
    let mut policy = policy.clone();
    if policy.first_stage.is_none() {
        let (first, _) = engine.solve_first_stage(&policy, 0).map_err(wrap)?;
        policy.first_stage = Some(first);
    }
    let trajectories = engine.forward_pass(&policy, 0).map_err(wrap)?;
    let (mean, costs) = engine.upper_bound(&trajectories);
    let plain: Vec<f64> = trajectories
        .iter()
        .map(|t| t.stages.iter().map(|s| s.cost).sum())
        .collect();
    let std_of = |v: &[f64], m: f64| {
        if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        }
    };
    let mean_plain = plain.iter().sum::<f64>() / plain.len() as f64;
    Ok(EvalSummary {
        paths,
        mean,
        std_dev: std_of(&costs, mean),
        min: costs.iter().cloned().fold(f64::INFINITY, f64::min),
        max: costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean_plain,
        std_plain: std_of(&plain, mean_plain),
    })
}

/// `gap_table.csv`: distribution, N, gap, steps, z_a, z_n, seconds.
pub fn write_gap_csv<W: Write>(rows: &[GapRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["distribution", "N", "gap", "steps", "z_a", "z_n", "seconds"])?;
    for r in rows {
        w.write_record(&[
            r.distribution.clone(),
            r.n.to_string(),
            r.gap.to_string(),
            r.steps.to_string(),
            r.z_a.to_string(),
            r.z_n.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `trace.csv`: iter, lower, upper, gap, log_upper, log_lower, seconds.
/// Log columns are base-10 for plotting the early iterations.
pub fn write_trace_csv<W: Write>(records: &[RunRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iter",
        "lower",
        "upper",
        "gap",
        "log_upper",
        "log_lower",
        "seconds",
    ])?;
    for r in records {
        w.write_record(&[
            r.iteration.to_string(),
            r.lower_bound.to_string(),
            r.upper_bound.to_string(),
            r.gap.to_string(),
            r.upper_bound.log10().to_string(),
            r.lower_bound.log10().to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a file atomically: temp sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
