//! The SDDP engine: forward simulation, statistical upper bound, backward
//! cut generation, deterministic lower bound, and the stopping rule.
//!
//! One iteration solves the first stage (lower bound), simulates `M`
//! independent forward paths under the reference distributions, accumulates
//! the risk-adjusted path costs into a statistical upper bound, and walks the
//! stages backwards adding one aggregate cut per trial point per stage.
//! Forward paths and the per-trial scenario solves inside a backward step are
//! data-parallel; pool updates and the iteration loop are sequential.
//!
//! Each forward path draws from its own RNG substream keyed by (iteration,
//! path), so runs are bit-reproducible independent of thread scheduling.

use crate::ambiguity::AmbiguitySet;
use crate::cuts::{
    aggregate_cut, scenario_subgradient, solve_stage, Cut, CutError, CutPool, StageTemplate,
};
use crate::par::map_indexed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::time::Instant;
use thiserror::Error;

/// Salt keeping the engine's RNG streams apart from lattice-construction
/// streams derived from the same user seed.
const FORWARD_SEED_SALT: u64 = 0x7d31_5f8a_9c40_e6b3;

#[derive(Debug, Error)]
pub enum SddpError {
    #[error("iteration {iteration}, stage {stage}: {source}")]
    Stage {
        iteration: usize,
        stage: usize,
        #[source]
        source: CutError,
    },
    #[error("relative stopping test undefined for lower bound {0}; supply an absolute tolerance")]
    NonpositiveLowerBound(f64),
    #[error("invalid run setup: {0}")]
    BadConfig(String),
    #[error("policy file: {0}")]
    PolicyFile(String),
}

/// Convergence tolerance of the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopTolerance {
    /// Stop when `upper + z*s/sqrt(M) - lower <= eps * lower`. Requires a
    /// positive lower bound.
    Relative(f64),
    /// Stop when `upper + z*s/sqrt(M) - lower <= gap`.
    Absolute(f64),
}

#[derive(Debug, Clone)]
pub struct SddpConfig {
    /// Iteration cap `K`.
    pub max_iters: usize,
    /// Forward paths per iteration `M` (at least 2).
    pub paths: usize,
    pub tolerance: StopTolerance,
    /// z-score of the one-sided confidence bound in the stopping test.
    pub z_half_alpha: f64,
    pub seed: u64,
    /// Force a zero ambiguity radius at every stage.
    pub risk_neutral: bool,
    /// Fan the forward paths and backward scenario solves across threads.
    pub parallel: bool,
}

impl Default for SddpConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            paths: 6,
            tolerance: StopTolerance::Relative(0.05),
            z_half_alpha: 1.959963984540054,
            seed: 0,
            risk_neutral: false,
            parallel: true,
        }
    }
}

/// First-stage optimum cached on the policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirstStage {
    pub decisions: Vec<f64>,
    pub u: f64,
}

/// Per-stage cut pools approximating the cost-to-go functions, plus the
/// latest first-stage solution. Pools only grow across iterations.
#[derive(Debug, Clone)]
pub struct Policy {
    /// `pools[t]` under-approximates the cost-to-go after stage `t`
    /// (0-based); the last stage needs none.
    pub pools: Vec<CutPool>,
    pub first_stage: Option<FirstStage>,
}

impl Policy {
    pub fn empty(horizon: usize) -> Self {
        Self {
            pools: (0..horizon.saturating_sub(1)).map(|_| CutPool::new()).collect(),
            first_stage: None,
        }
    }

    pub fn total_cuts(&self) -> usize {
        self.pools.iter().map(|p| p.len()).sum()
    }
}

/// One stage of a simulated path.
#[derive(Debug, Clone)]
pub struct PathStage {
    pub scenario: usize,
    pub decisions: Vec<f64>,
    pub u: f64,
    /// Immediate cost `c·x`.
    pub cost: f64,
}

/// A full forward path, stage 1 included.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub stages: Vec<PathStage>,
}

/// Per-iteration bookkeeping emitted by [`Engine::run`].
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub iteration: usize,
    /// Best certified lower bound so far. Every first-stage optimum is a
    /// valid bound; reporting their running maximum keeps the stream monotone
    /// where alternative optimal bases would otherwise wiggle the last ulp.
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub path_costs: Vec<f64>,
    /// Stopping-rule gap: relative to the lower bound under
    /// [`StopTolerance::Relative`], absolute otherwise.
    pub gap: f64,
    /// Wall-clock seconds since the start of the run.
    pub seconds: f64,
}

/// Sample standard deviation (n - 1 denominator).
fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Upper confidence bound used by the stopping rule.
fn stat_bound(z_bar: f64, path_costs: &[f64], z_half_alpha: f64) -> f64 {
    z_bar + z_half_alpha * sample_std(path_costs) / (path_costs.len() as f64).sqrt()
}

/// Stopping decision after a completed iteration: the iteration cap, or the
/// one-sided confidence bound of the path costs closing on the lower bound.
pub fn should_stop(
    z_bar: f64,
    path_costs: &[f64],
    lower_bound: f64,
    tolerance: &StopTolerance,
    iteration: usize,
    max_iters: usize,
    z_half_alpha: f64,
) -> Result<bool, SddpError> {
    if iteration > max_iters {
        return Ok(true);
    }
    if path_costs.len() < 2 {
        return Err(SddpError::BadConfig(
            "stopping statistic needs at least two path costs".to_string(),
        ));
    }
    let stat = stat_bound(z_bar, path_costs, z_half_alpha);
    match *tolerance {
        StopTolerance::Relative(eps) => {
            if lower_bound <= 0.0 {
                Err(SddpError::NonpositiveLowerBound(lower_bound))
            } else {
                Ok(stat - lower_bound <= eps * lower_bound)
            }
        }
        StopTolerance::Absolute(gap) => Ok(stat - lower_bound <= gap),
    }
}

/// SDDP solver over a fixed stage-template chain.
pub struct Engine<'a> {
    templates: &'a [StageTemplate],
    ambiguity: Vec<AmbiguitySet>,
    empty_pool: CutPool,
    cfg: SddpConfig,
}

impl<'a> Engine<'a> {
    pub fn new(templates: &'a [StageTemplate], cfg: SddpConfig) -> Result<Self, SddpError> {
        if templates.len() < 2 {
            return Err(SddpError::BadConfig(format!(
                "need at least 2 stages, got {}",
                templates.len()
            )));
        }
        if cfg.paths < 2 {
            return Err(SddpError::BadConfig(format!(
                "need at least 2 forward paths, got {}",
                cfg.paths
            )));
        }
        if templates[0].scenarios.len() != 1 {
            return Err(SddpError::BadConfig(
                "stage 1 must be deterministic (exactly one scenario)".to_string(),
            ));
        }
        for (t, tpl) in templates.iter().enumerate() {
            tpl.validate().map_err(|source| SddpError::Stage {
                iteration: 0,
                stage: t + 1,
                source,
            })?;
            if t > 0 && tpl.coupling_dim() != templates[t - 1].num_vars() {
                return Err(SddpError::BadConfig(format!(
                    "stage {} couples {} variables but stage {} has {}",
                    t + 1,
                    tpl.coupling_dim(),
                    t,
                    templates[t - 1].num_vars()
                )));
            }
        }
        let ambiguity = templates
            .iter()
            .map(|t| {
                if cfg.risk_neutral {
                    t.ambiguity.risk_neutral()
                } else {
                    t.ambiguity.clone()
                }
            })
            .collect();
        Ok(Self {
            templates,
            ambiguity,
            empty_pool: CutPool::new(),
            cfg,
        })
    }

    pub fn horizon(&self) -> usize {
        self.templates.len()
    }

    pub fn config(&self) -> &SddpConfig {
        &self.cfg
    }

    /// Ambiguity set actually in force at stage `t` (radius stripped in
    /// risk-neutral mode).
    pub fn effective_ambiguity(&self, t: usize) -> &AmbiguitySet {
        &self.ambiguity[t]
    }

    /// Lower-envelope mass of the stage following `t`; 1 beyond the horizon.
    fn p_lo_next(&self, t: usize) -> f64 {
        if t + 1 < self.templates.len() {
            self.ambiguity[t + 1].p_lo()
        } else {
            1.0
        }
    }

    fn pool_for<'p>(&'p self, policy: &'p Policy, t: usize) -> &'p CutPool {
        if t < self.templates.len() - 1 {
            &policy.pools[t]
        } else {
            &self.empty_pool
        }
    }

    /// Solve the deterministic first stage under the current pools; the
    /// optimum is the lower bound.
    pub fn solve_first_stage(
        &self,
        policy: &Policy,
        iteration: usize,
    ) -> Result<(FirstStage, f64), SddpError> {
        let sol = solve_stage(
            &self.templates[0],
            0,
            &[],
            self.pool_for(policy, 0),
            self.p_lo_next(0),
        )
        .map_err(|source| SddpError::Stage {
            iteration,
            stage: 1,
            source,
        })?;
        Ok((
            FirstStage {
                decisions: sol.decisions,
                u: sol.u,
            },
            sol.objective,
        ))
    }

    fn sample_scenario(&self, t: usize, rng: &mut ChaCha8Rng) -> usize {
        let f0 = self.ambiguity[t].f0();
        let draw: f64 = rng.gen();
        let mut cum = 0.0;
        for (i, p) in f0.iter().enumerate() {
            cum += p;
            if draw < cum {
                return i;
            }
        }
        f0.len() - 1
    }

    /// Simulate `paths` independent trajectories under the current policy.
    /// Requires a cached first-stage solution.
    pub fn forward_pass(
        &self,
        policy: &Policy,
        iteration: usize,
    ) -> Result<Vec<Trajectory>, SddpError> {
        let first = policy.first_stage.as_ref().ok_or_else(|| {
            SddpError::BadConfig("forward pass before any first-stage solve".to_string())
        })?;
        let first_cost: f64 = self.templates[0].scenarios[0]
            .cost
            .iter()
            .zip(&first.decisions)
            .map(|(c, x)| c * x)
            .sum();
        let horizon = self.templates.len();
        let results = map_indexed(self.cfg.paths, self.cfg.parallel, |path| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ FORWARD_SEED_SALT);
            rng.set_stream(((iteration as u64) << 32) | path as u64);
            let mut stages = Vec::with_capacity(horizon);
            stages.push(PathStage {
                scenario: 0,
                decisions: first.decisions.clone(),
                u: first.u,
                cost: first_cost,
            });
            for t in 1..horizon {
                let scenario = self.sample_scenario(t, &mut rng);
                let prev = &stages[t - 1].decisions;
                let sol = solve_stage(
                    &self.templates[t],
                    scenario,
                    prev,
                    self.pool_for(policy, t),
                    self.p_lo_next(t),
                )
                .map_err(|source| SddpError::Stage {
                    iteration,
                    stage: t + 1,
                    source,
                })?;
                stages.push(PathStage {
                    scenario,
                    decisions: sol.decisions,
                    u: sol.u,
                    cost: sol.stage_cost,
                });
            }
            Ok(Trajectory { stages })
        });
        results.into_iter().collect()
    }

    /// Risk-adjusted cost of each path and their mean: the statistical upper
    /// bound estimate.
    ///
    /// Walking the path backwards, the sampled stage-`t` value
    /// `W_t = c_t x_t + (1 - p_lo_{t+1}) u_t + v_{t+1}` estimates that
    /// scenario's subproblem value; reweighting it by the envelope-to-
    /// reference ratios of its own stage,
    /// `v_t = (f_lo_j / f0_j) W_t + ((f_hi_j - f_lo_j) / f0_j) [W_t - u_{t-1}]^+`,
    /// makes `E[v_t]` dominate the risk-adjusted cost-to-go, so the mean path
    /// cost is a (conservative) statistical upper bound. With a zero radius
    /// the ratios collapse to 1 and 0 and `z_i` is the plain path cost.
    pub fn upper_bound(&self, trajectories: &[Trajectory]) -> (f64, Vec<f64>) {
        let horizon = self.templates.len();
        let costs: Vec<f64> = trajectories
            .iter()
            .map(|traj| {
                let mut v = 0.0;
                for t in (1..horizon).rev() {
                    let stage = &traj.stages[t];
                    let amb = &self.ambiguity[t];
                    let j = stage.scenario;
                    let w_lo = amb.f_lo()[j] / amb.f0()[j];
                    let w_tail = (amb.f_hi()[j] - amb.f_lo()[j]) / amb.f0()[j];
                    let value = stage.cost + (1.0 - self.p_lo_next(t)) * stage.u + v;
                    let u_prev = traj.stages[t - 1].u;
                    v = w_lo * value + w_tail * (value - u_prev).max(0.0);
                }
                let first = &traj.stages[0];
                first.cost + (1.0 - self.p_lo_next(0)) * first.u + v
            })
            .collect();
        let mean = costs.iter().sum::<f64>() / costs.len().max(1) as f64;
        (mean, costs)
    }

    /// Walk stages backwards, adding one aggregate cut per trial point to the
    /// preceding stage's pool.
    pub fn backward_pass(
        &self,
        policy: &mut Policy,
        trajectories: &[Trajectory],
        iteration: usize,
    ) -> Result<(), SddpError> {
        let horizon = self.templates.len();
        for t in (1..horizon).rev() {
            let num_scen = self.templates[t].scenarios.len();
            let num_trials = trajectories.len();
            let pool = self.pool_for(policy, t);
            let p_lo_next = self.p_lo_next(t);
            let results = map_indexed(num_trials * num_scen, self.cfg.parallel, |idx| {
                let trial = idx / num_scen;
                let scenario = idx % num_scen;
                let prev = &trajectories[trial].stages[t - 1].decisions;
                solve_stage(&self.templates[t], scenario, prev, pool, p_lo_next).map(|sol| {
                    let g = scenario_subgradient(&sol, &self.templates[t].scenarios[scenario]);
                    (sol.objective, g)
                })
            });
            let mut solved = Vec::with_capacity(num_trials * num_scen);
            for r in results {
                solved.push(r.map_err(|source| SddpError::Stage {
                    iteration,
                    stage: t + 1,
                    source,
                })?);
            }
            for trial in 0..num_trials {
                let chunk = &solved[trial * num_scen..(trial + 1) * num_scen];
                let q_vals: Vec<f64> = chunk.iter().map(|(q, _)| *q).collect();
                let g_vecs: Vec<Vec<f64>> = chunk.iter().map(|(_, g)| g.clone()).collect();
                let anchor = &trajectories[trial].stages[t - 1];
                let cut = aggregate_cut(
                    &q_vals,
                    &g_vecs,
                    &anchor.decisions,
                    anchor.u,
                    &self.ambiguity[t],
                );
                policy.pools[t - 1].push(cut);
            }
        }
        Ok(())
    }

    /// Full solve: iterate forward/backward passes until the stopping rule
    /// fires or the iteration cap is reached.
    pub fn run(&self) -> Result<(Policy, Vec<RunRecord>), SddpError> {
        let start = Instant::now();
        let mut policy = Policy::empty(self.horizon());
        let mut records = Vec::new();

        let (first, first_lb) = self.solve_first_stage(&policy, 0)?;
        policy.first_stage = Some(first);
        let mut lower = first_lb;

        let mut iteration = 0;
        while iteration < self.cfg.max_iters {
            let trajectories = self.forward_pass(&policy, iteration)?;
            let (z_bar, path_costs) = self.upper_bound(&trajectories);
            self.backward_pass(&mut policy, &trajectories, iteration)?;
            let (first, lb) = self.solve_first_stage(&policy, iteration)?;
            policy.first_stage = Some(first);
            lower = lower.max(lb);
            iteration += 1;

            let stat = stat_bound(z_bar, &path_costs, self.cfg.z_half_alpha);
            let gap = match self.cfg.tolerance {
                StopTolerance::Relative(_) => (stat - lower) / lower,
                StopTolerance::Absolute(_) => stat - lower,
            };
            records.push(RunRecord {
                iteration,
                lower_bound: lower,
                upper_bound: z_bar,
                path_costs: path_costs.clone(),
                gap,
                seconds: start.elapsed().as_secs_f64(),
            });
            // A nonpositive lower bound leaves the relative criterion
            // undefined; the test cannot fire yet, so keep iterating under
            // the cap instead of erroring out mid-run.
            let testable = match self.cfg.tolerance {
                StopTolerance::Relative(_) => lower > 0.0,
                StopTolerance::Absolute(_) => true,
            };
            if testable
                && should_stop(
                    z_bar,
                    &path_costs,
                    lower,
                    &self.cfg.tolerance,
                    iteration + 1,
                    self.cfg.max_iters,
                    self.cfg.z_half_alpha,
                )?
            {
                break;
            }
        }
        let _ = lower;
        Ok((policy, records))
    }
}

/// Stream the per-iteration records as CSV
/// (`k,lower_bound,upper_bound,gap,seconds`).
pub fn write_run_csv<W: Write>(records: &[RunRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "lower_bound", "upper_bound", "gap", "seconds"])?;
    for r in records {
        w.write_record(&[
            r.iteration.to_string(),
            r.lower_bound.to_string(),
            r.upper_bound.to_string(),
            r.gap.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    stages: Vec<Vec<Cut>>,
    first_stage: Option<FirstStage>,
}

/// Persist a policy as JSON: per stage, the list of
/// `{intercept, coef_x[], coef_u}` cuts, plus the cached first-stage point.
pub fn save_policy<W: Write>(policy: &Policy, writer: W) -> Result<(), SddpError> {
    let doc = PolicyFile {
        stages: policy.pools.iter().map(|p| p.cuts.clone()).collect(),
        first_stage: policy.first_stage.clone(),
    };
    serde_json::to_writer_pretty(writer, &doc).map_err(|e| SddpError::PolicyFile(e.to_string()))
}

/// Load a policy saved by [`save_policy`]. `horizon` must match the model the
/// policy will drive.
pub fn load_policy<R: Read>(reader: R, horizon: usize) -> Result<Policy, SddpError> {
    let doc: PolicyFile =
        serde_json::from_reader(reader).map_err(|e| SddpError::PolicyFile(e.to_string()))?;
    if doc.stages.len() != horizon.saturating_sub(1) {
        return Err(SddpError::PolicyFile(format!(
            "policy has {} stage pools, horizon {} needs {}",
            doc.stages.len(),
            horizon,
            horizon.saturating_sub(1)
        )));
    }
    Ok(Policy {
        pools: doc
            .stages
            .into_iter()
            .map(|cuts| CutPool { cuts, floor: 0.0 })
            .collect(),
        first_stage: doc.first_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::{build_hydro_templates, HydroConfig};
    use crate::scenario::{build_lattice, TrueDistribution};

    fn hydro_engine_parts(
        horizon: usize,
        scenarios: usize,
        n_samples: usize,
        z: f64,
        seed: u64,
    ) -> Vec<StageTemplate> {
        let dist = TrueDistribution::Lognormal {
            mu: (50.0f64).ln() - 0.08,
            sigma: 0.4,
        };
        let cfg = HydroConfig::small_scale(horizon, dist.mean(), seed);
        let lattice = build_lattice(&dist, horizon, n_samples, scenarios, seed).unwrap();
        build_hydro_templates(&cfg, &lattice, n_samples, z).unwrap()
    }

    #[test]
    fn upper_bound_recursion_hand_value() {
        // Two stages; stage 2 has envelope masses (0.8, 1.2) over a uniform
        // two-point support, so the sampled-scenario weights are 0.8 and 0.4.
        // The path pays 10 at stage 2 hedged at u1 = 9:
        // z = 0.2*9 + 0.8*10 + 0.4*[10 - 9]^+ = 10.2.
        use crate::cuts::{StageRow, StageScenario};
        use crate::lp::Relation;
        let trivial_scenario = |w: usize| StageScenario {
            cost: vec![0.0],
            rows: vec![StageRow {
                coeffs: vec![1.0],
                rel: Relation::GreaterEq,
                rhs: 0.0,
                coupling: vec![0.0; w],
            }],
        };
        let templates = vec![
            StageTemplate {
                scenarios: vec![trivial_scenario(0)],
                bounds: vec![(0.0, 1.0)],
                u_max: 100.0,
                ambiguity: AmbiguitySet::singleton(vec![1.0]).unwrap(),
            },
            StageTemplate {
                scenarios: vec![trivial_scenario(1), trivial_scenario(1)],
                bounds: vec![(0.0, 1.0)],
                u_max: 100.0,
                // f0 = (0.5, 0.5), d = 0.1: p_lo = 0.8, p_hi = 1.2.
                ambiguity: AmbiguitySet::with_radius(vec![0.5, 0.5], 0.1).unwrap(),
            },
        ];
        let engine = Engine::new(&templates, SddpConfig::default()).unwrap();
        let stage = |cost: f64, u: f64| PathStage {
            scenario: 0,
            decisions: vec![0.0],
            u,
            cost,
        };
        let traj = Trajectory {
            stages: vec![stage(0.0, 9.0), stage(10.0, 0.0)],
        };
        let (z_bar, costs) = engine.upper_bound(&[traj]);
        assert!((costs[0] - 10.2).abs() < 1e-12, "{}", costs[0]);
        assert_eq!(z_bar, costs[0]);
    }

    #[test]
    fn upper_bound_mean_of_identical_paths() {
        let templates = hydro_engine_parts(3, 4, 100, 1.96, 21);
        let engine = Engine::new(&templates, SddpConfig::default()).unwrap();
        let mut policy = Policy::empty(3);
        let (first, _) = engine.solve_first_stage(&policy, 0).unwrap();
        policy.first_stage = Some(first);
        let t = engine.forward_pass(&policy, 0).unwrap();
        let clones = vec![t[0].clone(), t[0].clone(), t[0].clone()];
        let (z_bar, costs) = engine.upper_bound(&clones);
        assert_eq!(z_bar, costs[0]);
    }

    #[test]
    fn stopping_rule_cases() {
        let tol = StopTolerance::Relative(0.05);
        // Iteration cap.
        assert!(should_stop(10.0, &[10.0, 10.0], 1.0, &tol, 301, 300, 1.96).unwrap());
        // Zero gap, zero variance.
        assert!(should_stop(5.0, &[5.0, 5.0, 5.0], 5.0, &tol, 2, 300, 1.96).unwrap());
        // Gap twice the tolerance: continue.
        assert!(!should_stop(1.10, &[1.10, 1.10], 1.0, &tol, 2, 300, 1.96).unwrap());
        // Nonpositive lower bound is an error for the relative test.
        assert!(matches!(
            should_stop(1.0, &[1.0, 1.0], 0.0, &tol, 2, 300, 1.96),
            Err(SddpError::NonpositiveLowerBound(_))
        ));
        // Absolute tolerance covers that case.
        let abs = StopTolerance::Absolute(2.0);
        assert!(should_stop(1.0, &[1.0, 1.0], 0.0, &abs, 2, 300, 1.96).unwrap());
    }

    #[test]
    fn empty_pool_lower_bound_is_myopic() {
        let templates = hydro_engine_parts(3, 4, 100, 1.96, 33);
        let engine = Engine::new(&templates, SddpConfig::default()).unwrap();
        let policy = Policy::empty(3);
        let (first, lb) = engine.solve_first_stage(&policy, 0).unwrap();
        let myopic: f64 = templates[0].scenarios[0]
            .cost
            .iter()
            .zip(&first.decisions)
            .map(|(c, x)| c * x)
            .sum();
        assert!((lb - myopic).abs() <= 1e-9 * (1.0 + myopic.abs()));
        assert_eq!(first.u, 0.0);
    }

    #[test]
    fn forward_pass_deterministic_and_seed_sensitive() {
        let templates = hydro_engine_parts(4, 5, 200, 1.96, 5);
        let engine = Engine::new(&templates, SddpConfig::default()).unwrap();
        let mut policy = Policy::empty(4);
        let (first, _) = engine.solve_first_stage(&policy, 0).unwrap();
        policy.first_stage = Some(first);
        let a = engine.forward_pass(&policy, 0).unwrap();
        let b = engine.forward_pass(&policy, 0).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            for (sa, sb) in ta.stages.iter().zip(&tb.stages) {
                assert_eq!(sa.scenario, sb.scenario);
                assert_eq!(sa.decisions, sb.decisions);
            }
        }
        // A different iteration index reshuffles the sampled scenarios.
        let c = engine.forward_pass(&policy, 1).unwrap();
        let same = a
            .iter()
            .zip(&c)
            .all(|(x, y)| {
                x.stages
                    .iter()
                    .zip(&y.stages)
                    .all(|(sx, sy)| sx.scenario == sy.scenario)
            });
        assert!(!same, "iteration index should decorrelate paths");
    }

    #[test]
    fn degenerate_single_scenario_paths_identical() {
        let templates = hydro_engine_parts(2, 1, 50, 1.96, 8);
        for seed in [1u64, 99, 12345] {
            let cfg = SddpConfig {
                seed,
                ..SddpConfig::default()
            };
            let engine = Engine::new(&templates, cfg).unwrap();
            let mut policy = Policy::empty(2);
            let (first, _) = engine.solve_first_stage(&policy, 0).unwrap();
            policy.first_stage = Some(first);
            let t = engine.forward_pass(&policy, 0).unwrap();
            for traj in &t {
                assert_eq!(traj.stages[1].scenario, 0);
                assert_eq!(traj.stages[1].decisions, t[0].stages[1].decisions);
            }
        }
    }

    #[test]
    fn backward_pass_adds_one_cut_per_trial_and_improves_pools() {
        let templates = hydro_engine_parts(4, 5, 200, 1.96, 5);
        let engine = Engine::new(&templates, SddpConfig::default()).unwrap();
        let mut policy = Policy::empty(4);
        let (first, _) = engine.solve_first_stage(&policy, 0).unwrap();
        policy.first_stage = Some(first);
        let trajectories = engine.forward_pass(&policy, 0).unwrap();
        let before: Vec<Vec<f64>> = (0..3)
            .map(|t| {
                trajectories
                    .iter()
                    .map(|traj| policy.pools[t].evaluate(&traj.stages[t].decisions, traj.stages[t].u))
                    .collect()
            })
            .collect();
        engine
            .backward_pass(&mut policy, &trajectories, 0)
            .unwrap();
        for pool in &policy.pools {
            assert_eq!(pool.len(), engine.config().paths);
        }
        for t in 0..3 {
            for (i, traj) in trajectories.iter().enumerate() {
                let after = policy.pools[t].evaluate(&traj.stages[t].decisions, traj.stages[t].u);
                assert!(after >= before[t][i] - 1e-12);
            }
        }
    }

    #[test]
    fn lower_bound_nondecreasing_over_iterations() {
        let templates = hydro_engine_parts(3, 6, 300, 1.96, 77);
        let cfg = SddpConfig {
            max_iters: 25,
            tolerance: StopTolerance::Relative(1e-9),
            seed: 77,
            ..SddpConfig::default()
        };
        let engine = Engine::new(&templates, cfg).unwrap();
        let (_, records) = engine.run().unwrap();
        assert!(!records.is_empty());
        for w in records.windows(2) {
            assert!(
                w[1].lower_bound >= w[0].lower_bound,
                "lb dropped: {} -> {}",
                w[0].lower_bound,
                w[1].lower_bound
            );
        }
    }

    #[test]
    fn risk_neutral_mode_reduces_to_plain_path_costs() {
        let templates = hydro_engine_parts(4, 5, 200, 1.96, 13);
        let cfg = SddpConfig {
            max_iters: 3,
            risk_neutral: true,
            seed: 13,
            ..SddpConfig::default()
        };
        let engine = Engine::new(&templates, cfg).unwrap();
        let mut policy = Policy::empty(4);
        let (first, _) = engine.solve_first_stage(&policy, 0).unwrap();
        policy.first_stage = Some(first);
        let trajectories = engine.forward_pass(&policy, 0).unwrap();
        let (_, costs) = engine.upper_bound(&trajectories);
        for (traj, z) in trajectories.iter().zip(&costs) {
            let plain: f64 = traj.stages.iter().map(|s| s.cost).sum();
            assert!(
                (z - plain).abs() <= 1e-12 * (1.0 + plain.abs()),
                "risk-adjusted {z} vs plain {plain}"
            );
        }
    }

    #[test]
    fn run_is_deterministic_for_fixed_seed() {
        let templates = hydro_engine_parts(3, 4, 150, 1.96, 4);
        let cfg = SddpConfig {
            max_iters: 8,
            seed: 4,
            ..SddpConfig::default()
        };
        let a = Engine::new(&templates, cfg.clone()).unwrap().run().unwrap();
        let b = Engine::new(&templates, cfg).unwrap().run().unwrap();
        assert_eq!(a.1.len(), b.1.len());
        for (ra, rb) in a.1.iter().zip(&b.1) {
            assert_eq!(ra.lower_bound.to_bits(), rb.lower_bound.to_bits());
            assert_eq!(ra.upper_bound.to_bits(), rb.upper_bound.to_bits());
            assert_eq!(ra.path_costs, rb.path_costs);
        }
        assert_eq!(a.0.total_cuts(), b.0.total_cuts());
        for (pa, pb) in a.0.pools.iter().zip(&b.0.pools) {
            for (ca, cb) in pa.cuts.iter().zip(&pb.cuts) {
                assert_eq!(ca.intercept.to_bits(), cb.intercept.to_bits());
                assert_eq!(ca.coef_u.to_bits(), cb.coef_u.to_bits());
            }
        }
    }

    #[test]
    fn sequential_matches_parallel() {
        let templates = hydro_engine_parts(3, 4, 150, 1.96, 4);
        let base = SddpConfig {
            max_iters: 5,
            seed: 4,
            ..SddpConfig::default()
        };
        let par = Engine::new(
            &templates,
            SddpConfig {
                parallel: true,
                ..base.clone()
            },
        )
        .unwrap()
        .run()
        .unwrap();
        let seq = Engine::new(
            &templates,
            SddpConfig {
                parallel: false,
                ..base
            },
        )
        .unwrap()
        .run()
        .unwrap();
        for (ra, rb) in par.1.iter().zip(&seq.1) {
            assert_eq!(ra.lower_bound.to_bits(), rb.lower_bound.to_bits());
            assert_eq!(ra.upper_bound.to_bits(), rb.upper_bound.to_bits());
        }
    }

    #[test]
    fn policy_json_round_trip() {
        let templates = hydro_engine_parts(3, 4, 150, 1.96, 4);
        let cfg = SddpConfig {
            max_iters: 4,
            seed: 4,
            ..SddpConfig::default()
        };
        let (policy, _) = Engine::new(&templates, cfg).unwrap().run().unwrap();
        let mut buf = Vec::new();
        save_policy(&policy, &mut buf).unwrap();
        let loaded = load_policy(buf.as_slice(), 3).unwrap();
        assert_eq!(loaded.total_cuts(), policy.total_cuts());
        for (pa, pb) in policy.pools.iter().zip(&loaded.pools) {
            for (ca, cb) in pa.cuts.iter().zip(&pb.cuts) {
                assert_eq!(ca.intercept.to_bits(), cb.intercept.to_bits());
                assert_eq!(ca.coef_x, cb.coef_x);
            }
        }
        assert!(load_policy(buf.as_slice(), 7).is_err());
    }

    #[test]
    fn run_respects_iteration_cap() {
        let templates = hydro_engine_parts(3, 4, 150, 1.96, 4);
        let cfg = SddpConfig {
            max_iters: 3,
            tolerance: StopTolerance::Relative(1e-12),
            seed: 4,
            ..SddpConfig::default()
        };
        let (_, records) = Engine::new(&templates, cfg).unwrap().run().unwrap();
        assert_eq!(records.len(), 3);
    }

    #[test]
    fn run_csv_schema() {
        let templates = hydro_engine_parts(3, 4, 150, 1.96, 4);
        let cfg = SddpConfig {
            max_iters: 2,
            seed: 4,
            ..SddpConfig::default()
        };
        let (_, records) = Engine::new(&templates, cfg).unwrap().run().unwrap();
        let mut buf = Vec::new();
        write_run_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,lower_bound,upper_bound,gap,seconds\n"));
        assert_eq!(text.lines().count(), records.len() + 1);
    }
}
