//! Hydrothermal scheduling model: thermal generators with per-stage fuel
//! costs, reservoirs with storage bounds, stochastic inflows, and a load
//! penalty for unserved energy. Everything is kept in energy units (MWh).
//!
//! [`build_hydro_templates`] lowers a configuration plus an inflow lattice
//! into per-stage [`StageTemplate`]s: a load-balance row, one water-balance
//! row per reservoir (storage couples consecutive stages), and variable
//! boxes. Spillage and the load penalty guarantee relatively complete
//! recourse, so every reachable state admits a feasible stage problem.

use crate::ambiguity::{build_ambiguity, AmbiguitySet};
use crate::cuts::{StageRow, StageScenario, StageTemplate};
use crate::lp::Relation;
use crate::scenario::Lattice;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HydroError {
    #[error("invalid hydro configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// One thermal generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thermal {
    /// Minimum output per stage (MWh).
    pub min_output: f64,
    /// Maximum output per stage (MWh).
    pub max_output: f64,
    /// Unit generation cost per stage ($/MWh), one entry per stage.
    pub cost: Vec<f64>,
}

/// One reservoir, tracked in energy units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reservoir {
    /// Minimum storage (MWh).
    pub min_storage: f64,
    /// Maximum storage (MWh).
    pub max_storage: f64,
    /// Storage before stage 1 (MWh).
    pub initial_storage: f64,
}

/// Full problem instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HydroConfig {
    /// Number of weekly stages.
    pub horizon: usize,
    pub generators: Vec<Thermal>,
    pub reservoirs: Vec<Reservoir>,
    /// Electricity load per stage (MWh).
    pub demand: Vec<f64>,
    /// Unserved-energy penalty per stage ($/MWh).
    pub penalty_cost: Vec<f64>,
    /// Deterministic stage-1 inflow per reservoir (MWh).
    pub stage1_inflow: Vec<f64>,
}

impl HydroConfig {
    pub fn validate(&self) -> Result<(), HydroError> {
        if self.horizon < 2 {
            return Err(HydroError::InvalidConfig(format!(
                "horizon {} below 2",
                self.horizon
            )));
        }
        if self.generators.is_empty() || self.reservoirs.is_empty() {
            return Err(HydroError::InvalidConfig(
                "need at least one generator and one reservoir".to_string(),
            ));
        }
        for (g, th) in self.generators.iter().enumerate() {
            if !(0.0 <= th.min_output && th.min_output <= th.max_output) {
                return Err(HydroError::InvalidConfig(format!(
                    "generator {g}: output box [{}, {}]",
                    th.min_output, th.max_output
                )));
            }
            if th.cost.len() != self.horizon {
                return Err(HydroError::DimensionMismatch(format!(
                    "generator {g}: {} costs for horizon {}",
                    th.cost.len(),
                    self.horizon
                )));
            }
            if th.cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(HydroError::InvalidConfig(format!(
                    "generator {g}: negative or non-finite cost"
                )));
            }
        }
        for (r, rv) in self.reservoirs.iter().enumerate() {
            if !(0.0 <= rv.min_storage && rv.min_storage <= rv.max_storage) {
                return Err(HydroError::InvalidConfig(format!(
                    "reservoir {r}: storage box [{}, {}]",
                    rv.min_storage, rv.max_storage
                )));
            }
            if rv.initial_storage < rv.min_storage || rv.initial_storage > rv.max_storage {
                return Err(HydroError::InvalidConfig(format!(
                    "reservoir {r}: initial storage {} outside box",
                    rv.initial_storage
                )));
            }
        }
        for (name, v) in [("demand", &self.demand), ("penalty_cost", &self.penalty_cost)] {
            if v.len() != self.horizon {
                return Err(HydroError::DimensionMismatch(format!(
                    "{name}: {} entries for horizon {}",
                    v.len(),
                    self.horizon
                )));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(HydroError::InvalidConfig(format!(
                    "{name}: negative or non-finite entry"
                )));
            }
        }
        if self.stage1_inflow.len() != self.reservoirs.len() {
            return Err(HydroError::DimensionMismatch(format!(
                "{} stage-1 inflows for {} reservoirs",
                self.stage1_inflow.len(),
                self.reservoirs.len()
            )));
        }
        if self.stage1_inflow.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(HydroError::InvalidConfig(
                "stage-1 inflow must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HydroError> {
        let cfg: HydroConfig =
            toml::from_str(text).map_err(|e| HydroError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stages whose demand exceeds thermal capacity plus the given mean
    /// inflow; the penalty variable keeps them feasible, but they signal a
    /// structurally short system.
    pub fn capacity_shortfalls(&self, mean_inflow: f64) -> Vec<(usize, f64)> {
        let thermal_cap: f64 = self.generators.iter().map(|g| g.max_output).sum();
        let hydro_cap = mean_inflow * self.reservoirs.len() as f64;
        self.demand
            .iter()
            .enumerate()
            .filter_map(|(t, d)| {
                let short = d - thermal_cap - hydro_cap;
                (short > 0.0).then_some((t + 1, short))
            })
            .collect()
    }

    /// Largest unit cost anywhere in the instance.
    pub fn max_unit_cost(&self) -> f64 {
        self.generators
            .iter()
            .flat_map(|g| g.cost.iter())
            .chain(self.penalty_cost.iter())
            .fold(0.0f64, |a, c| a.max(*c))
    }

    /// Provable ceiling on any stage value: serving every remaining load at
    /// the worst unit price. Used as the risk-variable box.
    pub fn u_ceiling(&self) -> f64 {
        self.max_unit_cost() * self.demand.iter().sum::<f64>()
    }

    /// Instance at the scale of a national system: storage around 10^6 MWh,
    /// thermal fuel between 45 and 85 $/MWh, 1000 $/MWh load penalty.
    /// Per-stage thermal costs are drawn uniformly with the given seed;
    /// demand defaults to 60% of thermal-plus-mean-hydro capability.
    pub fn full_scale(horizon: usize, mean_inflow: f64, seed: u64) -> Self {
        Self::build_scaled(horizon, mean_inflow, seed, 1.0)
    }

    /// Same shape shrunk by 1000x in energy, for fast tests with
    /// absolute-tolerance arithmetic.
    pub fn small_scale(horizon: usize, mean_inflow: f64, seed: u64) -> Self {
        Self::build_scaled(horizon, mean_inflow, seed, 1e-3)
    }

    fn build_scaled(horizon: usize, mean_inflow: f64, seed: u64, energy: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX); // keep cost draws apart from inflow streams
        let thermal_cap = 50_000.0 * energy;
        let cost: Vec<f64> = (0..horizon).map(|_| rng.gen_range(45.0..85.0)).collect();
        let demand = 0.6 * (thermal_cap + mean_inflow);
        // The free initial storage is prorated with the horizon so shorter
        // studies keep the same water stress per week as the 52-week system
        // (which starts at 5.5e5 MWh).
        let min_storage = 1e5 * energy;
        let max_storage = 1e6 * energy;
        let initial_storage =
            (min_storage + 4.5e5 * energy * horizon as f64 / 52.0).min(max_storage);
        Self {
            horizon,
            generators: vec![Thermal {
                min_output: 0.0,
                max_output: thermal_cap,
                cost,
            }],
            reservoirs: vec![Reservoir {
                min_storage,
                max_storage,
                initial_storage,
            }],
            demand: vec![demand; horizon],
            penalty_cost: vec![1000.0; horizon],
            stage1_inflow: vec![mean_inflow],
        }
    }

    /// Stage decision layout: thermal outputs, then per reservoir
    /// (generation, spill, storage), then unserved energy.
    pub fn num_stage_vars(&self) -> usize {
        self.generators.len() + 3 * self.reservoirs.len() + 1
    }

    /// Index of reservoir `r`'s storage variable in the stage layout.
    pub fn storage_index(&self, r: usize) -> usize {
        self.generators.len() + 3 * r + 2
    }
}

/// Lower the configuration and lattice into per-stage templates.
///
/// Each stochastic stage gets one scenario per lattice support point, with
/// the scenario inflow applied to every reservoir; the stage's ambiguity set
/// uses the sample-size radius rule with the provided `n_samples` and
/// z-score (`z = 0` yields the risk-neutral singleton).
pub fn build_hydro_templates(
    cfg: &HydroConfig,
    lattice: &Lattice,
    n_samples: usize,
    z_half_alpha: f64,
) -> Result<Vec<StageTemplate>, HydroError> {
    cfg.validate()?;
    if lattice.horizon != cfg.horizon {
        return Err(HydroError::DimensionMismatch(format!(
            "lattice horizon {} vs config horizon {}",
            lattice.horizon, cfg.horizon
        )));
    }
    let n = cfg.num_stage_vars();
    let num_g = cfg.generators.len();
    let num_r = cfg.reservoirs.len();
    let u_max = cfg.u_ceiling();

    let mut bounds = Vec::with_capacity(n);
    for g in &cfg.generators {
        bounds.push((g.min_output, g.max_output));
    }
    for rv in &cfg.reservoirs {
        bounds.push((0.0, f64::INFINITY)); // hydro generation
        bounds.push((0.0, f64::INFINITY)); // spillage
        bounds.push((rv.min_storage, rv.max_storage));
    }
    bounds.push((0.0, f64::INFINITY)); // unserved energy

    let scenario_for = |t: usize, inflows: &[f64], coupled: bool| -> StageScenario {
        let mut cost = vec![0.0; n];
        for (g, th) in cfg.generators.iter().enumerate() {
            cost[g] = th.cost[t];
        }
        cost[n - 1] = cfg.penalty_cost[t];

        let mut rows = Vec::with_capacity(1 + num_r);
        // Load balance: hydro + thermal + unserved = demand.
        let mut balance = vec![0.0; n];
        for g in 0..num_g {
            balance[g] = 1.0;
        }
        for r in 0..num_r {
            balance[num_g + 3 * r] = 1.0;
        }
        balance[n - 1] = 1.0;
        rows.push(StageRow {
            coeffs: balance,
            rel: Relation::Eq,
            rhs: cfg.demand[t],
            coupling: if coupled { vec![0.0; n] } else { Vec::new() },
        });
        // Water balance per reservoir: generation + spill + storage equals
        // inflow plus incoming storage.
        for r in 0..num_r {
            let mut coeffs = vec![0.0; n];
            coeffs[num_g + 3 * r] = 1.0;
            coeffs[num_g + 3 * r + 1] = 1.0;
            coeffs[num_g + 3 * r + 2] = 1.0;
            let mut rhs = inflows[r];
            let coupling = if coupled {
                let mut b = vec![0.0; n];
                b[cfg.storage_index(r)] = -1.0;
                b
            } else {
                rhs += cfg.reservoirs[r].initial_storage;
                Vec::new()
            };
            rows.push(StageRow {
                coeffs,
                rel: Relation::Eq,
                rhs,
                coupling,
            });
        }
        StageScenario { cost, rows }
    };

    let mut templates = Vec::with_capacity(cfg.horizon);
    templates.push(StageTemplate {
        scenarios: vec![scenario_for(0, &cfg.stage1_inflow, false)],
        bounds: bounds.clone(),
        u_max,
        ambiguity: AmbiguitySet::singleton(vec![1.0])
            .expect("one-point distribution is valid"),
    });
    for t in 1..cfg.horizon {
        let support = lattice
            .stage_support(t + 1)
            .ok_or_else(|| HydroError::DimensionMismatch(format!("no support for stage {}", t + 1)))?;
        let scenarios: Vec<StageScenario> = support
            .values
            .iter()
            .map(|&inflow| scenario_for(t, &vec![inflow; num_r], true))
            .collect();
        let ambiguity = build_ambiguity(support.f0.clone(), n_samples, z_half_alpha)
            .map_err(|e| HydroError::InvalidConfig(e.to_string()))?;
        templates.push(StageTemplate {
            scenarios,
            bounds: bounds.clone(),
            u_max,
            ambiguity,
        });
    }
    for t in &templates {
        t.validate()
            .map_err(|e| HydroError::DimensionMismatch(e.to_string()))?;
    }
    Ok(templates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{solve_stage, CutPool};
    use crate::scenario::{build_lattice, TrueDistribution};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_stage_setup(seed: u64) -> (HydroConfig, Vec<StageTemplate>) {
        let dist = TrueDistribution::Lognormal {
            mu: (50.0f64).ln(),
            sigma: 0.4,
        };
        let cfg = HydroConfig::small_scale(2, dist.mean(), seed);
        let lattice = build_lattice(&dist, 2, 200, 6, seed).unwrap();
        let templates = build_hydro_templates(&cfg, &lattice, 200, 1.96).unwrap();
        (cfg, templates)
    }

    #[test]
    fn full_scale_instance_shape() {
        let cfg = HydroConfig::full_scale(52, 50_000.0, 1);
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon, 52);
        assert_eq!(cfg.reservoirs[0].max_storage, 1e6);
        assert_eq!(cfg.reservoirs[0].min_storage, 1e5);
        assert_eq!(cfg.reservoirs[0].initial_storage, 5.5e5);
        assert_eq!(cfg.penalty_cost[0], 1000.0);
        assert!(cfg.generators[0]
            .cost
            .iter()
            .all(|c| (45.0..85.0).contains(c)));
        assert_eq!(cfg.num_stage_vars(), 5);
    }

    #[test]
    fn templates_have_expected_dimensions() {
        let (cfg, templates) = two_stage_setup(3);
        assert_eq!(templates.len(), 2);
        assert_eq!(templates[0].scenarios.len(), 1);
        assert_eq!(templates[0].coupling_dim(), 0);
        assert_eq!(templates[1].scenarios.len(), 6);
        assert_eq!(templates[1].coupling_dim(), cfg.num_stage_vars());
        assert!(templates[1].ambiguity.radius() > 0.0);
    }

    #[test]
    fn zero_inflow_at_minimum_storage_forces_thermal() {
        let mut cfg = HydroConfig::small_scale(2, 50.0, 7);
        cfg.reservoirs[0].initial_storage = cfg.reservoirs[0].min_storage;
        cfg.stage1_inflow = vec![0.0];
        let dist = TrueDistribution::Exponential { rate: 1.0 / 50.0 };
        let lattice = build_lattice(&dist, 2, 100, 4, 7).unwrap();
        let templates = build_hydro_templates(&cfg, &lattice, 100, 0.0).unwrap();
        let sol = solve_stage(&templates[0], 0, &[], &CutPool::new(), 1.0).unwrap();
        // Hydro output and spill are zero; thermal plus penalty carries the load.
        assert!(sol.decisions[1].abs() < 1e-9);
        assert!(sol.decisions[2].abs() < 1e-9);
        let served = sol.decisions[0] + sol.decisions[4];
        assert!((served - cfg.demand[0]).abs() < 1e-9);
    }

    #[test]
    fn merit_order_dispatch_by_hand() {
        // Thermal 60 MWh at $50, hydro 30 MWh available for free, demand 100,
        // penalty $1000: dispatch hydro 30, thermal 60, shed 10 => $13 000.
        let cfg = HydroConfig {
            horizon: 2,
            generators: vec![Thermal {
                min_output: 0.0,
                max_output: 60.0,
                cost: vec![50.0, 50.0],
            }],
            reservoirs: vec![Reservoir {
                min_storage: 0.0,
                max_storage: 1000.0,
                initial_storage: 20.0,
            }],
            demand: vec![100.0, 100.0],
            penalty_cost: vec![1000.0, 1000.0],
            stage1_inflow: vec![10.0],
        };
        let dist = TrueDistribution::Exponential { rate: 0.1 };
        let lattice = build_lattice(&dist, 2, 50, 3, 5).unwrap();
        let templates = build_hydro_templates(&cfg, &lattice, 50, 0.0).unwrap();
        let sol = solve_stage(&templates[0], 0, &[], &CutPool::new(), 1.0).unwrap();
        assert!((sol.stage_cost - 13_000.0).abs() < 1e-6, "{}", sol.stage_cost);
        assert!((sol.decisions[1] - 30.0).abs() < 1e-9); // hydro
        assert!((sol.decisions[0] - 60.0).abs() < 1e-9); // thermal
        assert!((sol.decisions[4] - 10.0).abs() < 1e-9); // unserved
    }

    #[test]
    fn recourse_holds_under_random_probing() {
        let (cfg, templates) = two_stage_setup(11);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pool = CutPool::new();
        let sidx = cfg.storage_index(0);
        for _ in 0..100 {
            let mut x_prev = vec![0.0; cfg.num_stage_vars()];
            x_prev[sidx] = rng.gen_range(
                cfg.reservoirs[0].min_storage..=cfg.reservoirs[0].max_storage,
            );
            let scenario = rng.gen_range(0..templates[1].scenarios.len());
            let sol = solve_stage(&templates[1], scenario, &x_prev, &pool, 1.0);
            assert!(sol.is_ok(), "{sol:?}");
        }
    }

    #[test]
    fn water_balance_exact_at_optimum() {
        let (cfg, templates) = two_stage_setup(13);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pool = CutPool::new();
        let sidx = cfg.storage_index(0);
        for _ in 0..20 {
            let mut x_prev = vec![0.0; cfg.num_stage_vars()];
            let v_prev = rng.gen_range(
                cfg.reservoirs[0].min_storage..=cfg.reservoirs[0].max_storage,
            );
            x_prev[sidx] = v_prev;
            let i = rng.gen_range(0..templates[1].scenarios.len());
            let sol = solve_stage(&templates[1], i, &x_prev, &pool, 1.0).unwrap();
            let inflow = templates[1].scenarios[i].rows[1].rhs;
            let lhs = sol.decisions[1] + sol.decisions[2] + sol.decisions[3];
            let rhs = inflow + v_prev;
            assert!(
                (lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()),
                "water balance residual {}",
                lhs - rhs
            );
        }
    }

    #[test]
    fn stage_cost_monotone_in_demand() {
        let (cfg, _) = two_stage_setup(17);
        let dist = TrueDistribution::Exponential { rate: 1.0 / 50.0 };
        let lattice = build_lattice(&dist, 2, 100, 4, 17).unwrap();
        let mut last = -1.0;
        for demand in [10.0, 30.0, 60.0, 90.0, 200.0] {
            let mut c = cfg.clone();
            c.demand = vec![demand; 2];
            let templates = build_hydro_templates(&c, &lattice, 100, 0.0).unwrap();
            let sol = solve_stage(&templates[0], 0, &[], &CutPool::new(), 1.0).unwrap();
            assert!(sol.stage_cost >= last - 1e-9);
            last = sol.stage_cost;
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = HydroConfig::full_scale(4, 50_000.0, 9);
        let text = cfg.to_toml_string();
        let back = HydroConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.horizon, cfg.horizon);
        assert_eq!(back.generators[0].cost, cfg.generators[0].cost);
        assert_eq!(back.demand, cfg.demand);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = HydroConfig::full_scale(4, 50_000.0, 9);
        cfg.reservoirs[0].initial_storage = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg2 = HydroConfig::full_scale(4, 50_000.0, 9);
        cfg2.demand = vec![1.0; 3];
        assert!(cfg2.validate().is_err());
        let mut cfg3 = HydroConfig::full_scale(4, 50_000.0, 9);
        cfg3.generators[0].min_output = 1e9;
        assert!(cfg3.validate().is_err());
    }

    #[test]
    fn capacity_shortfall_detection() {
        let mut cfg = HydroConfig::full_scale(3, 50_000.0, 9);
        assert!(cfg.capacity_shortfalls(50_000.0).is_empty());
        cfg.demand[1] = 1e9;
        let short = cfg.capacity_shortfalls(50_000.0);
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].0, 2);
    }
}
