//! Stage subproblems with the epigraph approximation of the cost-to-go
//! function, scenario subgradients, and aggregate supporting hyperplanes.
//!
//! A stage subproblem minimizes `c·x + (1 - p_lo_next) u + θ` where `θ` is
//! kept above every cut of the next stage's pool. The pool can hold thousands
//! of cuts while only a handful bind at any optimum, so [`solve_stage`] adds
//! cut rows lazily: solve with the active set, pull in the most violated
//! cuts, repeat until none are violated. The result is the exact optimum of
//! the full LP together with the duals of the structural rows.

use crate::ambiguity::AmbiguitySet;
use crate::lp::{self, LinearProgram, LpError, LpRow, LpStatus, Relation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A cut row is treated as violated when the pool value exceeds `θ` by more
/// than this, relative to the magnitudes involved.
const CUT_VIOLATION_TOL: f64 = 1e-9;

/// How many violated cut rows to activate per resolve round.
const CUT_BATCH: usize = 8;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("stage subproblem infeasible (scenario {scenario}): relatively complete recourse violated")]
    StageInfeasible { scenario: usize },
    #[error("stage subproblem unbounded (scenario {scenario}): feasible set is not compact")]
    StageUnbounded { scenario: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// One structural constraint of a stage scenario:
/// `coeffs · x_t  rel  rhs - coupling · x_{t-1}`.
#[derive(Debug, Clone)]
pub struct StageRow {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
    pub coupling: Vec<f64>,
}

/// Stage data for one scenario realization.
#[derive(Debug, Clone)]
pub struct StageScenario {
    pub cost: Vec<f64>,
    pub rows: Vec<StageRow>,
}

/// All scenario realizations of one stage plus the stage's ambiguity set
/// over them. Every scenario shares the decision dimension and bounds.
#[derive(Debug, Clone)]
pub struct StageTemplate {
    pub scenarios: Vec<StageScenario>,
    /// Bounds of the stage decision variables.
    pub bounds: Vec<(f64, f64)>,
    /// Upper bound of the risk variable box `[0, u_max]`.
    pub u_max: f64,
    pub ambiguity: AmbiguitySet,
}

impl StageTemplate {
    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    /// Width of the coupling rows, i.e. the previous stage's decision
    /// dimension (zero for the first stage).
    pub fn coupling_dim(&self) -> usize {
        self.scenarios
            .iter()
            .flat_map(|s| s.rows.iter())
            .map(|r| r.coupling.len())
            .next()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), CutError> {
        let n = self.num_vars();
        if self.scenarios.is_empty() {
            return Err(CutError::DimensionMismatch("no scenarios".to_string()));
        }
        if self.scenarios.len() != self.ambiguity.len() {
            return Err(CutError::DimensionMismatch(format!(
                "{} scenarios against ambiguity support of {}",
                self.scenarios.len(),
                self.ambiguity.len()
            )));
        }
        let prev = self.coupling_dim();
        for (i, sc) in self.scenarios.iter().enumerate() {
            if sc.cost.len() != n {
                return Err(CutError::DimensionMismatch(format!(
                    "scenario {i}: cost width {} vs {n} variables",
                    sc.cost.len()
                )));
            }
            for (r, row) in sc.rows.iter().enumerate() {
                if row.coeffs.len() != n || row.coupling.len() != prev {
                    return Err(CutError::DimensionMismatch(format!(
                        "scenario {i} row {r}: widths {}/{} vs {n}/{prev}",
                        row.coeffs.len(),
                        row.coupling.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One supporting hyperplane of a cost-to-go function in `(x, u)` space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cut {
    pub intercept: f64,
    pub coef_x: Vec<f64>,
    pub coef_u: f64,
}

impl Cut {
    pub fn value(&self, x: &[f64], u: f64) -> f64 {
        self.intercept
            + self
                .coef_x
                .iter()
                .zip(x)
                .map(|(c, xi)| c * xi)
                .sum::<f64>()
            + self.coef_u * u
    }
}

/// Pool of cuts approximating one stage's cost-to-go function from below,
/// floored at `floor` (zero by default: stage costs are nonnegative in the
/// hydro model; set differently for models with negative costs).
#[derive(Debug, Clone)]
pub struct CutPool {
    pub cuts: Vec<Cut>,
    pub floor: f64,
}

impl Default for CutPool {
    fn default() -> Self {
        Self::new()
    }
}

impl CutPool {
    pub fn new() -> Self {
        Self {
            cuts: Vec::new(),
            floor: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn push(&mut self, cut: Cut) {
        self.cuts.push(cut);
    }

    /// Pointwise maximum over the cuts, floored.
    pub fn evaluate(&self, x: &[f64], u: f64) -> f64 {
        self.cuts
            .iter()
            .map(|c| c.value(x, u))
            .fold(self.floor, f64::max)
    }
}

/// Optimum of one stage scenario subproblem.
#[derive(Debug, Clone)]
pub struct StageSolution {
    /// Full objective `c·x + (1 - p_lo_next) u + θ`.
    pub objective: f64,
    pub decisions: Vec<f64>,
    pub u: f64,
    pub theta: f64,
    /// Multipliers of the structural rows only (cut rows excluded).
    pub duals: Vec<f64>,
    /// Immediate cost `c·x`.
    pub stage_cost: f64,
}

/// Solve scenario `scenario_idx` of a stage given the incoming decision
/// `x_prev`, the cut pool of the following stage, and the lower-envelope mass
/// `p_lo_next` of the following stage's ambiguity set (1 for the last stage).
pub fn solve_stage(
    template: &StageTemplate,
    scenario_idx: usize,
    x_prev: &[f64],
    pool: &CutPool,
    p_lo_next: f64,
) -> Result<StageSolution, CutError> {
    let n = template.num_vars();
    let sc = &template.scenarios[scenario_idx];
    let prev = template.coupling_dim();
    if x_prev.len() != prev {
        return Err(CutError::DimensionMismatch(format!(
            "incoming decision has {} entries, coupling expects {prev}",
            x_prev.len()
        )));
    }

    // Variables: x (n entries), u, theta.
    let mut objective = sc.cost.clone();
    objective.push(1.0 - p_lo_next);
    objective.push(1.0);
    let mut bounds = template.bounds.clone();
    bounds.push((0.0, template.u_max));
    bounds.push((pool.floor, f64::INFINITY));

    let structural: Vec<LpRow> = sc
        .rows
        .iter()
        .map(|row| {
            let mut coeffs = row.coeffs.clone();
            coeffs.push(0.0);
            coeffs.push(0.0);
            let shift: f64 = row.coupling.iter().zip(x_prev).map(|(b, x)| b * x).sum();
            LpRow {
                coeffs,
                rel: row.rel,
                rhs: row.rhs - shift,
            }
        })
        .collect();

    let cut_row = |cut: &Cut| -> LpRow {
        let mut coeffs: Vec<f64> = cut.coef_x.iter().map(|c| -c).collect();
        coeffs.push(-cut.coef_u);
        coeffs.push(1.0);
        LpRow::ge(coeffs, cut.intercept)
    };

    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; pool.cuts.len()];
    loop {
        let mut rows = structural.clone();
        rows.extend(active.iter().map(|&i| cut_row(&pool.cuts[i])));
        let lp = LinearProgram {
            objective: objective.clone(),
            rows,
            bounds: bounds.clone(),
        };
        let sol = lp::solve_lp(&lp)?;
        match sol.status {
            LpStatus::Infeasible => {
                return Err(CutError::StageInfeasible {
                    scenario: scenario_idx,
                })
            }
            LpStatus::Unbounded => {
                return Err(CutError::StageUnbounded {
                    scenario: scenario_idx,
                })
            }
            LpStatus::Optimal => {}
        }
        let x = &sol.primal[..n];
        let u = sol.primal[n];
        let theta = sol.primal[n + 1];

        let mut violated: Vec<(usize, f64)> = Vec::new();
        for (i, cut) in pool.cuts.iter().enumerate() {
            if in_active[i] {
                continue;
            }
            let v = cut.value(x, u);
            let tol = CUT_VIOLATION_TOL * (1.0 + v.abs().max(theta.abs()));
            if v - theta > tol {
                violated.push((i, v - theta));
            }
        }
        if violated.is_empty() {
            let stage_cost: f64 = sc.cost.iter().zip(x).map(|(c, xi)| c * xi).sum();
            return Ok(StageSolution {
                objective: sol.objective,
                decisions: x.to_vec(),
                u,
                theta,
                duals: sol.duals[..sc.rows.len()].to_vec(),
                stage_cost,
            });
        }
        violated.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(i, _) in violated.iter().take(CUT_BATCH) {
            in_active[i] = true;
            active.push(i);
        }
    }
}

/// Subgradient of the scenario value function with respect to the incoming
/// decision: `g = -Bᵀ π` with `π` the structural-row multipliers.
pub fn scenario_subgradient(sol: &StageSolution, scenario: &StageScenario) -> Vec<f64> {
    let prev = scenario
        .rows
        .first()
        .map(|r| r.coupling.len())
        .unwrap_or(0);
    let mut g = vec![0.0; prev];
    for (row, pi) in scenario.rows.iter().zip(&sol.duals) {
        for (gj, bj) in g.iter_mut().zip(&row.coupling) {
            *gj -= pi * bj;
        }
    }
    g
}

/// Risk-adjusted cost-to-go value
/// `Σ_i f_lo_i Q_i + Σ_i (f_hi_i - f_lo_i) [Q_i - u]^+`
/// given the per-scenario values of the next stage.
pub fn cost_to_go_value(q_vals: &[f64], u: f64, next: &AmbiguitySet) -> f64 {
    q_vals
        .iter()
        .zip(next.f_lo())
        .zip(next.f_hi())
        .map(|((q, lo), hi)| lo * q + (hi - lo) * (q - u).max(0.0))
        .sum()
}

/// Build the supporting hyperplane of the cost-to-go function at the anchor
/// `(x_bar, u_bar)` from per-scenario values and subgradients.
///
/// The tail index set is strict (`Q_i > u_bar`); ties contribute nothing,
/// which picks the zero element of the subdifferential interval and keeps the
/// construction deterministic.
pub fn aggregate_cut(
    q_vals: &[f64],
    g_vecs: &[Vec<f64>],
    x_bar: &[f64],
    u_bar: f64,
    next: &AmbiguitySet,
) -> Cut {
    assert_eq!(q_vals.len(), next.len(), "one value per support point");
    assert_eq!(g_vecs.len(), next.len(), "one subgradient per support point");
    let mut coef_x = vec![0.0; x_bar.len()];
    let mut coef_u = 0.0;
    for (i, g) in g_vecs.iter().enumerate() {
        let lo = next.f_lo()[i];
        let tail = if q_vals[i] > u_bar {
            next.f_hi()[i] - lo
        } else {
            0.0
        };
        let w = lo + tail;
        for (cx, gj) in coef_x.iter_mut().zip(g) {
            *cx += w * gj;
        }
        coef_u -= tail;
    }
    let value = cost_to_go_value(q_vals, u_bar, next);
    let anchor: f64 = coef_x.iter().zip(x_bar).map(|(c, x)| c * x).sum();
    Cut {
        intercept: value - anchor - coef_u * u_bar,
        coef_x,
        coef_u,
    }
}
