//! Shared fixtures and independent oracles for the integration suites.
//!
//! The two-stage brute force solves the extensive-form LP at fixed `u1`
//! (full scenario enumeration with epigraph variables for the positive
//! parts) and grid-searches `u1` with local refinement. It shares only the
//! LP kernel with the engine under test, not the cut/SDDP machinery.

use robust_sddp::cuts::StageTemplate;
use robust_sddp::hydro::{build_hydro_templates, HydroConfig};
use robust_sddp::lp::{solve_lp, LinearProgram, LpRow, LpStatus};
use robust_sddp::scenario::{build_lattice, TrueDistribution};

/// Small-scale two-stage hydro instance with `s` scenarios.
pub fn small_t2_instance(s: usize, seed: u64) -> (HydroConfig, Vec<StageTemplate>) {
    let dist = TrueDistribution::Lognormal {
        mu: (50.0f64).ln() - 0.08,
        sigma: 0.4,
    };
    let cfg = HydroConfig::small_scale(2, dist.mean(), seed);
    let n_samples = 400;
    let lattice = build_lattice(&dist, 2, n_samples, s, seed).unwrap();
    let templates = build_hydro_templates(&cfg, &lattice, n_samples, 1.96).unwrap();
    (cfg, templates)
}

/// Extensive-form optimum of a two-stage instance at a fixed risk level
/// `u1`, including the `(1 - p_lo_2) * u1` objective term.
pub fn extensive_value_at(templates: &[StageTemplate], u1: f64) -> f64 {
    assert_eq!(templates.len(), 2, "extensive form is two-stage only");
    let stage1 = &templates[0].scenarios[0];
    let n1 = templates[0].num_vars();
    let n2 = templates[1].num_vars();
    let amb = &templates[1].ambiguity;
    let s = templates[1].scenarios.len();

    // Variables: x1 (n1), then per scenario x2_i (n2) and w_i.
    let total = n1 + s * (n2 + 1);
    let x2_start = |i: usize| n1 + i * n2;
    let w_start = n1 + s * n2;

    let mut objective = vec![0.0; total];
    objective[..n1].copy_from_slice(&stage1.cost);
    for i in 0..s {
        let lo = amb.f_lo()[i];
        let width = amb.f_hi()[i] - lo;
        for (j, c) in templates[1].scenarios[i].cost.iter().enumerate() {
            objective[x2_start(i) + j] = lo * c;
        }
        objective[w_start + i] = width;
    }

    let mut bounds = vec![(0.0, 0.0); total];
    bounds[..n1].copy_from_slice(&templates[0].bounds);
    for i in 0..s {
        bounds[x2_start(i)..x2_start(i) + n2].copy_from_slice(&templates[1].bounds);
        bounds[w_start + i] = (0.0, f64::INFINITY);
    }

    let mut rows = Vec::new();
    for row in &stage1.rows {
        let mut coeffs = vec![0.0; total];
        coeffs[..n1].copy_from_slice(&row.coeffs);
        rows.push(LpRow {
            coeffs,
            rel: row.rel,
            rhs: row.rhs,
        });
    }
    for i in 0..s {
        for row in &templates[1].scenarios[i].rows {
            // A x2 >= b - B x1 rewritten as B x1 + A x2 >= b.
            let mut coeffs = vec![0.0; total];
            coeffs[..n1].copy_from_slice(&row.coupling);
            coeffs[x2_start(i)..x2_start(i) + n2].copy_from_slice(&row.coeffs);
            rows.push(LpRow {
                coeffs,
                rel: row.rel,
                rhs: row.rhs,
            });
        }
        // w_i >= c2_i . x2_i - u1
        let mut coeffs = vec![0.0; total];
        for (j, c) in templates[1].scenarios[i].cost.iter().enumerate() {
            coeffs[x2_start(i) + j] = -c;
        }
        coeffs[w_start + i] = 1.0;
        rows.push(LpRow::ge(coeffs, -u1));
    }

    let lp = LinearProgram {
        objective,
        rows,
        bounds,
    };
    let sol = solve_lp(&lp).expect("extensive LP solves");
    assert_eq!(sol.status, LpStatus::Optimal, "extensive LP not optimal");
    sol.objective + (1.0 - amb.p_lo()) * u1
}

/// Brute-force optimum of a two-stage instance: grid search over `u1` in
/// `[0, u_hi]` with local refinement down to a 1e-4 spacing, solving the
/// extensive LP at every grid point. Valid because the value is convex in
/// `u1`.
pub fn brute_force_t2(templates: &[StageTemplate], u_hi: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = u_hi;
    let points = 33;
    let mut best = f64::INFINITY;
    loop {
        let step = (hi - lo) / (points - 1) as f64;
        let mut round_best = f64::INFINITY;
        let mut round_j = 0;
        for j in 0..points {
            let u = lo + step * j as f64;
            let v = extensive_value_at(templates, u);
            if v < round_best {
                round_best = v;
                round_j = j;
            }
        }
        best = best.min(round_best);
        if step <= 1e-4 {
            return best;
        }
        let center = lo + step * round_j as f64;
        lo = (center - step).max(0.0);
        hi = center + step;
    }
}
