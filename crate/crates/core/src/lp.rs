//! Dense linear programming kernel for the small stage subproblems.
//!
//! Solves `min c·x` subject to rows `a·x ≥ b` or `a·x = b` and per-variable
//! bounds, returning both the primal optimum and the dual multipliers of every
//! row. The implementation is a two-phase bounded-variable revised simplex
//! with Bland's anti-cycling rule: stage problems have tens of variables, so
//! determinism and exact duals matter more than asymptotics.
//!
//! [`vertex_oracle`] enumerates basic solutions outright and is meant for
//! cross-checking the simplex in tests; it refuses problems beyond a small
//! size cap.

use thiserror::Error;

/// Absolute-per-unit-scale feasibility tolerance: a row with right-hand side
/// `b` is considered satisfied when its residual is within
/// `FEASIBILITY_TOL * (1 + |b|)`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Reduced-cost tolerance for declaring optimality, scaled by `1 + max|c|`.
pub const OPTIMALITY_TOL: f64 = 1e-9;

/// Constraint sense of one LP row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `coeffs · x >= rhs`
    GreaterEq,
    /// `coeffs · x == rhs`
    Eq,
}

/// One constraint row.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

impl LpRow {
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            rel: Relation::GreaterEq,
            rhs,
        }
    }

    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs,
            rel: Relation::Eq,
            rhs,
        }
    }
}

/// A dense linear program `min c·x  s.t. rows, lo <= x <= hi`.
///
/// Bounds may be `f64::NEG_INFINITY` / `f64::INFINITY` for free directions.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(LpError::BadProblem(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        for (j, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::BadProblem(format!("objective[{j}] not finite")));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::BadProblem(format!("bad bounds on variable {j}")));
            }
            if lo > hi {
                return Err(LpError::BadProblem(format!(
                    "variable {j} has lower bound {lo} above upper bound {hi}"
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(LpError::BadProblem(format!(
                    "row {i} has width {} but {} variables",
                    row.coeffs.len(),
                    n
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LpError::BadProblem(format!("row {i} has non-finite data")));
            }
        }
        Ok(())
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Primal/dual solution of a [`LinearProgram`].
///
/// For `Infeasible` the objective is `+inf`, for `Unbounded` it is `-inf`,
/// and `primal`/`duals` are empty in both cases. Duals of `>=` rows are
/// nonnegative; duals of inactive `>=` rows are zero.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    BadProblem(String),
    #[error("simplex exceeded {0} pivots without terminating")]
    NumericalFailure(usize),
    #[error("oracle cap exceeded: {vars} vars / {rows} rows (max {max_vars}/{max_rows})")]
    OracleTooLarge {
        vars: usize,
        rows: usize,
        max_vars: usize,
        max_rows: usize,
    },
    #[error("no basic feasible solution exists")]
    Infeasible,
}

/// Where a nonbasic column currently rests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rest {
    Lower,
    Upper,
    /// Free variable parked at zero.
    Zero,
}

struct Simplex {
    m: usize,
    ncols: usize,
    /// Column-major constraint matrix, each column of length `m`.
    cols: Vec<Vec<f64>>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    b: Vec<f64>,
    /// Column banned from entering (artificials in phase 2).
    banned: Vec<bool>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    rest: Vec<Rest>,
    /// Dense basis inverse, row-major `m x m`.
    binv: Vec<f64>,
    xb: Vec<f64>,
    pivots: usize,
    cap: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Simplex {
    fn binv_row(&self, i: usize) -> &[f64] {
        &self.binv[i * self.m..(i + 1) * self.m]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.rest[j] {
            Rest::Lower => self.lb[j],
            Rest::Upper => self.ub[j],
            Rest::Zero => 0.0,
        }
    }

    /// w = Binv * A_j
    fn ftran(&self, j: usize) -> Vec<f64> {
        let col = &self.cols[j];
        (0..self.m)
            .map(|i| {
                self.binv_row(i)
                    .iter()
                    .zip(col)
                    .map(|(bi, aj)| bi * aj)
                    .sum()
            })
            .collect()
    }

    /// y = c_B^T * Binv
    fn duals(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for (k, &bk) in self.basis.iter().enumerate() {
            let cb = self.cost[bk];
            if cb != 0.0 {
                let row = &self.binv[k * self.m..(k + 1) * self.m];
                for (yi, bi) in y.iter_mut().zip(row) {
                    *yi += cb * bi;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        self.cost[j] - y.iter().zip(&self.cols[j]).map(|(yi, a)| yi * a).sum::<f64>()
    }

    /// Rebuild the basis inverse and basic values from scratch. Keeps the
    /// result a function of the final basis alone, independent of the pivot
    /// path taken to reach it.
    fn refresh(&mut self) -> Result<(), LpError> {
        let m = self.m;
        // Gauss-Jordan inversion of the basis matrix with partial pivoting.
        let mut aug = vec![0.0; m * 2 * m];
        for i in 0..m {
            for (k, &bk) in self.basis.iter().enumerate() {
                aug[i * 2 * m + k] = self.cols[bk][i];
            }
            aug[i * 2 * m + m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = aug[col * 2 * m + col].abs();
            for r in col + 1..m {
                let v = aug[r * 2 * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-13 {
                return Err(LpError::NumericalFailure(self.pivots));
            }
            if piv != col {
                for c in 0..2 * m {
                    aug.swap(col * 2 * m + c, piv * 2 * m + c);
                }
            }
            let d = aug[col * 2 * m + col];
            for c in 0..2 * m {
                aug[col * 2 * m + c] /= d;
            }
            for r in 0..m {
                if r != col {
                    let f = aug[r * 2 * m + col];
                    if f != 0.0 {
                        for c in 0..2 * m {
                            aug[r * 2 * m + c] -= f * aug[col * 2 * m + c];
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for c in 0..m {
                self.binv[i * m + c] = aug[i * 2 * m + m + c];
            }
        }
        // xb = Binv * (b - sum of nonbasic columns at their values)
        let mut rhs = self.b.clone();
        for j in 0..self.ncols {
            if !self.in_basis[j] {
                let v = self.nonbasic_value(j);
                if v != 0.0 {
                    for i in 0..m {
                        rhs[i] -= self.cols[j][i] * v;
                    }
                }
            }
        }
        for i in 0..m {
            self.xb[i] = self.binv_row(i).iter().zip(&rhs).map(|(bi, r)| bi * r).sum();
        }
        Ok(())
    }

    /// One Bland pivot (or bound flip). `Optimal` means no entering column.
    fn step(&mut self, tol_d: f64) -> Result<Step, LpError> {
        let y = self.duals();
        let mut entering = None;
        for j in 0..self.ncols {
            if self.in_basis[j] || self.banned[j] || self.lb[j] == self.ub[j] {
                continue;
            }
            let d = self.reduced_cost(j, &y);
            let dir = match self.rest[j] {
                Rest::Lower if d < -tol_d => 1.0,
                Rest::Upper if d > tol_d => -1.0,
                Rest::Zero if d < -tol_d => 1.0,
                Rest::Zero if d > tol_d => -1.0,
                _ => continue,
            };
            entering = Some((j, dir));
            break;
        }
        let Some((j, dir)) = entering else {
            return Ok(Step::Optimal);
        };

        let w = self.ftran(j);
        let w_norm = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let eps_w = 1e-11 * (1.0 + w_norm);

        // Range the entering variable can travel on its own bounds.
        let own_range = match self.rest[j] {
            Rest::Zero => f64::INFINITY,
            _ => self.ub[j] - self.lb[j],
        };
        let mut t_best = own_range;
        let mut leave: Option<usize> = None; // position in basis
        for (i, &wi) in w.iter().enumerate() {
            let rate = -dir * wi; // change of x_B[i] per unit step
            if rate < -eps_w {
                let lo = self.lb[self.basis[i]];
                if lo > f64::NEG_INFINITY {
                    let t = (self.xb[i] - lo) / -rate;
                    if t < t_best - 1e-12
                        || (t <= t_best + 1e-12
                            && leave.map_or(own_range > t, |l| self.basis[i] < self.basis[l]))
                    {
                        t_best = t.max(0.0);
                        leave = Some(i);
                    }
                }
            } else if rate > eps_w {
                let hi = self.ub[self.basis[i]];
                if hi < f64::INFINITY {
                    let t = (hi - self.xb[i]) / rate;
                    if t < t_best - 1e-12
                        || (t <= t_best + 1e-12
                            && leave.map_or(own_range > t, |l| self.basis[i] < self.basis[l]))
                    {
                        t_best = t.max(0.0);
                        leave = Some(i);
                    }
                }
            }
        }

        if t_best == f64::INFINITY {
            return Ok(Step::Unbounded);
        }

        self.pivots += 1;
        if self.pivots > self.cap {
            return Err(LpError::NumericalFailure(self.cap));
        }

        match leave {
            None => {
                // Bound flip: entering travels its full range.
                for (i, &wi) in w.iter().enumerate() {
                    self.xb[i] -= dir * t_best * wi;
                }
                self.rest[j] = match self.rest[j] {
                    Rest::Lower => Rest::Upper,
                    Rest::Upper => Rest::Lower,
                    Rest::Zero => unreachable!("free variables have no bound to flip to"),
                };
            }
            Some(r) => {
                let out = self.basis[r];
                let enter_value = self.nonbasic_value(j) + dir * t_best;
                for (i, &wi) in w.iter().enumerate() {
                    self.xb[i] -= dir * t_best * wi;
                }
                // Which bound the leaving variable lands on.
                let rate = -dir * w[r];
                self.rest[out] = if rate < 0.0 { Rest::Lower } else { Rest::Upper };
                self.in_basis[out] = false;

                // Pivot the inverse on row r, column j.
                let m = self.m;
                let piv = w[r];
                for c in 0..m {
                    self.binv[r * m + c] /= piv;
                }
                for i in 0..m {
                    if i != r && w[i] != 0.0 {
                        let f = w[i];
                        for c in 0..m {
                            self.binv[i * m + c] -= f * self.binv[r * m + c];
                        }
                    }
                }
                self.basis[r] = j;
                self.in_basis[j] = true;
                self.xb[r] = enter_value;
            }
        }
        Ok(Step::Moved)
    }

    fn run(&mut self, tol_d: f64) -> Result<LpStatus, LpError> {
        loop {
            match self.step(tol_d)? {
                Step::Optimal => return Ok(LpStatus::Optimal),
                Step::Unbounded => return Ok(LpStatus::Unbounded),
                Step::Moved => {
                    if self.pivots % 64 == 0 {
                        self.refresh()?;
                    }
                }
            }
        }
    }
}

/// Solve a linear program.
///
/// Returns the final-basis duals; when the optimal basis is dual-degenerate
/// the multipliers of that basis are reported.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.num_vars();
    let m = lp.rows.len();

    // Columns: structural 0..n, slack n..n+m, artificial n+m..n+2m.
    let ncols = n + 2 * m;
    let mut cols = vec![vec![0.0; m]; ncols];
    let mut lb = vec![0.0; ncols];
    let mut ub = vec![f64::INFINITY; ncols];
    for j in 0..n {
        for (i, row) in lp.rows.iter().enumerate() {
            cols[j][i] = row.coeffs[j];
        }
        lb[j] = lp.bounds[j].0;
        ub[j] = lp.bounds[j].1;
    }
    for (i, row) in lp.rows.iter().enumerate() {
        cols[n + i][i] = -1.0;
        if row.rel == Relation::Eq {
            ub[n + i] = 0.0; // fixed slack
        }
    }

    let mut rest = vec![Rest::Lower; ncols];
    for j in 0..n {
        rest[j] = if lb[j] > f64::NEG_INFINITY {
            Rest::Lower
        } else if ub[j] < f64::INFINITY {
            Rest::Upper
        } else {
            Rest::Zero
        };
    }

    // Initial residuals determine artificial column signs.
    let b: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
    let mut resid = b.clone();
    for j in 0..n + m {
        let v = match rest[j] {
            Rest::Lower => lb[j],
            Rest::Upper => ub[j],
            Rest::Zero => 0.0,
        };
        if v != 0.0 {
            for i in 0..m {
                resid[i] -= cols[j][i] * v;
            }
        }
    }
    let mut binv = vec![0.0; m * m];
    let mut basis = Vec::with_capacity(m);
    let mut in_basis = vec![false; ncols];
    let mut xb = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if resid[i] < 0.0 { -1.0 } else { 1.0 };
        cols[n + m + i][i] = sign;
        basis.push(n + m + i);
        in_basis[n + m + i] = true;
        xb.push(resid[i].abs());
        binv[i * m + i] = sign;
    }

    let phase1_cost: Vec<f64> = (0..ncols).map(|j| if j >= n + m { 1.0 } else { 0.0 }).collect();
    let cap = 10_000 + 100 * ncols;
    let mut s = Simplex {
        m,
        ncols,
        cols,
        cost: phase1_cost,
        lb,
        ub,
        b: b.clone(),
        banned: vec![false; ncols],
        basis,
        in_basis,
        rest,
        binv,
        xb,
        pivots: 0,
        cap,
    };

    // Phase 1: drive artificial infeasibility to zero.
    if m > 0 {
        if s.run(OPTIMALITY_TOL)? == LpStatus::Unbounded {
            // The phase-1 objective is bounded below by zero; reaching this
            // arm means the pivoting went numerically astray.
            return Err(LpError::NumericalFailure(s.pivots));
        }
        s.refresh()?;
        let infeas: f64 = (0..m)
            .map(|k| if s.basis[k] >= n + m { s.xb[k].max(0.0) } else { 0.0 })
            .sum();
        let b_scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > FEASIBILITY_TOL * (1.0 + b_scale) * (m as f64) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: Vec::new(),
                duals: Vec::new(),
                objective: f64::INFINITY,
            });
        }
        // Pivot lingering zero-level artificials out where possible; fix the
        // rest at zero (their rows are redundant).
        for r in 0..m {
            if s.basis[r] < n + m {
                continue;
            }
            let mut replaced = false;
            for j in 0..n + m {
                if s.in_basis[j] || s.lb[j] == s.ub[j] {
                    continue;
                }
                let w = s.ftran(j);
                if w[r].abs() > 1e-9 {
                    let out = s.basis[r];
                    let m_ = s.m;
                    let piv = w[r];
                    for c in 0..m_ {
                        s.binv[r * m_ + c] /= piv;
                    }
                    for i in 0..m_ {
                        if i != r && w[i] != 0.0 {
                            let f = w[i];
                            for c in 0..m_ {
                                s.binv[i * m_ + c] -= f * s.binv[r * m_ + c];
                            }
                        }
                    }
                    s.in_basis[out] = false;
                    s.rest[out] = Rest::Lower;
                    s.basis[r] = j;
                    s.in_basis[j] = true;
                    // The entering variable keeps the artificial's zero level
                    // relative to its resting value.
                    replaced = true;
                    break;
                }
            }
            if !replaced {
                let a = s.basis[r];
                s.ub[a] = 0.0;
            }
            s.refresh()?;
        }
    }

    // Phase 2: real objective, artificials banned.
    for j in 0..n {
        s.cost[j] = lp.objective[j];
    }
    for j in n..ncols {
        s.cost[j] = 0.0;
    }
    for j in n + m..ncols {
        s.banned[j] = true;
    }
    let c_scale = lp.objective.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol_d = OPTIMALITY_TOL * (1.0 + c_scale);
    let status = s.run(tol_d)?;
    if status == LpStatus::Unbounded {
        return Ok(LpSolution {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            objective: f64::NEG_INFINITY,
        });
    }
    s.refresh()?;

    let mut x = vec![0.0; ncols];
    for j in 0..ncols {
        if !s.in_basis[j] {
            x[j] = s.nonbasic_value(j);
        }
    }
    for (k, &bk) in s.basis.iter().enumerate() {
        x[bk] = s.xb[k];
    }
    let primal: Vec<f64> = x[..n].to_vec();
    let objective: f64 = lp
        .objective
        .iter()
        .zip(&primal)
        .map(|(c, v)| c * v)
        .sum();
    let duals = s.duals();

    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        duals,
        objective,
    })
}

const ORACLE_MAX_VARS: usize = 12;
const ORACLE_MAX_ROWS: usize = 20;

/// Exact optimum by enumerating every basic solution. Test oracle only:
/// requires a bounded feasible region and refuses problems above the cap.
pub fn vertex_oracle(lp: &LinearProgram) -> Result<f64, LpError> {
    lp.validate()?;
    let n = lp.num_vars();
    if n > ORACLE_MAX_VARS || lp.rows.len() > ORACLE_MAX_ROWS {
        return Err(LpError::OracleTooLarge {
            vars: n,
            rows: lp.rows.len(),
            max_vars: ORACLE_MAX_VARS,
            max_rows: ORACLE_MAX_ROWS,
        });
    }

    // Candidate active hyperplanes: every row as an equality plus every
    // finite bound.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        planes.push((row.coeffs.clone(), row.rhs));
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let mut unit = vec![0.0; n];
        unit[j] = 1.0;
        if lo > f64::NEG_INFINITY {
            planes.push((unit.clone(), lo));
        }
        if hi < f64::INFINITY && hi != lo {
            planes.push((unit, hi));
        }
    }

    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..n).collect();
    if planes.len() < n {
        return Err(LpError::Infeasible);
    }
    loop {
        if let Some(x) = solve_square(&planes, &combo, n) {
            if is_feasible(lp, &x) {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best.ok_or(LpError::Infeasible);
            }
            i -= 1;
            if combo[i] != i + planes.len() - n {
                combo[i] += 1;
                for k in i + 1..n {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_square(planes: &[(Vec<f64>, f64)], combo: &[usize], n: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (r, &p) in combo.iter().enumerate() {
        a[r * n..(r + 1) * n].copy_from_slice(&planes[p].0);
        rhs[r] = planes[p].1;
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let mut piv = col;
        let mut bestv = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > bestv {
                bestv = v;
                piv = r;
            }
        }
        if bestv < 1e-11 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            rhs.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut v = rhs[r];
        for c in r + 1..n {
            v -= a[r * n + c] * x[c];
        }
        x[r] = v / a[r * n + r];
    }
    Some(x)
}

fn is_feasible(lp: &LinearProgram, x: &[f64]) -> bool {
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let tol = FEASIBILITY_TOL * (1.0 + lo.abs().min(hi.abs()));
        if x[j] < lo - tol || x[j] > hi + tol {
            return false;
        }
    }
    for row in &lp.rows {
        let v: f64 = row.coeffs.iter().zip(x).map(|(a, xi)| a * xi).sum();
        let tol = FEASIBILITY_TOL * (1.0 + row.rhs.abs());
        match row.rel {
            Relation::GreaterEq => {
                if v < row.rhs - tol {
                    return false;
                }
            }
            Relation::Eq => {
                if (v - row.rhs).abs() > tol {
                    return false;
                }
            }
        }
    }
    true
}

/// Sum of `dual * slack` over all rows; zero at any optimum by complementary
/// slackness.
pub fn complementary_slackness(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    lp.rows
        .iter()
        .zip(&sol.duals)
        .map(|(row, y)| {
            let v: f64 = row.coeffs.iter().zip(&sol.primal).map(|(a, x)| a * x).sum();
            y * (v - row.rhs)
        })
        .sum()
}
