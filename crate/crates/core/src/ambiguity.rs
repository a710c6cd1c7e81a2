//! L∞-ball ambiguity sets over finite scenario supports and the closed-form
//! evaluation of worst-case expectations.
//!
//! A set is described by a reference distribution `f0` and a radius `d`:
//! every distribution `f` on the simplex with `|f_r - f0_r| <= d` belongs to
//! it. The supremum of `Σ f_r Q_r` over the set equals a convex combination
//! of the expectation under the clamped lower envelope and a CVaR of `Q`
//! under the normalized upper-minus-lower weights; [`worst_case_lp_oracle`]
//! computes the same supremum by direct greedy mass filling and is kept as an
//! independent cross-check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on probability-vector normalization.
const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AmbiguityError {
    #[error("invalid reference distribution: {0}")]
    InvalidDistribution(String),
    #[error("CVaR level {0} outside [0, 1)")]
    InvalidLevel(f64),
    #[error("degenerate ambiguity set: zero width but lower masses sum to {0}")]
    DegenerateSet(f64),
}

/// L∞ ambiguity ball around a reference distribution, with the clamped
/// envelopes and their masses precomputed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmbiguitySet {
    f0: Vec<f64>,
    d: f64,
    f_lo: Vec<f64>,
    f_hi: Vec<f64>,
    p_lo: f64,
    p_hi: f64,
    /// Normalized upper-minus-lower weights; `None` when the set is a
    /// singleton (`d = 0`).
    q: Option<Vec<f64>>,
}

impl AmbiguitySet {
    /// Build the set from a reference distribution and an explicit radius.
    ///
    /// The paper-form envelopes `f0 ± d` are clamped to `[0, 1]`; since the
    /// feasible set already lives on the simplex this leaves it unchanged
    /// while keeping the closed form valid.
    pub fn with_radius(f0: Vec<f64>, d: f64) -> Result<Self, AmbiguityError> {
        if f0.is_empty() {
            return Err(AmbiguityError::InvalidDistribution(
                "empty support".to_string(),
            ));
        }
        if !(d.is_finite() && d >= 0.0) {
            return Err(AmbiguityError::InvalidDistribution(format!(
                "radius {d} must be finite and nonnegative"
            )));
        }
        let sum: f64 = f0.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(AmbiguityError::InvalidDistribution(format!(
                "masses sum to {sum}"
            )));
        }
        if let Some(bad) = f0.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(AmbiguityError::InvalidDistribution(format!(
                "mass {bad} out of range"
            )));
        }
        let f_lo: Vec<f64> = f0.iter().map(|p| (p - d).max(0.0)).collect();
        let f_hi: Vec<f64> = f0.iter().map(|p| (p + d).min(1.0)).collect();
        // Mathematically p_lo <= 1 <= p_hi; clamping guards the float sums so
        // the degenerate d = 0 case stays exactly risk-neutral.
        let p_lo = f_lo.iter().sum::<f64>().min(1.0);
        let p_hi = f_hi.iter().sum::<f64>().max(1.0);
        let width = p_hi - p_lo;
        let q = if width > 0.0 {
            Some(
                f_lo.iter()
                    .zip(&f_hi)
                    .map(|(lo, hi)| (hi - lo) / width)
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            f0,
            d,
            f_lo,
            f_hi,
            p_lo,
            p_hi,
            q,
        })
    }

    /// Singleton set `{f0}`.
    pub fn singleton(f0: Vec<f64>) -> Result<Self, AmbiguityError> {
        Self::with_radius(f0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    pub fn radius(&self) -> f64 {
        self.d
    }

    pub fn f_lo(&self) -> &[f64] {
        &self.f_lo
    }

    pub fn f_hi(&self) -> &[f64] {
        &self.f_hi
    }

    pub fn p_lo(&self) -> f64 {
        self.p_lo
    }

    pub fn p_hi(&self) -> f64 {
        self.p_hi
    }

    pub fn q(&self) -> Option<&[f64]> {
        self.q.as_deref()
    }

    /// Strip the radius, keeping the reference distribution.
    pub fn risk_neutral(&self) -> Self {
        Self::with_radius(self.f0.clone(), 0.0)
            .expect("reference distribution was already validated")
    }
}

/// Build the set with the sample-size-driven radius
/// `d = max_r z * sqrt(f0_r (1 - f0_r)) / sqrt(n)`.
pub fn build_ambiguity(
    f0: Vec<f64>,
    n_samples: usize,
    z_half_alpha: f64,
) -> Result<AmbiguitySet, AmbiguityError> {
    if n_samples == 0 {
        return Err(AmbiguityError::InvalidDistribution(
            "sample count must be at least 1".to_string(),
        ));
    }
    if !(z_half_alpha.is_finite() && z_half_alpha >= 0.0) {
        return Err(AmbiguityError::InvalidDistribution(format!(
            "z-score {z_half_alpha} must be finite and nonnegative"
        )));
    }
    let root_n = (n_samples as f64).sqrt();
    let d = f0
        .iter()
        .map(|p| z_half_alpha * (p * (1.0 - p)).max(0.0).sqrt() / root_n)
        .fold(0.0f64, f64::max);
    AmbiguitySet::with_radius(f0, d)
}

/// CVaR at level `beta` of the discrete variable taking value `values[r]`
/// with probability `weights[r]`, through its variational form
/// `inf_u { u + (1/(1-beta)) * Σ w_r [values_r - u]^+ }`.
///
/// The infimum is attained at a quantile of the support, so evaluation scans
/// the support points.
pub fn cvar(values: &[f64], weights: &[f64], beta: f64) -> Result<f64, AmbiguityError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(AmbiguityError::InvalidLevel(beta));
    }
    if values.len() != weights.len() || values.is_empty() {
        return Err(AmbiguityError::InvalidDistribution(format!(
            "{} values against {} weights",
            values.len(),
            weights.len()
        )));
    }
    let inv = 1.0 / (1.0 - beta);
    let eval = |u: f64| -> f64 {
        u + inv
            * values
                .iter()
                .zip(weights)
                .map(|(z, w)| w * (z - u).max(0.0))
                .sum::<f64>()
    };
    Ok(values
        .iter()
        .map(|&u| eval(u))
        .fold(f64::INFINITY, f64::min))
}

/// Supremum of `Σ f_r values_r` over the ambiguity set, by the closed form
/// `Σ f_lo_r values_r + (1 - p_lo) * CVaR_beta` with
/// `beta = (p_hi - 1) / (p_hi - p_lo)`.
pub fn worst_case_expectation(values: &[f64], set: &AmbiguitySet) -> Result<f64, AmbiguityError> {
    if values.len() != set.len() {
        return Err(AmbiguityError::InvalidDistribution(format!(
            "{} values against support of size {}",
            values.len(),
            set.len()
        )));
    }
    let base: f64 = set.f_lo.iter().zip(values).map(|(f, q)| f * q).sum();
    match set.q() {
        None => {
            if (set.p_lo - 1.0).abs() > 1e-9 {
                return Err(AmbiguityError::DegenerateSet(set.p_lo));
            }
            Ok(base)
        }
        Some(q) => {
            let beta = (set.p_hi - 1.0) / (set.p_hi - set.p_lo);
            let tail = cvar(values, q, beta)?;
            Ok(base + (1.0 - set.p_lo) * tail)
        }
    }
}

/// Same supremum by direct construction: start from the lower envelope and
/// greedily assign the remaining `1 - p_lo` of mass to the largest values,
/// each coordinate capped at its upper envelope. Exact for this box-simplex
/// structure; kept independent of the closed form above.
pub fn worst_case_lp_oracle(values: &[f64], set: &AmbiguitySet) -> Result<f64, AmbiguityError> {
    if values.len() != set.len() {
        return Err(AmbiguityError::InvalidDistribution(format!(
            "{} values against support of size {}",
            values.len(),
            set.len()
        )));
    }
    let mut f = set.f_lo.clone();
    let mut budget = 1.0 - set.p_lo;
    if set.p_hi - set.p_lo <= 0.0 {
        if budget.abs() > 1e-9 {
            return Err(AmbiguityError::DegenerateSet(set.p_lo));
        }
        return Ok(f.iter().zip(values).map(|(fi, q)| fi * q).sum());
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    for r in order {
        if budget <= 0.0 {
            break;
        }
        let cap = set.f_hi[r] - set.f_lo[r];
        let add = cap.min(budget);
        f[r] += add;
        budget -= add;
    }
    if budget > 1e-9 {
        return Err(AmbiguityError::DegenerateSet(set.p_lo));
    }
    Ok(f.iter().zip(values).map(|(fi, q)| fi * q).sum())
}
