//! Interval constructions for a linear functional `θ = hᵀλ` of a whitened
//! model `y = Kλ + ε`, `ε ~ N(0, I)`, under constraints `Aλ ≤ b`.
//!
//! * OSB: min / max of `hᵀλ` over `{‖y − Kλ‖² ≤ z²_{1−α/2} + s², Aλ ≤ b}`,
//!   where `s²` is the constrained least-squares residual. Computed from the
//!   primal programs or, as a cross-check, from their Lagrangian duals.
//! * PO: an affine rule `[w̲ᵀy − z‖w̲‖ − bᵀc̲, w̄ᵀy + z‖w̄‖ + bᵀc̄]` whose
//!   dual-feasible parameters minimise the prior-expected width. The rule is
//!   chosen without looking at `y`, so its coverage is guaranteed.
//! * LS: the classical least-squares interval (full column rank only).
//! * SSB: like OSB but over the `χ²_{n,1−α}` ball (simultaneous coverage).
//! * Minimax: bracketing values of the modulus of continuity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::PolyhedralConstraints;
use crate::model::GaussianModel;
use crate::program::{solve, ConicProgram, Sense, SolverSettings, Status};
use crate::stats::{chi2_quantile, normal_quantile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Osb,
    OsbDual,
    Po,
    Ls,
    Ssb,
    MinimaxLower,
    MinimaxUpper,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Osb => "OSB",
            Method::OsbDual => "OSB_DUAL",
            Method::Po => "PO",
            Method::Ls => "LS",
            Method::Ssb => "SSB",
            Method::MinimaxLower => "MINIMAX_LOWER",
            Method::MinimaxUpper => "MINIMAX_UPPER",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "OSB" => Method::Osb,
            "OSB_DUAL" => Method::OsbDual,
            "PO" => Method::Po,
            "LS" => Method::Ls,
            "SSB" => Method::Ssb,
            "MINIMAX_LOWER" => Method::MinimaxLower,
            "MINIMAX_UPPER" => Method::MinimaxUpper,
            other => return Err(Error::Config(format!("unknown interval method `{other}`"))),
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// `θ = hᵀλ`. A zero `h` is accepted and gives degenerate intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub h: Vec<f64>,
    pub label: String,
}

impl FunctionalSpec {
    pub fn new(h: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if h.is_empty() || h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "functional weights must be finite and non-empty".into(),
            ));
        }
        Ok(FunctionalSpec {
            h,
            label: label.into(),
        })
    }

    /// The `j`-th unit vector in `ℝⁿ`.
    pub fn unit(n: usize, j: usize) -> Self {
        let mut h = vec![0.0; n];
        h[j] = 1.0;
        FunctionalSpec {
            h,
            label: format!("bin_{j}"),
        }
    }

    pub fn value(&self, lambda: &[f64]) -> f64 {
        self.h.iter().zip(lambda).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().all(|&x| x == 0.0)
    }

    fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVars {
    pub w_lower: Vec<f64>,
    pub c_lower: Vec<f64>,
    pub w_upper: Vec<f64>,
    pub c_upper: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub slack_s2: Option<f64>,
    pub psi2: Option<f64>,
    pub pathological: bool,
    pub dual_vars: Option<DualVars>,
}

/// `[lower, upper]`, endpoints possibly infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
    pub alpha: f64,
    pub functional: String,
    pub diagnostics: Diagnostics,
}

impl IntervalResult {
    fn new(
        lower: f64,
        upper: f64,
        method: Method,
        alpha: f64,
        functional: &str,
        diagnostics: Diagnostics,
    ) -> Self {
        let mut diagnostics = diagnostics;
        diagnostics.pathological = lower > upper;
        IntervalResult {
            lower,
            upper,
            method,
            alpha,
            functional: functional.to_string(),
            diagnostics,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// Prior information for PO: only its mean enters the Bayes risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mean: Vec<f64>,
    pub label: String,
}

impl Prior {
    pub fn new(mean: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("prior mean must be finite".into()));
        }
        Ok(Prior {
            mean,
            label: label.into(),
        })
    }
}

/// Affine, data-independent interval rule from the coverage-certifying set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub functional: String,
    pub w_lower: Vec<f64>,
    pub w_upper: Vec<f64>,
    pub c_lower: Vec<f64>,
    pub c_upper: Vec<f64>,
    /// Constraint right-hand side `b` the multipliers pair with.
    pub b: Vec<f64>,
    pub alpha: f64,
    pub provenance: String,
}

impl DecisionRule {
    /// Prior-expected width `(w̄ − w̲)ᵀK m + z(‖w̄‖ + ‖w̲‖) + bᵀ(c̄ + c̲)`.
    pub fn bayes_risk(&self, k: &DMatrix<f64>, prior_mean: &[f64]) -> Result<f64> {
        let z = z_two_sided(self.alpha)?;
        let km = k * DVector::from_column_slice(prior_mean);
        let wl = DVector::from_column_slice(&self.w_lower);
        let wu = DVector::from_column_slice(&self.w_upper);
        let b = DVector::from_column_slice(&self.b);
        Ok((&wu - &wl).dot(&km)
            + z * (wu.norm() + wl.norm())
            + b.dot(&DVector::from_column_slice(&self.c_upper))
            + b.dot(&DVector::from_column_slice(&self.c_lower)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha = {alpha} not in (0, 1)"
        )))
    }
}

/// `z_{1−α/2}`.
pub fn z_two_sided(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    normal_quantile(1.0 - alpha / 2.0)
}

fn require_whitened(model: &GaussianModel) -> Result<()> {
    if model.is_whitened() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "interval methods expect a whitened model (identity covariance)".into(),
        ))
    }
}

fn check_dims(k: &DMatrix<f64>, h: &FunctionalSpec, c: &PolyhedralConstraints) -> Result<()> {
    if h.h.len() != k.ncols() {
        return Err(Error::Dimension(format!(
            "h has length {} but K has {} columns",
            h.h.len(),
            k.ncols()
        )));
    }
    if c.dim() != k.ncols() {
        return Err(Error::Dimension(format!(
            "constraints act on ℝ^{} but K has {} columns",
            c.dim(),
            k.ncols()
        )));
    }
    Ok(())
}

/// `s² = min_{Aλ≤b} ‖y − Kλ‖²`.
pub fn slack(
    model: &GaussianModel,
    c: &PolyhedralConstraints,
    settings: &SolverSettings,
) -> Result<f64> {
    require_whitened(model)?;
    let (m, n) = model.k.shape();
    if c.dim() != n {
        return Err(Error::Dimension(format!(
            "constraints act on ℝ^{} but K has {n} columns",
            c.dim()
        )));
    }
    if c.is_empty() {
        // Plain least squares; the minimum-norm solution attains the residual.
        let svd = model.k.clone().svd(true, false);
        let u = svd.u.as_ref().expect("U requested");
        let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let cut = (m.max(n) as f64) * f64::EPSILON * max;
        let mut proj = DVector::zeros(m);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > cut {
                let col = u.column(i);
                proj += col * col.dot(&model.y);
            }
        }
        return Ok((&model.y - proj).norm_squared());
    }
    // Variables (λ, r) with r = y − Kλ; minimise ‖r‖.
    let mut eq = DMatrix::zeros(m, n + m);
    eq.view_mut((0, 0), (m, n)).copy_from(&model.k);
    eq.view_mut((0, n), (m, m)).fill_with_identity();
    let mut ineq = DMatrix::zeros(c.len(), n + m);
    ineq.view_mut((0, 0), (c.len(), n)).copy_from(&c.a);
    let p = ConicProgram::new(Sense::Minimize, DVector::zeros(n + m))
        .with_equalities(eq, model.y.clone())
        .with_inequalities(ineq, c.b.clone())
        .with_norm_term(1.0, (n..n + m).collect());
    let sol = solve(&p, settings)?;
    match sol.status {
        Status::Optimal => Ok(sol.objective_value.max(0.0).powi(2)),
        Status::Infeasible => Err(Error::InvalidArgument(
            "constraint set Aλ ≤ b is empty".into(),
        )),
        other => Err(Error::Solver(format!(
            "slack program ended with status {other:?}"
        ))),
    }
}

fn ball_endpoint(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    radius2: f64,
    sense: Sense,
    settings: &SolverSettings,
) -> Result<f64> {
    let p = ConicProgram::new(sense, h.vector())
        .with_ball(model.k.clone(), model.y.clone(), radius2)
        .with_inequalities(c.a.clone(), c.b.clone());
    let sol = solve(&p, settings)?;
    match sol.status {
        Status::Optimal | Status::Unbounded => Ok(sol.objective_value),
        Status::Infeasible => Err(Error::InfeasibleRegion {
            radius2,
            s2: f64::NAN,
        }),
        Status::NumericalFailure => Err(Error::Solver(format!(
            "{sense:?} of hᵀλ over the feasible ball failed"
        ))),
    }
}

fn region_interval(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    radius2: f64,
    settings: &SolverSettings,
) -> Result<(f64, f64)> {
    let lo = ball_endpoint(model, h, c, radius2, Sense::Minimize, settings)?;
    let hi = ball_endpoint(model, h, c, radius2, Sense::Maximize, settings)?;
    Ok((lo, hi))
}

/// OSB interval from the primal programs.
pub fn osb_interval(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<IntervalResult> {
    let s2 = slack(model, c, settings)?;
    osb_interval_with_slack(model, h, c, alpha, s2, settings)
}

/// OSB interval reusing a slack `s²` already computed for this `y`.
pub fn osb_interval_with_slack(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    s2: f64,
    settings: &SolverSettings,
) -> Result<IntervalResult> {
    require_whitened(model)?;
    check_dims(&model.k, h, c)?;
    let z = z_two_sided(alpha)?;
    let psi2 = z * z + s2;
    let (lo, hi) = region_interval(model, h, c, psi2, settings).map_err(|e| with_slack(e, s2))?;
    let diag = Diagnostics {
        slack_s2: Some(s2),
        psi2: Some(psi2),
        ..Default::default()
    };
    Ok(IntervalResult::new(
        lo,
        hi.max(lo),
        Method::Osb,
        alpha,
        &h.label,
        diag,
    ))
}

fn with_slack(e: Error, s2: f64) -> Error {
    match e {
        Error::InfeasibleRegion { radius2, .. } => Error::InfeasibleRegion { radius2, s2 },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endpoint {
    Lower,
    Upper,
}

/// Shared dual form: over `(w, c)` with `c ≥ 0`,
/// lower: maximise `wᵀd − r‖w‖ − bᵀc` s.t. `Kᵀw − Aᵀc = h`;
/// upper: minimise `wᵀd + r‖w‖ + bᵀc` s.t. `Kᵀw + Aᵀc = h`.
fn dual_program(
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    data: &DVector<f64>,
    radius: f64,
    side: Endpoint,
) -> ConicProgram {
    let (m, n) = k.shape();
    let q = c.len();
    let (sense, sign) = match side {
        Endpoint::Lower => (Sense::Maximize, -1.0),
        Endpoint::Upper => (Sense::Minimize, 1.0),
    };
    let mut objective = DVector::zeros(m + q);
    objective.rows_mut(0, m).copy_from(data);
    objective.rows_mut(m, q).copy_from(&(&c.b * sign));
    let mut eq = DMatrix::zeros(n, m + q);
    eq.view_mut((0, 0), (n, m)).copy_from(&k.transpose());
    eq.view_mut((0, m), (n, q))
        .copy_from(&(c.a.transpose() * sign));
    let mut nonneg = DMatrix::zeros(q, m + q);
    nonneg.view_mut((0, m), (q, q)).fill_with_identity();
    nonneg.neg_mut();
    let mut p = ConicProgram::new(sense, objective)
        .with_equalities(eq, h.vector())
        .with_inequalities(nonneg, DVector::zeros(q));
    if m > 0 {
        p = p.with_norm_term(radius, (0..m).collect());
    }
    p
}

struct DualEndpoint {
    value: f64,
    w: Vec<f64>,
    c: Vec<f64>,
    status: Status,
}

fn solve_dual(
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    data: &DVector<f64>,
    radius: f64,
    side: Endpoint,
    settings: &SolverSettings,
) -> Result<DualEndpoint> {
    let m = k.nrows();
    let p = dual_program(k, h, c, data, radius, side);
    let sol = solve(&p, settings)?;
    if sol.status == Status::NumericalFailure {
        return Err(Error::Solver(format!(
            "dual program for the {side:?} endpoint failed"
        )));
    }
    Ok(DualEndpoint {
        value: sol.objective_value,
        w: sol.x[..m].to_vec(),
        c: sol.x[m..].to_vec(),
        status: sol.status,
    })
}

/// OSB interval from the Lagrangian dual programs (cross-check path).
pub fn osb_dual_interval(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<IntervalResult> {
    require_whitened(model)?;
    check_dims(&model.k, h, c)?;
    let s2 = slack(model, c, settings)?;
    let z = z_two_sided(alpha)?;
    let psi2 = z * z + s2;
    let psi = psi2.sqrt();
    let lo = solve_dual(&model.k, h, c, &model.y, psi, Endpoint::Lower, settings)?;
    let hi = solve_dual(&model.k, h, c, &model.y, psi, Endpoint::Upper, settings)?;
    // No dual-feasible point ⇔ the primal endpoint is unbounded.
    let value = |d: &DualEndpoint, inf: f64| match d.status {
        Status::Optimal => Ok(d.value),
        Status::Infeasible => Ok(inf),
        _ => Err(Error::InfeasibleRegion { radius2: psi2, s2 }),
    };
    let lower = value(&lo, f64::NEG_INFINITY)?;
    let upper = value(&hi, f64::INFINITY)?;
    let diag = Diagnostics {
        slack_s2: Some(s2),
        psi2: Some(psi2),
        pathological: false,
        dual_vars: Some(DualVars {
            w_lower: lo.w,
            c_lower: lo.c,
            w_upper: hi.w,
            c_upper: hi.c,
        }),
    };
    Ok(IntervalResult::new(
        lower,
        upper.max(lower),
        Method::OsbDual,
        alpha,
        &h.label,
        diag,
    ))
}

/// Bayes rule for the PO interval: two independent solves maximising the
/// expected lower endpoint and minimising the expected upper endpoint under
/// the prior mean. `k` must already be whitened. Never reads data.
pub fn po_rule(
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    prior: &Prior,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<DecisionRule> {
    check_dims(k, h, c)?;
    if prior.mean.len() != k.ncols() {
        return Err(Error::Dimension(format!(
            "prior mean has length {} but K has {} columns",
            prior.mean.len(),
            k.ncols()
        )));
    }
    let z = z_two_sided(alpha)?;
    let expected_data = k * DVector::from_column_slice(&prior.mean);
    let lo = solve_dual(k, h, c, &expected_data, z, Endpoint::Lower, settings)?;
    let hi = solve_dual(k, h, c, &expected_data, z, Endpoint::Upper, settings)?;
    for d in [&lo, &hi] {
        match d.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(Error::NoFeasibleRule(h.label.clone())),
            other => {
                return Err(Error::Solver(format!(
                    "PO rule program for `{}` ended with status {other:?} (is the prior mean feasible?)",
                    h.label
                )))
            }
        }
    }
    Ok(DecisionRule {
        functional: h.label.clone(),
        w_lower: lo.w,
        w_upper: hi.w,
        c_lower: lo.c.iter().map(|v| v.max(0.0)).collect(),
        c_upper: hi.c.iter().map(|v| v.max(0.0)).collect(),
        b: c.b.iter().copied().collect(),
        alpha,
        provenance: prior.label.clone(),
    })
}

/// Applies a PO rule to (whitened) data. Pure arithmetic, no solve.
pub fn po_interval(rule: &DecisionRule, y: &[f64]) -> Result<IntervalResult> {
    if rule.w_lower.len() != y.len() || rule.w_upper.len() != y.len() {
        return Err(Error::Dimension(format!(
            "rule expects {} observations, got {}",
            rule.w_lower.len(),
            y.len()
        )));
    }
    if rule.c_lower.len() != rule.b.len() || rule.c_upper.len() != rule.b.len() {
        return Err(Error::Dimension("rule multipliers do not match b".into()));
    }
    let z = z_two_sided(rule.alpha)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let lower = dot(&rule.w_lower, y) - z * norm(&rule.w_lower) - dot(&rule.b, &rule.c_lower);
    let upper = dot(&rule.w_upper, y) + z * norm(&rule.w_upper) + dot(&rule.b, &rule.c_upper);
    Ok(IntervalResult::new(
        lower,
        upper,
        Method::Po,
        rule.alpha,
        &rule.functional,
        Diagnostics::default(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualFeasibility {
    pub feasible: bool,
    pub max_violation: f64,
}

/// Membership test for the coverage-certifying rule set: both equality
/// residuals within 1e−6 (∞-norm) and multipliers ≥ −1e−9.
pub fn dual_feasibility_check(
    rule: &DecisionRule,
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
) -> DualFeasibility {
    let hv = h.vector();
    let v = |x: &[f64]| DVector::from_column_slice(x);
    let kt = k.transpose();
    let at = c.a.transpose();
    let r_lo = &hv + &at * v(&rule.c_lower) - &kt * v(&rule.w_lower);
    let r_hi = &hv - &at * v(&rule.c_upper) - &kt * v(&rule.w_upper);
    let eq = r_lo.amax().max(r_hi.amax());
    let neg = rule
        .c_lower
        .iter()
        .chain(&rule.c_upper)
        .fold(0.0_f64, |acc, &x| acc.max(-x));
    DualFeasibility {
        feasible: eq <= 1e-6 && neg <= 1e-9,
        max_violation: eq.max(neg),
    }
}

/// Precomputed least-squares estimator `θ̂ = aᵀy` with `a = K(KᵀK)⁻¹h`;
/// the interval is `aᵀy ± z‖a‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsOperator {
    pub weights: DVector<f64>,
    pub half_width: f64,
    pub alpha: f64,
    pub functional: String,
}

impl LsOperator {
    pub fn new(k: &DMatrix<f64>, h: &FunctionalSpec, alpha: f64) -> Result<Self> {
        let (m, n) = k.shape();
        if h.h.len() != n {
            return Err(Error::Dimension(format!(
                "h has length {} but K has {n} columns",
                h.h.len()
            )));
        }
        let z = z_two_sided(alpha)?;
        let rank = ls_rank(k);
        if n > m || rank < n {
            return Err(Error::RankDeficient { rank, cols: n });
        }
        let svd = k.clone().svd(true, true);
        let u = svd.u.expect("U requested");
        let vt = svd.v_t.expect("Vᵀ requested");
        // a = U Σ⁻¹ Vᵀ h
        let mut coef = &vt * h.vector();
        for (i, s) in svd.singular_values.iter().enumerate() {
            coef[i] /= s;
        }
        let weights = u * coef;
        let half_width = z * weights.norm();
        Ok(LsOperator {
            weights,
            half_width,
            alpha,
            functional: h.label.clone(),
        })
    }

    pub fn interval(&self, y: &[f64]) -> Result<IntervalResult> {
        if y.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "expected {} observations, got {}",
                self.weights.len(),
                y.len()
            )));
        }
        let est: f64 = self.weights.iter().zip(y).map(|(a, b)| a * b).sum();
        Ok(IntervalResult::new(
            est - self.half_width,
            est + self.half_width,
            Method::Ls,
            self.alpha,
            &self.functional,
            Diagnostics::default(),
        ))
    }
}

fn ls_rank(k: &DMatrix<f64>) -> usize {
    let (m, n) = k.shape();
    if m == 0 || n == 0 {
        return 0;
    }
    let sv = k.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let cut = (m.max(n) as f64) * f64::EPSILON * max;
    sv.iter().filter(|&&s| s > cut).count()
}

/// `hᵀλ̂ ± z_{1−α/2} √(hᵀ(KᵀK)⁻¹h)`; errors on rank-deficient `K`.
pub fn ls_interval(
    model: &GaussianModel,
    h: &FunctionalSpec,
    alpha: f64,
) -> Result<IntervalResult> {
    require_whitened(model)?;
    LsOperator::new(&model.k, h, alpha)?.interval(model.y.as_slice())
}

/// Simultaneous strict bounds over `{‖y − Kλ‖² ≤ χ²_{n,1−α}, Aλ ≤ b}`.
pub fn ssb_interval(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<IntervalResult> {
    let s2 = slack(model, c, settings)?;
    ssb_interval_with_slack(model, h, c, alpha, s2, settings)
}

pub fn ssb_interval_with_slack(
    model: &GaussianModel,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    s2: f64,
    settings: &SolverSettings,
) -> Result<IntervalResult> {
    require_whitened(model)?;
    check_dims(&model.k, h, c)?;
    check_alpha(alpha)?;
    let radius2 = chi2_quantile(model.k.ncols(), 1.0 - alpha)?;
    if radius2 < s2 {
        return Err(Error::InfeasibleRegion { radius2, s2 });
    }
    let (lo, hi) =
        region_interval(model, h, c, radius2, settings).map_err(|e| with_slack(e, s2))?;
    let diag = Diagnostics {
        slack_s2: Some(s2),
        psi2: Some(radius2),
        ..Default::default()
    };
    Ok(IntervalResult::new(
        lo,
        hi.max(lo),
        Method::Ssb,
        alpha,
        &h.label,
        diag,
    ))
}

/// Values of the modulus of continuity bracketing the fixed-width minimax
/// interval: `lower = ω(2 z_{1−α} σ)`, `upper = ω(2 z_{1−α/2} σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `ω(ε) = sup{hᵀ(λ₁ − λ₋₁) : ‖K(λ₁ − λ₋₁)‖ ≤ ε, Aλ₁ ≤ b, Aλ₋₁ ≤ b}`.
///
/// The constraint set is symmetric under swapping `λ₁` and `λ₋₁`, so the
/// absolute value can be dropped; `both_signs` solves the minimisation too
/// and takes the larger magnitude.
pub fn modulus_of_continuity(
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    eps: f64,
    both_signs: bool,
    settings: &SolverSettings,
) -> Result<f64> {
    check_dims(k, h, c)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "modulus radius {eps} must be non-negative"
        )));
    }
    let (m, n) = k.shape();
    let q = c.len();
    let mut f = DVector::zeros(2 * n);
    f.rows_mut(0, n).copy_from(&h.vector());
    f.rows_mut(n, n).copy_from(&(-h.vector()));
    let mut kt = DMatrix::zeros(m, 2 * n);
    kt.view_mut((0, 0), (m, n)).copy_from(k);
    kt.view_mut((0, n), (m, n)).copy_from(&(-k));
    let mut a2 = DMatrix::zeros(2 * q, 2 * n);
    a2.view_mut((0, 0), (q, n)).copy_from(&c.a);
    a2.view_mut((q, n), (q, n)).copy_from(&c.a);
    let mut b2 = DVector::zeros(2 * q);
    b2.rows_mut(0, q).copy_from(&c.b);
    b2.rows_mut(q, q).copy_from(&c.b);

    let senses: &[Sense] = if both_signs {
        &[Sense::Maximize, Sense::Minimize]
    } else {
        &[Sense::Maximize]
    };
    let mut best: f64 = 0.0;
    for &sense in senses {
        let p = ConicProgram::new(sense, f.clone())
            .with_ball(kt.clone(), DVector::zeros(m), eps * eps)
            .with_inequalities(a2.clone(), b2.clone());
        let sol = solve(&p, settings)?;
        let v = match sol.status {
            Status::Optimal => sol.objective_value.abs(),
            Status::Unbounded => f64::INFINITY,
            Status::Infeasible => {
                return Err(Error::InvalidArgument(
                    "constraint set Aλ ≤ b is empty".into(),
                ))
            }
            Status::NumericalFailure => {
                return Err(Error::Solver("modulus of continuity program failed".into()))
            }
        };
        best = best.max(v);
    }
    Ok(best)
}

pub fn minimax_halfwidth_bounds(
    k: &DMatrix<f64>,
    h: &FunctionalSpec,
    c: &PolyhedralConstraints,
    alpha: f64,
    sigma: f64,
    both_signs: bool,
    settings: &SolverSettings,
) -> Result<MinimaxBounds> {
    check_alpha(alpha)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level σ = {sigma} must be positive"
        )));
    }
    let z_one = normal_quantile(1.0 - alpha)?;
    let z_two = z_two_sided(alpha)?;
    let lower = modulus_of_continuity(k, h, c, 2.0 * z_one * sigma, both_signs, settings)?;
    let upper = modulus_of_continuity(k, h, c, 2.0 * z_two * sigma, both_signs, settings)?;
    Ok(MinimaxBounds { lower, upper })
}
