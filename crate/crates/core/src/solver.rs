//! The iteration engine: `x_{k+1} = x_k + S_k` where
//! `B(x_k) S_k = -J(x_k)^T F(x_k) + r_k`.
//!
//! `B` is a pluggable invertible approximation of the Gauss-Newton matrix
//! `M = J^T J` (exact, frozen, scaled, or custom), and the residual `r_k` is
//! produced by a policy: exactly zero, synthetically scaled to saturate the
//! forcing-term budget, or left over by a truncated inner CG solve. Every step
//! records the full diagnostics needed to certify a run afterwards, including
//! the observed `||B^{-1} M||` and `||B^{-1} M - I||`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::majorant::SolverRates;
use crate::operator::{self, DenseOperator, OperatorError};
use crate::util;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("point is outside the problem domain (distance {distance:e} > kappa {kappa:e}){}", fmt_iter(.k))]
    OutOfDomain { k: Option<usize>, distance: f64, kappa: f64 },
    #[error("Jacobian lost injectivity{}", fmt_iter(.k))]
    RankDeficient { k: Option<usize> },
    #[error("B matrix is singular{}", fmt_iter(.k))]
    SingularB { k: Option<usize> },
    #[error("residual policy infeasible: {reason}{}", fmt_iter(.k))]
    PolicyInfeasible { k: Option<usize>, reason: String },
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error("invalid solver config: {0}")]
    BadConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

fn fmt_iter(k: &Option<usize>) -> String {
    match k {
        Some(k) => format!(" at iteration {k}"),
        None => String::new(),
    }
}

type MapFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A zero-residual nonlinear least-squares problem `F: R^n -> R^m`, `m >= n`,
/// with hand-coded Jacobian, optional known zero `x*`, domain radius `kappa`
/// around `x*`, and optionally the known `beta = ||J(x*)^+||`.
#[derive(Clone)]
pub struct ProblemInstance {
    f: MapFn,
    jacobian: JacFn,
    dim_in: usize,
    dim_out: usize,
    x_star: Option<DVector<f64>>,
    kappa: f64,
    beta: Option<f64>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("x_star", &self.x_star)
            .field("kappa", &self.kappa)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl ProblemInstance {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        f: MapFn,
        jacobian: JacFn,
    ) -> Result<Self, SolverError> {
        if dim_out < dim_in || dim_in == 0 {
            return Err(SolverError::BadProblem(format!(
                "need 1 <= n <= m, got n = {dim_in}, m = {dim_out}"
            )));
        }
        Ok(Self { f, jacobian, dim_in, dim_out, x_star: None, kappa: f64::INFINITY, beta: None })
    }

    /// Declares the known zero; validates `||F(x*)|| <= 1e-10` and that the
    /// Jacobian is injective there.
    pub fn with_known_zero(mut self, x_star: DVector<f64>) -> Result<Self, SolverError> {
        if x_star.len() != self.dim_in {
            return Err(SolverError::DimensionMismatch {
                expected: self.dim_in,
                got: x_star.len(),
            });
        }
        let fx = (self.f)(&x_star);
        if fx.norm() > 1e-10 {
            return Err(SolverError::BadProblem(format!(
                "||F(x*)|| = {:e} is not a zero",
                fx.norm()
            )));
        }
        let j = DenseOperator::new((self.jacobian)(&x_star))?;
        if !j.spectral().is_injective() {
            return Err(SolverError::BadProblem("Jacobian at x* is not injective".into()));
        }
        self.x_star = Some(x_star);
        Ok(self)
    }

    pub fn with_domain_radius(mut self, kappa: f64) -> Result<Self, SolverError> {
        if !(kappa > 0.0) {
            return Err(SolverError::BadProblem(format!("kappa must be positive, got {kappa}")));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn with_pinv_norm(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn x_star(&self) -> Option<&DVector<f64>> {
        self.x_star.as_ref()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Known `||J(x*)^+||`; computed from the Jacobian when not annotated.
    pub fn beta(&self) -> Option<f64> {
        if let Some(beta) = self.beta {
            return Some(beta);
        }
        let xs = self.x_star.as_ref()?;
        let j = DenseOperator::new((self.jacobian)(xs)).ok()?;
        j.spectral().pinv_norm().ok()
    }

    fn check_domain(&self, x: &DVector<f64>, k: Option<usize>) -> Result<(), SolverError> {
        if x.len() != self.dim_in {
            return Err(SolverError::DimensionMismatch { expected: self.dim_in, got: x.len() });
        }
        if let Some(xs) = &self.x_star {
            let distance = (x - xs).norm();
            if distance > self.kappa {
                return Err(SolverError::OutOfDomain { k, distance, kappa: self.kappa });
            }
        }
        Ok(())
    }

    /// `F(x)`, rejected outside the closed ball `B[x*, kappa]`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        self.check_domain(x, None)?;
        Ok((self.f)(x))
    }

    /// `J(x)` as a dense operator, rejected outside the domain.
    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DenseOperator, SolverError> {
        self.check_domain(x, None)?;
        Ok(DenseOperator::new((self.jacobian)(x))?)
    }

    /// `||x - x*||` when the zero is known.
    pub fn error_to_star(&self, x: &DVector<f64>) -> Option<f64> {
        self.x_star.as_ref().map(|xs| (x - xs).norm())
    }
}

/// How to build the invertible approximation `B(x)` of `M(x) = J(x)^T J(x)`.
#[derive(Clone)]
pub enum BStrategy {
    /// `B = M(x)`.
    Exact,
    /// `B = M(at)`, fixed along the run (the modified method).
    Frozen { at: DVector<f64> },
    /// `B = c * M(x)`.
    Scaled { factor: f64 },
    /// User-supplied `x -> B(x)`.
    Custom(Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for BStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BStrategy::Exact => write!(f, "Exact"),
            BStrategy::Frozen { at } => f.debug_struct("Frozen").field("at", at).finish(),
            BStrategy::Scaled { factor } => {
                f.debug_struct("Scaled").field("factor", factor).finish()
            }
            BStrategy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl BStrategy {
    fn matrix(
        &self,
        problem: &ProblemInstance,
        x: &DVector<f64>,
        m: &DMatrix<f64>,
        k: usize,
    ) -> Result<DMatrix<f64>, SolverError> {
        let b = match self {
            BStrategy::Exact => m.clone(),
            BStrategy::Frozen { at } => {
                let j = problem.jacobian_at(at).map_err(|e| at_iteration(e, k))?;
                j.gram()
            }
            BStrategy::Scaled { factor } => {
                if !(factor.is_finite() && *factor != 0.0) {
                    return Err(SolverError::BadConfig(format!(
                        "scaled B factor must be nonzero, got {factor}"
                    )));
                }
                m * *factor
            }
            BStrategy::Custom(provider) => provider(x),
        };
        if b.nrows() != problem.dim_in || b.ncols() != problem.dim_in {
            return Err(SolverError::BadConfig(format!(
                "B must be {0}x{0}, got {1}x{2}",
                problem.dim_in,
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(b)
    }
}

fn at_iteration(e: SolverError, k: usize) -> SolverError {
    match e {
        SolverError::OutOfDomain { distance, kappa, .. } => {
            SolverError::OutOfDomain { k: Some(k), distance, kappa }
        }
        SolverError::RankDeficient { .. } => SolverError::RankDeficient { k: Some(k) },
        SolverError::SingularB { .. } => SolverError::SingularB { k: Some(k) },
        SolverError::PolicyInfeasible { reason, .. } => {
            SolverError::PolicyInfeasible { k: Some(k), reason }
        }
        other => other,
    }
}

/// Preconditioner for the residual test (and the inner solve in truncated
/// mode). `Jacobi` is `diag(M)^{-1}`.
#[derive(Clone)]
pub enum Preconditioner {
    Identity,
    Jacobi,
    /// User-supplied `(x, M) -> P`, square invertible `n x n`.
    Custom(Arc<dyn Fn(&DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for Preconditioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preconditioner::Identity => write!(f, "Identity"),
            Preconditioner::Jacobi => write!(f, "Jacobi"),
            Preconditioner::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Preconditioner {
    fn matrix(
        &self,
        x: &DVector<f64>,
        m: &DMatrix<f64>,
        k: usize,
    ) -> Result<DMatrix<f64>, SolverError> {
        let n = m.nrows();
        match self {
            Preconditioner::Identity => Ok(DMatrix::identity(n, n)),
            Preconditioner::Jacobi => {
                let mut p = DMatrix::zeros(n, n);
                for i in 0..n {
                    let d = m[(i, i)];
                    if !(d > 0.0) {
                        return Err(SolverError::PolicyInfeasible {
                            k: Some(k),
                            reason: format!("Jacobi preconditioner undefined: M[{i},{i}] = {d}"),
                        });
                    }
                    p[(i, i)] = 1.0 / d;
                }
                Ok(p)
            }
            Preconditioner::Custom(provider) => {
                let p = provider(x, m);
                if p.nrows() != n || p.ncols() != n {
                    return Err(SolverError::BadConfig(format!(
                        "preconditioner must be {n}x{n}, got {}x{}",
                        p.nrows(),
                        p.ncols()
                    )));
                }
                Ok(p)
            }
        }
    }
}

/// How the linear-system residual `r_k` arises.
#[derive(Clone, Debug)]
pub enum ResidualMode {
    /// `r = 0` (direct solve).
    ExactSolve,
    /// Deterministic pseudo-random direction scaled so that
    /// `||P r|| = relative_magnitude * theta * ||P g||`; saturates the
    /// residual test at `relative_magnitude = 1`.
    Synthetic { relative_magnitude: f64, direction_seed: u64 },
    /// Inner preconditioned CG on `B S = -g`, truncated as soon as the
    /// preconditioned residual test passes.
    TruncatedIterative { inner_theta: f64, max_inner: usize },
}

/// Per-iteration forcing budget. The effective forcing term is always capped
/// by `theta_bar / cond(P M)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaSchedule {
    /// Use the full budget `theta_bar / cond(P M)` every step.
    Saturating,
    /// `min(value, theta_bar / cond(P M))`.
    Constant(f64),
}

#[derive(Clone, Debug)]
pub struct ResidualPolicy {
    pub mode: ResidualMode,
    pub preconditioner: Preconditioner,
    pub theta_schedule: ThetaSchedule,
}

impl ResidualPolicy {
    pub fn exact() -> Self {
        Self {
            mode: ResidualMode::ExactSolve,
            preconditioner: Preconditioner::Identity,
            theta_schedule: ThetaSchedule::Saturating,
        }
    }

    pub fn synthetic(relative_magnitude: f64, direction_seed: u64) -> Self {
        Self {
            mode: ResidualMode::Synthetic { relative_magnitude, direction_seed },
            preconditioner: Preconditioner::Identity,
            theta_schedule: ThetaSchedule::Saturating,
        }
    }

    pub fn truncated(inner_theta: f64, max_inner: usize) -> Self {
        Self {
            mode: ResidualMode::TruncatedIterative { inner_theta, max_inner },
            preconditioner: Preconditioner::Identity,
            theta_schedule: ThetaSchedule::Saturating,
        }
    }

    pub fn with_preconditioner(mut self, preconditioner: Preconditioner) -> Self {
        self.preconditioner = preconditioner;
        self
    }
}

/// What a residual policy emitted for one step.
#[derive(Debug, Clone)]
pub struct ResidualOutcome {
    pub r: DVector<f64>,
    pub theta: f64,
    pub p: DMatrix<f64>,
    pub cond_pm: f64,
}

/// Produces `(r, theta, P)` for the step at `x` with gradient `g`,
/// Gauss-Newton matrix `m`, and system matrix `b`.
///
/// The emitted triple always satisfies `||P r|| <= theta ||P g||` and
/// `theta * cond(P M) <= theta_bar`; both are re-checked on the record.
pub fn make_residual(
    policy: &ResidualPolicy,
    x: &DVector<f64>,
    g: &DVector<f64>,
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rates: &SolverRates,
    k: usize,
) -> Result<ResidualOutcome, SolverError> {
    let p = policy.preconditioner.matrix(x, m, k)?;
    let pm = &p * m;
    let cond_pm = operator::cond_number_mat(&pm).map_err(|_| SolverError::PolicyInfeasible {
        k: Some(k),
        reason: "preconditioned Gauss-Newton matrix is singular".into(),
    })?;
    let budget = rates.theta_bar() / cond_pm;
    let theta_req = match policy.theta_schedule {
        ThetaSchedule::Saturating => budget,
        ThetaSchedule::Constant(value) => value.min(budget),
    };
    let n = g.len();
    match &policy.mode {
        ResidualMode::ExactSolve => {
            Ok(ResidualOutcome { r: DVector::zeros(n), theta: 0.0, p, cond_pm })
        }
        ResidualMode::Synthetic { relative_magnitude, direction_seed } => {
            let mag = *relative_magnitude;
            if !(0.0..=1.0).contains(&mag) {
                return Err(SolverError::BadConfig(format!(
                    "relative magnitude must be in [0, 1], got {mag}"
                )));
            }
            if mag == 0.0 {
                return Ok(ResidualOutcome { r: DVector::zeros(n), theta: 0.0, p, cond_pm });
            }
            if theta_req == 0.0 {
                return Err(SolverError::PolicyInfeasible {
                    k: Some(k),
                    reason: "nonzero residual requested with a zero forcing budget".into(),
                });
            }
            let pg_norm = (&p * g).norm();
            if pg_norm == 0.0 {
                return Ok(ResidualOutcome { r: DVector::zeros(n), theta: theta_req, p, cond_pm });
            }
            let mut rng = util::stream_rng(*direction_seed, k as u64);
            let d = util::seeded_unit_vector(n, &mut rng);
            let pd_norm = (&p * &d).norm();
            let r = d * (theta_req * mag * pg_norm / pd_norm);
            Ok(ResidualOutcome { r, theta: theta_req, p, cond_pm })
        }
        ResidualMode::TruncatedIterative { inner_theta, max_inner } => {
            let theta = theta_req.min(*inner_theta);
            if theta <= 0.0 {
                // zero budget: direct solve, zero residual
                return Ok(ResidualOutcome { r: DVector::zeros(n), theta: 0.0, p, cond_pm });
            }
            let neg_g = -g;
            let pg_norm = (&p * g).norm();
            match truncated_pcg(b, &neg_g, &policy.preconditioner, &p, theta, pg_norm, *max_inner)
            {
                Some(s) => {
                    let r = b * &s + g;
                    Ok(ResidualOutcome { r, theta, p, cond_pm })
                }
                // CG failed to meet the test in budget; fall back to an exact solve
                None => Ok(ResidualOutcome { r: DVector::zeros(n), theta: 0.0, p, cond_pm }),
            }
        }
    }
}

/// Preconditioned CG on `b s = rhs`, stopped as soon as
/// `||P (rhs - b s)|| <= theta * pg_norm`. Returns `None` when the test is not
/// met within the budget (e.g. non-SPD `b`).
fn truncated_pcg(
    b: &DMatrix<f64>,
    rhs: &DVector<f64>,
    preconditioner: &Preconditioner,
    p_test: &DMatrix<f64>,
    theta: f64,
    pg_norm: f64,
    max_inner: usize,
) -> Option<DVector<f64>> {
    let n = rhs.len();
    let apply_prec = |v: &DVector<f64>| -> DVector<f64> {
        match preconditioner {
            // Jacobi: P = diag(M)^{-1} approximates M^{-1}, the classic CG choice
            Preconditioner::Identity | Preconditioner::Jacobi => p_test * v,
            // arbitrary P need not be SPD; run plain CG, the test still uses P
            Preconditioner::Custom(_) => v.clone(),
        }
    };
    let mut s = DVector::zeros(n);
    let mut res = rhs.clone();
    let mut z = apply_prec(&res);
    let mut d = z.clone();
    let mut rz = res.dot(&z);
    let budget = max_inner.max(2 * n + 4);
    for _ in 0..budget {
        if (p_test * &res).norm() <= theta * pg_norm {
            return Some(s);
        }
        let bd = b * &d;
        let dbd = d.dot(&bd);
        if dbd <= 0.0 || !dbd.is_finite() {
            return None;
        }
        let alpha = rz / dbd;
        s += &d * alpha;
        res -= bd * alpha;
        z = apply_prec(&res);
        let rz_new = res.dot(&z);
        if !rz_new.is_finite() {
            return None;
        }
        d = z.clone() + &d * (rz_new / rz);
        rz = rz_new;
    }
    if (p_test * &res).norm() <= theta * pg_norm {
        Some(s)
    } else {
        None
    }
}

/// Stopping rules plus the step machinery for a run.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub rates: SolverRates,
    pub b_strategy: BStrategy,
    pub residual_policy: ResidualPolicy,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl SolverConfig {
    pub fn new(rates: SolverRates) -> Self {
        Self {
            rates,
            b_strategy: BStrategy::Exact,
            residual_policy: ResidualPolicy::exact(),
            max_iter: 50,
            grad_tol: 1e-12,
            step_tol: 1e-15,
        }
    }

    pub fn with_b_strategy(mut self, b: BStrategy) -> Self {
        self.b_strategy = b;
        self
    }

    pub fn with_residual_policy(mut self, policy: ResidualPolicy) -> Self {
        self.residual_policy = policy;
        self
    }

    pub fn with_stopping(mut self, max_iter: usize, grad_tol: f64, step_tol: f64) -> Self {
        self.max_iter = max_iter;
        self.grad_tol = grad_tol;
        self.step_tol = step_tol;
        self
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.max_iter == 0 {
            return Err(SolverError::BadConfig("max_iter must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(SolverError::BadConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// One step's full diagnostics. `omega1_observed = ||B^{-1} M||` and
/// `omega2_observed = ||B^{-1} M - I||` are measured, not assumed; the
/// `condition_violation` flag is raised (not fatal) when they exceed the
/// configured rates.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub grad: DVector<f64>,
    pub step: DVector<f64>,
    pub residual: DVector<f64>,
    pub theta: f64,
    pub cond_pm: f64,
    pub omega1_observed: f64,
    pub omega2_observed: f64,
    pub error: Option<f64>,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub condition_violation: bool,
    pub residual_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradTol,
    StepTol,
    MaxIter,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminationReason::GradTol => write!(f, "gradient tolerance reached"),
            TerminationReason::StepTol => write!(f, "step tolerance reached"),
            TerminationReason::MaxIter => write!(f, "iteration limit reached"),
        }
    }
}

/// A complete, replayable run: one record per step plus the final state.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub x_final: DVector<f64>,
    pub final_grad_norm: f64,
    pub final_error: Option<f64>,
    pub termination: TerminationReason,
}

impl Trace {
    /// Error sequence `||x_k - x*||` for `k = 0 ..= N` (records plus the
    /// final iterate), when the solution is known.
    pub fn error_sequence(&self) -> Option<Vec<f64>> {
        let mut errors = Vec::with_capacity(self.records.len() + 1);
        for rec in &self.records {
            errors.push(rec.error?);
        }
        errors.push(self.final_error?);
        Some(errors)
    }

    /// Fixed-column CSV: `k,error,grad_norm,step_norm,theta,cond,omega1_obs,omega2_obs`.
    /// The last row is the final iterate; its step-related columns are empty.
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map(util::fmt_sig9).unwrap_or_default();
        let mut out =
            String::from("k,error,grad_norm,step_norm,theta,cond,omega1_obs,omega2_obs\n");
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rec.k,
                fmt_opt(rec.error),
                util::fmt_sig9(rec.grad_norm),
                util::fmt_sig9(rec.step_norm),
                util::fmt_sig9(rec.theta),
                util::fmt_sig9(rec.cond_pm),
                util::fmt_sig9(rec.omega1_observed),
                util::fmt_sig9(rec.omega2_observed),
            ));
        }
        out.push_str(&format!(
            "{},{},{},,,,,\n",
            self.records.len(),
            fmt_opt(self.final_error),
            util::fmt_sig9(self.final_grad_norm),
        ));
        out
    }

    /// JSON with full vectors included.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }
}

struct StepOutput {
    x_next: DVector<f64>,
    record: IterationRecord,
}

fn step_inner(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    config: &SolverConfig,
    k: usize,
) -> Result<StepOutput, SolverError> {
    problem.check_domain(x, Some(k))?;
    let j = problem.jacobian_at(x).map_err(|e| at_iteration(e, k))?;
    let spec = j.spectral();
    if !spec.is_injective() {
        return Err(SolverError::RankDeficient { k: Some(k) });
    }
    let fx = problem.eval(x).map_err(|e| at_iteration(e, k))?;
    if fx.len() != problem.dim_out {
        return Err(SolverError::DimensionMismatch { expected: problem.dim_out, got: fx.len() });
    }
    let g = j.tr_apply(&fx);
    let m = j.gram();
    let b = config.b_strategy.matrix(problem, x, &m, k)?;

    let b_op = DenseOperator::new(b.clone())?;
    if !b_op.spectral().is_injective() {
        return Err(SolverError::SingularB { k: Some(k) });
    }
    let b_lu = b.clone().full_piv_lu();

    let outcome = make_residual(&config.residual_policy, x, &g, &m, &b, &config.rates, k)?;
    let rhs = &outcome.r - &g;
    let step = b_lu.solve(&rhs).ok_or(SolverError::SingularB { k: Some(k) })?;

    // observed rate constants: ||B^{-1} M|| and ||B^{-1} M - I||
    let binv_m = b_lu.solve(&m).ok_or(SolverError::SingularB { k: Some(k) })?;
    let omega1_observed = operator::spectral_norm(&binv_m);
    let omega2_observed =
        operator::spectral_norm(&(&binv_m - DMatrix::identity(binv_m.nrows(), binv_m.ncols())));

    let pg_norm = (&outcome.p * &g).norm();
    let pr_norm = (&outcome.p * &outcome.r).norm();
    let residual_violation = pr_norm > outcome.theta * pg_norm + 1e-12
        || outcome.theta * outcome.cond_pm > config.rates.theta_bar() + 1e-12;
    let condition_violation = omega1_observed > config.rates.omega1() + 1e-12
        || omega2_observed > config.rates.omega2() + 1e-12;

    let record = IterationRecord {
        k,
        x: x.clone(),
        grad_norm: g.norm(),
        step_norm: step.norm(),
        error: problem.error_to_star(x),
        grad: g,
        residual: outcome.r,
        theta: outcome.theta,
        cond_pm: outcome.cond_pm,
        omega1_observed,
        omega2_observed,
        condition_violation,
        residual_violation,
        step: step.clone(),
    };
    Ok(StepOutput { x_next: x + step, record })
}

/// One iteration from `x`: solves `B(x) S = -g + r` under the configured
/// policy and returns the new point with its diagnostics record.
pub fn gn_step(
    problem: &ProblemInstance,
    x: &DVector<f64>,
    config: &SolverConfig,
    k: usize,
) -> Result<(DVector<f64>, IterationRecord), SolverError> {
    config.validate()?;
    let out = step_inner(problem, x, config, k)?;
    Ok((out.x_next, out.record))
}

/// Runs the iteration from `x0` until the gradient tolerance, step tolerance,
/// or iteration limit fires. Deterministic given (problem, x0, config, seeds).
pub fn solve(
    problem: &ProblemInstance,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Trace, SolverError> {
    config.validate()?;
    problem.check_domain(x0, Some(0))?;
    let mut x = x0.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    loop {
        let k = records.len();
        let j = problem.jacobian_at(&x).map_err(|e| at_iteration(e, k))?;
        let fx = problem.eval(&x).map_err(|e| at_iteration(e, k))?;
        let grad_norm = j.tr_apply(&fx).norm();
        if grad_norm <= config.grad_tol {
            return Ok(Trace {
                records,
                final_grad_norm: grad_norm,
                final_error: problem.error_to_star(&x),
                x_final: x,
                termination: TerminationReason::GradTol,
            });
        }
        if k >= config.max_iter {
            return Ok(Trace {
                records,
                final_grad_norm: grad_norm,
                final_error: problem.error_to_star(&x),
                x_final: x,
                termination: TerminationReason::MaxIter,
            });
        }
        let out = step_inner(problem, &x, config, k)?;
        let step_small = out.record.step_norm <= config.step_tol;
        records.push(out.record);
        x = out.x_next;
        if step_small {
            let j = problem.jacobian_at(&x).map_err(|e| at_iteration(e, records.len()))?;
            let fx = problem.eval(&x).map_err(|e| at_iteration(e, records.len()))?;
            let grad_norm = j.tr_apply(&fx).norm();
            return Ok(Trace {
                records,
                final_grad_norm: grad_norm,
                final_error: problem.error_to_star(&x),
                x_final: x,
                termination: TerminationReason::StepTol,
            });
        }
    }
}
