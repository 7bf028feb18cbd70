//! Scalar majorant functions and the convergence radii they certify.
//!
//! A majorant function `f` on `[0, R)` is normalized by `f(0) = 0`,
//! `f'(0) = -1` and has a strictly increasing derivative. Its Newton map
//! `n_f(t) = t - f(t)/f'(t)` drives a scalar sequence that dominates the error
//! of the vector iteration. Three radii matter:
//!
//! * `nu`: where `f'` stays negative, `nu = sup { t : f'(t) < 0 }`;
//! * `rho`: where the one-step contraction factor
//!   `(1+theta)*omega1*|n_f(t)|/t + omega1*theta + omega2` stays below 1;
//! * `r = min(kappa, rho)`: the certified convergence radius once the domain
//!   radius `kappa` of the nonlinear problem is taken into account.
//!
//! Concrete families: Hölder (`f(t) = K t^{p+1}/(p+1) - t`, covering Lipschitz
//! at `p = 1`), analytic/Smale (`f(t) = t/(1 - gamma t) - 2t`), and a
//! quadrature-backed family built from a positive integrable kernel `L`
//! (`f'(t) = int_0^t L(u) du - 1`), which `L` need not be nondecreasing.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, QuadError};

/// Grid size used for the construction-time monotonicity spot check.
pub const DEFAULT_H_GRID: usize = 1000;
/// Absolute tolerance for the kernel-family quadrature.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

const BISECT_REL_TOL: f64 = 1e-12;
const RHO_SCAN_POINTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MajorantError {
    #[error("normalization violated: f(0) = {f0:e}, f'(0) = {df0:e} (need 0 and -1)")]
    NormalizationViolated { f0: f64, df0: f64 },
    #[error("derivative is not strictly increasing near t = {t:e}")]
    DerivativeNotIncreasing { t: f64 },
    #[error("t = {t:e} is outside the Newton-map domain (f' >= 0 or t >= R)")]
    OutOfDomain { t: f64 },
    #[error("contraction condition fails arbitrarily close to 0; majorant invalid")]
    RhoNotFound,
    #[error("t0 = {t0:e} is not inside the contraction radius rho = {rho:e}")]
    OutOfRadius { t0: f64, rho: f64 },
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("kernel must be positive: L({u:e}) = {value:e}")]
    KernelNotPositive { u: f64, value: f64 },
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] QuadError),
}

/// Which condition class a majorant function came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MajorantFamily {
    Holder,
    Smale,
    GeneralizedLipschitz,
    Custom,
}

/// Hölder-class parameters; `p = 1` is the Lipschitz case.
/// The constant `K` absorbs `beta = ||F'(x*)^+||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderParams {
    pub k: f64,
    pub p: f64,
}

impl HolderParams {
    pub fn new(k: f64, p: f64) -> Result<Self, MajorantError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(MajorantError::InvalidParams(format!("K must be positive, got {k}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(MajorantError::InvalidParams(format!("p must be in (0, 1], got {p}")));
        }
        Ok(Self { k, p })
    }
}

/// Smale-class parameter for analytic maps:
/// `gamma` bounds the scaled higher derivatives at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmaleParams {
    pub gamma: f64,
}

impl SmaleParams {
    pub fn new(gamma: f64) -> Result<Self, MajorantError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(MajorantError::InvalidParams(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }
}

/// Generalized-Lipschitz parameters: a positive integrable kernel `L` on
/// `[0, R)`. `L` may be decreasing and may blow up at 0.
#[derive(Clone)]
pub struct GeneralizedLipschitzParams {
    pub l: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub domain_radius: f64,
    pub quad_tol: f64,
}

impl fmt::Debug for GeneralizedLipschitzParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralizedLipschitzParams")
            .field("domain_radius", &self.domain_radius)
            .field("quad_tol", &self.quad_tol)
            .finish_non_exhaustive()
    }
}

impl GeneralizedLipschitzParams {
    pub fn new(
        l: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        domain_radius: f64,
        quad_tol: f64,
    ) -> Result<Self, MajorantError> {
        if !(domain_radius > 0.0) {
            return Err(MajorantError::InvalidParams(format!(
                "domain radius must be positive, got {domain_radius}"
            )));
        }
        if !(quad_tol > 0.0) || !quad_tol.is_finite() {
            return Err(MajorantError::InvalidParams(format!(
                "quadrature tolerance must be positive, got {quad_tol}"
            )));
        }
        Ok(Self { l, domain_radius, quad_tol })
    }

    /// Power kernel `L(u) = K p u^{p-1}`, the kernel that reproduces the
    /// Hölder family. Decreasing and singular at 0 for `p < 1`.
    pub fn power_kernel(k: f64, p: f64) -> Result<Self, MajorantError> {
        let HolderParams { k, p } = HolderParams::new(k, p)?;
        Self::new(
            Arc::new(move |u: f64| k * p * u.powf(p - 1.0)),
            f64::INFINITY,
            DEFAULT_QUAD_TOL,
        )
    }

    /// Constant kernel `L(u) = K` (the Lipschitz case).
    pub fn constant_kernel(k: f64) -> Result<Self, MajorantError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(MajorantError::InvalidParams(format!("K must be positive, got {k}")));
        }
        Self::new(Arc::new(move |_| k), f64::INFINITY, DEFAULT_QUAD_TOL)
    }
}

/// Rate parameters of the inexact iteration: `omega1` bounds
/// `||B^{-1} J^T J||`, `omega2` bounds `||B^{-1} J^T J - I||`, and `theta_bar`
/// caps the forcing term times the condition number of the preconditioned
/// Gauss-Newton matrix. Validity requires `omega2 < omega1`,
/// `0 <= theta_bar < 1`, and `omega1*theta_bar + omega2 < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverRates {
    omega1: f64,
    omega2: f64,
    theta_bar: f64,
}

impl SolverRates {
    pub fn new(omega1: f64, omega2: f64, theta_bar: f64) -> Result<Self, MajorantError> {
        if !(0.0..1.0).contains(&theta_bar) {
            return Err(MajorantError::InvalidRates(format!(
                "theta must satisfy 0 <= theta < 1, got {theta_bar}"
            )));
        }
        if !(omega2 >= 0.0 && omega2 < omega1) {
            return Err(MajorantError::InvalidRates(format!(
                "need 0 <= omega2 < omega1, got omega1 = {omega1}, omega2 = {omega2}"
            )));
        }
        if !(omega1 * theta_bar + omega2 < 1.0) {
            return Err(MajorantError::InvalidRates(format!(
                "omega1*theta + omega2 = {} >= 1",
                omega1 * theta_bar + omega2
            )));
        }
        if !(omega1.is_finite() && omega2.is_finite()) {
            return Err(MajorantError::InvalidRates("rates must be finite".into()));
        }
        Ok(Self { omega1, omega2, theta_bar })
    }

    /// `omega1 = 1`, `omega2 = 0`, `theta = 0`: the plain Gauss-Newton method.
    pub fn pure_gauss_newton() -> Self {
        Self { omega1: 1.0, omega2: 0.0, theta_bar: 0.0 }
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    pub fn theta_bar(&self) -> f64 {
        self.theta_bar
    }

    /// Coefficient `(1 + theta) * omega1` of the superlinear term.
    pub fn growth(&self) -> f64 {
        (1.0 + self.theta_bar) * self.omega1
    }

    /// Asymptotic linear factor `omega1*theta + omega2`.
    pub fn linear_limit(&self) -> f64 {
        self.omega1 * self.theta_bar + self.omega2
    }
}

/// How a radius value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    ClosedForm,
    Bisection,
    Scan,
}

/// The certified radii: `nu` (derivative negativity), `rho` (contraction),
/// the problem's domain radius `kappa`, and `r = min(kappa, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusReport {
    pub nu: f64,
    pub rho: f64,
    pub kappa: f64,
    pub r: f64,
    pub nu_method: RadiusMethod,
    pub rho_method: RadiusMethod,
}

impl RadiusReport {
    fn assemble(
        nu: f64,
        rho: f64,
        kappa: f64,
        nu_method: RadiusMethod,
        rho_method: RadiusMethod,
    ) -> Self {
        Self { nu, rho, kappa, r: rho.min(kappa), nu_method, rho_method }
    }
}

/// A scalar majorant function: `f`, its derivative, the domain radius, and
/// which family it came from. Construction verifies the normalization
/// (`f(0) = 0`, `f'(0) = -1`) and spot-checks that `f'` is strictly
/// increasing on a finite grid.
#[derive(Clone)]
pub struct MajorantFunction {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    deriv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    domain_radius: f64,
    probe_radius: f64,
    family: MajorantFamily,
}

impl fmt::Debug for MajorantFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MajorantFunction")
            .field("domain_radius", &self.domain_radius)
            .field("probe_radius", &self.probe_radius)
            .field("family", &self.family)
            .finish_non_exhaustive()
    }
}

impl MajorantFunction {
    pub fn new(
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        deriv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        domain_radius: f64,
        family: MajorantFamily,
    ) -> Result<Self, MajorantError> {
        Self::with_grid(eval, deriv, domain_radius, family, DEFAULT_H_GRID)
    }

    /// As [`MajorantFunction::new`] with an explicit spot-check grid size.
    pub fn with_grid(
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        deriv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        domain_radius: f64,
        family: MajorantFamily,
        grid: usize,
    ) -> Result<Self, MajorantError> {
        if !(domain_radius > 0.0) {
            return Err(MajorantError::InvalidParams(format!(
                "domain radius must be positive, got {domain_radius}"
            )));
        }
        let f0 = eval(0.0);
        let df0 = deriv(0.0);
        if f0.abs() > 1e-9 || (df0 + 1.0).abs() > 1e-9 {
            return Err(MajorantError::NormalizationViolated { f0, df0 });
        }
        let probe_radius = find_probe_radius(&*deriv, domain_radius);
        let out = Self { eval, deriv, domain_radius, probe_radius, family };
        out.check_derivative_increasing(grid.max(8))?;
        Ok(out)
    }

    /// `f(t) = K t^{p+1}/(p+1) - t` on `[0, inf)`.
    pub fn holder(params: HolderParams) -> Self {
        let HolderParams { k, p } = params;
        let eval = Arc::new(move |t: f64| k * t.powf(p + 1.0) / (p + 1.0) - t);
        let deriv = Arc::new(move |t: f64| k * t.powf(p) - 1.0);
        Self::with_grid(eval, deriv, f64::INFINITY, MajorantFamily::Holder, 64)
            .expect("Hölder family satisfies the majorant conditions")
    }

    /// `f(t) = t/(1 - gamma t) - 2t` on `[0, 1/gamma)`.
    pub fn smale(params: SmaleParams) -> Self {
        let SmaleParams { gamma } = params;
        let eval = Arc::new(move |t: f64| t / (1.0 - gamma * t) - 2.0 * t);
        let deriv = Arc::new(move |t: f64| {
            let d = 1.0 - gamma * t;
            1.0 / (d * d) - 2.0
        });
        Self::with_grid(eval, deriv, 1.0 / gamma, MajorantFamily::Smale, 64)
            .expect("Smale family satisfies the majorant conditions")
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (self.deriv)(t)
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn family(&self) -> MajorantFamily {
        self.family
    }

    /// Finite radius used for grid checks and bracketing; equals the domain
    /// radius when that is finite.
    pub fn probe_radius(&self) -> f64 {
        self.probe_radius
    }

    fn check_derivative_increasing(&self, grid: usize) -> Result<(), MajorantError> {
        let mut prev_t = 0.0;
        let mut prev = self.deriv(0.0);
        for t in probe_grid(self.probe_radius, grid) {
            let v = self.deriv(t);
            let slack = 1e-9 * (1.0 + prev.abs());
            if v <= prev - slack {
                return Err(MajorantError::DerivativeNotIncreasing { t: prev_t });
            }
            if v >= prev {
                prev = v;
            }
            prev_t = t;
        }
        Ok(())
    }
}

/// Finite probe radius: the domain radius if finite, otherwise a doubling
/// search for the sign change of `f'` (capped if `f'` never turns).
fn find_probe_radius(deriv: &(dyn Fn(f64) -> f64 + Send + Sync), domain_radius: f64) -> f64 {
    if domain_radius.is_finite() {
        return domain_radius;
    }
    let mut t = 1.0;
    for _ in 0..80 {
        let v = deriv(t);
        if !v.is_finite() || v >= 0.0 {
            return 2.0 * t;
        }
        t *= 2.0;
    }
    t
}

/// Half log-spaced, half uniform grid on `(0, radius)`.
fn probe_grid(radius: f64, n: usize) -> Vec<f64> {
    let n_log = n / 2;
    let n_lin = n - n_log;
    let mut pts = Vec::with_capacity(n);
    let lo = radius * 1e-9;
    for i in 0..n_log {
        let frac = i as f64 / (n_log.max(2) - 1) as f64;
        pts.push(lo * (radius * (1.0 - 1e-9) / lo).powf(frac));
    }
    for i in 1..=n_lin {
        pts.push(radius * (1.0 - 1e-9) * i as f64 / n_lin as f64);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

/// Newton map `n_f(t) = t - f(t)/f'(t)`, defined where `f'(t) < 0`.
/// Nonpositive on `(0, nu)`.
pub fn newton_map(f: &MajorantFunction, t: f64) -> Result<f64, MajorantError> {
    if !(0.0..f.domain_radius()).contains(&t) {
        return Err(MajorantError::OutOfDomain { t });
    }
    let fp = f.deriv(t);
    if fp >= 0.0 {
        return Err(MajorantError::OutOfDomain { t });
    }
    Ok(t - f.eval(t) / fp)
}

/// Bisection for the zero of `g` on a bracket with `g(lo) < 0 <= g(hi)`.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECT_REL_TOL * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The radius `nu = sup { t in [0, R) : f'(t) < 0 }`, located by bracketing
/// the sign change of `f'` and bisecting to `1e-12` relative accuracy.
/// Returns `R` (or the probe cap when `R` is infinite) if `f'` stays negative.
pub fn radius_nu(f: &MajorantFunction) -> f64 {
    radius_nu_with_method(f).0
}

fn radius_nu_with_method(f: &MajorantFunction) -> (f64, RadiusMethod) {
    let probe = f.probe_radius();
    // log-spaced scan for the first nonnegative derivative
    let mut lo = 0.0;
    let mut hi = None;
    for t in probe_grid(probe, 512) {
        let v = f.deriv(t);
        if v >= 0.0 || !v.is_finite() {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    match hi {
        Some(hi) => (bisect(|t| f.deriv(t), lo, hi), RadiusMethod::Bisection),
        None => {
            if f.domain_radius().is_finite() {
                (f.domain_radius(), RadiusMethod::Scan)
            } else {
                (probe, RadiusMethod::Scan)
            }
        }
    }
}

/// One-step contraction gap
/// `g(t) = (1+theta)*omega1*|n_f(t)|/t + omega1*theta + omega2 - 1`;
/// `rho` is the largest radius with `g < 0` on `(0, rho)`.
fn contraction_gap(f: &MajorantFunction, rates: &SolverRates, t: f64) -> f64 {
    let fp = f.deriv(t);
    let ratio = (f.eval(t) / fp - t) / t;
    rates.growth() * ratio + rates.linear_limit() - 1.0
}

/// The contraction radius `rho`, computed numerically.
///
/// When the Newton-map ratio `|n_f(t)|/t` is certified increasing the gap
/// function crosses zero at most once and a single bisection suffices;
/// otherwise a 10,000-point log-spaced scan locates the first sign change
/// (the supremum is the first crossing) before bisecting.
pub fn radius_rho(f: &MajorantFunction, rates: &SolverRates) -> Result<f64, MajorantError> {
    radius_rho_with_method(f, rates).map(|(rho, _)| rho)
}

pub fn radius_rho_with_method(
    f: &MajorantFunction,
    rates: &SolverRates,
) -> Result<(f64, RadiusMethod), MajorantError> {
    let nu = radius_nu(f);
    if newton_ratio_increasing(f, 0.0, 1024) {
        let (rho, crossed) = rho_first_crossing(f, rates, nu, 512)?;
        Ok((rho, if crossed { RadiusMethod::Bisection } else { RadiusMethod::Scan }))
    } else {
        let (rho, _) = rho_first_crossing(f, rates, nu, RHO_SCAN_POINTS)?;
        Ok((rho, RadiusMethod::Scan))
    }
}

fn rho_first_crossing(
    f: &MajorantFunction,
    rates: &SolverRates,
    nu: f64,
    points: usize,
) -> Result<(f64, bool), MajorantError> {
    let lo_t = nu * 1e-12;
    let hi_t = nu * (1.0 - 1e-12);
    let mut lo = 0.0;
    let mut prev_ok = false;
    for i in 0..points {
        let frac = i as f64 / (points - 1) as f64;
        let t = lo_t * (hi_t / lo_t).powf(frac);
        let g = contraction_gap(f, rates, t);
        if g >= 0.0 || !g.is_finite() {
            if !prev_ok {
                return Err(MajorantError::RhoNotFound);
            }
            let rho = bisect(|t| contraction_gap(f, rates, t), lo, t);
            return Ok((rho, true));
        }
        lo = t;
        prev_ok = true;
    }
    Ok((nu, false))
}

/// Checks on a log-spaced grid of `(0, nu)` that `t -> |n_f(t)|/t^{p+1}` is
/// strictly increasing. This certificate enables the per-step error bound and
/// guarantees the contraction gap crosses zero at most once.
///
/// The grid floor is `1e-4 * nu`: extracting `|n_f(t)|/t^{p+1}` from black-box
/// evaluations of `f` carries `eps * t^{-p}` relative noise, which below that
/// floor would swamp the true increase between neighboring grid points.
pub fn newton_ratio_increasing(f: &MajorantFunction, p: f64, grid: usize) -> bool {
    if !(0.0..=1.0).contains(&p) {
        return false;
    }
    let nu = radius_nu(f);
    let lo_t = nu * 1e-4;
    let hi_t = nu * (1.0 - 1e-9);
    let mut prev: Option<f64> = None;
    let n = grid.max(8);
    for i in 0..n {
        let frac = i as f64 / (n - 1) as f64;
        let t = lo_t * (hi_t / lo_t).powf(frac);
        let fp = f.deriv(t);
        if fp >= 0.0 {
            break;
        }
        let value = (f.eval(t) / fp - t) / t.powf(p + 1.0);
        if !value.is_finite() {
            return false;
        }
        if let Some(prev) = prev {
            let slack = (1e-9 * prev.abs()).max(1e-13);
            if value <= prev - slack {
                return false;
            }
        }
        prev = Some(prev.map_or(value, |p| p.max(value)));
    }
    true
}

/// Closed-form radii for the Hölder family.
///
/// `nu = (1/K)^{1/p}` and
/// `rho = [ (1-w1*th-w2)(p+1) / (K (1-w1*th-w2 + p(1+w1-w2))) ]^{1/p}`.
pub fn holder_radius_closed_form(
    params: HolderParams,
    rates: &SolverRates,
    kappa: f64,
) -> RadiusReport {
    let HolderParams { k, p } = params;
    let b = 1.0 - rates.linear_limit();
    let nu = (1.0 / k).powf(1.0 / p);
    let denom = k * (b + p * (1.0 + rates.omega1() - rates.omega2()));
    let rho = (b * (p + 1.0) / denom).powf(1.0 / p);
    RadiusReport::assemble(nu, rho, kappa, RadiusMethod::ClosedForm, RadiusMethod::ClosedForm)
}

/// Closed-form radii for the Smale family.
///
/// With `a = (1+theta)*omega1` and `b = 1 - omega1*theta - omega2`:
/// `rho = (a + 4b - sqrt((a+4b)^2 - 8 b^2)) / (4 b gamma)` and
/// `nu = (1 - 1/sqrt(2)) / gamma`.
pub fn smale_radius_closed_form(
    params: SmaleParams,
    rates: &SolverRates,
    kappa: f64,
) -> RadiusReport {
    let gamma = params.gamma;
    let a = rates.growth();
    let b = 1.0 - rates.linear_limit();
    let s = a + 4.0 * b;
    let rho = (s - (s * s - 8.0 * b * b).sqrt()) / (4.0 * b * gamma);
    let nu = (1.0 - std::f64::consts::FRAC_1_SQRT_2) / gamma;
    RadiusReport::assemble(nu, rho, kappa, RadiusMethod::ClosedForm, RadiusMethod::ClosedForm)
}

/// Numeric radii for an arbitrary majorant function.
pub fn radius_report(
    f: &MajorantFunction,
    rates: &SolverRates,
    kappa: f64,
) -> Result<RadiusReport, MajorantError> {
    let (nu, nu_method) = radius_nu_with_method(f);
    let (rho, rho_method) = radius_rho_with_method(f, rates)?;
    Ok(RadiusReport::assemble(nu, rho, kappa, nu_method, rho_method))
}

/// Builds the quadrature-backed majorant from a generalized-Lipschitz kernel:
/// `f(t) = int_0^t L(u)(t-u) du - t`, `f'(t) = int_0^t L(u) du - 1`.
///
/// The kernel is validated positive on a sample grid and the quadrature is
/// required to converge at construction time.
pub fn glip_majorant(
    params: &GeneralizedLipschitzParams,
) -> Result<MajorantFunction, MajorantError> {
    let tol = params.quad_tol;
    let l = Arc::clone(&params.l);
    // positivity of L on a sample of (0, R)
    let sample_radius = if params.domain_radius.is_finite() { params.domain_radius } else { 16.0 };
    for u in probe_grid(sample_radius, 256) {
        let v = l(u);
        if !(v > 0.0) {
            return Err(MajorantError::KernelNotPositive { u, value: v });
        }
    }
    // strict quadrature validation before closures start best-effort use
    for t in probe_grid(sample_radius, 32) {
        quad::integrate_singular_origin(&*l, t, tol)?;
        let lt = Arc::clone(&l);
        quad::integrate_singular_origin(move |u| lt(u) * (t - u), t, tol)?;
    }
    let l_eval = Arc::clone(&l);
    let eval = Arc::new(move |t: f64| {
        if t == 0.0 {
            return 0.0;
        }
        let lt = Arc::clone(&l_eval);
        let integral = quad::integrate_singular_origin(move |u| lt(u) * (t - u), t, tol)
            .unwrap_or_else(quad_estimate);
        integral - t
    });
    let l_deriv = Arc::clone(&l);
    let deriv = Arc::new(move |t: f64| {
        if t == 0.0 {
            return -1.0;
        }
        let lt = Arc::clone(&l_deriv);
        let integral =
            quad::integrate_singular_origin(move |u| lt(u), t, tol).unwrap_or_else(quad_estimate);
        integral - 1.0
    });
    MajorantFunction::new(eval, deriv, params.domain_radius, MajorantFamily::GeneralizedLipschitz)
}

/// Budget overruns after the construction-time validation fall back to the
/// best available estimate.
fn quad_estimate(err: QuadError) -> f64 {
    match err {
        QuadError::BudgetExceeded { estimate, .. } => estimate,
        QuadError::InvalidInterval { .. } => f64::NAN,
    }
}

/// The dominating scalar sequence
/// `t_{k+1} = omega1 (1+theta) |n_f(t_k)| + (omega1*theta + omega2) t_k`,
/// starting from `t_0 in (0, rho)`.
///
/// Returns `t_0 ..= t_{k_max}`. The sequence is strictly decreasing while
/// positive; it is clamped at exact zero once it underflows.
///
/// `t_0` is the initial error `||x_0 - x*||`, so this is a certification tool
/// for problems with a known solution, not a runtime estimate.
pub fn majorant_sequence(
    f: &MajorantFunction,
    rates: &SolverRates,
    t0: f64,
    k_max: usize,
) -> Result<Vec<f64>, MajorantError> {
    let rho = radius_rho(f, rates)?;
    if !(t0 > 0.0 && t0 < rho) {
        return Err(MajorantError::OutOfRadius { t0, rho });
    }
    let mut seq = Vec::with_capacity(k_max + 1);
    let mut t = t0;
    seq.push(t);
    for _ in 0..k_max {
        if t == 0.0 {
            seq.push(0.0);
            continue;
        }
        let next = rates.growth() * newton_map(f, t)?.abs() + rates.linear_limit() * t;
        // guaranteed in exact arithmetic; guards float-level stalls near zero
        let next = if next >= t { 0.0 } else { next };
        seq.push(next);
        t = next;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pure() -> SolverRates {
        SolverRates::pure_gauss_newton()
    }

    fn holder_f(k: f64, p: f64) -> MajorantFunction {
        MajorantFunction::holder(HolderParams::new(k, p).unwrap())
    }

    fn smale_f(gamma: f64) -> MajorantFunction {
        MajorantFunction::smale(SmaleParams::new(gamma).unwrap())
    }

    #[test]
    fn rates_validation() {
        assert!(SolverRates::new(1.0, 0.0, 0.0).is_ok());
        assert!(SolverRates::new(1.0, 0.5, 0.0).is_ok());
        // theta out of range
        assert!(SolverRates::new(1.0, 0.0, 1.0).is_err());
        // omega2 >= omega1
        assert!(SolverRates::new(0.5, 0.5, 0.0).is_err());
        // omega1*theta + omega2 >= 1
        assert!(SolverRates::new(1.0, 0.6, 0.5).is_err());
    }

    #[test]
    fn construction_rejects_bad_normalization() {
        let r = MajorantFunction::new(
            Arc::new(|t| t * t),
            Arc::new(|t| 2.0 * t),
            1.0,
            MajorantFamily::Custom,
        );
        assert!(matches!(r, Err(MajorantError::NormalizationViolated { .. })));
    }

    #[test]
    fn construction_rejects_decreasing_derivative() {
        let r = MajorantFunction::new(
            Arc::new(|t: f64| -t - t * t),
            Arc::new(|t: f64| -1.0 - 2.0 * t),
            1.0,
            MajorantFamily::Custom,
        );
        assert!(matches!(r, Err(MajorantError::DerivativeNotIncreasing { .. })));
    }

    #[test]
    fn newton_map_values() {
        let f = holder_f(1.0, 1.0);
        // n_f(t) = -t^2 / (2(1-t))
        assert_relative_eq!(newton_map(&f, 0.5).unwrap(), -0.25, max_relative = 1e-12);
        assert_eq!(newton_map(&f, 0.0).unwrap(), 0.0);
        let s = smale_f(1.0);
        assert_relative_eq!(newton_map(&s, 0.2).unwrap(), -1.0 / 7.0, max_relative = 1e-12);
        // out of the negativity region
        assert!(newton_map(&f, 1.5).is_err());
    }

    #[test]
    fn nu_values() {
        assert_relative_eq!(radius_nu(&holder_f(1.0, 1.0)), 1.0, max_relative = 1e-10);
        assert_relative_eq!(radius_nu(&holder_f(2.0, 1.0)), 0.5, max_relative = 1e-10);
        assert_relative_eq!(radius_nu(&holder_f(1.0, 0.5)), 1.0, max_relative = 1e-10);
        assert_relative_eq!(
            radius_nu(&smale_f(1.0)),
            1.0 - std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-10
        );
        let glip = glip_majorant(&GeneralizedLipschitzParams::constant_kernel(1.0).unwrap());
        assert_relative_eq!(radius_nu(&glip.unwrap()), 1.0, max_relative = 1e-8);
    }

    #[test]
    fn rho_values() {
        assert_relative_eq!(
            radius_rho(&holder_f(1.0, 1.0), &pure()).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            radius_rho(&smale_f(1.0), &pure()).unwrap(),
            (5.0 - 17f64.sqrt()) / 4.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            radius_rho(&holder_f(1.0, 0.5), &pure()).unwrap(),
            0.5625,
            max_relative = 1e-10
        );
    }

    #[test]
    fn holder_closed_form_examples() {
        let r = holder_radius_closed_form(
            HolderParams::new(1.0, 1.0).unwrap(),
            &pure(),
            f64::INFINITY,
        );
        assert_relative_eq!(r.r, 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(r.nu, 1.0);
        assert!(r.rho <= r.nu);

        let r = holder_radius_closed_form(HolderParams::new(2.0, 1.0).unwrap(), &pure(), 0.1);
        assert_relative_eq!(r.r, 0.1);

        let rates = SolverRates::new(1.0, 0.5, 0.0).unwrap();
        let r = holder_radius_closed_form(
            HolderParams::new(1.0, 1.0).unwrap(),
            &rates,
            f64::INFINITY,
        );
        assert_relative_eq!(r.r, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn smale_closed_form_examples() {
        let r =
            smale_radius_closed_form(SmaleParams::new(1.0).unwrap(), &pure(), f64::INFINITY);
        assert_relative_eq!(r.r, 0.219223593595584, max_relative = 1e-12);
        let r2 =
            smale_radius_closed_form(SmaleParams::new(2.0).unwrap(), &pure(), f64::INFINITY);
        assert_relative_eq!(r2.r, r.r / 2.0, max_relative = 1e-14);
        let r3 = smale_radius_closed_form(SmaleParams::new(1.0).unwrap(), &pure(), 0.1);
        assert_relative_eq!(r3.r, 0.1);
    }

    #[test]
    fn closed_forms_match_numeric_radius() {
        let thetas = [0.0, 0.1, 0.3];
        let omegas = [(1.0, 0.0), (1.2, 0.1), (0.8, 0.15)];
        for &theta in &thetas {
            for &(w1, w2) in &omegas {
                let rates = SolverRates::new(w1, w2, theta).unwrap();
                for &(k, p) in &[(1.0, 1.0), (2.0, 0.5), (0.5, 0.75)] {
                    let params = HolderParams::new(k, p).unwrap();
                    let closed = holder_radius_closed_form(params, &rates, f64::INFINITY);
                    let numeric =
                        radius_rho(&MajorantFunction::holder(params), &rates).unwrap();
                    assert_relative_eq!(numeric, closed.rho, max_relative = 1e-8);
                }
                for &gamma in &[1.0, 2.0] {
                    let params = SmaleParams::new(gamma).unwrap();
                    let closed = smale_radius_closed_form(params, &rates, f64::INFINITY);
                    let numeric = radius_rho(&MajorantFunction::smale(params), &rates).unwrap();
                    assert_relative_eq!(numeric, closed.rho, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn glip_constant_kernel_matches_lipschitz() {
        let k = 1.5;
        let f = glip_majorant(&GeneralizedLipschitzParams::constant_kernel(k).unwrap()).unwrap();
        for i in 1..=20 {
            let t = 0.03 * i as f64;
            assert_relative_eq!(f.eval(t), k * t * t / 2.0 - t, epsilon = 1e-10);
            assert_relative_eq!(f.deriv(t), k * t - 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn glip_power_kernel_matches_holder() {
        // L(u) = K p u^{p-1} is decreasing and singular at 0 for p < 1
        let f = glip_majorant(&GeneralizedLipschitzParams::power_kernel(1.0, 0.5).unwrap())
            .unwrap();
        for i in 1..=10 {
            let t = 0.09 * i as f64;
            assert_relative_eq!(f.deriv(t), t.sqrt() - 1.0, epsilon = 2e-10);
            assert_relative_eq!(f.eval(t), t.powf(1.5) / 1.5 - t, epsilon = 2e-10);
        }
    }

    #[test]
    fn glip_rejects_nonpositive_kernel() {
        let zero = GeneralizedLipschitzParams::new(Arc::new(|_| 0.0), 1.0, 1e-10).unwrap();
        assert!(matches!(glip_majorant(&zero), Err(MajorantError::KernelNotPositive { .. })));
    }

    #[test]
    fn glip_reproduces_holder_radii() {
        for &p in &[0.5, 0.75, 1.0] {
            let params = HolderParams::new(1.0, p).unwrap();
            let holder = MajorantFunction::holder(params);
            let glip =
                glip_majorant(&GeneralizedLipschitzParams::power_kernel(1.0, p).unwrap())
                    .unwrap();
            let nu_h = radius_nu(&holder);
            let nu_g = radius_nu(&glip);
            assert!((nu_h - nu_g).abs() <= 1e-9, "nu mismatch at p={p}: {nu_h} vs {nu_g}");
            let rho_h = radius_rho(&holder, &pure()).unwrap();
            let rho_g = radius_rho(&glip, &pure()).unwrap();
            assert!((rho_h - rho_g).abs() <= 1e-9, "rho mismatch at p={p}: {rho_h} vs {rho_g}");
        }
    }

    #[test]
    fn sequence_hand_iterated() {
        let f = holder_f(1.0, 1.0);
        let seq = majorant_sequence(&f, &pure(), 0.5, 2).unwrap();
        assert_relative_eq!(seq[0], 0.5);
        assert_relative_eq!(seq[1], 0.25, max_relative = 1e-12);
        assert_relative_eq!(seq[2], 0.0625 / 1.5, max_relative = 1e-12);

        let rates = SolverRates::new(1.0, 0.0, 0.1).unwrap();
        let seq = majorant_sequence(&f, &rates, 0.5, 1).unwrap();
        assert_relative_eq!(seq[1], 1.1 * 0.25 + 0.1 * 0.5, max_relative = 1e-12);
    }

    #[test]
    fn sequence_rejects_t0_outside_rho() {
        let f = holder_f(1.0, 1.0);
        assert!(matches!(
            majorant_sequence(&f, &pure(), 0.7, 3),
            Err(MajorantError::OutOfRadius { .. })
        ));
    }

    #[test]
    fn sequence_strictly_decreasing_in_radius() {
        for (f, rates) in [
            (holder_f(1.0, 1.0), pure()),
            (holder_f(2.0, 0.5), SolverRates::new(1.0, 0.1, 0.2).unwrap()),
            (smale_f(1.5), SolverRates::new(1.1, 0.05, 0.1).unwrap()),
        ] {
            let rho = radius_rho(&f, &rates).unwrap();
            let seq = majorant_sequence(&f, &rates, 0.9 * rho, 30).unwrap();
            for w in seq.windows(2) {
                if w[0] > 0.0 {
                    assert!(w[1] < w[0], "not strictly decreasing: {} -> {}", w[0], w[1]);
                    assert!(w[1] < rho);
                }
            }
        }
    }

    #[test]
    fn sequence_ratio_approaches_linear_limit() {
        // limit omega1*theta + omega2 > 0
        let rates = SolverRates::new(1.0, 0.1, 0.2).unwrap();
        let f = holder_f(1.0, 1.0);
        let nu = radius_nu(&f);
        let seq = majorant_sequence(&f, &rates, 0.2, 60).unwrap();
        let mut checked = false;
        for w in seq.windows(2) {
            if w[0] < 1e-8 * nu && w[0] > 0.0 {
                assert_relative_eq!(w[1] / w[0], rates.linear_limit(), epsilon = 1e-6);
                checked = true;
                break;
            }
        }
        assert!(checked, "sequence never reached the asymptotic regime");
        // pure case: the ratio goes to 0
        let seq = majorant_sequence(&f, &pure(), 0.2, 60).unwrap();
        let mut checked = false;
        for w in seq.windows(2) {
            if w[0] < 1e-8 * nu && w[0] > 0.0 && w[1] > 0.0 {
                assert!(w[1] / w[0] < 1e-6);
                checked = true;
                break;
            }
        }
        assert!(checked);
    }

    #[test]
    fn newton_map_negative_inside_nu() {
        for f in [holder_f(1.0, 1.0), holder_f(2.0, 0.5), smale_f(1.0)] {
            let nu = radius_nu(&f);
            for i in 1..=40 {
                let t = nu * 1e-6 * (1e6f64 * 0.999).powf(i as f64 / 40.0);
                let n = newton_map(&f, t).unwrap();
                assert!(n < 0.0, "n_f({t}) = {n} not negative");
            }
        }
    }

    #[test]
    fn newton_ratio_vanishes_at_zero() {
        for f in [holder_f(1.0, 1.0), holder_f(1.0, 0.5), smale_f(1.0)] {
            let nu = radius_nu(&f);
            let mut prev = f64::INFINITY;
            for k in 4..=8 {
                let t = nu * 10f64.powi(-k);
                let ratio = newton_map(&f, t).unwrap().abs() / t;
                assert!(ratio < 1e-2, "ratio {ratio} too large at t = {t}");
                assert!(ratio < prev, "ratio not decreasing");
                prev = ratio;
            }
        }
    }

    #[test]
    fn one_step_map_contracts_on_rho() {
        // 0 < omega1(1+theta)|n_f(t)| + (omega1*theta+omega2) t < t on (0, rho)
        for rates in [pure(), SolverRates::new(1.2, 0.1, 0.2).unwrap()] {
            for f in [holder_f(1.0, 1.0), smale_f(1.0)] {
                let rho = radius_rho(&f, &rates).unwrap();
                for i in 1..50 {
                    let t = rho * i as f64 / 50.0;
                    let mapped =
                        rates.growth() * newton_map(&f, t).unwrap().abs()
                            + rates.linear_limit() * t;
                    assert!(mapped > 0.0);
                    assert!(mapped < t, "map not contracting at t = {t}");
                }
            }
        }
    }

    #[test]
    fn ratio_certificates() {
        // each family with its own exponent
        assert!(newton_ratio_increasing(&holder_f(1.0, 1.0), 1.0, 400));
        assert!(newton_ratio_increasing(&holder_f(1.0, 0.5), 0.5, 400));
        assert!(newton_ratio_increasing(&smale_f(1.0), 1.0, 400));
        // any convex-derivative majorant passes at p = 1
        let cubic = MajorantFunction::new(
            Arc::new(|t: f64| t * t * t / 3.0 + t * t / 2.0 - t),
            Arc::new(|t: f64| t * t + t - 1.0),
            f64::INFINITY,
            MajorantFamily::Custom,
        )
        .unwrap();
        assert!(newton_ratio_increasing(&cubic, 1.0, 400));
        // p outside [0, 1] is rejected
        assert!(!newton_ratio_increasing(&holder_f(1.0, 1.0), 1.5, 400));
    }

    #[test]
    fn scan_fallback_agrees_with_bisection() {
        let f = holder_f(1.0, 1.0);
        let rates = pure();
        let nu = radius_nu(&f);
        let (scan_rho, _) = rho_first_crossing(&f, &rates, nu, RHO_SCAN_POINTS).unwrap();
        assert_relative_eq!(scan_rho, 2.0 / 3.0, max_relative = 1e-8);
    }

    #[test]
    fn numeric_report_for_custom_family() {
        let cubic = MajorantFunction::new(
            Arc::new(|t: f64| t * t * t / 3.0 + t * t / 2.0 - t),
            Arc::new(|t: f64| t * t + t - 1.0),
            f64::INFINITY,
            MajorantFamily::Custom,
        )
        .unwrap();
        let report = radius_report(&cubic, &pure(), 0.2).unwrap();
        // nu solves t^2 + t - 1 = 0
        assert_relative_eq!(report.nu, (5f64.sqrt() - 1.0) / 2.0, max_relative = 1e-10);
        assert!(report.rho <= report.nu);
        assert_relative_eq!(report.r, report.rho.min(0.2));
    }

    #[test]
    fn invalid_kernel_params() {
        assert!(GeneralizedLipschitzParams::power_kernel(0.0, 0.5).is_err());
        assert!(GeneralizedLipschitzParams::power_kernel(1.0, 1.5).is_err());
        assert!(HolderParams::new(1.0, 0.0).is_err());
        assert!(SmaleParams::new(-1.0).is_err());
    }
}
