//! Built-in zero-residual test problems with analytically known solutions,
//! domain radii, and condition-class constants, plus polynomial systems
//! definable from coefficient tables.
//!
//! Every catalog entry documents how its constants were derived (the
//! `provenance` note); none of them is fitted numerically. The constants can
//! be re-checked at any time with [`validate_annotation`], which samples the
//! defining inequality
//! `beta * ||J(x) - J(x* + tau (x - x*))|| <= f'(||x - x*||) - f'(tau ||x - x*||)`
//! over the ball where the theory applies.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::majorant::{
    glip_majorant, radius_nu, GeneralizedLipschitzParams, HolderParams, MajorantError,
    MajorantFunction, SmaleParams,
};
use crate::operator;
use crate::solver::{ProblemInstance, SolverError};
use crate::util;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem {0:?}; known: {known:?}", known = catalog())]
    UnknownProblem(String),
    #[error(
        "annotation invalid: condition violated by {violation:e} at x = {x:?}, tau = {tau}"
    )]
    AnnotationInvalid { x: DVector<f64>, tau: f64, violation: f64 },
    #[error("problem has no known solution; annotation checks need x*")]
    NoKnownZero,
    #[error(transparent)]
    Majorant(#[from] MajorantError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The condition class a problem is annotated with, with its analytically
/// derived constants.
#[derive(Clone)]
pub enum ConditionClass {
    Lipschitz { k: f64 },
    Holder { k: f64, p: f64 },
    Smale { gamma: f64 },
    GeneralizedLipschitz { params: GeneralizedLipschitzParams, exponent: f64 },
}

impl fmt::Debug for ConditionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionClass::Lipschitz { k } => write!(f, "Lipschitz {{ k: {k} }}"),
            ConditionClass::Holder { k, p } => write!(f, "Holder {{ k: {k}, p: {p} }}"),
            ConditionClass::Smale { gamma } => write!(f, "Smale {{ gamma: {gamma} }}"),
            ConditionClass::GeneralizedLipschitz { exponent, .. } => {
                write!(f, "GeneralizedLipschitz {{ exponent: {exponent}, .. }}")
            }
        }
    }
}

impl ConditionClass {
    /// The majorant function induced by this class.
    pub fn majorant(&self) -> Result<MajorantFunction, MajorantError> {
        match self {
            ConditionClass::Lipschitz { k } => {
                Ok(MajorantFunction::holder(HolderParams::new(*k, 1.0)?))
            }
            ConditionClass::Holder { k, p } => {
                Ok(MajorantFunction::holder(HolderParams::new(*k, *p)?))
            }
            ConditionClass::Smale { gamma } => {
                Ok(MajorantFunction::smale(SmaleParams::new(*gamma)?))
            }
            ConditionClass::GeneralizedLipschitz { params, .. } => glip_majorant(params),
        }
    }

    /// The natural exponent for the per-step bound (`1` for Lipschitz, Smale
    /// and custom kernels, the Hölder `p` otherwise).
    pub fn exponent(&self) -> f64 {
        match self {
            ConditionClass::Lipschitz { .. } | ConditionClass::Smale { .. } => 1.0,
            ConditionClass::Holder { p, .. } => *p,
            ConditionClass::GeneralizedLipschitz { exponent, .. } => *exponent,
        }
    }
}

/// A problem together with its condition-class annotation and a note on how
/// the constants were derived.
#[derive(Debug, Clone)]
pub struct AnnotatedProblem {
    pub name: String,
    pub instance: ProblemInstance,
    pub condition_class: ConditionClass,
    pub provenance: String,
}

impl AnnotatedProblem {
    pub fn majorant(&self) -> Result<MajorantFunction, MajorantError> {
        self.condition_class.majorant()
    }

    pub fn exponent(&self) -> f64 {
        self.condition_class.exponent()
    }
}

/// Names of the built-in problems.
pub fn catalog() -> Vec<&'static str> {
    vec!["poly2", "exp2", "holder-p", "multi-nd", "glip-sing"]
}

/// Looks up a built-in problem by name.
pub fn builtin(name: &str) -> Result<AnnotatedProblem, ProblemError> {
    match name {
        "poly2" => Ok(poly2()),
        "exp2" => Ok(exp2()),
        "holder-p" => Ok(holder_p()),
        "multi-nd" => Ok(multi_nd()),
        "glip-sing" => Ok(glip_sing()),
        other => Err(ProblemError::UnknownProblem(other.to_string())),
    }
}

/// `F(x) = (x, x^2/2)`, zero at 0.
///
/// `J(x) = (1, x)^T`, so `||J(x) - J(y)|| = |x - y|` exactly and
/// `beta = 1/sigma_min((1,0)^T) = 1`: Lipschitz with `K = beta * 1 = 1`,
/// with equality in the defining condition.
fn poly2() -> AnnotatedProblem {
    let instance = ProblemInstance::new(
        1,
        2,
        Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[0], x[0] * x[0] / 2.0])),
        Arc::new(|x: &DVector<f64>| DMatrix::from_column_slice(2, 1, &[1.0, x[0]])),
    )
    .expect("valid dims")
    .with_known_zero(DVector::zeros(1))
    .expect("F(0) = 0")
    .with_pinv_norm(1.0);
    AnnotatedProblem {
        name: "poly2".into(),
        instance,
        condition_class: ConditionClass::Lipschitz { k: 1.0 },
        provenance: "J(x) = (1, x)^T gives ||J(x)-J(y)|| = |x-y| exactly; \
                     sigma_min(J(0)) = 1 so beta = 1 and K = beta * 1 = 1."
            .into(),
    }
}

/// `F(x) = (e^x - 1, x)`, zero at 0, analytic.
///
/// `beta = 1/sqrt(2)` (the only singular value of `(1,1)^T` is `sqrt(2)`).
/// All higher derivatives at 0 have norm 1, so the scaled-derivative bound is
/// `gamma = max_n (beta/n!)^{1/(n-1)} = beta/2 = 1/(2 sqrt(2))`, attained at
/// `n = 2` (the terms decrease in `n`). The domain is capped at `1/gamma`,
/// where the analytic majorant lives.
fn exp2() -> AnnotatedProblem {
    let gamma = 0.5 / std::f64::consts::SQRT_2;
    let beta = std::f64::consts::FRAC_1_SQRT_2;
    let instance = ProblemInstance::new(
        1,
        2,
        Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[0].exp_m1(), x[0]])),
        Arc::new(|x: &DVector<f64>| DMatrix::from_column_slice(2, 1, &[x[0].exp(), 1.0])),
    )
    .expect("valid dims")
    .with_known_zero(DVector::zeros(1))
    .expect("F(0) = 0")
    .with_domain_radius(1.0 / gamma)
    .expect("positive radius")
    .with_pinv_norm(beta);
    AnnotatedProblem {
        name: "exp2".into(),
        instance,
        condition_class: ConditionClass::Smale { gamma },
        provenance: "F^{(n)}(0) = (1, 0)^T for n >= 2 with norm 1; \
                     beta = 1/sqrt(2); gamma = sup_n (beta/n!)^{1/(n-1)} = beta/2, \
                     attained at n = 2."
            .into(),
    }
}

/// Scalar map whose second component is `|x|^p x / (1+p)`: the derivative
/// `(1, |x|^p)` is Hölder-continuous with exponent `p` but not Lipschitz
/// at the solution.
fn holder_family_problem(p: f64) -> ProblemInstance {
    let c = 1.0 / (1.0 + p);
    ProblemInstance::new(
        1,
        2,
        Arc::new(move |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0], c * x[0].abs().powf(p) * x[0]])
        }),
        Arc::new(move |x: &DVector<f64>| {
            DMatrix::from_column_slice(2, 1, &[1.0, x[0].abs().powf(p)])
        }),
    )
    .expect("valid dims")
    .with_known_zero(DVector::zeros(1))
    .expect("F(0) = 0")
    .with_pinv_norm(1.0)
}

/// `F(x) = (x, |x|^{1/2} x / (3/2))`: Hölder class with `p = 1/2`, `K = 1`.
///
/// `J(x) = (1, |x|^p)^T` so `||J(x) - J(tau x)|| = (1 - tau^p)|x|^p` exactly;
/// `beta = 1`, hence `K = c (1+p) beta = 1` with `c = 1/(1+p)`.
fn holder_p() -> AnnotatedProblem {
    let p = 0.5;
    AnnotatedProblem {
        name: "holder-p".into(),
        instance: holder_family_problem(p),
        condition_class: ConditionClass::Holder { k: 1.0, p },
        provenance: "||J(x) - J(tau x)|| = (1/(1+p))(1+p)(1-tau^p)|x|^p = (1-tau^p)|x|^p \
                     exactly; beta = 1, so K = 1 with equality. The derivative is \
                     genuinely non-Lipschitz at 0."
            .into(),
    }
}

/// `R^3 -> R^5` polynomial system `F(x) = J0 x + (||x||^2/2) a`.
///
/// `J0 = U D V` with Householder reflectors `U`, `V` and `D = diag(2, 1, 1/2)`
/// embedded 5x3, so the singular values are exactly `{2, 1, 1/2}`
/// (condition number 4, `beta = 2`). The Jacobian is `J0 + a x^T`, and since
/// `||a (x - y)^T|| = ||a|| ||x - y||` for rank-one matrices, its exact
/// Lipschitz constant is `||a|| = 0.1`; hence `K = beta ||a|| = 0.2`.
fn multi_nd() -> AnnotatedProblem {
    let j0 = multi_nd_j0();
    let a = DVector::from_vec(vec![0.06, 0.08, 0.0, 0.0, 0.0]);
    let j0_f = j0.clone();
    let a_f = a.clone();
    let j0_j = j0.clone();
    let a_j = a.clone();
    let instance = ProblemInstance::new(
        3,
        5,
        Arc::new(move |x: &DVector<f64>| &j0_f * x + &a_f * (0.5 * x.norm_squared())),
        Arc::new(move |x: &DVector<f64>| &j0_j + &a_j * x.transpose()),
    )
    .expect("valid dims")
    .with_known_zero(DVector::zeros(3))
    .expect("F(0) = 0")
    .with_pinv_norm(2.0);
    AnnotatedProblem {
        name: "multi-nd".into(),
        instance,
        condition_class: ConditionClass::Lipschitz { k: 0.2 },
        provenance: "J0 = U diag(2,1,1/2) V with Householder U, V: singular values \
                     exactly {2, 1, 1/2}, beta = 2. J(x) - J(y) = a (x-y)^T has norm \
                     ||a|| ||x-y|| with ||a|| = 0.1 exactly, so K = beta ||a|| = 0.2."
            .into(),
    }
}

/// `J0 = U D V`: `U = I_5 - (2/5) 1 1^T`, `V = I_3 - (2/3) 1 1^T`,
/// `D = diag(2, 1, 1/2)` embedded 5x3.
fn multi_nd_j0() -> DMatrix<f64> {
    let u = DMatrix::identity(5, 5) - DMatrix::from_element(5, 5, 2.0 / 5.0);
    let v = DMatrix::identity(3, 3) - DMatrix::from_element(3, 3, 2.0 / 3.0);
    let mut d = DMatrix::zeros(5, 3);
    d[(0, 0)] = 2.0;
    d[(1, 1)] = 1.0;
    d[(2, 2)] = 0.5;
    u * d * v
}

/// Same functional family as `holder-p` but with `p = 3/4`, annotated with
/// the kernel `L(u) = K p u^{p-1}`: decreasing and unbounded at 0, which a
/// nondecreasing-kernel theory cannot express.
fn glip_sing() -> AnnotatedProblem {
    let p = 0.75;
    let params =
        GeneralizedLipschitzParams::power_kernel(1.0, p).expect("valid kernel parameters");
    AnnotatedProblem {
        name: "glip-sing".into(),
        instance: holder_family_problem(p),
        condition_class: ConditionClass::GeneralizedLipschitz { params, exponent: p },
        provenance: "||J(x) - J(tau x)|| = (1-tau^p)|x|^p = int_{tau|x|}^{|x|} p u^{p-1} du \
                     exactly with beta = 1, i.e. kernel L(u) = p u^{p-1} (K = 1): \
                     decreasing and singular at the origin."
            .into(),
    }
}

/// Both sides of the majorant condition at `(x, tau)`:
/// `lhs = beta ||J(x) - J(x* + tau (x - x*))||`,
/// `rhs = f'(||x - x*||) - f'(tau ||x - x*||)`.
pub fn majorant_condition_sides(
    problem: &AnnotatedProblem,
    f: &MajorantFunction,
    x: &DVector<f64>,
    tau: f64,
) -> Result<(f64, f64), ProblemError> {
    let xs = problem.instance.x_star().ok_or(ProblemError::NoKnownZero)?;
    let beta = problem.instance.beta().ok_or(ProblemError::NoKnownZero)?;
    let t = (x - xs).norm();
    let x_tau = xs + (x - xs) * tau;
    let jx = problem.instance.jacobian_at(x)?;
    let jt = problem.instance.jacobian_at(&x_tau)?;
    let lhs = beta * operator::spectral_norm(&(jx.matrix() - jt.matrix()));
    let rhs = f.deriv(t) - f.deriv(tau * t);
    Ok((lhs, rhs))
}

/// Result of sampling the majorant condition.
#[derive(Debug, Clone, Serialize)]
pub struct AnnotationReport {
    pub samples: usize,
    pub max_violation: f64,
    pub worst_tau: f64,
    pub worst_radius: f64,
}

/// Samples `(x, tau)` pairs in `B(x*, sample radius) x [0, 1]` and evaluates
/// both sides of the majorant condition under the annotated class. The max
/// violation must stay within `1e-9`.
///
/// The sample radius is `min(kappa, R, 4 nu)` (the theory plays out inside
/// `nu`; unbounded domains are truncated there).
pub fn validate_annotation(
    problem: &AnnotatedProblem,
    samples: usize,
    seed: u64,
) -> Result<AnnotationReport, ProblemError> {
    let f = problem.majorant()?;
    let xs = problem.instance.x_star().ok_or(ProblemError::NoKnownZero)?.clone();
    let nu = radius_nu(&f);
    let radius =
        0.999 * problem.instance.kappa().min(f.domain_radius()).min(4.0 * nu);
    let n = problem.instance.dim_in();
    let mut rng = util::stream_rng(seed, 0xA11);
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst = (DVector::zeros(n), 0.0, 0.0);
    for i in 0..samples {
        use rand::Rng;
        let x = &xs + util::seeded_ball_point(n, radius, &mut rng);
        // always exercise the endpoints, where several annotations are tight
        let tau: f64 = match i % 8 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        };
        let (lhs, rhs) = majorant_condition_sides(problem, &f, &x, tau)?;
        let violation = lhs - rhs;
        if violation > max_violation {
            max_violation = violation;
            worst = (x.clone(), tau, (&x - &xs).norm());
        }
        if violation > 1e-9 {
            return Err(ProblemError::AnnotationInvalid { x, tau, violation });
        }
    }
    Ok(AnnotationReport {
        samples,
        max_violation,
        worst_tau: worst.1,
        worst_radius: worst.2,
    })
}

/// One monomial `coeff * prod_i x_i^{powers[i]}` of a polynomial component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// A polynomial map `R^n -> R^m` given by coefficient tables, the JSON-config
/// route for custom problems. Jacobians come from term-wise differentiation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolynomialSystem {
    pub dim_in: usize,
    pub components: Vec<Vec<PolyTerm>>,
}

impl PolynomialSystem {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.dim_in == 0 || self.components.len() < self.dim_in {
            return Err(ProblemError::Solver(SolverError::BadProblem(format!(
                "polynomial system needs 1 <= n <= m, got n = {}, m = {}",
                self.dim_in,
                self.components.len()
            ))));
        }
        for (i, comp) in self.components.iter().enumerate() {
            for term in comp {
                if term.powers.len() != self.dim_in {
                    return Err(ProblemError::Solver(SolverError::BadProblem(format!(
                        "component {i}: term has {} exponents, expected {}",
                        term.powers.len(),
                        self.dim_in
                    ))));
                }
                if !term.coeff.is_finite() {
                    return Err(ProblemError::Solver(SolverError::BadProblem(format!(
                        "component {i}: non-finite coefficient"
                    ))));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|comp| {
                comp.iter()
                    .map(|term| {
                        term.coeff
                            * term
                                .powers
                                .iter()
                                .enumerate()
                                .map(|(i, &e)| x[i].powi(e as i32))
                                .product::<f64>()
                    })
                    .sum()
            }),
        )
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.components.len();
        let n = self.dim_in;
        let mut jac = DMatrix::zeros(m, n);
        for (row, comp) in self.components.iter().enumerate() {
            for term in comp {
                for col in 0..n {
                    let e = term.powers[col];
                    if e == 0 {
                        continue;
                    }
                    let mut v = term.coeff * e as f64 * x[col].powi(e as i32 - 1);
                    for (i, &ei) in term.powers.iter().enumerate() {
                        if i != col {
                            v *= x[i].powi(ei as i32);
                        }
                    }
                    jac[(row, col)] += v;
                }
            }
        }
        jac
    }

    /// Builds a [`ProblemInstance`] from the tables.
    pub fn instance(
        &self,
        x_star: Option<DVector<f64>>,
        kappa: Option<f64>,
    ) -> Result<ProblemInstance, ProblemError> {
        self.validate()?;
        let sys_f = self.clone();
        let sys_j = self.clone();
        let mut inst = ProblemInstance::new(
            self.dim_in,
            self.components.len(),
            Arc::new(move |x: &DVector<f64>| sys_f.eval(x)),
            Arc::new(move |x: &DVector<f64>| sys_j.jacobian(x)),
        )?;
        if let Some(xs) = x_star {
            inst = inst.with_known_zero(xs)?;
        }
        if let Some(kappa) = kappa {
            inst = inst.with_domain_radius(kappa)?;
        }
        Ok(inst)
    }
}
