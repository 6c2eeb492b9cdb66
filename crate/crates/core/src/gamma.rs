//! The minimax measurement figures Γ_p and Γ_p^ob, their dual optimization
//! problems, and the precision thresholds η^ob, a_max, η^ob_c, η̄, η̄^ob.
//!
//! Γ_p^ob(O) = inf_M sup_ρ0 max_{‖α‖_q ≤ 1} αᵀ(I(ρ0,M)⁻¹)_AA α and
//! Γ_p(O)   = inf_M sup_ρ0 ‖diag((I(ρ0,M)⁻¹)_AA)^{1/2}‖_p², with
//! 1/p + 1/q = 1. Searches over infinite families report bracketing bounds
//! with the direction recorded: ρ0 searches under-estimate the sup,
//! measurement searches over-estimate the inf, grid minima for η^ob
//! over-estimate the inf over S_1/2.

use crate::fisher::{self, FisherError, FisherInfo};
use crate::linalg;
use crate::measurement::{MeasurementError, Povm};
use crate::operators::{
    build_dual_basis, mix_with_maximally_mixed, DensityMatrix, DualBasis, HermitianOp,
    ObservableSet, OperatorError, StateModel,
};
use crate::{Complex64, NormIndex};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GammaError {
    #[error(transparent)]
    Fisher(#[from] FisherError),

    #[error(transparent)]
    Operator(#[from] OperatorError),

    #[error(transparent)]
    Measurement(#[from] MeasurementError),

    #[error("optimization budget exhausted before a full search pass")]
    BudgetExhausted { best: Option<Box<GammaReport>> },
}

/// Which Γ is being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// ‖diag((I⁻¹)_AA)^{1/2}‖_p²: simultaneous estimation of all targets.
    Full,
    /// max_{‖α‖_q≤1} αᵀ(I⁻¹)_AA α: a single combination revealed later.
    Ob,
}

/// Range of reference states searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho0Domain {
    /// All full-rank states (interior floor 1e-6 on the smallest eigenvalue).
    SFullRank,
    /// S_1/2 = {½σ + 𝟙/(2d)}: eigenvalues bounded below by 1/(2d).
    SHalf,
}

/// How an optimum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    ExtremePoint,
    MultistartAscent,
}

/// Which side of the true optimum a reported value sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDirection {
    Exact,
    Lower,
    Upper,
}

/// Result of maximizing αᵀRα over the q-ball ‖α‖_q ≤ 1.
#[derive(Debug, Clone)]
pub struct QuadMax {
    pub value: f64,
    pub alpha: Vec<f64>,
    pub method: Method,
    pub bound: BoundDirection,
}

/// Maximize the convex quadratic αᵀRα over ‖α‖_q ≤ 1.
///
/// Exact for q = 1 (one-hot extreme points), q = 2 (top eigenpair), and
/// q = ∞ with m ≤ 20 (sign-vector enumeration); otherwise multi-start
/// Frank-Wolfe ascent whose value is a certified lower bound.
pub fn quad_max_over_q_ball(r: &DMatrix<f64>, q: NormIndex, seed: u64) -> QuadMax {
    let m = r.nrows();
    if m == 0 {
        return QuadMax {
            value: 0.0,
            alpha: Vec::new(),
            method: Method::Exact,
            bound: BoundDirection::Exact,
        };
    }
    match q {
        NormIndex::Finite(qv) if qv == 1.0 => {
            let (best, _) = (0..m)
                .map(|i| (i, r[(i, i)]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, v)| (i, v))
                .unwrap();
            let mut alpha = vec![0.0; m];
            alpha[best] = 1.0;
            QuadMax {
                value: r[(best, best)],
                alpha,
                method: Method::ExtremePoint,
                bound: BoundDirection::Exact,
            }
        }
        NormIndex::Finite(qv) if qv == 2.0 => {
            let (vals, vecs) = linalg::sym_eigen(r);
            let (best, value) = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &v)| (i, v))
                .unwrap();
            QuadMax {
                value,
                alpha: vecs.column(best).iter().copied().collect(),
                method: Method::Exact,
                bound: BoundDirection::Exact,
            }
        }
        NormIndex::Infinity if m <= 20 => {
            let mut best_val = f64::NEG_INFINITY;
            let mut best_alpha = vec![1.0; m];
            // global sign flip is irrelevant; pin the first coordinate
            let mut alpha = vec![1.0f64; m];
            for code in 0..(1u64 << (m - 1)) {
                for (j, a) in alpha.iter_mut().enumerate().skip(1) {
                    *a = if (code >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 };
                }
                let mut val = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        val += alpha[i] * r[(i, j)] * alpha[j];
                    }
                }
                if val > best_val {
                    best_val = val;
                    best_alpha = alpha.clone();
                }
            }
            QuadMax {
                value: best_val,
                alpha: best_alpha,
                method: Method::ExtremePoint,
                bound: BoundDirection::Exact,
            }
        }
        _ => quad_max_multistart(r, q, seed),
    }
}

/// Multi-start Frank-Wolfe ascent on the q-ball. Full conditional-gradient
/// steps never decrease a convex objective, so each start is monotone.
fn quad_max_multistart(r: &DMatrix<f64>, q: NormIndex, seed: u64) -> QuadMax {
    const STARTS: usize = 32;
    let m = r.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(STARTS);
    for i in 0..m.min(STARTS / 2) {
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        starts.push(e);
    }
    while starts.len() < STARTS {
        let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0f64));
        if q.vector_norm(v.as_slice()) > 1e-9 {
            starts.push(v);
        }
    }
    let runs: Vec<(usize, f64, DVector<f64>)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let mut alpha = normalize_q(start, q);
            let mut val = quad_form(r, &alpha);
            for _ in 0..500 {
                let grad = r * &alpha;
                let next = dual_norm_witness(&grad, q);
                let next_val = quad_form(r, &next);
                if next_val <= val + 1e-15 {
                    break;
                }
                alpha = next;
                val = next_val;
            }
            (idx, val, alpha)
        })
        .collect();
    let best = runs
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    QuadMax {
        value: best.1,
        alpha: best.2.iter().copied().collect(),
        method: Method::MultistartAscent,
        bound: BoundDirection::Lower,
    }
}

fn quad_form(r: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * r * v)[(0, 0)]
}

fn normalize_q(v: &DVector<f64>, q: NormIndex) -> DVector<f64> {
    let n = q.vector_norm(v.as_slice());
    if n <= 0.0 {
        v.clone()
    } else {
        v / n
    }
}

/// argmax_{‖s‖_q ≤ 1} ⟨g, s⟩: the Hölder witness of the dual norm.
fn dual_norm_witness(g: &DVector<f64>, q: NormIndex) -> DVector<f64> {
    match q {
        NormIndex::Infinity => g.map(|x| if x >= 0.0 { 1.0 } else { -1.0 }),
        NormIndex::Finite(qv) if qv == 1.0 => {
            let (best, _) = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            let mut s = DVector::zeros(g.len());
            s[best] = g[best].signum();
            s
        }
        NormIndex::Finite(qv) => {
            // |s_i| ∝ |g_i|^{1/(q-1)}
            let expo = 1.0 / (qv - 1.0);
            let raw = g.map(|x| x.signum() * x.abs().powf(expo));
            normalize_q(&raw, q)
        }
    }
}

/// Result of minimizing (θ,φ)ᵀ I (θ,φ) over ‖θ‖_p ≥ 1 with φ free.
#[derive(Debug, Clone)]
pub struct DualMin {
    pub value: f64,
    pub theta: Vec<f64>,
    /// The minimizing nuisance component, φ = C1·θ in the original basis.
    pub phi: Vec<f64>,
    pub method: Method,
    pub bound: BoundDirection,
}

/// Minimize (θ,φ)ᵀ I(ρ0,M) (θ,φ) over ‖θ‖_p ≥ 1, φ free.
///
/// Minimizing out φ reduces the problem to min_{‖θ‖_p = 1} θᵀSθ with S the
/// Schur complement I_AA − I_AB·I_BB⁺·I_BA. Exact for p = 2 (bottom
/// eigenpair), p = ∞ (per-face box QPs), and p = 1 with m ≤ 12 (per-orthant
/// simplex QPs); otherwise multi-start descent whose value is an upper
/// bound on the minimum.
pub fn dual_min_over_p_sphere(info: &FisherInfo, p: NormIndex, seed: u64) -> DualMin {
    let s = fisher::schur_complement(info);
    let c1 = fisher::block_diag_c1(info);
    let m = s.nrows();
    let (value, theta, method, bound) = match p {
        NormIndex::Finite(pv) if pv == 2.0 => {
            let (vals, vecs) = linalg::sym_eigen(&s);
            let (best, value) = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &v)| (i, v))
                .unwrap();
            let theta: Vec<f64> = vecs.column(best).iter().copied().collect();
            (value, theta, Method::Exact, BoundDirection::Exact)
        }
        NormIndex::Infinity => {
            let mut best_val = f64::INFINITY;
            let mut best_theta = vec![0.0; m];
            for face in 0..m {
                let (val, theta) = min_on_cube_face(&s, face);
                if val < best_val {
                    best_val = val;
                    best_theta = theta;
                }
            }
            (best_val, best_theta, Method::Exact, BoundDirection::Exact)
        }
        NormIndex::Finite(pv) if pv == 1.0 && m <= 12 => {
            let mut best_val = f64::INFINITY;
            let mut best_theta = vec![0.0; m];
            let mut signs = vec![1.0f64; m];
            for code in 0..(1u64 << (m - 1)) {
                for (j, sj) in signs.iter_mut().enumerate().skip(1) {
                    *sj = if (code >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 };
                }
                let (val, theta) = min_on_orthant_simplex(&s, &signs);
                if val < best_val {
                    best_val = val;
                    best_theta = theta;
                }
            }
            (best_val, best_theta, Method::Exact, BoundDirection::Exact)
        }
        _ => {
            let (val, theta) = min_multistart(&s, p, seed);
            (val, theta, Method::MultistartAscent, BoundDirection::Upper)
        }
    };
    let theta_vec = DVector::from_column_slice(&theta);
    let phi = if info.num_nuisance() > 0 {
        (&c1 * &theta_vec).iter().copied().collect()
    } else {
        Vec::new()
    };
    DualMin {
        value,
        theta,
        phi,
        method,
        bound,
    }
}

/// Minimize θᵀSθ over the cube face {θ_face = 1, |θ_j| ≤ 1}: exact
/// coordinate descent on a box-constrained convex quadratic.
fn min_on_cube_face(s: &DMatrix<f64>, face: usize) -> (f64, Vec<f64>) {
    let m = s.nrows();
    let mut theta = DVector::zeros(m);
    theta[face] = 1.0;
    for _ in 0..50_000 {
        let mut delta = 0.0f64;
        for j in 0..m {
            if j == face {
                continue;
            }
            let mut lin = 0.0;
            for k in 0..m {
                if k != j {
                    lin += s[(j, k)] * theta[k];
                }
            }
            let new = if s[(j, j)] > 1e-14 {
                (-lin / s[(j, j)]).clamp(-1.0, 1.0)
            } else if lin.abs() > 1e-14 {
                -lin.signum()
            } else {
                theta[j]
            };
            delta = delta.max((new - theta[j]).abs());
            theta[j] = new;
        }
        if delta < 1e-14 {
            break;
        }
    }
    (quad_form(s, &theta), theta.iter().copied().collect())
}

/// Minimize θᵀSθ over the orthant face {θ = D_signs·u, u in the unit
/// simplex}: primal active-set QP, exact for positive-definite S.
fn min_on_orthant_simplex(s: &DMatrix<f64>, signs: &[f64]) -> (f64, Vec<f64>) {
    let m = s.nrows();
    let h = DMatrix::from_fn(m, m, |i, j| signs[i] * s[(i, j)] * signs[j]);
    // tiny ridge keeps the bordered systems solvable when S is semidefinite
    let ridge = 1e-14 * (h.trace().abs() + 1.0);
    let h = h + DMatrix::identity(m, m) * ridge;
    let mut u = DVector::from_element(m, 1.0 / m as f64);
    let mut free: Vec<bool> = vec![true; m];
    for _ in 0..4 * m + 8 {
        // solve the equality-constrained problem on the free set
        let idx: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
        let k = idx.len();
        let mut bordered = DMatrix::zeros(k + 1, k + 1);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                bordered[(a, b)] = 2.0 * h[(i, j)];
            }
            bordered[(a, k)] = 1.0;
            bordered[(k, a)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 1);
        rhs[k] = 1.0;
        let sol = match bordered.lu().solve(&rhs) {
            Some(sol) => sol,
            None => break,
        };
        let mut candidate = DVector::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            candidate[i] = sol[a];
        }
        let lambda = sol[k];
        if candidate.iter().all(|&x| x >= -1e-12) {
            // primal feasible: check dual feasibility of the clamped coords
            let grad = &h * &candidate * 2.0;
            let violated = (0..m)
                .filter(|&i| !free[i] && grad[i] < lambda - 1e-12)
                .min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
            match violated {
                Some(i) => {
                    free[i] = true;
                    u = candidate;
                }
                None => {
                    u = candidate.map(|x| x.max(0.0));
                    break;
                }
            }
        } else {
            // step toward the candidate until the first coordinate hits zero
            let mut t = 1.0f64;
            let mut blocker = None;
            for i in 0..m {
                if candidate[i] < 0.0 && u[i] > candidate[i] {
                    let ti = u[i] / (u[i] - candidate[i]);
                    if ti < t {
                        t = ti;
                        blocker = Some(i);
                    }
                }
            }
            u = &u + (&candidate - &u) * t;
            if let Some(i) = blocker {
                u[i] = 0.0;
                free[i] = false;
            }
        }
    }
    let theta = DVector::from_fn(m, |i, _| signs[i] * u[i]);
    (quad_form(s, &theta), theta.iter().copied().collect())
}

/// Multi-start projected descent of θᵀSθ on the p-sphere.
fn min_multistart(s: &DMatrix<f64>, p: NormIndex, seed: u64) -> (f64, Vec<f64>) {
    const STARTS: usize = 32;
    let m = s.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let lip = 2.0 * linalg::sym_eigen(s).0.iter().fold(0.0f64, |a, &v| a.max(v.abs())) + 1e-12;
    let mut starts: Vec<DVector<f64>> = (0..m.min(STARTS / 2))
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect();
    while starts.len() < STARTS {
        starts.push(DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0f64)));
    }
    let runs: Vec<(usize, f64, DVector<f64>)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let mut theta = normalize_q(start, p);
            let mut val = quad_form(s, &theta);
            for _ in 0..2000 {
                let grad = s * &theta * 2.0;
                let cand = normalize_q(&(&theta - grad * (1.0 / lip)), p);
                let cand_val = quad_form(s, &cand);
                if cand_val >= val - 1e-16 {
                    break;
                }
                theta = cand;
                val = cand_val;
            }
            (idx, val, theta)
        })
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    (best.1, best.2.iter().copied().collect())
}

/// Γ value of a fixed (reference state, measurement) pair.
pub fn gamma_for_fixed(
    model: &StateModel,
    povm: &Povm,
    p: NormIndex,
    variant: Variant,
) -> Result<f64, GammaError> {
    Ok(gamma_for_fixed_detailed(model, povm, p, variant)?.0)
}

/// Seed for the deterministic general-q ascent inside Γ evaluations.
const GAMMA_EVAL_SEED: u64 = 0xf15e7;

pub fn gamma_for_fixed_detailed(
    model: &StateModel,
    povm: &Povm,
    p: NormIndex,
    variant: Variant,
) -> Result<(f64, Option<Vec<f64>>, Method), GammaError> {
    let info = fisher::fim(model, povm)?;
    let restriction = fisher::schur_restriction(&info);
    // a measurement whose FIM is rank-deficient on the target block leaves
    // some combination unestimable: its worst-case variance is unbounded
    if restriction.support_rank < model.num_targets() {
        return Ok((f64::INFINITY, None, Method::Exact));
    }
    match variant {
        Variant::Full => {
            let diag = restriction.diagonal();
            let value = match p {
                NormIndex::Infinity => diag.iter().fold(0.0f64, |a, &v| a.max(v)),
                NormIndex::Finite(pv) => diag
                    .iter()
                    .map(|s| s.max(0.0).powf(pv / 2.0))
                    .sum::<f64>()
                    .powf(2.0 / pv),
            };
            Ok((value, None, Method::Exact))
        }
        Variant::Ob => {
            let q = p.dual();
            let qm = quad_max_over_q_ball(restriction.matrix(), q, GAMMA_EVAL_SEED);
            Ok((qm.value, Some(qm.alpha), qm.method))
        }
    }
}

/// Descriptor of the measurement a report was computed with.
#[derive(Debug, Clone, Serialize)]
pub struct PovmDescriptor {
    pub label: String,
    pub outcomes: usize,
    pub copies: u32,
    pub hash: String,
}

impl PovmDescriptor {
    fn new(label: &str, povm: &Povm) -> Self {
        Self {
            label: label.to_string(),
            outcomes: povm.len(),
            copies: povm.copies(),
            hash: povm.content_hash(),
        }
    }
}

/// Outcome of a Γ optimization, with enough witness data to re-evaluate the
/// reported value.
#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub value: f64,
    pub p: NormIndex,
    pub variant: Variant,
    pub witness_alpha: Option<Vec<f64>>,
    pub witness_theta: Option<Vec<f64>>,
    pub witness_rho0: DensityMatrix,
    pub witness_povm: PovmDescriptor,
    pub method: Method,
    pub bound: BoundDirection,
    pub rho0_domain: Rho0Domain,
    pub evals_used: u64,
    #[serde(skip)]
    povm: Povm,
}

impl GammaReport {
    /// The full witness measurement (not just its descriptor).
    pub fn povm(&self) -> &Povm {
        &self.povm
    }

    /// Recompute the value from the stored witnesses; must match `value`
    /// within 1e-6 for the report to be sound.
    pub fn reevaluate(&self, obs: &ObservableSet) -> Result<f64, GammaError> {
        let basis = build_dual_basis(obs)?;
        let model = StateModel::new(self.witness_rho0.clone(), basis, obs.clone())?;
        gamma_for_fixed(&model, &self.povm, self.p, self.variant)
    }
}

/// Interior floor on the smallest eigenvalue of searched reference states.
pub const RHO0_EIG_FLOOR: f64 = 1e-6;

fn clamp_into_domain(rho0: DensityMatrix, domain: Rho0Domain) -> DensityMatrix {
    match domain {
        Rho0Domain::SHalf => mix_with_maximally_mixed(&rho0),
        Rho0Domain::SFullRank => {
            let d = rho0.dim();
            let min = rho0.min_eigenvalue();
            if min >= RHO0_EIG_FLOOR {
                rho0
            } else {
                let t = (RHO0_EIG_FLOOR - min) / (1.0 / d as f64 - min);
                let op = rho0
                    .as_op()
                    .scale(1.0 - t)
                    .add(&HermitianOp::identity(d).scale(t / d as f64));
                DensityMatrix::new(op).expect("mixing toward 1/d preserves validity")
            }
        }
    }
}

fn rho0_from_params(d: usize, x: &[f64]) -> DensityMatrix {
    let mut l = DMatrix::<Complex64>::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        l[(i, i)] = Complex64::new(x[k], 0.0);
        k += 1;
    }
    for i in 0..d {
        for j in 0..i {
            l[(i, j)] = Complex64::new(x[k], x[k + 1]);
            k += 2;
        }
    }
    let w = &l * l.adjoint();
    let tr: f64 = (0..d).map(|i| w[(i, i)].re).sum();
    if tr <= 1e-12 {
        return DensityMatrix::maximally_mixed(d);
    }
    let op = HermitianOp::symmetrized(w / Complex64::new(tr, 0.0));
    DensityMatrix::new(op).unwrap_or_else(|_| DensityMatrix::maximally_mixed(d))
}

/// Best reference state found for a fixed measurement: a certified lower
/// bound on sup_ρ0 Γ(ρ0, M), by multi-start Nelder-Mead over a Cholesky
/// parameterization.
pub fn sup_over_rho0(
    obs: &ObservableSet,
    povm: &Povm,
    povm_label: &str,
    p: NormIndex,
    variant: Variant,
    domain: Rho0Domain,
    budget: u64,
    seed: u64,
) -> Result<GammaReport, GammaError> {
    const RESTARTS: usize = 8;
    let d = obs.dim();
    let nparams = d * d;
    if budget < (nparams as u64 + 2) * RESTARTS as u64 {
        return Err(GammaError::BudgetExhausted { best: None });
    }
    let basis = build_dual_basis(obs)?;
    let evaluate = |x: &[f64]| -> f64 {
        let rho0 = clamp_into_domain(rho0_from_params(d, x), domain);
        let model = match StateModel::new(rho0, basis.clone(), obs.clone()) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        match gamma_for_fixed(&model, povm, p, variant) {
            Ok(v) => v,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // start 0 is the maximally mixed state; the rest are seeded draws
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(RESTARTS);
    let mut mixed = vec![0.0; nparams];
    for i in 0..d {
        mixed[i] = 1.0;
    }
    starts.push(mixed);
    for _ in 1..RESTARTS {
        starts.push((0..nparams).map(|_| rng.random_range(-1.0..1.0f64)).collect());
    }
    let per_start = budget / RESTARTS as u64;
    let runs: Vec<(usize, f64, Vec<f64>, u64)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, x0)| {
            let (x, neg_val, evals) =
                nelder_mead(|x| -evaluate(x), x0.clone(), 0.35, per_start);
            (idx, -neg_val, x, evals)
        })
        .collect();
    let best = runs
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    let rho0 = clamp_into_domain(rho0_from_params(d, &best.2), domain);
    let model = StateModel::new(rho0.clone(), basis, obs.clone())?;
    let (value, alpha, _) = gamma_for_fixed_detailed(&model, povm, p, variant)?;
    Ok(GammaReport {
        value,
        p,
        variant,
        witness_alpha: alpha,
        witness_theta: None,
        witness_rho0: rho0,
        witness_povm: PovmDescriptor::new(povm_label, povm),
        method: Method::MultistartAscent,
        bound: BoundDirection::Lower,
        rho0_domain: domain,
        evals_used: best.3 * RESTARTS as u64,
        povm: povm.clone(),
    })
}

/// Measurement families searched by [`inf_over_m`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementFamily {
    /// Standard POVMs plus the finite Haar proxy.
    Catalog,
    /// Naimark-parameterized rank-1 POVMs with a fixed outcome count.
    Parameterized { outcomes: usize },
}

/// The named catalog of standard measurements available at dimension d.
pub fn measurement_catalog(d: usize, seed: u64) -> Vec<(String, Povm)> {
    let mut out: Vec<(String, Povm)> = vec![("computational".into(), Povm::computational(d))];
    if d.is_power_of_two() {
        let n = d.trailing_zeros();
        out.push((format!("pauli_basis_uniform({n})"), Povm::pauli_basis_uniform(n)));
    }
    if d == 2 {
        out.push(("sic_d2".into(), Povm::sic_qubit()));
    }
    if let Ok(mub) = Povm::mub_prime(d) {
        out.push((format!("mub_prime_{d}"), mub));
    }
    let k = 50 * d * d;
    if let Ok(haar) = Povm::finite_haar_proxy(d, k, seed) {
        out.push((format!("haar_proxy(K={k})"), haar));
    }
    out
}

/// Best measurement found for the observables: an upper bound on
/// inf_M sup_ρ0 Γ (the inner sup itself being a lower-bound search).
#[allow(clippy::too_many_arguments)]
pub fn inf_over_m(
    obs: &ObservableSet,
    p: NormIndex,
    variant: Variant,
    family: MeasurementFamily,
    domain: Rho0Domain,
    budget: u64,
    seed: u64,
) -> Result<GammaReport, GammaError> {
    let d = obs.dim();
    let catalog = measurement_catalog(d, seed ^ 0xca7a);
    let slots = catalog.len() as u64 + u64::from(matches!(family, MeasurementFamily::Parameterized { .. }));
    let per_entry = budget / slots.max(1);
    let mut best: Option<GammaReport> = None;
    for (label, povm) in &catalog {
        let report = sup_over_rho0(obs, povm, label, p, variant, domain, per_entry, seed)?;
        if best.as_ref().map(|b| report.value < b.value).unwrap_or(true) {
            best = Some(report);
        }
    }
    let mut best = best.ok_or(GammaError::BudgetExhausted { best: None })?;
    best.bound = BoundDirection::Upper;

    if let MeasurementFamily::Parameterized { outcomes } = family {
        let searched = parameterized_measurement_search(
            obs,
            &best,
            outcomes.min(d * d),
            p,
            variant,
            domain,
            per_entry,
            seed,
        )?;
        if searched.value < best.value {
            best = searched;
            best.bound = BoundDirection::Upper;
        }
    }
    Ok(best)
}

/// Nelder-Mead over a d×K complex matrix B; the POVM is built from the
/// columns of A = (B·B†)^{-1/2}·B, so completeness is exact by construction.
#[allow(clippy::too_many_arguments)]
fn parameterized_measurement_search(
    obs: &ObservableSet,
    seed_report: &GammaReport,
    k: usize,
    p: NormIndex,
    variant: Variant,
    domain: Rho0Domain,
    budget: u64,
    seed: u64,
) -> Result<GammaReport, GammaError> {
    let d = obs.dim();
    let nparams = 2 * d * k;
    let inner_budget = 600u64;
    let outer_budget = (budget / inner_budget).max(nparams as u64 + 2);

    let povm_from = |x: &[f64]| -> Option<Povm> {
        let mut b = DMatrix::<Complex64>::zeros(d, k);
        for col in 0..k {
            for row in 0..d {
                let base = 2 * (col * d + row);
                b[(row, col)] = Complex64::new(x[base], x[base + 1]);
            }
        }
        let frame = &b * b.adjoint();
        let corr = linalg::inv_sqrt_psd(&frame, 1e-9)?;
        let a = corr * b;
        let elements: Vec<HermitianOp> = (0..k)
            .map(|c| {
                let col = a.column(c).into_owned();
                HermitianOp::projector(&col)
            })
            .collect();
        let labels = (0..k).map(|c| format!("p{c}")).collect();
        Povm::new(d, 1, elements, labels).ok()
    };

    // seed the simplex from the catalog winner when its elements are rank 1
    let mut x0 = vec![0.0; nparams];
    let mut filled = false;
    if seed_report.povm().len() <= k {
        filled = true;
        for (c, el) in seed_report.povm().elements().iter().enumerate() {
            let (vals, vecs) = linalg::herm_eigen(el.matrix());
            let (top, lam) = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &v)| (i, v))
                .unwrap();
            let residual: f64 = vals.iter().enumerate().map(|(i, &v)| if i == top { 0.0 } else { v.abs() }).sum();
            if residual > 1e-9 || lam < 0.0 {
                filled = false;
                break;
            }
            let w = lam.max(0.0).sqrt();
            for row in 0..d {
                let z = vecs[(row, top)] * Complex64::new(w, 0.0);
                let base = 2 * (c * d + row);
                x0[base] = z.re;
                x0[base + 1] = z.im;
            }
        }
    }
    if !filled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0);
        for v in x0.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }

    let objective = |x: &[f64]| -> f64 {
        let Some(povm) = povm_from(x) else {
            return f64::INFINITY;
        };
        match sup_over_rho0(obs, &povm, "parameterized", p, variant, domain, inner_budget, seed) {
            Ok(r) => r.value,
            Err(_) => f64::INFINITY,
        }
    };
    let (x, _, _) = nelder_mead(objective, x0, 0.2, outer_budget);
    let povm = povm_from(&x).ok_or(GammaError::BudgetExhausted { best: None })?;
    let mut report = sup_over_rho0(
        obs,
        &povm,
        "parameterized",
        p,
        variant,
        domain,
        inner_budget * 4,
        seed,
    )?;
    report.bound = BoundDirection::Upper;
    Ok(report)
}

/// Deterministic Nelder-Mead minimization with an evaluation budget.
/// Returns (best point, best value, evaluations used).
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: Vec<f64>,
    scale: f64,
    max_evals: u64,
) -> (Vec<f64>, f64, u64) {
    let n = x0.len();
    let mut evals: u64 = 0;
    let eval = |x: &[f64], evals: &mut u64| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += scale * if x[i].abs() > 1e-12 { x[i].abs() } else { 1.0 };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
        if evals >= max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex.remove(0);
            return (best.0, best.1, evals);
        }
    }
    while evals + 2 < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-12 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - worst.0[j]))
            .collect();
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - worst.0[j]))
                .collect();
            let fe = eval(&expand, &mut evals);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (worst.0[j] - centroid[j]))
                .collect();
            let fc = eval(&contract, &mut evals);
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..n)
                        .map(|j| best[j] + 0.5 * (entry.0[j] - best[j]))
                        .collect();
                    let v = eval(&x, &mut evals);
                    *entry = (x, v);
                    if evals >= max_evals {
                        break;
                    }
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best = simplex.remove(0);
    (best.0, best.1, evals)
}

/// Seeded sample of S_1/2: mixtures ½σ + 𝟙/(2d) with σ ranging over 32
/// Haar-random pure states, 32 random mixed states, and 𝟙/d.
pub fn s_half_grid(d: usize, seed: u64) -> Vec<DensityMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = Vec::with_capacity(65);
    for _ in 0..32 {
        grid.push(mix_with_maximally_mixed(&DensityMatrix::random_pure(d, &mut rng)));
    }
    for _ in 0..32 {
        grid.push(mix_with_maximally_mixed(&DensityMatrix::random_full_rank(
            d, &mut rng,
        )));
    }
    grid.push(DensityMatrix::maximally_mixed(d));
    grid
}

/// Q'(ρ0) = Q + T·C1 with C1 = −I_BB⁺·I_BA computed at (ρ0, M*): the basis
/// that block-diagonalizes the FIM.
pub fn block_diagonal_q(
    basis: &DualBasis,
    obs: &ObservableSet,
    rho0: &DensityMatrix,
    m_star: &Povm,
) -> Result<Vec<HermitianOp>, GammaError> {
    let model = StateModel::new(rho0.clone(), basis.clone(), obs.clone())?;
    let info = fisher::fim(&model, m_star)?;
    let c1 = fisher::block_diag_c1(&info);
    let m = basis.num_q();
    let nb = basis.num_t();
    Ok((0..m)
        .map(|a| {
            let mut op = basis.q_ops()[a].clone();
            for b in 0..nb {
                op = op.add_scaled(c1[(b, a)], &basis.t_ops()[b]);
            }
            op
        })
        .collect())
}

/// η^ob estimate: min over the grid of 1/(6‖(‖Q'_a(ρ0)‖_∞)_a‖_q). A grid
/// minimum over-estimates the true infimum over S_1/2 (upper bound).
pub fn threshold_eta_ob(
    obs: &ObservableSet,
    basis: &DualBasis,
    grid: &[DensityMatrix],
    m_star: &Povm,
    q: NormIndex,
) -> Result<f64, GammaError> {
    let mut best = f64::INFINITY;
    for rho0 in grid {
        let qops = block_diagonal_q(basis, obs, rho0, m_star)?;
        let norms: Vec<f64> = qops.iter().map(|op| op.op_norm()).collect();
        let eta = 1.0 / (6.0 * q.vector_norm(&norms));
        best = best.min(eta);
    }
    Ok(best)
}

/// a_max estimate: max over the grid of max_{‖θ‖_p=1} θᵀG^{(ρ0)}θ with
/// G_ij = tr(Q'_i ρ0⁻¹ Q'_j)/d². A grid maximum under-estimates the true
/// maximum over S_1/2 (lower bound).
pub fn threshold_a_max(
    obs: &ObservableSet,
    basis: &DualBasis,
    grid: &[DensityMatrix],
    m_star: &Povm,
    p: NormIndex,
    seed: u64,
) -> Result<f64, GammaError> {
    let d = obs.dim();
    let mut best = 0.0f64;
    for rho0 in grid {
        let qops = block_diagonal_q(basis, obs, rho0, m_star)?;
        let (vals, vecs) = linalg::herm_eigen(rho0.matrix());
        let mut inv = DMatrix::<Complex64>::zeros(d, d);
        for i in 0..d {
            let w = 1.0 / vals[i];
            let col = vecs.column(i);
            for r in 0..d {
                for c in 0..d {
                    inv[(r, c)] += col[r] * col[c].conj() * Complex64::new(w, 0.0);
                }
            }
        }
        let m = qops.len();
        let g = DMatrix::from_fn(m, m, |i, j| {
            linalg::trace_product_re(&(qops[i].matrix() * &inv), qops[j].matrix())
                / (d * d) as f64
        });
        let g = (&g + g.transpose()) * 0.5;
        // max over the p-sphere of a convex quadratic = max over the p-ball
        let a_rho0 = quad_max_over_q_ball(&g, p, seed).value;
        best = best.max(a_rho0);
    }
    Ok(best)
}

/// η^ob_c = min{1/(3c·a_max·√Γ^ob), 1/(12c·√a_max)}.
pub fn threshold_eta_ob_c(c: u32, a_max: f64, gamma_ob: f64) -> f64 {
    let c = c as f64;
    (1.0 / (3.0 * c * a_max * gamma_ob.sqrt())).min(1.0 / (12.0 * c * a_max.sqrt()))
}

/// η̄ = √(Γ_p·ln(m)/d³): the two-step algorithm saturates the lower bound
/// below this precision.
pub fn threshold_eta_bar(gamma_full: f64, d: usize, m: usize) -> f64 {
    (gamma_full * (m as f64).ln() / (d as f64).powi(3)).sqrt()
}

/// η̄^ob = √(Γ^ob_p/d³).
pub fn threshold_eta_bar_ob(gamma_ob: f64, d: usize) -> f64 {
    (gamma_ob / (d as f64).powi(3)).sqrt()
}

/// All thresholds of an observable set at one (p, c), with the measurement
/// witness and bound directions recorded.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub p: NormIndex,
    pub c: u32,
    pub grid_size: usize,
    pub eta_ob: f64,
    pub eta_ob_bound: BoundDirection,
    pub a_max: f64,
    pub a_max_bound: BoundDirection,
    pub eta_ob_c: f64,
    pub eta_bar: f64,
    pub eta_bar_ob: f64,
    pub gamma_ob: f64,
    pub gamma_full: f64,
    pub m_star: PovmDescriptor,
}

/// Compute the full threshold table for an observable set.
pub fn thresholds(
    obs: &ObservableSet,
    p: NormIndex,
    c: u32,
    budget: u64,
    seed: u64,
) -> Result<ThresholdReport, GammaError> {
    let d = obs.dim();
    let basis = build_dual_basis(obs)?;
    let ob_report = inf_over_m(
        obs,
        p,
        Variant::Ob,
        MeasurementFamily::Catalog,
        Rho0Domain::SHalf,
        budget,
        seed,
    )?;
    let full_report = inf_over_m(
        obs,
        p,
        Variant::Full,
        MeasurementFamily::Catalog,
        Rho0Domain::SHalf,
        budget,
        seed,
    )?;
    let grid = s_half_grid(d, seed ^ 0x9c1d);
    let q = p.dual();
    let eta_ob = threshold_eta_ob(obs, &basis, &grid, ob_report.povm(), q)?;
    let a_max = threshold_a_max(obs, &basis, &grid, ob_report.povm(), p, seed)?;
    Ok(ThresholdReport {
        p,
        c,
        grid_size: grid.len(),
        eta_ob,
        eta_ob_bound: BoundDirection::Upper,
        a_max,
        a_max_bound: BoundDirection::Lower,
        eta_ob_c: threshold_eta_ob_c(c, a_max, ob_report.value),
        eta_bar: threshold_eta_bar(full_report.value, d, obs.len()),
        eta_bar_ob: threshold_eta_bar_ob(ob_report.value, d),
        gamma_ob: ob_report.value,
        gamma_full: full_report.value,
        m_star: ob_report.witness_povm.clone(),
    })
}
