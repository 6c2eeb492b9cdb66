//! Complex Hermitian operator algebra, dual-basis construction, and the
//! linear state parameterization
//! `rho_{θ,φ} = rho0 + (1/d) Σ_a θ_a Q_a + (1/d) Σ_b φ_b T_b`.
//!
//! The dual basis (Q, T) of an observable set {O_i} satisfies
//! `tr(O_i Q_a) = d·δ_ia` and `tr(O_i T_b) = 0`. We fix two canonical
//! choices the constraints leave free: Q lies in span(O), and T is scaled
//! so that `tr(T_b T_b') = d·δ_bb'` (Pauli-style normalization). Any other
//! admissible basis is reachable through [`DualBasis::transform`].

use crate::linalg::{self, trace_product_re};
use crate::Complex64;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entrywise Hermiticity tolerance.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Eigenvalue floor used in all PSD checks.
pub const PSD_TOL: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-10;
/// Tolerance on the dual-pairing constraints.
pub const DUAL_TOL: f64 = 1e-9;
/// Minimum eigenvalue for a state to count as full rank.
pub const FULL_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("trace must be 1 (got {0})")]
    InvalidTrace(f64),

    #[error("operator is not traceless (trace {0:.3e})")]
    NotTraceless(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too many observables: {m} > d^2-1 = {max}")]
    TooManyObservables { m: usize, max: usize },

    #[error("observable Gram matrix is numerically singular (min/max eigenvalue ratio {0:.3e})")]
    GramSingular(f64),

    #[error("reference state is not full rank (min eigenvalue {0:.3e})")]
    NotFullRank(f64),

    #[error("C2 block of the basis transform is numerically singular")]
    SingularC2,

    #[error("dual basis inconsistent with observables (pairing residual {0:.3e})")]
    InconsistentBasis(f64),

    #[error("could not complete the traceless basis orthogonal to span(O)")]
    ProjectionFailed,
}

/// A d×d complex Hermitian matrix: the atom of states, observables, dual
/// operators, and POVM elements.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOp {
    dim: usize,
    mat: DMatrix<Complex64>,
}

impl HermitianOp {
    /// Wrap a matrix, checking Hermiticity entrywise to 1e-12.
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self, OperatorError> {
        let (r, c) = mat.shape();
        if r != c {
            return Err(OperatorError::NotSquare(r, c));
        }
        let mut dev = 0.0f64;
        for i in 0..r {
            for j in i..r {
                let diff = mat[(i, j)] - mat[(j, i)].conj();
                dev = dev.max(diff.norm());
            }
        }
        if dev > HERMITICITY_TOL {
            return Err(OperatorError::NotHermitian(dev));
        }
        Ok(Self { dim: r, mat })
    }

    /// Wrap a matrix known to be Hermitian by construction.
    pub(crate) fn new_unchecked(mat: DMatrix<Complex64>) -> Self {
        let dim = mat.nrows();
        Self { dim, mat }
    }

    /// Symmetrize (A + A†)/2 and wrap; for products that are Hermitian up to
    /// round-off.
    pub fn symmetrized(mat: DMatrix<Complex64>) -> Self {
        let sym = (&mat + mat.adjoint()) * Complex64::new(0.5, 0.0);
        Self::new_unchecked(sym)
    }

    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self, OperatorError> {
        let mat = DMatrix::from_row_slice(dim, dim, entries).map(|x| Complex64::new(x, 0.0));
        Self::new(mat)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new_unchecked(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new_unchecked(DMatrix::identity(dim, dim))
    }

    /// Rank-1 projector |v⟩⟨v| (v need not be normalized).
    pub fn projector(v: &DVector<Complex64>) -> Self {
        let mat = v * v.adjoint();
        Self::new_unchecked(mat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    /// Trace (real for Hermitian operators).
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.mat[(i, i)].re).sum()
    }

    /// Hilbert–Schmidt pairing tr(A·B), real for Hermitian A, B.
    pub fn hs_product(&self, other: &Self) -> f64 {
        trace_product_re(&self.mat, &other.mat)
    }

    /// Expectation tr(O·ρ).
    pub fn expectation(&self, rho: &DensityMatrix) -> f64 {
        self.hs_product(rho.as_op())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eig_herm(&self.mat)
    }

    /// Operator norm (largest absolute eigenvalue).
    pub fn op_norm(&self) -> f64 {
        linalg::op_norm_herm(&self.mat)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new_unchecked(&self.mat * Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new_unchecked(&self.mat + &other.mat)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new_unchecked(&self.mat - &other.mat)
    }

    /// A + s·B.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Self::new_unchecked(&self.mat + &other.mat * Complex64::new(s, 0.0))
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self::new_unchecked(self.mat.kronecker(&other.mat))
    }

    /// Stable content fingerprint, used in report provenance.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(16 * self.dim * self.dim + 8);
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for i in 0..self.dim {
            for j in 0..self.dim {
                bytes.extend_from_slice(&self.mat[(i, j)].re.to_le_bytes());
                bytes.extend_from_slice(&self.mat[(i, j)].im.to_le_bytes());
            }
        }
        linalg::sha256_hex(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct HermitianOpRepr {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for HermitianOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let d = self.dim;
        let re = (0..d)
            .map(|i| (0..d).map(|j| self.mat[(i, j)].re).collect())
            .collect();
        let im = (0..d)
            .map(|i| (0..d).map(|j| self.mat[(i, j)].im).collect())
            .collect();
        HermitianOpRepr { dim: d, re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = HermitianOpRepr::deserialize(d)?;
        let n = repr.dim;
        if repr.re.len() != n || repr.im.len() != n {
            return Err(serde::de::Error::custom("row count does not match dim"));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(
                *repr.re[i].get(j).unwrap_or(&f64::NAN),
                *repr.im[i].get(j).unwrap_or(&f64::NAN),
            )
        });
        HermitianOp::new(mat).map_err(serde::de::Error::custom)
    }
}

/// A PSD, unit-trace Hermitian operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityMatrix {
    op: HermitianOp,
}

impl DensityMatrix {
    pub fn new(op: HermitianOp) -> Result<Self, OperatorError> {
        let tr = op.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(OperatorError::InvalidTrace(tr));
        }
        let min = op.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(OperatorError::NotPsd(min));
        }
        Ok(Self { op })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: HermitianOp::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn from_pure(v: &DVector<Complex64>) -> Self {
        let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        Self {
            op: HermitianOp::projector(v).scale(1.0 / norm_sq),
        }
    }

    /// ρ = G·G†/tr(G·G†) for a complex Ginibre G, mixed slightly toward the
    /// maximally mixed state so the result is full rank.
    pub fn random_full_rank<R: Rng>(dim: usize, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        });
        let w = &g * g.adjoint();
        let tr: f64 = (0..dim).map(|i| w[(i, i)].re).sum();
        let rho = HermitianOp::symmetrized(w / Complex64::new(tr, 0.0));
        let mixed = rho
            .scale(1.0 - 1e-4)
            .add(&HermitianOp::identity(dim).scale(1e-4 / dim as f64));
        Self { op: mixed }
    }

    pub fn random_pure<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let v = linalg::gaussian_unit_vector(dim, rng);
        Self::from_pure(&v)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn as_op(&self) -> &HermitianOp {
        &self.op
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        self.op.matrix()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.op.min_eigenvalue()
    }

    pub fn is_full_rank(&self) -> bool {
        self.min_eigenvalue() > FULL_RANK_TOL
    }

    /// ρ⊗ρ⊗…⊗ρ (c factors; the empty product is the trivial 1×1 state).
    pub fn tensor_power(&self, c: u32) -> Self {
        if c == 0 {
            return Self {
                op: HermitianOp::identity(1),
            };
        }
        let mut out = self.op.clone();
        for _ in 1..c {
            out = out.kron(&self.op);
        }
        Self { op: out }
    }

    pub fn content_hash(&self) -> String {
        self.op.content_hash()
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            op: HermitianOp,
        }
        let repr = Repr::deserialize(d)?;
        DensityMatrix::new(repr.op).map_err(serde::de::Error::custom)
    }
}

/// True iff `op` is a valid state: unit trace and PSD to tolerance.
pub fn is_valid_state(op: &HermitianOp) -> bool {
    (op.trace() - 1.0).abs() <= TRACE_TOL && op.min_eigenvalue() >= -PSD_TOL
}

/// True iff ρ lies in the symmetric neighborhood of ρ0: both ρ and the
/// reflection 2ρ0 − ρ (= ρ_{−θ,−φ}) are PSD to tolerance.
pub fn in_neighborhood(rho: &DensityMatrix, rho0: &DensityMatrix) -> bool {
    if rho.dim() != rho0.dim() {
        return false;
    }
    let reflect = rho0.as_op().scale(2.0).sub(rho.as_op());
    rho.min_eigenvalue() >= -PSD_TOL && reflect.min_eigenvalue() >= -PSD_TOL
}

/// The channel ρ ↦ ½ρ + 𝟙/(2d); its output always has eigenvalues ≥ 1/(2d).
pub fn mix_with_maximally_mixed(rho: &DensityMatrix) -> DensityMatrix {
    let d = rho.dim();
    let op = rho
        .as_op()
        .scale(0.5)
        .add(&HermitianOp::identity(d).scale(0.5 / d as f64));
    DensityMatrix { op }
}

/// An ordered set of m ≤ d²−1 linearly independent traceless Hermitian
/// observables: the estimation targets.
#[derive(Debug, Clone, Serialize)]
pub struct ObservableSet {
    dim: usize,
    obs: Vec<HermitianOp>,
}

impl ObservableSet {
    pub fn new(obs: Vec<HermitianOp>) -> Result<Self, OperatorError> {
        let dim = obs.first().map(|o| o.dim()).unwrap_or(0);
        if dim == 0 {
            return Err(OperatorError::DimensionMismatch { expected: 1, got: 0 });
        }
        let max = dim * dim - 1;
        if obs.len() > max {
            return Err(OperatorError::TooManyObservables { m: obs.len(), max });
        }
        for o in &obs {
            if o.dim() != dim {
                return Err(OperatorError::DimensionMismatch {
                    expected: dim,
                    got: o.dim(),
                });
            }
            let tr = o.trace();
            if tr.abs() > TRACE_TOL {
                return Err(OperatorError::NotTraceless(tr));
            }
        }
        let set = Self { dim, obs };
        let gram = set.gram();
        let (vals, _) = linalg::sym_eigen(&gram);
        let max_eig = vals.iter().fold(0.0f64, |a, &v| a.max(v));
        let min_eig = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if min_eig <= 1e-10 * max_eig {
            return Err(OperatorError::GramSingular(min_eig / max_eig));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn ops(&self) -> &[HermitianOp] {
        &self.obs
    }

    /// Gram matrix G_ij = tr(O_i O_j).
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.obs.len();
        DMatrix::from_fn(m, m, |i, j| self.obs[i].hs_product(&self.obs[j]))
    }

    /// m random traceless observables: seeded Gaussian combinations of the
    /// Gell-Mann basis. Retries until the Gram matrix is well conditioned.
    pub fn random<R: Rng>(dim: usize, m: usize, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let gm = gell_mann_basis(dim);
        loop {
            let obs: Vec<HermitianOp> = (0..m)
                .map(|_| {
                    let mut op = HermitianOp::zeros(dim);
                    for g in &gm {
                        let w: f64 = StandardNormal.sample(rng);
                        op = op.add_scaled(w, g);
                    }
                    op
                })
                .collect();
            if let Ok(set) = Self::new(obs) {
                return set;
            }
        }
    }

    /// All 4^n − 1 traceless n-qubit Pauli strings, ordered by base-4 index
    /// with digits (I, X, Y, Z).
    pub fn complete_paulis(n_qubits: u32) -> Self {
        let singles = pauli_matrices();
        let count = 4usize.pow(n_qubits);
        let mut obs = Vec::with_capacity(count - 1);
        for code in 1..count {
            let mut op: Option<HermitianOp> = None;
            let mut rem = code;
            for _ in 0..n_qubits {
                let digit = rem % 4;
                rem /= 4;
                let factor = &singles[digit];
                op = Some(match op {
                    None => factor.clone(),
                    Some(acc) => factor.kron(&acc),
                });
            }
            obs.push(op.unwrap());
        }
        Self {
            dim: 2usize.pow(n_qubits),
            obs,
        }
    }

    pub fn content_hash(&self) -> String {
        let joined: String = self.obs.iter().map(|o| o.content_hash()).collect();
        linalg::sha256_hex(joined.as_bytes())
    }
}

/// Single-qubit (𝟙, X, Y, Z).
pub fn pauli_matrices() -> [HermitianOp; 4] {
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    [
        HermitianOp::identity(2),
        HermitianOp::new_unchecked(DMatrix::from_row_slice(2, 2, &[zero, one, one, zero])),
        HermitianOp::new_unchecked(DMatrix::from_row_slice(2, 2, &[zero, -i, i, zero])),
        HermitianOp::new_unchecked(DMatrix::from_row_slice(2, 2, &[one, zero, zero, -one])),
    ]
}

/// Generalized Gell-Mann basis of traceless Hermitian d×d operators with
/// tr(G_i G_j) = 2·δ_ij (d²−1 elements).
pub fn gell_mann_basis(d: usize) -> Vec<HermitianOp> {
    let mut out = Vec::with_capacity(d * d - 1);
    let one = Complex64::new(1.0, 0.0);
    let i_unit = Complex64::new(0.0, 1.0);
    for j in 0..d {
        for k in (j + 1)..d {
            let mut sym = DMatrix::<Complex64>::zeros(d, d);
            sym[(j, k)] = one;
            sym[(k, j)] = one;
            out.push(HermitianOp::new_unchecked(sym));
            let mut asym = DMatrix::<Complex64>::zeros(d, d);
            asym[(j, k)] = -i_unit;
            asym[(k, j)] = i_unit;
            out.push(HermitianOp::new_unchecked(asym));
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l as f64 * (l as f64 + 1.0))).sqrt();
        let mut diag = DMatrix::<Complex64>::zeros(d, d);
        for j in 0..l {
            diag[(j, j)] = Complex64::new(norm, 0.0);
        }
        diag[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
        out.push(HermitianOp::new_unchecked(diag));
    }
    out
}

/// The dual operator basis (Q, T) of an observable set.
#[derive(Debug, Clone, Serialize)]
pub struct DualBasis {
    q_ops: Vec<HermitianOp>,
    t_ops: Vec<HermitianOp>,
}

impl DualBasis {
    pub fn q_ops(&self) -> &[HermitianOp] {
        &self.q_ops
    }

    pub fn t_ops(&self) -> &[HermitianOp] {
        &self.t_ops
    }

    pub fn dim(&self) -> usize {
        self.q_ops[0].dim()
    }

    pub fn num_q(&self) -> usize {
        self.q_ops.len()
    }

    pub fn num_t(&self) -> usize {
        self.t_ops.len()
    }

    /// All dual operators, Q block first: the parameter directions R_c.
    pub fn all_ops(&self) -> impl Iterator<Item = &HermitianOp> {
        self.q_ops.iter().chain(self.t_ops.iter())
    }

    /// Max deviations from the dual-pairing constraints:
    /// (max |tr(O_i Q_a) − d·δ_ia|, max |tr(O_i T_b)|).
    pub fn pairing_residuals(&self, obs: &ObservableSet) -> (f64, f64) {
        let d = obs.dim() as f64;
        let mut dev_q = 0.0f64;
        for (i, o) in obs.ops().iter().enumerate() {
            for (a, q) in self.q_ops.iter().enumerate() {
                let want = if i == a { d } else { 0.0 };
                dev_q = dev_q.max((o.hs_product(q) - want).abs());
            }
        }
        let mut dev_t = 0.0f64;
        for o in obs.ops() {
            for t in &self.t_ops {
                dev_t = dev_t.max(o.hs_product(t).abs());
            }
        }
        (dev_q, dev_t)
    }

    /// Gram matrix of the T block, tr(T_b T_b').
    pub fn t_gram(&self) -> DMatrix<f64> {
        let nb = self.t_ops.len();
        DMatrix::from_fn(nb, nb, |i, j| self.t_ops[i].hs_product(&self.t_ops[j]))
    }

    /// The admissible re-basing (Q', T') = (Q + T·C1, T·C2) with C2
    /// invertible. Output still satisfies the dual-pairing constraints; its
    /// T normalization is not re-canonicalized.
    pub fn transform(
        &self,
        c1: &DMatrix<f64>,
        c2: &DMatrix<f64>,
    ) -> Result<DualBasis, OperatorError> {
        let (m, nb) = (self.q_ops.len(), self.t_ops.len());
        if c1.nrows() != nb || c1.ncols() != m {
            return Err(OperatorError::DimensionMismatch {
                expected: nb * m,
                got: c1.nrows() * c1.ncols(),
            });
        }
        if c2.nrows() != nb || c2.ncols() != nb {
            return Err(OperatorError::DimensionMismatch {
                expected: nb * nb,
                got: c2.nrows() * c2.ncols(),
            });
        }
        if nb > 0 {
            let svd = c2.clone().svd(false, false);
            let smax = svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v));
            let smin = svd
                .singular_values
                .iter()
                .fold(f64::INFINITY, |a, &v| a.min(v));
            if smin <= 1e-12 * smax {
                return Err(OperatorError::SingularC2);
            }
        }
        let q_ops = (0..m)
            .map(|a| {
                let mut op = self.q_ops[a].clone();
                for b in 0..nb {
                    op = op.add_scaled(c1[(b, a)], &self.t_ops[b]);
                }
                op
            })
            .collect();
        let t_ops = (0..nb)
            .map(|b| {
                let mut op = HermitianOp::zeros(self.dim());
                for b2 in 0..nb {
                    op = op.add_scaled(c2[(b2, b)], &self.t_ops[b2]);
                }
                op
            })
            .collect();
        Ok(DualBasis { q_ops, t_ops })
    }
}

/// Build the canonical dual basis of an observable set.
///
/// T: project an HS-orthonormal traceless basis onto span(O)^⊥,
/// orthonormalize, and scale so tr(T_b T_b') = d·δ. Q: solve the Gram
/// system so that Q_a = d·Σ_j (G⁻¹)_aj O_j lies in span(O).
pub fn build_dual_basis(obs: &ObservableSet) -> Result<DualBasis, OperatorError> {
    let d = obs.dim();
    let m = obs.len();
    let gram = obs.gram();
    let (vals, vecs) = linalg::sym_eigen(&gram);
    let max_eig = vals.iter().fold(0.0f64, |a, &v| a.max(v));
    let min_eig = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min_eig <= 1e-10 * max_eig {
        return Err(OperatorError::GramSingular(min_eig / max_eig));
    }

    // Q block from the Gram system.
    let mut gram_inv = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let col = vecs.column(k);
        for i in 0..m {
            for j in 0..m {
                gram_inv[(i, j)] += col[i] * col[j] / vals[k];
            }
        }
    }
    let q_ops: Vec<HermitianOp> = (0..m)
        .map(|a| {
            let mut op = HermitianOp::zeros(d);
            for j in 0..m {
                op = op.add_scaled(d as f64 * gram_inv[(a, j)], &obs.ops()[j]);
            }
            op
        })
        .collect();

    // HS-orthonormal basis of span(O) for the projector.
    let ortho_obs: Vec<HermitianOp> = (0..m)
        .map(|k| {
            let col = vecs.column(k);
            let scale = 1.0 / vals[k].sqrt();
            let mut op = HermitianOp::zeros(d);
            for j in 0..m {
                op = op.add_scaled(col[j] * scale, &obs.ops()[j]);
            }
            op
        })
        .collect();

    // T block: residuals of the Gell-Mann basis, Gram-Schmidt, scale by √d.
    let want_t = d * d - 1 - m;
    let mut t_ops: Vec<HermitianOp> = Vec::with_capacity(want_t);
    for g in gell_mann_basis(d) {
        if t_ops.len() == want_t {
            break;
        }
        let mut resid = g.clone();
        for o in &ortho_obs {
            resid = resid.add_scaled(-g.hs_product(o), o);
        }
        for t in &t_ops {
            // t is normalized to tr(t²) = d
            resid = resid.add_scaled(-resid.hs_product(t) / d as f64, t);
        }
        let norm_sq = resid.hs_product(&resid);
        if norm_sq > 1e-14 {
            t_ops.push(resid.scale((d as f64 / norm_sq).sqrt()));
        }
    }
    if t_ops.len() != want_t {
        return Err(OperatorError::ProjectionFailed);
    }
    Ok(DualBasis { q_ops, t_ops })
}

/// A reference state, its dual basis, and the observables: everything the
/// parameterization ρ_{θ,φ} needs.
#[derive(Debug, Clone, Serialize)]
pub struct StateModel {
    rho0: DensityMatrix,
    basis: DualBasis,
    observables: ObservableSet,
}

impl StateModel {
    pub fn new(
        rho0: DensityMatrix,
        basis: DualBasis,
        observables: ObservableSet,
    ) -> Result<Self, OperatorError> {
        let d = observables.dim();
        if rho0.dim() != d {
            return Err(OperatorError::DimensionMismatch {
                expected: d,
                got: rho0.dim(),
            });
        }
        let min = rho0.min_eigenvalue();
        if min <= FULL_RANK_TOL {
            return Err(OperatorError::NotFullRank(min));
        }
        if basis.num_q() != observables.len() || basis.num_q() + basis.num_t() != d * d - 1 {
            return Err(OperatorError::DimensionMismatch {
                expected: d * d - 1,
                got: basis.num_q() + basis.num_t(),
            });
        }
        let (dev_q, dev_t) = basis.pairing_residuals(&observables);
        let dev = dev_q.max(dev_t);
        if dev > DUAL_TOL {
            return Err(OperatorError::InconsistentBasis(dev));
        }
        Ok(Self {
            rho0,
            basis,
            observables,
        })
    }

    /// Convenience: canonical dual basis built from the observables.
    pub fn with_canonical_basis(
        rho0: DensityMatrix,
        observables: ObservableSet,
    ) -> Result<Self, OperatorError> {
        let basis = build_dual_basis(&observables)?;
        Self::new(rho0, basis, observables)
    }

    pub fn dim(&self) -> usize {
        self.observables.dim()
    }

    pub fn rho0(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn basis(&self) -> &DualBasis {
        &self.basis
    }

    pub fn observables(&self) -> &ObservableSet {
        &self.observables
    }

    /// Number of target parameters m = |A|.
    pub fn num_targets(&self) -> usize {
        self.observables.len()
    }

    /// Number of nuisance parameters |B| = d²−1−m.
    pub fn num_nuisance(&self) -> usize {
        self.basis.num_t()
    }

    /// Same observables and basis around a different reference state.
    pub fn with_rho0(&self, rho0: DensityMatrix) -> Result<Self, OperatorError> {
        Self::new(rho0, self.basis.clone(), self.observables.clone())
    }

    /// ρ0 + (1/d)Σ_a θ_a Q_a + (1/d)Σ_b φ_b T_b. No PSD check; use
    /// [`is_valid_state`] on the result.
    pub fn parameterize(&self, theta: &[f64], phi: &[f64]) -> Result<HermitianOp, OperatorError> {
        if theta.len() != self.basis.num_q() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.basis.num_q(),
                got: theta.len(),
            });
        }
        if phi.len() != self.basis.num_t() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.basis.num_t(),
                got: phi.len(),
            });
        }
        let inv_d = 1.0 / self.dim() as f64;
        let mut op = self.rho0.as_op().clone();
        for (a, &th) in theta.iter().enumerate() {
            op = op.add_scaled(th * inv_d, &self.basis.q_ops()[a]);
        }
        for (b, &ph) in phi.iter().enumerate() {
            op = op.add_scaled(ph * inv_d, &self.basis.t_ops()[b]);
        }
        Ok(op)
    }

    /// Invert the parameterization: θ_a = tr(ρ O_a) − tr(ρ0 O_a), then φ
    /// from the T-Gram system (a plain HS inner product for the canonical
    /// normalization tr(T_b T_b') = d·δ).
    pub fn extract_params(&self, rho: &HermitianOp) -> (DVector<f64>, DVector<f64>) {
        let m = self.basis.num_q();
        let nb = self.basis.num_t();
        let diff = rho.sub(self.rho0.as_op());
        let theta = DVector::from_fn(m, |a, _| diff.hs_product(&self.observables.ops()[a]));
        if nb == 0 {
            return (theta, DVector::zeros(0));
        }
        let inv_d = 1.0 / self.dim() as f64;
        let mut resid = diff.clone();
        for a in 0..m {
            resid = resid.add_scaled(-theta[a] * inv_d, &self.basis.q_ops()[a]);
        }
        let rhs = DVector::from_fn(nb, |b, _| resid.hs_product(&self.basis.t_ops()[b]));
        let gram = self.basis.t_gram() * inv_d;
        let phi = gram
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(nb));
        (theta, phi)
    }

    /// A random point of the symmetric neighborhood of ρ0: draw a uniform
    /// direction at `scale` and halve until both ρ_{θ,φ} and its reflection
    /// ρ_{−θ,−φ} are valid states.
    pub fn sample_neighborhood_params<R: Rng>(
        &self,
        rng: &mut R,
        scale: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let m = self.num_targets();
        let nb = self.num_nuisance();
        let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = scale;
        loop {
            let th: Vec<f64> = theta.iter().map(|x| x * s).collect();
            let ph: Vec<f64> = phi.iter().map(|x| x * s).collect();
            let up = self.parameterize(&th, &ph).expect("dimensions match");
            let neg_th: Vec<f64> = th.iter().map(|x| -x).collect();
            let neg_ph: Vec<f64> = ph.iter().map(|x| -x).collect();
            let down = self.parameterize(&neg_th, &neg_ph).expect("dimensions match");
            if is_valid_state(&up) && is_valid_state(&down) {
                return (th, ph);
            }
            s *= 0.5;
        }
    }

    /// Expectations tr(O_i ρ0) of the targets at the reference state.
    pub fn target_offsets(&self) -> Vec<f64> {
        self.observables
            .ops()
            .iter()
            .map(|o| o.expectation(&self.rho0))
            .collect()
    }

    pub fn content_hash(&self) -> String {
        let joined = format!(
            "{}{}",
            self.rho0.content_hash(),
            self.observables.content_hash()
        );
        linalg::sha256_hex(joined.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli(idx: usize) -> HermitianOp {
        pauli_matrices()[idx].clone()
    }

    #[test]
    fn hermiticity_is_enforced() {
        let bad = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.1),
                Complex64::new(0.5, 0.1),
                Complex64::new(0.0, 0.0),
            ],
        );
        assert!(matches!(
            HermitianOp::new(bad),
            Err(OperatorError::NotHermitian(_))
        ));
    }

    #[test]
    fn dual_basis_of_complete_paulis_is_the_paulis() {
        let obs = ObservableSet::complete_paulis(1);
        let basis = build_dual_basis(&obs).unwrap();
        assert_eq!(basis.num_t(), 0);
        for (q, o) in basis.q_ops().iter().zip(obs.ops()) {
            assert!((q.matrix() - o.matrix()).map(|z| z.norm()).max() < 1e-12);
        }
    }

    #[test]
    fn dual_basis_of_single_z() {
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        assert_eq!(basis.num_q(), 1);
        assert_eq!(basis.num_t(), 2);
        let (dev_q, dev_t) = basis.pairing_residuals(&obs);
        assert!(dev_q < 1e-12 && dev_t < 1e-12);
        // canonical T normalization tr(T_b T_b') = d·δ
        let gram = basis.t_gram();
        assert!((gram[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((gram[(1, 1)] - 2.0).abs() < 1e-10);
        assert!(gram[(0, 1)].abs() < 1e-10);
    }

    #[test]
    fn dual_basis_of_z_plus_x() {
        let zpx = pauli(3).add(&pauli(1));
        let obs = ObservableSet::new(vec![zpx.clone()]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        // Gram = tr((Z+X)²) = 4, so Q1 = 2·(1/4)·(Z+X) = (Z+X)/2
        let expect = zpx.scale(0.5);
        assert!((basis.q_ops()[0].matrix() - expect.matrix()).map(|z| z.norm()).max() < 1e-12);
        assert!((zpx.hs_product(&basis.q_ops()[0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dual_constraints_hold_for_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2usize, 3, 4] {
            let gm = gell_mann_basis(d);
            // random traceless observables: combinations of Gell-Mann ops
            for m in [1usize, 2, d * d - 2] {
                let obs: Vec<HermitianOp> = (0..m)
                    .map(|_| {
                        let mut op = HermitianOp::zeros(d);
                        for g in &gm {
                            let w: f64 = rng.random_range(-1.0..1.0);
                            op = op.add_scaled(w, g);
                        }
                        op
                    })
                    .collect();
                let obs = ObservableSet::new(obs).unwrap();
                let basis = build_dual_basis(&obs).unwrap();
                let (dev_q, dev_t) = basis.pairing_residuals(&obs);
                assert!(dev_q < 1e-9, "d={d} m={m} dev_q={dev_q}");
                assert!(dev_t < 1e-9, "d={d} m={m} dev_t={dev_t}");
                let gram = basis.t_gram();
                let eye = DMatrix::<f64>::identity(basis.num_t(), basis.num_t()) * d as f64;
                assert!((gram - eye).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn dependent_observables_are_rejected() {
        let z = pauli(3);
        let near = z.scale(1.0 + 1e-13);
        assert!(matches!(
            ObservableSet::new(vec![z, near]),
            Err(OperatorError::GramSingular(_))
        ));
    }

    fn single_z_model(rho0: DensityMatrix) -> StateModel {
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        StateModel::with_canonical_basis(rho0, obs).unwrap()
    }

    #[test]
    fn parameterize_matches_hand_values() {
        let model = single_z_model(DensityMatrix::maximally_mixed(2));
        let rho = model.parameterize(&[0.3], &[0.0, 0.0]).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 0.65).abs() < 1e-12);
        assert!((rho.matrix()[(1, 1)].re - 0.35).abs() < 1e-12);

        let at_origin = model.parameterize(&[0.0], &[0.0, 0.0]).unwrap();
        assert!((at_origin.matrix() - model.rho0().matrix()).map(|z| z.norm()).max() < 1e-15);

        let invalid = model.parameterize(&[1.2], &[0.0, 0.0]).unwrap();
        assert!((invalid.matrix()[(0, 0)].re - 1.1).abs() < 1e-12);
        assert!(!is_valid_state(&invalid));
        assert!(matches!(
            model.parameterize(&[0.1, 0.2], &[0.0, 0.0]),
            Err(OperatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn extract_params_inverts_parameterize() {
        let model = single_z_model(DensityMatrix::maximally_mixed(2));
        let (theta, phi) = model.extract_params(model.rho0().as_op());
        assert!(theta.abs().max() < 1e-12);
        assert!(phi.abs().max() < 1e-12);

        let rho = HermitianOp::from_real(2, &[0.65, 0.0, 0.0, 0.35]).unwrap();
        let (theta, _) = model.extract_params(&rho);
        assert!((theta[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn round_trip_on_random_valid_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for d in [2usize, 3] {
            let gm = gell_mann_basis(d);
            let obs = ObservableSet::new(vec![gm[0].clone(), gm[d].clone()]).unwrap();
            let model =
                StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(d), obs).unwrap();
            for _ in 0..50 {
                let m = model.num_targets();
                let nb = model.num_nuisance();
                let raw_theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let raw_phi: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
                // shrink until the state is valid
                let mut scale = 0.5f64;
                let (theta, phi) = loop {
                    let th: Vec<f64> = raw_theta.iter().map(|x| x * scale).collect();
                    let ph: Vec<f64> = raw_phi.iter().map(|x| x * scale).collect();
                    let op = model.parameterize(&th, &ph).unwrap();
                    if is_valid_state(&op) {
                        break (th, ph);
                    }
                    scale *= 0.5;
                };
                let rho = model.parameterize(&theta, &phi).unwrap();
                let (th2, ph2) = model.extract_params(&rho);
                for a in 0..m {
                    assert!((th2[a] - theta[a]).abs() < 1e-9);
                }
                for b in 0..nb {
                    assert!((ph2[b] - phi[b]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn round_trip_survives_basis_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        let c1 = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-0.5..0.5));
        let c2 = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                1.0 + rng.random_range(0.0..0.5)
            } else {
                rng.random_range(-0.3..0.3)
            }
        });
        let basis = basis.transform(&c1, &c2).unwrap();
        let model =
            StateModel::new(DensityMatrix::maximally_mixed(2), basis, obs).unwrap();
        let rho = model.parameterize(&[0.2], &[0.1, -0.05]).unwrap();
        let (theta, phi) = model.extract_params(&rho);
        assert!((theta[0] - 0.2).abs() < 1e-10);
        assert!((phi[0] - 0.1).abs() < 1e-10);
        assert!((phi[1] + 0.05).abs() < 1e-10);
    }

    #[test]
    fn neighborhood_membership() {
        let half = DensityMatrix::maximally_mixed(2);
        assert!(in_neighborhood(&half, &half));

        let near_pure = DensityMatrix::new(
            HermitianOp::from_real(2, &[0.999, 0.0, 0.0, 0.001]).unwrap(),
        )
        .unwrap();
        assert!(in_neighborhood(&near_pure, &half));

        let rho0 =
            DensityMatrix::new(HermitianOp::from_real(2, &[0.9, 0.0, 0.0, 0.1]).unwrap()).unwrap();
        let rho =
            DensityMatrix::new(HermitianOp::from_real(2, &[0.75, 0.0, 0.0, 0.25]).unwrap())
                .unwrap();
        // reflection diag(1.05, -0.05) is not PSD
        assert!(!in_neighborhood(&rho, &rho0));
    }

    #[test]
    fn neighborhood_is_reflection_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rho0 = DensityMatrix::random_full_rank(3, &mut rng);
            let rho = DensityMatrix::random_full_rank(3, &mut rng);
            let reflect = rho0.as_op().scale(2.0).sub(rho.as_op());
            let lhs = in_neighborhood(&rho, &rho0);
            let rhs = is_valid_state(&reflect)
                && in_neighborhood(
                    &DensityMatrix::new(HermitianOp::symmetrized(reflect.matrix().clone()))
                        .unwrap(),
                    &rho0,
                );
            if lhs != rhs {
                // only legal disagreement is right at the PSD tolerance edge
                assert!(reflect.min_eigenvalue().abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mix_channel_values() {
        let pure = DensityMatrix::new(HermitianOp::from_real(2, &[1.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let mixed = mix_with_maximally_mixed(&pure);
        assert!((mixed.matrix()[(0, 0)].re - 0.75).abs() < 1e-15);
        assert!((mixed.matrix()[(1, 1)].re - 0.25).abs() < 1e-15);

        let mm = DensityMatrix::maximally_mixed(3);
        let fixed = mix_with_maximally_mixed(&mm);
        assert!((fixed.matrix() - mm.matrix()).map(|z| z.norm()).max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let rho = DensityMatrix::random_pure(4, &mut rng);
            let out = mix_with_maximally_mixed(&rho);
            assert!(out.min_eigenvalue() >= 1.0 / 8.0 - 1e-12);
        }
    }

    #[test]
    fn mix_channel_halves_every_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let obs = ObservableSet::complete_paulis(1);
        for _ in 0..100 {
            let rho = DensityMatrix::random_full_rank(2, &mut rng);
            let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
            let mixed = mix_with_maximally_mixed(&rho);
            let mixed0 = mix_with_maximally_mixed(&rho0);
            for o in obs.ops() {
                let lhs = o.expectation(&mixed) - o.expectation(&mixed0);
                let rhs = 0.5 * (o.expectation(&rho) - o.expectation(&rho0));
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transform_identity_is_noop() {
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        let c1 = DMatrix::zeros(2, 1);
        let c2 = DMatrix::identity(2, 2);
        let same = basis.transform(&c1, &c2).unwrap();
        for (a, b) in basis.all_ops().zip(same.all_ops()) {
            assert!((a.matrix() - b.matrix()).map(|z| z.norm()).max() < 1e-15);
        }
    }

    #[test]
    fn transform_preserves_dual_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let gm = gell_mann_basis(3);
        let obs = ObservableSet::new(vec![gm[0].clone(), gm[2].clone(), gm[7].clone()]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        let nb = basis.num_t();
        for _ in 0..20 {
            let c1 = DMatrix::from_fn(nb, 3, |_, _| rng.random_range(-1.0..1.0));
            let c2 = DMatrix::from_fn(nb, nb, |i, j| {
                if i == j {
                    1.0 + rng.random_range(0.2..1.0)
                } else {
                    rng.random_range(-0.2..0.2)
                }
            });
            let out = basis.transform(&c1, &c2).unwrap();
            let (dev_q, dev_t) = out.pairing_residuals(&obs);
            assert!(dev_q < 1e-9 && dev_t < 1e-9);
        }
    }

    #[test]
    fn transform_rejects_singular_c2() {
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        let c1 = DMatrix::zeros(2, 1);
        let c2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            basis.transform(&c1, &c2),
            Err(OperatorError::SingularC2)
        ));
    }

    #[test]
    fn state_model_requires_full_rank() {
        let obs = ObservableSet::new(vec![pauli(3)]).unwrap();
        let basis = build_dual_basis(&obs).unwrap();
        let singular =
            DensityMatrix::new(HermitianOp::from_real(2, &[1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(
            StateModel::new(singular, basis, obs),
            Err(OperatorError::NotFullRank(_))
        ));
    }

    #[test]
    fn operator_json_round_trip() {
        let op = pauli(2);
        let json = serde_json::to_string(&op).unwrap();
        assert!(json.contains("\"dim\":2"));
        assert!(json.contains("\"re\""));
        assert!(json.contains("\"im\""));
        let back: HermitianOp = serde_json::from_str(&json).unwrap();
        assert!((back.matrix() - op.matrix()).map(|z| z.norm()).max() < 1e-15);
    }
}
