//! POVM representation, outcome probabilities and sampling, standard
//! measurement families, and the c-copy → single-copy reduction
//! `G_s = tr_{[c]\{i}}((𝟙^{(i)} ⊗ ρ0^{(others)}) M_s)`.

use crate::linalg::{self, gaussian_unit_vector, haar_unitary, inv_sqrt_psd};
use crate::operators::{DensityMatrix, HermitianOp, OperatorError, PSD_TOL};
use crate::Complex64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entrywise tolerance on POVM completeness Σ_x M_x = 𝟙.
pub const COMPLETENESS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("POVM element {index} is not PSD (min eigenvalue {min_eig:.3e})")]
    ElementNotPsd { index: usize, min_eig: f64 },

    #[error("POVM elements do not sum to identity (max deviation {0:.3e})")]
    Incomplete(f64),

    #[error("outcome probabilities do not sum to 1 (got {0})")]
    BadProbabilities(f64),

    #[error("random frame is rank-deficient; retry with a different seed")]
    SingularFrame,

    #[error("unsupported dimension {0} for this measurement family")]
    UnsupportedDim(usize),

    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// A finite POVM: PSD elements on (C^d)^{⊗c} summing to the identity.
#[derive(Debug, Clone, Serialize)]
pub struct Povm {
    dim: usize,
    copies: u32,
    elements: Vec<HermitianOp>,
    labels: Vec<String>,
}

impl Povm {
    pub fn new(
        dim: usize,
        copies: u32,
        elements: Vec<HermitianOp>,
        labels: Vec<String>,
    ) -> Result<Self, MeasurementError> {
        let total = dim.pow(copies);
        if labels.len() != elements.len() {
            return Err(MeasurementError::DimensionMismatch {
                expected: elements.len(),
                got: labels.len(),
            });
        }
        let mut sum = DMatrix::<Complex64>::zeros(total, total);
        for (index, el) in elements.iter().enumerate() {
            if el.dim() != total {
                return Err(MeasurementError::DimensionMismatch {
                    expected: total,
                    got: el.dim(),
                });
            }
            let min_eig = el.min_eigenvalue();
            if min_eig < -PSD_TOL {
                return Err(MeasurementError::ElementNotPsd { index, min_eig });
            }
            sum += el.matrix();
        }
        let dev = (sum - DMatrix::<Complex64>::identity(total, total))
            .map(|z| z.norm())
            .max();
        if dev > COMPLETENESS_TOL {
            return Err(MeasurementError::Incomplete(dev));
        }
        Ok(Self {
            dim,
            copies,
            elements,
            labels,
        })
    }

    fn with_auto_labels(
        dim: usize,
        copies: u32,
        elements: Vec<HermitianOp>,
        prefix: &str,
    ) -> Result<Self, MeasurementError> {
        let labels = (0..elements.len()).map(|x| format!("{prefix}{x}")).collect();
        Self::new(dim, copies, elements, labels)
    }

    /// Per-copy Hilbert dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn copies(&self) -> u32 {
        self.copies
    }

    /// Dimension the elements act on: d^copies.
    pub fn total_dim(&self) -> usize {
        self.dim.pow(self.copies)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[HermitianOp] {
        &self.elements
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn content_hash(&self) -> String {
        let joined: String = self.elements.iter().map(|e| e.content_hash()).collect();
        linalg::sha256_hex(joined.as_bytes())
    }

    /// Outcome distribution p_x = tr(M_x ρ); tiny negatives are clamped to 0.
    pub fn outcome_probs(&self, rho: &DensityMatrix) -> Result<Vec<f64>, MeasurementError> {
        if rho.dim() != self.total_dim() {
            return Err(MeasurementError::DimensionMismatch {
                expected: self.total_dim(),
                got: rho.dim(),
            });
        }
        let mut probs: Vec<f64> = self
            .elements
            .iter()
            .map(|m| m.expectation(rho))
            .collect();
        let mut total = 0.0;
        for p in probs.iter_mut() {
            if *p < 0.0 {
                debug_assert!(*p > -1e-9, "probability {p} below clamp window");
                *p = 0.0;
            }
            total += *p;
        }
        if (total - 1.0).abs() > COMPLETENESS_TOL {
            return Err(MeasurementError::BadProbabilities(total));
        }
        Ok(probs)
    }

    /// n i.i.d. outcome draws via inverse CDF; deterministic for a fixed seed.
    pub fn sample_outcomes(
        &self,
        rho: &DensityMatrix,
        n: usize,
        seed: u64,
    ) -> Result<OutcomeSample, MeasurementError> {
        let probs = self.outcome_probs(rho)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = (0..n).map(|_| draw_index(&probs, &mut rng)).collect();
        Ok(OutcomeSample { indices, seed })
    }

    /// Computational-basis measurement: d diagonal projectors.
    pub fn computational(dim: usize) -> Self {
        let elements = (0..dim)
            .map(|k| {
                let mut m = DMatrix::<Complex64>::zeros(dim, dim);
                m[(k, k)] = Complex64::new(1.0, 0.0);
                HermitianOp::symmetrized(m)
            })
            .collect();
        let labels = (0..dim).map(|k| format!("|{k}>")).collect();
        Self::new(dim, 1, elements, labels).expect("projective measurement is complete")
    }

    /// Uniformly random Pauli-basis measurement on n qubits, realized as one
    /// POVM: 3^n bases × 2^n outcomes, each weighted 1/3^n.
    pub fn pauli_basis_uniform(n_qubits: u32) -> Self {
        let eigvecs = pauli_eigenbases();
        let bases = 3usize.pow(n_qubits);
        let outcomes = 2usize.pow(n_qubits);
        let weight = 1.0 / bases as f64;
        let mut elements = Vec::with_capacity(bases * outcomes);
        let mut labels = Vec::with_capacity(bases * outcomes);
        for b in 0..bases {
            let mut axes = Vec::with_capacity(n_qubits as usize);
            let mut rem = b;
            for _ in 0..n_qubits {
                axes.push(rem % 3);
                rem /= 3;
            }
            for o in 0..outcomes {
                let mut op: Option<HermitianOp> = None;
                let mut label = String::new();
                for (q, &axis) in axes.iter().enumerate() {
                    let sign = (o >> q) & 1;
                    let v = &eigvecs[axis][sign];
                    let proj = HermitianOp::projector(v);
                    op = Some(match op {
                        None => proj,
                        Some(acc) => proj.kron(&acc),
                    });
                    label.push(['x', 'y', 'z'][axis]);
                    label.push(if sign == 0 { '+' } else { '-' });
                }
                elements.push(op.unwrap().scale(weight));
                labels.push(label);
            }
        }
        Self::new(2usize.pow(n_qubits), 1, elements, labels)
            .expect("uniform Pauli-basis POVM is complete")
    }

    /// Qubit SIC POVM: the four tetrahedral elements (1/2)|t_k⟩⟨t_k|.
    pub fn sic_qubit() -> Self {
        let dirs = [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let paulis = crate::operators::pauli_matrices();
        let s = 1.0 / 3f64.sqrt();
        let elements = dirs
            .iter()
            .map(|b| {
                let mut op = HermitianOp::identity(2);
                for (k, &c) in b.iter().enumerate() {
                    op = op.add_scaled(c * s, &paulis[k + 1]);
                }
                op.scale(0.25)
            })
            .collect();
        let labels = (0..4).map(|k| format!("t{k}")).collect();
        Self::new(2, 1, elements, labels).expect("tetrahedral POVM is complete")
    }

    /// Complete set of d+1 mutually unbiased bases for prime d, as one POVM
    /// with (d+1)·d rank-1 elements weighted 1/(d+1).
    pub fn mub_prime(dim: usize) -> Result<Self, MeasurementError> {
        if dim < 2 || !is_prime(dim) {
            return Err(MeasurementError::UnsupportedDim(dim));
        }
        let weight = 1.0 / (dim as f64 + 1.0);
        let mut elements = Vec::with_capacity((dim + 1) * dim);
        let mut labels = Vec::with_capacity((dim + 1) * dim);
        // computational basis
        for k in 0..dim {
            let mut v = DVector::<Complex64>::zeros(dim);
            v[k] = Complex64::new(1.0, 0.0);
            elements.push(HermitianOp::projector(&v).scale(weight));
            labels.push(format!("b*o{k}"));
        }
        if dim == 2 {
            // quadratic Gauss-sum construction needs odd characteristic;
            // for the qubit use the X and Y eigenbases directly
            let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let i_unit = Complex64::new(0.0, 1.0);
            let x_basis = [
                DVector::from_column_slice(&[inv, inv]),
                DVector::from_column_slice(&[inv, -inv]),
            ];
            let y_basis = [
                DVector::from_column_slice(&[inv, inv * i_unit]),
                DVector::from_column_slice(&[inv, -inv * i_unit]),
            ];
            for (b, basis) in [x_basis, y_basis].iter().enumerate() {
                for (k, v) in basis.iter().enumerate() {
                    elements.push(HermitianOp::projector(v).scale(weight));
                    labels.push(format!("b{b}o{k}"));
                }
            }
        } else {
            let omega = 2.0 * std::f64::consts::PI / dim as f64;
            let inv_sqrt = 1.0 / (dim as f64).sqrt();
            for j in 0..dim {
                for k in 0..dim {
                    let v = DVector::from_fn(dim, |l, _| {
                        let phase = omega * ((j * l * l + k * l) % dim) as f64;
                        Complex64::new(phase.cos(), phase.sin()) * inv_sqrt
                    });
                    elements.push(HermitianOp::projector(&v).scale(weight));
                    labels.push(format!("b{j}o{k}"));
                }
            }
        }
        Self::new(dim, 1, elements, labels)
    }

    /// Frame-corrected finite surrogate for the continuous Haar POVM: draw K
    /// Haar vectors, form S = (d/K)Σ|v_k⟩⟨v_k|, and return the elements
    /// S^{-1/2}(d/K)|v_k⟩⟨v_k|S^{-1/2}. Exactly complete by construction.
    pub fn finite_haar_proxy(dim: usize, k: usize, seed: u64) -> Result<Self, MeasurementError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = dim as f64 / k as f64;
        let vecs: Vec<DVector<Complex64>> =
            (0..k).map(|_| gaussian_unit_vector(dim, &mut rng)).collect();
        let mut frame = DMatrix::<Complex64>::zeros(dim, dim);
        for v in &vecs {
            frame += v * v.adjoint() * Complex64::new(scale, 0.0);
        }
        let correction = inv_sqrt_psd(&frame, 1e-10).ok_or(MeasurementError::SingularFrame)?;
        let elements = vecs
            .iter()
            .map(|v| {
                let w = &correction * v;
                HermitianOp::projector(&w).scale(scale)
            })
            .collect();
        Self::with_auto_labels(dim, 1, elements, "v")
    }

    /// Random K-outcome POVM from the row blocks of a Haar isometry;
    /// complete exactly by construction.
    pub fn random_naimark(dim: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = haar_unitary(dim * k, &mut rng);
        let iso = u.columns(0, dim).into_owned();
        let elements = (0..k)
            .map(|b| {
                let block = iso.rows(b * dim, dim).into_owned();
                HermitianOp::symmetrized(block.adjoint() * block)
            })
            .collect();
        Self::with_auto_labels(dim, 1, elements, "n").expect("isometry blocks are complete")
    }

    /// Random c-copy POVM on (C^d)^{⊗c} via the same isometry construction.
    pub fn random_joint(dim: usize, copies: u32, k: usize, seed: u64) -> Self {
        let total = dim.pow(copies);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = haar_unitary(total * k, &mut rng);
        let iso = u.columns(0, total).into_owned();
        let elements = (0..k)
            .map(|b| {
                let block = iso.rows(b * total, total).into_owned();
                HermitianOp::symmetrized(block.adjoint() * block)
            })
            .collect();
        let labels = (0..k).map(|x| format!("j{x}")).collect();
        Self::new(dim, copies, elements, labels).expect("isometry blocks are complete")
    }

    /// c-fold product measurement M⊗…⊗M with cartesian outcome labels.
    pub fn tensor_power(&self, c: u32) -> Self {
        assert_eq!(self.copies, 1, "tensor_power expects a single-copy POVM");
        let mut elements = vec![HermitianOp::identity(1)];
        let mut labels = vec![String::new()];
        for _ in 0..c {
            let mut next_el = Vec::with_capacity(elements.len() * self.len());
            let mut next_lb = Vec::with_capacity(labels.len() * self.len());
            for (e, l) in elements.iter().zip(&labels) {
                for (f, m) in self.elements.iter().zip(&self.labels) {
                    next_el.push(e.kron(f));
                    let sep = if l.is_empty() { "" } else { "," };
                    next_lb.push(format!("{l}{sep}{m}"));
                }
            }
            elements = next_el;
            labels = next_lb;
        }
        Self::new(self.dim, c, elements, labels).expect("product of POVMs is complete")
    }

    /// Single-copy reduction of a c-copy POVM at slot `slot`:
    /// G_s = tr_{others}((𝟙^{(slot)} ⊗ ρ0^{(others)}) M_s).
    pub fn reduce_c_copy(
        &self,
        rho0: &DensityMatrix,
        slot: usize,
    ) -> Result<Povm, MeasurementError> {
        let c = self.copies as usize;
        if rho0.dim() != self.dim {
            return Err(MeasurementError::DimensionMismatch {
                expected: self.dim,
                got: rho0.dim(),
            });
        }
        if slot >= c {
            return Err(MeasurementError::DimensionMismatch {
                expected: c,
                got: slot,
            });
        }
        let elements = self
            .elements
            .iter()
            .map(|m| partial_trace_against(m, rho0, self.dim, c, slot))
            .collect();
        Povm::new(self.dim, 1, elements, self.labels.clone())
    }

    /// The single-copy POVM {(1/c)·G_s^{[i]}} over outcomes (i, s); its FIM
    /// dominates the c-copy FIM by a factor c².
    pub fn mixed_reduction(&self, rho0: &DensityMatrix) -> Result<Povm, MeasurementError> {
        let c = self.copies as usize;
        let weight = 1.0 / c as f64;
        let mut elements = Vec::with_capacity(c * self.len());
        let mut labels = Vec::with_capacity(c * self.len());
        for slot in 0..c {
            for (m, l) in self.elements.iter().zip(&self.labels) {
                elements.push(partial_trace_against(m, rho0, self.dim, c, slot).scale(weight));
                labels.push(format!("copy{slot}:{l}"));
            }
        }
        Povm::new(self.dim, 1, elements, labels)
    }
}

impl<'de> Deserialize<'de> for Povm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            dim: usize,
            copies: u32,
            elements: Vec<HermitianOp>,
            labels: Vec<String>,
        }
        let r = Repr::deserialize(d)?;
        Povm::new(r.dim, r.copies, r.elements, r.labels).map_err(serde::de::Error::custom)
    }
}

/// Recorded outcome draws plus the seed that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeSample {
    pub indices: Vec<usize>,
    pub seed: u64,
}

fn draw_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// G[x, y] = Σ_{o,o'} M[(x@slot, o), (y@slot, o')] · W[o', o] with
/// W = ρ0^{⊗(c−1)} on the traced slots.
fn partial_trace_against(
    m: &HermitianOp,
    rho0: &DensityMatrix,
    dim: usize,
    copies: usize,
    slot: usize,
) -> HermitianOp {
    if copies == 1 {
        return m.clone();
    }
    let w = rho0.tensor_power(copies as u32 - 1);
    let wm = w.matrix();
    let mm = m.matrix();
    let other_total = dim.pow(copies as u32 - 1);
    // strides for splicing the slot index into the flat row-major index
    let high = dim.pow((copies - 1 - slot) as u32);
    let splice = |x: usize, o: usize| -> usize {
        let lo = o % high;
        let hi = o / high;
        (hi * dim + x) * high + lo
    };
    let mut g = DMatrix::<Complex64>::zeros(dim, dim);
    for x in 0..dim {
        for y in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for o in 0..other_total {
                let row = splice(x, o);
                for o2 in 0..other_total {
                    let col = splice(y, o2);
                    acc += mm[(row, col)] * wm[(o2, o)];
                }
            }
            g[(x, y)] = acc;
        }
    }
    HermitianOp::symmetrized(g)
}

/// Normalized column of a Haar unitary, realized by normalizing a standard
/// complex Gaussian vector.
pub fn haar_random_state(dim: usize, seed: u64) -> DVector<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_unit_vector(dim, &mut rng)
}

/// One outcome of the continuous Haar measurement {d|v⟩⟨v| dv} on ρ:
/// a vector with density d·⟨v|ρ|v⟩ with respect to the Haar measure,
/// drawn by rejection with acceptance ⟨v|ρ|v⟩ / λ_max(ρ).
pub fn sample_haar_measurement_outcome<R: Rng>(
    rho: &DensityMatrix,
    rng: &mut R,
) -> DVector<Complex64> {
    let d = rho.dim();
    let lambda_max = {
        let min_neg = linalg::herm_eigen(rho.matrix())
            .0
            .iter()
            .fold(0.0f64, |a, &v| a.max(v));
        min_neg.max(1.0 / d as f64)
    };
    loop {
        let v = gaussian_unit_vector(d, rng);
        let quad = (v.adjoint() * rho.matrix() * &v)[(0, 0)].re;
        let accept = (quad / lambda_max).clamp(0.0, 1.0);
        if rng.random::<f64>() < accept {
            return v;
        }
    }
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n % k == 0 {
            return false;
        }
        k += 1;
    }
    true
}

/// Eigenbases of X, Y, Z as ([+], [−]) pairs.
fn pauli_eigenbases() -> [[DVector<Complex64>; 2]; 3] {
    let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i_unit = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    [
        [
            DVector::from_column_slice(&[inv, inv]),
            DVector::from_column_slice(&[inv, -inv]),
        ],
        [
            DVector::from_column_slice(&[inv, inv * i_unit]),
            DVector::from_column_slice(&[inv, -inv * i_unit]),
        ],
        [
            DVector::from_column_slice(&[one, zero]),
            DVector::from_column_slice(&[zero, one]),
        ],
    ]
}
