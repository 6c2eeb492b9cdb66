//! Shared dense linear-algebra helpers: Hermitian/symmetric
//! eigendecompositions, support-aware pseudoinverses, Haar-random unitaries,
//! and deterministic pairwise-tree summation.

use crate::Complex64;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Relative singular-value cutoff for pseudoinverses: values below
/// `PINV_CUTOFF * σ_max` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Eigendecomposition of a real symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = nalgebra::linalg::SymmetricEigen::new(m.clone());
    (se.eigenvalues, se.eigenvectors)
}

/// Eigendecomposition of a complex Hermitian matrix (real eigenvalues).
pub fn herm_eigen(m: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    let se = nalgebra::linalg::SymmetricEigen::new(m.clone());
    (se.eigenvalues, se.eigenvectors)
}

/// Smallest eigenvalue of a complex Hermitian matrix.
pub fn min_eig_herm(m: &DMatrix<Complex64>) -> f64 {
    herm_eigen(m).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest absolute eigenvalue of a complex Hermitian matrix (operator norm).
pub fn op_norm_herm(m: &DMatrix<Complex64>) -> f64 {
    herm_eigen(m).0.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// Pseudoinverse of a real symmetric matrix on its support.
///
/// Eigenvalues below `PINV_CUTOFF * |λ|_max` in magnitude are treated as
/// zero. Returns the pseudoinverse and the retained rank.
pub fn pinv_sym(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let (vals, vecs) = sym_eigen(m);
    let max_abs = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = PINV_CUTOFF * max_abs;
    let mut rank = 0;
    let mut inv_vals = DVector::zeros(n);
    for i in 0..n {
        if vals[i].abs() > cutoff {
            inv_vals[i] = 1.0 / vals[i];
            rank += 1;
        }
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        if inv_vals[i] != 0.0 {
            let col = vecs.column(i);
            for r in 0..n {
                for c in 0..n {
                    out[(r, c)] += inv_vals[i] * col[r] * col[c];
                }
            }
        }
    }
    // eigenvector round-off can leave a tiny asymmetry
    let sym = (&out + out.transpose()) * 0.5;
    (sym, rank)
}

/// Inverse square root of a Hermitian PSD matrix on its support.
///
/// Returns `None` if the matrix is rank-deficient relative to
/// `rel_floor * λ_max`.
pub fn inv_sqrt_psd(m: &DMatrix<Complex64>, rel_floor: f64) -> Option<DMatrix<Complex64>> {
    let n = m.nrows();
    let (vals, vecs) = herm_eigen(m);
    let max = vals.iter().fold(0.0f64, |a, &v| a.max(v));
    if max <= 0.0 {
        return None;
    }
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        if vals[i] <= rel_floor * max {
            return None;
        }
        let w = 1.0 / vals[i].sqrt();
        let col = vecs.column(i);
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] += col[r] * col[c].conj() * Complex64::new(w, 0.0);
            }
        }
    }
    Some(out)
}

/// Real part of tr(A·B). For Hermitian A, B the trace is real; the imaginary
/// part is round-off only.
pub fn trace_product_re(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let p = a[(i, k)] * b[(k, i)];
            acc += p.re;
        }
    }
    acc
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phase of
/// the R diagonal normalized.
pub fn haar_unitary<R: Rng>(d: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let mag = rjj.norm();
        let phase = if mag > 0.0 {
            rjj / Complex64::new(mag, 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..d {
            q[(i, j)] *= phase.conj();
        }
    }
    q
}

/// Normalized complex Gaussian vector: a Haar-random pure state.
pub fn gaussian_unit_vector<R: Rng>(d: usize, rng: &mut R) -> DVector<Complex64> {
    loop {
        let v = DVector::from_fn(d, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        });
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v / Complex64::new(norm, 0.0);
        }
    }
}

/// Deterministic pairwise tree sum of matrices; independent of how the
/// summands were produced (same result whether they were computed serially
/// or in parallel).
pub fn pairwise_tree_sum(mut items: Vec<DMatrix<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    if items.is_empty() {
        return DMatrix::zeros(rows, cols);
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().unwrap()
}

/// Hex-encoded SHA-256 of a byte string; used to fingerprint configs and
/// operator payloads in reports.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
