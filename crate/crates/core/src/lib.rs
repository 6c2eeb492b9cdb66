//! Numerical machinery for high-precision shadow tomography.
//!
//! The crate is organized around the linear state family
//! `rho = rho0 + (1/d) Σ_a θ_a Q_a + (1/d) Σ_b φ_b T_b` built from a dual
//! operator basis of a target observable set:
//!
//! - [`operators`]: complex Hermitian operator algebra, dual-basis
//!   construction and the (θ, φ) parameterization.
//! - [`measurement`]: POVMs, outcome sampling, standard measurement
//!   families, and c-copy → single-copy reductions.
//! - [`fisher`]: Fisher information matrices, Schur-complement restriction,
//!   χ² divergence, and the c-copy / adaptive flattening identities.
//! - [`gamma`]: the minimax figures Γ_p and Γ_p^ob, their duals, and the
//!   precision thresholds η^ob, η^ob_c, η̄, η̄^ob, a_max.
//! - [`estimation`]: coarse Haar tomography, the CR-saturating local
//!   estimator, median-of-means aggregation, and the end-to-end two-step
//!   estimation pipelines.
//!
//! Everything is deterministic under an explicit u64 seed and valid at desk
//! scale (Hilbert dimension d ≤ 8).

pub mod estimation;
pub mod fisher;
pub mod gamma;
pub mod linalg;
pub mod measurement;
pub mod operators;

pub use estimation::{LocalEstimator, RunReport};
pub use fisher::{FisherInfo, SchurRestriction};
pub use gamma::{GammaReport, ThresholdReport};
pub use measurement::{OutcomeSample, Povm};
pub use operators::{DensityMatrix, DualBasis, HermitianOp, ObservableSet, StateModel};

/// Numeric type used for all complex matrix entries.
pub type Complex64 = num_complex::Complex<f64>;

/// A vector/Schatten norm index p ∈ [1, ∞], with the conventions of the
/// dual pairing 1/p + 1/q = 1 made explicit (p = 1 ↔ q = ∞).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormIndex {
    Finite(f64),
    Infinity,
}

impl NormIndex {
    pub fn new(p: f64) -> Result<Self, String> {
        if p.is_infinite() && p > 0.0 {
            Ok(NormIndex::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(NormIndex::Finite(p))
        } else {
            Err(format!("norm index must lie in [1, inf], got {p}"))
        }
    }

    pub const ONE: NormIndex = NormIndex::Finite(1.0);
    pub const TWO: NormIndex = NormIndex::Finite(2.0);

    /// Hölder dual q with 1/p + 1/q = 1; maps 1 ↔ ∞ explicitly.
    pub fn dual(self) -> NormIndex {
        match self {
            NormIndex::Infinity => NormIndex::Finite(1.0),
            NormIndex::Finite(p) if p <= 1.0 => NormIndex::Infinity,
            NormIndex::Finite(p) => NormIndex::Finite(p / (p - 1.0)),
        }
    }

    /// ℓ_p norm of a real vector, with the explicit max limit at p = ∞.
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormIndex::Infinity => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            NormIndex::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
            NormIndex::Finite(p) if p == 2.0 => {
                v.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
            NormIndex::Finite(p) => v
                .iter()
                .map(|x| x.abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p),
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, NormIndex::Infinity)
    }

    pub fn value(self) -> f64 {
        match self {
            NormIndex::Infinity => f64::INFINITY,
            NormIndex::Finite(p) => p,
        }
    }
}

impl std::fmt::Display for NormIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormIndex::Infinity => write!(f, "inf"),
            NormIndex::Finite(p) => write!(f, "{p}"),
        }
    }
}

impl std::str::FromStr for NormIndex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "Inf" | "INF" | "infinity" | "oo" => Ok(NormIndex::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|e| format!("invalid norm index {other:?}: {e}"))?;
                NormIndex::new(p)
            }
        }
    }
}

impl serde::Serialize for NormIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for NormIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_index_duality_pairs() {
        assert_eq!(NormIndex::ONE.dual(), NormIndex::Infinity);
        assert_eq!(NormIndex::Infinity.dual(), NormIndex::ONE);
        assert_eq!(NormIndex::TWO.dual(), NormIndex::TWO);
        let p = NormIndex::Finite(3.0);
        let q = p.dual();
        assert!((1.0 / 3.0 + 1.0 / q.value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vector_norms_with_limits() {
        let v = [3.0, -4.0, 0.5];
        assert!((NormIndex::Infinity.vector_norm(&v) - 4.0).abs() < 1e-15);
        assert!((NormIndex::ONE.vector_norm(&v) - 7.5).abs() < 1e-15);
        assert!((NormIndex::TWO.vector_norm(&v) - 25.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn norm_index_parses_and_serializes() {
        let p: NormIndex = "inf".parse().unwrap();
        assert!(p.is_infinite());
        let p: NormIndex = "1.5".parse().unwrap();
        assert!((p.value() - 1.5).abs() < 1e-15);
        assert!("0.5".parse::<NormIndex>().is_err());
        let json = serde_json::to_string(&NormIndex::Infinity).unwrap();
        assert_eq!(json, "\"inf\"");
    }
}
