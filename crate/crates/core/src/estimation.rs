//! The constructive two-step estimators: coarse Haar tomography to localize
//! ρ, the CR-saturating locally unbiased estimator at the localized point,
//! median-of-means aggregation to trade variance for confidence, and the
//! end-to-end shadow / oblivious estimation pipelines with their
//! distinguishing decision rule.

use crate::fisher::{self, FisherError, PROB_FLOOR};
use crate::linalg;
use crate::measurement::{sample_haar_measurement_outcome, MeasurementError, Povm};
use crate::operators::{
    in_neighborhood, mix_with_maximally_mixed, DensityMatrix, HermitianOp, ObservableSet,
    OperatorError, StateModel,
};
use crate::{Complex64, NormIndex};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(
        "Fisher information is singular on the target support \
         (worst row deviation {0:.3e}); the local estimator is undefined"
    )]
    SingularFim(f64),

    #[error("sample count {n} is not K·B = {k}·{b}")]
    CountMismatch { n: usize, k: usize, b: usize },

    #[error("‖α‖_q = {0} exceeds 1")]
    InvalidAlpha(f64),

    #[error(transparent)]
    Fisher(#[from] FisherError),

    #[error(transparent)]
    Measurement(#[from] MeasurementError),

    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// The optimal locally unbiased estimator at ρ0 for a fixed measurement:
/// θ̂_a(outcome x) = γ_{a,x} with
/// γ_{a,x} = Σ_c (I⁻¹)_{ac} · tr(M_x R_c) / (d·p0_x).
///
/// On the symmetric neighborhood of ρ0 it is exactly unbiased and its MSEM
/// is at most twice the CR floor (I⁻¹)_AA, with equality at ρ0.
#[derive(Debug, Clone)]
pub struct LocalEstimator {
    model: StateModel,
    povm: Povm,
    /// γ_{a,x}: m × (number of outcomes).
    gamma_coeffs: DMatrix<f64>,
    /// tr(O_a ρ0).
    offset: Vec<f64>,
}

/// Tolerance on the target-support condition rows of I⁺·I.
const SUPPORT_TOL: f64 = 1e-8;

impl LocalEstimator {
    /// Build the estimator; fails if the FIM does not determine the target
    /// rows (I⁺·I must restrict to the identity on A).
    pub fn build(model: &StateModel, povm: &Povm) -> Result<Self, EstimationError> {
        let info = fisher::fim(model, povm)?;
        let n = info.total();
        let m = info.num_targets();
        let (pinv, _) = linalg::pinv_sym(info.matrix());
        let proj = &pinv * info.matrix();
        let mut worst = 0.0f64;
        for a in 0..m {
            for c in 0..n {
                let want = if a == c { 1.0 } else { 0.0 };
                worst = worst.max((proj[(a, c)] - want).abs());
            }
        }
        if worst > SUPPORT_TOL {
            return Err(EstimationError::SingularFim(worst));
        }
        let probs = povm.outcome_probs(model.rho0())?;
        let directions: Vec<&HermitianOp> = model.basis().all_ops().collect();
        let inv_d = 1.0 / model.dim() as f64;
        let mut gamma = DMatrix::zeros(m, povm.len());
        for (x, el) in povm.elements().iter().enumerate() {
            if probs[x] <= PROB_FLOOR {
                continue; // never fires inside the neighborhood of rho0
            }
            let scores: Vec<f64> = directions
                .iter()
                .map(|r| el.hs_product(r) * inv_d / probs[x])
                .collect();
            for a in 0..m {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += pinv[(a, c)] * scores[c];
                }
                gamma[(a, x)] = acc;
            }
        }
        Ok(Self {
            model: model.clone(),
            povm: povm.clone(),
            gamma_coeffs: gamma,
            offset: model.target_offsets(),
        })
    }

    pub fn model(&self) -> &StateModel {
        &self.model
    }

    pub fn povm(&self) -> &Povm {
        &self.povm
    }

    pub fn gamma_coeffs(&self) -> &DMatrix<f64> {
        &self.gamma_coeffs
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Per-shot estimate θ̂(x) for one observed outcome.
    pub fn estimate(&self, outcome: usize) -> Vec<f64> {
        self.gamma_coeffs.column(outcome).iter().copied().collect()
    }

    /// Exact expectation Σ_x θ̂(x)·p(x) under an arbitrary state.
    pub fn expectation_under(&self, rho: &DensityMatrix) -> Result<Vec<f64>, EstimationError> {
        let probs = self.povm.outcome_probs(rho)?;
        let m = self.gamma_coeffs.nrows();
        Ok((0..m)
            .map(|a| {
                probs
                    .iter()
                    .enumerate()
                    .map(|(x, &p)| self.gamma_coeffs[(a, x)] * p)
                    .sum()
            })
            .collect())
    }
}

/// Exact mean-square-error matrix of the local estimator at a state:
/// V_{aa'} = Σ_x (θ̂_a(x) − θ_a)(θ̂_{a'}(x) − θ_{a'})·p_x, with θ read off
/// the state through the parameterization.
pub fn msem_exact(
    est: &LocalEstimator,
    rho: &DensityMatrix,
) -> Result<DMatrix<f64>, EstimationError> {
    let probs = est.povm.outcome_probs(rho)?;
    let (theta, _) = est.model.extract_params(rho.as_op());
    let m = est.gamma_coeffs.nrows();
    let mut v = DMatrix::zeros(m, m);
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for a in 0..m {
            let da = est.gamma_coeffs[(a, x)] - theta[a];
            for b in 0..m {
                let db = est.gamma_coeffs[(b, x)] - theta[b];
                v[(a, b)] += da * db * p;
            }
        }
    }
    Ok(v)
}

/// Raw linear-inversion tomography estimate from Haar-measurement outcomes:
/// the mean of (d+1)|u⟩⟨u| − 𝟙.
pub fn coarse_tomography(samples: &[DVector<Complex64>], dim: usize) -> HermitianOp {
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    for u in samples {
        acc += u * u.adjoint() * Complex64::new(dim as f64 + 1.0, 0.0);
    }
    acc /= Complex64::new(samples.len() as f64, 0.0);
    acc -= DMatrix::<Complex64>::identity(dim, dim);
    HermitianOp::symmetrized(acc)
}

/// Eigenvalue floor applied when regularizing a raw tomography estimate.
pub const REGULARIZE_EIG_FLOOR: f64 = 1e-6;
/// Weight of the final mix toward the maximally mixed state.
pub const REGULARIZE_MIX: f64 = 1e-3;

/// Project a raw tomography estimate to a full-rank density matrix:
/// clip eigenvalues at 1e-6, renormalize the trace, then mix weight 1e-3
/// toward 𝟙/d.
pub fn regularize_estimate(raw: &HermitianOp) -> DensityMatrix {
    let d = raw.dim();
    let (vals, vecs) = linalg::herm_eigen(raw.matrix());
    let clipped: Vec<f64> = vals.iter().map(|&v| v.max(REGULARIZE_EIG_FLOOR)).collect();
    let total: f64 = clipped.iter().sum();
    let mut mat = DMatrix::<Complex64>::zeros(d, d);
    for (i, &lam) in clipped.iter().enumerate() {
        let col = vecs.column(i);
        let w = Complex64::new(lam / total, 0.0);
        for r in 0..d {
            for c in 0..d {
                mat[(r, c)] += col[r] * col[c].conj() * w;
            }
        }
    }
    let op = HermitianOp::symmetrized(mat)
        .scale(1.0 - REGULARIZE_MIX)
        .add(&HermitianOp::identity(d).scale(REGULARIZE_MIX / d as f64));
    DensityMatrix::new(op).expect("clipped and renormalized estimate is a state")
}

/// Coordinate-wise median of means: partition `samples` in order into K
/// batches of B, average each batch, and take the per-coordinate lower
/// median of the batch means.
pub fn mom_coordinatewise(
    samples: &[Vec<f64>],
    k: usize,
    b: usize,
) -> Result<Vec<f64>, EstimationError> {
    if samples.len() != k * b || k == 0 || b == 0 {
        return Err(EstimationError::CountMismatch {
            n: samples.len(),
            k,
            b,
        });
    }
    let m = samples[0].len();
    let mut batch_means = vec![vec![0.0f64; m]; k];
    for (i, s) in samples.iter().enumerate() {
        let batch = i / b;
        for (j, &v) in s.iter().enumerate() {
            batch_means[batch][j] += v;
        }
    }
    for mean in batch_means.iter_mut() {
        for v in mean.iter_mut() {
            *v /= b as f64;
        }
    }
    let mut out = vec![0.0f64; m];
    let mut column = vec![0.0f64; k];
    for (j, o) in out.iter_mut().enumerate() {
        for (l, mean) in batch_means.iter().enumerate() {
            column[l] = mean[j];
        }
        column.sort_by(|a, b| a.total_cmp(b));
        *o = column[(k - 1) / 2]; // lower median for even K
    }
    Ok(out)
}

/// Scalar median of means.
pub fn mom_scalar(samples: &[f64], k: usize, b: usize) -> Result<f64, EstimationError> {
    let wrapped: Vec<Vec<f64>> = samples.iter().map(|&x| vec![x]).collect();
    Ok(mom_coordinatewise(&wrapped, k, b)?[0])
}

/// Number of median-of-means groups: ⌈8·ln(m/δ)⌉.
pub fn mom_groups(m: usize, delta: f64) -> usize {
    (8.0 * (m as f64 / delta).ln()).ceil().max(1.0) as usize
}

/// Per-batch shot constant, calibrated once by a pilot run at d = 2
/// (complete Paulis, uniform Pauli-basis measurement, p = ∞, δ = 0.1) and
/// frozen here. Reported in every RunReport; never asserted as ground truth.
pub const SHOT_BUDGET_CONSTANT: f64 = 3.0;

/// Batch size B = ⌈C·Γ/ε²⌉ for a variance scale Γ.
pub fn batch_size(gamma: f64, epsilon: f64) -> usize {
    (SHOT_BUDGET_CONSTANT * gamma / (epsilon * epsilon)).ceil().max(1.0) as usize
}

/// Measurement-phase budget N1 = K·B.
pub fn shot_budget(gamma: f64, m: usize, delta: f64, epsilon: f64) -> usize {
    mom_groups(m, delta) * batch_size(gamma, epsilon)
}

/// Tomography-phase budget N0; 500·d³ gives 4000 at d = 2.
pub fn tomography_budget(d: usize) -> usize {
    500 * d * d * d
}

/// Everything an estimation run needs besides the observables, the
/// measurement, and the unknown state itself.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationConfig {
    pub p: NormIndex,
    pub epsilon: f64,
    pub delta: f64,
    /// Tomography copies.
    pub n0: usize,
    /// Measurement copies (rounded up to a multiple of K when K is derived).
    pub n1: usize,
    /// Median-of-means groups; derived from (m, δ) when absent.
    pub k: Option<usize>,
    pub seed: u64,
}

/// Sample counts actually consumed by a run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SampleCounts {
    pub n0: usize,
    pub n1: usize,
    pub k: usize,
    pub b: usize,
}

/// Output of one end-to-end estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub estimates: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub p_norm_error: Option<f64>,
    pub success: bool,
    pub samples_used: SampleCounts,
    pub seed: u64,
    /// Set when the coarse estimate failed to localize the state (the run
    /// still completes; the tomography guarantee is only probabilistic).
    pub coarse_failure: bool,
    pub rho0_hash: String,
    pub config_hash: String,
}

impl RunReport {
    /// Recompute ‖estimates − truth‖_p; must equal the stored error.
    pub fn recompute_error(&self, p: NormIndex) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        let diff: Vec<f64> = self
            .estimates
            .iter()
            .zip(truth)
            .map(|(e, t)| e - t)
            .collect();
        Some(p.vector_norm(&diff))
    }
}

fn config_hash(obs: &ObservableSet, povm: &Povm, config: &EstimationConfig) -> String {
    let payload = format!(
        "{}|{}|{}",
        obs.content_hash(),
        povm.content_hash(),
        serde_json::to_string(config).expect("config serializes")
    );
    linalg::sha256_hex(payload.as_bytes())
}

fn resolve_counts(m: usize, config: &EstimationConfig) -> Result<(usize, usize), EstimationError> {
    match config.k {
        Some(k) => {
            if k == 0 || config.n1 % k != 0 {
                return Err(EstimationError::CountMismatch {
                    n: config.n1,
                    k,
                    b: if k == 0 { 0 } else { config.n1 / k },
                });
            }
            Ok((k, config.n1 / k))
        }
        None => {
            let k = mom_groups(m, config.delta);
            let b = config.n1.div_ceil(k).max(1);
            Ok((k, b))
        }
    }
}

/// The first (localization) phase shared by both pipelines: mix every copy,
/// run Haar tomography on N0 copies, regularize. Returns the mixed-frame
/// unknown state, the regularized reference, and the raw estimate.
fn localize(
    true_state: &DensityMatrix,
    n0: usize,
    rng: &mut ChaCha8Rng,
) -> (DensityMatrix, DensityMatrix, HermitianOp) {
    let mixed = mix_with_maximally_mixed(true_state);
    let samples: Vec<DVector<Complex64>> = (0..n0)
        .map(|_| sample_haar_measurement_outcome(&mixed, rng))
        .collect();
    let raw = coarse_tomography(&samples, true_state.dim());
    let rho0 = regularize_estimate(&raw);
    (mixed, rho0, raw)
}

/// Shadow estimation with p-norm error: mix channel on every copy, coarse
/// tomography on N0 copies, local estimation with M on N1 copies,
/// coordinate-wise median of means, and the factor-2 unmixing
/// ô_i = 2(θ̂_MoM,i + tr(O_i ρ0)).
pub fn run_shadow_tomography(
    obs: &ObservableSet,
    povm: &Povm,
    config: &EstimationConfig,
    true_state: &DensityMatrix,
) -> Result<RunReport, EstimationError> {
    let m = obs.len();
    let (k, b) = resolve_counts(m, config)?;
    let n1 = k * b;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let (mixed, rho0, _) = localize(true_state, config.n0, &mut rng);
    let coarse_failure = !in_neighborhood(&mixed, &rho0);

    let model = StateModel::with_canonical_basis(rho0.clone(), obs.clone())?;
    let estimator = LocalEstimator::build(&model, povm)?;

    rng.set_stream(1);
    let probs = povm.outcome_probs(&mixed)?;
    let mut shots: Vec<Vec<f64>> = Vec::with_capacity(n1);
    for _ in 0..n1 {
        let x = draw(&probs, &mut rng);
        shots.push(estimator.estimate(x));
    }
    let theta_mom = mom_coordinatewise(&shots, k, b)?;
    let estimates: Vec<f64> = theta_mom
        .iter()
        .zip(estimator.offset())
        .map(|(t, o)| 2.0 * (t + o))
        .collect();

    let truth: Vec<f64> = obs.ops().iter().map(|o| o.expectation(true_state)).collect();
    let diff: Vec<f64> = estimates.iter().zip(&truth).map(|(e, t)| e - t).collect();
    let err = config.p.vector_norm(&diff);
    Ok(RunReport {
        estimates,
        truth: Some(truth),
        p_norm_error: Some(err),
        success: err <= config.epsilon,
        samples_used: SampleCounts {
            n0: config.n0,
            n1,
            k,
            b,
        },
        seed: config.seed,
        coarse_failure,
        rho0_hash: rho0.content_hash(),
        config_hash: config_hash(obs, povm, config),
    })
}

/// Oblivious estimation of O_α = Σ α_i O_i with ‖α‖_q ≤ 1 revealed after
/// all measurements: identical measurement phase, then a scalar median of
/// means over θ̂_α = Σ α_i θ̂_i and the unmixing ô_α = 2(θ̂ + tr(O_α ρ0)).
pub fn run_oblivious(
    obs: &ObservableSet,
    povm: &Povm,
    config: &EstimationConfig,
    true_state: &DensityMatrix,
    alpha: &[f64],
) -> Result<RunReport, EstimationError> {
    let q = config.p.dual();
    let alpha_norm = q.vector_norm(alpha);
    if alpha_norm > 1.0 + 1e-9 {
        return Err(EstimationError::InvalidAlpha(alpha_norm));
    }
    // scalar target: K = ⌈8·ln(1/δ)⌉ groups suffice
    let k = mom_groups(1, config.delta);
    let b = config.n1.div_ceil(k).max(1);
    let n1 = k * b;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let (mixed, rho0, _) = localize(true_state, config.n0, &mut rng);
    let coarse_failure = !in_neighborhood(&mixed, &rho0);

    let model = StateModel::with_canonical_basis(rho0.clone(), obs.clone())?;
    let estimator = LocalEstimator::build(&model, povm)?;

    rng.set_stream(1);
    let probs = povm.outcome_probs(&mixed)?;
    let mut shots: Vec<f64> = Vec::with_capacity(n1);
    for _ in 0..n1 {
        let x = draw(&probs, &mut rng);
        let theta = estimator.estimate(x);
        shots.push(alpha.iter().zip(&theta).map(|(a, t)| a * t).sum());
    }
    let theta_mom = mom_scalar(&shots, k, b)?;
    let offset: f64 = alpha
        .iter()
        .zip(estimator.offset())
        .map(|(a, o)| a * o)
        .sum();
    let estimate = 2.0 * (theta_mom + offset);

    let truth: f64 = alpha
        .iter()
        .zip(obs.ops())
        .map(|(a, o)| a * o.expectation(true_state))
        .sum();
    let err = (estimate - truth).abs();
    Ok(RunReport {
        estimates: vec![estimate],
        truth: Some(vec![truth]),
        p_norm_error: Some(err),
        success: err <= config.epsilon,
        samples_used: SampleCounts {
            n0: config.n0,
            n1,
            k,
            b,
        },
        seed: config.seed,
        coarse_failure,
        rho0_hash: rho0.content_hash(),
        config_hash: config_hash(obs, povm, config),
    })
}

/// Verdict of the many-versus-one distinguishing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// Decide between ρ0 and the 3ε-separated alternative from an estimate:
/// alternative iff ‖θ̂‖_p ≥ 3ε/2 (the boundary goes to the alternative).
pub fn distinguish(theta_hat: &[f64], epsilon: f64, p: NormIndex) -> Hypothesis {
    if p.vector_norm(theta_hat) >= 1.5 * epsilon {
        Hypothesis::Alternative
    } else {
        Hypothesis::Null
    }
}

/// Run the distinguishing protocol with a known reference state: estimate
/// θ with the local estimator at ρ0 (no tomography phase), aggregate with
/// median of means, and apply [`distinguish`].
pub fn run_distinguish(
    obs: &ObservableSet,
    rho0: &DensityMatrix,
    povm: &Povm,
    config: &EstimationConfig,
    true_state: &DensityMatrix,
) -> Result<Hypothesis, EstimationError> {
    let m = obs.len();
    let (k, b) = resolve_counts(m, config)?;
    let n1 = k * b;
    let model = StateModel::with_canonical_basis(rho0.clone(), obs.clone())?;
    let estimator = LocalEstimator::build(&model, povm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let probs = povm.outcome_probs(true_state)?;
    let mut shots: Vec<Vec<f64>> = Vec::with_capacity(n1);
    for _ in 0..n1 {
        let x = draw(&probs, &mut rng);
        shots.push(estimator.estimate(x));
    }
    let theta_mom = mom_coordinatewise(&shots, k, b)?;
    Ok(distinguish(&theta_mom, config.epsilon, config.p))
}

fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_dual_basis, gell_mann_basis, is_valid_state, pauli_matrices};
    use rand::Rng;

    fn single_z_model() -> StateModel {
        let obs = ObservableSet::new(vec![pauli_matrices()[3].clone()]).unwrap();
        StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(2), obs).unwrap()
    }

    #[test]
    fn local_estimator_hand_values() {
        let model = single_z_model();
        let est = LocalEstimator::build(&model, &Povm::computational(2)).unwrap();
        assert!((est.estimate(0)[0] - 1.0).abs() < 1e-12);
        assert!((est.estimate(1)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_estimator_exactly_unbiased_on_neighborhood() {
        let model = single_z_model();
        let est = LocalEstimator::build(&model, &Povm::computational(2)).unwrap();
        for theta in [-0.9, -0.3, 0.0, 0.4, 0.99] {
            let rho = DensityMatrix::new(HermitianOp::symmetrized(
                model
                    .parameterize(&[theta], &[0.0, 0.0])
                    .unwrap()
                    .matrix()
                    .clone(),
            ))
            .unwrap();
            let mean = est.expectation_under(&rho).unwrap();
            assert!((mean[0] - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn msem_saturates_cr_at_origin_and_doubles_at_most() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [2usize, 3] {
            let gm = gell_mann_basis(d);
            let obs = ObservableSet::new(vec![gm[0].clone(), gm[d].clone()]).unwrap();
            let rho0 = DensityMatrix::random_full_rank(d, &mut rng);
            let model = StateModel::with_canonical_basis(rho0, obs).unwrap();
            let povm = Povm::finite_haar_proxy(d, 4 * d * d, rng.random()).unwrap();
            let est = LocalEstimator::build(&model, &povm).unwrap();
            let schur = fisher::schur_restriction(&fisher::fim(&model, &povm).unwrap());

            let v0 = msem_exact(&est, model.rho0()).unwrap();
            assert!((&v0 - schur.matrix()).abs().max() < 1e-9);

            for _ in 0..20 {
                // random point of the symmetric neighborhood
                let m = model.num_targets();
                let nb = model.num_nuisance();
                let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let phi: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut s = 0.3;
                let rho = loop {
                    let th: Vec<f64> = theta.iter().map(|x| x * s).collect();
                    let ph: Vec<f64> = phi.iter().map(|x| x * s).collect();
                    let up = model.parameterize(&th, &ph).unwrap();
                    let dn = model
                        .parameterize(
                            &th.iter().map(|x| -x).collect::<Vec<_>>(),
                            &ph.iter().map(|x| -x).collect::<Vec<_>>(),
                        )
                        .unwrap();
                    if is_valid_state(&up) && is_valid_state(&dn) {
                        break DensityMatrix::new(HermitianOp::symmetrized(up.matrix().clone()))
                            .unwrap();
                    }
                    s *= 0.5;
                };
                let v = msem_exact(&est, &rho).unwrap();
                let gap = schur.matrix() * 2.0 - &v;
                assert!(
                    linalg::min_eig_sym(&gap) > -1e-9,
                    "factor-2 bound violated at d={d}"
                );
            }
        }
    }

    #[test]
    fn msem_scalar_example() {
        let model = single_z_model();
        let est = LocalEstimator::build(&model, &Povm::computational(2)).unwrap();
        let theta = 0.35;
        let rho = DensityMatrix::new(
            HermitianOp::from_real(
                2,
                &[0.5 + theta / 2.0, 0.0, 0.0, 0.5 - theta / 2.0],
            )
            .unwrap(),
        )
        .unwrap();
        let v = msem_exact(&est, &rho).unwrap();
        assert!((v[(0, 0)] - (1.0 - theta * theta)).abs() < 1e-12);
    }

    #[test]
    fn singular_fim_is_rejected() {
        // two targets but the computational basis only resolves Z
        let p = pauli_matrices();
        let obs = ObservableSet::new(vec![p[3].clone(), p[1].clone()]).unwrap();
        let model =
            StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(2), obs).unwrap();
        assert!(matches!(
            LocalEstimator::build(&model, &Povm::computational(2)),
            Err(EstimationError::SingularFim(_))
        ));
    }

    #[test]
    fn coarse_tomography_single_sample() {
        let u = DVector::from_column_slice(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let raw = coarse_tomography(&[u], 2);
        assert!((raw.matrix()[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((raw.matrix()[(1, 1)].re + 1.0).abs() < 1e-15);
    }

    #[test]
    fn regularized_estimate_is_full_rank_state() {
        let raw = HermitianOp::from_real(2, &[1.4, 0.3, 0.3, -0.4]).unwrap();
        let rho = regularize_estimate(&raw);
        assert!(rho.min_eigenvalue() > 1e-7);
        assert!((rho.as_op().trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tomography_concentrates_at_desk_scale() {
        // single spot check; the 100-seed sweep lives in the acceptance suite
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sigma = DensityMatrix::random_full_rank(2, &mut rng);
        let rho = mix_with_maximally_mixed(&sigma);
        let samples: Vec<DVector<Complex64>> = (0..4000)
            .map(|_| sample_haar_measurement_outcome(&rho, &mut rng))
            .collect();
        let raw = coarse_tomography(&samples, 2);
        let dev = linalg::op_norm_herm(&(raw.matrix() - rho.matrix()));
        assert!(dev < 0.125, "op-norm deviation {dev}");
        assert!(in_neighborhood(&rho, &regularize_estimate(&raw)));
    }

    #[test]
    fn mom_basic_values() {
        let all_same = vec![vec![1.5, -2.0]; 12];
        let out = mom_coordinatewise(&all_same, 3, 4).unwrap();
        assert_eq!(out, vec![1.5, -2.0]);

        let scalars = [0.0, 1.0, 100.0];
        let wrapped: Vec<Vec<f64>> = scalars.iter().map(|&x| vec![x]).collect();
        let out = mom_coordinatewise(&wrapped, 3, 1).unwrap();
        assert_eq!(out[0], 1.0);

        assert!(matches!(
            mom_coordinatewise(&wrapped, 2, 2),
            Err(EstimationError::CountMismatch { .. })
        ));
    }

    #[test]
    fn mom_lower_median_for_even_k() {
        let wrapped: Vec<Vec<f64>> = [4.0, 1.0, 3.0, 2.0].iter().map(|&x| vec![x]).collect();
        let out = mom_coordinatewise(&wrapped, 4, 1).unwrap();
        assert_eq!(out[0], 2.0);
    }

    #[test]
    fn mom_invariant_to_shuffles_within_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Vec<f64>> = (0..24)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let base = mom_coordinatewise(&samples, 4, 6).unwrap();
        let mut shuffled = samples.clone();
        shuffled.swap(0, 5);
        shuffled.swap(7, 10);
        shuffled.swap(18, 23);
        let out = mom_coordinatewise(&shuffled, 4, 6).unwrap();
        assert_eq!(base, out);
    }

    #[test]
    fn mom_concentration_on_gaussians() {
        use rand_distr::{Distribution, StandardNormal};
        let m = 4;
        let delta = 0.1;
        let eps = 0.2;
        let k = mom_groups(m, delta);
        let b = (4.0f64 / (eps * eps)).ceil() as usize; // 4σ²/ε² at σ = 1
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        let trials = 200;
        for _ in 0..trials {
            let samples: Vec<Vec<f64>> = (0..k * b)
                .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let out = mom_coordinatewise(&samples, k, b).unwrap();
            let radius = 2.0 / (b as f64).sqrt();
            if out.iter().all(|x| x.abs() <= radius) {
                hits += 1;
            }
        }
        assert!(hits as f64 >= (1.0 - delta) * trials as f64, "hits={hits}");
    }

    fn paulis_obs() -> ObservableSet {
        ObservableSet::complete_paulis(1)
    }

    #[test]
    fn pipeline_is_deterministic() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let config = EstimationConfig {
            p: NormIndex::Infinity,
            epsilon: 0.2,
            delta: 0.1,
            n0: 800,
            n1: 2000,
            k: None,
            seed: 99,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = DensityMatrix::random_full_rank(2, &mut rng);
        let a = run_shadow_tomography(&obs, &povm, &config, &rho).unwrap();
        let b = run_shadow_tomography(&obs, &povm, &config, &rho).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.rho0_hash, b.rho0_hash);
        assert_eq!(a.config_hash, b.config_hash);
        let recomputed = a.recompute_error(config.p).unwrap();
        assert!((recomputed - a.p_norm_error.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn unmixing_identity_on_exact_expectations() {
        // on noiseless expectations the pipeline output targets tr(O_i ρ):
        // E[ô_i] = 2(E[θ̂_i] + tr(O_i ρ0)) = 2·tr(O_i ρ_mixed) = tr(O_i ρ)
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = DensityMatrix::random_full_rank(2, &mut rng);
        let mixed = mix_with_maximally_mixed(&rho);
        let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
        let rho0 = mix_with_maximally_mixed(&rho0);
        let model = StateModel::with_canonical_basis(rho0, obs.clone()).unwrap();
        let est = LocalEstimator::build(&model, &povm).unwrap();
        let mean_theta = est.expectation_under(&mixed).unwrap();
        for (i, o) in obs.ops().iter().enumerate() {
            let out = 2.0 * (mean_theta[i] + est.offset()[i]);
            assert!((out - o.expectation(&rho)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_signal_estimates_stay_small() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let rho = DensityMatrix::maximally_mixed(2);
        let mut successes = 0;
        for seed in 0..20 {
            let config = EstimationConfig {
                p: NormIndex::Infinity,
                epsilon: 0.1,
                delta: 0.1,
                n0: 2000,
                n1: shot_budget(3.0, 3, 0.1, 0.1),
                k: None,
                seed,
            };
            let report = run_shadow_tomography(&obs, &povm, &config, &rho).unwrap();
            if report.success {
                successes += 1;
            }
        }
        assert!(successes >= 18, "successes={successes}");
    }

    #[test]
    fn oblivious_one_hot_matches_full_pipeline_expectations() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rho = DensityMatrix::random_full_rank(2, &mut rng);
        let config = EstimationConfig {
            p: NormIndex::Infinity,
            epsilon: 0.15,
            delta: 0.1,
            n0: 2000,
            n1: 6000,
            k: None,
            seed: 17,
        };
        // e_1 reveal targets tr(O_1 ρ) exactly like coordinate 1 of the
        // full pipeline; assert on expectations through the same estimator
        let report = run_oblivious(&obs, &povm, &config, &rho, &[0.0, 1.0, 0.0]).unwrap();
        let want = obs.ops()[1].expectation(&rho);
        assert!((report.estimates[0] - want).abs() < 3.0 * config.epsilon);
        assert!(report.truth.unwrap()[0] == want);
    }

    #[test]
    fn oblivious_rejects_oversized_alpha() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let rho = DensityMatrix::maximally_mixed(2);
        let config = EstimationConfig {
            p: NormIndex::Infinity,
            epsilon: 0.1,
            delta: 0.1,
            n0: 500,
            n1: 500,
            k: None,
            seed: 1,
        };
        // p = ∞ ⇒ q = 1; this α has 1-norm 1.5
        assert!(matches!(
            run_oblivious(&obs, &povm, &config, &rho, &[0.5, 0.5, 0.5]),
            Err(EstimationError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn oblivious_variance_bounded_by_quadratic_form() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rho0 = mix_with_maximally_mixed(&DensityMatrix::random_full_rank(2, &mut rng));
        let model = StateModel::with_canonical_basis(rho0, obs.clone()).unwrap();
        let est = LocalEstimator::build(&model, &povm).unwrap();
        let schur = fisher::schur_restriction(&fisher::fim(&model, &povm).unwrap());
        let alpha = [0.6, -0.3, 0.1];
        for _ in 0..10 {
            let (theta, phi) = {
                let th: Vec<f64> = (0..3).map(|_| rng.random_range(-0.15..0.15)).collect();
                (th, Vec::new())
            };
            let rho = DensityMatrix::new(HermitianOp::symmetrized(
                model.parameterize(&theta, &phi).unwrap().matrix().clone(),
            ))
            .unwrap();
            let v = msem_exact(&est, &rho).unwrap();
            let var_alpha: f64 = (0..3)
                .map(|i| (0..3).map(|j| alpha[i] * v[(i, j)] * alpha[j]).sum::<f64>())
                .sum();
            let bound: f64 = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| alpha[i] * schur.matrix()[(i, j)] * alpha[j])
                        .sum::<f64>()
                })
                .sum();
            assert!(var_alpha <= 2.0 * bound + 1e-9);
        }
    }

    #[test]
    fn distinguish_rule_boundaries() {
        assert_eq!(
            distinguish(&[0.0, 0.0], 0.1, NormIndex::Infinity),
            Hypothesis::Null
        );
        // exactly 3ε: firmly on the alternative side of the 1.5ε threshold
        assert_eq!(
            distinguish(&[0.3], 0.1, NormIndex::Infinity),
            Hypothesis::Alternative
        );
        // exactly at the 1.5ε threshold (binary-exact choice): the tie goes
        // to the alternative
        assert_eq!(
            distinguish(&[0.75], 0.5, NormIndex::Infinity),
            Hypothesis::Alternative
        );
        assert_eq!(
            distinguish(&[0.749999], 0.5, NormIndex::Infinity),
            Hypothesis::Null
        );
    }

    #[test]
    fn distinguish_planted_states() {
        let obs = paulis_obs();
        let povm = Povm::pauli_basis_uniform(1);
        let rho0 = DensityMatrix::maximally_mixed(2);
        let basis = build_dual_basis(&obs).unwrap();
        let model = StateModel::new(rho0.clone(), basis, obs.clone()).unwrap();
        let epsilon = 0.05;
        let mut correct = 0;
        let trials = 40;
        for seed in 0..trials {
            let config = EstimationConfig {
                p: NormIndex::Infinity,
                epsilon,
                delta: 0.1,
                n0: 0,
                n1: shot_budget(3.0, 3, 0.1, epsilon),
                k: None,
                seed,
            };
            let planted = seed % 2 == 0;
            let state = if planted {
                let theta = [3.0 * epsilon, 0.0, 0.0];
                DensityMatrix::new(HermitianOp::symmetrized(
                    model.parameterize(&theta, &[]).unwrap().matrix().clone(),
                ))
                .unwrap()
            } else {
                rho0.clone()
            };
            let verdict = run_distinguish(&obs, &rho0, &povm, &config, &state).unwrap();
            let want = if planted {
                Hypothesis::Alternative
            } else {
                Hypothesis::Null
            };
            if verdict == want {
                correct += 1;
            }
        }
        assert!(correct >= 36, "correct={correct}/{trials}");
    }
}
