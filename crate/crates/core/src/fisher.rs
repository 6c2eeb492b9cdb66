//! Fisher information matrices for the linear state family, the
//! Schur-complement restriction (I⁻¹)_AA, the block-diagonalizing basis
//! transform, χ² divergence, and the c-copy / adaptive-strategy identities.
//!
//! Convention: with ρ_{θ,φ} = ρ0 + (1/d)Σ θ_a Q_a + (1/d)Σ φ_b T_b the
//! outcome-probability derivatives are ∂_c p_x = tr(M_x R_c)/d, so
//!
//!   I(ρ0, M)_{cc'} = Σ_{x : p_x > 0} tr(M_x R_c)·tr(M_x R_c') / (d²·p_x).
//!
//! This is the unique scaling under which the finite χ² identity
//! χ²_M(ρ_{θ,φ} ‖ ρ0) = (θ,φ)ᵀ I(ρ0,M) (θ,φ), the CR bound, and the local
//! estimator are mutually consistent. [`ScoreScaling::Raw`] exposes the
//! d²-scaled variant for negative controls.

use crate::linalg::{self, pairwise_tree_sum, pinv_sym};
use crate::measurement::{MeasurementError, Povm};
use crate::operators::{DensityMatrix, HermitianOp, OperatorError, StateModel};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Outcomes with probability at or below this are treated as off-support.
pub const PROB_FLOOR: f64 = 1e-14;
/// Scores larger than this on an off-support outcome make the FIM undefined.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FisherError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max deviation {0:.3e})")]
    NotSymmetric(f64),

    #[error(
        "outcome {index} has probability {prob:.3e} but score {score:.3e}; \
         the Fisher information is undefined at this reference state"
    )]
    SingularOutcome { index: usize, prob: f64, score: f64 },

    #[error("support violation at outcome {index}: q = {q:.3e} while p0 = {p0:.3e}")]
    SupportViolation { index: usize, q: f64, p0: f64 },

    #[error("adaptive tree invalid: {0}")]
    InvalidTree(String),

    #[error(transparent)]
    Measurement(#[from] MeasurementError),

    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Score scaling for the FIM sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScoreScaling {
    /// tr(M_x R_c)/d — consistent with the parameter derivatives.
    Derivative,
    /// tr(M_x R_c) — the d²-scaled variant; breaks the χ² identity.
    Raw,
}

/// The Fisher information matrix of a (model, measurement) pair over the
/// full index set A ∪ B, with the A/B split recorded.
#[derive(Debug, Clone, Serialize)]
pub struct FisherInfo {
    matrix: Vec<Vec<f64>>,
    split: (usize, usize),
    dim: usize,
    model_hash: String,
    povm_hash: String,
    #[serde(skip)]
    mat: DMatrix<f64>,
}

impl FisherInfo {
    /// Wrap an externally supplied FIM (e.g. deserialized or synthetic),
    /// checking the symmetric-PSD invariants.
    pub fn from_matrix(
        mat: DMatrix<f64>,
        split: (usize, usize),
        dim: usize,
    ) -> Result<Self, FisherError> {
        let n = split.0 + split.1;
        if mat.nrows() != n || mat.ncols() != n {
            return Err(FisherError::DimensionMismatch {
                expected: n,
                got: mat.nrows(),
            });
        }
        let asym = (&mat - mat.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(FisherError::NotSymmetric(asym));
        }
        Ok(Self::assemble(
            mat,
            split,
            dim,
            String::new(),
            String::new(),
        ))
    }

    fn assemble(
        mat: DMatrix<f64>,
        split: (usize, usize),
        dim: usize,
        model_hash: String,
        povm_hash: String,
    ) -> Self {
        let n = mat.nrows();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| mat[(i, j)]).collect())
            .collect();
        Self {
            matrix,
            split,
            dim,
            model_hash,
            povm_hash,
            mat,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// (|A|, |B|).
    pub fn split(&self) -> (usize, usize) {
        self.split
    }

    pub fn num_targets(&self) -> usize {
        self.split.0
    }

    pub fn num_nuisance(&self) -> usize {
        self.split.1
    }

    pub fn total(&self) -> usize {
        self.split.0 + self.split.1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_aa(&self) -> DMatrix<f64> {
        self.mat.view((0, 0), (self.split.0, self.split.0)).into_owned()
    }

    pub fn block_ab(&self) -> DMatrix<f64> {
        self.mat
            .view((0, self.split.0), (self.split.0, self.split.1))
            .into_owned()
    }

    pub fn block_bb(&self) -> DMatrix<f64> {
        self.mat
            .view((self.split.0, self.split.0), (self.split.1, self.split.1))
            .into_owned()
    }

    /// (θ,φ)ᵀ I (θ,φ).
    pub fn quadratic_form(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let v = DVector::from_fn(self.total(), |c, _| {
            if c < self.split.0 {
                theta[c]
            } else {
                phi[c - self.split.0]
            }
        });
        (v.transpose() * &self.mat * v)[(0, 0)]
    }

    /// Congruence transform Jᵀ I J with J = [[𝟙, 0], [C1, C2]]: the FIM of
    /// the re-based dual basis (Q + T·C1, T·C2).
    pub fn congruence(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> FisherInfo {
        let (m, nb) = self.split;
        let mut j = DMatrix::zeros(m + nb, m + nb);
        for i in 0..m {
            j[(i, i)] = 1.0;
        }
        for r in 0..nb {
            for c in 0..m {
                j[(m + r, c)] = c1[(r, c)];
            }
            for c in 0..nb {
                j[(m + r, m + c)] = c2[(r, c)];
            }
        }
        let mat = j.transpose() * &self.mat * &j;
        FisherInfo::assemble(
            mat,
            self.split,
            self.dim,
            self.model_hash.clone(),
            self.povm_hash.clone(),
        )
    }
}

/// The inverse Schur complement (I⁻¹)_AA = (I_AA − I_AB·I_BB⁺·I_BA)⁻¹,
/// taken on its support when rank-deficient.
#[derive(Debug, Clone, Serialize)]
pub struct SchurRestriction {
    matrix: Vec<Vec<f64>>,
    pub support_rank: usize,
    #[serde(skip)]
    mat: DMatrix<f64>,
}

impl SchurRestriction {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Diagonal entries s_a: the per-target variance floor.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.mat.nrows()).map(|a| self.mat[(a, a)]).collect()
    }
}

/// Fisher information of measuring `povm` on the model's state family at ρ0.
pub fn fim(model: &StateModel, povm: &Povm) -> Result<FisherInfo, FisherError> {
    fim_with_scaling(model, povm, ScoreScaling::Derivative)
}

pub fn fim_with_scaling(
    model: &StateModel,
    povm: &Povm,
    scaling: ScoreScaling,
) -> Result<FisherInfo, FisherError> {
    if povm.copies() != 1 || povm.dim() != model.dim() {
        return Err(FisherError::DimensionMismatch {
            expected: model.dim(),
            got: povm.total_dim(),
        });
    }
    let probs = povm.outcome_probs(model.rho0())?;
    let directions: Vec<&HermitianOp> = model.basis().all_ops().collect();
    let scale = match scaling {
        ScoreScaling::Derivative => 1.0 / model.dim() as f64,
        ScoreScaling::Raw => 1.0,
    };
    let scored: Vec<(usize, f64, Vec<f64>)> = povm
        .elements()
        .par_iter()
        .enumerate()
        .map(|(x, el)| {
            let scores: Vec<f64> = directions.iter().map(|r| el.hs_product(r) * scale).collect();
            (x, probs[x], scores)
        })
        .collect();
    assemble_fim(
        scored,
        (model.num_targets(), model.num_nuisance()),
        model.dim(),
        model.content_hash(),
        povm.content_hash(),
    )
}

fn assemble_fim(
    scored: Vec<(usize, f64, Vec<f64>)>,
    split: (usize, usize),
    dim: usize,
    model_hash: String,
    povm_hash: String,
) -> Result<FisherInfo, FisherError> {
    let n = split.0 + split.1;
    let mut contributions: Vec<DMatrix<f64>> = Vec::new();
    // fixed block size keeps the summation order independent of threading
    for chunk in scored.chunks(64) {
        let mut block = DMatrix::zeros(n, n);
        for (x, p, scores) in chunk {
            if *p <= PROB_FLOOR {
                let worst = scores
                    .iter()
                    .map(|s| (s * dim as f64).abs())
                    .fold(0.0f64, f64::max);
                if worst > SCORE_FLOOR {
                    return Err(FisherError::SingularOutcome {
                        index: *x,
                        prob: *p,
                        score: worst,
                    });
                }
                continue;
            }
            let inv_p = 1.0 / p;
            for i in 0..n {
                let si = scores[i] * inv_p;
                for j in 0..n {
                    block[(i, j)] += si * scores[j];
                }
            }
        }
        contributions.push(block);
    }
    let mat = pairwise_tree_sum(contributions, n, n);
    Ok(FisherInfo::assemble(mat, split, dim, model_hash, povm_hash))
}

/// (I_AA − I_AB·I_BB⁺·I_BA)⁻¹ on its support.
pub fn schur_restriction(info: &FisherInfo) -> SchurRestriction {
    let s = schur_complement(info);
    let (mat, support_rank) = pinv_sym(&s);
    let m = mat.nrows();
    let matrix = (0..m)
        .map(|i| (0..m).map(|j| mat[(i, j)]).collect())
        .collect();
    SchurRestriction {
        matrix,
        support_rank,
        mat,
    }
}

/// The Schur complement I_AA − I_AB·I_BB⁺·I_BA itself.
pub fn schur_complement(info: &FisherInfo) -> DMatrix<f64> {
    let aa = info.block_aa();
    if info.num_nuisance() == 0 {
        return aa;
    }
    let ab = info.block_ab();
    let (bb_pinv, _) = pinv_sym(&info.block_bb());
    let s = &aa - &ab * &bb_pinv * ab.transpose();
    (&s + s.transpose()) * 0.5
}

/// C1 = −I_BB⁺·I_BA: the transform (Q+T·C1, T) makes the FIM block-diagonal.
pub fn block_diag_c1(info: &FisherInfo) -> DMatrix<f64> {
    let (m, nb) = info.split();
    if nb == 0 {
        return DMatrix::zeros(0, m);
    }
    let (bb_pinv, _) = pinv_sym(&info.block_bb());
    -(bb_pinv * info.block_ab().transpose())
}

/// χ²(q‖p0) = Σ_x p0_x (q_x/p0_x − 1)² of the outcome distributions of ρ
/// and ρ0 under M. Off-support outcomes of ρ0 must also be off-support
/// for ρ, else the divergence is infinite.
pub fn chi2_divergence(
    povm: &Povm,
    rho: &DensityMatrix,
    rho0: &DensityMatrix,
) -> Result<f64, FisherError> {
    let q = povm.outcome_probs(rho)?;
    let p0 = povm.outcome_probs(rho0)?;
    let mut total = 0.0;
    for (index, (&qx, &px)) in q.iter().zip(&p0).enumerate() {
        if px <= PROB_FLOOR {
            if qx <= PROB_FLOOR {
                continue;
            }
            return Err(FisherError::SupportViolation { index, q: qx, p0: px });
        }
        let ratio = qx / px - 1.0;
        total += px * ratio * ratio;
    }
    Ok(total)
}

/// Fisher information of a c-copy measurement on ρ_{θ,φ}^{⊗c} at the
/// origin, over the single-copy index set A ∪ B. The scores decompose over
/// copies: ∂_c p_s = Σ_i tr(G_s^{[i]} R_c)/d.
pub fn fim_c_copy(model: &StateModel, povm: &Povm) -> Result<FisherInfo, FisherError> {
    if povm.dim() != model.dim() {
        return Err(FisherError::DimensionMismatch {
            expected: model.dim(),
            got: povm.dim(),
        });
    }
    if povm.copies() == 1 {
        return fim(model, povm);
    }
    let c = povm.copies() as usize;
    let rho0 = model.rho0();
    let reductions: Vec<Povm> = (0..c)
        .map(|slot| povm.reduce_c_copy(rho0, slot))
        .collect::<Result<_, _>>()?;
    let joint_rho = rho0.tensor_power(povm.copies());
    let probs = povm.outcome_probs(&joint_rho)?;
    let directions: Vec<&HermitianOp> = model.basis().all_ops().collect();
    let inv_d = 1.0 / model.dim() as f64;
    let scored: Vec<(usize, f64, Vec<f64>)> = (0..povm.len())
        .into_par_iter()
        .map(|s| {
            let scores: Vec<f64> = directions
                .iter()
                .map(|r| {
                    reductions
                        .iter()
                        .map(|g| g.elements()[s].hs_product(r) * inv_d)
                        .sum()
                })
                .collect();
            (s, probs[s], scores)
        })
        .collect();
    assemble_fim(
        scored,
        (model.num_targets(), model.num_nuisance()),
        model.dim(),
        model.content_hash(),
        povm.content_hash(),
    )
}

/// Both sides of the first-order c-copy identity: the |S| = 1 term of the
/// c-copy χ² expansion equals the single-copy quadratic form of the slot-0
/// reduction G.
pub fn c_copy_first_order(
    povm: &Povm,
    model: &StateModel,
    theta: &[f64],
    phi: &[f64],
) -> Result<(f64, f64), FisherError> {
    let c = povm.copies();
    if c < 1 || povm.dim() != model.dim() {
        return Err(FisherError::DimensionMismatch {
            expected: model.dim(),
            got: povm.dim(),
        });
    }
    // A = (1/d)·(θ·Q + φ·T), placed on the first copy
    let inv_d = 1.0 / model.dim() as f64;
    let mut a = HermitianOp::zeros(model.dim());
    for (i, &th) in theta.iter().enumerate() {
        a = a.add_scaled(th * inv_d, &model.basis().q_ops()[i]);
    }
    for (b, &ph) in phi.iter().enumerate() {
        a = a.add_scaled(ph * inv_d, &model.basis().t_ops()[b]);
    }
    let lhs = {
        let others = model.rho0().tensor_power(c - 1);
        let placed = if c == 1 {
            a.clone()
        } else {
            a.kron(others.as_op())
        };
        let joint_rho = model.rho0().tensor_power(c);
        let mut acc = 0.0;
        for el in povm.elements() {
            let q = el.expectation(&joint_rho);
            if q <= PROB_FLOOR {
                continue;
            }
            let num = el.hs_product(&placed);
            acc += num * num / q;
        }
        acc
    };
    let g = povm.reduce_c_copy(model.rho0(), 0)?;
    let info = fim(model, &g)?;
    let rhs = info.quadratic_form(theta, phi);
    Ok((lhs, rhs))
}

/// Result of the c-copy PSD domination check c²·I(ρ0,G) ⪰ I(ρ0^{⊗c},M)
/// with G the mixed reduction of M.
#[derive(Debug, Clone, Serialize)]
pub struct DominationCheck {
    pub holds: bool,
    /// Smallest eigenvalue of c²·I(ρ0,G) − I(ρ0^{⊗c},M).
    pub margin: f64,
}

/// Tolerance on the domination margin.
pub const DOMINATION_TOL: f64 = 1e-8;

pub fn c_copy_domination(povm: &Povm, model: &StateModel) -> Result<DominationCheck, FisherError> {
    let c = povm.copies() as f64;
    let mixed = povm.mixed_reduction(model.rho0())?;
    let single = fim(model, &mixed)?;
    let joint = fim_c_copy(model, povm)?;
    let gap = single.matrix() * (c * c) - joint.matrix();
    let margin = linalg::min_eig_sym(&gap);
    Ok(DominationCheck {
        holds: margin >= -DOMINATION_TOL,
        margin,
    })
}

/// A depth-N adaptive single-copy strategy: each node measures `povm` and
/// branches per outcome; `prob` is the probability of reaching the node
/// under ρ0 (1 at the root). Leaves have no children.
#[derive(Debug, Clone)]
pub struct AdaptiveTree {
    pub prob: f64,
    pub povm: Povm,
    pub children: Vec<AdaptiveTree>,
}

impl AdaptiveTree {
    pub fn leaf_level(povm: Povm) -> Self {
        Self {
            prob: 1.0,
            povm,
            children: Vec::new(),
        }
    }

    pub fn depth(&self) -> u32 {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    fn validate(&self, rho0: &DensityMatrix, depth_left: u32) -> Result<(), FisherError> {
        if self.povm.copies() != 1 || self.povm.dim() != rho0.dim() {
            return Err(FisherError::InvalidTree(
                "nodes must hold single-copy POVMs of the model dimension".into(),
            ));
        }
        if self.children.is_empty() {
            if depth_left != 1 {
                return Err(FisherError::InvalidTree(
                    "all leaves must sit at the same depth".into(),
                ));
            }
            return Ok(());
        }
        if self.children.len() != self.povm.len() {
            return Err(FisherError::InvalidTree(format!(
                "node has {} children but {} outcomes",
                self.children.len(),
                self.povm.len()
            )));
        }
        let probs = self.povm.outcome_probs(rho0)?;
        for (x, child) in self.children.iter().enumerate() {
            let want = self.prob * probs[x];
            if (child.prob - want).abs() > 1e-9 {
                return Err(FisherError::InvalidTree(format!(
                    "branch probability {} does not match {} at outcome {x}",
                    child.prob, want
                )));
            }
            child.validate(rho0, depth_left - 1)?;
        }
        Ok(())
    }
}

/// Flatten a depth-N adaptive strategy into the single-copy POVM
/// M̃ = {(1/N)·p_history·M^{(r)}_{history,x}}. N·I(ρ0, M̃) equals the FIM
/// of the full adaptive strategy on ρ0^{⊗N}.
pub fn flatten_adaptive(tree: &AdaptiveTree, rho0: &DensityMatrix) -> Result<Povm, FisherError> {
    if (tree.prob - 1.0).abs() > 1e-9 {
        return Err(FisherError::InvalidTree(format!(
            "root probability must be 1, got {}",
            tree.prob
        )));
    }
    let depth = tree.depth();
    tree.validate(rho0, depth)?;
    let weight = 1.0 / depth as f64;
    let mut elements = Vec::new();
    let mut labels = Vec::new();
    let mut stack: Vec<(&AdaptiveTree, String)> = vec![(tree, String::new())];
    while let Some((node, prefix)) = stack.pop() {
        for (x, el) in node.povm.elements().iter().enumerate() {
            elements.push(el.scale(weight * node.prob));
            labels.push(format!("{prefix}{x}"));
        }
        for (x, child) in node.children.iter().enumerate() {
            stack.push((child, format!("{prefix}{x}.")));
        }
    }
    Ok(Povm::new(rho0.dim(), 1, elements, labels)?)
}

/// The explicit N-copy POVM of an adaptive strategy: one element
/// M^{(1)}_{x1} ⊗ M^{(2)}_{x1,x2} ⊗ … per leaf path.
pub fn adaptive_joint_povm(tree: &AdaptiveTree) -> Result<Povm, FisherError> {
    let depth = tree.depth();
    let dim = tree.povm.dim();
    let mut elements = Vec::new();
    let mut labels = Vec::new();
    collect_paths(
        tree,
        &HermitianOp::identity(1),
        "",
        depth,
        &mut elements,
        &mut labels,
    )?;
    Ok(Povm::new(dim, depth, elements, labels)?)
}

fn collect_paths(
    node: &AdaptiveTree,
    acc: &HermitianOp,
    label: &str,
    depth_left: u32,
    elements: &mut Vec<HermitianOp>,
    labels: &mut Vec<String>,
) -> Result<(), FisherError> {
    if !node.children.is_empty() && node.children.len() != node.povm.len() {
        return Err(FisherError::InvalidTree(
            "child count must match outcome count".into(),
        ));
    }
    for (x, el) in node.povm.elements().iter().enumerate() {
        let grown = acc.kron(el);
        let path = if label.is_empty() {
            format!("{x}")
        } else {
            format!("{label},{x}")
        };
        if node.children.is_empty() {
            if depth_left != 1 {
                return Err(FisherError::InvalidTree(
                    "all leaves must sit at the same depth".into(),
                ));
            }
            elements.push(grown);
            labels.push(path);
        } else {
            collect_paths(&node.children[x], &grown, &path, depth_left - 1, elements, labels)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{
        build_dual_basis, gell_mann_basis, is_valid_state, mix_with_maximally_mixed,
        pauli_matrices, ObservableSet,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zxy_model(rho0: DensityMatrix) -> StateModel {
        let p = pauli_matrices();
        let obs = ObservableSet::new(vec![p[3].clone(), p[1].clone(), p[2].clone()]).unwrap();
        StateModel::with_canonical_basis(rho0, obs).unwrap()
    }

    fn random_gm_model<R: Rng>(d: usize, m: usize, rng: &mut R) -> StateModel {
        let gm = gell_mann_basis(d);
        let obs: Vec<HermitianOp> = (0..m)
            .map(|_| {
                let mut op = HermitianOp::zeros(d);
                for g in &gm {
                    op = op.add_scaled(rng.random_range(-1.0..1.0), g);
                }
                op
            })
            .collect();
        let obs = ObservableSet::new(obs).unwrap();
        StateModel::with_canonical_basis(DensityMatrix::random_full_rank(d, rng), obs).unwrap()
    }

    /// Shrink (θ, φ) until ρ_{θ,φ} and its reflection are valid states.
    fn valid_params<R: Rng>(
        model: &StateModel,
        rng: &mut R,
        scale0: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let m = model.num_targets();
        let nb = model.num_nuisance();
        let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = scale0;
        loop {
            let th: Vec<f64> = theta.iter().map(|x| x * s).collect();
            let ph: Vec<f64> = phi.iter().map(|x| x * s).collect();
            let up = model.parameterize(&th, &ph).unwrap();
            let neg_th: Vec<f64> = th.iter().map(|x| -x).collect();
            let neg_ph: Vec<f64> = ph.iter().map(|x| -x).collect();
            let down = model.parameterize(&neg_th, &neg_ph).unwrap();
            if is_valid_state(&up) && is_valid_state(&down) {
                return (th, ph);
            }
            s *= 0.5;
        }
    }

    #[test]
    fn fim_of_computational_measurement() {
        let model = zxy_model(DensityMatrix::maximally_mixed(2));
        let info = fim(&model, &Povm::computational(2)).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((info.matrix() - want).abs().max() < 1e-12);
    }

    #[test]
    fn fim_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for d in [2usize, 3] {
            let model = random_gm_model(d, 2, &mut rng);
            let povm = Povm::finite_haar_proxy(d, 3 * d * d, rng.random()).unwrap();
            let info = fim(&model, &povm).unwrap();
            let asym = (info.matrix() - info.matrix().transpose()).abs().max();
            assert!(asym < 1e-10);
            assert!(linalg::min_eig_sym(info.matrix()) > -1e-9);
        }
    }

    #[test]
    fn fim_is_additive_under_povm_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = random_gm_model(2, 2, &mut rng);
        let m1 = Povm::computational(2);
        let m2 = Povm::sic_qubit();
        let mut elements: Vec<HermitianOp> =
            m1.elements().iter().map(|e| e.scale(0.5)).collect();
        elements.extend(m2.elements().iter().map(|e| e.scale(0.5)));
        let labels = (0..elements.len()).map(|x| format!("u{x}")).collect();
        let union = Povm::new(2, 1, elements, labels).unwrap();
        let lhs = fim(&model, &union).unwrap();
        let rhs = fim(&model, &m1).unwrap().matrix() * 0.5 + fim(&model, &m2).unwrap().matrix() * 0.5;
        assert!((lhs.matrix() - rhs).abs().max() < 1e-10);
    }

    #[test]
    fn singular_outcome_is_reported() {
        let p = pauli_matrices();
        let obs = ObservableSet::new(vec![p[3].clone()]).unwrap();
        let a = 2e-12;
        let rho0 = DensityMatrix::new(
            HermitianOp::from_real(2, &[1.0 - a, 0.0, 0.0, a]).unwrap(),
        )
        .unwrap();
        let model = StateModel::with_canonical_basis(rho0, obs).unwrap();
        let tiny = 1e-3;
        let m0 = HermitianOp::from_real(2, &[0.0, 0.0, 0.0, tiny]).unwrap();
        let m1 = HermitianOp::identity(2).sub(&m0);
        let povm = Povm::new(2, 1, vec![m0, m1], vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(
            fim(&model, &povm),
            Err(FisherError::SingularOutcome { .. })
        ));
    }

    #[test]
    fn schur_restriction_without_nuisance_is_plain_inverse() {
        let model = zxy_model(DensityMatrix::maximally_mixed(2));
        let povm = Povm::sic_qubit();
        let info = fim(&model, &povm).unwrap();
        assert_eq!(info.num_nuisance(), 0);
        let schur = schur_restriction(&info);
        let prod = info.matrix() * schur.matrix();
        assert!((prod - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-8);
    }

    #[test]
    fn c1_block_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let model = random_gm_model(3, 3, &mut rng);
            let povm = Povm::finite_haar_proxy(3, 27, rng.random()).unwrap();
            let info = fim(&model, &povm).unwrap();
            let c1 = block_diag_c1(&info);
            let c2 = DMatrix::identity(info.num_nuisance(), info.num_nuisance());
            let transformed = info.congruence(&c1, &c2);
            assert!(transformed.block_ab().abs().max() < 1e-9);
        }
    }

    #[test]
    fn congruence_matches_fresh_fim_in_transformed_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let model = random_gm_model(2, 1, &mut rng);
        let povm = Povm::sic_qubit();
        let info = fim(&model, &povm).unwrap();
        let nb = model.num_nuisance();
        let c1 = DMatrix::from_fn(nb, 1, |_, _| rng.random_range(-0.5..0.5));
        let c2 = DMatrix::from_fn(nb, nb, |i, j| {
            if i == j {
                1.2
            } else {
                rng.random_range(-0.2..0.2)
            }
        });
        let rebased = model
            .basis()
            .transform(&c1, &c2)
            .unwrap();
        let model2 = StateModel::new(
            model.rho0().clone(),
            rebased,
            model.observables().clone(),
        )
        .unwrap();
        let fresh = fim(&model2, &povm).unwrap();
        let predicted = info.congruence(&c1, &c2);
        assert!((fresh.matrix() - predicted.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn schur_restriction_is_basis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = random_gm_model(3, 2, &mut rng);
        let povm = Povm::finite_haar_proxy(3, 30, 4).unwrap();
        let base = schur_restriction(&fim(&model, &povm).unwrap());
        let nb = model.num_nuisance();
        for _ in 0..10 {
            let c1 = DMatrix::from_fn(nb, 2, |_, _| rng.random_range(-1.0..1.0));
            let c2 = DMatrix::from_fn(nb, nb, |i, j| {
                if i == j {
                    1.0 + rng.random_range(0.1..0.6)
                } else {
                    rng.random_range(-0.25..0.25)
                }
            });
            let rebased = model.basis().transform(&c1, &c2).unwrap();
            let model2 = StateModel::new(
                model.rho0().clone(),
                rebased,
                model.observables().clone(),
            )
            .unwrap();
            let other = schur_restriction(&fim(&model2, &povm).unwrap());
            assert!((base.matrix() - other.matrix()).abs().max() < 1e-8);
        }
    }

    #[test]
    fn chi2_zero_at_reference() {
        let rho0 = DensityMatrix::maximally_mixed(2);
        let povm = Povm::sic_qubit();
        assert!(chi2_divergence(&povm, &rho0, &rho0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn chi2_hand_value() {
        let rho0 = DensityMatrix::maximally_mixed(2);
        let rho = DensityMatrix::new(
            HermitianOp::from_real(2, &[0.65, 0.0, 0.0, 0.35]).unwrap(),
        )
        .unwrap();
        let chi2 = chi2_divergence(&Povm::computational(2), &rho, &rho0).unwrap();
        assert!((chi2 - 0.09).abs() < 1e-12);
    }

    #[test]
    fn chi2_equals_quadratic_form_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for d in [2usize, 3] {
            for _ in 0..20 {
                let model = random_gm_model(d, 2, &mut rng);
                let povm = Povm::random_naimark(d, d * d, rng.random());
                let (theta, phi) = valid_params(&model, &mut rng, 0.3);
                let rho = DensityMatrix::new(HermitianOp::symmetrized(
                    model.parameterize(&theta, &phi).unwrap().matrix().clone(),
                ))
                .unwrap();
                let chi2 = chi2_divergence(&povm, &rho, model.rho0()).unwrap();
                let quad = fim(&model, &povm).unwrap().quadratic_form(&theta, &phi);
                let denom = quad.abs().max(1e-12);
                assert!(
                    ((chi2 - quad) / denom).abs() < 1e-9,
                    "chi2={chi2} quad={quad}"
                );
            }
        }
    }

    #[test]
    fn support_violation_detected() {
        // rho0 concentrated on |0>, rho has weight on |1>
        let eps = 0.0;
        let rho0 = DensityMatrix::new(
            HermitianOp::from_real(2, &[1.0 - eps, 0.0, 0.0, eps]).unwrap(),
        )
        .unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        assert!(matches!(
            chi2_divergence(&Povm::computational(2), &rho, &rho0),
            Err(FisherError::SupportViolation { .. })
        ));
    }

    #[test]
    fn mixing_at_most_doubles_the_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for _ in 0..25 {
            let d = 2;
            let gm = gell_mann_basis(d);
            let obs = ObservableSet::new(vec![gm[0].clone(), gm[2].clone()]).unwrap();
            let sigma = DensityMatrix::random_full_rank(d, &mut rng);
            let mixed = mix_with_maximally_mixed(&sigma);
            let basis = build_dual_basis(&obs).unwrap();
            let model_s = StateModel::new(sigma, basis.clone(), obs.clone()).unwrap();
            let model_m = StateModel::new(mixed, basis, obs.clone()).unwrap();
            let povm = Povm::random_naimark(d, 4, rng.random());
            let info_s = fim(&model_s, &povm).unwrap();
            let info_m = fim(&model_m, &povm).unwrap();
            let theta: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let phi: Vec<f64> = (0..1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = info_m.quadratic_form(&theta, &phi);
            let rhs = info_s.quadratic_form(&theta, &phi);
            assert!(lhs <= 2.0 * rhs + 1e-9, "lhs={lhs} rhs={rhs}");
        }
    }

    #[test]
    fn c_copy_first_order_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in [2usize, 3] {
            for _ in 0..10 {
                let model = random_gm_model(d, 2, &mut rng);
                let povm = Povm::random_joint(d, 2, d * d, rng.random());
                let (theta, phi) = valid_params(&model, &mut rng, 0.2);
                let (lhs, rhs) = c_copy_first_order(&povm, &model, &theta, &phi).unwrap();
                assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
            }
        }
    }

    #[test]
    fn c_copy_first_order_zero_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let model = random_gm_model(2, 1, &mut rng);
        let povm = Povm::random_joint(2, 2, 4, 3);
        let (lhs, rhs) = c_copy_first_order(&povm, &model, &[0.0], &[0.0, 0.0]).unwrap();
        assert!(lhs.abs() < 1e-15 && rhs.abs() < 1e-15);
    }

    #[test]
    fn c_copy_first_order_product_measurement() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = random_gm_model(2, 2, &mut rng);
        let povm = Povm::sic_qubit().tensor_power(2);
        let (theta, phi) = valid_params(&model, &mut rng, 0.2);
        let (lhs, rhs) = c_copy_first_order(&povm, &model, &theta, &phi).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn single_copy_domination_is_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let model = random_gm_model(2, 2, &mut rng);
        let povm = Povm::sic_qubit();
        // mixed reduction of a 1-copy POVM is the POVM itself
        let check = c_copy_domination(&povm, &model).unwrap();
        assert!(check.holds);
        assert!(check.margin.abs() < 1e-9);
    }

    #[test]
    fn two_copy_domination_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for d in [2usize, 3] {
            for _ in 0..10 {
                let model = random_gm_model(d, 2, &mut rng);
                let povm = Povm::random_joint(d, 2, d * d + 1, rng.random());
                let check = c_copy_domination(&povm, &model).unwrap();
                assert!(check.holds, "margin {}", check.margin);
            }
        }
    }

    #[test]
    fn bell_measurement_domination() {
        // Bell basis on two qubits
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let vecs = [
            [s, 0.0, 0.0, s],
            [s, 0.0, 0.0, -s],
            [0.0, s, s, 0.0],
            [0.0, s, -s, 0.0],
        ];
        let elements: Vec<HermitianOp> = vecs
            .iter()
            .map(|v| {
                let col = nalgebra::DVector::from_iterator(
                    4,
                    v.iter().map(|&x| crate::Complex64::new(x, 0.0)),
                );
                HermitianOp::projector(&col)
            })
            .collect();
        let labels = (0..4).map(|x| format!("bell{x}")).collect();
        let povm = Povm::new(2, 2, elements, labels).unwrap();
        let model = zxy_model(DensityMatrix::maximally_mixed(2));
        let check = c_copy_domination(&povm, &model).unwrap();
        assert!(check.holds, "margin {}", check.margin);
    }

    fn constant_depth2_tree(first: Povm, second: Povm, rho0: &DensityMatrix) -> AdaptiveTree {
        let probs = first.outcome_probs(rho0).unwrap();
        let children = probs
            .iter()
            .map(|&p| AdaptiveTree {
                prob: p,
                povm: second.clone(),
                children: Vec::new(),
            })
            .collect();
        AdaptiveTree {
            prob: 1.0,
            povm: first,
            children,
        }
    }

    #[test]
    fn flatten_depth_one_is_identity() {
        let rho0 = DensityMatrix::maximally_mixed(2);
        let tree = AdaptiveTree::leaf_level(Povm::sic_qubit());
        let flat = flatten_adaptive(&tree, &rho0).unwrap();
        assert_eq!(flat.len(), 4);
        for (a, b) in flat.elements().iter().zip(Povm::sic_qubit().elements()) {
            assert!((a.matrix() - b.matrix()).map(|z| z.norm()).max() < 1e-15);
        }
    }

    #[test]
    fn flatten_rejects_wrong_probabilities() {
        let rho0 = DensityMatrix::maximally_mixed(2);
        let first = Povm::computational(2);
        let mut tree = constant_depth2_tree(first, Povm::sic_qubit(), &rho0);
        tree.children[0].prob = 0.9;
        assert!(matches!(
            flatten_adaptive(&tree, &rho0),
            Err(FisherError::InvalidTree(_))
        ));
    }

    #[test]
    fn flatten_independent_depth2_adds_fims() {
        let rho0 = DensityMatrix::maximally_mixed(2);
        let model = zxy_model(rho0.clone());
        let m1 = Povm::computational(2);
        let m2 = Povm::sic_qubit();
        let tree = constant_depth2_tree(m1.clone(), m2.clone(), &rho0);
        let flat = flatten_adaptive(&tree, &rho0).unwrap();
        let i_flat = fim(&model, &flat).unwrap();
        let want = fim(&model, &m1).unwrap().matrix() + fim(&model, &m2).unwrap().matrix();
        assert!((i_flat.matrix() * 2.0 - want).abs().max() < 1e-9);
    }

    #[test]
    fn flatten_matches_joint_fim_for_adaptive_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
        let model = zxy_model(rho0.clone());

        // depth 2: measure X basis, then Z or Y basis depending on outcome
        let paulis = Povm::pauli_basis_uniform(1);
        let _ = paulis;
        let x_basis = basis_povm(0);
        let z_basis = Povm::computational(2);
        let y_basis = basis_povm(1);
        let probs = x_basis.outcome_probs(&rho0).unwrap();
        let tree = AdaptiveTree {
            prob: 1.0,
            povm: x_basis,
            children: vec![
                AdaptiveTree {
                    prob: probs[0],
                    povm: z_basis,
                    children: Vec::new(),
                },
                AdaptiveTree {
                    prob: probs[1],
                    povm: y_basis,
                    children: Vec::new(),
                },
            ],
        };
        let flat = flatten_adaptive(&tree, &rho0).unwrap();
        let joint = adaptive_joint_povm(&tree).unwrap();
        let lhs = fim(&model, &flat).unwrap().matrix() * 2.0;
        let rhs = fim_c_copy(&model, &joint).unwrap();
        assert!((lhs - rhs.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn flatten_matches_joint_fim_depth3() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
        let model = zxy_model(rho0.clone());
        let choices = [Povm::computational(2), basis_povm(0), basis_povm(1)];
        // genuinely adaptive depth-3 tree: the measurement at depth r+1
        // depends on the outcome at depth r
        fn grow(
            rho0: &DensityMatrix,
            prob: f64,
            level: u32,
            pick: usize,
            choices: &[Povm; 3],
        ) -> AdaptiveTree {
            let povm = choices[pick].clone();
            if level == 1 {
                return AdaptiveTree {
                    prob,
                    povm,
                    children: Vec::new(),
                };
            }
            let probs = povm.outcome_probs(rho0).unwrap();
            let children = probs
                .iter()
                .enumerate()
                .map(|(x, &p)| grow(rho0, prob * p, level - 1, (pick + x + 1) % 3, choices))
                .collect();
            AdaptiveTree {
                prob,
                povm,
                children,
            }
        }
        let tree = grow(&rho0, 1.0, 3, 0, &choices);
        let flat = flatten_adaptive(&tree, &rho0).unwrap();
        let joint = adaptive_joint_povm(&tree).unwrap();
        let lhs = fim(&model, &flat).unwrap().matrix() * 3.0;
        let rhs = fim_c_copy(&model, &joint).unwrap();
        assert!((lhs - rhs.matrix()).abs().max() < 1e-8);
    }

    /// Projective measurement in the X (axis 0) or Y (axis 1) eigenbasis.
    fn basis_povm(axis: usize) -> Povm {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let vecs: [nalgebra::DVector<crate::Complex64>; 2] = match axis {
            0 => [
                nalgebra::DVector::from_column_slice(&[
                    crate::Complex64::new(s, 0.0),
                    crate::Complex64::new(s, 0.0),
                ]),
                nalgebra::DVector::from_column_slice(&[
                    crate::Complex64::new(s, 0.0),
                    crate::Complex64::new(-s, 0.0),
                ]),
            ],
            _ => [
                nalgebra::DVector::from_column_slice(&[
                    crate::Complex64::new(s, 0.0),
                    crate::Complex64::new(0.0, s),
                ]),
                nalgebra::DVector::from_column_slice(&[
                    crate::Complex64::new(s, 0.0),
                    crate::Complex64::new(0.0, -s),
                ]),
            ],
        };
        let elements = vecs.iter().map(HermitianOp::projector).collect();
        Povm::new(2, 1, elements, vec!["+".into(), "-".into()]).unwrap()
    }
}
