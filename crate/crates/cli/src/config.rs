//! Config ingestion: every subcommand reads an optional JSON config file
//! (schema-validated, unknown keys rejected) plus command-line overrides.

use anyhow::{anyhow, bail, Context, Result};
use fisher_shadow::gamma::{MeasurementFamily, Rho0Domain, Variant};
use fisher_shadow::measurement::Povm;
use fisher_shadow::operators::{DensityMatrix, HermitianOp, ObservableSet};
use fisher_shadow::NormIndex;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Where the target observables come from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSpec {
    /// All traceless Pauli strings on `n_qubits`.
    #[serde(default)]
    pub pauli_complete: bool,
    #[serde(default)]
    pub n_qubits: Option<u32>,
    /// Explicit operator list (JSON re/im matrices).
    #[serde(default)]
    pub ops: Option<Vec<HermitianOp>>,
}

impl ObservablesSpec {
    pub fn resolve(&self) -> Result<ObservableSet> {
        if let Some(ops) = &self.ops {
            if self.pauli_complete {
                bail!("give either pauli_complete or ops, not both");
            }
            return ObservableSet::new(ops.clone()).map_err(|e| anyhow!(e.to_string()));
        }
        if self.pauli_complete {
            let n = self.n_qubits.unwrap_or(1);
            return Ok(ObservableSet::complete_paulis(n));
        }
        bail!("no observables: set pauli_complete (with n_qubits) or ops")
    }
}

/// Named measurement families resolvable at a given dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmSpec {
    /// computational | pauli_uniform | sic_d2 | mub | haar_proxy
    pub kind: String,
    /// Outcome count for haar_proxy (default 50·d²).
    #[serde(default)]
    pub outcomes: Option<usize>,
}

impl Default for PovmSpec {
    fn default() -> Self {
        Self {
            kind: "pauli_uniform".into(),
            outcomes: None,
        }
    }
}

impl PovmSpec {
    pub fn resolve(&self, d: usize, seed: u64) -> Result<Povm> {
        match self.kind.as_str() {
            "computational" => Ok(Povm::computational(d)),
            "pauli_uniform" => {
                if !d.is_power_of_two() {
                    bail!("pauli_uniform needs d = 2^n, got {d}");
                }
                Ok(Povm::pauli_basis_uniform(d.trailing_zeros()))
            }
            "sic_d2" => {
                if d != 2 {
                    bail!("sic_d2 is the qubit tetrahedron, got d = {d}");
                }
                Ok(Povm::sic_qubit())
            }
            "mub" => Povm::mub_prime(d).map_err(|e| anyhow!(e.to_string())),
            "haar_proxy" => {
                let k = self.outcomes.unwrap_or(50 * d * d);
                Povm::finite_haar_proxy(d, k, seed).map_err(|e| anyhow!(e.to_string()))
            }
            other => bail!("unknown measurement kind {other:?}"),
        }
    }
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "ob" => Ok(Variant::Ob),
        "full" => Ok(Variant::Full),
        other => bail!("variant must be ob or full, got {other:?}"),
    }
}

pub fn parse_domain(s: &str) -> Result<Rho0Domain> {
    match s {
        "s_half" => Ok(Rho0Domain::SHalf),
        "s_full_rank" => Ok(Rho0Domain::SFullRank),
        other => bail!("domain must be s_half or s_full_rank, got {other:?}"),
    }
}

pub fn parse_family(s: &str, outcomes: Option<usize>) -> Result<MeasurementFamily> {
    match s {
        "catalog" => Ok(MeasurementFamily::Catalog),
        "parameterized" => Ok(MeasurementFamily::Parameterized {
            outcomes: outcomes.unwrap_or(0),
        }),
        other => bail!("family must be catalog or parameterized, got {other:?}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    pub observables: ObservablesSpec,
    pub p: NormIndex,
    pub variant: String,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub outcomes: Option<usize>,
    #[serde(default = "default_domain")]
    pub domain: String,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_family() -> String {
    "catalog".into()
}

fn default_domain() -> String {
    "s_half".into()
}

fn default_budget() -> u64 {
    4000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    /// Deliberate negative control: run the χ² suite with raw (d²-scaled)
    /// scores; the suite must then fail.
    #[serde(default)]
    pub scaled_convention: bool,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self {
            dims: default_dims(),
            instances: default_instances(),
            seed: 0,
            scaled_convention: false,
        }
    }
}

fn default_dims() -> Vec<usize> {
    vec![2, 3]
}

fn default_instances() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_pauli_obs")]
    pub observables: ObservablesSpec,
    #[serde(default = "default_p_inf")]
    pub p: NormIndex,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub povm: PovmSpec,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_pauli_obs() -> ObservablesSpec {
    ObservablesSpec {
        pauli_complete: true,
        n_qubits: Some(1),
        ops: None,
    }
}

fn default_p_inf() -> NormIndex {
    NormIndex::Infinity
}

fn default_delta() -> f64 {
    0.1
}

fn default_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_trials() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliConfig {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u32>,
    #[serde(default = "default_p_two")]
    pub p: NormIndex,
    #[serde(default = "default_copies")]
    pub c: u32,
    #[serde(default = "default_proxy_factor")]
    pub proxy_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PauliConfig {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            p: default_p_two(),
            c: default_copies(),
            proxy_factor: default_proxy_factor(),
            seed: 0,
        }
    }
}

fn default_n_list() -> Vec<u32> {
    vec![1, 2, 3]
}

fn default_p_two() -> NormIndex {
    NormIndex::TWO
}

fn default_copies() -> u32 {
    2
}

fn default_proxy_factor() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcopyConfig {
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_ccopy_instances")]
    pub instances: usize,
    #[serde(default = "default_depths")]
    pub depths: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CcopyConfig {
    fn default() -> Self {
        Self {
            dims: default_dims(),
            instances: default_ccopy_instances(),
            depths: default_depths(),
            seed: 0,
        }
    }
}

fn default_ccopy_instances() -> usize {
    50
}

fn default_depths() -> Vec<u32> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub observables: ObservablesSpec,
    /// The unknown state the harness simulates measurements on; must be a
    /// valid density matrix.
    pub state: HermitianOp,
    #[serde(default = "default_p_inf")]
    pub p: NormIndex,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub povm: PovmSpec,
    #[serde(default)]
    pub n0: Option<usize>,
    #[serde(default)]
    pub n1: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Present only for the oblivious command: the coefficient vector
    /// revealed after measurement, with ‖α‖_q ≤ 1.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
}

impl EstimateConfig {
    pub fn resolve_state(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.state.clone()).map_err(|e| anyhow!(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsConfig {
    pub observables: ObservablesSpec,
    #[serde(default = "default_p_inf")]
    pub p: NormIndex,
    #[serde(default = "default_copies")]
    pub c: u32,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
}

/// Load and schema-validate a JSON config file.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Fingerprint embedded in every output file.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    fisher_shadow::linalg::sha256_hex(&bytes)
}
