//! Command-line driver for the fisher-shadow experiments.
//!
//! Exit codes: 0 success, 2 config error, 3 identity-suite failure,
//! 4 optimization budget exhausted.

mod commands;
mod config;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use config::*;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fisher-shadow", version, about = "Fisher-information experiments for shadow tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file (schema-validated; unknown keys rejected)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compute Γ_p or Γ_p^ob over a measurement family
    Gamma {
        #[command(flatten)]
        common: CommonArgs,
        /// Use all traceless Pauli strings on --n qubits as the observables
        #[arg(long)]
        pauli_complete: bool,
        /// Qubit count for --pauli-complete
        #[arg(long)]
        n: Option<u32>,
        /// Norm index p in [1, inf]
        #[arg(long)]
        p: Option<fisher_shadow::NormIndex>,
        /// ob | full
        #[arg(long)]
        variant: Option<String>,
        /// catalog | parameterized
        #[arg(long)]
        family: Option<String>,
        /// s_half | s_full_rank
        #[arg(long)]
        domain: Option<String>,
        /// Total optimizer evaluation budget
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Run the exact-identity suites and report per-identity deviations
    Identities {
        #[command(flatten)]
        common: CommonArgs,
        /// Hilbert dimensions to cover
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Instances per (identity, dimension)
        #[arg(long)]
        instances: Option<usize>,
        /// Negative control: d²-scaled scores must break the χ² identity
        #[arg(long)]
        scaled_convention: bool,
    },
    /// Binary-search the sample complexity over a precision grid
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Pauli-example scaling table: Γ₂^ob, η^ob, a_max, η^ob_c per size
    Pauli {
        #[command(flatten)]
        common: CommonArgs,
        /// Qubit counts to tabulate
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<u32>>,
        #[arg(long)]
        p: Option<fisher_shadow::NormIndex>,
        /// Copies for the η^ob_c threshold
        #[arg(long)]
        c: Option<u32>,
    },
    /// Verify the c-copy reduction identity and PSD domination
    Ccopy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Run the two-step shadow estimation pipeline on a supplied state
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run oblivious estimation of a revealed linear combination
    Oblivious {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute the threshold table (η^ob, a_max, η^ob_c, η̄, η̄^ob)
    Thresholds {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("FISHER_SHADOW_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            if err.downcast_ref::<commands::BudgetExhaustedMarker>().is_some() {
                eprintln!("error: {err}");
                ExitCode::from(4)
            } else {
                eprintln!("config error: {err:#}");
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gamma {
            common,
            pauli_complete,
            n,
            p,
            variant,
            family,
            domain,
            budget,
        } => {
            let mut cfg: GammaConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => GammaConfig {
                    observables: ObservablesSpec::default(),
                    p: fisher_shadow::NormIndex::Infinity,
                    variant: "ob".into(),
                    family: "catalog".into(),
                    outcomes: None,
                    domain: "s_half".into(),
                    budget: 4000,
                    seed: 0,
                },
            };
            if pauli_complete {
                cfg.observables.pauli_complete = true;
                cfg.observables.ops = None;
            }
            if let Some(n) = n {
                cfg.observables.n_qubits = Some(n);
            }
            if let Some(p) = p {
                cfg.p = p;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(f) = family {
                cfg.family = f;
            }
            if let Some(d) = domain {
                cfg.domain = d;
            }
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_gamma(cfg, &common.out)
        }
        Command::Identities {
            common,
            dims,
            instances,
            scaled_convention,
        } => {
            let mut cfg: IdentitiesConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => IdentitiesConfig::default(),
            };
            if let Some(dims) = dims {
                cfg.dims = dims;
            }
            if let Some(instances) = instances {
                cfg.instances = instances;
            }
            if scaled_convention {
                cfg.scaled_convention = true;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_identities(cfg, &common.out)
        }
        Command::Sweep {
            common,
            epsilons,
            trials,
        } => {
            let mut cfg: SweepConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => SweepConfig {
                    observables: default_pauli_obs(),
                    p: fisher_shadow::NormIndex::Infinity,
                    delta: 0.1,
                    epsilons: vec![0.2, 0.1, 0.05],
                    trials: 50,
                    povm: PovmSpec::default(),
                    seed: 0,
                },
            };
            if let Some(eps) = epsilons {
                cfg.epsilons = eps;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_sweep(cfg, &common.out)
        }
        Command::Pauli {
            common,
            n_list,
            p,
            c,
        } => {
            let mut cfg: PauliConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => PauliConfig::default(),
            };
            if let Some(n_list) = n_list {
                cfg.n_list = n_list;
            }
            if let Some(p) = p {
                cfg.p = p;
            }
            if let Some(c) = c {
                cfg.c = c;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_pauli(cfg, &common.out)
        }
        Command::Ccopy {
            common,
            dims,
            instances,
        } => {
            let mut cfg: CcopyConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => CcopyConfig::default(),
            };
            if let Some(dims) = dims {
                cfg.dims = dims;
            }
            if let Some(instances) = instances {
                cfg.instances = instances;
            }
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_ccopy(cfg, &common.out)
        }
        Command::Estimate { common } => {
            let path = common
                .config
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("estimate requires --config (state + observables)"))?;
            let mut cfg: EstimateConfig = load_config(path)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_estimate(cfg, &common.out)
        }
        Command::Oblivious { common } => {
            let path = common
                .config
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("oblivious requires --config (state + alpha)"))?;
            let mut cfg: EstimateConfig = load_config(path)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_oblivious(cfg, &common.out)
        }
        Command::Thresholds { common } => {
            let path = common
                .config
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("thresholds requires --config (observables)"))?;
            let mut cfg: ThresholdsConfig = load_config(path)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            commands::cmd_thresholds(cfg, &common.out)
        }
    }
}
