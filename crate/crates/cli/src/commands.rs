//! Subcommand implementations: Γ computation, exact-identity suites,
//! sample-complexity sweeps, the Pauli scaling table, c-copy checks,
//! end-to-end estimation runs, and threshold tables.

use crate::config::*;
use anyhow::{anyhow, bail, Context, Result};
use fisher_shadow::estimation::{
    mom_groups, run_oblivious, run_shadow_tomography, shot_budget, tomography_budget,
    EstimationConfig, LocalEstimator,
};
use fisher_shadow::fisher::{
    adaptive_joint_povm, c_copy_domination, c_copy_first_order, chi2_divergence,
    fim, fim_c_copy, fim_with_scaling, flatten_adaptive, schur_restriction, AdaptiveTree,
    FisherInfo, ScoreScaling,
};
use fisher_shadow::gamma::{
    self, dual_min_over_p_sphere, gamma_for_fixed, inf_over_m, quad_max_over_q_ball,
    s_half_grid, threshold_a_max, threshold_eta_bar_ob, threshold_eta_ob, GammaError, Variant,
};
use fisher_shadow::measurement::Povm;
use fisher_shadow::operators::{
    build_dual_basis, mix_with_maximally_mixed, DensityMatrix, ObservableSet, StateModel,
};
use fisher_shadow::NormIndex;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit code for identity-suite failures.
pub const EXIT_IDENTITY_FAILURE: i32 = 3;

fn write_json<C: Serialize, P: Serialize>(
    out: &Path,
    file: &str,
    command: &str,
    config: &C,
    payload: &P,
    wall_time_s: f64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output dir {}", out.display()))?;
    let envelope = json!({
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "wall_time_s": wall_time_s,
        "result": payload,
    });
    let path = out.join(file);
    std::fs::write(&path, serde_json::to_string_pretty(&envelope)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn write_csv(out: &Path, file: &str, header: &str, rows: &[String], hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join(file);
    let mut text = format!("# config_hash={hash}\n{header}\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn cmd_gamma(config: GammaConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let obs = config.observables.resolve()?;
    let variant = parse_variant(&config.variant)?;
    let domain = parse_domain(&config.domain)?;
    let family = parse_family(&config.family, config.outcomes)?;
    let report = inf_over_m(&obs, config.p, variant, family, domain, config.budget, config.seed)
        .map_err(map_gamma_err)?;
    let wall = t0.elapsed().as_secs_f64();
    let hash = config_hash(&config);
    println!(
        "gamma d={} m={} p={} variant={} value={:.6} ({:?} bound, {:?}, povm {})",
        obs.dim(),
        obs.len(),
        config.p,
        config.variant,
        report.value,
        report.bound,
        report.method,
        report.witness_povm.label
    );
    write_json(out, "gamma_report.json", "gamma", &config, &report, wall)?;
    let row = format!(
        "{},{},{},{},{},{:?},{:?},{:.3}",
        obs.dim(),
        obs.len(),
        config.p,
        config.variant,
        report.value,
        report.bound,
        report.method,
        wall
    );
    write_csv(
        out,
        "gamma.csv",
        "d,m,p,variant,value,bound,method,wall_time_s",
        &[row],
        &hash,
    )?;
    Ok(0)
}

fn map_gamma_err(e: GammaError) -> anyhow::Error {
    match e {
        GammaError::BudgetExhausted { .. } => anyhow!(BudgetExhaustedMarker),
        other => anyhow!(other.to_string()),
    }
}

/// Sentinel for exit code 4.
#[derive(Debug)]
pub struct BudgetExhaustedMarker;

impl std::fmt::Display for BudgetExhaustedMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "optimization budget exhausted")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn suite(name: &'static str, cases: usize, max_deviation: f64, tolerance: f64) -> IdentityResult {
    IdentityResult {
        name,
        cases,
        max_deviation,
        tolerance,
        pass: max_deviation <= tolerance,
    }
}

pub fn cmd_identities(config: IdentitiesConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let scaling = if config.scaled_convention {
        ScoreScaling::Raw
    } else {
        ScoreScaling::Derivative
    };
    let mut results = Vec::new();
    results.push(chi2_suite(&config, scaling)?);
    results.push(duality_suite(&config));
    results.push(basis_invariance_suite(&config)?);
    results.push(c_copy_first_order_suite(&config)?);
    results.push(c_copy_domination_suite(&config)?);
    results.push(gamma_relation_suite(&config)?);
    results.push(gamma_equality_inf_suite(&config)?);
    results.push(mixing_bound_suite(&config)?);
    results.push(adaptive_flattening_suite(&config)?);

    println!("{:<28} {:>7} {:>13} {:>10} {:>6}", "identity", "cases", "max dev", "tol", "pass");
    for r in &results {
        println!(
            "{:<28} {:>7} {:>13.3e} {:>10.0e} {:>6}",
            r.name,
            r.cases,
            r.max_deviation,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    let all_pass = results.iter().all(|r| r.pass);
    write_json(
        out,
        "identities.json",
        "identities",
        &config,
        &json!({ "suites": results, "pass": all_pass }),
        t0.elapsed().as_secs_f64(),
    )?;
    Ok(if all_pass { 0 } else { EXIT_IDENTITY_FAILURE })
}

fn chi2_suite(config: &IdentitiesConfig, scaling: ScoreScaling) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x01);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 1 + (cases % 3).min(d * d - 2), &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_naimark(d, d * d, rng.random());
            let (theta, phi) = model.sample_neighborhood_params(&mut rng, 0.3);
            let rho = DensityMatrix::new(fisher_shadow::operators::HermitianOp::symmetrized(
                model
                    .parameterize(&theta, &phi)
                    .map_err(|e| anyhow!(e.to_string()))?
                    .matrix()
                    .clone(),
            ))
            .map_err(|e| anyhow!(e.to_string()))?;
            let chi2 = chi2_divergence(&povm, &rho, model.rho0())
                .map_err(|e| anyhow!(e.to_string()))?;
            let quad = fim_with_scaling(&model, &povm, scaling)
                .map_err(|e| anyhow!(e.to_string()))?
                .quadratic_form(&theta, &phi);
            let denom = quad.abs().max(1e-12);
            dev = dev.max(((chi2 - quad) / denom).abs());
            cases += 1;
        }
    }
    Ok(suite("chi2-quadratic-exactness", cases, dev, 1e-9))
}

fn random_fim(n: usize, m: usize, rng: &mut ChaCha8Rng) -> FisherInfo {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0f64));
    let mat = &g * g.transpose() + DMatrix::identity(n, n) * 0.05;
    FisherInfo::from_matrix(mat, (m, n - m), 2).expect("synthetic FIM is symmetric")
}

fn duality_suite(config: &IdentitiesConfig) -> IdentityResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x02);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for trial in 0..config.instances.max(10) {
        let m = 2 + trial % 5;
        let nb = trial % 4;
        let info = random_fim(m + nb, m, &mut rng);
        let schur = schur_restriction(&info);
        for (p, q) in [
            (NormIndex::TWO, NormIndex::TWO),
            (NormIndex::Infinity, NormIndex::ONE),
            (NormIndex::ONE, NormIndex::Infinity),
        ] {
            let dmin = dual_min_over_p_sphere(&info, p, config.seed);
            let qmax = quad_max_over_q_ball(schur.matrix(), q, config.seed);
            dev = dev.max((dmin.value * qmax.value - 1.0).abs());
            cases += 1;
        }
    }
    suite("duality-product", cases, dev, 1e-6)
}

fn basis_invariance_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x03);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        if d * d - 1 < 3 {
            continue;
        }
        for _ in 0..config.instances.min(6) {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_naimark(d, d * d + 1, rng.random());
            let base = schur_restriction(&fim(&model, &povm).map_err(|e| anyhow!(e.to_string()))?);
            let nb = model.num_nuisance();
            for _ in 0..10 {
                let c1 = DMatrix::from_fn(nb, 2, |_, _| rng.random_range(-1.0..1.0f64));
                let c2 = DMatrix::from_fn(nb, nb, |i, j| {
                    if i == j {
                        1.0 + rng.random_range(0.1..0.8)
                    } else {
                        rng.random_range(-0.2..0.2)
                    }
                });
                let rebased = model
                    .basis()
                    .transform(&c1, &c2)
                    .map_err(|e| anyhow!(e.to_string()))?;
                let model2 = StateModel::new(
                    model.rho0().clone(),
                    rebased,
                    model.observables().clone(),
                )
                .map_err(|e| anyhow!(e.to_string()))?;
                let other =
                    schur_restriction(&fim(&model2, &povm).map_err(|e| anyhow!(e.to_string()))?);
                dev = dev.max((base.matrix() - other.matrix()).abs().max());
                cases += 1;
            }
        }
    }
    Ok(suite("schur-basis-invariance", cases, dev, 1e-8))
}

fn c_copy_first_order_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x04);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        if d > 3 {
            continue; // joint spaces grow as d^c; 2 and 3 cover the claim
        }
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_joint(d, 2, d * d, rng.random());
            let (theta, phi) = model.sample_neighborhood_params(&mut rng, 0.2);
            let (lhs, rhs) = c_copy_first_order(&povm, &model, &theta, &phi)
                .map_err(|e| anyhow!(e.to_string()))?;
            dev = dev.max((lhs - rhs).abs());
            cases += 1;
        }
    }
    Ok(suite("c-copy-first-order", cases, dev, 1e-9))
}

fn c_copy_domination_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        if d > 3 {
            continue;
        }
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_joint(d, 2, d * d + 1, rng.random());
            let check =
                c_copy_domination(&povm, &model).map_err(|e| anyhow!(e.to_string()))?;
            dev = dev.max((-check.margin).max(0.0));
            cases += 1;
        }
    }
    Ok(suite("c-copy-domination", cases, dev, 1e-8))
}

fn gamma_relation_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x06);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_naimark(d, d * d, rng.random());
            for p in [NormIndex::ONE, NormIndex::Finite(1.7), NormIndex::TWO, NormIndex::Infinity]
            {
                let full = gamma_for_fixed(&model, &povm, p, Variant::Full)
                    .map_err(|e| anyhow!(e.to_string()))?;
                let ob = gamma_for_fixed(&model, &povm, p, Variant::Ob)
                    .map_err(|e| anyhow!(e.to_string()))?;
                dev = dev.max((ob - full).max(0.0) / full.max(1e-12));
                cases += 1;
            }
        }
    }
    Ok(suite("gamma-ob-below-full", cases, dev, 1e-9))
}

fn gamma_equality_inf_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x07);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_naimark(d, d * d, rng.random());
            let full = gamma_for_fixed(&model, &povm, NormIndex::Infinity, Variant::Full)
                .map_err(|e| anyhow!(e.to_string()))?;
            let ob = gamma_for_fixed(&model, &povm, NormIndex::Infinity, Variant::Ob)
                .map_err(|e| anyhow!(e.to_string()))?;
            dev = dev.max((ob - full).abs());
            cases += 1;
        }
    }
    Ok(suite("gamma-equality-at-inf", cases, dev, 1e-10))
}

fn mixing_bound_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x08);
    let mut dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let basis = build_dual_basis(&obs).map_err(|e| anyhow!(e.to_string()))?;
            let sigma = DensityMatrix::random_full_rank(d, &mut rng);
            let mixed = mix_with_maximally_mixed(&sigma);
            let model_s = StateModel::new(sigma, basis.clone(), obs.clone())
                .map_err(|e| anyhow!(e.to_string()))?;
            let model_m = StateModel::new(mixed, basis, obs)
                .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_naimark(d, d * d, rng.random());
            let info_s = fim(&model_s, &povm).map_err(|e| anyhow!(e.to_string()))?;
            let info_m = fim(&model_m, &povm).map_err(|e| anyhow!(e.to_string()))?;
            let m = model_s.num_targets();
            let nb = model_s.num_nuisance();
            let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let phi: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = info_m.quadratic_form(&theta, &phi);
            let rhs = info_s.quadratic_form(&theta, &phi);
            dev = dev.max(lhs - 2.0 * rhs);
            cases += 1;
        }
    }
    Ok(suite("mixing-half-bound", cases, dev.max(0.0), 1e-9))
}

fn adaptive_flattening_suite(config: &IdentitiesConfig) -> Result<IdentityResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x09);
    let mut dev = 0.0f64;
    let mut cases = 0;
    let obs = ObservableSet::complete_paulis(1);
    for depth in [1u32, 2, 3] {
        for _ in 0..config.instances.min(5) {
            let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
            let model = StateModel::with_canonical_basis(rho0.clone(), obs.clone())
                .map_err(|e| anyhow!(e.to_string()))?;
            let tree = random_adaptive_tree(&rho0, depth, &mut rng);
            let flat = flatten_adaptive(&tree, &rho0).map_err(|e| anyhow!(e.to_string()))?;
            let joint = adaptive_joint_povm(&tree).map_err(|e| anyhow!(e.to_string()))?;
            let lhs = fim(&model, &flat).map_err(|e| anyhow!(e.to_string()))?.matrix()
                * depth as f64;
            let rhs = fim_c_copy(&model, &joint).map_err(|e| anyhow!(e.to_string()))?;
            dev = dev.max((lhs - rhs.matrix()).abs().max());
            cases += 1;
        }
    }
    Ok(suite("adaptive-flattening", cases, dev, 1e-8))
}

/// Depth-N adaptive strategy whose node measurements are drawn at random;
/// children genuinely depend on the parent outcome.
pub fn random_adaptive_tree(rho0: &DensityMatrix, depth: u32, rng: &mut ChaCha8Rng) -> AdaptiveTree {
    fn grow(rho0: &DensityMatrix, prob: f64, depth: u32, rng: &mut ChaCha8Rng) -> AdaptiveTree {
        let povm = Povm::random_naimark(rho0.dim(), 2, rng.random());
        if depth == 1 {
            return AdaptiveTree {
                prob,
                povm,
                children: Vec::new(),
            };
        }
        let probs = povm.outcome_probs(rho0).expect("valid measurement");
        let children = probs
            .iter()
            .map(|&p| grow(rho0, prob * p, depth - 1, rng))
            .collect();
        AdaptiveTree {
            prob,
            povm,
            children,
        }
    }
    grow(rho0, 1.0, depth, rng)
}

pub fn cmd_sweep(config: SweepConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let obs = config.observables.resolve()?;
    let d = obs.dim();
    let m = obs.len();
    let povm = config.povm.resolve(d, config.seed ^ 0x90)?;
    let k = mom_groups(m, config.delta);
    let n0 = tomography_budget(d);

    // variance scale for the search window and the regime threshold
    let mixed_model =
        StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(d), obs.clone())
            .map_err(|e| anyhow!(e.to_string()))?;
    let gamma_ref = gamma_for_fixed(&mixed_model, &povm, config.p, Variant::Ob)
        .map_err(|e| anyhow!(e.to_string()))?;
    let eta_bar_ob = threshold_eta_bar_ob(gamma_ref, d);

    let success_rate = |b: usize, eps: f64, eps_idx: usize| -> Result<f64> {
        let n1 = k * b;
        let hits: usize = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(config.seed ^ (eps_idx as u64) << 32 ^ trial as u64);
                let rho = DensityMatrix::random_full_rank(d, &mut rng);
                let run = EstimationConfig {
                    p: config.p,
                    epsilon: eps,
                    delta: config.delta,
                    n0,
                    n1,
                    k: Some(k),
                    seed: rng.random(),
                };
                match run_shadow_tomography(&obs, &povm, &run, &rho) {
                    Ok(r) => usize::from(r.success),
                    Err(_) => 0,
                }
            })
            .sum();
        Ok(hits as f64 / config.trials as f64)
    };

    let mut rows = Vec::new();
    let mut fit_points = Vec::new();
    for (eps_idx, &eps) in config.epsilons.iter().enumerate() {
        let target = 1.0 - config.delta;
        // exponential climb, then bisection on the batch size
        let mut b_hi = ((gamma_ref / (eps * eps)).ceil() as usize).max(4);
        let mut rate_hi = success_rate(b_hi, eps, eps_idx)?;
        let mut guard = 0;
        while rate_hi < target && guard < 12 {
            b_hi *= 2;
            rate_hi = success_rate(b_hi, eps, eps_idx)?;
            guard += 1;
        }
        let mut b_lo = 1usize;
        while b_hi - b_lo > (b_hi / 20).max(1) {
            let mid = (b_lo + b_hi) / 2;
            let rate = success_rate(mid, eps, eps_idx)?;
            if rate >= target {
                b_hi = mid;
                rate_hi = rate;
            } else {
                b_lo = mid;
            }
        }
        let n1 = k * b_hi;
        let outside = eps > eta_bar_ob;
        rows.push(format!(
            "{eps},{n1},{rate_hi},{}",
            if outside { "outside_regime" } else { "in_regime" }
        ));
        if !outside {
            fit_points.push(((1.0 / eps).ln(), (n1 as f64).ln()));
        }
        println!("eps={eps}: N1={n1} success_rate={rate_hi} K={k}{}",
            if outside { " (outside regime)" } else { "" });
    }
    let slope = fit_slope(&fit_points);
    if let Some(s) = slope {
        println!("fitted log N vs log(1/eps) slope: {s:.3}");
    }
    let hash = config_hash(&config);
    write_csv(out, "sweep.csv", "epsilon,n1,success_rate,regime", &rows, &hash)?;
    write_json(
        out,
        "sweep.json",
        "sweep",
        &config,
        &json!({
            "rows": rows,
            "slope": slope,
            "eta_bar_ob": eta_bar_ob,
            "gamma_ref": gamma_ref,
            "k": k,
        }),
        t0.elapsed().as_secs_f64(),
    )?;
    Ok(0)
}

fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

pub fn cmd_pauli(config: PauliConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let q = config.p.dual();
    let mut rows = Vec::new();
    let mut payload = Vec::new();
    for &n in &config.n_list {
        let d = 2usize.pow(n);
        let obs = ObservableSet::complete_paulis(n);
        let basis = build_dual_basis(&obs).map_err(|e| anyhow!(e.to_string()))?;
        let proxy = Povm::finite_haar_proxy(d, config.proxy_factor * d * d, config.seed ^ 0x42)
            .map_err(|e| anyhow!(e.to_string()))?;
        let grid = s_half_grid(d, config.seed ^ 0x5eed);
        let mut gamma2_ob = 0.0f64;
        for rho0 in &grid {
            let model = StateModel::new(rho0.clone(), basis.clone(), obs.clone())
                .map_err(|e| anyhow!(e.to_string()))?;
            let v = gamma_for_fixed(&model, &proxy, NormIndex::TWO, Variant::Ob)
                .map_err(|e| anyhow!(e.to_string()))?;
            gamma2_ob = gamma2_ob.max(v);
        }
        let eta_ob = threshold_eta_ob(&obs, &basis, &grid, &proxy, q)
            .map_err(|e| anyhow!(e.to_string()))?;
        let a_max = threshold_a_max(&obs, &basis, &grid, &proxy, config.p, config.seed)
            .map_err(|e| anyhow!(e.to_string()))?;
        let eta_ob_c = gamma::threshold_eta_ob_c(config.c, a_max, gamma2_ob);
        let bracket_lo = 0.5 * d as f64;
        let bracket_hi = 6.0 * d as f64 * (d as f64).ln();
        println!(
            "n={n} d={d}: gamma2_ob={gamma2_ob:.4} in [{bracket_lo}, {bracket_hi:.2}], \
             eta_ob={eta_ob:.6}, a_max={a_max:.4}, eta_ob_c={eta_ob_c:.6}"
        );
        rows.push(format!(
            "{n},{d},{gamma2_ob},{bracket_lo},{bracket_hi},{eta_ob},{a_max},{eta_ob_c}"
        ));
        payload.push(json!({
            "n": n, "d": d,
            "gamma2_ob": gamma2_ob,
            "bracket": [bracket_lo, bracket_hi],
            "eta_ob": eta_ob,
            "a_max": a_max,
            "eta_ob_c": eta_ob_c,
        }));
    }
    let hash = config_hash(&config);
    write_csv(
        out,
        "pauli.csv",
        "n,d,gamma2_ob,bracket_lo,bracket_hi,eta_ob,a_max,eta_ob_c",
        &rows,
        &hash,
    )?;
    write_json(
        out,
        "pauli.json",
        "pauli",
        &config,
        &payload,
        t0.elapsed().as_secs_f64(),
    )?;
    Ok(0)
}

pub fn cmd_ccopy(config: CcopyConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut first_order_dev = 0.0f64;
    let mut domination_dev = 0.0f64;
    let mut cases = 0;
    for &d in &config.dims {
        for _ in 0..config.instances {
            let obs = ObservableSet::random(d, 2, &mut rng);
            let model = StateModel::with_canonical_basis(
                DensityMatrix::random_full_rank(d, &mut rng),
                obs,
            )
            .map_err(|e| anyhow!(e.to_string()))?;
            let povm = Povm::random_joint(d, 2, d * d + 1, rng.random());
            let (theta, phi) = model.sample_neighborhood_params(&mut rng, 0.2);
            let (lhs, rhs) = c_copy_first_order(&povm, &model, &theta, &phi)
                .map_err(|e| anyhow!(e.to_string()))?;
            first_order_dev = first_order_dev.max((lhs - rhs).abs());
            let check = c_copy_domination(&povm, &model).map_err(|e| anyhow!(e.to_string()))?;
            domination_dev = domination_dev.max((-check.margin).max(0.0));
            cases += 1;
        }
    }
    let mut flatten_dev = 0.0f64;
    for &depth in &config.depths {
        for _ in 0..5 {
            let rho0 = DensityMatrix::random_full_rank(2, &mut rng);
            let obs = ObservableSet::complete_paulis(1);
            let model = StateModel::with_canonical_basis(rho0.clone(), obs)
                .map_err(|e| anyhow!(e.to_string()))?;
            let tree = random_adaptive_tree(&rho0, depth, &mut rng);
            let flat = flatten_adaptive(&tree, &rho0).map_err(|e| anyhow!(e.to_string()))?;
            let joint = adaptive_joint_povm(&tree).map_err(|e| anyhow!(e.to_string()))?;
            let lhs = fim(&model, &flat).map_err(|e| anyhow!(e.to_string()))?.matrix()
                * depth as f64;
            let rhs = fim_c_copy(&model, &joint).map_err(|e| anyhow!(e.to_string()))?;
            flatten_dev = flatten_dev.max((lhs - rhs.matrix()).abs().max());
        }
    }
    let checks = vec![
        suite("c-copy-first-order", cases, first_order_dev, 1e-9),
        suite("c-copy-domination", cases, domination_dev, 1e-8),
        suite("adaptive-flattening", 5 * config.depths.len(), flatten_dev, 1e-8),
    ];
    for r in &checks {
        println!(
            "{:<24} cases={:<4} max dev {:.3e} (tol {:.0e}) {}",
            r.name,
            r.cases,
            r.max_deviation,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    let all_pass = checks.iter().all(|r| r.pass);
    write_json(
        out,
        "ccopy.json",
        "ccopy",
        &config,
        &json!({ "suites": checks, "pass": all_pass }),
        t0.elapsed().as_secs_f64(),
    )?;
    Ok(if all_pass { 0 } else { EXIT_IDENTITY_FAILURE })
}

pub fn cmd_estimate(config: EstimateConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let obs = config.observables.resolve()?;
    let d = obs.dim();
    let state = config.resolve_state()?;
    if state.dim() != d {
        bail!("state dimension {} does not match observables ({d})", state.dim());
    }
    let povm = config.povm.resolve(d, config.seed ^ 0x33)?;
    let (n1, k) = resolve_shot_budget(&config, &obs, &povm)?;
    let run = EstimationConfig {
        p: config.p,
        epsilon: config.epsilon,
        delta: config.delta,
        n0: config.n0.unwrap_or_else(|| tomography_budget(d)),
        n1,
        k,
        seed: config.seed,
    };
    let report =
        run_shadow_tomography(&obs, &povm, &run, &state).map_err(|e| anyhow!(e.to_string()))?;
    print_run(&report);
    write_json(out, "run_report.json", "estimate", &config, &report, t0.elapsed().as_secs_f64())?;
    Ok(0)
}

pub fn cmd_oblivious(config: EstimateConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let alpha = config
        .alpha
        .clone()
        .ok_or_else(|| anyhow!("oblivious estimation requires alpha"))?;
    let obs = config.observables.resolve()?;
    let d = obs.dim();
    if alpha.len() != obs.len() {
        bail!("alpha has {} entries for {} observables", alpha.len(), obs.len());
    }
    let state = config.resolve_state()?;
    let povm = config.povm.resolve(d, config.seed ^ 0x33)?;
    let (n1, _) = resolve_shot_budget(&config, &obs, &povm)?;
    let run = EstimationConfig {
        p: config.p,
        epsilon: config.epsilon,
        delta: config.delta,
        n0: config.n0.unwrap_or_else(|| tomography_budget(d)),
        n1,
        k: None,
        seed: config.seed,
    };
    let report = run_oblivious(&obs, &povm, &run, &state, &alpha)
        .map_err(|e| anyhow!(e.to_string()))?;
    print_run(&report);
    write_json(out, "run_report.json", "oblivious", &config, &report, t0.elapsed().as_secs_f64())?;
    Ok(0)
}

fn resolve_shot_budget(
    config: &EstimateConfig,
    obs: &ObservableSet,
    povm: &Povm,
) -> Result<(usize, Option<usize>)> {
    if let Some(n1) = config.n1 {
        return Ok((n1, config.k));
    }
    let d = obs.dim();
    let mixed_model =
        StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(d), obs.clone())
            .map_err(|e| anyhow!(e.to_string()))?;
    // sanity-check the measurement resolves the targets before budgeting
    LocalEstimator::build(&mixed_model, povm).map_err(|e| anyhow!(e.to_string()))?;
    let gamma_ref = gamma_for_fixed(&mixed_model, povm, config.p, Variant::Ob)
        .map_err(|e| anyhow!(e.to_string()))?;
    Ok((
        shot_budget(gamma_ref, obs.len(), config.delta, config.epsilon),
        config.k,
    ))
}

fn print_run(report: &fisher_shadow::RunReport) {
    println!(
        "estimates: {:?}",
        report
            .estimates
            .iter()
            .map(|x| (x * 1e6).round() / 1e6)
            .collect::<Vec<_>>()
    );
    if let Some(err) = report.p_norm_error {
        println!(
            "p-norm error {err:.6} -> {}",
            if report.success { "success" } else { "miss" }
        );
    }
    let c = &report.samples_used;
    println!(
        "samples: N0={} N1={} (K={} x B={}), coarse_failure={}",
        c.n0, c.n1, c.k, c.b, report.coarse_failure
    );
}

pub fn cmd_thresholds(config: ThresholdsConfig, out: &Path) -> Result<i32> {
    let t0 = Instant::now();
    let obs = config.observables.resolve()?;
    let report = gamma::thresholds(&obs, config.p, config.c, config.budget, config.seed)
        .map_err(map_gamma_err)?;
    println!(
        "p={} c={}: eta_ob={:.6} ({:?}), a_max={:.4} ({:?}), eta_ob_c={:.6}, \
         eta_bar={:.6}, eta_bar_ob={:.6}  [M* = {}]",
        report.p,
        report.c,
        report.eta_ob,
        report.eta_ob_bound,
        report.a_max,
        report.a_max_bound,
        report.eta_ob_c,
        report.eta_bar,
        report.eta_bar_ob,
        report.m_star.label
    );
    write_json(out, "thresholds.json", "thresholds", &config, &report, t0.elapsed().as_secs_f64())?;
    Ok(0)
}
