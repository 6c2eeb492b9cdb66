// Scratch calibration driver (not part of the deliverable surface):
// measures the shot-budget constant and the Pauli Haar-proxy gamma scaling.

use fisher_shadow::estimation::{mom_groups, run_shadow_tomography, EstimationConfig};
use fisher_shadow::gamma::{gamma_for_fixed, s_half_grid, Variant};
use fisher_shadow::operators::{DensityMatrix, ObservableSet, StateModel};
use fisher_shadow::measurement::Povm;
use fisher_shadow::NormIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "budget".into());
    match which.as_str() {
        "budget" => budget_pilot(),
        "scaling" => scaling_pilot(),
        "proxy" => proxy_convergence(),
        _ => eprintln!("unknown pilot {which}"),
    }
}

fn budget_pilot() {
    let obs = ObservableSet::complete_paulis(1);
    let povm = Povm::pauli_basis_uniform(1);
    let model =
        StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(2), obs.clone()).unwrap();
    let gamma = gamma_for_fixed(&model, &povm, NormIndex::Infinity, Variant::Ob).unwrap();
    println!("gamma_inf at 1/d: {gamma}");
    let delta = 0.1;
    let m = obs.len();
    let k = mom_groups(m, delta);
    for c in [1.0f64, 1.5, 2.0, 3.0, 4.0, 6.0] {
        for eps in [0.1f64, 0.05] {
            let b = (c * gamma / (eps * eps)).ceil() as usize;
            let n1 = k * b;
            let t0 = Instant::now();
            let mut succ = 0;
            let trials = 100;
            for seed in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let rho = random_bloch_state(&mut rng);
                let config = EstimationConfig {
                    p: NormIndex::Infinity,
                    epsilon: eps,
                    delta,
                    n0: 4000,
                    n1,
                    k: Some(k),
                    seed,
                };
                let r = run_shadow_tomography(&obs, &povm, &config, &rho).unwrap();
                if r.success {
                    succ += 1;
                }
            }
            println!(
                "C={c} eps={eps} K={k} B={b} N1={n1}: success {succ}/{trials} in {:?}",
                t0.elapsed()
            );
        }
    }
}

fn random_bloch_state(rng: &mut ChaCha8Rng) -> DensityMatrix {
    // random Bloch vector of length <= 0.8
    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-0.6..0.6)).collect();
    let p = fisher_shadow::operators::pauli_matrices();
    let mut op = fisher_shadow::operators::HermitianOp::identity(2).scale(0.5);
    for (i, &c) in v.iter().enumerate() {
        op = op.add_scaled(0.5 * c, &p[i + 1]);
    }
    DensityMatrix::new(op).unwrap()
}

fn scaling_pilot() {
    for (n, d) in [(1u32, 2usize), (2, 4), (3, 8)] {
        let t0 = Instant::now();
        let obs = ObservableSet::complete_paulis(n);
        let povm = Povm::finite_haar_proxy(d, 50 * d * d, 424242).unwrap();
        let grid = s_half_grid(d, 171717);
        let mut best = 0.0f64;
        let mut at_mixed = 0.0;
        for rho0 in &grid {
            let model = StateModel::with_canonical_basis(rho0.clone(), obs.clone()).unwrap();
            let v = gamma_for_fixed(&model, &povm, NormIndex::TWO, Variant::Ob).unwrap();
            if (rho0.matrix()[(0, 0)].re - 1.0 / d as f64).abs() < 1e-12 {
                at_mixed = v;
            }
            best = best.max(v);
        }
        println!(
            "d={d}: grid sup {best:.4}, at mixed {at_mixed:.4}, bracket [{}, {:.3}], time {:?}",
            0.5 * d as f64,
            6.0 * d as f64 * (d as f64).ln(),
            t0.elapsed()
        );
    }
}

#[allow(dead_code)]
fn proxy_convergence() {
    use fisher_shadow::fisher::fim;
    for d in [2usize, 3] {
        let n = if d == 2 { 1 } else { 0 };
        let obs = if d == 2 {
            ObservableSet::complete_paulis(n)
        } else {
            let gm = fisher_shadow::operators::gell_mann_basis(d);
            let scale = (d as f64 / 2.0).sqrt();
            ObservableSet::new(gm.iter().map(|g| g.scale(scale)).collect()).unwrap()
        };
        let model =
            StateModel::with_canonical_basis(DensityMatrix::maximally_mixed(d), obs.clone())
                .unwrap();
        let exact = 1.0 / (d as f64 + 1.0); // diagonal of the exact Haar FIM in a tr(RR')=d dδ basis
        for seed in 0..6u64 {
            let povm = Povm::finite_haar_proxy(d, 50 * d * d, seed).unwrap();
            let info = fim(&model, &povm).unwrap();
            let m = info.total();
            let dev = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let want = if i == j { exact } else { 0.0 };
                    (info.matrix()[(i, j)] - want).abs()
                })
                .fold(0.0f64, f64::max);
            println!("d={d} seed={seed}: max entrywise dev {:.4} rel {:.3}", dev, dev / exact);
        }
    }
}
