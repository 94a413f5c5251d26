//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lqg_rl::experiment::{run_sweep, write_records, write_summary, ExperimentConfig, SummaryKind, SweepOutput};
use lqg_rl::linalg::{is_schur_stable, solve_dare, solve_dlyap, spectral_radius, symmetrize, trace_product, Matrix};
use lqg_rl::lqg::{lqg_cost, lqg_gains, to_companion};
use lqg_rl::margins::{analyze, MarginReport};
use lqg_rl::plant::PlantModel;
use lqg_rl::policy::{assemble, PolicyForm, PolicyParams};
use lqg_rl::reward::{averaged_reward, exact_reward, exact_gradient, mc_bias_allowance, mc_reward, PerturbationSpec};
use lqg_rl::trainer::{train, Hypercube, TrainConfig};

const THETA_OPT: [f64; 4] = [-0.0346, -0.0687, -20.3441, 22.83];

struct Gate {
    failures: usize,
    loops: Vec<(String, (f64, f64), f64)>,
}

impl Gate {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }

    fn record_loop(&mut self, label: impl Into<String>, m: &MarginReport) {
        self.loops.push((label.into(), m.gain_interval, m.disk.m_d));
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn all_within(xs: &[f64], targets: &[f64], tol: f64) -> bool {
    xs.len() == targets.len() && xs.iter().zip(targets).all(|(x, t)| within(*x, *t, tol))
}

fn rel(x: f64, target: f64) -> f64 {
    (x / target - 1.0).abs()
}

fn lqg_doyle(g: &mut Gate) {
    let t = Instant::now();
    let plant = PlantModel::doyle();
    let ctrl = lqg_gains(&plant).unwrap();
    let cost = lqg_cost(&plant, &ctrl.realization()).unwrap();
    let theta = to_companion(&ctrl).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = all_within(ctrl.k.as_slice(), &[9.5193, 10.2579], 1e-3)
        && all_within(ctrl.l.as_slice(), &[1.1297, 1.0012], 1e-3)
        && rel(cost, 1.373e5) <= 5e-3
        && all_within(theta.theta(), &[-0.1095, -0.0491, -21.02, 23.21], 1e-2)
        && secs < 1.0;
    g.report(
        "LQG baseline (Doyle)",
        pass,
        format!(
            "K = {:?}, L = {:?}, cost = {cost:.6e}, theta_LQG = {:?}, {secs:.3} s",
            ctrl.k.as_slice(),
            ctrl.l.as_slice(),
            theta.theta()
        ),
    );
}

fn margins_doyle_lqg(g: &mut Gate) {
    let t = Instant::now();
    let plant = PlantModel::doyle();
    let m = analyze(&plant, &lqg_gains(&plant).unwrap().realization()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (lo, hi) = m.gain_interval;
    let pass = within(lo, 0.9802, 1e-3)
        && within(hi, 1.0007, 1e-3)
        && within(m.phase.degrees, 0.070, 0.005)
        && within(m.disk.m_d, 1.0007, 1e-3)
        && secs < 5.0;
    g.report(
        "Margins (Doyle, LQG)",
        pass,
        format!("gain [{lo:.5}, {hi:.5}], phase {:.4} deg, m_d {:.5}, {secs:.3} s", m.phase.degrees, m.disk.m_d),
    );
    g.record_loop("Doyle LQG", &m);
}

fn margins_doyle_theta_opt(g: &mut Gate) {
    let plant = PlantModel::doyle();
    let policy = PolicyParams::new(PolicyForm::Companion2, THETA_OPT.to_vec()).unwrap();
    let m = analyze(&plant, &policy.realize()).unwrap();
    let j = exact_reward(&plant, &policy, &[0.0]).unwrap().value;
    let (lo, hi) = m.gain_interval;
    let checks = [
        ("gain_lo", within(lo, 0.9633, 1e-3)),
        ("gain_hi", within(hi, 1.0109, 1e-3)),
        ("phase", within(m.phase.degrees, 0.331, 0.02)),
        ("m_d", within(m.disk.m_d, 1.009, 2e-3)),
        ("J", rel(j, -1.488e5) <= 1e-2),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    g.report(
        "Margins (Doyle, printed theta_opt)",
        failed.is_empty(),
        format!(
            "gain [{lo:.5}, {hi:.5}], phase {:.4} deg, m_d {:.5}, J {j:.5e}; out of tolerance: {failed:?}",
            m.phase.degrees, m.disk.m_d
        ),
    );
    g.record_loop("Doyle theta_opt", &m);
}

fn lqg_flexible(g: &mut Gate) {
    let plant = PlantModel::flexible();
    let ctrl = lqg_gains(&plant).unwrap();
    let cost = lqg_cost(&plant, &ctrl.realization()).unwrap();
    let m = analyze(&plant, &ctrl.realization()).unwrap();
    let pass = all_within(ctrl.k.as_slice(), &[1.1154, 0.0, 0.0, 0.3976], 1e-3)
        && all_within(ctrl.l.as_slice(), &[0.0673, 0.0, 0.0, 0.2496], 1e-3)
        && rel(cost, 0.0072) <= 2e-2
        && within(m.disk.m_d, 1.0091, 2e-3);
    g.report(
        "LQG baseline (flexible)",
        pass,
        format!("K = {:?}, L = {:?}, cost = {cost:.6e}, m_d = {:.5}", ctrl.k.as_slice(), ctrl.l.as_slice(), m.disk.m_d),
    );
    g.record_loop("flexible LQG", &m);
}

fn training(g: &mut Gate) {
    let cases = [
        ("Doyle", PlantModel::doyle(), PolicyForm::Companion2, Hypercube::doyle(), 100, 1.55e5),
        ("flexible", PlantModel::flexible(), PolicyForm::CtrbCanonical(3), Hypercube::flexible(), 1000, 0.011),
    ];
    for (name, plant, form, cube, n_ga, bound) in cases {
        let mut hits = 0;
        let mut costs = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in 0..10 {
            let t = Instant::now();
            let r = train(&plant, form, &TrainConfig::new(cube.clone(), 500, n_ga, seed)).unwrap();
            slowest = slowest.max(t.elapsed().as_secs_f64());
            let cost = -r.j_opt;
            if cost <= bound {
                hits += 1;
            }
            costs.push(cost);
        }
        g.report(
            &format!("Training ({name}, N_ri = 500, N_ga = {n_ga})"),
            hits >= 9 && slowest < 300.0,
            format!(
                "{hits}/10 runs with cost <= {bound:e}; best costs {:?}; slowest run {slowest:.1} s",
                costs.iter().map(|c| format!("{c:.5e}")).collect::<Vec<_>>()
            ),
        );
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn trend(g: &mut Gate) -> Vec<(String, SweepOutput)> {
    let mut outputs = Vec::new();
    for cfg in [ExperimentConfig::doyle(), ExperimentConfig::flexible()] {
        let t = Instant::now();
        let out = run_sweep(&cfg, 2024).unwrap();
        let levels: Vec<_> = out.summary.iter().filter(|r| r.kind == SummaryKind::Level).collect();
        let md: Vec<f64> = levels.iter().map(|r| r.md_mean.unwrap_or(f64::NAN)).collect();
        let cost: Vec<f64> = levels.iter().map(|r| r.cost_mean.unwrap_or(f64::NAN)).collect();
        let stable: Vec<String> = levels.iter().map(|r| format!("{}/{}", r.stable, r.trials)).collect();
        let pass = levels.len() == 5 && strictly_increasing(&md) && strictly_increasing(&cost);
        g.report(
            &format!("Robustification trend ({}, {} trials)", cfg.name, cfg.sweep.trials),
            pass,
            format!(
                "mean m_d {:?}, mean cost {:?}, stable {stable:?}, {:.1} s",
                md.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
                cost.iter().map(|v| format!("{v:.5e}")).collect::<Vec<_>>(),
                t.elapsed().as_secs_f64()
            ),
        );
        for r in &out.records {
            if let (Some(md), Some(lo), Some(hi)) = (r.md, r.gain_lo, r.gain_hi) {
                g.loops.push((format!("{} b={} trial {}", cfg.name, r.b, r.trial), (lo, hi), md));
            }
        }
        outputs.push((cfg.name.clone(), out));
    }
    outputs
}

fn random_stable_policies(plant: &PlantModel, form: PolicyForm, cube: &Hypercube, count: usize, seed: u64) -> Vec<PolicyParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let p = PolicyParams::new(form, cube.sample(&mut rng)).unwrap();
        let cl = assemble(plant, &p, &vec![0.0; plant.n_u()]).unwrap();
        // Keep a little distance from the boundary so finite differences
        // and rollouts stay well conditioned.
        if spectral_radius(&cl.a_bar).is_some_and(|r| r < 0.999) {
            out.push(p);
        }
    }
    out
}

fn plants() -> [(&'static str, PlantModel, PolicyForm, Hypercube); 2] {
    [
        ("Doyle", PlantModel::doyle(), PolicyForm::Companion2, Hypercube::doyle()),
        ("flexible", PlantModel::flexible(), PolicyForm::CtrbCanonical(3), Hypercube::flexible()),
    ]
}

/// Central difference with step `1e-6·(1 + |θ_k|)`.
fn finite_difference(plant: &PlantModel, p: &PolicyParams) -> Vec<f64> {
    let f = |theta: Vec<f64>| exact_reward(plant, &PolicyParams::new(p.form(), theta).unwrap(), &[0.0]).unwrap().value;
    (0..p.theta().len())
        .map(|i| {
            let h = 1e-6 * (1.0 + p.theta()[i].abs());
            let at = |k: f64| {
                let mut t = p.theta().to_vec();
                t[i] += k * h;
                f(t)
            };
            (at(1.0) - at(-1.0)) / (2.0 * h)
        })
        .collect()
}

fn property_gradient(g: &mut Gate) {
    let mut worst: f64 = 0.0;
    for (_, plant, form, cube) in plants() {
        for p in random_stable_policies(&plant, form, &cube, 20, 11) {
            let grad = exact_gradient(&plant, &p, &[0.0]).unwrap();
            let fd = finite_difference(&plant, &p);
            let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    g.report(
        "Property (a) gradient vs central differences",
        worst < 1e-5,
        format!("worst relative error {worst:.3e} over 20 policies per plant"),
    );
}

fn property_monte_carlo(g: &mut Gate) {
    let (horizon, episodes) = (100_000, 20);
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, plant, form, cube) in plants() {
        for (k, p) in random_stable_policies(&plant, form, &cube, 10, 29).iter().enumerate() {
            let exact = exact_reward(&plant, p, &[0.0]).unwrap().value;
            let mc = mc_reward(&plant, p, &[0.0], horizon, episodes, 1000 + k as u64).unwrap();
            let bias = mc_bias_allowance(&plant, p, &[0.0], horizon).unwrap();
            let ratio = (mc.mean - exact).abs() / (mc.std_error + bias);
            worst = worst.max(ratio);
            if ratio > 3.0 {
                misses.push(format!("{name}#{k}"));
            }
        }
    }
    g.report(
        "Property (b) Monte-Carlo vs Lyapunov reward",
        misses.is_empty(),
        format!("largest |mc - exact|/(se + bias) = {worst:.2}; outside 3: {misses:?}"),
    );
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n);
    let rho = spectral_radius(&a).unwrap().max(1e-3);
    a * (rng.gen_range(0.05..0.98) / rho)
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let f = random_matrix(rng, n, n);
    symmetrize(&(&f * f.transpose()))
}

fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, x: &Matrix) -> (f64, bool) {
    let s = r + b.transpose() * x * b;
    let gain = s.clone().try_inverse().unwrap() * b.transpose() * x * a;
    let res = a.transpose() * x * a - a.transpose() * x * b * &gain + q - x;
    let stable = is_schur_stable(&(a - b * gain)).unwrap().stable;
    (res.norm(), stable)
}

fn property_residuals(g: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_lyap: f64 = 0.0;
    let mut worst_dare: f64 = 0.0;
    let mut all_stabilizing = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let a = random_stable(&mut rng, n);
        let w = random_psd(&mut rng, n);
        let x = solve_dlyap(&a, &w).unwrap();
        let res = (&a * &x * a.transpose() - &x + &w).norm();
        worst_lyap = worst_lyap.max(res / (1.0 + x.norm()));
    }
    let mut cases: Vec<(Matrix, Matrix, Matrix, Matrix)> = Vec::new();
    for p in [PlantModel::doyle(), PlantModel::flexible()] {
        cases.push((p.a.clone(), p.b.clone(), p.q.clone(), p.r.clone()));
        cases.push((p.a.transpose(), p.c.transpose(), p.process_noise(), p.v.clone()));
    }
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=n);
        let a = random_matrix(&mut rng, n, n);
        let rho = spectral_radius(&a).unwrap().max(1e-3);
        let a = a * (rng.gen_range(0.1..1.5) / rho);
        let b = random_matrix(&mut rng, n, m);
        let q = random_psd(&mut rng, n) + Matrix::identity(n, n) * 0.1;
        let r = random_psd(&mut rng, m) + Matrix::identity(m, m);
        cases.push((a, b, q, r));
    }
    for (a, b, q, r) in &cases {
        let x = solve_dare(a, b, q, r).unwrap();
        let (res, stable) = dare_residual(a, b, q, r, &x);
        worst_dare = worst_dare.max(res / (1.0 + x.norm()));
        all_stabilizing &= stable;
    }
    g.report(
        "Property (c) Lyapunov/DARE residual bounds",
        worst_lyap <= 1e-10 && worst_dare <= 1e-9 && all_stabilizing,
        format!(
            "worst Lyapunov residual {worst_lyap:.2e} (bound 1e-10), worst DARE residual {worst_dare:.2e} (bound 1e-9), stabilizing: {all_stabilizing}"
        ),
    );
}

fn property_duality(g: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=7);
        let a = random_stable(&mut rng, n);
        let w = random_psd(&mut rng, n);
        let m = random_psd(&mut rng, n);
        let lhs = trace_product(&m, &solve_dlyap(&a, &w).unwrap());
        let rhs = trace_product(&w, &solve_dlyap(&a.transpose(), &m).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    g.report("Property (d) duality trace identity", worst <= 1e-9, format!("worst relative gap {worst:.2e}"));
}

fn property_nominal_average(g: &mut Gate) {
    let mut identical = true;
    let mut count = 0;
    for (_, plant, form, cube) in plants() {
        for p in random_stable_policies(&plant, form, &cube, 20, 17) {
            for with_gradient in [false, true] {
                let avg = averaged_reward(&plant, &p, &PerturbationSpec::none(), with_gradient).unwrap();
                let exact = if with_gradient {
                    lqg_rl::reward::exact_reward_and_gradient(&plant, &p, &[0.0]).unwrap()
                } else {
                    exact_reward(&plant, &p, &[0.0]).unwrap()
                };
                identical &= avg.value.to_bits() == exact.value.to_bits() && avg.gradient == exact.gradient;
                count += 1;
            }
        }
    }
    g.report(
        "Property (e) averaged_reward(b = 0) == exact_reward",
        identical,
        format!("bitwise identical on {count} evaluations"),
    );
}

fn property_disk_inside_gain(g: &mut Gate) {
    let violations: Vec<&String> = g
        .loops
        .iter()
        .filter(|(_, (lo, hi), md)| !(*lo <= (1.0 / md) * (1.0 + 1e-12) && *md <= *hi))
        .map(|(label, _, _)| label)
        .collect();
    let detail = format!("{} analyzed loops, violations: {violations:?}", g.loops.len());
    let pass = violations.is_empty() && !g.loops.is_empty();
    g.report("Property (f) [1/m_d, m_d] inside gain interval", pass, detail);
}

fn csv_bytes(out: &SweepOutput, n_params: usize) -> (Vec<u8>, Vec<u8>) {
    let (mut rows, mut summary) = (Vec::new(), Vec::new());
    write_records(&mut rows, n_params, &out.records).unwrap();
    write_summary(&mut summary, &out.summary).unwrap();
    (rows, summary)
}

fn property_determinism(g: &mut Gate, sweeps: &[(String, SweepOutput)]) {
    let plant = PlantModel::doyle();
    let cfg = TrainConfig::new(Hypercube::doyle(), 200, 50, 77).with_perturbation(PerturbationSpec::uniform(0.1));
    let a = train(&plant, PolicyForm::Companion2, &cfg).unwrap();
    let b = train(&plant, PolicyForm::Companion2, &cfg).unwrap();
    let train_same = a == b;

    let mut sweep_same = true;
    for (name, first) in sweeps {
        let cfg = ExperimentConfig::preset(name).unwrap();
        let mut small = cfg.clone();
        small.sweep.trials = 3;
        let again = run_sweep(&small, 2024).unwrap();
        // The first three trials of every level must match the full run.
        let subset: Vec<_> = first.records.iter().filter(|r| r.trial < 3).cloned().collect();
        let n = cfg.policy.n_params();
        let mut rows_a = Vec::new();
        write_records(&mut rows_a, n, &subset).unwrap();
        let (rows_b, _) = csv_bytes(&again, n);
        let (s1, _) = csv_bytes(&run_sweep(&small, 2024).unwrap(), n);
        sweep_same &= rows_a == rows_b && s1 == rows_b;
    }
    g.report(
        "Property (g) seed determinism of train and sweep",
        train_same && sweep_same,
        format!("train identical: {train_same}, sweep CSV identical: {sweep_same}"),
    );
}

fn main() {
    let mut g = Gate { failures: 0, loops: Vec::new() };
    lqg_doyle(&mut g);
    margins_doyle_lqg(&mut g);
    margins_doyle_theta_opt(&mut g);
    lqg_flexible(&mut g);
    training(&mut g);
    let sweeps = trend(&mut g);
    property_gradient(&mut g);
    property_monte_carlo(&mut g);
    property_residuals(&mut g);
    property_duality(&mut g);
    property_nominal_average(&mut g);
    property_disk_inside_gain(&mut g);
    property_determinism(&mut g, &sweeps);
    println!("acceptance: {} criteria failed", g.failures);
    if g.failures > 0 {
        std::process::exit(1);
    }
}
