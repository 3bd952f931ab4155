//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dai_core::controller::{
    construct_from_samples, ControllerSet, Limits, NetParams, Policy, RawParams, RawPolicy, ZeroPolicy,
};
use dai_core::cost::{CostFamily, CostModel, CostSpec};
use dai_core::dynamics::{ClosedLoop, Integrator, Mode, Scenario, Trajectory};
use dai_core::equilibrium::{primary_equilibrium, solve_equilibrium, solve_gamma, steady_injections, Equilibrium};
use dai_core::grid::{case39, PowerNetwork};
use dai_core::lyapunov::{
    certify_trajectory, cross_term, epsilon_and_c_search, CertificationReport, PrimaryLyapunov, Reference,
    SearchOptions, Tolerances,
};
use dai_core::training::{grad_check, train, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// Criterion 2 and 4 scenarios.
const H_EULER: f64 = 0.0005;
const H_FD: f64 = 0.0001;
const RESTORE_HORIZON: f64 = 40.0;
const FD_HORIZON: f64 = 5.0;
const FD_REL: f64 = 1e-3;

struct Case {
    name: &'static str,
    net: PowerNetwork,
    costs: CostModel,
    policy: ControllerSet,
    p: Vec<f64>,
}

fn restoration_cases() -> Vec<Case> {
    let bent = NetParams {
        k_plus: vec![1.0, 0.5],
        b_plus: vec![0.0, 0.1],
        k_minus: vec![-1.0, -0.5],
        b_minus: vec![0.0, -0.1],
        limits: Limits {
            u_lo: -2.0,
            u_hi: 2.0,
            dz: 0.0,
        },
    };
    vec![
        Case {
            name: "3-bus",
            net: common::three_bus(),
            costs: CostModel::power(4, vec![1.0, 8.0, 1.0], vec![0.0; 3]).unwrap(),
            policy: ControllerSet::uniform(3, NetParams::linear(1.0)),
            p: vec![-0.5, -1.0, 0.3],
        },
        Case {
            name: "9-bus",
            net: common::nine_bus(),
            costs: CostModel::power(4, vec![1.0, 8.0, 1.0, 2.0, 0.5, 1.0, 3.0, 1.0, 1.5], vec![0.0; 9]).unwrap(),
            policy: ControllerSet::uniform(9, bent),
            p: vec![0.0, 0.0, 0.0, -1.0, 0.0, -0.8, 0.0, 0.5, 0.0],
        },
    ]
}

fn simulate(case: &Case, policy: &dyn Policy, horizon: f64, h: f64, integrator: Integrator) -> Result<Trajectory, String> {
    let cl = ok(ClosedLoop::new(&case.net, Some(&case.costs), policy, &case.p, Mode::DaiGeneral))?;
    ok(cl.simulate(&Scenario::new(case.p.clone(), horizon, h, Mode::DaiGeneral).with_integrator(integrator)))
}

fn certify(case: &Case, policy: &dyn Policy, eq: &Equilibrium, traj: &Trajectory, tol: &Tolerances) -> Result<CertificationReport, String> {
    let cl = ok(ClosedLoop::new(&case.net, Some(&case.costs), policy, &case.p, Mode::DaiGeneral))?;
    ok(certify_trajectory(&cl, traj, Reference::Dai(eq), tol))
}

fn criterion_1() -> Outcome {
    let costs = ok(CostModel::power(4, vec![1.0, 8.0, 1.0], vec![0.0; 3]))?;
    let p = [-1.0, -0.5, -0.5];
    // zeta = (1, 2, 1), sum u* = y (1 + 1/2 + 1) = 2 gives y = 0.8 and gamma = y^3.
    let analytic = 0.512;
    let gamma = ok(solve_gamma(&costs, &p))?;
    let u = ok(steady_injections(&costs, gamma))?;
    let mc_err = (0..3).map(|i| (costs.grad_cost(i, u[i]) - gamma).abs()).fold(0.0, f64::max);
    let sum_err = (u.iter().sum::<f64>() - 2.0).abs();
    let gamma_err = (gamma - analytic).abs();
    ensure!(mc_err < 1e-8, "marginal cost error {mc_err:e}");
    ensure!(sum_err < 1e-10, "balance error {sum_err:e}");
    ensure!(gamma_err < 1e-10, "gamma {gamma} vs {analytic}");
    Ok(format!("gamma err {gamma_err:.1e}, mc err {mc_err:.1e}, balance err {sum_err:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut notes = Vec::new();
    for case in restoration_cases() {
        let traj = simulate(&case, &case.policy, RESTORE_HORIZON, H_EULER, Integrator::Euler)?;
        let last = traj.last();
        let (w, spread) = (last.max_abs_omega(), last.mc_spread());
        ensure!(w < 1e-4, "{}: max |w| {w:e} at t = {}", case.name, last.t);
        ensure!(spread < 1e-3, "{}: marginal cost spread {spread:e}", case.name);
        notes.push(format!("{} |w| {w:.1e} spread {spread:.1e}", case.name));
    }
    Ok(notes.join("; "))
}

fn criterion_3() -> Outcome {
    let net = common::three_bus();
    let p = vec![-0.6, 0.2, -0.4];
    let zero = ZeroPolicy(3);
    let cl = ok(ClosedLoop::new(&net, None, &zero, &p, Mode::Primary))?;
    let traj = ok(cl.simulate(&Scenario::new(p.clone(), 60.0, 0.001, Mode::Primary)))?;
    let expected = p.iter().sum::<f64>() / net.alpha().iter().sum::<f64>();
    let err = traj.last().omega.iter().map(|w| (w - expected).abs()).fold(0.0, f64::max);
    ensure!(err < 1e-5, "settled {:?} vs {expected}", traj.last().omega);
    Ok(format!("w* = {expected:.6}, max deviation {err:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let strict = Tolerances {
        fd_rel: Some(FD_REL),
        ..Tolerances::default()
    };
    for case in restoration_cases() {
        let eq = ok(solve_equilibrium(&case.net, &case.costs, &case.policy, &case.p))?;
        let traj = simulate(&case, &case.policy, RESTORE_HORIZON, H_EULER, Integrator::Euler)?;
        let rep = certify(&case, &case.policy, &eq, &traj, &Tolerances::default())?;
        ensure!(rep.passed, "{}: {:?}", case.name, rep.first_violation);
        let fine = simulate(&case, &case.policy, FD_HORIZON, H_FD, Integrator::Rk4)?;
        let rep_fd = certify(&case, &case.policy, &eq, &fine, &strict)?;
        ensure!(rep_fd.passed, "{}: {:?}", case.name, rep_fd.first_violation);
        notes.push(format!(
            "{} margin {:.1e}, fd err {:.1e} over {} pts",
            case.name, rep.min_decrease_margin, rep_fd.max_fd_rel_err, rep_fd.fd_checked
        ));
    }
    // u = -s violates monotonicity; its would-be equilibrium sits at s* = -u*.
    let case = &restoration_cases()[0];
    let good = ok(solve_equilibrium(&case.net, &case.costs, &case.policy, &case.p))?;
    let flipped = ControllerSet::uniform(3, NetParams::linear(-1.0));
    let eq = Equilibrium {
        s_star: good.u_star.iter().map(|u| -u).collect(),
        ..good
    };
    let traj = simulate(case, &flipped, 0.02, H_EULER, Integrator::Euler)?;
    let rep = certify(case, &flipped, &eq, &traj, &Tolerances::default())?;
    ensure!(!rep.passed, "non-monotone controller was certified");
    let v = rep.first_violation.expect("failed report names a violation");
    notes.push(format!("negative control rejected ({:?} at t = {:.4})", v.kind, v.t));
    Ok(notes.join("; "))
}

fn random_limits(rng: &mut ChaCha8Rng) -> Limits {
    Limits {
        u_lo: if rng.gen_bool(0.5) { -rng.gen_range(0.1..2.0) } else { f64::NEG_INFINITY },
        u_hi: if rng.gen_bool(0.5) { rng.gen_range(0.1..2.0) } else { f64::INFINITY },
        dz: if rng.gen_bool(0.5) { rng.gen_range(0.0..0.3) } else { 0.0 },
    }
}

fn random_network(rng: &mut ChaCha8Rng, n: usize) -> PowerNetwork {
    let buses: Vec<String> = (1..=n)
        .map(|i| format!(r#"{{"id": {i}, "kind": "gen", "m": 1.0, "alpha": 1.0}}"#))
        .collect();
    let mut lines = Vec::new();
    let mut comm = Vec::new();
    let mut parent = 0;
    for j in 2..=n {
        parent = rng.gen_range(1..j);
        lines.push(format!(r#"{{"i": {parent}, "j": {j}, "B": 1.0}}"#));
        comm.push(format!(r#"{{"i": {parent}, "j": {j}, "Q": {}}}"#, rng.gen_range(0.1..5.0)));
    }
    let extra = rng.gen_range(1..n);
    if extra != parent {
        comm.push(format!(r#"{{"i": {extra}, "j": {n}, "Q": {}}}"#, rng.gen_range(0.1..5.0)));
    }
    PowerNetwork::from_json(&format!(
        r#"{{"base": {{"f0": 50}}, "buses": [{}], "lines": [{}], "comm": [{}]}}"#,
        buses.join(","),
        lines.join(","),
        comm.join(",")
    ))
    .unwrap()
}

fn random_costs(rng: &mut ChaCha8Rng, n: usize) -> CostModel {
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..3.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.001)).collect();
    match rng.gen_range(0..3) {
        0 => CostModel::new(CostFamily::Quadratic, c, b),
        1 => CostModel::new(CostFamily::PowerR { r: 2 * rng.gen_range(1..=4) }, c, b),
        _ => CostModel::shifted_common((0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0.1..2.0)).collect(), b),
    }
    .unwrap()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=6);
        let net = random_network(&mut rng, n);
        let costs = random_costs(&mut rng, n);
        let mut raw = RawPolicy::random(n, rng.gen_range(1..=6), &mut rng);
        raw.limits = (0..n).map(|_| random_limits(&mut rng)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (value, _) = cross_term(&net, &costs, &raw.controllers(), &s);
        worst = worst.min(value);
        ensure!(value >= -1e-12, "cross term {value:e}");
    }
    // Power-of-two coefficients and slopes make equal marginal costs exact in floating point.
    for _ in 0..1000 {
        let n = rng.gen_range(2..=6);
        let net = random_network(&mut rng, n);
        let c: Vec<f64> = (0..n).map(|_| 2f64.powi(rng.gen_range(-3..=3))).collect();
        let k: Vec<f64> = (0..n).map(|_| 2f64.powi(rng.gen_range(-3..=3))).collect();
        let costs = CostModel::quadratic(c.clone(), vec![0.0; n]).unwrap();
        let policy = ControllerSet::new(k.iter().map(|&k| NetParams::linear(k)).collect());
        let lambda: f64 = rng.gen_range(-2.0..2.0);
        let s: Vec<f64> = (0..n).map(|i| lambda / c[i] / k[i]).collect();
        let (value, equal) = cross_term(&net, &costs, &policy, &s);
        ensure!(equal, "construction failed to equalize marginal costs");
        ensure!(value == 0.0, "equalized cross term {value:e}");
    }
    Ok(format!("min over 1000 draws {worst:.2e}; 1000 equalized draws exactly 0"))
}

fn tiny_net(rng: &mut ChaCha8Rng) -> PowerNetwork {
    let (m, a1, a2, b): (f64, f64, f64, f64) = (
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.5..2.0),
    );
    let second = if rng.gen_bool(0.5) {
        format!(r#"{{"id": 2, "kind": "load", "alpha": {a2}}}"#)
    } else {
        format!(r#"{{"id": 2, "kind": "gen", "m": {}, "alpha": {a2}}}"#, m + 0.5)
    };
    PowerNetwork::from_json(&format!(
        r#"{{"base": {{"f0": 50}},
            "buses": [{{"id": 1, "kind": "gen", "m": {m}, "alpha": {a1}}}, {second}],
            "lines": [{{"i": 1, "j": 2, "B": {b}}}]}}"#
    ))
    .unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut accepted, mut resampled, mut worst) = (0, 0, 0.0_f64);
    while accepted < 10 {
        ensure!(resampled < 200, "too many tie configurations");
        let net = tiny_net(&mut rng);
        let costs = ok(CostModel::random_power(4, 2, &mut rng))?;
        let steps = rng.gen_range(3..=10);
        let trainer = ok(Trainer::new(&net, &costs, 0.5, 0.002, steps))?;
        let policy = RawPolicy::random(2, 2, &mut rng);
        let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let check = ok(grad_check(&trainer, &policy, &p, 1e-6))?;
        if check.kink_margin < 1e-4 || check.peak_gap < 1e-3 {
            resampled += 1;
            continue;
        }
        accepted += 1;
        worst = worst.max(check.max_rel_err);
        ensure!(check.max_rel_err < 1e-4, "relative error {:e}", check.max_rel_err);
    }
    Ok(format!("{accepted} instances ({resampled} resampled), worst rel err {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let net = common::three_bus();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let costs = ok(CostSpec::default().build(3, &mut rng))?;
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 20,
        lr0: 0.1,
        horizon: 1.0,
        p_lo: -1.0,
        p_hi: 1.0,
        fixed_batch: true,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut checked = 0;
    let out = ok(train(&net, &costs, &cfg, None, |_, policy| {
        policy.controllers().check_constraints()?;
        checked += 1;
        Ok(())
    }))?;
    let (first, last) = (out.history[0].loss, out.history[19].loss);
    ensure!(checked == 20, "constraints asserted on {checked} epochs");
    ensure!(last < first, "loss went from {first} to {last}");

    let policy = out.policy.controllers();
    let case = Case {
        name: "trained",
        net,
        costs,
        policy,
        p: vec![-0.5, -1.0, 0.3],
    };
    let eq = ok(solve_equilibrium(&case.net, &case.costs, &case.policy, &case.p))?;
    let traj = simulate(&case, &case.policy, RESTORE_HORIZON, H_EULER, Integrator::Euler)?;
    let rep = certify(&case, &case.policy, &eq, &traj, &Tolerances::default())?;
    ensure!(rep.passed, "trained controller: {:?}", rep.first_violation);
    let fine = simulate(&case, &case.policy, FD_HORIZON, H_FD, Integrator::Rk4)?;
    let strict = Tolerances {
        fd_rel: Some(FD_REL),
        ..Tolerances::default()
    };
    let rep_fd = certify(&case, &case.policy, &eq, &fine, &strict)?;
    ensure!(rep_fd.passed, "trained controller derivative check: {:?}", rep_fd.first_violation);
    Ok(format!(
        "J(1) = {first:.6}, J(20) = {last:.6}; certified (fd err {:.1e})",
        rep_fd.max_fd_rel_err
    ))
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    for n in [2, 3, 4] {
        let net = common::machines(n);
        let mut rng = ChaCha8Rng::seed_from_u64(80 + n as u64);
        let policy = RawPolicy::random(n, 4, &mut rng).controllers();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let eq = ok(primary_equilibrium(&net, &policy, &p))?;
        let cl = ok(ClosedLoop::new(&net, None, &policy, &p, Mode::Primary))?;
        let (found, samples) = ok(epsilon_and_c_search(&cl, &eq, &SearchOptions::default()))?;
        ensure!(found.min_pivot > 0.0 && found.lambda_min > 0.0, "Q not positive definite: {found:?}");
        let lyap = ok(PrimaryLyapunov::new(&cl, &eq, found.epsilon))?;
        let mut worst_gap = f64::NEG_INFINITY;
        for st in &samples {
            let (v, vdot) = (lyap.value(st), lyap.rate(st));
            ensure!(vdot <= 0.0, "{n} buses: V' = {vdot:e} > 0");
            worst_gap = worst_gap.max(vdot + found.c * v);
            ensure!(vdot <= -found.c * v, "{n} buses: V' = {vdot:e} > -c V = {:e}", -found.c * v);
        }
        notes.push(format!("n={n} eps {:.0e} c {:.2e}", found.epsilon, found.c));
    }
    Ok(notes.join("; "))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let d = rng.gen_range(1..=20);
        let net = RawParams::random(d, &mut rng).transform(random_limits(&mut rng));
        ensure!(net.eval(0.0) == 0.0, "u(0) = {}", net.eval(0.0));
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let x = -5.0 + 0.025 * k as f64;
            let u = net.eval(x);
            ensure!(u >= prev, "decrease at x = {x}");
            prev = u;
        }
    }
    let sup_err = |d: usize| -> Result<f64, String> {
        let net = ok(construct_from_samples(f64::tanh, d, -3.0, 3.0))?;
        Ok((0..=6000)
            .map(|k| -3.0 + 0.001 * k as f64)
            .map(|x| (net.eval(x) - x.tanh()).abs())
            .fold(0.0, f64::max))
    };
    let errs = [sup_err(5)?, sup_err(10)?, sup_err(20)?];
    ensure!(errs[0] > errs[1] && errs[1] > errs[2], "tanh errors {errs:?}");
    Ok(format!("1000 monotone draws; tanh sup err d=5 {:.2e}, d=10 {:.2e}, d=20 {:.2e}", errs[0], errs[1], errs[2]))
}

fn criterion_10() -> Outcome {
    let net = ok(case39().with_complete_comm(1.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let costs = ok(CostSpec::default().build(net.n(), &mut rng))?;
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 5,
        ..TrainConfig::default()
    };
    let out = ok(train(&net, &costs, &cfg, None, |_, _| Ok(())))?;
    let policy = out.policy.controllers();
    let mut p = vec![0.0; net.n()];
    for bus in [13, 21, 27] {
        p[bus - 1] = -3.0;
    }
    let cl = ok(ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral))?;
    let traj = ok(cl.simulate(&Scenario::new(p.clone(), 60.0, H_EULER, Mode::DaiGeneral).with_stride(200)))?;
    let last = traj.last();
    let (w, spread) = (last.max_abs_omega(), last.mc_spread());
    ensure!(w < 1e-3, "max |w| {w:e} at t = {}", last.t);
    ensure!(spread < 1e-2, "marginal cost spread {spread:e} at t = {}", last.t);
    Ok(format!(
        "{} epochs, final loss {:.4}; at t = {:.0} s |w| {w:.1e}, spread {spread:.1e}",
        cfg.epochs,
        out.history.last().map(|r| r.loss).unwrap_or(f64::NAN),
        last.t
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("equilibrium exactness", criterion_1, Duration::from_secs(1)),
        ("frequency restoration", criterion_2, Duration::from_secs(30)),
        ("open-loop synchronous frequency", criterion_3, Duration::from_secs(10)),
        ("Lyapunov decrease", criterion_4, Duration::from_secs(60)),
        ("cross-term sign", criterion_5, Duration::from_secs(60)),
        ("gradient audit", criterion_6, Duration::from_secs(10)),
        ("training descent", criterion_7, Duration::from_secs(300)),
        ("exponential certificate", criterion_8, Duration::from_secs(60)),
        ("monotone construction", criterion_9, Duration::from_secs(30)),
        ("case39 end to end", criterion_10, Duration::from_secs(1800)),
    ];
    let mut failed = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > *budget => Err(format!("took {elapsed:.1?}, budget {budget:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{elapsed:.2?}]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{elapsed:.2?}]", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
