mod common;

use dai_core::controller::{ControllerSet, LinearPolicy, NetParams, RawPolicy};
use dai_core::cost::CostModel;
use dai_core::dynamics::{ClosedLoop, Integrator, Mode, Scenario, SystemState};
use dai_core::equilibrium::solve_equilibrium;
use dai_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn equilibrium_is_an_euler_fixed_point() {
    let h = 0.001;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=6);
        let net = common::random_network(seed, n);
        let costs = CostModel::random_power(4, n, &mut rng).unwrap();
        let policy = RawPolicy::random(n, 4, &mut rng).controllers();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let eq = solve_equilibrium(&net, &costs, &policy, &p).unwrap();
        let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
        let st = SystemState {
            delta: eq.delta_star.clone(),
            omega: vec![0.0; net.generators().len()],
            s: eq.s_star.clone(),
            t: 0.0,
        };
        let next = cl.euler_step(&st, h, 0).unwrap();
        assert!(max_diff(&next.delta, &st.delta) < h * 1e-8, "seed {seed}");
        assert!(max_diff(&next.omega, &st.omega) < h * 1e-8, "seed {seed}");
        assert!(max_diff(&next.s, &st.s) < h * 1e-8, "seed {seed}");
    }
}

#[test]
fn simulation_is_deterministic() {
    let net = common::three_bus();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let costs = CostModel::random_power(4, 3, &mut rng).unwrap();
    let policy = RawPolicy::random(3, 4, &mut rng).controllers();
    let p = [-0.4, 0.2, -0.3];
    let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
    let sc = Scenario::new(p.to_vec(), 2.0, 0.0005, Mode::DaiGeneral).with_stride(50);
    let a = cl.simulate(&sc).unwrap();
    let b = cl.simulate(&sc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn common_phase_shift_leaves_frequencies_unchanged() {
    let net = common::three_bus();
    let costs = CostModel::quadratic(vec![1.0, 2.0, 0.5], vec![0.0; 3]).unwrap();
    let policy = ControllerSet::uniform(3, NetParams::linear(1.0));
    let p = [-0.5, -0.2, 0.3];
    let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
    let base = SystemState {
        delta: vec![0.05, -0.02, -0.03],
        omega: vec![0.01, -0.01],
        s: vec![0.2, 0.0, -0.1],
        t: 0.0,
    };
    let mut shifted = base.clone();
    shifted.delta.iter_mut().for_each(|d| *d += 0.7);
    let sc = Scenario::new(p.to_vec(), 1.0, 0.0005, Mode::DaiGeneral);
    let a = cl.simulate(&sc.clone().with_initial(base)).unwrap();
    let b = cl.simulate(&sc.with_initial(shifted)).unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!(max_diff(&ra.omega, &rb.omega) < 1e-12, "t = {}", ra.t);
        assert!(max_diff(&ra.s, &rb.s) < 1e-12, "t = {}", ra.t);
    }
}

#[test]
fn linear_mode_tracks_general_mode_for_quadratic_costs() {
    let net = common::three_bus();
    let costs = CostModel::quadratic(vec![0.8, 1.5, 2.5], vec![0.0; 3]).unwrap();
    let policy = LinearPolicy { gains: vec![1.0, 0.6, 1.4] };
    let p = [-0.3, -0.6, 0.4];
    let sc_general = Scenario::new(p.to_vec(), 1.0, 0.0005, Mode::DaiGeneral).with_stride(100);
    let sc_linear = Scenario { mode: Mode::DaiLinear, ..sc_general.clone() };
    let a = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral)
        .unwrap()
        .simulate(&sc_general)
        .unwrap();
    let b = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiLinear)
        .unwrap()
        .simulate(&sc_linear)
        .unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!(max_diff(&ra.omega, &rb.omega) < 1e-9);
        assert!(max_diff(&ra.s, &rb.s) < 1e-9);
    }
}

#[test]
fn linear_mode_rejects_non_quadratic_costs() {
    let net = common::three_bus();
    let costs = CostModel::power(4, vec![1.0; 3], vec![0.0; 3]).unwrap();
    let policy = LinearPolicy { gains: vec![1.0; 3] };
    let p = [0.0; 3];
    let err = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiLinear).err();
    assert!(matches!(err, Some(Error::InvalidScenario(_))));
}

#[test]
fn scenario_and_loop_must_agree() {
    let net = common::three_bus();
    let costs = CostModel::quadratic(vec![1.0; 3], vec![0.0; 3]).unwrap();
    let policy = LinearPolicy { gains: vec![1.0; 3] };
    let p = [0.0; 3];
    let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
    let sc = Scenario::new(p.to_vec(), 1.0, 0.001, Mode::Primary);
    assert!(matches!(cl.simulate(&sc), Err(Error::ModeMismatch { .. })));
    let sc = Scenario::new(p.to_vec(), 1.0, -0.001, Mode::DaiGeneral);
    assert!(matches!(cl.simulate(&sc), Err(Error::InvalidScenario(_))));
    assert!(ClosedLoop::new(&net, None, &policy, &p, Mode::DaiGeneral).is_err());
}

/// Halving the step reduces the RK4 endpoint error by roughly 16.
#[test]
fn rk4_is_fourth_order() {
    let net = common::three_bus();
    let costs = CostModel::quadratic(vec![1.0, 2.0, 0.5], vec![0.0; 3]).unwrap();
    let policy = LinearPolicy { gains: vec![1.0; 3] };
    let p = [-0.5, -0.2, 0.3];
    let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
    let end = |h: f64| {
        let sc = Scenario::new(p.to_vec(), 0.2, h, Mode::DaiGeneral)
            .with_integrator(Integrator::Rk4)
            .with_stride(usize::MAX);
        let tr = cl.simulate(&sc).unwrap();
        let last = tr.last().clone();
        [last.delta, last.omega_dyn, last.s].concat()
    };
    let reference = end(0.0000625);
    let e1 = max_diff(&end(0.002), &reference);
    let e2 = max_diff(&end(0.001), &reference);
    let order = (e1 / e2).log2();
    assert!((3.5..4.5).contains(&order), "observed order {order:.2} ({e1:.3e}, {e2:.3e})");
}
