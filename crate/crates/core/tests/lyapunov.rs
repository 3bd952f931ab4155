mod common;

use dai_core::controller::{ControllerSet, NetParams, RawPolicy};
use dai_core::cost::CostModel;
use dai_core::dynamics::{ClosedLoop, Integrator, Mode, Scenario, SystemState};
use dai_core::equilibrium::{primary_equilibrium, solve_equilibrium};
use dai_core::lyapunov::{
    certify_trajectory, cross_term, epsilon_and_c_search, sample_dai_states, DaiLyapunov, PrimaryLyapunov,
    Reference, SearchOptions, Tolerances,
};
use dai_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `W` vanishes at the equilibrium, is positive elsewhere, and each
/// dissipation term is non-negative; the closed-form rate equals `grad W . f`.
#[test]
fn integral_certificate_on_random_systems() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.gen_range(3..=6);
        let net = common::random_network(seed, n);
        let costs = CostModel::random_power(4, n, &mut rng).unwrap();
        let policy = RawPolicy::random(n, 4, &mut rng).controllers();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let eq = solve_equilibrium(&net, &costs, &policy, &p).unwrap();
        let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
        let lyap = DaiLyapunov::new(&cl, &eq).unwrap();

        let at = SystemState {
            delta: eq.delta_star.clone(),
            omega: vec![0.0; net.generators().len()],
            s: eq.s_star.clone(),
            t: 0.0,
        };
        assert_eq!(lyap.value(&at), 0.0);
        let terms = lyap.rate_terms(&at);
        assert!(terms.kinetic == 0.0 && terms.cross.abs() < 1e-10 && terms.load < 1e-18, "{terms:?}");

        for st in sample_dai_states(&cl, &eq, 200, seed) {
            assert!(lyap.value(&st) > 0.0, "seed {seed}: {st:?}");
            let t = lyap.rate_terms(&st);
            assert!(t.kinetic >= 0.0 && t.cross >= -1e-12 && t.load >= 0.0, "{t:?}");
            let (a, b) = (lyap.rate(&st), lyap.rate_chain_rule(&st));
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn cross_term_vanishes_only_when_marginal_costs_agree() {
    let net = common::three_bus();
    let costs = CostModel::quadratic(vec![1.0, 2.0, 4.0], vec![0.0; 3]).unwrap();
    let policy = ControllerSet::uniform(3, NetParams::linear(1.0));
    let (v, equal) = cross_term(&net, &costs, &policy, &[4.0, 2.0, 1.0]);
    assert!(v.abs() < 1e-12 && equal);
    let (v, equal) = cross_term(&net, &costs, &policy, &[1.0, 2.0, 1.0]);
    assert!(v > 0.0 && !equal);
}

#[test]
fn primary_certificate_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = common::machines(3);
    let policy = RawPolicy::random(3, 4, &mut rng).controllers();
    let p = [0.2, -0.4, 0.1];
    let eq = primary_equilibrium(&net, &policy, &p).unwrap();
    let cl = ClosedLoop::new(&net, None, &policy, &p, Mode::Primary).unwrap();
    let opts = SearchOptions {
        samples: 300,
        ..SearchOptions::default()
    };
    let (search, samples) = epsilon_and_c_search(&cl, &eq, &opts).unwrap();
    assert!(search.epsilon > 0.0 && search.c > 0.0 && search.min_pivot > 0.0);
    assert!(search.alpha1 > 0.0 && search.alpha1 <= search.alpha2 && search.alpha2.is_finite());

    let lyap = PrimaryLyapunov::new(&cl, &eq, search.epsilon).unwrap();
    for st in &samples {
        let (v, d2) = (lyap.value(st), lyap.distance_sq(st));
        assert!(v >= search.alpha1 * d2 * (1.0 - 1e-12) && v <= search.alpha2 * d2 * (1.0 + 1e-12));
        assert!(lyap.q_matrix(&st.delta).min_eigenvalue() >= search.lambda_min * (1.0 - 1e-12));
        let (a, b) = (lyap.rate(st), lyap.rate_chain_rule(st));
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        assert!(a <= -search.c * v * (1.0 - 1e-9), "rate {a} vs bound {}", -search.c * v);
    }
}

/// RK4 keeps the discrete map monotone even where `W'` passes near zero,
/// which forward Euler at the same step does not.
#[test]
fn converging_trajectory_is_certified() {
    let net = common::three_bus();
    let costs = CostModel::power(4, vec![1.0, 3.0, 2.0], vec![0.0; 3]).unwrap();
    let policy = ControllerSet::uniform(3, NetParams::linear(1.0));
    let p = [-0.4, -0.3, 0.2];
    let eq = solve_equilibrium(&net, &costs, &policy, &p).unwrap();
    let cl = ClosedLoop::new(&net, Some(&costs), &policy, &p, Mode::DaiGeneral).unwrap();
    let traj = cl
        .simulate(&Scenario::new(p.to_vec(), 5.0, 0.001, Mode::DaiGeneral).with_integrator(Integrator::Rk4))
        .unwrap();
    let report = certify_trajectory(&cl, &traj, Reference::Dai(&eq), &Tolerances::default()).unwrap();
    assert!(report.passed, "{:?}", report.first_violation);
    assert!(report.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn certificate_kind_must_match_mode() {
    let net = common::machines(2);
    let policy = ControllerSet::uniform(2, NetParams::linear(1.0));
    let p = [0.1, -0.1];
    let cl = ClosedLoop::new(&net, None, &policy, &p, Mode::Primary).unwrap();
    let traj = cl.simulate(&Scenario::new(p.to_vec(), 0.01, 0.001, Mode::Primary)).unwrap();
    let costs = CostModel::quadratic(vec![1.0; 2], vec![0.0; 2]).unwrap();
    let eq = solve_equilibrium(&net, &costs, &policy, &p).unwrap();
    let err = certify_trajectory(&cl, &traj, Reference::Dai(&eq), &Tolerances::default()).err();
    assert!(matches!(err, Some(Error::ModeMismatch { .. })));
}
