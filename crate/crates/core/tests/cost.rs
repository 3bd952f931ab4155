use dai_core::cost::{CostFamily, CostModel, CostSpec};
use proptest::prelude::*;
use rand::SeedableRng;

fn family() -> impl Strategy<Value = CostFamily> {
    prop_oneof![
        Just(CostFamily::Quadratic),
        (1u32..=4).prop_map(|k| CostFamily::PowerR { r: 2 * k }),
        prop::collection::vec(0.1f64..2.0, 1..4).prop_map(|coeffs| CostFamily::ShiftedCommon { coeffs }),
    ]
}

fn model() -> impl Strategy<Value = CostModel> {
    (family(), prop::collection::vec(0.05f64..3.0, 1..6)).prop_map(|(f, c)| {
        let n = c.len();
        match f {
            CostFamily::ShiftedCommon { coeffs } => CostModel::shifted_common(coeffs, vec![0.0005; n]).unwrap(),
            f => CostModel::new(f, c, vec![0.0005; n]).unwrap(),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gradients_increase(m in model(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = (a.min(b), a.max(b));
        for i in 0..m.n() {
            prop_assert!(m.grad_cost(i, lo) < m.grad_cost(i, hi));
        }
    }

    #[test]
    fn inverse_round_trips(m in model(), u in -3.0f64..3.0) {
        for i in 0..m.n() {
            let back = m.grad_cost_inverse(i, m.grad_cost(i, u)).unwrap();
            prop_assert!((back - u).abs() < 1e-9, "bus {i}: {u} -> {back}");
        }
    }

    #[test]
    fn scaled_inverses_agree(m in model(), y in -20.0f64..20.0) {
        let common = m.common_grad_inverse(y).unwrap();
        for i in 0..m.n() {
            let scaled = m.zeta()[i] * m.grad_cost_inverse(i, y).unwrap();
            prop_assert!((scaled - common).abs() <= 1e-9 * (1.0 + common.abs()));
        }
    }

    #[test]
    fn bisection_agrees_with_closed_form(r in 1u32..=4, y in -50.0f64..50.0) {
        let m = CostModel::power(2 * r, vec![1.0], vec![0.0]).unwrap();
        let a = m.common_grad_inverse(y).unwrap();
        let b = m.common_grad_inverse_bisect(y).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn quadratic_gradient_is_linear(c in 0.01f64..10.0, u in -5.0f64..5.0) {
        let m = CostModel::quadratic(vec![c], vec![0.0]).unwrap();
        prop_assert_eq!(m.grad_cost(0, u), c * u);
        prop_assert_eq!(m.cost(0, u), 0.5 * c * u * u);
    }
}

#[test]
fn spec_builds_reproducibly_from_seed() {
    let spec: CostSpec = serde_json::from_str(r#"{"family": "power_r", "r": 4}"#).unwrap();
    let a = spec.build(5, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = spec.build(5, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert!(a.c().iter().all(|&c| c > 0.0 && c < 1.0));
    assert!(a.b().iter().all(|&b| (0.0..0.001).contains(&b)));
}

#[test]
fn odd_power_is_rejected() {
    assert!(CostModel::power(3, vec![1.0], vec![0.0]).is_err());
    assert!(CostModel::quadratic(vec![0.0], vec![0.0]).is_err());
}
