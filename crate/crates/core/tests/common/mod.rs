#![allow(dead_code)]

use dai_core::grid::PowerNetwork;

/// Triangle with two generators and one load bus.
pub fn three_bus() -> PowerNetwork {
    PowerNetwork::from_json(
        r#"{"name": "three",
            "base": {"f0": 50},
            "buses": [{"id": 1, "kind": "gen", "m": 6.0, "alpha": 3.0},
                      {"id": 2, "kind": "load", "alpha": 10.0},
                      {"id": 3, "kind": "gen", "m": 5.0, "alpha": 2.5}],
            "lines": [{"i": 1, "j": 2, "B": 3.0},
                      {"i": 2, "j": 3, "B": 2.0},
                      {"i": 1, "j": 3, "B": 2.5}],
            "comm": [{"i": 1, "j": 2, "Q": 10.0},
                     {"i": 2, "j": 3, "Q": 10.0}]}"#,
    )
    .unwrap()
}

/// Three machines on a ring of six load buses with the classic 9-bus reactances.
pub fn nine_bus() -> PowerNetwork {
    PowerNetwork::from_json(
        r#"{"name": "nine",
            "base": {"f0": 60},
            "buses": [{"id": 1, "kind": "gen", "m": 47.28, "alpha": 2.0},
                      {"id": 2, "kind": "gen", "m": 12.8, "alpha": 2.0},
                      {"id": 3, "kind": "gen", "m": 6.02, "alpha": 2.0},
                      {"id": 4, "kind": "load", "alpha": 50.0},
                      {"id": 5, "kind": "load", "alpha": 50.0},
                      {"id": 6, "kind": "load", "alpha": 50.0},
                      {"id": 7, "kind": "load", "alpha": 50.0},
                      {"id": 8, "kind": "load", "alpha": 50.0},
                      {"id": 9, "kind": "load", "alpha": 50.0}],
            "lines": [{"i": 1, "j": 4, "B": 17.361},
                      {"i": 4, "j": 5, "B": 10.870},
                      {"i": 4, "j": 6, "B": 11.765},
                      {"i": 5, "j": 7, "B": 6.211},
                      {"i": 6, "j": 9, "B": 5.882},
                      {"i": 7, "j": 8, "B": 13.889},
                      {"i": 8, "j": 9, "B": 9.921},
                      {"i": 2, "j": 7, "B": 16.0},
                      {"i": 3, "j": 9, "B": 17.065}],
            "comm": [{"i": 1, "j": 2, "Q": 10.0}, {"i": 2, "j": 3, "Q": 10.0},
                     {"i": 3, "j": 4, "Q": 10.0}, {"i": 4, "j": 5, "Q": 10.0},
                     {"i": 5, "j": 6, "Q": 10.0}, {"i": 6, "j": 7, "Q": 10.0},
                     {"i": 7, "j": 8, "Q": 10.0}, {"i": 8, "j": 9, "Q": 10.0},
                     {"i": 9, "j": 1, "Q": 10.0}]}"#,
    )
    .unwrap()
}

/// All-machine system for the primary-control certificate.
pub fn machines(n: usize) -> PowerNetwork {
    let buses: Vec<String> = (1..=n)
        .map(|i| {
            format!(
                r#"{{"id": {i}, "kind": "gen", "m": {}, "alpha": {}}}"#,
                2.0 + i as f64,
                1.0 + 0.5 * i as f64
            )
        })
        .collect();
    let lines: Vec<String> = (1..n)
        .map(|i| format!(r#"{{"i": {i}, "j": {}, "B": {}}}"#, i + 1, 1.0 + 0.5 * i as f64))
        .collect();
    PowerNetwork::from_json(&format!(
        r#"{{"base": {{"f0": 50}}, "buses": [{}], "lines": [{}]}}"#,
        buses.join(","),
        lines.join(",")
    ))
    .unwrap()
}

/// Random connected network: a spanning tree plus a few chords, mixed bus kinds,
/// and a communication graph on the same edges with random weights.
pub fn random_network(seed: u64, n: usize) -> PowerNetwork {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let buses: Vec<String> = (1..=n)
        .map(|i| {
            let alpha: f64 = rng.gen_range(0.5..3.0);
            let v: f64 = rng.gen_range(0.9..1.1);
            if i == 1 || rng.gen_bool(0.5) {
                let m: f64 = rng.gen_range(1.0..8.0);
                format!(r#"{{"id": {i}, "kind": "gen", "m": {m}, "alpha": {alpha}, "v": {v}}}"#)
            } else {
                format!(r#"{{"id": {i}, "kind": "load", "alpha": {alpha}, "v": {v}}}"#)
            }
        })
        .collect();
    let mut pairs = std::collections::BTreeSet::new();
    for j in 2..=n {
        pairs.insert((rng.gen_range(1..j), j));
    }
    for _ in 0..n / 2 {
        let i = rng.gen_range(1..=n);
        let j = rng.gen_range(1..=n);
        if i != j {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let mut lines = Vec::new();
    let mut comm = Vec::new();
    for (i, j) in pairs {
        lines.push(format!(r#"{{"i": {i}, "j": {j}, "B": {}}}"#, rng.gen_range(0.5..4.0)));
        comm.push(format!(r#"{{"i": {i}, "j": {j}, "Q": {}}}"#, rng.gen_range(0.2..3.0)));
    }
    PowerNetwork::from_json(&format!(
        r#"{{"base": {{"f0": 50}}, "buses": [{}], "lines": [{}], "comm": [{}]}}"#,
        buses.join(","),
        lines.join(","),
        comm.join(",")
    ))
    .unwrap()
}
