//! Lossless power network model: buses, lines, communication graph and the
//! potential-energy functions built on top of them.
//!
//! Buses are addressed by zero-based index internally. Network files label
//! buses `1..=n`; the loader translates.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

/// Mean offsets smaller than this are silently removed from angle vectors.
pub const GAUGE_SILENT: f64 = 1e-9;
/// Mean offsets larger than this indicate corrupted state.
pub const GAUGE_FATAL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Gen,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    pub alpha: f64,
    #[serde(default = "unit_voltage")]
    pub v: f64,
}

fn unit_voltage() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "B")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSpec {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub f0: f64,
    #[serde(rename = "S0", default = "default_s0")]
    pub s0: f64,
}

fn default_s0() -> f64 {
    100.0
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: BaseSpec,
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<Vec<CommSpec>>,
}

/// A physical line between buses `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Line susceptance.
    pub b: f64,
    /// Coupling strength `v_i v_j B_ij`.
    pub a: f64,
}

/// A communication link between buses `i < j` with weight `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommEdge {
    pub i: usize,
    pub j: usize,
    pub q: f64,
}

/// Validated, immutable network.
#[derive(Debug, Clone)]
pub struct PowerNetwork {
    name: String,
    kinds: Vec<BusKind>,
    m: Vec<Option<f64>>,
    alpha: Vec<f64>,
    v: Vec<f64>,
    f0: f64,
    s0: f64,
    edges: Vec<Edge>,
    comm: Vec<CommEdge>,
    generators: Vec<usize>,
    loads: Vec<usize>,
}

/// Reads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<PowerNetwork> {
    let text = std::fs::read_to_string(path)?;
    PowerNetwork::from_json(&text)
}

/// The bundled New England 39-bus system.
pub fn case39() -> PowerNetwork {
    PowerNetwork::from_json(include_str!("../data/case39.json"))
        .expect("bundled case39 data is valid")
}

/// Re-expresses angles relative to their mean.
pub fn to_center_of_inertia(theta: &[f64]) -> Vec<f64> {
    if theta.is_empty() {
        return Vec::new();
    }
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    theta.iter().map(|t| t - mean).collect()
}

/// Removes small gauge drift in place; errors when the drift is implausibly large.
pub fn enforce_gauge(delta: &mut [f64]) -> Result<()> {
    if delta.is_empty() {
        return Ok(());
    }
    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
    if !mean.is_finite() || mean.abs() > GAUGE_FATAL {
        return Err(Error::GaugeDrift { drift: mean });
    }
    if mean.abs() > GAUGE_SILENT {
        delta.iter_mut().for_each(|d| *d -= mean);
    }
    Ok(())
}

impl PowerNetwork {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn from_spec(spec: &NetworkSpec) -> Result<Self> {
        let n = spec.buses.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("no buses".into()));
        }
        if !(spec.base.f0 > 0.0 && spec.base.f0.is_finite()) {
            return Err(Error::NonPositive {
                field: "f0",
                bus: 0,
                value: spec.base.f0,
            });
        }

        let mut slot: Vec<Option<&BusSpec>> = vec![None; n];
        for bus in &spec.buses {
            if bus.id == 0 || bus.id > n {
                return Err(Error::InvalidNetwork(format!(
                    "bus id {} outside 1..={n}",
                    bus.id
                )));
            }
            if slot[bus.id - 1].replace(bus).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate bus id {}", bus.id)));
            }
        }
        let buses: Vec<&BusSpec> = slot.into_iter().map(|b| b.expect("ids are a permutation")).collect();

        let mut kinds = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for bus in &buses {
            let check = |field: &'static str, value: f64| {
                if value > 0.0 && value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::NonPositive {
                        field,
                        bus: bus.id,
                        value,
                    })
                }
            };
            alpha.push(check("alpha", bus.alpha)?);
            v.push(check("v", bus.v)?);
            match (bus.kind, bus.m) {
                (BusKind::Gen, Some(mi)) => m.push(Some(check("m", mi)?)),
                (BusKind::Gen, None) => {
                    return Err(Error::InvalidNetwork(format!(
                        "generator bus {} has no inertia m",
                        bus.id
                    )))
                }
                (BusKind::Load, Some(_)) => {
                    return Err(Error::InvalidNetwork(format!(
                        "load bus {} must not declare inertia m",
                        bus.id
                    )))
                }
                (BusKind::Load, None) => m.push(None),
            }
            kinds.push(bus.kind);
        }

        let b_map = symmetric_map(
            n,
            "susceptance",
            spec.lines.iter().map(|l| (l.i, l.j, l.b)),
            |i, j, value| Error::NegativeSusceptance { i, j, value },
        )?;
        let edges: Vec<Edge> = b_map
            .iter()
            .filter(|(_, &b)| b > 0.0)
            .map(|(&(i, j), &b)| Edge {
                i,
                j,
                b,
                a: v[i] * v[j] * b,
            })
            .collect();
        if !connected(n, edges.iter().map(|e| (e.i, e.j))) {
            return Err(Error::Disconnected("physical"));
        }

        let comm: Vec<CommEdge> = match &spec.comm {
            None => edges
                .iter()
                .map(|e| CommEdge {
                    i: e.i,
                    j: e.j,
                    q: 1.0,
                })
                .collect(),
            Some(list) => {
                let q_map = symmetric_map(
                    n,
                    "communication weight",
                    list.iter().map(|c| (c.i, c.j, c.q)),
                    |i, j, value| {
                        Error::InvalidNetwork(format!(
                            "negative communication weight {value} on link {i}-{j}"
                        ))
                    },
                )?;
                q_map
                    .into_iter()
                    .filter(|(_, q)| *q > 0.0)
                    .map(|((i, j), q)| CommEdge { i, j, q })
                    .collect()
            }
        };
        if !connected(n, comm.iter().map(|c| (c.i, c.j))) {
            return Err(Error::Disconnected("communication"));
        }

        let generators = (0..n).filter(|&i| kinds[i] == BusKind::Gen).collect();
        let loads = (0..n).filter(|&i| kinds[i] == BusKind::Load).collect();
        Ok(Self {
            name: spec.name.clone().unwrap_or_else(|| format!("network{n}")),
            kinds,
            m,
            alpha,
            v,
            f0: spec.base.f0,
            s0: spec.base.s0,
            edges,
            comm,
            generators,
            loads,
        })
    }

    /// Rebuilds a file-level description of this network.
    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            name: Some(self.name.clone()),
            base: BaseSpec {
                f0: self.f0,
                s0: self.s0,
            },
            buses: (0..self.n())
                .map(|i| BusSpec {
                    id: i + 1,
                    kind: self.kinds[i],
                    m: self.m[i],
                    alpha: self.alpha[i],
                    v: self.v[i],
                })
                .collect(),
            lines: self
                .edges
                .iter()
                .map(|e| LineSpec {
                    i: e.i + 1,
                    j: e.j + 1,
                    b: e.b,
                })
                .collect(),
            comm: Some(
                self.comm
                    .iter()
                    .map(|c| CommSpec {
                        i: c.i + 1,
                        j: c.j + 1,
                        q: c.q,
                    })
                    .collect(),
            ),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.kinds.len()
    }
    pub fn kind(&self, i: usize) -> BusKind {
        self.kinds[i]
    }
    pub fn is_generator(&self, i: usize) -> bool {
        self.kinds[i] == BusKind::Gen
    }
    pub fn generators(&self) -> &[usize] {
        &self.generators
    }
    pub fn loads(&self) -> &[usize] {
        &self.loads
    }
    /// Inertia of bus `i`; `None` for load buses.
    pub fn m(&self, i: usize) -> Option<f64> {
        self.m[i]
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn v(&self) -> &[f64] {
        &self.v
    }
    pub fn f0(&self) -> f64 {
        self.f0
    }
    pub fn s0(&self) -> f64 {
        self.s0
    }
    /// `2 pi f0`.
    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn comm_edges(&self) -> &[CommEdge] {
        &self.comm
    }

    /// Per-bus inertia with load buses given `synthetic_m` (all-machine variant).
    pub fn all_machine_inertia(&self, synthetic_m: f64) -> Vec<f64> {
        self.m.iter().map(|m| m.unwrap_or(synthetic_m)).collect()
    }

    pub(crate) fn check_len(&self, what: &'static str, x: &[f64]) -> Result<()> {
        if x.len() == self.n() {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                expected: self.n(),
                got: x.len(),
            })
        }
    }

    /// `U(delta) = -1/2 sum_i sum_j v_i v_j B_ij cos(delta_i - delta_j)`.
    pub fn potential(&self, delta: &[f64]) -> f64 {
        -self
            .edges
            .iter()
            .map(|e| e.a * (delta[e.i] - delta[e.j]).cos())
            .sum::<f64>()
    }

    /// Line power flows summed per bus, `grad U`.
    pub fn grad_potential(&self, delta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        for e in &self.edges {
            let f = e.a * (delta[e.i] - delta[e.j]).sin();
            g[e.i] += f;
            g[e.j] -= f;
        }
        g
    }

    /// Dense Hessian of the potential.
    pub fn hessian(&self, delta: &[f64]) -> SquareMatrix {
        let mut h = SquareMatrix::zeros(self.n());
        for e in &self.edges {
            let w = e.a * (delta[e.i] - delta[e.j]).cos();
            h[(e.i, e.j)] -= w;
            h[(e.j, e.i)] -= w;
            h[(e.i, e.i)] += w;
            h[(e.j, e.j)] += w;
        }
        h
    }

    /// Hessian-vector product without assembling the matrix.
    pub fn hessian_mul(&self, delta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for e in &self.edges {
            let w = e.a * (delta[e.i] - delta[e.j]).cos() * (x[e.i] - x[e.j]);
            y[e.i] += w;
            y[e.j] -= w;
        }
        y
    }

    /// `(Z L_Q y)_i = zeta_i sum_j Q_ij (y_i - y_j)`.
    pub fn scaled_laplacian_mul(&self, zeta: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for c in &self.comm {
            let d = c.q * (y[c.i] - y[c.j]);
            out[c.i] += d;
            out[c.j] -= d;
        }
        out.iter_mut().zip(zeta).for_each(|(o, z)| *o *= z);
        out
    }

    /// `x^T Z L_Q y` as a sum over communication links.
    pub fn scaled_laplacian_bilinear(&self, zeta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        self.comm
            .iter()
            .map(|c| c.q * (y[c.i] - y[c.j]) * (zeta[c.i] * x[c.i] - zeta[c.j] * x[c.j]))
            .sum()
    }

    /// Same network with every pair of buses communicating at weight `q`.
    pub fn with_complete_comm(&self, q: f64) -> Result<Self> {
        let mut spec = self.to_spec();
        let n = self.n();
        spec.comm = Some(
            (1..=n)
                .flat_map(|i| (i + 1..=n).map(move |j| CommSpec { i, j, q }))
                .collect(),
        );
        Self::from_spec(&spec)
    }

    /// Dense communication Laplacian `L_Q`.
    pub fn comm_laplacian(&self) -> SquareMatrix {
        let mut l = SquareMatrix::zeros(self.n());
        for c in &self.comm {
            l[(c.i, c.j)] -= c.q;
            l[(c.j, c.i)] -= c.q;
            l[(c.i, c.i)] += c.q;
            l[(c.j, c.j)] += c.q;
        }
        l
    }

    /// Largest `|delta_i - delta_j|` over physical lines, with the line attaining it.
    pub fn max_edge_angle(&self, delta: &[f64]) -> (f64, Option<Edge>) {
        self.edges.iter().fold((0.0, None), |(best, arg), e| {
            let d = (delta[e.i] - delta[e.j]).abs();
            if d > best {
                (d, Some(*e))
            } else {
                (best, arg)
            }
        })
    }
}

fn symmetric_map(
    n: usize,
    what: &'static str,
    entries: impl Iterator<Item = (usize, usize, f64)>,
    negative: impl Fn(usize, usize, f64) -> Error,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, j, value) in entries {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::InvalidNetwork(format!(
                "{what} entry {i}-{j} references an unknown bus"
            )));
        }
        if i == j {
            return Err(Error::InvalidNetwork(format!(
                "{what} entry on the diagonal at bus {i}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "non-finite {what} on {i}-{j}"
            )));
        }
        if value < 0.0 {
            return Err(negative(i, j, value));
        }
        let key = (i.min(j) - 1, i.max(j) - 1);
        if let Some(prev) = map.insert(key, value) {
            if prev != value {
                return Err(Error::Asymmetric {
                    what,
                    i: key.0 + 1,
                    j: key.1 + 1,
                    a: prev,
                    b: value,
                });
            }
        }
    }
    Ok(map)
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(k) = queue.pop_front() {
        for &nb in &adj[k] {
            if !seen[nb] {
                seen[nb] = true;
                count += 1;
                queue.push_back(nb);
            }
        }
    }
    count == n
}
