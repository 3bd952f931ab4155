//! Closed-loop time integration.
//!
//! Three vector fields share one state layout:
//! - `DaiGeneral`: swing equations on generator buses, algebraic load buses,
//!   and integral states driven by frequency plus marginal-cost consensus.
//! - `DaiLinear`: the same network with proportional policies and the
//!   classic quadratic-cost consensus term.
//! - `Primary`: every bus has inertia and the policy acts on local frequency.

use serde::{Deserialize, Serialize};

use crate::controller::Policy;
use crate::cost::{CostFamily, CostModel};
use crate::error::{Error, Result};
use crate::grid::{enforce_gauge, PowerNetwork};

/// Inertia assigned to load buses in the all-machine model.
pub const DEFAULT_SYNTHETIC_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DaiGeneral,
    DaiLinear,
    Primary,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::DaiGeneral => "dai_general",
            Mode::DaiLinear => "dai_linear",
            Mode::Primary => "primary",
        }
    }

    pub fn is_dai(self) -> bool {
        !matches!(self, Mode::Primary)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dai_general" | "dai-general" | "dai" => Ok(Mode::DaiGeneral),
            "dai_linear" | "dai-linear" | "linear" => Ok(Mode::DaiLinear),
            "primary" => Ok(Mode::Primary),
            other => Err(Error::InvalidScenario(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// Dynamic state. `omega` holds generator-bus frequencies in the integral
/// modes and every bus's frequency in primary mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
    pub t: f64,
}

/// Time derivative of a [`SystemState`] (no time component).
#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
}

impl StateRate {
    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.delta)
            .max(crate::linalg::max_abs(&self.omega))
            .max(crate::linalg::max_abs(&self.s))
    }
}

/// Quantities derived from a state: full frequency vector, injections, marginal costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub omega: Vec<f64>,
    pub u: Vec<f64>,
    pub mc: Vec<f64>,
}

/// Network, costs, policy and disturbance bundled into one vector field.
pub struct ClosedLoop<'a> {
    pub net: &'a PowerNetwork,
    pub costs: Option<&'a CostModel>,
    pub policy: &'a dyn Policy,
    pub p: &'a [f64],
    pub mode: Mode,
    inertia: Vec<f64>,
    dyn_index: Vec<usize>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        net: &'a PowerNetwork,
        costs: Option<&'a CostModel>,
        policy: &'a dyn Policy,
        p: &'a [f64],
        mode: Mode,
    ) -> Result<Self> {
        Self::with_synthetic_m(net, costs, policy, p, mode, DEFAULT_SYNTHETIC_M)
    }

    pub fn with_synthetic_m(
        net: &'a PowerNetwork,
        costs: Option<&'a CostModel>,
        policy: &'a dyn Policy,
        p: &'a [f64],
        mode: Mode,
        synthetic_m: f64,
    ) -> Result<Self> {
        net.check_len("disturbance", p)?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidScenario("disturbance is not finite".into()));
        }
        if policy.n() != net.n() {
            return Err(Error::Dimension {
                what: "policy",
                expected: net.n(),
                got: policy.n(),
            });
        }
        if let Some(c) = costs {
            if c.n() != net.n() {
                return Err(Error::Dimension {
                    what: "costs",
                    expected: net.n(),
                    got: c.n(),
                });
            }
            if mode == Mode::DaiLinear && *c.family() != CostFamily::Quadratic {
                return Err(Error::InvalidScenario(
                    "linear integral mode is defined for quadratic costs only".into(),
                ));
            }
        } else if mode.is_dai() {
            return Err(Error::InvalidScenario(format!(
                "{} mode requires a cost model",
                mode.name()
            )));
        }
        let (inertia, dyn_index) = match mode {
            Mode::Primary => {
                if !(synthetic_m > 0.0) {
                    return Err(Error::NonPositive {
                        field: "synthetic m",
                        bus: 0,
                        value: synthetic_m,
                    });
                }
                (net.all_machine_inertia(synthetic_m), (0..net.n()).collect())
            }
            _ => (
                net.generators()
                    .iter()
                    .map(|&i| net.m(i).expect("generators carry inertia"))
                    .collect(),
                net.generators().to_vec(),
            ),
        };
        Ok(Self {
            net,
            costs,
            policy,
            p,
            mode,
            inertia,
            dyn_index,
        })
    }

    /// Inertia of each dynamic frequency, aligned with `SystemState::omega`.
    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    /// Bus index of each dynamic frequency.
    pub fn dynamic_buses(&self) -> &[usize] {
        &self.dyn_index
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState {
            delta: vec![0.0; self.net.n()],
            omega: vec![0.0; self.dyn_index.len()],
            s: vec![0.0; self.net.n()],
            t: 0.0,
        }
    }

    pub fn check_state(&self, st: &SystemState) -> Result<()> {
        self.net.check_len("state delta", &st.delta)?;
        self.net.check_len("state s", &st.s)?;
        if st.omega.len() != self.dyn_index.len() {
            return Err(Error::Dimension {
                what: "state omega",
                expected: self.dyn_index.len(),
                got: st.omega.len(),
            });
        }
        Ok(())
    }

    /// Policy input per bus: `s` in the integral modes, `omega` in primary mode.
    fn policy_input<'s>(&self, st: &'s SystemState) -> &'s [f64] {
        match self.mode {
            Mode::Primary => &st.omega,
            _ => &st.s,
        }
    }

    /// Load-bus frequencies from the algebraic balance.
    pub fn load_bus_frequencies(&self, grad_u: &[f64], u: &[f64]) -> Vec<f64> {
        let alpha = self.net.alpha();
        self.net
            .loads()
            .iter()
            .map(|&i| (-grad_u[i] + self.p[i] + u[i]) / alpha[i])
            .collect()
    }

    pub fn outputs(&self, st: &SystemState) -> Outputs {
        let u = self.policy.u_all(self.policy_input(st));
        let mc = self.costs.map(|c| c.marginal_costs(&u)).unwrap_or_else(|| vec![0.0; u.len()]);
        let omega = match self.mode {
            Mode::Primary => st.omega.clone(),
            _ => {
                let g = self.net.grad_potential(&st.delta);
                self.assemble_omega(&st.omega, &self.load_bus_frequencies(&g, &u))
            }
        };
        Outputs { omega, u, mc }
    }

    fn assemble_omega(&self, omega_g: &[f64], omega_l: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.net.n()];
        for (k, &i) in self.net.generators().iter().enumerate() {
            w[i] = omega_g[k];
        }
        for (k, &i) in self.net.loads().iter().enumerate() {
            w[i] = omega_l[k];
        }
        w
    }

    /// Vector field evaluated at `st`, along with the derived outputs.
    pub fn derivatives(&self, st: &SystemState) -> (StateRate, Outputs) {
        let n = self.net.n();
        let alpha = self.net.alpha();
        let grad = self.net.grad_potential(&st.delta);
        let u = self.policy.u_all(self.policy_input(st));
        let mc = self.costs.map(|c| c.marginal_costs(&u)).unwrap_or_else(|| vec![0.0; n]);

        match self.mode {
            Mode::Primary => {
                let omega = st.omega.clone();
                let mean = omega.iter().sum::<f64>() / n as f64;
                let d_delta = omega.iter().map(|w| w - mean).collect();
                let d_omega = (0..n)
                    .map(|i| (self.p[i] - alpha[i] * omega[i] - u[i] - grad[i]) / self.inertia[i])
                    .collect();
                let rate = StateRate {
                    delta: d_delta,
                    omega: d_omega,
                    s: vec![0.0; n],
                };
                (rate, Outputs { omega, u, mc })
            }
            _ => {
                let w0 = self.net.omega0();
                let omega_l = self.load_bus_frequencies(&grad, &u);
                let omega = self.assemble_omega(&st.omega, &omega_l);
                let mean = omega.iter().sum::<f64>() / n as f64;
                let d_delta = omega.iter().map(|w| w0 * (w - mean)).collect();
                let d_omega = self
                    .net
                    .generators()
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        (-alpha[i] * st.omega[k] - grad[i] + self.p[i] + u[i]) / self.inertia[k]
                    })
                    .collect();
                let costs = self.costs.expect("integral modes carry costs");
                let consensus = match self.mode {
                    Mode::DaiLinear => {
                        let c = costs.c();
                        let cu: Vec<f64> = u.iter().zip(c).map(|(a, b)| a * b).collect();
                        self.net.scaled_laplacian_mul(c, &cu)
                    }
                    _ => self.net.scaled_laplacian_mul(costs.zeta(), &mc),
                };
                let d_s = (0..n).map(|i| -w0 * omega[i] - consensus[i]).collect();
                let rate = StateRate {
                    delta: d_delta,
                    omega: d_omega,
                    s: d_s,
                };
                (rate, Outputs { omega, u, mc })
            }
        }
    }

    /// One forward-Euler step. `step` labels blow-up errors.
    pub fn euler_step(&self, st: &SystemState, h: f64, step: usize) -> Result<SystemState> {
        let (rate, _) = self.derivatives(st);
        finish(advance(st, &rate, h, h), step)
    }

    /// One classical Runge-Kutta step.
    pub fn rk4_step(&self, st: &SystemState, h: f64, step: usize) -> Result<SystemState> {
        let (k1, _) = self.derivatives(st);
        let (k2, _) = self.derivatives(&advance(st, &k1, 0.5 * h, 0.5 * h));
        let (k3, _) = self.derivatives(&advance(st, &k2, 0.5 * h, 0.5 * h));
        let (k4, _) = self.derivatives(&advance(st, &k3, h, h));
        let combine = |a: &[f64], b: &[f64], c: &[f64], d: &[f64], x: &[f64]| -> Vec<f64> {
            (0..x.len())
                .map(|i| x[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
                .collect()
        };
        let next = SystemState {
            delta: combine(&k1.delta, &k2.delta, &k3.delta, &k4.delta, &st.delta),
            omega: combine(&k1.omega, &k2.omega, &k3.omega, &k4.omega, &st.omega),
            s: combine(&k1.s, &k2.s, &k3.s, &k4.s, &st.s),
            t: st.t + h,
        };
        finish(next, step)
    }

    pub fn step(&self, integrator: Integrator, st: &SystemState, h: f64, step: usize) -> Result<SystemState> {
        match integrator {
            Integrator::Euler => self.euler_step(st, h, step),
            Integrator::Rk4 => self.rk4_step(st, h, step),
        }
    }

    /// Integrates `scenario` and records every `record_stride`-th state.
    pub fn simulate(&self, scenario: &Scenario) -> Result<Trajectory> {
        scenario.validate()?;
        if scenario.mode != self.mode {
            return Err(Error::ModeMismatch {
                trajectory: scenario.mode.name(),
                requested: self.mode.name(),
            });
        }
        let mut st = match &scenario.initial {
            Some(s) => {
                let mut s = s.clone();
                s.delta = crate::grid::to_center_of_inertia(&s.delta);
                s
            }
            None => self.initial_state(),
        };
        self.check_state(&st)?;
        let t0 = st.t;
        let steps = scenario.steps();
        let stride = scenario.record_stride.max(1);
        let mut records = Vec::with_capacity(steps / stride + 2);
        for k in 0..=steps {
            if k % stride == 0 || k == steps {
                let out = self.outputs(&st);
                records.push(Record {
                    step: k,
                    t: t0 + k as f64 * scenario.h,
                    delta: st.delta.clone(),
                    omega_dyn: st.omega.clone(),
                    s: st.s.clone(),
                    omega: out.omega,
                    u: out.u,
                    mc: out.mc,
                });
            }
            if k < steps {
                st = self.step(scenario.integrator, &st, scenario.h, k)?;
                st.t = t0 + (k + 1) as f64 * scenario.h;
            }
        }
        Ok(Trajectory {
            mode: self.mode,
            h: scenario.h,
            p: self.p.to_vec(),
            records,
        })
    }
}

fn advance(st: &SystemState, rate: &StateRate, h: f64, dt: f64) -> SystemState {
    let add = |x: &[f64], r: &[f64]| x.iter().zip(r).map(|(a, b)| a + h * b).collect();
    SystemState {
        delta: add(&st.delta, &rate.delta),
        omega: add(&st.omega, &rate.omega),
        s: add(&st.s, &rate.s),
        t: st.t + dt,
    }
}

fn finish(mut st: SystemState, step: usize) -> Result<SystemState> {
    let finite = st
        .delta
        .iter()
        .chain(&st.omega)
        .chain(&st.s)
        .all(|x| x.is_finite());
    if !finite {
        return Err(Error::BlowUp { step });
    }
    enforce_gauge(&mut st.delta).map_err(|_| Error::BlowUp { step })?;
    Ok(st)
}

/// Constant-disturbance simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p: Vec<f64>,
    pub horizon: f64,
    pub h: f64,
    pub mode: Mode,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<SystemState>,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl Scenario {
    pub fn new(p: Vec<f64>, horizon: f64, h: f64, mode: Mode) -> Self {
        Self {
            p,
            horizon,
            h,
            mode,
            integrator: Integrator::Euler,
            initial: None,
            record_stride: 1,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn with_initial(mut self, initial: SystemState) -> Self {
        self.initial = Some(initial);
        self
    }

    /// `floor(T / h)`, tolerant of `T / h` landing just below an integer.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.h) * (1.0 + 1e-12)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidScenario(format!("step h = {} must be positive", self.h)));
        }
        if !(self.horizon >= self.h && self.horizon.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "horizon {} must be at least h = {}",
                self.horizon, self.h
            )));
        }
        if self.p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidScenario("disturbance is not finite".into()));
        }
        Ok(())
    }
}

/// One recorded time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub step: usize,
    pub t: f64,
    pub delta: Vec<f64>,
    /// Dynamic frequencies as stored in the state.
    pub omega_dyn: Vec<f64>,
    pub s: Vec<f64>,
    /// Frequencies of every bus.
    pub omega: Vec<f64>,
    pub u: Vec<f64>,
    pub mc: Vec<f64>,
}

impl Record {
    pub fn state(&self) -> SystemState {
        SystemState {
            delta: self.delta.clone(),
            omega: self.omega_dyn.clone(),
            s: self.s.clone(),
            t: self.t,
        }
    }

    pub fn max_abs_omega(&self) -> f64 {
        crate::linalg::max_abs(&self.omega)
    }

    /// Largest pairwise marginal-cost difference.
    pub fn mc_spread(&self) -> f64 {
        let max = self.mc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.mc.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub h: f64,
    pub p: Vec<f64>,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectories hold at least the initial state")
    }

    /// Largest `|omega_i|` over all buses and recorded times.
    pub fn peak_abs_omega(&self) -> f64 {
        self.records.iter().map(Record::max_abs_omega).fold(0.0, f64::max)
    }
}
