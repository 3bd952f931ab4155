//! Lyapunov functions, their time derivatives, and numeric certification.
//!
//! For the integral modes the function is
//! `W = pi f0 w_G' M w_G + B_U(delta) + B_L(s)` where `B_U`, `B_L` are
//! Bregman divergences of the potential and of the policy integral around the
//! equilibrium. For the all-machine model it is
//! `V = 1/2 dw' M dw + B_U(delta) + eps (pe - pe*)' M dw`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::Policy;
use crate::cost::CostModel;
use crate::dynamics::{ClosedLoop, Mode, Record, SystemState, Trajectory};
use crate::equilibrium::{Equilibrium, PrimaryEquilibrium};
use crate::error::{Error, Result};
use crate::grid::PowerNetwork;
use crate::linalg::{dot, max_abs, norm_sq, SquareMatrix};

/// Edge angle differences are kept this far inside `pi/2` when sampling.
pub const REGION_MARGIN: f64 = 0.05;

/// `sum_i int_0^{s_i} u_i(x) dx`.
pub fn integral_l(policy: &dyn Policy, s: &[f64]) -> f64 {
    s.iter()
        .enumerate()
        .map(|(i, &x)| policy.integral_shifted(i, 0.0, x, 0.0))
        .sum()
}

/// `U(delta) - U(delta*) - grad U(delta*)'(delta - delta*)`, summed per line
/// in a form that avoids cancellation for small deviations.
pub fn bregman_potential(net: &PowerNetwork, delta: &[f64], delta_star: &[f64]) -> f64 {
    net.edges()
        .iter()
        .map(|e| {
            let xs = delta_star[e.i] - delta_star[e.j];
            let d = (delta[e.i] - delta[e.j]) - xs;
            let half = (0.5 * d).sin();
            e.a * (xs.cos() * 2.0 * half * half + xs.sin() * (d.sin() - d))
        })
        .sum()
}

/// `sum_i int_{s*_i}^{s_i} (u_i(x) - u*_i) dx`.
pub fn bregman_integral(policy: &dyn Policy, s: &[f64], s_star: &[f64], u_star: &[f64]) -> f64 {
    (0..s.len())
        .map(|i| policy.integral_shifted(i, s_star[i], s[i], u_star[i]))
        .sum()
}

/// Consensus cross term `u' Z L_Q grad C(u)` and whether marginal costs agree on every link.
pub fn cross_term(net: &PowerNetwork, costs: &CostModel, policy: &dyn Policy, s: &[f64]) -> (f64, bool) {
    let u = policy.u_all(s);
    let mc = costs.marginal_costs(&u);
    let value = net.scaled_laplacian_bilinear(costs.zeta(), &u, &mc);
    let scale = 1.0 + max_abs(&mc);
    let equal = net
        .comm_edges()
        .iter()
        .all(|c| (mc[c.i] - mc[c.j]).abs() <= 1e-12 * scale);
    (value, equal)
}

/// Components of the integral-mode derivative `W' = -(kinetic + cross + load)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WDotTerms {
    pub kinetic: f64,
    pub cross: f64,
    pub load: f64,
}

impl WDotTerms {
    pub fn total(&self) -> f64 {
        -(self.kinetic + self.cross + self.load)
    }
}

/// Lyapunov function for the integral modes around a closed-loop equilibrium.
pub struct DaiLyapunov<'a> {
    pub cl: &'a ClosedLoop<'a>,
    pub eq: &'a Equilibrium,
}

impl<'a> DaiLyapunov<'a> {
    pub fn new(cl: &'a ClosedLoop<'a>, eq: &'a Equilibrium) -> Result<Self> {
        if !cl.mode.is_dai() {
            return Err(Error::ModeMismatch {
                trajectory: cl.mode.name(),
                requested: Mode::DaiGeneral.name(),
            });
        }
        Ok(Self { cl, eq })
    }

    pub fn kinetic(&self, st: &SystemState) -> f64 {
        let m = self.cl.inertia();
        std::f64::consts::PI
            * self.cl.net.f0()
            * st.omega.iter().zip(m).map(|(w, mi)| mi * w * w).sum::<f64>()
    }

    pub fn value(&self, st: &SystemState) -> f64 {
        self.kinetic(st)
            + bregman_potential(self.cl.net, &st.delta, &self.eq.delta_star)
            + bregman_integral(self.cl.policy, &st.s, &self.eq.s_star, &self.eq.u_star)
    }

    pub fn rate_terms(&self, st: &SystemState) -> WDotTerms {
        let net = self.cl.net;
        let w0 = net.omega0();
        let alpha = net.alpha();
        let kinetic = w0
            * net
                .generators()
                .iter()
                .zip(&st.omega)
                .map(|(&i, w)| alpha[i] * w * w)
                .sum::<f64>();
        let u = self.cl.policy.u_all(&st.s);
        let costs = self.cl.costs.expect("integral modes carry costs");
        let mc = costs.marginal_costs(&u);
        let cross = net.scaled_laplacian_bilinear(costs.zeta(), &u, &mc);
        let g = net.grad_potential(&st.delta);
        let gs = net.grad_potential(&self.eq.delta_star);
        let load = w0
            * net
                .loads()
                .iter()
                .map(|&i| {
                    let v = gs[i] - g[i] + u[i] - self.eq.u_star[i];
                    v * v / alpha[i]
                })
                .sum::<f64>();
        WDotTerms {
            kinetic,
            cross,
            load,
        }
    }

    pub fn rate(&self, st: &SystemState) -> f64 {
        self.rate_terms(st).total()
    }

    /// `grad W . f`, evaluated directly from the vector field.
    pub fn rate_chain_rule(&self, st: &SystemState) -> f64 {
        let (f, out) = self.cl.derivatives(st);
        let net = self.cl.net;
        let g = net.grad_potential(&st.delta);
        let gs = net.grad_potential(&self.eq.delta_star);
        let m = self.cl.inertia();
        let kin: f64 = (0..st.omega.len())
            .map(|k| net.omega0() * m[k] * st.omega[k] * f.omega[k])
            .sum();
        let pot: f64 = (0..net.n()).map(|i| (g[i] - gs[i]) * f.delta[i]).sum();
        let int: f64 = (0..net.n())
            .map(|i| (out.u[i] - self.eq.u_star[i]) * f.s[i])
            .sum();
        kin + pot + int
    }
}

/// Lyapunov function for the all-machine model.
pub struct PrimaryLyapunov<'a> {
    pub cl: &'a ClosedLoop<'a>,
    pub eq: &'a PrimaryEquilibrium,
    pub epsilon: f64,
    pe_star: Vec<f64>,
}

impl<'a> PrimaryLyapunov<'a> {
    pub fn new(cl: &'a ClosedLoop<'a>, eq: &'a PrimaryEquilibrium, epsilon: f64) -> Result<Self> {
        if cl.mode != Mode::Primary {
            return Err(Error::ModeMismatch {
                trajectory: cl.mode.name(),
                requested: Mode::Primary.name(),
            });
        }
        let pe_star = cl.net.grad_potential(&eq.delta_star);
        Ok(Self {
            cl,
            eq,
            epsilon,
            pe_star,
        })
    }

    fn deviations(&self, st: &SystemState) -> (Vec<f64>, Vec<f64>) {
        let pe = self.cl.net.grad_potential(&st.delta);
        let dpe = pe.iter().zip(&self.pe_star).map(|(a, b)| a - b).collect();
        let dw = st.omega.iter().map(|w| w - self.eq.omega_star).collect();
        (dpe, dw)
    }

    pub fn value(&self, st: &SystemState) -> f64 {
        let m = self.cl.inertia();
        let (dpe, dw) = self.deviations(st);
        let kinetic: f64 = 0.5 * (0..dw.len()).map(|i| m[i] * dw[i] * dw[i]).sum::<f64>();
        let cross: f64 = (0..dw.len()).map(|i| dpe[i] * m[i] * dw[i]).sum();
        kinetic + bregman_potential(self.cl.net, &st.delta, &self.eq.delta_star) + self.epsilon * cross
    }

    /// `Q(delta)` in block form over `(pe - pe*, w - w*)`.
    pub fn q_matrix(&self, delta: &[f64]) -> SquareMatrix {
        let n = self.cl.net.n();
        let eps = self.epsilon;
        let d = self.cl.net.alpha();
        let m = self.cl.inertia();
        let h = self.cl.net.hessian(delta);
        let mut q = SquareMatrix::zeros(2 * n);
        for i in 0..n {
            q[(i, i)] = eps;
            q[(i, n + i)] = 0.5 * eps * d[i];
            q[(n + i, i)] = 0.5 * eps * d[i];
            q[(n + i, n + i)] = d[i];
            for j in 0..n {
                q[(n + i, n + j)] -= 0.5 * eps * (h[(i, j)] * m[j] + m[i] * h[(i, j)]);
            }
        }
        q
    }

    /// Schur complement `D - eps/2 (H M + M H) - eps/4 D^2`.
    pub fn schur(&self, delta: &[f64]) -> SquareMatrix {
        schur_complement(self.cl, delta, self.epsilon)
    }

    pub fn rate(&self, st: &SystemState) -> f64 {
        let n = self.cl.net.n();
        let (dpe, dw) = self.deviations(st);
        let z: Vec<f64> = dpe.iter().chain(&dw).cloned().collect();
        let q = self.q_matrix(&st.delta);
        let du: Vec<f64> = (0..n)
            .map(|i| self.cl.policy.u(i, st.omega[i]) - self.eq.u_star[i])
            .collect();
        let mix: f64 = (0..n).map(|i| (dw[i] + self.epsilon * dpe[i]) * du[i]).sum();
        -q.quad_form(&z, &z) - mix
    }

    /// `grad V . f`, evaluated directly from the vector field.
    pub fn rate_chain_rule(&self, st: &SystemState) -> f64 {
        let (f, _) = self.cl.derivatives(st);
        let m = self.cl.inertia();
        let (dpe, dw) = self.deviations(st);
        let mdw: Vec<f64> = (0..dw.len()).map(|i| m[i] * dw[i]).collect();
        let hm = self.cl.net.hessian_mul(&st.delta, &mdw);
        let grad_delta: Vec<f64> = (0..dw.len()).map(|i| dpe[i] + self.epsilon * hm[i]).collect();
        let grad_omega: Vec<f64> = (0..dw.len())
            .map(|i| m[i] * dw[i] + self.epsilon * m[i] * dpe[i])
            .collect();
        dot(&grad_delta, &f.delta) + dot(&grad_omega, &f.omega)
    }

    /// Squared distance `|delta - delta*|^2 + |w - w*|^2`.
    pub fn distance_sq(&self, st: &SystemState) -> f64 {
        let dd: Vec<f64> = st.delta.iter().zip(&self.eq.delta_star).map(|(a, b)| a - b).collect();
        let (_, dw) = self.deviations(st);
        norm_sq(&dd) + norm_sq(&dw)
    }
}

fn schur_complement(cl: &ClosedLoop<'_>, delta: &[f64], eps: f64) -> SquareMatrix {
    let n = cl.net.n();
    let d = cl.net.alpha();
    let m = cl.inertia();
    let h = cl.net.hessian(delta);
    let mut s = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = -0.5 * eps * (h[(i, j)] * m[j] + m[i] * h[(i, j)]);
        }
        s[(i, i)] += d[i] - 0.25 * eps * d[i] * d[i];
    }
    s
}

fn sample_delta<R: Rng>(net: &PowerNetwork, center: &[f64], rng: &mut R) -> Vec<f64> {
    let limit = std::f64::consts::FRAC_PI_2 - REGION_MARGIN;
    let mut radius: f64 = rng.gen_range(0.0..1.0);
    loop {
        let raw: Vec<f64> = center.iter().map(|c| c + rng.gen_range(-radius..=radius)).collect();
        let delta = crate::grid::to_center_of_inertia(&raw);
        if net.max_edge_angle(&delta).0 < limit {
            return delta;
        }
        radius *= 0.9;
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Region samples for the integral modes: `delta` around `delta*`,
/// `w_G ~ U(-0.05, 0.05)`, `s ~ U(-2, 2)`.
pub fn sample_dai_states(cl: &ClosedLoop<'_>, eq: &Equilibrium, count: usize, seed: u64) -> Vec<SystemState> {
    let g = cl.dynamic_buses().len();
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, k);
            let delta = sample_delta(cl.net, &eq.delta_star, &mut rng);
            let omega = (0..g).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let s = (0..cl.net.n()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            SystemState { delta, omega, s, t: 0.0 }
        })
        .collect()
}

/// Region samples for the all-machine model: `delta` around `delta*`,
/// `w ~ w* + U(-0.05, 0.05)`.
pub fn sample_primary_states(
    cl: &ClosedLoop<'_>,
    eq: &PrimaryEquilibrium,
    count: usize,
    seed: u64,
) -> Vec<SystemState> {
    let n = cl.net.n();
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, k);
            let delta = sample_delta(cl.net, &eq.delta_star, &mut rng);
            let omega = (0..n).map(|_| eq.omega_star + rng.gen_range(-0.05..0.05)).collect();
            SystemState {
                delta,
                omega,
                s: vec![0.0; n],
                t: 0.0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid: (1..=6).map(|k| 10f64.powi(-k)).collect(),
            samples: 1000,
            seed: 0,
        }
    }
}

/// Outcome of the exponential-stability constant search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSearch {
    pub epsilon: f64,
    pub c: f64,
    /// Smallest Cholesky pivot of the Schur complement over the samples.
    pub min_pivot: f64,
    /// Smallest eigenvalue of `Q` over the samples.
    pub lambda_min: f64,
    pub gamma1: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eta: f64,
}

/// Largest `eps` in the grid whose Schur complement is positive definite at
/// every sampled angle profile and whose decay bound is positive, together
/// with the decay rate `c` estimated on the same samples.
pub fn epsilon_and_c_search(
    cl: &ClosedLoop<'_>,
    eq: &PrimaryEquilibrium,
    opts: &SearchOptions,
) -> Result<(EpsilonSearch, Vec<SystemState>)> {
    if cl.mode != Mode::Primary {
        return Err(Error::ModeMismatch {
            trajectory: cl.mode.name(),
            requested: Mode::Primary.name(),
        });
    }
    let samples = sample_primary_states(cl, eq, opts.samples, opts.seed);
    let eta = cl.policy.lipschitz();
    let mut grid = opts.grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    for &eps in &grid {
        let pivots: Option<Vec<f64>> = std::iter::once(&eq.delta_star)
            .chain(samples.iter().map(|s| &s.delta))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|d| {
                schur_complement(cl, d, eps)
                    .cholesky_pivots()
                    .map(|p| p.into_iter().fold(f64::INFINITY, f64::min))
            })
            .collect();
        let Some(pivots) = pivots else { continue };
        let min_pivot = pivots.into_iter().fold(f64::INFINITY, f64::min);
        let lyap = PrimaryLyapunov::new(cl, eq, eps)?;
        let stats: Vec<(f64, f64, f64)> = samples
            .par_iter()
            .map(|st| {
                let lam = lyap.q_matrix(&st.delta).min_eigenvalue();
                let dd: Vec<f64> = st.delta.iter().zip(&eq.delta_star).map(|(a, b)| a - b).collect();
                let pe = cl.net.grad_potential(&st.delta);
                let dpe: Vec<f64> = pe.iter().zip(&lyap.pe_star).map(|(a, b)| a - b).collect();
                let ratio_g = if norm_sq(&dd) > 0.0 {
                    norm_sq(&dpe) / norm_sq(&dd)
                } else {
                    f64::INFINITY
                };
                let ratio_v = lyap.value(st) / lyap.distance_sq(st);
                (lam, ratio_g, ratio_v)
            })
            .collect();
        let lambda_min = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let gamma1 = stats.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let alpha1 = stats.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        let alpha2 = stats.iter().map(|s| s.2).fold(0.0, f64::max);
        let margin = lambda_min - eps * eps * eta / 4.0;
        if !(margin > 0.0 && alpha2 > 0.0 && alpha2.is_finite()) {
            continue;
        }
        let c = margin * gamma1.min(1.0) / alpha2;
        return Ok((
            EpsilonSearch {
                epsilon: eps,
                c,
                min_pivot,
                lambda_min,
                gamma1,
                alpha1,
                alpha2,
                eta,
            },
            samples,
        ));
    }
    Err(Error::NoCertifyingEpsilon)
}

/// Certification tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Relative bound on analytic vs finite-difference rates; `None` records
    /// the comparison without enforcing it.
    pub fd_rel: Option<f64>,
    /// Rates smaller than this fraction of the peak rate are not compared.
    pub fd_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_abs: 1e-9,
            tol_rel: 0.05,
            fd_rel: None,
            fd_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Positivity,
    Decrease,
    Derivative,
    CrossTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: usize,
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub mode: Mode,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
    pub fd_rates: Vec<Option<f64>>,
    pub min_decrease_margin: f64,
    pub max_fd_rel_err: f64,
    pub fd_checked: usize,
    pub cross_term_min: Option<f64>,
    pub epsilon: Option<f64>,
    pub min_schur_pivot: Option<f64>,
    pub passed: bool,
    pub first_violation: Option<Violation>,
}

/// Equilibrium the certificate is measured against.
pub enum Reference<'a> {
    Dai(&'a Equilibrium),
    Primary {
        eq: &'a PrimaryEquilibrium,
        epsilon: f64,
    },
}

/// Evaluates the Lyapunov function along a recorded trajectory and checks
/// positivity, per-step decrease with Euler slack, and (optionally) agreement
/// of the analytic rate with centered finite differences.
pub fn certify_trajectory(
    cl: &ClosedLoop<'_>,
    traj: &Trajectory,
    reference: Reference<'_>,
    tol: &Tolerances,
) -> Result<CertificationReport> {
    if traj.mode != cl.mode {
        return Err(Error::ModeMismatch {
            trajectory: traj.mode.name(),
            requested: cl.mode.name(),
        });
    }
    certify_records(cl, traj.mode, &traj.records, reference, tol)
}

pub fn certify_records(
    cl: &ClosedLoop<'_>,
    mode: Mode,
    records: &[Record],
    reference: Reference<'_>,
    tol: &Tolerances,
) -> Result<CertificationReport> {
    type Eval<'e> = Box<dyn Fn(&SystemState) -> (f64, f64, Option<f64>, f64) + Sync + 'e>;
    let (eval, epsilon, min_pivot): (Eval<'_>, Option<f64>, Option<f64>) = match reference {
        Reference::Dai(eq) => {
            if !mode.is_dai() {
                return Err(Error::ModeMismatch {
                    trajectory: mode.name(),
                    requested: Mode::DaiGeneral.name(),
                });
            }
            let lyap = DaiLyapunov::new(cl, eq)?;
            let eq_delta = eq.delta_star.clone();
            let eq_s = eq.s_star.clone();
            let f = move |st: &SystemState| {
                let terms = lyap.rate_terms(st);
                let dist = max_abs(&st.omega)
                    .max(st.delta.iter().zip(&eq_delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                    .max(st.s.iter().zip(&eq_s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                (lyap.value(st), terms.total(), Some(terms.cross), dist)
            };
            (Box::new(f), None, None)
        }
        Reference::Primary { eq, epsilon } => {
            if mode != Mode::Primary {
                return Err(Error::ModeMismatch {
                    trajectory: mode.name(),
                    requested: Mode::Primary.name(),
                });
            }
            let lyap = PrimaryLyapunov::new(cl, eq, epsilon)?;
            let pivots: Option<Vec<f64>> = records
                .par_iter()
                .map(|r| {
                    lyap.schur(&r.delta)
                        .cholesky_pivots()
                        .map(|p| p.into_iter().fold(f64::INFINITY, f64::min))
                })
                .collect();
            let min_pivot = pivots.map(|p| p.into_iter().fold(f64::INFINITY, f64::min));
            let f = move |st: &SystemState| {
                (lyap.value(st), lyap.rate(st), None, lyap.distance_sq(st).sqrt())
            };
            (Box::new(f), Some(epsilon), Some(min_pivot.unwrap_or(f64::NEG_INFINITY)))
        }
    };

    let evals: Vec<(f64, f64, Option<f64>, f64)> = records.par_iter().map(|r| eval(&r.state())).collect();
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let values: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let rates: Vec<f64> = evals.iter().map(|e| e.1).collect();
    let peak_rate = rates.iter().fold(0.0_f64, |m, r| m.max(r.abs()));

    let mut first: Option<Violation> = None;
    let mut flag = |v: Violation| {
        if first.is_none() {
            first = Some(v);
        }
    };

    if let Some(p) = min_pivot {
        if !(p > 0.0) {
            flag(Violation {
                kind: ViolationKind::Positivity,
                step: 0,
                t: times.first().copied().unwrap_or(0.0),
                detail: "Schur complement not positive definite along trajectory".into(),
            });
        }
    }

    let mut cross_min: Option<f64> = None;
    let mut min_margin = f64::INFINITY;
    let mut fd_rates = vec![None; records.len()];
    let mut max_fd = 0.0_f64;
    let mut fd_checked = 0;
    for k in 0..records.len() {
        let (w, rate, cross, dist) = evals[k];
        let (step, t) = (records[k].step, times[k]);
        if w < -tol.tol_abs || (w <= 0.0 && dist > 1e-6) {
            flag(Violation {
                kind: ViolationKind::Positivity,
                step,
                t,
                detail: format!("Lyapunov value {w:e} at distance {dist:e}"),
            });
        }
        if let Some(c) = cross {
            cross_min = Some(cross_min.map_or(c, |m: f64| m.min(c)));
            if c < -tol.tol_abs {
                flag(Violation {
                    kind: ViolationKind::CrossTerm,
                    step,
                    t,
                    detail: format!("cross term {c:e} is negative"),
                });
            }
        }
        if k + 1 < records.len() {
            let dt = times[k + 1] - times[k];
            let slack = tol.tol_abs + tol.tol_rel * dt * rate.abs();
            let margin = w + slack - values[k + 1];
            min_margin = min_margin.min(margin);
            if margin < 0.0 {
                flag(Violation {
                    kind: ViolationKind::Decrease,
                    step,
                    t,
                    detail: format!(
                        "value rose from {w:e} to {:e} (slack {slack:e})",
                        values[k + 1]
                    ),
                });
            }
        }
        if k > 0 && k + 1 < records.len() {
            let fd = (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1]);
            fd_rates[k] = Some(fd);
            if rate.abs() >= tol.fd_floor * peak_rate && peak_rate > 0.0 {
                let err = (fd - rate).abs() / rate.abs().max(fd.abs());
                fd_checked += 1;
                max_fd = max_fd.max(err);
                if let Some(limit) = tol.fd_rel {
                    if err >= limit {
                        flag(Violation {
                            kind: ViolationKind::Derivative,
                            step,
                            t,
                            detail: format!("analytic rate {rate:e} vs finite difference {fd:e}"),
                        });
                    }
                }
            }
        }
    }
    if records.len() < 2 {
        min_margin = 0.0;
    }
    let passed = first.is_none();
    Ok(CertificationReport {
        mode,
        times,
        values,
        rates,
        fd_rates,
        min_decrease_margin: min_margin,
        max_fd_rel_err: max_fd,
        fd_checked,
        cross_term_min: cross_min,
        epsilon,
        min_schur_pivot: min_pivot,
        passed,
        first_violation: first,
    })
}
