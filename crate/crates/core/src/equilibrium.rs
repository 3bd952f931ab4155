//! Closed-loop equilibria and synchronous frequencies.

use crate::controller::Policy;
use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::grid::{enforce_gauge, PowerNetwork};
use crate::linalg::{max_abs, norm_sq, SquareMatrix};

/// Brackets stop expanding past this magnitude.
const EXPANSION_LIMIT: f64 = 1e12;
const NEWTON_ITERS: usize = 100;
const NEWTON_HALVINGS: usize = 30;
const NEWTON_TOL: f64 = 1e-11;
const BALANCE_TOL: f64 = 1e-9;

/// Equilibrium of the integral-controlled closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub gamma: f64,
    pub u_star: Vec<f64>,
    pub delta_star: Vec<f64>,
    pub s_star: Vec<f64>,
    pub omega_star: f64,
}

/// Equilibrium of the all-machine model with frequency-feedback policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryEquilibrium {
    pub omega_star: f64,
    pub delta_star: Vec<f64>,
    /// `u_i(omega*)`.
    pub u_star: Vec<f64>,
}

/// Target value `-sum(p) / sum(1 / zeta)` of `grad C_o^{-1}(gamma)`.
pub fn scaled_injection_target(costs: &CostModel, p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    let inv: f64 = costs.zeta().iter().map(|z| 1.0 / z).sum();
    -total / inv
}

/// Common marginal cost at the optimal dispatch, found by bisection on
/// `gamma -> grad C_o^{-1}(gamma)`.
pub fn solve_gamma(costs: &CostModel, p: &[f64]) -> Result<f64> {
    let target = scaled_injection_target(costs, p);
    if target == 0.0 {
        return Ok(0.0);
    }
    let f = |g: f64| -> Result<f64> { Ok(costs.common_grad_inverse(g)? - target) };
    let mut w = 1.0;
    let sign = target.signum();
    while f(sign * w)? * sign < 0.0 {
        w *= 2.0;
        if w > EXPANSION_LIMIT {
            return Err(Error::GradientRangeExhausted { target });
        }
    }
    let (mut lo, mut hi) = if sign > 0.0 { (0.0, w) } else { (-w, 0.0) };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo)?.abs() <= f(hi)?.abs() { lo } else { hi })
}

/// `u*_i = grad C_o^{-1}(gamma) / zeta_i`.
pub fn steady_injections(costs: &CostModel, gamma: f64) -> Result<Vec<f64>> {
    let y = costs.common_grad_inverse(gamma)?;
    Ok(costs.zeta().iter().map(|z| y / z).collect())
}

/// Damped Newton solve of `grad U(delta) = injections` in the zero-mean gauge.
pub fn newton_power_flow(net: &PowerNetwork, injections: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    net.check_len("injections", injections)?;
    net.check_len("initial guess", guess)?;
    let sum: f64 = injections.iter().sum();
    if sum.abs() > BALANCE_TOL {
        return Err(Error::Unbalanced { sum });
    }
    let n = net.n();
    let residual = |d: &[f64]| -> Vec<f64> {
        net.grad_potential(d)
            .iter()
            .zip(injections)
            .map(|(g, q)| g - q)
            .collect()
    };
    let mut delta = crate::grid::to_center_of_inertia(guess);
    let mut r = residual(&delta);
    let mut iterations = 0;
    while max_abs(&r) > NEWTON_TOL {
        if iterations == NEWTON_ITERS {
            return Err(Error::PowerFlowInfeasible {
                iterations,
                residual: max_abs(&r),
            });
        }
        iterations += 1;
        let mut jac = net.hessian(&delta);
        let shift = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] += shift;
            }
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = jac.solve(&neg).map_err(|_| Error::PowerFlowInfeasible {
            iterations,
            residual: max_abs(&r),
        })?;
        let base = norm_sq(&r);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=NEWTON_HALVINGS {
            let mut trial: Vec<f64> = delta.iter().zip(&step).map(|(d, s)| d + t * s).collect();
            enforce_gauge(&mut trial).or_else(|_| {
                trial = crate::grid::to_center_of_inertia(&trial);
                Ok::<(), Error>(())
            })?;
            let tr = residual(&trial);
            if norm_sq(&tr) < base {
                accepted = Some((trial, tr));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((d, rr)) => {
                delta = d;
                r = rr;
            }
            None => {
                return Err(Error::PowerFlowInfeasible {
                    iterations,
                    residual: max_abs(&r),
                })
            }
        }
    }
    let (worst, edge) = net.max_edge_angle(&delta);
    if let Some(e) = edge {
        if worst >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::OutsideSecurityRegion {
                i: e.i + 1,
                j: e.j + 1,
                diff: delta[e.i] - delta[e.j],
            });
        }
    }
    Ok(delta)
}

/// Inverts each bus's policy: finds `s*_i` with `u_i(s*_i) = u*_i`.
pub fn solve_s_star(policy: &dyn Policy, u_star: &[f64]) -> Result<Vec<f64>> {
    if policy.n() != u_star.len() {
        return Err(Error::Dimension {
            what: "steady injections",
            expected: policy.n(),
            got: u_star.len(),
        });
    }
    u_star
        .iter()
        .enumerate()
        .map(|(i, &target)| invert_monotone(policy, i, target))
        .collect()
}

fn invert_monotone(policy: &dyn Policy, i: usize, target: f64) -> Result<f64> {
    let (lo_b, hi_b) = policy.bounds(i);
    if target < lo_b || target > hi_b {
        return Err(Error::OutsideControllerRange {
            bus: i + 1,
            target,
            lo: lo_b,
            hi: hi_b,
        });
    }
    if target == 0.0 && policy.u(i, 0.0) == 0.0 {
        return Ok(0.0);
    }
    let sign = if target > 0.0 { 1.0 } else { -1.0 };
    let mut w = 1.0;
    while (policy.u(i, sign * w) - target) * sign < 0.0 {
        w *= 2.0;
        if w > EXPANSION_LIMIT {
            return Err(Error::OutsideControllerRange {
                bus: i + 1,
                target,
                lo: policy.u(i, -EXPANSION_LIMIT),
                hi: policy.u(i, EXPANSION_LIMIT),
            });
        }
    }
    let (mut lo, mut hi) = if sign > 0.0 { (0.0, w) } else { (-w, 0.0) };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if policy.u(i, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (
        (policy.u(i, lo) - target).abs(),
        (policy.u(i, hi) - target).abs(),
    );
    let (s, res) = if rl <= rh { (lo, rl) } else { (hi, rh) };
    if res > 1e-9 * (1.0 + target.abs()) {
        return Err(Error::InvalidController(format!(
            "bus {} policy cannot reach {target} (residual {res:e}); is it monotone?",
            i + 1
        )));
    }
    Ok(s)
}

/// Full equilibrium: `gamma`, `u*`, `delta*`, `s*` with `omega* = 0`.
pub fn solve_equilibrium(
    net: &PowerNetwork,
    costs: &CostModel,
    policy: &dyn Policy,
    p: &[f64],
) -> Result<Equilibrium> {
    net.check_len("disturbance", p)?;
    if costs.n() != net.n() || policy.n() != net.n() {
        return Err(Error::Dimension {
            what: "costs/policy",
            expected: net.n(),
            got: if costs.n() != net.n() { costs.n() } else { policy.n() },
        });
    }
    let gamma = solve_gamma(costs, p)?;
    let u_star = steady_injections(costs, gamma)?;
    let injections: Vec<f64> = p.iter().zip(&u_star).map(|(a, b)| a + b).collect();
    let delta_star = newton_power_flow(net, &injections, &vec![0.0; net.n()])?;
    let s_star = solve_s_star(policy, &u_star)?;
    Ok(Equilibrium {
        gamma,
        u_star,
        delta_star,
        s_star,
        omega_star: 0.0,
    })
}

/// Solves `sum_i u_i(omega) + omega sum_i damping_i = sum_i p_i` for `omega`.
pub fn synchronous_frequency(policy: &dyn Policy, damping: &[f64], p: &[f64]) -> Result<f64> {
    let total_p: f64 = p.iter().sum();
    let total_d: f64 = damping.iter().sum();
    let lhs = |w: f64| -> f64 {
        (0..damping.len()).map(|i| policy.u(i, w)).sum::<f64>() + w * total_d - total_p
    };
    if lhs(0.0) == 0.0 {
        return Ok(0.0);
    }
    let sign = -lhs(0.0).signum();
    let mut w = 1e-3;
    while lhs(sign * w) * sign < 0.0 {
        w *= 2.0;
        if w > EXPANSION_LIMIT {
            return Err(Error::SyncBracketExhausted);
        }
    }
    let (mut lo, mut hi) = if sign > 0.0 { (0.0, w) } else { (-w, 0.0) };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lhs(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if lhs(lo).abs() <= lhs(hi).abs() { lo } else { hi })
}

/// Equilibrium of the all-machine model `M w' = p - alpha w - u(w) - grad U`.
pub fn primary_equilibrium(
    net: &PowerNetwork,
    policy: &dyn Policy,
    p: &[f64],
) -> Result<PrimaryEquilibrium> {
    net.check_len("disturbance", p)?;
    let omega_star = synchronous_frequency(policy, net.alpha(), p)?;
    let u_star: Vec<f64> = (0..net.n()).map(|i| policy.u(i, omega_star)).collect();
    let mut injections: Vec<f64> = (0..net.n())
        .map(|i| p[i] - net.alpha()[i] * omega_star - u_star[i])
        .collect();
    // Bisection leaves a residual imbalance at rounding level; spread it evenly.
    let mean = injections.iter().sum::<f64>() / net.n() as f64;
    injections.iter_mut().for_each(|x| *x -= mean);
    let delta_star = newton_power_flow(net, &injections, &vec![0.0; net.n()])?;
    Ok(PrimaryEquilibrium {
        omega_star,
        delta_star,
        u_star,
    })
}

/// Dense `Z L_Q` for tests and diagnostics.
pub fn scaled_laplacian_matrix(net: &PowerNetwork, zeta: &[f64]) -> SquareMatrix {
    let l = net.comm_laplacian();
    SquareMatrix::diag(zeta).mul(&l)
}
