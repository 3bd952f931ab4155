//! Monotone stacked-ReLU control policies.
//!
//! A policy for one bus is
//! `u(x) = clamp(sum_j k+_j relu(x' - b+_j) + sum_j k-_j relu(-x' + b-_j), u_lo, u_hi)`
//! where `x'` is `x` with a symmetric deadband removed. Monotonicity is
//! guaranteed by generating `(k, b)` from unconstrained parameters through
//! squares and telescoping differences (see [`RawParams::transform`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partial slope sums below this trigger a validator warning.
pub const WEAK_SLOPE: f64 = 1e-6;

/// Unconstrained parameters of one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub chi_plus: Vec<f64>,
    pub chi_minus: Vec<f64>,
}

/// Saturation bounds and deadband of one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(default = "neg_inf", with = "lower_bound")]
    pub u_lo: f64,
    #[serde(default = "pos_inf", with = "upper_bound")]
    pub u_hi: f64,
    #[serde(default)]
    pub dz: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            u_lo: f64::NEG_INFINITY,
            u_hi: f64::INFINITY,
            dz: 0.0,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if self.u_lo.is_nan() || self.u_hi.is_nan() || self.u_lo > 0.0 || self.u_hi < 0.0 {
            return Err(Error::InvalidController(format!(
                "saturation bounds [{}, {}] must contain 0",
                self.u_lo, self.u_hi
            )));
        }
        if !(self.dz >= 0.0 && self.dz.is_finite()) {
            return Err(Error::InvalidController(format!(
                "deadband {} must be finite and nonnegative",
                self.dz
            )));
        }
        Ok(())
    }
}

/// Weights and biases of one bus, plus limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub k_plus: Vec<f64>,
    pub b_plus: Vec<f64>,
    pub k_minus: Vec<f64>,
    pub b_minus: Vec<f64>,
    #[serde(flatten)]
    pub limits: Limits,
}

/// Gradient of a scalar with respect to one bus's [`NetParams`] weights and biases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetGrad {
    pub k_plus: Vec<f64>,
    pub b_plus: Vec<f64>,
    pub k_minus: Vec<f64>,
    pub b_minus: Vec<f64>,
}

impl NetGrad {
    pub fn zeros(d: usize) -> Self {
        Self {
            k_plus: vec![0.0; d],
            b_plus: vec![0.0; d],
            k_minus: vec![0.0; d],
            b_minus: vec![0.0; d],
        }
    }
}

impl RawParams {
    pub fn zeros(d: usize) -> Self {
        let c = d.saturating_sub(1);
        Self {
            mu_plus: vec![0.0; d],
            mu_minus: vec![0.0; d],
            chi_plus: vec![0.0; c],
            chi_minus: vec![0.0; c],
        }
    }

    /// `mu ~ U(0.1, 0.5)`, `chi ~ U(0, 0.3)`.
    pub fn random<R: Rng>(d: usize, rng: &mut R) -> Self {
        let mut mu = || (0..d).map(|_| rng.gen_range(0.1..0.5)).collect::<Vec<f64>>();
        let (mu_plus, mu_minus) = (mu(), mu());
        let c = d.saturating_sub(1);
        let mut chi = || (0..c).map(|_| rng.gen_range(0.0..0.3)).collect::<Vec<f64>>();
        let (chi_plus, chi_minus) = (chi(), chi());
        Self {
            mu_plus,
            mu_minus,
            chi_plus,
            chi_minus,
        }
    }

    pub fn d(&self) -> usize {
        self.mu_plus.len()
    }

    pub fn check_shape(&self) -> Result<()> {
        let d = self.d();
        if d == 0
            || self.mu_minus.len() != d
            || self.chi_plus.len() != d - 1
            || self.chi_minus.len() != d - 1
        {
            return Err(Error::InvalidController(format!(
                "raw parameter shapes ({}, {}, {}, {}) do not match d = {d}",
                self.mu_plus.len(),
                self.mu_minus.len(),
                self.chi_plus.len(),
                self.chi_minus.len()
            )));
        }
        Ok(())
    }

    /// Squares-and-telescopes map onto constraint-satisfying weights and biases.
    pub fn transform(&self, limits: Limits) -> NetParams {
        let d = self.d();
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<f64>>();
        let (mp, mm) = (sq(&self.mu_plus), sq(&self.mu_minus));
        let mut k_plus = vec![0.0; d];
        let mut k_minus = vec![0.0; d];
        for j in 0..d {
            k_plus[j] = if j == 0 { mp[0] } else { mp[j] - mp[j - 1] };
            k_minus[j] = if j == 0 { -mm[0] } else { -mm[j] + mm[j - 1] };
        }
        let mut b_plus = vec![0.0; d];
        let mut b_minus = vec![0.0; d];
        for j in 1..d {
            b_plus[j] = b_plus[j - 1] + self.chi_plus[j - 1] * self.chi_plus[j - 1];
            b_minus[j] = b_minus[j - 1] - self.chi_minus[j - 1] * self.chi_minus[j - 1];
        }
        NetParams {
            k_plus,
            b_plus,
            k_minus,
            b_minus,
            limits,
        }
    }

    /// Pulls a weight/bias gradient back through [`RawParams::transform`].
    pub fn chain(&self, g: &NetGrad) -> RawParams {
        let d = self.d();
        let mut out = RawParams::zeros(d);
        for j in 0..d {
            let next_kp = if j + 1 < d { g.k_plus[j + 1] } else { 0.0 };
            let next_km = if j + 1 < d { g.k_minus[j + 1] } else { 0.0 };
            out.mu_plus[j] = 2.0 * self.mu_plus[j] * (g.k_plus[j] - next_kp);
            out.mu_minus[j] = -2.0 * self.mu_minus[j] * (g.k_minus[j] - next_km);
        }
        // b_j depends on chi_l for every l < j, so accumulate suffix sums.
        let (mut tail_p, mut tail_m) = (0.0, 0.0);
        for l in (0..d.saturating_sub(1)).rev() {
            tail_p += g.b_plus[l + 1];
            tail_m += g.b_minus[l + 1];
            out.chi_plus[l] = 2.0 * self.chi_plus[l] * tail_p;
            out.chi_minus[l] = -2.0 * self.chi_minus[l] * tail_m;
        }
        out
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.mu_plus);
        out.extend_from_slice(&self.mu_minus);
        out.extend_from_slice(&self.chi_plus);
        out.extend_from_slice(&self.chi_minus);
    }

    /// Number of scalars in one bus's parameters for pair count `d`.
    pub fn len_for(d: usize) -> usize {
        2 * d + 2 * d.saturating_sub(1)
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Self {
        let c = d.saturating_sub(1);
        let (mp, rest) = flat.split_at(d);
        let (mm, rest) = rest.split_at(d);
        let (cp, cm) = rest.split_at(c);
        Self {
            mu_plus: mp.to_vec(),
            mu_minus: mm.to_vec(),
            chi_plus: cp.to_vec(),
            chi_minus: cm[..c].to_vec(),
        }
    }
}

/// `transform_params` with unbounded saturation and no deadband.
pub fn transform_params(raw: &RawParams) -> NetParams {
    raw.transform(Limits::default())
}

impl NetParams {
    /// `u(x) = slope * x` on both sides.
    pub fn linear(slope: f64) -> Self {
        Self {
            k_plus: vec![slope],
            b_plus: vec![0.0],
            k_minus: vec![-slope],
            b_minus: vec![0.0],
            limits: Limits::default(),
        }
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn d(&self) -> usize {
        self.k_plus.len()
    }

    fn deadband(&self, x: f64) -> f64 {
        let dz = self.limits.dz;
        if x > dz {
            x - dz
        } else if x < -dz {
            x + dz
        } else {
            0.0
        }
    }

    /// Unclamped network output at the post-deadband input.
    fn raw_output(&self, xp: f64) -> f64 {
        let mut f = 0.0;
        for (k, b) in self.k_plus.iter().zip(&self.b_plus) {
            f += k * (xp - b).max(0.0);
        }
        for (k, b) in self.k_minus.iter().zip(&self.b_minus) {
            f += k * (b - xp).max(0.0);
        }
        f
    }

    /// Slope of the unclamped output in `x'`, right limit at breakpoints.
    fn raw_slope(&self, xp: f64) -> f64 {
        let mut s = 0.0;
        for (k, b) in self.k_plus.iter().zip(&self.b_plus) {
            if xp >= *b {
                s += k;
            }
        }
        for (k, b) in self.k_minus.iter().zip(&self.b_minus) {
            if xp < *b {
                s -= k;
            }
        }
        s
    }

    fn unsaturated(&self, f: f64) -> bool {
        f < self.limits.u_hi && f >= self.limits.u_lo
    }

    pub fn eval(&self, x: f64) -> f64 {
        let f = self.raw_output(self.deadband(x));
        f.clamp(self.limits.u_lo, self.limits.u_hi)
    }

    /// Right-limit derivative of [`NetParams::eval`].
    pub fn slope(&self, x: f64) -> f64 {
        let dz = self.limits.dz;
        if x >= -dz && x < dz {
            return 0.0;
        }
        let xp = self.deadband(x);
        if !self.unsaturated(self.raw_output(xp)) {
            return 0.0;
        }
        self.raw_slope(xp)
    }

    /// Adds `g_u * du/d(k, b)` at input `x` into `grad`.
    pub fn accumulate_param_grad(&self, x: f64, g_u: f64, grad: &mut NetGrad) {
        if g_u == 0.0 {
            return;
        }
        let xp = self.deadband(x);
        if !self.unsaturated(self.raw_output(xp)) {
            return;
        }
        for j in 0..self.d() {
            let bp = self.b_plus[j];
            grad.k_plus[j] += g_u * (xp - bp).max(0.0);
            if xp >= bp {
                grad.b_plus[j] -= g_u * self.k_plus[j];
            }
            let bm = self.b_minus[j];
            grad.k_minus[j] += g_u * (bm - xp).max(0.0);
            if xp < bm {
                grad.b_minus[j] += g_u * self.k_minus[j];
            }
        }
    }

    /// Largest absolute partial slope sum.
    pub fn lipschitz(&self) -> f64 {
        let mut eta: f64 = 0.0;
        let (mut sp, mut sm) = (0.0, 0.0);
        for j in 0..self.d() {
            sp += self.k_plus[j];
            sm += self.k_minus[j];
            eta = eta.max(sp.abs()).max(sm.abs());
        }
        eta
    }

    /// Kinks of `x -> u(x)` before clamping, in input coordinates.
    fn kinks(&self) -> Vec<f64> {
        let dz = self.limits.dz;
        let mut out = Vec::with_capacity(2 * self.d() + 2);
        if dz > 0.0 {
            out.push(dz);
            out.push(-dz);
        }
        for &b in self.b_plus.iter().chain(&self.b_minus) {
            if b > 0.0 {
                out.push(b + dz);
            } else if b < 0.0 {
                out.push(b - dz);
            } else {
                out.push(dz);
                out.push(-dz);
            }
        }
        out
    }

    /// `int_a^b (u(x) - shift) dx`, exact for the piecewise-linear policy.
    pub fn integral_shifted(&self, a: f64, b: f64, shift: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if a > b {
            return -self.integral_shifted(b, a, shift);
        }
        let mut pts = vec![a, b];
        pts.extend(self.kinks().into_iter().filter(|k| *k > a && *k < b));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let (lo, hi) = (self.limits.u_lo, self.limits.u_hi);
        let mut total = 0.0;
        for w in pts.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            // Unclamped output is linear on [x0, x1]; split where it crosses a bound.
            let g0 = self.raw_output(self.deadband(x0));
            let g1 = self.raw_output(self.deadband(x1));
            let mut cuts = vec![x0, x1];
            for bound in [lo, hi] {
                if bound.is_finite() && (g0 - bound) * (g1 - bound) < 0.0 {
                    cuts.push(x0 + (bound - g0) / (g1 - g0) * (x1 - x0));
                }
            }
            cuts.sort_by(f64::total_cmp);
            for c in cuts.windows(2) {
                let (y0, y1) = (c[0], c[1]);
                let v0 = lerp(x0, x1, g0, g1, y0).clamp(lo, hi) - shift;
                let v1 = lerp(x0, x1, g0, g1, y1).clamp(lo, hi) - shift;
                total += 0.5 * (y1 - y0) * (v0 + v1);
            }
        }
        total
    }

    /// `int_0^s u(x) dx`.
    pub fn integral(&self, s: f64) -> f64 {
        self.integral_shifted(0.0, s, 0.0)
    }

    /// Checks the bias ordering and weight partial-sum signs (weakly).
    pub fn check_constraints(&self) -> Result<()> {
        let d = self.d();
        if d == 0 || self.b_plus.len() != d || self.k_minus.len() != d || self.b_minus.len() != d {
            return Err(Error::InvalidController("inconsistent weight/bias lengths".into()));
        }
        self.limits.validate()?;
        if self.b_plus[0] != 0.0 || self.b_minus[0] != 0.0 {
            return Err(Error::InvalidController("first biases must be 0".into()));
        }
        for j in 1..d {
            if self.b_plus[j] < self.b_plus[j - 1] {
                return Err(Error::InvalidController(format!("b_plus decreases at {j}")));
            }
            if self.b_minus[j] > self.b_minus[j - 1] {
                return Err(Error::InvalidController(format!("b_minus increases at {j}")));
            }
        }
        let (mut sp, mut sm) = (0.0, 0.0);
        for j in 0..d {
            sp += self.k_plus[j];
            sm += self.k_minus[j];
            if sp < 0.0 || sm > 0.0 {
                return Err(Error::InvalidController(format!(
                    "partial slope sums change sign at {j}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest partial slope sum magnitude over both branches.
    pub fn min_partial_slope(&self) -> f64 {
        let mut worst = f64::INFINITY;
        let (mut sp, mut sm) = (0.0, 0.0);
        for j in 0..self.d() {
            sp += self.k_plus[j];
            sm += self.k_minus[j];
            worst = worst.min(sp).min(-sm);
        }
        worst
    }

    pub fn is_zero(&self) -> bool {
        self.k_plus.iter().chain(&self.k_minus).all(|k| *k == 0.0)
    }

    /// Constraint check plus diagnostics for weak or degenerate slopes.
    pub fn validate(&self) -> Result<Validation> {
        self.check_constraints()?;
        let min_slope = self.min_partial_slope();
        let zero = self.is_zero();
        if zero {
            log::warn!("controller is identically zero");
        } else if min_slope < WEAK_SLOPE {
            log::warn!("controller partial slope {min_slope:e} is below {WEAK_SLOPE:e}");
        }
        Ok(Validation {
            min_partial_slope: min_slope,
            zero,
            strictly_increasing: min_slope > 0.0,
        })
    }
}

fn lerp(x0: f64, x1: f64, g0: f64, g1: f64, y: f64) -> f64 {
    if x1 == x0 {
        g0
    } else {
        g0 + (g1 - g0) * (y - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub min_partial_slope: f64,
    pub zero: bool,
    pub strictly_increasing: bool,
}

/// Builds a policy that interpolates a monotone `target` on `[lo, hi]`.
///
/// Breakpoints sit uniformly at `(j - 1) hi / d` on the positive side and
/// mirrored on the negative side; outside the domain the last slope continues.
pub fn construct_from_samples(
    target: impl Fn(f64) -> f64,
    d: usize,
    lo: f64,
    hi: f64,
) -> Result<NetParams> {
    if d == 0 {
        return Err(Error::InvalidController("d must be positive".into()));
    }
    if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidController(format!(
            "domain [{lo}, {hi}] must straddle 0"
        )));
    }
    let t0 = target(0.0);
    if t0.abs() > 1e-12 {
        return Err(Error::InvalidController(format!("target(0) = {t0} is not 0")));
    }
    let grid = 1000;
    let mut prev = target(lo);
    for k in 1..grid {
        let x = lo + (hi - lo) * k as f64 / (grid - 1) as f64;
        let y = target(x);
        if y < prev - 1e-12 * (1.0 + prev.abs()) {
            return Err(Error::NotMonotone { at: x });
        }
        prev = y;
    }

    let side = |extent: f64, sign: f64| -> (Vec<f64>, Vec<f64>) {
        let step = extent / d as f64;
        let knots: Vec<f64> = (0..=d).map(|j| sign * step * j as f64).collect();
        let slopes: Vec<f64> = (0..d)
            .map(|j| (sign * (target(knots[j + 1]) - target(knots[j])) / step).max(0.0))
            .collect();
        let mut k = vec![0.0; d];
        for j in 0..d {
            let delta = if j == 0 { slopes[0] } else { slopes[j] - slopes[j - 1] };
            k[j] = sign * delta;
        }
        (k, knots[..d].to_vec())
    };
    let (k_plus, b_plus) = side(hi, 1.0);
    let (k_minus, b_minus) = side(-lo, -1.0);
    Ok(NetParams {
        k_plus,
        b_plus,
        k_minus,
        b_minus,
        limits: Limits::default(),
    })
}

/// Per-bus scalar policies evaluated by the dynamics and certification code.
pub trait Policy: Sync {
    fn n(&self) -> usize;
    fn u(&self, i: usize, x: f64) -> f64;
    /// Right-limit derivative of `u`.
    fn slope(&self, i: usize, x: f64) -> f64;
    /// `int_a^b (u_i(x) - shift) dx`.
    fn integral_shifted(&self, i: usize, a: f64, b: f64, shift: f64) -> f64;
    fn bounds(&self, i: usize) -> (f64, f64);
    /// Upper bound on every bus's slope.
    fn lipschitz(&self) -> f64;

    fn u_all(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, &v)| self.u(i, v)).collect()
    }
}

/// One [`NetParams`] per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSet {
    pub buses: Vec<NetParams>,
}

impl ControllerSet {
    pub fn new(buses: Vec<NetParams>) -> Self {
        Self { buses }
    }

    pub fn uniform(n: usize, bus: NetParams) -> Self {
        Self {
            buses: vec![bus; n],
        }
    }

    pub fn check_constraints(&self) -> Result<()> {
        for (i, b) in self.buses.iter().enumerate() {
            b.check_constraints().map_err(|e| {
                Error::InvalidController(format!("bus {}: {e}", i + 1))
            })?;
        }
        Ok(())
    }
}

impl Policy for ControllerSet {
    fn n(&self) -> usize {
        self.buses.len()
    }
    fn u(&self, i: usize, x: f64) -> f64 {
        self.buses[i].eval(x)
    }
    fn slope(&self, i: usize, x: f64) -> f64 {
        self.buses[i].slope(x)
    }
    fn integral_shifted(&self, i: usize, a: f64, b: f64, shift: f64) -> f64 {
        self.buses[i].integral_shifted(a, b, shift)
    }
    fn bounds(&self, i: usize) -> (f64, f64) {
        (self.buses[i].limits.u_lo, self.buses[i].limits.u_hi)
    }
    fn lipschitz(&self) -> f64 {
        self.buses.iter().map(NetParams::lipschitz).fold(0.0, f64::max)
    }
}

/// Proportional policies `u_i = k_i x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub gains: Vec<f64>,
}

impl Policy for LinearPolicy {
    fn n(&self) -> usize {
        self.gains.len()
    }
    fn u(&self, i: usize, x: f64) -> f64 {
        self.gains[i] * x
    }
    fn slope(&self, i: usize, _x: f64) -> f64 {
        self.gains[i]
    }
    fn integral_shifted(&self, i: usize, a: f64, b: f64, shift: f64) -> f64 {
        (b - a) * (0.5 * self.gains[i] * (a + b) - shift)
    }
    fn bounds(&self, _i: usize) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn lipschitz(&self) -> f64 {
        self.gains.iter().map(|g| g.abs()).fold(0.0, f64::max)
    }
}

/// No control action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn n(&self) -> usize {
        self.0
    }
    fn u(&self, _i: usize, _x: f64) -> f64 {
        0.0
    }
    fn slope(&self, _i: usize, _x: f64) -> f64 {
        0.0
    }
    fn integral_shifted(&self, _i: usize, a: f64, b: f64, shift: f64) -> f64 {
        -(b - a) * shift
    }
    fn bounds(&self, _i: usize) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Trainable policy: raw parameters plus fixed limits for every bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPolicy {
    pub d: usize,
    pub params: Vec<RawParams>,
    pub limits: Vec<Limits>,
}

impl RawPolicy {
    pub fn random<R: Rng>(n: usize, d: usize, rng: &mut R) -> Self {
        Self {
            d,
            params: (0..n).map(|_| RawParams::random(d, rng)).collect(),
            limits: vec![Limits::default(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.limits.len() != self.params.len() {
            return Err(Error::Dimension {
                what: "controller limits",
                expected: self.params.len(),
                got: self.limits.len(),
            });
        }
        for p in &self.params {
            p.check_shape()?;
            if p.d() != self.d {
                return Err(Error::InvalidController("per-bus d differs from policy d".into()));
            }
        }
        self.limits.iter().try_for_each(Limits::validate)
    }

    pub fn controllers(&self) -> ControllerSet {
        ControllerSet::new(
            self.params
                .iter()
                .zip(&self.limits)
                .map(|(p, l)| p.transform(*l))
                .collect(),
        )
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * RawParams::len_for(self.d));
        self.params.iter().for_each(|p| p.flatten_into(&mut out));
        out
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let len = RawParams::len_for(self.d);
        Self {
            d: self.d,
            params: flat.chunks(len).map(|c| RawParams::from_flat(self.d, c)).collect(),
            limits: self.limits.clone(),
        }
    }
}

/// Serialized policy of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Raw(RawPolicy),
    Net(ControllerSet),
    Linear(LinearPolicy),
}

/// Policy file with provenance for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

mod lower_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

mod upper_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        super::lower_bound::serialize(v, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
