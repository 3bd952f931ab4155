//! Gradient-descent training through unrolled Euler rollouts.
//!
//! The rollout runs in raw angle coordinates:
//!
//! ```text
//! u = u(s),  w_L = (p_L + u_L - grad_L U(theta)) / alpha_L
//! w_G' = w_G + h/m (p_G + u_G - alpha_G w_G - grad_G U(theta))
//! theta' = theta + 2 pi f0 h w
//! s' = s - h (2 pi f0 w + Z L_Q grad C(u))
//! ```
//!
//! and the loss adds each generator's peak `|w|` to `rho` times each bus's
//! time-averaged cost. Gradients come from a hand-written adjoint of exactly
//! this recursion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerSet, Limits, NetGrad, RawParams, RawPolicy};
use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::grid::PowerNetwork;

/// Stream offsets used to split one seed between consumers.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_DISTURBANCE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rho: f64,
    pub d: usize,
    pub h: f64,
    pub horizon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub seed: u64,
    pub p_lo: f64,
    pub p_hi: f64,
    /// 1-based buses that receive disturbances; all buses when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disturbed_buses: Option<Vec<usize>>,
    /// Draw the batch once and reuse it every epoch.
    pub fixed_batch: bool,
    /// Saturation and deadband applied to every bus.
    pub limits: Limits,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            d: 20,
            h: 0.0005,
            horizon: 2.5,
            batch_size: 64,
            epochs: 50,
            lr0: 0.4,
            decay: 0.95,
            seed: 0,
            p_lo: -5.0,
            p_hi: 5.0,
            disturbed_buses: None,
            fixed_batch: false,
            limits: Limits::default(),
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> usize {
        ((self.horizon / self.h) * (1.0 + 1e-12)).floor() as usize
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !(self.h > 0.0) || !(self.horizon >= self.h) {
            return bad(format!("need h > 0 and T >= h (h = {}, T = {})", self.h, self.horizon));
        }
        if self.d == 0 || self.batch_size == 0 {
            return bad("d and batch size must be positive".into());
        }
        if !(self.rho >= 0.0) || !(self.lr0 >= 0.0) || !(self.decay > 0.0) {
            return bad("rho, learning rate and decay must be nonnegative".into());
        }
        if !(self.p_lo <= self.p_hi) {
            return bad(format!("empty disturbance range [{}, {}]", self.p_lo, self.p_hi));
        }
        if let Some(b) = &self.disturbed_buses {
            if b.iter().any(|&i| i == 0 || i > n) {
                return bad("disturbed bus outside the network".into());
            }
        }
        self.limits.validate()
    }

    /// Draws one disturbance vector.
    pub fn draw_disturbance<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; n];
        let draw = |rng: &mut R| {
            if self.p_lo == self.p_hi {
                self.p_lo
            } else {
                rng.gen_range(self.p_lo..self.p_hi)
            }
        };
        match &self.disturbed_buses {
            Some(buses) => buses.iter().for_each(|&i| p[i - 1] = draw(rng)),
            None => p.iter_mut().for_each(|x| *x = draw(rng)),
        }
        p
    }
}

/// Forward pass record: states at every step plus loss bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub steps: usize,
    pub p: Vec<f64>,
    /// `theta^l`, `l = 0..=N`, flattened.
    pub theta: Vec<f64>,
    /// `w_G^l`, `l = 0..=N`, flattened.
    pub omega_g: Vec<f64>,
    /// `s^l`, `l = 0..=N`, flattened.
    pub s: Vec<f64>,
    /// Peak `|w_k|` per generator and the first step attaining it.
    pub nadir: Vec<(f64, usize)>,
    /// Time-averaged cost per bus.
    pub avg_cost: Vec<f64>,
    pub loss: f64,
}

impl Tape {
    pub fn state(&self, n: usize, g: usize, l: usize) -> (&[f64], &[f64], &[f64]) {
        (
            &self.theta[l * n..(l + 1) * n],
            &self.omega_g[l * g..(l + 1) * g],
            &self.s[l * n..(l + 1) * n],
        )
    }
}

/// Network, costs and rollout settings shared by forward and backward passes.
pub struct Trainer<'a> {
    pub net: &'a PowerNetwork,
    pub costs: &'a CostModel,
    pub rho: f64,
    pub h: f64,
    pub steps: usize,
    m_gen: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a PowerNetwork, costs: &'a CostModel, rho: f64, h: f64, steps: usize) -> Result<Self> {
        if costs.n() != net.n() {
            return Err(Error::Dimension {
                what: "costs",
                expected: net.n(),
                got: costs.n(),
            });
        }
        let m_gen = net.generators().iter().map(|&i| net.m(i).expect("generator inertia")).collect();
        Ok(Self {
            net,
            costs,
            rho,
            h,
            steps,
            m_gen,
        })
    }

    pub fn from_config(net: &'a PowerNetwork, costs: &'a CostModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(net.n())?;
        Self::new(net, costs, cfg.rho, cfg.h, cfg.steps())
    }

    /// Runs the discrete recursion and records the tape.
    pub fn rollout_loss(&self, policy: &ControllerSet, p: &[f64]) -> Result<(f64, Tape)> {
        let net = self.net;
        let (n, gens, loads) = (net.n(), net.generators(), net.loads());
        let g = gens.len();
        net.check_len("disturbance", p)?;
        let steps = self.steps;
        let w0 = net.omega0();
        let h = self.h;
        let alpha = net.alpha();
        let zeta = self.costs.zeta();
        let ones = vec![1.0; n];

        let mut theta = vec![0.0; (steps + 1) * n];
        let mut omega_g = vec![0.0; (steps + 1) * g];
        let mut s = vec![0.0; (steps + 1) * n];
        let mut nadir = vec![(0.0_f64, 0usize); g];
        let mut cost_sum = vec![0.0; n];
        let mut omega = vec![0.0; n];

        for l in 0..steps {
            let (th, rest) = theta.split_at_mut((l + 1) * n);
            let th_now = &th[l * n..];
            let th_next = &mut rest[..n];
            let (wg, wrest) = omega_g.split_at_mut((l + 1) * g);
            let wg_now = &wg[l * g..];
            let wg_next = &mut wrest[..g];
            let (ss, srest) = s.split_at_mut((l + 1) * n);
            let s_now = &ss[l * n..];
            let s_next = &mut srest[..n];

            let u: Vec<f64> = (0..n).map(|i| policy.buses[i].eval(s_now[i])).collect();
            let mc = self.costs.marginal_costs(&u);
            for i in 0..n {
                cost_sum[i] += self.costs.cost(i, u[i]);
            }
            let grad = net.grad_potential(th_now);
            for (k, &i) in gens.iter().enumerate() {
                omega[i] = wg_now[k];
                wg_next[k] = wg_now[k] + h / self.m_gen[k] * (-alpha[i] * wg_now[k] - grad[i] + p[i] + u[i]);
            }
            for &i in loads {
                omega[i] = (-grad[i] + p[i] + u[i]) / alpha[i];
            }
            // Z L_Q mc = zeta * (L_Q mc)
            let lq = net.scaled_laplacian_mul(&ones, &mc);
            for i in 0..n {
                th_next[i] = th_now[i] + h * w0 * omega[i];
                s_next[i] = s_now[i] - h * (w0 * omega[i] + zeta[i] * lq[i]);
            }
            for k in 0..g {
                let a = wg_next[k].abs();
                if !a.is_finite() {
                    return Err(Error::BlowUp { step: l });
                }
                if a > nadir[k].0 {
                    nadir[k] = (a, l + 1);
                }
            }
            if th_next.iter().chain(s_next.iter()).any(|x| !x.is_finite()) {
                return Err(Error::BlowUp { step: l });
            }
        }
        for (k, entry) in nadir.iter_mut().enumerate() {
            if entry.1 == 0 {
                // All-zero trace: the first step is the (tied) maximiser.
                *entry = (omega_g[g + k].abs(), 1);
            }
        }
        let avg_cost: Vec<f64> = cost_sum.iter().map(|c| c / steps as f64).collect();
        let loss = nadir.iter().map(|x| x.0).sum::<f64>() + self.rho * avg_cost.iter().sum::<f64>();
        Ok((
            loss,
            Tape {
                steps,
                p: p.to_vec(),
                theta,
                omega_g,
                s,
                nadir,
                avg_cost,
                loss,
            },
        ))
    }

    /// Gradient of the tape's loss with respect to the weights and biases of every bus.
    pub fn backprop_net(&self, policy: &ControllerSet, tape: &Tape) -> Vec<NetGrad> {
        let net = self.net;
        let (n, gens, loads) = (net.n(), net.generators(), net.loads());
        let g = gens.len();
        let steps = tape.steps;
        let h = self.h;
        let w0 = net.omega0();
        let alpha = net.alpha();
        let zeta = self.costs.zeta();
        let ones = vec![1.0; n];
        let d = policy.buses.first().map(|b| b.d()).unwrap_or(0);
        let mut grads: Vec<NetGrad> = (0..n).map(|i| NetGrad::zeros(policy.buses[i].d().max(d))).collect();

        let mut g_theta = vec![0.0; n];
        let mut g_s = vec![0.0; n];
        let mut g_omega = vec![0.0; g];
        let nadir_grad = |l: usize, out: &mut [f64]| {
            for k in 0..g {
                if tape.nadir[k].1 == l {
                    let w = tape.omega_g[l * g + k];
                    out[k] += if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        };
        nadir_grad(steps, &mut g_omega);

        let cost_weight = self.rho / steps as f64;
        for l in (0..steps).rev() {
            let (th, _, s_now) = tape.state(n, g, l);
            let u: Vec<f64> = (0..n).map(|i| policy.buses[i].eval(s_now[i])).collect();

            // Adjoint of the full frequency vector at step l.
            let gwf: Vec<f64> = (0..n).map(|i| h * w0 * (g_theta[i] - g_s[i])).collect();
            let mut z = vec![0.0; n];
            for (k, &i) in gens.iter().enumerate() {
                z[i] = h * g_omega[k] / self.m_gen[k];
            }
            for &i in loads {
                z[i] = gwf[i] / alpha[i];
            }
            // d/d mc of  -h Z L_Q mc  is  -h L_Q Z g_s.
            let zgs: Vec<f64> = g_s.iter().zip(zeta).map(|(a, b)| a * b).collect();
            let lzg = net.scaled_laplacian_mul(&ones, &zgs);
            let g_u: Vec<f64> = (0..n)
                .map(|i| {
                    z[i] + self.costs.hess_cost(i, u[i]) * (-h * lzg[i])
                        + cost_weight * self.costs.grad_cost(i, u[i])
                })
                .collect();
            for i in 0..n {
                policy.buses[i].accumulate_param_grad(s_now[i], g_u[i], &mut grads[i]);
            }
            let hz = net.hessian_mul(th, &z);
            for i in 0..n {
                g_s[i] += policy.buses[i].slope(s_now[i]) * g_u[i];
                g_theta[i] -= hz[i];
            }
            for (k, &i) in gens.iter().enumerate() {
                g_omega[k] = (1.0 - h * alpha[i] / self.m_gen[k]) * g_omega[k] + gwf[i];
            }
            if l >= 1 {
                nadir_grad(l, &mut g_omega);
            }
        }
        grads
    }

    /// Gradient with respect to the raw parameters of `policy`.
    pub fn backprop(&self, policy: &RawPolicy, tape: &Tape) -> Vec<RawParams> {
        let controllers = policy.controllers();
        let net_grads = self.backprop_net(&controllers, tape);
        policy
            .params
            .iter()
            .zip(&net_grads)
            .map(|(p, gr)| p.chain(gr))
            .collect()
    }

    /// Loss and raw-parameter gradient for one disturbance.
    pub fn loss_and_grad(&self, policy: &RawPolicy, p: &[f64]) -> Result<(f64, Vec<f64>, Tape)> {
        let (loss, tape) = self.rollout_loss(&policy.controllers(), p)?;
        let grad = self.backprop(policy, &tape);
        let mut flat = Vec::with_capacity(policy.n() * RawParams::len_for(policy.d));
        grad.iter().for_each(|g| g.flatten_into(&mut flat));
        Ok((loss, flat, tape))
    }

    /// Smallest distance from any visited integral state to a kink of its
    /// policy, and the smallest relative gap between each generator's peak and
    /// its runner-up. Small values mean the loss is not differentiable nearby.
    pub fn tie_margins(&self, policy: &ControllerSet, tape: &Tape) -> (f64, f64) {
        let (n, g) = (self.net.n(), self.net.generators().len());
        let mut kink = f64::INFINITY;
        for l in 1..=tape.steps {
            let (_, _, s) = tape.state(n, g, l);
            for i in 0..n {
                let b = &policy.buses[i];
                let dz = b.limits.dz;
                let x = s[i];
                if x == 0.0 {
                    // Still at rest: no parameter can move it this step.
                    continue;
                }
                let xp = if x > dz { x - dz } else if x < -dz { x + dz } else { 0.0 };
                for &k in b.b_plus.iter().chain(&b.b_minus) {
                    kink = kink.min((xp - k).abs());
                }
                if dz > 0.0 {
                    kink = kink.min((x.abs() - dz).abs());
                }
            }
        }
        let mut gap = f64::INFINITY;
        for k in 0..g {
            let (peak, at) = tape.nadir[k];
            let runner = (1..=tape.steps)
                .filter(|&l| l != at)
                .map(|l| tape.omega_g[l * g + k].abs())
                .fold(0.0, f64::max);
            if peak > 0.0 {
                gap = gap.min((peak - runner) / peak);
            }
        }
        (kink, gap)
    }
}

/// Backprop versus central finite differences on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub kink_margin: f64,
    pub peak_gap: f64,
}

/// Entries smaller than this fraction of the largest gradient entry (or of 1,
/// whichever is larger) are compared in absolute terms: central differences
/// carry roundoff proportional to the loss scale, not to the entry.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn grad_check(trainer: &Trainer<'_>, policy: &RawPolicy, p: &[f64], eps: f64) -> Result<GradCheck> {
    let (_, analytic, tape) = trainer.loss_and_grad(policy, p)?;
    let (kink_margin, peak_gap) = trainer.tie_margins(&policy.controllers(), &tape);
    let base = policy.flatten();
    let numeric: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut plus = base.clone();
            plus[k] += eps;
            let mut minus = base.clone();
            minus[k] -= eps;
            let (lp, _) = trainer.rollout_loss(&policy.with_flat(&plus).controllers(), p)?;
            let (lm, _) = trainer.rollout_loss(&policy.with_flat(&minus).controllers(), p)?;
            Ok((lp - lm) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    let scale = analytic.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let floor = GRAD_CHECK_FLOOR * scale;
    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_err,
        kink_margin,
        peak_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: RawPolicy,
    pub history: Vec<EpochRecord>,
}

/// Seeded initial policy for `n` buses.
pub fn initial_policy(n: usize, cfg: &TrainConfig) -> RawPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_INIT);
    let mut policy = RawPolicy::random(n, cfg.d, &mut rng);
    policy.limits = vec![cfg.limits; n];
    policy
}

/// Batch gradient descent with exponentially decaying step size.
///
/// `on_epoch` runs after every update with the new policy; returning an
/// error aborts training.
pub fn train(
    net: &PowerNetwork,
    costs: &CostModel,
    cfg: &TrainConfig,
    init: Option<RawPolicy>,
    mut on_epoch: impl FnMut(&EpochRecord, &RawPolicy) -> Result<()>,
) -> Result<TrainOutcome> {
    let trainer = Trainer::from_config(net, costs, cfg)?;
    let n = net.n();
    let mut policy = init.unwrap_or_else(|| initial_policy(n, cfg));
    policy.validate()?;
    if policy.n() != n {
        return Err(Error::Dimension {
            what: "policy",
            expected: n,
            got: policy.n(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_DISTURBANCE);
    let draw_batch = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..cfg.batch_size).map(|_| cfg.draw_disturbance(n, rng)).collect()
    };
    let fixed = cfg.fixed_batch.then(|| draw_batch(&mut rng));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut params = policy.flatten();
    for epoch in 0..cfg.epochs {
        let batch = match &fixed {
            Some(b) => b.clone(),
            None => draw_batch(&mut rng),
        };
        let (loss, grad) = batch_gradient(&trainer, &policy, &batch).map_err(|e| {
            log::error!("epoch {} sample {}: {}", epoch + 1, e.sample, e.source);
            Error::TrainingBlowUp {
                epoch: epoch + 1,
                sample: e.sample,
                seed: cfg.seed,
            }
        })?;
        let lr = cfg.lr0 * cfg.decay.powi(epoch as i32);
        params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
        policy = policy.with_flat(&params);
        policy.controllers().check_constraints()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss,
            lr,
            grad_norm: grad.iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        log::info!("epoch {} loss {:.6e} lr {:.3e}", record.epoch, record.loss, lr);
        on_epoch(&record, &policy)?;
        history.push(record);
    }
    Ok(TrainOutcome { policy, history })
}

/// Failure of one rollout inside a batch.
#[derive(Debug)]
pub struct BatchError {
    pub sample: usize,
    pub source: Error,
}

/// Batch loss `J` and its gradient, both means over samples reduced in index order.
pub fn batch_gradient(
    trainer: &Trainer<'_>,
    policy: &RawPolicy,
    batch: &[Vec<f64>],
) -> std::result::Result<(f64, Vec<f64>), BatchError> {
    let results: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|p| trainer.loss_and_grad(policy, p).map(|(l, g, _)| (l, g)))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.n() * RawParams::len_for(policy.d)];
    for (sample, r) in results.into_iter().enumerate() {
        let (l, g) = r.map_err(|source| BatchError { sample, source })?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|x| *x *= scale);
    Ok((loss * scale, grad))
}

/// Mean loss of `policy` over `batch`.
pub fn batch_loss(trainer: &Trainer<'_>, policy: &RawPolicy, batch: &[Vec<f64>]) -> Result<f64> {
    let controllers = policy.controllers();
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|p| trainer.rollout_loss(&controllers, p).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}
