//! Strictly convex per-bus cost functions that share one gradient shape.
//!
//! Every family here satisfies `grad C_i(u) = grad C_o(zeta_i u)` for a common
//! function `C_o` and per-bus scale `zeta_i > 0`. Offsets `b_i` change cost
//! values but never gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest magnitude the bisection bracket may reach before giving up.
pub const BRACKET_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostFamily {
    /// `C_i = c_i u^2 / 2 + b_i`.
    Quadratic,
    /// `C_i = c_i u^r / r + b_i` with even `r`.
    PowerR { r: u32 },
    /// `C_i = C_o(u) + b_i` where `grad C_o(y) = sum_k a_k y^(2k-1)`.
    ShiftedCommon { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    family: CostFamily,
    c: Vec<f64>,
    b: Vec<f64>,
    zeta: Vec<f64>,
}

impl CostModel {
    pub fn quadratic(c: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(CostFamily::Quadratic, c, b)
    }

    pub fn power(r: u32, c: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(CostFamily::PowerR { r }, c, b)
    }

    pub fn shifted_common(coeffs: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let c = vec![1.0; b.len()];
        Self::new(CostFamily::ShiftedCommon { coeffs }, c, b)
    }

    /// Random coefficients `c_i ~ U(0, 1)`, `b_i ~ U(0, 0.001)`.
    pub fn random_power<R: Rng>(r: u32, n: usize, rng: &mut R) -> Result<Self> {
        let c = (0..n)
            .map(|_| loop {
                let x: f64 = rng.gen_range(0.0..1.0);
                if x > 0.0 {
                    break x;
                }
            })
            .collect();
        let b = (0..n).map(|_| rng.gen_range(0.0..0.001)).collect();
        Self::power(r, c, b)
    }

    pub fn new(family: CostFamily, c: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if c.len() != b.len() {
            return Err(Error::Dimension {
                what: "cost offsets",
                expected: c.len(),
                got: b.len(),
            });
        }
        for (i, &ci) in c.iter().enumerate() {
            if !(ci > 0.0 && ci.is_finite()) {
                return Err(Error::NonPositive {
                    field: "cost coefficient",
                    bus: i + 1,
                    value: ci,
                });
            }
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCost("non-finite offset".into()));
        }
        let zeta = match &family {
            CostFamily::Quadratic => c.clone(),
            CostFamily::PowerR { r } => {
                if !(2..=8).contains(r) || r % 2 != 0 {
                    return Err(Error::InvalidCost(format!(
                        "exponent r = {r} must be an even integer in 2..=8"
                    )));
                }
                let e = 1.0 / (*r as f64 - 1.0);
                c.iter().map(|ci| ci.powf(e)).collect()
            }
            CostFamily::ShiftedCommon { coeffs } => {
                if coeffs.is_empty()
                    || coeffs.iter().any(|a| !(a.is_finite() && *a >= 0.0))
                    || coeffs.iter().all(|a| *a == 0.0)
                {
                    return Err(Error::InvalidCost(
                        "shifted_common needs nonnegative coefficients, not all zero".into(),
                    ));
                }
                if c.iter().any(|ci| *ci != 1.0) {
                    return Err(Error::InvalidCost(
                        "shifted_common has unit scale on every bus".into(),
                    ));
                }
                vec![1.0; c.len()]
            }
        };
        Ok(Self { family, c, b, zeta })
    }

    pub fn family(&self) -> &CostFamily {
        &self.family
    }
    pub fn n(&self) -> usize {
        self.c.len()
    }
    pub fn c(&self) -> &[f64] {
        &self.c
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// `C_o(y)`.
    pub fn common_cost(&self, y: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => 0.5 * y * y,
            CostFamily::PowerR { r } => y.powi(*r as i32) / *r as f64,
            CostFamily::ShiftedCommon { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let p = 2 * (k as i32 + 1);
                    a * y.powi(p) / p as f64
                })
                .sum(),
        }
    }

    /// `grad C_o(y)`.
    pub fn common_grad(&self, y: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => y,
            CostFamily::PowerR { r } => y.powi(*r as i32 - 1),
            CostFamily::ShiftedCommon { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| a * y.powi(2 * k as i32 + 1))
                .sum(),
        }
    }

    /// `grad^2 C_o(y)`.
    pub fn common_hess(&self, y: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => 1.0,
            CostFamily::PowerR { r } => (*r as f64 - 1.0) * y.powi(*r as i32 - 2),
            CostFamily::ShiftedCommon { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2 * k + 1) as f64 * y.powi(2 * k as i32))
                .sum(),
        }
    }

    /// `grad C_o^{-1}(y)`, closed form where one exists.
    pub fn common_grad_inverse(&self, y: f64) -> Result<f64> {
        match &self.family {
            CostFamily::Quadratic => Ok(y),
            CostFamily::PowerR { r } => Ok(y.signum() * y.abs().powf(1.0 / (*r as f64 - 1.0))),
            CostFamily::ShiftedCommon { .. } => self.common_grad_inverse_bisect(y),
        }
    }

    /// `grad C_o^{-1}(y)` by bisection on an expanding bracket, valid for every family.
    pub fn common_grad_inverse_bisect(&self, y: f64) -> Result<f64> {
        if y == 0.0 {
            return Ok(0.0);
        }
        if !y.is_finite() {
            return Err(Error::GradientRangeExhausted { target: y });
        }
        let mut width = 1.0;
        while self.common_grad(width) < y.abs() {
            width *= 2.0;
            if width > BRACKET_LIMIT {
                return Err(Error::GradientRangeExhausted { target: y });
            }
        }
        let (mut lo, mut hi) = if y > 0.0 { (0.0, width) } else { (-width, 0.0) };
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.common_grad(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (rl, rh) = ((self.common_grad(lo) - y).abs(), (self.common_grad(hi) - y).abs());
        Ok(if rl <= rh { lo } else { hi })
    }

    /// `C_i(u)`.
    pub fn cost(&self, i: usize, u: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => 0.5 * self.c[i] * u * u + self.b[i],
            CostFamily::PowerR { r } => self.c[i] * u.powi(*r as i32) / *r as f64 + self.b[i],
            CostFamily::ShiftedCommon { .. } => self.common_cost(u) + self.b[i],
        }
    }

    /// Marginal cost `grad C_i(u)`.
    pub fn grad_cost(&self, i: usize, u: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => self.c[i] * u,
            CostFamily::PowerR { r } => self.c[i] * u.powi(*r as i32 - 1),
            CostFamily::ShiftedCommon { .. } => self.common_grad(u),
        }
    }

    /// `grad^2 C_i(u)`.
    pub fn hess_cost(&self, i: usize, u: f64) -> f64 {
        match &self.family {
            CostFamily::Quadratic => self.c[i],
            CostFamily::PowerR { r } => self.c[i] * (*r as f64 - 1.0) * u.powi(*r as i32 - 2),
            CostFamily::ShiftedCommon { .. } => self.common_hess(u),
        }
    }

    /// `grad C_i^{-1}(y) = grad C_o^{-1}(y) / zeta_i`.
    pub fn grad_cost_inverse(&self, i: usize, y: f64) -> Result<f64> {
        match &self.family {
            CostFamily::Quadratic => Ok(y / self.c[i]),
            CostFamily::PowerR { r } => {
                let q = y / self.c[i];
                Ok(q.signum() * q.abs().powf(1.0 / (*r as f64 - 1.0)))
            }
            CostFamily::ShiftedCommon { .. } => self.common_grad_inverse(y),
        }
    }

    pub fn marginal_costs(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, &x)| self.grad_cost(i, x)).collect()
    }

    pub fn to_spec(&self) -> CostSpec {
        CostSpec {
            family: self.family.clone(),
            seed: None,
            c: Some(self.c.clone()),
            b: Some(self.b.clone()),
        }
    }
}

/// Configuration form of a cost model: either explicit coefficients or a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(flatten)]
    pub family: CostFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            family: CostFamily::PowerR { r: 4 },
            seed: Some(0),
            c: None,
            b: None,
        }
    }
}

impl CostSpec {
    /// Builds the model for `n` buses. Missing coefficients are drawn from
    /// `rng` as `c ~ U(0, 1)`, `b ~ U(0, 0.001)`.
    pub fn build<R: Rng>(&self, n: usize, rng: &mut R) -> Result<CostModel> {
        let c = match &self.c {
            Some(c) => c.clone(),
            None if matches!(self.family, CostFamily::ShiftedCommon { .. }) => vec![1.0; n],
            None => (0..n)
                .map(|_| loop {
                    let x: f64 = rng.gen_range(0.0..1.0);
                    if x > 0.0 {
                        break x;
                    }
                })
                .collect(),
        };
        let b = match &self.b {
            Some(b) => b.clone(),
            None => (0..n).map(|_| rng.gen_range(0.0..0.001)).collect(),
        };
        if c.len() != n {
            return Err(Error::Dimension {
                what: "cost coefficients",
                expected: n,
                got: c.len(),
            });
        }
        CostModel::new(self.family.clone(), c, b)
    }
}
