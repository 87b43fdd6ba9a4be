//! Noise, fixed-point encoding and the Rényi-DP accountant.
//!
//! The threshold check is a sparse-vector step with `(α, 9α/(2σ1²))`-RDP and
//! the label release a report-noisy-max step with `(α, α/σ2²)`-RDP. Answered
//! queries compose additively and the total converts to `(ε, δ)`-DP via
//! `ε = min_α ε(α) + ln(1/δ)/(α-1)`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::{Ring, RingElement};
use crate::seed;

/// Fixed-point factor used for votes and noise.
pub const DEFAULT_SCALE: u64 = 10_000_000;

/// Largest RDP order considered.
pub const MAX_ORDER: f64 = 512.0;
const ORDER_STEP: f64 = 1.0 / 16.0;

/// Replay key for one noise draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseIndex {
    pub sample: u64,
    pub phase: u8,
    pub class: u32,
}

impl NoiseIndex {
    pub fn new(sample: u64, phase: u8, class: u32) -> Self {
        NoiseIndex { sample, phase, class }
    }
}

/// Deterministic `N(0, sigma²)` draw keyed by `(seed, index)`.
///
/// Box–Muller over a ChaCha stream with `libm` transcendental functions, so
/// the same key gives the same bits on every platform.
pub fn gauss_sample(sigma: f64, seed: u64, index: NoiseIndex) -> Result<f64> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::usage(format!("noise std-dev must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let mut rng = seed::rng(
        seed,
        &[seed::NOISE, index.sample, u64::from(index.phase), u64::from(index.class)],
    );
    const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
    let u2 = (rng.next_u64() >> 11) as f64 * TWO_POW_M53;
    let radius = libm::sqrt(-2.0 * libm::log(u1));
    Ok(sigma * radius * libm::cos(2.0 * std::f64::consts::PI * u2))
}

/// `floor(x * scale)` as a signed integer, checked against the signed range
/// of `ring`.
pub fn fixed_point_encode_signed(x: f64, scale: u64, ring: Ring) -> Result<i64> {
    if scale == 0 {
        return Err(Error::usage("fixed-point scale must be >= 1"));
    }
    let v = (x * scale as f64).floor();
    let half = ring.signed_half() as f64;
    if !v.is_finite() || v < -half || v >= half {
        return Err(Error::Range(format!(
            "{x} * {scale} does not fit a signed {}-bit ring",
            ring.bits()
        )));
    }
    Ok(v as i64)
}

pub fn fixed_point_encode(x: f64, scale: u64, ring: Ring) -> Result<RingElement> {
    Ok(RingElement::from_signed(ring, fixed_point_encode_signed(x, scale, ring)?))
}

pub fn fixed_point_decode(e: RingElement, scale: u64) -> f64 {
    e.to_signed() as f64 / scale as f64
}

/// The order grid used for RDP → DP conversion: `1 + k/16` up to 512.
pub fn order_grid() -> Vec<f64> {
    let n = ((MAX_ORDER - 1.0) / ORDER_STEP).round() as usize;
    (1..=n).map(|k| 1.0 + k as f64 * ORDER_STEP).collect()
}

/// `ε(α)` sampled on a fixed set of orders.
#[derive(Clone, Debug, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    epsilons: Vec<f64>,
}

impl RdpCurve {
    pub fn from_fn(orders: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let epsilons = orders.iter().map(|&a| f(a)).collect();
        RdpCurve { orders, epsilons }
    }

    /// `ε(α) = rate · α` on the default grid.
    pub fn linear(rate: f64) -> Self {
        RdpCurve::from_fn(order_grid(), |a| rate * a)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn epsilon_at(&self, alpha: f64) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.epsilons[i])
    }

    pub fn scaled(&self, k: f64) -> RdpCurve {
        RdpCurve {
            orders: self.orders.clone(),
            epsilons: self.epsilons.iter().map(|e| e * k).collect(),
        }
    }
}

/// Per-query RDP slope `9/(2σ1²) + 1/σ2²`; a zero sigma gives `+∞`.
pub fn protocol_rdp_rate(sigma1: f64, sigma2: f64) -> Result<f64> {
    for s in [sigma1, sigma2] {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::usage(format!("sigma must be finite and >= 0, got {s}")));
        }
    }
    Ok(9.0 / (2.0 * sigma1 * sigma1) + 1.0 / (sigma2 * sigma2))
}

/// RDP curve of one answered query.
pub fn rdp_of_protocol(sigma1: f64, sigma2: f64) -> Result<RdpCurve> {
    Ok(RdpCurve::linear(protocol_rdp_rate(sigma1, sigma2)?))
}

/// Adaptive composition: pointwise sum over orders.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let (first, rest) = curves
        .split_first()
        .ok_or_else(|| Error::usage("compose needs at least one curve"))?;
    let mut out = first.clone();
    for c in rest {
        if c.orders != out.orders {
            return Err(Error::usage("curves sampled on different orders"));
        }
        for (e, x) in out.epsilons.iter_mut().zip(&c.epsilons) {
            *e += x;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub alpha_star: f64,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::usage(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `min_α ε(α) + ln(1/δ)/(α-1)` over the curve's orders.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    check_delta(delta)?;
    let log_inv = (1.0 / delta).ln();
    let mut best = DpGuarantee {
        epsilon: f64::INFINITY,
        alpha_star: f64::NAN,
    };
    for (&a, &e) in curve.orders.iter().zip(&curve.epsilons) {
        if a <= 1.0 {
            continue;
        }
        let eps = e + log_inv / (a - 1.0);
        if eps < best.epsilon {
            best = DpGuarantee {
                epsilon: eps,
                alpha_star: a,
            };
        }
    }
    Ok(best)
}

/// Same as converting `queries` composed copies of [`rdp_of_protocol`], without
/// materializing the curve.
fn linear_rate_to_dp(rate: f64, log_inv: f64) -> DpGuarantee {
    let mut best = DpGuarantee {
        epsilon: f64::INFINITY,
        alpha_star: f64::NAN,
    };
    let n = ((MAX_ORDER - 1.0) / ORDER_STEP).round() as usize;
    for k in 1..=n {
        let a = 1.0 + k as f64 * ORDER_STEP;
        let eps = rate * a + log_inv / (a - 1.0);
        if eps < best.epsilon {
            best = DpGuarantee {
                epsilon: eps,
                alpha_star: a,
            };
        }
    }
    best
}

/// Continuous-order optimum for `queries` answered samples:
/// `q·c + 2·sqrt(q·c·ln(1/δ))` with `c = 9/(2σ1²) + 1/σ2²`.
pub fn closed_form_epsilon(sigma1: f64, sigma2: f64, delta: f64, queries: u64) -> Result<f64> {
    check_delta(delta)?;
    let c = protocol_rdp_rate(sigma1, sigma2)? * queries as f64;
    Ok(c + 2.0 * (c * (1.0 / delta).ln()).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub queries: u64,
}

/// Accountant output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    /// `None` when a sigma is zero.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub queries: u64,
    pub alpha_star: Option<f64>,
}

impl DpParams {
    pub fn account(&self) -> Result<AccountantReport> {
        check_delta(self.delta)?;
        let rate = protocol_rdp_rate(self.sigma1, self.sigma2)?;
        let (epsilon, alpha_star) = if self.queries == 0 {
            (Some(0.0), None)
        } else if rate.is_infinite() {
            (None, None)
        } else {
            let g = linear_rate_to_dp(rate * self.queries as f64, (1.0 / self.delta).ln());
            (Some(g.epsilon), Some(g.alpha_star))
        };
        Ok(AccountantReport {
            epsilon,
            delta: self.delta,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            queries: self.queries,
            alpha_star,
        })
    }
}

/// Find `(σ1, σ2)` with `σ1 = ratio·σ2` whose composed guarantee over
/// `queries` answers equals `target` (to 1e-4 relative).
pub fn solve_noise_for_epsilon(target: f64, delta: f64, ratio: f64, queries: u64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::usage(format!("target epsilon must be positive, got {target}")));
    }
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::usage(format!("sigma ratio must be positive, got {ratio}")));
    }
    if queries == 0 {
        return Err(Error::usage("queries must be >= 1"));
    }
    let log_inv = (1.0 / delta).ln();
    let q = queries as f64;
    let eps_at = |log_s: f64| {
        let s2 = log_s.exp();
        let rate = 9.0 / (2.0 * (ratio * s2).powi(2)) + 1.0 / (s2 * s2);
        linear_rate_to_dp(rate * q, log_inv).epsilon
    };
    let (mut lo, mut hi) = ((1e-9f64).ln(), (1e9f64).ln());
    let floor = eps_at(hi);
    if floor > target {
        return Err(Error::Infeasible(format!(
            "epsilon {target} is below the {floor:.6} reachable with {queries} queries at delta {delta}"
        )));
    }
    if eps_at(lo) < target {
        return Err(Error::Infeasible(format!("epsilon {target} exceeds the solver's range")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s2 = (0.5 * (lo + hi)).exp();
    Ok((ratio * s2, s2))
}
