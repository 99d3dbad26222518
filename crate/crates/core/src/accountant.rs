//! Rényi differential privacy accounting.
//!
//! Mechanisms contribute RDP curves `ε(α)` over a fixed grid of orders;
//! curves compose by pointwise addition and convert to `(ε, δ)`-DP through
//! `ε = min_α [ε(α) + ln(1/δ)/(α − 1)]`. All quantities assume sensitivity
//! one; the callers scale their noise accordingly.

use std::fmt;

use crate::error::{Error, Result};

/// Practicality threshold for reported ε (inclusive).
pub const EPSILON_THRESHOLD: f64 = 14.0;

/// `{1.25, 1.5, 1.75, 2, 3, …, 64, 128, 256, 512}`.
pub fn default_orders() -> Vec<f64> {
    let mut v = vec![1.25, 1.5, 1.75];
    v.extend((2..=64).map(f64::from));
    v.extend([128.0, 256.0, 512.0]);
    v
}

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("RDP order must be finite and > 1, got {alpha}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// RDP of the Gaussian mechanism with noise multiplier `sigma`: `α / (2σ²)`.
pub fn rdp_gaussian(sigma: f64, alpha: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    check_order(alpha)?;
    Ok(alpha / (2.0 * sigma * sigma))
}

/// RDP of the Gaussian mechanism applied to a Poisson subsample drawn at
/// rate `q`.
///
/// For integer `α` this is `ln A_α / (α − 1)` with
/// `A_α = Σ_k C(α,k) (1−q)^(α−k) q^k exp((k² − k) / (2σ²))`, summed in the
/// log domain. A fractional order takes the smaller of two upper bounds:
/// the value at the next integer above it (the curve is nondecreasing in
/// `α`) and the unsampled Gaussian value `α / (2σ²)`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    check_positive("sigma", sigma)?;
    check_order(alpha)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return rdp_gaussian(sigma, alpha);
    }
    let a = alpha.ceil() as u64;
    let cap = if alpha.fract() == 0.0 { f64::INFINITY } else { rdp_gaussian(sigma, alpha)? };
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut log_binom = 0.0;
    let mut terms = Vec::with_capacity(a as usize + 1);
    for k in 0..=a {
        if k > 0 {
            log_binom += ((a - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        terms.push(log_binom + kf * lq + (a - k) as f64 * l1q + (kf * kf - kf) * inv);
    }
    Ok((log_sum_exp(&terms) / (a - 1) as f64).clamp(0.0, cap))
}

/// RDP of the Laplace mechanism with scale `b`:
/// `1/(α−1) · ln( α/(2α−1) · e^((α−1)/b) + (α−1)/(2α−1) · e^(−α/b) )`.
pub fn rdp_laplace(b: f64, alpha: f64) -> Result<f64> {
    check_positive("Laplace scale", b)?;
    check_order(alpha)?;
    let d = 2.0 * alpha - 1.0;
    let terms = [
        (alpha / d).ln() + (alpha - 1.0) / b,
        ((alpha - 1.0) / d).ln() - alpha / b,
    ];
    Ok((log_sum_exp(&terms) / (alpha - 1.0)).max(0.0))
}

/// RDP values over a grid of orders.
#[derive(Clone, Debug, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.is_empty() || orders.len() != values.len() {
            return Err(Error::Domain(format!(
                "curve needs one value per order ({} orders, {} values)",
                orders.len(),
                values.len()
            )));
        }
        for &a in &orders {
            check_order(a)?;
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("RDP values must be finite and ≥ 0, got {v}")));
        }
        Ok(RdpCurve { orders, values })
    }

    pub fn zeros(orders: Vec<f64>) -> Result<Self> {
        let n = orders.len();
        Self::new(orders, vec![0.0; n])
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise sum with `count` copies of `other` on the same grid.
    fn add_scaled(&mut self, other: &RdpCurve, count: u64) {
        debug_assert_eq!(self.orders, other.orders);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += count as f64 * b;
        }
    }

    /// Pointwise sum of two curves on the same grid.
    pub fn plus(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(Error::Domain("curves use different order grids".into()));
        }
        let mut out = self.clone();
        out.add_scaled(other, 1);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mechanism {
    /// Gaussian noise multiplier `sigma` on a Poisson subsample at rate `q`.
    SubsampledGaussian { q: f64, sigma: f64 },
    /// Laplace noise of scale `b` on a sensitivity-one query.
    Laplace { b: f64 },
}

impl Mechanism {
    pub fn rdp(&self, alpha: f64) -> Result<f64> {
        match *self {
            Mechanism::SubsampledGaussian { q, sigma } => rdp_subsampled_gaussian(q, sigma, alpha),
            Mechanism::Laplace { b } => rdp_laplace(b, alpha),
        }
    }

    pub fn curve(&self, orders: &[f64]) -> Result<RdpCurve> {
        let values = orders.iter().map(|&a| self.rdp(a)).collect::<Result<_>>()?;
        RdpCurve::new(orders.to_vec(), values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MechanismEvent {
    pub mechanism: Mechanism,
    pub count: u64,
}

/// Ordered record of mechanism invocations and their composed curve.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyLedger {
    events: Vec<MechanismEvent>,
    composed: RdpCurve,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::with_orders(default_orders()).expect("default grid is valid")
    }
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_orders(orders: Vec<f64>) -> Result<Self> {
        Ok(PrivacyLedger {
            events: Vec::new(),
            composed: RdpCurve::zeros(orders)?,
        })
    }

    pub fn record(&mut self, mechanism: Mechanism, count: u64) -> Result<()> {
        if count == 0 {
            return Err(Error::Domain("event count must be at least 1".into()));
        }
        let curve = mechanism.curve(&self.composed.orders)?;
        self.composed.add_scaled(&curve, count);
        self.events.push(MechanismEvent { mechanism, count });
        Ok(())
    }

    pub fn events(&self) -> &[MechanismEvent] {
        &self.events
    }

    pub fn curve(&self) -> &RdpCurve {
        &self.composed
    }

    /// Appends every event of `other`.
    pub fn extend(&mut self, other: &PrivacyLedger) -> Result<()> {
        for e in &other.events {
            self.record(e.mechanism, e.count)?;
        }
        Ok(())
    }
}

/// Composed curve of a ledger: pointwise sum of event curves times counts.
pub fn compose(ledger: &PrivacyLedger) -> RdpCurve {
    ledger.curve().clone()
}

/// An `(ε, δ)` guarantee and the order that attains it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    /// Optimal order; `INFINITY` for a pure-DP bound that needs no order.
    pub alpha: f64,
}

impl DpGuarantee {
    pub fn is_private(&self) -> bool {
        flag_private(self, EPSILON_THRESHOLD)
    }
}

impl fmt::Display for DpGuarantee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epsilon={} alpha={} delta={} private={}",
            self.epsilon,
            self.alpha,
            self.delta,
            self.is_private()
        )
    }
}

/// Converts an RDP curve to `(ε, δ)`-DP at the best order of its grid.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv = (1.0 / delta).ln();
    let mut best = DpGuarantee {
        epsilon: f64::INFINITY,
        delta,
        alpha: curve.orders[0],
    };
    for (&a, &r) in curve.orders.iter().zip(&curve.values) {
        let e = r + log_inv / (a - 1.0);
        if e < best.epsilon {
            best.epsilon = e;
            best.alpha = a;
        }
    }
    Ok(best)
}

/// True iff `ε ≤ threshold`.
pub fn flag_private(guarantee: &DpGuarantee, threshold: f64) -> bool {
    guarantee.epsilon <= threshold
}

/// Guarantee for `steps` invocations of the subsampled Gaussian mechanism.
/// Zero steps give the conversion of the all-zero curve.
pub fn dpsgd_guarantee(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<DpGuarantee> {
    let mut ledger = PrivacyLedger::new();
    if steps > 0 {
        ledger.record(Mechanism::SubsampledGaussian { q, sigma }, steps)?;
    }
    to_dp(ledger.curve(), delta)
}
