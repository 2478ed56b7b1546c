//! Closed-form last-iterate, average-iterate and distance bounds for
//! fixed-stepsize SGD, and the stepsizes that tune them.
//!
//! Logs are base 2 except in the small-stepsize family, which uses natural
//! logs; no base normalization is applied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::Estimand;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parameter outside the bound's domain: {0}")]
pub struct DomainError(pub String);

fn require(ok: bool, msg: impl FnOnce() -> String) -> Result<(), DomainError> {
    if ok {
        Ok(())
    } else {
        Err(DomainError(msg()))
    }
}

fn check_common(beta: f64, d0_sq: f64, sigma_star_sq: f64) -> Result<(), DomainError> {
    require(beta > 0.0 && beta.is_finite(), || format!("beta = {beta}"))?;
    require(d0_sq >= 0.0 && d0_sq.is_finite(), || {
        format!("D0^2 = {d0_sq}")
    })?;
    require(sigma_star_sq >= 0.0 && sigma_star_sq.is_finite(), || {
        format!("sigma_star^2 = {sigma_star_sq}")
    })
}

/// Requires `0 < βη < limit`.
fn check_eta(beta: f64, eta: f64, limit: f64) -> Result<(), DomainError> {
    require(eta > 0.0 && beta * eta < limit, || {
        format!("beta*eta = {} must lie in (0, {limit})", beta * eta)
    })
}

fn check_horizon(t: usize, min: usize) -> Result<(), DomainError> {
    require(t >= min, || format!("T = {t} below {min}"))
}

/// `3 D0² / (η (2 − βη) T^{1 − βη/2})`.
pub fn last_iterate_bound(beta: f64, eta: f64, d0_sq: f64, t: usize) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_eta(beta, eta, 2.0)?;
    check_horizon(t, 2)?;
    Ok(3.0 * decay_term(beta, eta, d0_sq, t))
}

/// `D0² / (η (2 − βη) T^{1 − βη/2})`, shared by several bounds.
fn decay_term(beta: f64, eta: f64, d0_sq: f64, t: usize) -> f64 {
    let be = beta * eta;
    d0_sq / (eta * (2.0 - be) * (t as f64).powf(1.0 - be / 2.0))
}

/// `3 β D0² / √T`, the value at `η = 1/β`.
pub fn greedy_last_iterate_bound(beta: f64, d0_sq: f64, t: usize) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_horizon(t, 2)?;
    Ok(3.0 * beta * d0_sq / (t as f64).sqrt())
}

/// `6 β D0² log2 T / T`, valid at `η = 1/(β log2 T)`.
pub fn log_tuned_last_iterate_bound(beta: f64, d0_sq: f64, t: usize) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_horizon(t, 2)?;
    let tf = t as f64;
    Ok(6.0 * beta * d0_sq * tf.log2() / tf)
}

/// `12 D0²/(η(2−βη)T^{1−βη/2}) + 24 η σ★² T^{βη/2} log2(T+2) / (2−βη)²`.
pub fn low_noise_bound(
    beta: f64,
    eta: f64,
    d0_sq: f64,
    sigma_star_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, sigma_star_sq)?;
    check_eta(beta, eta, 2.0)?;
    check_horizon(t, 2)?;
    let be = beta * eta;
    let tf = t as f64;
    let noise = 24.0 * eta * sigma_star_sq * tf.powf(be / 2.0) * (tf + 2.0).log2()
        / ((2.0 - be) * (2.0 - be));
    Ok(12.0 * decay_term(beta, eta, d0_sq, t) + noise)
}

/// `min{1/(β log2 T), D0/√(σ★² T log2(T+2))}`; the second branch is `+∞`
/// when `σ★ = 0`.
pub fn tuned_low_noise_stepsize(beta: f64, d0: f64, sigma_star: f64, t: usize) -> f64 {
    let tf = t as f64;
    let first = 1.0 / (beta * tf.log2());
    if sigma_star == 0.0 {
        return first;
    }
    let second = d0 / (sigma_star * sigma_star * tf * (tf + 2.0).log2()).sqrt();
    first.min(second)
}

/// `24 β D0² log2 T / T + 120 σ★ D0 √log2(T+2) / √T`, valid at the tuned stepsize.
pub fn tuned_low_noise_bound(
    beta: f64,
    d0_sq: f64,
    sigma_star_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, sigma_star_sq)?;
    check_horizon(t, 2)?;
    let tf = t as f64;
    Ok(24.0 * beta * d0_sq * tf.log2() / tf
        + 120.0 * (sigma_star_sq * d0_sq).sqrt() * (tf + 2.0).log2().sqrt() / tf.sqrt())
}

/// Single pass without replacement:
/// `9 D0²/(η(2−βη)T^{1−βη/2}) + 4 β² η D0² / T`.
pub fn without_replacement_bound(
    beta: f64,
    eta: f64,
    d0_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_eta(beta, eta, 2.0)?;
    check_horizon(t, 2)?;
    Ok(9.0 * decay_term(beta, eta, d0_sq, t) + 4.0 * beta * beta * eta * d0_sq / t as f64)
}

/// `13 β D0² / √T`, valid without replacement at `η = 1/β`.
pub fn greedy_without_replacement_bound(
    beta: f64,
    d0_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_horizon(t, 2)?;
    Ok(13.0 * beta * d0_sq / (t as f64).sqrt())
}

/// `22 β D0² log2 T / T`, valid without replacement at `η = 1/(β log2 T)`.
pub fn log_tuned_without_replacement_bound(
    beta: f64,
    d0_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, 0.0)?;
    check_horizon(t, 2)?;
    let tf = t as f64;
    Ok(22.0 * beta * d0_sq * tf.log2() / tf)
}

/// Average iterate: `2 D0² / ((2−βη) η T) + 8 η σ★² / (2−βη)²`.
pub fn average_iterate_bound(
    beta: f64,
    eta: f64,
    d0_sq: f64,
    sigma_star_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, sigma_star_sq)?;
    check_eta(beta, eta, 2.0)?;
    check_horizon(t, 1)?;
    let g = 2.0 - beta * eta;
    Ok(2.0 * d0_sq / (g * eta * t as f64) + 8.0 * eta * sigma_star_sq / (g * g))
}

/// `min{1/β, D0/√(4 σ★² T)}`.
pub fn tuned_average_iterate_stepsize(beta: f64, d0: f64, sigma_star: f64, t: usize) -> f64 {
    let first = 1.0 / beta;
    if sigma_star == 0.0 {
        return first;
    }
    first.min(d0 / (4.0 * sigma_star * sigma_star * t as f64).sqrt())
}

/// Bound on `E‖x_{T+1} − x★‖²` (a squared distance, not an excess risk):
/// `exp(−½ η (2−ηβ) α T) D0² + 8 η σ★² / (α (2−ηβ)²)`.
pub fn strongly_convex_distance_bound(
    beta: f64,
    alpha_sc: f64,
    eta: f64,
    d0_sq: f64,
    sigma_star_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, sigma_star_sq)?;
    check_eta(beta, eta, 2.0)?;
    require(alpha_sc > 0.0 && alpha_sc.is_finite(), || {
        format!("alpha_sc = {alpha_sc}")
    })?;
    let g = 2.0 - eta * beta;
    Ok((-0.5 * eta * g * alpha_sc * t as f64).exp() * d0_sq
        + 8.0 * eta * sigma_star_sq / (alpha_sc * g * g))
}

/// Alternative small-stepsize bound, `0 < βη < 1`, `T ≥ 3`:
/// `16 D0²/(η T^{1−(2−ηβ)βη}) + 64 η σ★² T^{(2−ηβ)βη} ln T / (1−ηβ)`.
pub fn small_stepsize_bound(
    beta: f64,
    eta: f64,
    d0_sq: f64,
    sigma_star_sq: f64,
    t: usize,
) -> Result<f64, DomainError> {
    check_common(beta, d0_sq, sigma_star_sq)?;
    check_eta(beta, eta, 1.0)?;
    check_horizon(t, 3)?;
    let be = beta * eta;
    let p = (2.0 - be) * be;
    let tf = t as f64;
    Ok(16.0 * d0_sq / (eta * tf.powf(1.0 - p))
        + 64.0 * eta * sigma_star_sq * tf.powf(p) * tf.ln() / (1.0 - be))
}

/// `min{1/(β ln T), D0/√(σ★² T ln T)}`.
pub fn tuned_small_stepsize(beta: f64, d0: f64, sigma_star: f64, t: usize) -> f64 {
    let tf = t as f64;
    let first = 1.0 / (beta * tf.ln());
    if sigma_star == 0.0 {
        return first;
    }
    first.min(d0 / (sigma_star * sigma_star * tf * tf.ln()).sqrt())
}

/// Block Kaczmarz with relaxation `c`:
/// `K R² ‖x★‖² / (c (2−c) T^{1−c/2})` with `K = 3` with replacement and
/// `K = 13` without.
pub fn kaczmarz_bound(
    r_sq: f64,
    x_star_norm_sq: f64,
    c: f64,
    t: usize,
    without_replacement: bool,
) -> Result<f64, DomainError> {
    require(r_sq > 0.0 && r_sq.is_finite(), || format!("R^2 = {r_sq}"))?;
    require(x_star_norm_sq >= 0.0, || {
        format!("|x*|^2 = {x_star_norm_sq}")
    })?;
    require(c > 0.0 && c <= 1.0, || {
        format!("c = {c} must lie in (0, 1]")
    })?;
    check_horizon(t, 2)?;
    let k = if without_replacement { 13.0 } else { 3.0 };
    Ok(k * r_sq * x_star_norm_sq / (c * (2.0 - c) * (t as f64).powf(1.0 - c / 2.0)))
}

/// Continual regression population loss at `x_{T+1}`: `13 R² ‖x★‖² / √T`.
pub fn continual_loss_bound(r_sq: f64, x_star_norm_sq: f64, t: usize) -> Result<f64, DomainError> {
    require(r_sq > 0.0, || format!("R^2 = {r_sq}"))?;
    check_horizon(t, 2)?;
    Ok(13.0 * r_sq * x_star_norm_sq / (t as f64).sqrt())
}

/// Continual regression forgetting at `x_{T+1}`: `K R² ‖x★‖² / √T` with
/// `K = 30` with replacement and `K = 10` without.
pub fn forgetting_bound(
    r_sq: f64,
    x_star_norm_sq: f64,
    t: usize,
    without_replacement: bool,
) -> Result<f64, DomainError> {
    require(r_sq > 0.0, || format!("R^2 = {r_sq}"))?;
    check_horizon(t, 2)?;
    let k = if without_replacement { 10.0 } else { 30.0 };
    Ok(k * r_sq * x_star_norm_sq / (t as f64).sqrt())
}

/// POCS objective: `7 dist²(x_1, ∩C) / √T`.
pub fn pocs_bound(dist_sq_to_intersection: f64, t: usize) -> Result<f64, DomainError> {
    require(dist_sq_to_intersection >= 0.0, || {
        format!("distance^2 = {dist_sq_to_intersection}")
    })?;
    check_horizon(t, 2)?;
    Ok(7.0 * dist_sq_to_intersection / (t as f64).sqrt())
}

/// The bounds selectable by experiments, with their wire names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundKind {
    #[serde(rename = "thm1")]
    Thm1,
    #[serde(rename = "thm1_greedy")]
    Thm1Greedy,
    #[serde(rename = "thm1_log")]
    Thm1Log,
    #[serde(rename = "thm2")]
    Thm2,
    #[serde(rename = "thm2_tuned")]
    Thm2Tuned,
    #[serde(rename = "thm3_wor")]
    Thm3Wor,
    #[serde(rename = "cor4_kaczmarz")]
    Cor4Kaczmarz,
    #[serde(rename = "avg_iterate_B")]
    AvgIterateB,
    #[serde(rename = "strongly_convex_C")]
    StronglyConvexC,
    #[serde(rename = "thmD_alt")]
    ThmDAlt,
}

impl BoundKind {
    pub const ALL: [BoundKind; 10] = [
        Self::Thm1,
        Self::Thm1Greedy,
        Self::Thm1Log,
        Self::Thm2,
        Self::Thm2Tuned,
        Self::Thm3Wor,
        Self::Cor4Kaczmarz,
        Self::AvgIterateB,
        Self::StronglyConvexC,
        Self::ThmDAlt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Thm1 => "thm1",
            Self::Thm1Greedy => "thm1_greedy",
            Self::Thm1Log => "thm1_log",
            Self::Thm2 => "thm2",
            Self::Thm2Tuned => "thm2_tuned",
            Self::Thm3Wor => "thm3_wor",
            Self::Cor4Kaczmarz => "cor4_kaczmarz",
            Self::AvgIterateB => "avg_iterate_B",
            Self::StronglyConvexC => "strongly_convex_C",
            Self::ThmDAlt => "thmD_alt",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// The quantity this bound controls when compared against SGD runs on a
    /// problem instance; `None` for the Kaczmarz residual bound.
    pub fn estimand(&self) -> Option<Estimand> {
        match self {
            Self::AvgIterateB => Some(Estimand::AverageIterate),
            Self::StronglyConvexC => Some(Estimand::FinalDistanceSq),
            Self::Cor4Kaczmarz => None,
            _ => Some(Estimand::LastIterate),
        }
    }

    /// Label used in reports for the controlled quantity.
    pub fn quantity_label(&self) -> &'static str {
        match self.estimand() {
            Some(Estimand::LastIterate) => "excess_risk_last_iterate",
            Some(Estimand::AverageIterate) => "excess_risk_average_iterate",
            Some(Estimand::FinalDistanceSq) => "squared_distance_final_point",
            None => "kaczmarz_residual_loss",
        }
    }
}

/// Parameters for [`evaluate`]. Fields not used by a bound are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub beta: f64,
    pub eta: f64,
    pub d0_sq: f64,
    #[serde(default)]
    pub sigma_star_sq: f64,
    #[serde(default)]
    pub alpha_sc: f64,
    #[serde(default = "one")]
    pub r_sq: f64,
    #[serde(default)]
    pub without_replacement: bool,
}

fn one() -> f64 {
    1.0
}

impl BoundSpec {
    pub fn new(beta: f64, eta: f64, d0_sq: f64) -> Self {
        Self {
            beta,
            eta,
            d0_sq,
            sigma_star_sq: 0.0,
            alpha_sc: 0.0,
            r_sq: 1.0,
            without_replacement: false,
        }
    }
}

/// Evaluates `kind` at horizon `t`. For the Kaczmarz bound `eta` is the
/// relaxation `c` and `d0_sq` is `‖x★‖²` (the method starts at zero).
pub fn evaluate(kind: BoundKind, s: &BoundSpec, t: usize) -> Result<f64, DomainError> {
    match kind {
        BoundKind::Thm1 => last_iterate_bound(s.beta, s.eta, s.d0_sq, t),
        BoundKind::Thm1Greedy => greedy_last_iterate_bound(s.beta, s.d0_sq, t),
        BoundKind::Thm1Log => log_tuned_last_iterate_bound(s.beta, s.d0_sq, t),
        BoundKind::Thm2 => low_noise_bound(s.beta, s.eta, s.d0_sq, s.sigma_star_sq, t),
        BoundKind::Thm2Tuned => tuned_low_noise_bound(s.beta, s.d0_sq, s.sigma_star_sq, t),
        BoundKind::Thm3Wor => without_replacement_bound(s.beta, s.eta, s.d0_sq, t),
        BoundKind::Cor4Kaczmarz => kaczmarz_bound(s.r_sq, s.d0_sq, s.eta, t, s.without_replacement),
        BoundKind::AvgIterateB => average_iterate_bound(s.beta, s.eta, s.d0_sq, s.sigma_star_sq, t),
        BoundKind::StronglyConvexC => {
            strongly_convex_distance_bound(s.beta, s.alpha_sc, s.eta, s.d0_sq, s.sigma_star_sq, t)
        }
        BoundKind::ThmDAlt => small_stepsize_bound(s.beta, s.eta, s.d0_sq, s.sigma_star_sq, t),
    }
}
