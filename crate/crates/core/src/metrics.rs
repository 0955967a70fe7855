// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Figures of merit for a pair of intensity-correlated beams.
//!
//! All noises are amplitude-quadrature variances normalized to the shot noise
//! (standard quantum limit) of the corresponding beam. dB values are power dB.

use serde::Serialize;
use thiserror::Error;

use crate::gaussian::CovarianceState;

/// Slack allowed on `|C_ab| ≤ 1` for figures extracted from a physical state.
const CORRELATION_SLACK: f64 = 1e-9;

/// Slack allowed on `|C_ab| ≤ 1` when inverting rounded measurements.
const INFERENCE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("value must be positive for a dB conversion (got {0})")]
    NonPositive(f64),
    #[error("degenerate covariance: zero amplitude-quadrature variance")]
    DegenerateVariance,
    #[error("invalid noise figures: {0}")]
    InvalidFigures(&'static str),
    #[error("both power fractions are zero")]
    NoPower,
    #[error("unphysical measurement: inferred correlation coefficient {0:.6} exceeds 1 in magnitude")]
    Unphysical(f64),
    #[error("trace at {raw_db:.3} dB is not above the electronic floor at {floor_db:.3} dB")]
    Unresolvable { raw_db: f64, floor_db: f64 },
}

/// Individual-beam noises, their correlation and the detected power split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseFigures {
    pub f_a: f64,
    pub f_b: f64,
    pub c_ab: f64,
    pub p_a: f64,
    pub p_b: f64,
}

impl NoiseFigures {
    pub fn new(f_a: f64, f_b: f64, c_ab: f64, p_a: f64, p_b: f64) -> Result<Self, MetricsError> {
        if !(f_a > 0.0 && f_b > 0.0) {
            return Err(MetricsError::InvalidFigures("noise variances must be positive"));
        }
        if !(c_ab.abs() <= 1.0 + CORRELATION_SLACK) {
            return Err(MetricsError::InvalidFigures("|C_ab| must not exceed 1"));
        }
        if !(p_a >= 0.0 && p_b >= 0.0) {
            return Err(MetricsError::InvalidFigures("power fractions must be non-negative"));
        }
        Ok(Self { f_a, f_b, c_ab, p_a, p_b })
    }

    /// Amplitude-quadrature covariance `⟨X_a X_b⟩`.
    pub fn covariance(&self) -> f64 {
        self.c_ab * (self.f_a * self.f_b).sqrt()
    }
}

/// Reads `(F_a, F_b, C_ab)` off the amplitude quadratures of `s`.
pub fn noise_figures(s: &CovarianceState, p_a: f64, p_b: f64) -> Result<NoiseFigures, MetricsError> {
    let cov = s.cov();
    let (f_a, f_b) = (cov[(0, 0)], cov[(2, 2)]);
    if !(f_a > 0.0 && f_b > 0.0) {
        return Err(MetricsError::DegenerateVariance);
    }
    let c_ab = cov[(0, 2)] / (f_a * f_b).sqrt();
    NoiseFigures::new(f_a, f_b, c_ab, p_a, p_b)
}

/// `𝒢 = (F_a + F_b)/2 − √(C² F_a F_b + ((F_a − F_b)/2)²)`.
///
/// Evaluated in the rationalized form `F_a F_b (1 − C²) / ((F_a + F_b)/2 + √…)`,
/// which is algebraically identical but keeps its relative accuracy when the
/// beams are strongly correlated and the two terms nearly cancel.
pub fn gemellity(n: &NoiseFigures) -> f64 {
    let mean = 0.5 * (n.f_a + n.f_b);
    let half_diff = 0.5 * (n.f_a - n.f_b);
    let cross = n.c_ab * n.c_ab * n.f_a * n.f_b;
    let root = (cross + half_diff * half_diff).sqrt();
    n.f_a * n.f_b * (1.0 - n.c_ab) * (1.0 + n.c_ab) / (mean + root)
}

/// `⟨(X_a − X_b)²⟩ / 2`.
pub fn balanced_difference_noise(n: &NoiseFigures) -> f64 {
    0.5 * (n.f_a + n.f_b) - n.covariance()
}

/// Intensity-difference noise of the detected photocurrents normalized to the
/// shot noise of the total detected power.
pub fn weighted_difference_noise(n: &NoiseFigures) -> Result<f64, MetricsError> {
    let total = n.p_a + n.p_b;
    if total <= 0.0 {
        return Err(MetricsError::NoPower);
    }
    let cross = 2.0 * (n.p_a * n.p_b).sqrt() * n.covariance();
    Ok((n.p_a * n.f_a + n.p_b * n.f_b - cross) / total)
}

/// Noise figures and gemellity recovered from a difference-noise measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inference {
    pub figures: NoiseFigures,
    pub gemellity: f64,
}

impl Inference {
    pub fn gemellity_db(&self) -> f64 {
        10.0 * self.gemellity.log10()
    }
}

/// Inverts [`weighted_difference_noise`] for `C_ab` given the measured
/// difference noise, individual noises (all in dB relative to the SQL) and
/// the power split, then evaluates the gemellity.
pub fn infer_from_measurement(
    diff_db: f64,
    f_a_db: f64,
    f_b_db: f64,
    p_a: f64,
    p_b: f64,
) -> Result<Inference, MetricsError> {
    if !(p_a >= 0.0 && p_b >= 0.0) {
        return Err(MetricsError::InvalidFigures("power fractions must be non-negative"));
    }
    if p_a + p_b <= 0.0 {
        return Err(MetricsError::NoPower);
    }
    if p_a == 0.0 || p_b == 0.0 {
        return Err(MetricsError::InvalidFigures("correlation is unobservable with a dark beam"));
    }
    let s = linear_from_db(diff_db);
    let (f_a, f_b) = (linear_from_db(f_a_db), linear_from_db(f_b_db));
    let c_ab = (p_a * f_a + p_b * f_b - s * (p_a + p_b)) / (2.0 * (p_a * p_b * f_a * f_b).sqrt());
    if !(c_ab.abs() <= 1.0 + INFERENCE_SLACK) {
        return Err(MetricsError::Unphysical(c_ab));
    }
    let figures = NoiseFigures::new(f_a, f_b, c_ab.clamp(-1.0, 1.0), p_a, p_b)?;
    Ok(Inference {
        figures,
        gemellity: gemellity(&figures),
    })
}

pub fn db_from_linear(x: f64) -> Result<f64, MetricsError> {
    if !(x > 0.0) {
        return Err(MetricsError::NonPositive(x));
    }
    Ok(10.0 * x.log10())
}

pub fn linear_from_db(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Removes an uncorrelated electronic floor from a noise level, both in dB
/// relative to the same reference.
pub fn electronic_noise_correction(raw_db: f64, floor_db: f64) -> Result<f64, MetricsError> {
    let corrected = linear_from_db(raw_db) - linear_from_db(floor_db);
    if !(corrected > 0.0) {
        return Err(MetricsError::Unresolvable { raw_db, floor_db });
    }
    db_from_linear(corrected)
}
