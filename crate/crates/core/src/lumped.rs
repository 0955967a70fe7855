// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Ideal phase-insensitive amplifier followed by lumped output losses.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gaussian::{AmplifierParams, GaussianChannel, GaussianError, LossParams};
use crate::metrics::{self, MetricsError, NoiseFigures};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LumpedError {
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unit overall transmission is infeasible: probe transmission would be {0}")]
    Infeasible(f64),
    #[error("grid step must be positive and finite (got {0})")]
    InvalidStep(f64),
    #[error("gain must exceed 1 (got {0})")]
    NoGain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LumpedConfig {
    pub gain: f64,
    pub t_a: f64,
    pub t_b: f64,
}

impl LumpedConfig {
    pub fn new(gain: f64, t_a: f64, t_b: f64) -> Result<Self, LumpedError> {
        AmplifierParams::new(gain)?;
        LossParams::new(t_a, t_b)?;
        Ok(Self { gain, t_a, t_b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LumpedResult {
    pub noise: NoiseFigures,
    pub gemellity: f64,
    pub diff_noise: f64,
    /// Output photon flux over input probe flux, `T_a G + T_b (G − 1)`.
    pub total_transmission: f64,
}

/// Closed-form noise figures of the amplifier + loss chain fed by a coherent
/// probe and a vacuum conjugate.
pub fn cascade(c: &LumpedConfig) -> Result<LumpedResult, LumpedError> {
    let LumpedConfig { gain: g, t_a, t_b } = *c;
    let f_a = t_a * (2.0 * g - 1.0) + 1.0 - t_a;
    let f_b = t_b * (2.0 * g - 1.0) + 1.0 - t_b;
    let cov = 2.0 * (t_a * t_b * g * (g - 1.0)).sqrt();
    let (p_a, p_b) = (t_a * g, t_b * (g - 1.0));
    let noise = NoiseFigures::new(f_a, f_b, cov / (f_a * f_b).sqrt(), p_a, p_b)?;
    Ok(LumpedResult {
        noise,
        gemellity: metrics::gemellity(&noise),
        diff_noise: metrics::weighted_difference_noise(&noise)?,
        total_transmission: p_a + p_b,
    })
}

/// The same chain as a Gaussian channel.
pub fn cascade_channel(c: &LumpedConfig) -> Result<GaussianChannel, LumpedError> {
    let amp = GaussianChannel::amplifier(AmplifierParams::new(c.gain)?);
    let loss = GaussianChannel::loss(LossParams::new(c.t_a, c.t_b)?);
    Ok(amp.then(&loss))
}

/// Power-weighted difference noise as a function of the probe transmission
/// with a lossless conjugate.
pub fn probe_loss_balancing_curve(gain: f64, t_a: &[f64]) -> Result<Vec<f64>, LumpedError> {
    if !(gain > 1.0) {
        return Err(LumpedError::NoGain(gain));
    }
    t_a.iter()
        .map(|&t| Ok(cascade(&LumpedConfig::new(gain, t, 1.0)?)?.diff_noise))
        .collect()
}

/// Probe transmission giving unit overall transmission,
/// `T_a = (1 − T_b (G − 1)) / G`.
pub fn constrain_unit_transmission(gain: f64, t_b: f64) -> Result<f64, LumpedError> {
    AmplifierParams::new(gain)?;
    LossParams::new(1.0, t_b)?;
    let t_a = (1.0 - t_b * (gain - 1.0)) / gain;
    if !(0.0..=1.0).contains(&t_a) {
        return Err(LumpedError::Infeasible(t_a));
    }
    Ok(t_a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizeOptions {
    /// Coarse grid step in both gain and conjugate transmission.
    pub grid_step: f64,
    /// Final step of the zooming refinement.
    pub refine_tol: f64,
    pub max_gain: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            refine_tol: 1e-4,
            max_gain: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LumpedOptimum {
    pub config: LumpedConfig,
    pub gemellity: f64,
    pub gemellity_db: f64,
    /// Both gain neighbours at the refinement step are worse.
    pub interior_in_gain: bool,
    /// The optimum sits on `T_b = 1` and stepping inside is worse.
    pub boundary_t_b: bool,
    pub evaluations: usize,
}

fn constrained_gemellity(gain: f64, t_b: f64) -> Option<f64> {
    let t_a = constrain_unit_transmission(gain, t_b).ok()?;
    cascade(&LumpedConfig { gain, t_a, t_b }).ok().map(|r| r.gemellity)
}

/// `lo, lo + step, …` with `hi` always included as the last point.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize;
    let mut pts: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).filter(|&x| x < hi).collect();
    pts.push(hi);
    pts
}

/// Best feasible point of a tensor grid; ties resolve to the lowest index.
fn scan(gains: &[f64], t_bs: &[f64]) -> Option<(f64, f64, f64)> {
    gains
        .par_iter()
        .filter_map(|&g| {
            t_bs.iter()
                .filter_map(|&tb| constrained_gemellity(g, tb).map(|v| (v, g, tb)))
                .min_by(|x, y| x.0.total_cmp(&y.0))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
}

/// Minimizes the gemellity over `(G, T_b)` with `T_a` fixed by unit overall
/// transmission. Infeasible pairs are skipped rather than clamped.
pub fn optimize_unit_transmission(opts: &OptimizeOptions) -> Result<LumpedOptimum, LumpedError> {
    for s in [opts.grid_step, opts.refine_tol] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(LumpedError::InvalidStep(s));
        }
    }
    AmplifierParams::new(opts.max_gain)?;

    let gains = grid(1.0, opts.max_gain, opts.grid_step);
    let t_bs = grid(0.0, 1.0, opts.grid_step);
    let mut evaluations = gains.len() * t_bs.len();
    let (mut best, mut g, mut tb) = scan(&gains, &t_bs).expect("G = 1 is always feasible");

    let mut step = opts.grid_step;
    while step > opts.refine_tol {
        let fine = (step / 10.0).max(opts.refine_tol);
        let gains = grid((g - 2.0 * step).max(1.0), (g + 2.0 * step).min(opts.max_gain), fine);
        let t_bs = grid((tb - 2.0 * step).max(0.0), (tb + 2.0 * step).min(1.0), fine);
        evaluations += gains.len() * t_bs.len();
        if let Some((v, g2, tb2)) = scan(&gains, &t_bs) {
            if v <= best {
                (best, g, tb) = (v, g2, tb2);
            }
        }
        step = fine;
    }

    let h = opts.refine_tol;
    let worse = |gg: f64, tt: f64| constrained_gemellity(gg, tt).is_none_or(|v| v > best);
    let interior_in_gain = g - h >= 1.0 && worse(g - h, tb) && worse(g + h, tb);
    let boundary_t_b = tb == 1.0 && worse(g, 1.0 - h);
    let t_a = constrain_unit_transmission(g, tb)?;

    Ok(LumpedOptimum {
        config: LumpedConfig { gain: g, t_a, t_b: tb },
        gemellity: best,
        gemellity_db: metrics::db_from_linear(best)?,
        interior_in_gain,
        boundary_t_b,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CovarianceState;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn cfg(g: f64, ta: f64, tb: f64) -> LumpedConfig {
        LumpedConfig::new(g, ta, tb).unwrap()
    }

    #[test]
    fn no_gain_is_shot_noise_limited() {
        for t in [0.1, 0.5, 1.0] {
            let r = cascade(&cfg(1.0, t, 0.3)).unwrap();
            assert_abs_diff_eq!(r.noise.f_a, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(r.gemellity, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn quoted_operating_point() {
        let r = cascade(&cfg(1.23, 0.626, 1.0)).unwrap();
        assert_abs_diff_eq!(r.noise.f_a, 1.288, epsilon = 1e-3);
        assert_abs_diff_eq!(r.noise.f_b, 1.46, epsilon = 1e-12);
        assert_abs_diff_eq!(r.noise.covariance(), 0.8417, epsilon = 1e-4);
        assert_abs_diff_eq!(r.gemellity, 0.528, epsilon = 1e-3);
        assert_abs_diff_eq!(metrics::db_from_linear(r.gemellity).unwrap(), -2.77, epsilon = 0.01);
    }

    #[test]
    fn high_gain_diff_noise() {
        let r = cascade(&cfg(20.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r.diff_noise, 1.0 / 39.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.total_transmission, 39.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_power_rejected() {
        assert!(matches!(cascade(&cfg(1.0, 0.0, 0.0)), Err(LumpedError::Metrics(MetricsError::NoPower))));
        assert!(LumpedConfig::new(0.5, 1.0, 1.0).is_err());
        assert!(LumpedConfig::new(2.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn closed_forms_match_channels_on_grid() {
        let probe = CovarianceState::coherent(Complex64::new(1.0, 0.0));
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let c = cfg(1.0 + i as f64 * 0.7, 0.1 + 0.1 * j as f64, 0.1 + 0.1 * k as f64);
                    let r = cascade(&c).unwrap();
                    let out = cascade_channel(&c).unwrap().apply(&probe);
                    let (pa, pb) = out.fluxes();
                    let n = metrics::noise_figures(&out, pa, pb).unwrap();
                    assert_abs_diff_eq!(n.f_a, r.noise.f_a, epsilon = 1e-12);
                    assert_abs_diff_eq!(n.f_b, r.noise.f_b, epsilon = 1e-12);
                    assert_abs_diff_eq!(n.c_ab, r.noise.c_ab, epsilon = 1e-12);
                    assert_abs_diff_eq!(n.p_a, r.noise.p_a, epsilon = 1e-12);
                    assert_abs_diff_eq!(n.p_b, r.noise.p_b, epsilon = 1e-12);
                    assert_abs_diff_eq!(pa + pb, r.total_transmission, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn balancing_curve_has_interior_minimum() {
        let t: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let curve = probe_loss_balancing_curve(2.0, &t).unwrap();
        let (imin, min) = curve.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!(*min < curve[999]);
        assert!(t[imin] < 1.0);

        let at_50 = probe_loss_balancing_curve(50.0, &t).unwrap();
        let (imin50, _) = at_50.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!(t[imin50] > t[imin]);
        assert!(t[imin50] > 0.95);

        let no_probe = probe_loss_balancing_curve(2.0, &[0.0]).unwrap();
        assert_abs_diff_eq!(no_probe[0], 3.0, epsilon = 1e-12);
        assert!(probe_loss_balancing_curve(1.0, &t).is_err());
    }

    #[test]
    fn unit_transmission_constraint() {
        assert_abs_diff_eq!(constrain_unit_transmission(1.23, 1.0).unwrap(), 0.77 / 1.23, epsilon = 1e-15);
        assert_abs_diff_eq!(constrain_unit_transmission(1.23, 1.0).unwrap(), 0.626, epsilon = 1e-3);
        assert_eq!(constrain_unit_transmission(1.0, 0.37).unwrap(), 1.0);
        assert_eq!(constrain_unit_transmission(2.0, 1.0).unwrap(), 0.0);
        assert!(matches!(constrain_unit_transmission(3.0, 1.0), Err(LumpedError::Infeasible(_))));
    }

    #[test]
    fn nearby_points_are_worse() {
        let at = |g: f64| {
            let ta = constrain_unit_transmission(g, 1.0).unwrap();
            metrics::db_from_linear(cascade(&cfg(g, ta, 1.0)).unwrap().gemellity).unwrap()
        };
        assert_abs_diff_eq!(at(1.3), -2.72, epsilon = 0.005);
        assert_abs_diff_eq!(at(1.2), -2.75, epsilon = 0.005);
    }

    #[test]
    fn optimum_is_the_golden_point() {
        let opt = optimize_unit_transmission(&OptimizeOptions::default()).unwrap();
        // Analytic optimum on T_b = 1: G = √5 − 1, T_a = (√5 − 1)/2.
        let g_exact = 5f64.sqrt() - 1.0;
        assert_abs_diff_eq!(opt.config.gain, g_exact, epsilon = 2e-4);
        assert_abs_diff_eq!(opt.config.t_a, g_exact / 2.0, epsilon = 2e-4);
        assert_eq!(opt.config.t_b, 1.0);
        assert_abs_diff_eq!(opt.gemellity_db, -2.7748, epsilon = 1e-3);
        assert!(opt.interior_in_gain);
        assert!(opt.boundary_t_b);

        let fine = optimize_unit_transmission(&OptimizeOptions { grid_step: 0.001, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(fine.config.gain, opt.config.gain, epsilon = 1e-3);
        assert_abs_diff_eq!(fine.config.t_a, opt.config.t_a, epsilon = 1e-3);
    }

    #[test]
    fn dense_grid_oracle_agrees() {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=2000 {
            let g = 1.0 + i as f64 * 5e-4;
            for j in 0..=100 {
                let tb = j as f64 / 100.0;
                if let Some(v) = constrained_gemellity(g, tb) {
                    if v < best.0 {
                        best = (v, g, tb);
                    }
                }
            }
        }
        let opt = optimize_unit_transmission(&OptimizeOptions::default()).unwrap();
        assert!(opt.gemellity <= best.0 + 1e-9);
        assert_abs_diff_eq!(opt.config.gain, best.1, epsilon = 1e-3);
        assert_eq!(best.2, 1.0);
    }

    #[test]
    fn sub_unity_region_exists() {
        let mut below = 0;
        for i in 1..=100 {
            for j in 0..=100 {
                if let Some(v) = constrained_gemellity(1.0 + 0.01 * i as f64, 0.01 * j as f64) {
                    if v < 1.0 {
                        below += 1;
                    }
                }
            }
        }
        assert!(below > 100, "only {below} sub-unity grid points");
    }

    #[test]
    fn invalid_steps() {
        for s in [0.0, -0.1, f64::NAN] {
            let o = OptimizeOptions { grid_step: s, ..Default::default() };
            assert!(matches!(optimize_unit_transmission(&o), Err(LumpedError::InvalidStep(_))));
        }
    }
}
