// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Distributed quantum-noise propagation through a gain/loss medium.
//!
//! The medium has unit normalized length and is described by piecewise
//! constant segments. Each segment is cut into thin slabs and every slab is an
//! exact completely positive map, so the composed channel can never drift out
//! of the physical set; the price is a first-order splitting error that
//! [`refine_until_converged`] controls.
//!
//! Segments come in two flavours:
//! - [`Medium::Rates`]: two-mode squeezing at rate `g` followed by intensity
//!   losses `α_a`, `α_b` per unit length (squeeze-then-loss splitting);
//! - [`Medium::Drift`]: an arbitrary real quadrature drift matrix `A`, each
//!   slab being `exp(A dz)` with the minimal noise required by complete
//!   positivity. This is how atomic coupling matrices are propagated.

use std::fs;
use std::path::Path;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{AmplifierParams, CovarianceState, GaussianChannel, GaussianError, LossParams};
use crate::metrics::{self, MetricsError, NoiseFigures};

/// Largest squeeze parameter (or drift norm) accepted in a single slab.
pub const MAX_SLAB_STEP: f64 = 0.5;

/// Best gemellity of the lumped amplifier + output-loss model, in dB.
pub const LUMPED_LIMIT_DB: f64 = -2.8;

const MAX_REFINEMENTS: usize = 20;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("slab too thick: step {step:.3} exceeds {MAX_SLAB_STEP}")]
    StepTooLarge { step: f64 },
    #[error("tolerance must be positive (got {0})")]
    InvalidTolerance(f64),
    #[error("no convergence after {refinements} refinements (last change {last_change:.3e})")]
    NotConverged { refinements: usize, last_change: f64 },
    #[error("invalid search settings: {0}")]
    InvalidSearch(String),
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Two-mode squeezing rate.
    pub g: f64,
    /// Probe intensity loss rate.
    pub alpha_a: f64,
    /// Conjugate intensity loss rate.
    pub alpha_b: f64,
}

impl Rates {
    pub const ZERO: Rates = Rates { g: 0.0, alpha_a: 0.0, alpha_b: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub enum Medium {
    Rates(Rates),
    /// Real quadrature drift per unit normalized length.
    Drift(Matrix4<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub dz: f64,
    pub medium: Medium,
}

/// On-disk form of a rate segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    dz: f64,
    g: f64,
    alpha_a: f64,
    alpha_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRecord {
    segment: Vec<SegmentRecord>,
}

/// Ordered segments spanning the unit-length medium.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabProfile {
    segments: Vec<Segment>,
}

impl SlabProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self, PropagationError> {
        if segments.is_empty() {
            return Err(PropagationError::InvalidProfile("no segments".into()));
        }
        let mut total = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if !(s.dz > 0.0 && s.dz.is_finite()) {
                return Err(PropagationError::InvalidProfile(format!("segment {i}: dz must be positive")));
            }
            total += s.dz;
            match &s.medium {
                Medium::Rates(r) => {
                    for (name, v) in [("g", r.g), ("alpha_a", r.alpha_a), ("alpha_b", r.alpha_b)] {
                        if !(v >= 0.0 && v.is_finite()) {
                            return Err(PropagationError::InvalidProfile(format!(
                                "segment {i}: {name} must be finite and non-negative"
                            )));
                        }
                    }
                }
                Medium::Drift(a) => {
                    if a.iter().any(|x| !x.is_finite()) {
                        return Err(PropagationError::InvalidProfile(format!("segment {i}: non-finite drift")));
                    }
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(PropagationError::InvalidProfile(format!("segment lengths sum to {total}, not 1")));
        }
        Ok(Self { segments })
    }

    /// Equal-length rate segments.
    pub fn piecewise(rates: &[Rates]) -> Result<Self, PropagationError> {
        let dz = 1.0 / rates.len().max(1) as f64;
        Self::new(rates.iter().map(|&r| Segment { dz, medium: Medium::Rates(r) }).collect())
    }

    /// A single segment with a constant drift over the whole medium.
    pub fn uniform_drift(drift: Matrix4<f64>) -> Result<Self, PropagationError> {
        Self::new(vec![Segment { dz: 1.0, medium: Medium::Drift(drift) }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn from_toml_str(s: &str) -> Result<Self, PropagationError> {
        let rec: ProfileRecord = toml::from_str(s).map_err(|e| PropagationError::Parse(e.to_string()))?;
        Self::new(
            rec.segment
                .into_iter()
                .map(|r| Segment {
                    dz: r.dz,
                    medium: Medium::Rates(Rates { g: r.g, alpha_a: r.alpha_a, alpha_b: r.alpha_b }),
                })
                .collect(),
        )
    }

    /// Serializes rate segments; drift segments have no file form.
    pub fn to_toml_string(&self) -> Result<String, PropagationError> {
        let segment = self
            .segments
            .iter()
            .map(|s| match s.medium {
                Medium::Rates(r) => Ok(SegmentRecord { dz: s.dz, g: r.g, alpha_a: r.alpha_a, alpha_b: r.alpha_b }),
                Medium::Drift(_) => Err(PropagationError::Parse("drift segments cannot be written".into())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        toml::to_string(&ProfileRecord { segment }).map_err(|e| PropagationError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PropagationError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PropagationError> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

/// One thin slab: squeeze by `r = g·dz`, then lose `e^{−α dz}` on each beam.
pub fn slab_channel(dz: f64, rates: Rates) -> Result<GaussianChannel, PropagationError> {
    let r = rates.g * dz;
    if !(r < MAX_SLAB_STEP) {
        return Err(PropagationError::StepTooLarge { step: r });
    }
    let squeeze = GaussianChannel::two_mode_squeezer(r);
    let loss = GaussianChannel::loss(LossParams::new((-rates.alpha_a * dz).exp(), (-rates.alpha_b * dz).exp())?);
    Ok(squeeze.then(&loss))
}

/// One thin slab of a general drift: `exp(A dz)` with minimal added noise.
pub fn drift_slab_channel(dz: f64, drift: &Matrix4<f64>) -> Result<GaussianChannel, PropagationError> {
    let step = drift.norm() * dz;
    if !(step < MAX_SLAB_STEP) {
        return Err(PropagationError::StepTooLarge { step });
    }
    Ok(GaussianChannel::with_minimal_noise((drift * dz).exp())?)
}

fn slabs_for(segment: &Segment, slabs_per_unit: usize) -> usize {
    let stiffness = match &segment.medium {
        Medium::Rates(r) => r.g,
        Medium::Drift(a) => a.norm(),
    } * segment.dz;
    let by_resolution = (slabs_per_unit as f64 * segment.dz).ceil() as usize;
    // Stay strictly below the per-slab limit.
    let by_stiffness = (stiffness / (0.9 * MAX_SLAB_STEP)).ceil() as usize;
    by_resolution.max(by_stiffness).max(1)
}

/// The channel of the whole medium at the given resolution, and the number of
/// slabs used.
pub fn medium_channel(profile: &SlabProfile, slabs_per_unit: usize) -> Result<(GaussianChannel, usize), PropagationError> {
    let mut channel = GaussianChannel::identity();
    let mut total = 0;
    for seg in &profile.segments {
        let n = slabs_for(seg, slabs_per_unit);
        let dz = seg.dz / n as f64;
        let slab = match &seg.medium {
            Medium::Rates(r) => slab_channel(dz, *r)?,
            Medium::Drift(a) => drift_slab_channel(dz, a)?,
        };
        channel = channel.then(&slab.power(n));
        total += n;
    }
    Ok((channel, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub state: CovarianceState,
    /// Output probe flux over input probe flux.
    pub g_a: f64,
    /// Output conjugate flux over input probe flux.
    pub g_b: f64,
    pub noise: NoiseFigures,
    pub gemellity: f64,
    pub diff_noise: f64,
    pub slabs: usize,
}

impl PropagationResult {
    pub fn gemellity_db(&self) -> f64 {
        10.0 * self.gemellity.log10()
    }

    pub fn diff_noise_db(&self) -> f64 {
        10.0 * self.diff_noise.log10()
    }

    pub fn total_transmission(&self) -> f64 {
        self.g_a + self.g_b
    }
}

/// Propagates `input` through the medium. Gains are those seen by a coherent
/// probe and are used as the detected power split.
pub fn propagate(
    profile: &SlabProfile,
    input: &CovarianceState,
    slabs_per_unit: usize,
) -> Result<PropagationResult, PropagationError> {
    let (channel, slabs) = medium_channel(profile, slabs_per_unit)?;
    let state = channel.apply(input);
    state.check_uncertainty()?;
    let (g_a, g_b) = channel.flux_gains();
    let noise = metrics::noise_figures(&state, g_a, g_b)?;
    Ok(PropagationResult {
        gemellity: metrics::gemellity(&noise),
        diff_noise: metrics::weighted_difference_noise(&noise)?,
        state,
        g_a,
        g_b,
        noise,
        slabs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub result: PropagationResult,
    pub refinements: usize,
}

/// Doubles the slab count until the gemellity moves by less than `tol`.
pub fn refine_until_converged(
    profile: &SlabProfile,
    input: &CovarianceState,
    tol: f64,
    initial_slabs: usize,
) -> Result<Refined, PropagationError> {
    if !(tol > 0.0) {
        return Err(PropagationError::InvalidTolerance(tol));
    }
    let mut slabs = initial_slabs.max(1);
    let mut previous = propagate(profile, input, slabs)?;
    let mut last_change = f64::INFINITY;
    for refinements in 1..=MAX_REFINEMENTS {
        slabs *= 2;
        let next = propagate(profile, input, slabs)?;
        last_change = (next.gemellity - previous.gemellity).abs();
        if last_change < tol {
            return Ok(Refined { result: next, refinements });
        }
        previous = next;
    }
    Err(PropagationError::NotConverged { refinements: MAX_REFINEMENTS, last_change })
}

/// Feasibility of the unit-transmission constraint `|G_a + G_b − 1| ≤ ε`.
pub fn is_unit_transmission(result: &PropagationResult, epsilon: f64) -> bool {
    (result.total_transmission() - 1.0).abs() <= epsilon
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    /// Number of equal-length segments, 1 to 8.
    pub segments: usize,
    /// Allowed violation of `G_a + G_b = 1`, at most 0.01.
    pub epsilon: f64,
    /// Upper bound on every rate.
    pub max_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Resolution used inside the optimizer.
    pub slabs_per_unit: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            segments: 2,
            epsilon: 0.01,
            max_rate: 20.0,
            restarts: 16,
            seed: 0,
            slabs_per_unit: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub profile: SlabProfile,
    pub result: PropagationResult,
    pub feasible: bool,
    /// Feasible and strictly below [`LUMPED_LIMIT_DB`].
    pub beats_limit: bool,
    pub evaluations: usize,
}

const PENALTY_WEIGHTS: [f64; 6] = [1.0, 10.0, 1e2, 1e3, 1e4, 1e5];
const MIN_IMPROVEMENT: f64 = 1e-7;
const MIN_STEP: f64 = 1e-4;

struct Objective<'a> {
    opts: &'a SearchOptions,
    input: CovarianceState,
    evaluations: usize,
}

impl Objective<'_> {
    fn profile(&self, x: &[f64]) -> SlabProfile {
        let rates: Vec<Rates> = x.chunks(3).map(|c| Rates { g: c[0], alpha_a: c[1], alpha_b: c[2] }).collect();
        SlabProfile::piecewise(&rates).expect("bounded rates form a valid profile")
    }

    fn eval(&mut self, x: &[f64]) -> Option<PropagationResult> {
        self.evaluations += 1;
        propagate(&self.profile(x), &self.input, self.opts.slabs_per_unit)
            .ok()
            .filter(|r| r.gemellity.is_finite() && r.gemellity > 0.0)
    }

    fn penalized(&mut self, x: &[f64], weight: f64) -> f64 {
        match self.eval(x) {
            Some(r) => r.gemellity + weight * (r.total_transmission() - 1.0).powi(2),
            None => f64::INFINITY,
        }
    }
}

/// Compass search with step halving, bounded to `[0, max_rate]`.
fn pattern_search(obj: &mut Objective, x: &mut [f64], weight: f64) {
    let max = obj.opts.max_rate;
    let mut step = max / 4.0;
    let mut fx = obj.penalized(x, weight);
    while step >= MIN_STEP {
        let mut improved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let old = x[i];
                let trial = (old + sign * step).clamp(0.0, max);
                if trial == old {
                    continue;
                }
                x[i] = trial;
                let ft = obj.penalized(x, weight);
                if ft < fx - MIN_IMPROVEMENT {
                    fx = ft;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
}

/// Searches piecewise-constant profiles for a unit-transmission medium whose
/// gemellity beats the lumped amplifier + loss limit.
///
/// Restart 0 starts from the empty medium; the others from seeded uniform
/// draws. Restarts run in parallel and the best is picked by restart index on
/// ties, so the outcome depends only on the options.
pub fn search_beyond_lumped_limit(opts: &SearchOptions) -> Result<SearchOutcome, PropagationError> {
    if !(1..=8).contains(&opts.segments) {
        return Err(PropagationError::InvalidSearch(format!("segments must be 1..=8 (got {})", opts.segments)));
    }
    if !(0.0..=0.01).contains(&opts.epsilon) {
        return Err(PropagationError::InvalidSearch(format!("epsilon must be in [0, 0.01] (got {})", opts.epsilon)));
    }
    if !(opts.max_rate > 0.0 && opts.max_rate.is_finite()) {
        return Err(PropagationError::InvalidSearch(format!("max_rate must be positive (got {})", opts.max_rate)));
    }
    if opts.restarts == 0 || opts.slabs_per_unit == 0 {
        return Err(PropagationError::InvalidSearch("restarts and slabs_per_unit must be positive".into()));
    }
    let dim = 3 * opts.segments;
    let input = CovarianceState::coherent(Complex64::new(1.0, 0.0));

    let runs: Vec<(Vec<f64>, usize)> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; dim];
            if k > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                for v in x.iter_mut() {
                    *v = rng.random_range(0.0..=opts.max_rate);
                }
            }
            let mut obj = Objective { opts, input: input.clone(), evaluations: 0 };
            for w in PENALTY_WEIGHTS {
                pattern_search(&mut obj, &mut x, w);
            }
            (x, obj.evaluations)
        })
        .collect();

    let evaluations = runs.iter().map(|r| r.1).sum();
    let mut obj = Objective { opts, input: input.clone(), evaluations: 0 };
    let mut best: Option<(bool, f64, SlabProfile, PropagationResult)> = None;
    for (x, _) in &runs {
        let Some(r) = obj.eval(x) else { continue };
        let feasible = is_unit_transmission(&r, opts.epsilon);
        let better = match &best {
            None => true,
            Some((bf, bg, _, _)) => (feasible && !bf) || (feasible == *bf && r.gemellity < *bg),
        };
        if better {
            best = Some((feasible, r.gemellity, obj.profile(x), r));
        }
    }
    // The empty medium is always evaluable, so `best` is set.
    let (_, _, profile, coarse) = best.expect("restart 0 is feasible");
    let result = match refine_until_converged(&profile, &input, 1e-9, opts.slabs_per_unit) {
        Ok(refined) => refined.result,
        Err(PropagationError::NotConverged { .. }) => coarse,
        Err(e) => return Err(e),
    };
    let feasible = is_unit_transmission(&result, opts.epsilon);
    let beats_limit = feasible && result.gemellity_db() < LUMPED_LIMIT_DB;
    Ok(SearchOutcome { profile, result, feasible, beats_limit, evaluations })
}

/// Fixed CSV columns for propagation results.
pub const RESULT_CSV_HEADER: [&str; 5] = ["profile_id", "G_a", "G_b", "gemellity_dB", "diff_noise_dB"];

pub fn results_csv(rows: &[(String, PropagationResult)]) -> Result<String, PropagationError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PropagationError::Parse(e.to_string());
    w.write_record(RESULT_CSV_HEADER).map_err(io)?;
    for (id, r) in rows {
        w.write_record([
            id.clone(),
            format!("{:.12e}", r.g_a),
            format!("{:.12e}", r.g_b),
            format!("{:.9}", r.gemellity_db()),
            format!("{:.9}", r.diff_noise_db()),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| PropagationError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Squeezing rate that, held over the whole unit length, realizes an ideal
/// amplifier of the given gain.
pub fn amplifier_rate(gain: f64) -> Result<f64, PropagationError> {
    Ok(AmplifierParams::new(gain)?.gain().sqrt().acosh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lumped::{self, LumpedConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn probe() -> CovarianceState {
        CovarianceState::coherent(Complex64::new(1.0, 0.0))
    }

    fn rates(g: f64, alpha_a: f64, alpha_b: f64) -> Rates {
        Rates { g, alpha_a, alpha_b }
    }

    /// Gain segment then probe-loss segment reproducing a lumped configuration.
    fn lumped_profile(g: f64, ta: f64, tb: f64) -> SlabProfile {
        SlabProfile::piecewise(&[
            rates(2.0 * amplifier_rate(g).unwrap(), 0.0, 0.0),
            rates(0.0, -2.0 * ta.ln(), -2.0 * tb.ln()),
        ])
        .unwrap()
    }

    #[test]
    fn slab_limits() {
        assert_eq!(slab_channel(0.1, Rates::ZERO).unwrap(), GaussianChannel::identity());
        let c = slab_channel(0.1, rates(0.0, 2.0, 3.0)).unwrap();
        let l = GaussianChannel::loss(LossParams::new((-0.2f64).exp(), (-0.3f64).exp()).unwrap());
        assert_abs_diff_eq!(*c.transfer(), *l.transfer(), epsilon = 1e-15);
        assert_abs_diff_eq!(*c.added_noise(), *l.added_noise(), epsilon = 1e-15);
        assert!(matches!(slab_channel(0.1, rates(6.0, 0.0, 0.0)), Err(PropagationError::StepTooLarge { .. })));
    }

    #[test]
    fn gain_slabs_converge_to_amplifier() {
        let g = 3.0;
        let n = 1000;
        let r = amplifier_rate(g).unwrap();
        let slab = slab_channel(1.0 / n as f64, rates(r, 0.0, 0.0)).unwrap();
        let mut seq = GaussianChannel::identity();
        for _ in 0..n {
            seq = seq.then(&slab);
        }
        let amp = GaussianChannel::amplifier(AmplifierParams::new(g).unwrap());
        assert_abs_diff_eq!(*seq.transfer(), *amp.transfer(), epsilon = 1e-8);
        assert!(seq.added_noise().amax() < 1e-8);
    }

    #[test]
    fn empty_medium_is_transparent() {
        let p = SlabProfile::piecewise(&[Rates::ZERO]).unwrap();
        let r = propagate(&p, &probe(), 100).unwrap();
        assert_eq!(r.state, probe());
        assert_eq!((r.g_a, r.g_b), (1.0, 0.0));
        assert_eq!(r.gemellity, 1.0);
        assert!(is_unit_transmission(&r, 0.0));
    }

    #[test]
    fn lumped_configuration_reproduced() {
        let (g, ta) = (1.23, 0.626);
        let r = propagate(&lumped_profile(g, ta, 1.0), &probe(), 10_000).unwrap();
        let l = lumped::cascade(&LumpedConfig::new(g, ta, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(r.gemellity, l.gemellity, epsilon = 1e-6);
        assert_abs_diff_eq!(r.noise.f_a, l.noise.f_a, epsilon = 1e-6);
        assert_abs_diff_eq!(r.noise.c_ab, l.noise.c_ab, epsilon = 1e-6);
        assert_abs_diff_eq!(r.diff_noise, l.diff_noise, epsilon = 1e-6);
        assert_abs_diff_eq!(r.total_transmission(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn ordering_matters() {
        let r = 2.0 * amplifier_rate(2.0).unwrap();
        let a = 2.0 * 3f64.ln();
        let gain_first = SlabProfile::piecewise(&[rates(r, 0.0, 0.0), rates(0.0, a, 0.0)]).unwrap();
        let loss_first = SlabProfile::piecewise(&[rates(0.0, a, 0.0), rates(r, 0.0, 0.0)]).unwrap();
        let g1 = propagate(&gain_first, &probe(), 64).unwrap();
        let g2 = propagate(&loss_first, &probe(), 64).unwrap();
        assert!((g1.gemellity - g2.gemellity).abs() > 0.1);
        // Attenuating the coherent input first leaves an ideal amplifier.
        assert_abs_diff_eq!(g2.gemellity, 3.0 - 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(g2.total_transmission(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn co_located_gain_and_loss_differ_from_lumped() {
        let (g, ta) = (1.23f64, 0.626f64);
        let co = SlabProfile::piecewise(&[rates(amplifier_rate(g).unwrap(), -ta.ln(), 0.0)]).unwrap();
        let co = refine_until_converged(&co, &probe(), 1e-8, 64).unwrap().result;
        let lumped = propagate(&lumped_profile(g, ta, 1.0), &probe(), 64).unwrap();
        assert!((co.gemellity - lumped.gemellity).abs() > 1e-3);
    }

    #[test]
    fn gain_only_conserves_flux_difference() {
        for r in [0.1, 0.7, 2.0, 4.0] {
            let p = SlabProfile::piecewise(&[rates(r, 0.0, 0.0), rates(r / 3.0, 0.0, 0.0)]).unwrap();
            let res = propagate(&p, &probe(), 300).unwrap();
            assert_abs_diff_eq!(res.g_a - res.g_b, 1.0, epsilon = 1e-12 * res.g_a);
        }
    }

    #[test]
    fn refinement() {
        let exact = lumped_profile(2.0, 0.4, 0.9);
        let r = refine_until_converged(&exact, &probe(), 1e-10, 16).unwrap();
        assert!(r.refinements <= 2);

        let smooth = SlabProfile::piecewise(&[rates(1.0, 0.5, 0.2), rates(0.3, 1.0, 0.0), rates(0.8, 0.1, 0.4)]).unwrap();
        let r = refine_until_converged(&smooth, &probe(), 1e-4, 8).unwrap();
        assert!(r.refinements >= 1);
        assert!(matches!(
            refine_until_converged(&smooth, &probe(), 0.0, 8),
            Err(PropagationError::InvalidTolerance(_))
        ));
    }

    #[test]
    fn first_order_convergence() {
        let p = SlabProfile::piecewise(&[rates(1.5, 2.0, 0.5)]).unwrap();
        let reference = propagate(&p, &probe(), 1 << 22).unwrap().gemellity;
        let err = |n| (propagate(&p, &probe(), n).unwrap().gemellity - reference).abs();
        for n in [64, 128, 256] {
            let ratio = err(n) / err(2 * n);
            assert!((1.8..2.2).contains(&ratio), "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn profile_validation() {
        assert!(SlabProfile::new(vec![]).is_err());
        let bad_sum = vec![Segment { dz: 0.5, medium: Medium::Rates(Rates::ZERO) }];
        assert!(SlabProfile::new(bad_sum).is_err());
        assert!(SlabProfile::piecewise(&[rates(-1.0, 0.0, 0.0)]).is_err());
        assert!(SlabProfile::piecewise(&[rates(f64::INFINITY, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn profile_file_round_trip() {
        let p = SlabProfile::piecewise(&[rates(1.0, 0.5, 0.0), rates(0.0, 0.25, 2.0)]).unwrap();
        let text = p.to_toml_string().unwrap();
        assert!(text.contains("[[segment]]"));
        assert_eq!(SlabProfile::from_toml_str(&text).unwrap(), p);

        let typo = "[[segment]]\ndz = 1.0\ng = 1.0\nalpha_a = 0.0\nalpha_c = 0.0\n";
        let err = SlabProfile::from_toml_str(typo).unwrap_err().to_string();
        assert!(err.contains("alpha_c"), "{err}");
        let drift = SlabProfile::uniform_drift(Matrix4::zeros()).unwrap();
        assert!(drift.to_toml_string().is_err());
    }

    #[test]
    fn csv_rows() {
        let r = propagate(&lumped_profile(1.5, 0.7, 1.0), &probe(), 32).unwrap();
        let text = results_csv(&[("p0".into(), r)]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "profile_id,G_a,G_b,gemellity_dB,diff_noise_dB");
        assert!(lines.next().unwrap().starts_with("p0,"));
    }

    #[test]
    fn search_settings_validated() {
        let bad = [
            SearchOptions { segments: 0, ..Default::default() },
            SearchOptions { segments: 9, ..Default::default() },
            SearchOptions { epsilon: 0.02, ..Default::default() },
            SearchOptions { max_rate: 0.0, ..Default::default() },
        ];
        for o in bad {
            assert!(matches!(search_beyond_lumped_limit(&o), Err(PropagationError::InvalidSearch(_))));
        }
    }

    #[test]
    fn single_segment_search_runs() {
        let o = SearchOptions { segments: 1, restarts: 2, epsilon: 0.0, slabs_per_unit: 64, ..Default::default() };
        let out = search_beyond_lumped_limit(&o).unwrap();
        assert!(out.result.gemellity <= 1.0 + 1e-12);
        assert!(out.result.state.check_uncertainty().is_ok());
    }

    proptest! {
        #[test]
        fn random_profiles_stay_physical(
            raw in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 1..5),
        ) {
            let rs: Vec<Rates> = raw.iter().map(|&(g, a, b)| rates(g, a, b)).collect();
            let p = SlabProfile::piecewise(&rs).unwrap();
            let r = propagate(&p, &probe(), 64).unwrap();
            prop_assert!(r.state.uncertainty_min_eigenvalue() >= -1e-9 * r.state.cov().amax().max(1.0));
        }

        #[test]
        fn slab_products_associate(g in 0.0f64..4.0, a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let c1 = slab_channel(0.1, rates(g, a, b)).unwrap();
            let c2 = slab_channel(0.05, rates(g / 2.0, b, a)).unwrap();
            let c3 = slab_channel(0.1, rates(g, 0.0, a)).unwrap();
            let left = c1.then(&c2).then(&c3);
            let right = c1.then(&c2.then(&c3));
            let scale = left.transfer().amax().max(1.0);
            prop_assert!((left.transfer() - right.transfer()).amax() < 1e-12 * scale);
            prop_assert!((left.added_noise() - right.added_noise()).amax() < 1e-12 * scale * scale);
        }
    }
}
