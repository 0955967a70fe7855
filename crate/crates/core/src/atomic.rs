// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Double-lambda atomic response.
//!
//! Four levels, indexed 0..4: ground states |1⟩ and |2⟩ split by the
//! hyperfine frequency, and excited states |e⟩ and |e'⟩ sharing one decay
//! rate Γ. The pump drives |2⟩→|e⟩ at detuning Δ and |1⟩→|e'⟩ at Δ + hf; the
//! probe sits on |1⟩→|e⟩ and the conjugate on |2⟩→|e'⟩. Δ > 0 puts the pump
//! below the |2⟩→|e⟩ resonance. Each excited state decays equally into both
//! ground states and the ground states exchange population at rate γ_g.
//!
//! All rates are angular frequencies in rad/s. Internally they are divided by
//! Γ so the Liouvillian is O(1) to O(hf/Γ).

use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4, SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{CovarianceState, GaussianError};
use crate::metrics::{self, MetricsError, NoiseFigures};
use crate::propagation::{self, PropagationError, SlabProfile};

type C = Complex64;
type Op = Matrix4<C>;
type Super = SMatrix<C, 16, 16>;
type SuperVec = SVector<C, 16>;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Rb D1 excited-state decay rate over 2π, in MHz.
pub const RB_GAMMA_MHZ: f64 = 5.75;
/// ⁸⁵Rb ground-state hyperfine splitting over 2π, in MHz.
pub const RB85_HYPERFINE_MHZ: f64 = 3036.0;
/// Default ground-state decoherence over 2π, in kHz.
pub const DEFAULT_GAMMA_G_KHZ: f64 = 10.0;

/// Slab resolution used when propagating atomic coupling matrices.
pub const DEFAULT_SLABS: usize = 4096;

const RESIDUAL_TOL: f64 = 1e-10;
const NULLSPACE_TOL: f64 = 1e-10;
const SUM_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AtomicError {
    #[error("invalid atomic parameter: {0}")]
    InvalidParams(String),
    #[error("steady state is not unique ({dim}-dimensional nullspace)")]
    DegenerateSteadyState { dim: usize },
    #[error("steady-state residual {0:.3e} too large")]
    Residual(f64),
    #[error("singular sideband response at delta/2pi = {delta_mhz:.6} MHz")]
    SingularResponse { delta_mhz: f64 },
    #[error("coupling matrix at a nonzero sideband has no real quadrature drift")]
    NotQuasiStatic,
    #[error("no G_a + G_b = 1 crossing between {lo_mhz:.3} and {hi_mhz:.3} MHz")]
    NoCrossing { lo_mhz: f64, hi_mhz: f64 },
    #[error("temperature {0} C outside 20..=200 C")]
    TemperatureOutOfRange(f64),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("parameter file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter file: {0}")]
    Parse(String),
}

/// Converts a frequency in MHz (f, not 2πf) to rad/s.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz * 1e6
}

pub fn angular_to_mhz(w: f64) -> f64 {
    w / (TWO_PI * 1e6)
}

/// Double-lambda parameters. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomicParams {
    /// One-photon detuning Δ.
    pub detuning: f64,
    /// Two-photon detuning δ.
    pub two_photon: f64,
    /// Pump Rabi frequency Ω.
    pub rabi: f64,
    /// Excited-state decay Γ.
    pub gamma: f64,
    /// Ground-state decoherence γ_g.
    pub gamma_g: f64,
    /// Optical depth 𝒩αL.
    pub depth: f64,
    /// Ground-state hyperfine splitting.
    pub hyperfine: f64,
}

impl AtomicParams {
    /// Rb D1 line with the given detunings and pump, all in MHz.
    pub fn rb85_mhz(detuning: f64, two_photon: f64, rabi: f64, depth: f64) -> Self {
        Self {
            detuning: mhz_to_angular(detuning),
            two_photon: mhz_to_angular(two_photon),
            rabi: mhz_to_angular(rabi),
            gamma: mhz_to_angular(RB_GAMMA_MHZ),
            gamma_g: mhz_to_angular(DEFAULT_GAMMA_G_KHZ * 1e-3),
            depth,
            hyperfine: mhz_to_angular(RB85_HYPERFINE_MHZ),
        }
    }

    pub fn with_two_photon(self, two_photon: f64) -> Self {
        Self { two_photon, ..self }
    }

    pub fn validate(&self) -> Result<(), AtomicError> {
        let fields = [
            ("Delta", self.detuning),
            ("delta", self.two_photon),
            ("Omega", self.rabi),
            ("Gamma", self.gamma),
            ("gamma_g", self.gamma_g),
            ("depth", self.depth),
            ("hyperfine", self.hyperfine),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(AtomicError::InvalidParams(format!("{name} is not finite")));
        }
        if !(self.gamma > 0.0) {
            return Err(AtomicError::InvalidParams("Gamma must be positive".into()));
        }
        for (name, v) in [("gamma_g", self.gamma_g), ("depth", self.depth), ("Omega", self.rabi)] {
            if v < 0.0 {
                return Err(AtomicError::InvalidParams(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Human-facing parameter file: frequencies over 2π in MHz (γ_g in kHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicConfig {
    #[serde(rename = "Delta_MHz")]
    pub delta_big_mhz: f64,
    #[serde(rename = "delta_MHz", default)]
    pub delta_mhz: f64,
    #[serde(rename = "Omega_MHz")]
    pub omega_mhz: f64,
    #[serde(rename = "Gamma_MHz", default = "default_gamma")]
    pub gamma_mhz: f64,
    #[serde(rename = "gamma_g_kHz", default = "default_gamma_g")]
    pub gamma_g_khz: f64,
    pub depth: f64,
    #[serde(rename = "hyperfine_MHz", default = "default_hyperfine")]
    pub hyperfine_mhz: f64,
}

fn default_gamma() -> f64 {
    RB_GAMMA_MHZ
}

fn default_gamma_g() -> f64 {
    DEFAULT_GAMMA_G_KHZ
}

fn default_hyperfine() -> f64 {
    RB85_HYPERFINE_MHZ
}

impl AtomicConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, AtomicError> {
        toml::from_str(s).map_err(|e| AtomicError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AtomicError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// The one place where configured MHz become rad/s.
    pub fn to_params(&self) -> Result<AtomicParams, AtomicError> {
        let p = AtomicParams {
            detuning: mhz_to_angular(self.delta_big_mhz),
            two_photon: mhz_to_angular(self.delta_mhz),
            rabi: mhz_to_angular(self.omega_mhz),
            gamma: mhz_to_angular(self.gamma_mhz),
            gamma_g: mhz_to_angular(self.gamma_g_khz * 1e-3),
            depth: self.depth,
            hyperfine: mhz_to_angular(self.hyperfine_mhz),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Saturated rubidium vapor density in atoms/cm³ at `t_celsius`.
pub fn vapor_density(t_celsius: f64) -> Result<f64, AtomicError> {
    if !(20.0..=200.0).contains(&t_celsius) {
        return Err(AtomicError::TemperatureOutOfRange(t_celsius));
    }
    const K_B: f64 = 1.380_649e-23;
    const PA_PER_TORR: f64 = 133.322_368;
    const MELTING_K: f64 = 312.46;
    let t = t_celsius + 273.15;
    let log10_torr = if t < MELTING_K {
        2.881 + 4.857 - 4215.0 / t
    } else {
        2.881 + 4.312 - 4040.0 / t
    };
    let pascal = 10f64.powf(log10_torr) * PA_PER_TORR;
    Ok(pascal / (K_B * t) * 1e-6)
}

/// Optical depth 𝒩σL from density (cm⁻³), cross-section (cm²) and length (cm).
pub fn optical_depth(density: f64, sigma: f64, length: f64) -> Result<f64, AtomicError> {
    for (name, v) in [("density", density), ("sigma", sigma), ("length", length)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(AtomicError::InvalidParams(format!("{name} must be finite and non-negative")));
        }
    }
    Ok(density * sigma * length)
}

fn ket_bra(i: usize, j: usize) -> Op {
    let mut m = Op::zeros();
    m[(i, j)] = C::new(1.0, 0.0);
    m
}

/// Row-major vectorization: `v[4i + j] = ρ_ij`.
fn vectorize(op: &Op) -> SuperVec {
    SuperVec::from_fn(|k, _| op[(k / 4, k % 4)])
}

fn unvectorize(v: &SuperVec) -> Op {
    Op::from_fn(|i, j| v[4 * i + j])
}

fn trace_row() -> SuperVec {
    vectorize(&Op::identity())
}

/// Parameters divided by Γ.
struct Scaled {
    detuning: f64,
    two_photon: f64,
    rabi: f64,
    gamma_g: f64,
    hyperfine: f64,
}

impl Scaled {
    fn new(p: &AtomicParams) -> Self {
        Self {
            detuning: p.detuning / p.gamma,
            two_photon: p.two_photon / p.gamma,
            rabi: p.rabi / p.gamma,
            gamma_g: p.gamma_g / p.gamma,
            hyperfine: p.hyperfine / p.gamma,
        }
    }

    fn hamiltonian(&self) -> Op {
        let d = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            0.0,
            -self.two_photon,
            self.detuning - self.two_photon,
            self.detuning + self.hyperfine,
        ))
        .map(|x| C::new(x, 0.0));
        let pump = ket_bra(2, 1) + ket_bra(1, 2) + ket_bra(3, 0) + ket_bra(0, 3);
        d - pump * C::new(self.rabi / 2.0, 0.0)
    }

    fn jumps(&self) -> Vec<Op> {
        let half = C::new(0.5f64.sqrt(), 0.0);
        let g = C::new(self.gamma_g.sqrt(), 0.0);
        vec![
            ket_bra(0, 2) * half,
            ket_bra(1, 2) * half,
            ket_bra(0, 3) * half,
            ket_bra(1, 3) * half,
            ket_bra(0, 1) * g,
            ket_bra(1, 0) * g,
        ]
    }

    fn liouvillian(&self) -> Super {
        let id = Op::identity();
        let h = self.hamiltonian();
        let i = C::new(0.0, 1.0);
        let mut l = (h.kronecker(&id) - id.kronecker(&h.transpose())) * (-i);
        for c in self.jumps() {
            let cdc = c.adjoint() * c;
            l += c.kronecker(&c.conjugate())
                - cdc.kronecker(&id) * C::new(0.5, 0.0)
                - id.kronecker(&cdc.transpose()) * C::new(0.5, 0.0);
        }
        l
    }
}

/// Pump-dressed steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub rho: Matrix4<C>,
    /// ‖𝓛ρ‖ in units of Γ.
    pub residual: f64,
}

impl SteadyState {
    pub fn trace(&self) -> C {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.rho - self.rho.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.rho + self.rho.adjoint()) * C::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn excited_population(&self) -> f64 {
        self.rho[(2, 2)].re + self.rho[(3, 3)].re
    }
}

fn solve_steady(l: &Super) -> Result<SteadyState, AtomicError> {
    let sv = l.singular_values();
    let scale = sv.max();
    let dim = sv.iter().filter(|&&s| s <= NULLSPACE_TOL * scale).count();
    if dim > 1 {
        return Err(AtomicError::DegenerateSteadyState { dim });
    }
    let mut a = *l;
    a.set_row(0, &trace_row().transpose());
    let mut b = SuperVec::zeros();
    b[0] = C::new(1.0, 0.0);
    let x = a.lu().solve(&b).ok_or(AtomicError::DegenerateSteadyState { dim: 2 })?;
    let residual = (l * x).norm();
    if !(residual < RESIDUAL_TOL) {
        return Err(AtomicError::Residual(residual));
    }
    Ok(SteadyState { rho: unvectorize(&x), residual })
}

pub fn steady_state(p: &AtomicParams) -> Result<SteadyState, AtomicError> {
    p.validate()?;
    solve_steady(&Scaled::new(p).liouvillian())
}

/// Local propagation generator on (δa, δa†, δb, δb†) per unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// Analysis sideband offset (rad/s).
    pub omega: f64,
    pub m: Matrix4<C>,
}

impl CouplingMatrix {
    /// The (a, b†) block: `d(a, b†)/dz = M (a, b†)`.
    pub fn pair_generator(&self) -> Matrix2<C> {
        Matrix2::new(self.m[(0, 0)], self.m[(0, 3)], self.m[(3, 0)], self.m[(3, 3)])
    }

    /// Real drift of (X_a, Y_a, X_b, Y_b). Only defined at zero offset.
    pub fn quadrature_drift(&self) -> Result<Matrix4<f64>, AtomicError> {
        if self.omega != 0.0 {
            return Err(AtomicError::NotQuasiStatic);
        }
        Ok(crate::gaussian::pair_transfer(&self.pair_generator()))
    }

    /// `P M* P` with P swapping each operator with its adjoint. Equals the
    /// matrix at the opposite offset.
    pub fn conjugate_partner(&self) -> Matrix4<C> {
        const SWAP: [usize; 4] = [1, 0, 3, 2];
        Matrix4::from_fn(|i, j| self.m[(SWAP[i], SWAP[j])].conj())
    }
}

/// Pair generator M2(ω) from the steady state and its Liouvillian.
fn pair_response(p: &AtomicParams, l: &Super, rho: &Op, omega: f64) -> Result<Matrix2<C>, AtomicError> {
    let i = C::new(0.0, 1.0);
    let mut a = l + Super::identity() * (i * (omega / p.gamma));
    a.set_row(0, &trace_row().transpose());
    let lu = a.lu();
    let solve = |v: Op| -> Result<Op, AtomicError> {
        let mut b = vectorize(&((v * rho - rho * v) * i));
        b[0] = C::new(0.0, 0.0);
        lu.solve(&b)
            .filter(|x| x.iter().all(|z| z.is_finite()))
            .map(|x| unvectorize(&x))
            .ok_or(AtomicError::SingularResponse { delta_mhz: angular_to_mhz(p.two_photon) })
    };
    // Probe drives |e⟩⟨1|, the conjugate's conjugate drives |2⟩⟨e'|.
    let half = C::new(-0.5, 0.0);
    let xa = solve(ket_bra(2, 0) * half)?;
    let xb = solve(ket_bra(1, 3) * half)?;
    let k = C::new(p.depth / 2.0, 0.0);
    Ok(Matrix2::new(i * xa[(2, 0)], i * xb[(2, 0)], -i * xa[(1, 3)], -i * xb[(1, 3)]) * k)
}

/// Linear response of the dressed medium to weak probe and conjugate
/// sidebands at offset `omega`, scaled by the optical depth.
pub fn sideband_response(p: &AtomicParams, omega: f64) -> Result<CouplingMatrix, AtomicError> {
    p.validate()?;
    let l = Scaled::new(p).liouvillian();
    let rho = solve_steady(&l)?.rho;
    let m = pair_response(p, &l, &rho, omega)?;
    let n = if omega == 0.0 { m } else { pair_response(p, &l, &rho, -omega)? };
    let n = n.map(|z| z.conj());
    let mut full = Matrix4::zeros();
    full[(0, 0)] = m[(0, 0)];
    full[(0, 3)] = m[(0, 1)];
    full[(3, 0)] = m[(1, 0)];
    full[(3, 3)] = m[(1, 1)];
    full[(1, 1)] = n[(0, 0)];
    full[(1, 2)] = n[(0, 1)];
    full[(2, 1)] = n[(1, 0)];
    full[(2, 2)] = n[(1, 1)];
    Ok(CouplingMatrix { omega, m: full })
}

/// Outputs at one two-photon detuning for a coherent probe input.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningPoint {
    pub delta: f64,
    pub g_a: f64,
    pub g_b: f64,
    /// `None` when one beam carries no power.
    pub noise: Option<NoiseFigures>,
    pub gemellity: Option<f64>,
}

impl DetuningPoint {
    pub fn gemellity_db(&self) -> Option<f64> {
        self.gemellity.map(|g| 10.0 * g.log10())
    }
}

/// Propagates a coherent probe through the medium at detuning `p.two_photon`.
pub fn evaluate(p: &AtomicParams, slabs: usize) -> Result<DetuningPoint, AtomicError> {
    let coupling = sideband_response(p, 0.0)?;
    let profile = SlabProfile::uniform_drift(coupling.quadrature_drift()?)?;
    let (channel, _) = propagation::medium_channel(&profile, slabs)?;
    let state = channel.apply(&CovarianceState::coherent(C::new(1.0, 0.0)));
    state.check_uncertainty()?;
    let (g_a, g_b) = channel.flux_gains();
    let noise = metrics::noise_figures(&state, g_a, g_b).ok();
    Ok(DetuningPoint {
        delta: p.two_photon,
        g_a,
        g_b,
        gemellity: noise.as_ref().map(metrics::gemellity),
        noise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainCurve {
    pub points: Vec<DetuningPoint>,
}

/// CSV columns of a gain curve.
pub const GAIN_CSV_HEADER: [&str; 5] = ["delta_MHz", "G_a", "G_b", "sum", "gemellity_dB"];

impl GainCurve {
    pub fn deltas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta).collect()
    }

    pub fn g_a(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.g_a).collect()
    }

    pub fn g_b(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.g_b).collect()
    }

    /// Blank gemellity where it is undefined.
    pub fn to_csv(&self) -> Result<String, AtomicError> {
        let err = |e: csv::Error| AtomicError::Parse(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(GAIN_CSV_HEADER).map_err(err)?;
        for p in &self.points {
            w.write_record([
                format!("{:.6}", angular_to_mhz(p.delta)),
                format!("{:.9e}", p.g_a),
                format!("{:.9e}", p.g_b),
                format!("{:.9e}", p.g_a + p.g_b),
                p.gemellity_db().map(|g| format!("{g:.6}")).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| AtomicError::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Gains over a detuning grid (rad/s); points are computed in parallel and
/// returned in grid order.
pub fn gain_curves(p: &AtomicParams, deltas: &[f64], slabs: usize) -> Result<GainCurve, AtomicError> {
    p.validate()?;
    let points = deltas
        .par_iter()
        .map(|&d| evaluate(&p.with_two_photon(d), slabs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GainCurve { points })
}

/// `n` evenly spaced detunings from `lo` to `hi` inclusive.
pub fn detuning_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Location and depth of the deepest probe dip in `[lo, hi]`.
pub fn raman_dip(p: &AtomicParams, lo: f64, hi: f64, slabs: usize) -> Result<DetuningPoint, AtomicError> {
    let curve = gain_curves(p, &detuning_grid(lo, hi, 121), slabs)?;
    let k = (0..curve.points.len())
        .min_by(|&i, &j| curve.points[i].g_a.total_cmp(&curve.points[j].g_a))
        .ok_or_else(|| AtomicError::InvalidParams("empty detuning window".into()))?;
    let step = (hi - lo) / 120.0;
    let (mut a, mut b) = ((curve.points[k].delta - step).max(lo), (curve.points[k].delta + step).min(hi));
    // Golden-section refinement of the bracketing cell pair.
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let g_a = |d: f64| evaluate(&p.with_two_photon(d), slabs).map(|r| r.g_a);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (g_a(c)?, g_a(d)?);
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = g_a(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = g_a(d)?;
        }
    }
    evaluate(&p.with_two_photon((a + b) / 2.0), slabs)
}

/// Two-photon detuning where the medium neither amplifies nor attenuates in
/// total (`G_a + G_b = 1`). Among several crossings, the one with the best
/// gemellity is returned.
pub fn find_beam_splitter_point(p: &AtomicParams, lo: f64, hi: f64, slabs: usize) -> Result<DetuningPoint, AtomicError> {
    if !(lo < hi) {
        return Err(AtomicError::InvalidParams("window must have lo < hi".into()));
    }
    let no_crossing = AtomicError::NoCrossing { lo_mhz: angular_to_mhz(lo), hi_mhz: angular_to_mhz(hi) };
    let curve = gain_curves(p, &detuning_grid(lo, hi, 121), slabs)?;
    let excess = |r: &DetuningPoint| r.g_a + r.g_b - 1.0;
    let mut crossings = Vec::new();
    for w in curve.points.windows(2) {
        let (f0, f1) = (excess(&w[0]), excess(&w[1]));
        // Zero counts as non-negative, so a flat G_a + G_b = 1 has no crossing.
        if (f0 < 0.0) == (f1 < 0.0) {
            continue;
        }
        let (mut a, mut fa) = (w[0].delta, f0);
        let mut b = w[1].delta;
        let mut mid = w[0].clone();
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            mid = evaluate(&p.with_two_photon(m), slabs)?;
            let fm = excess(&mid);
            if fm.abs() < 1e-12 || (b - a) < 1e-9 * p.gamma {
                break;
            }
            if (fm < 0.0) == (fa < 0.0) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        crossings.push(mid);
    }
    crossings
        .into_iter()
        .filter(|r| excess(r).abs() < SUM_TOL && r.gemellity.is_some())
        .min_by(|x, y| x.gemellity.unwrap().total_cmp(&y.gemellity.unwrap()))
        .ok_or(no_crossing)
}
