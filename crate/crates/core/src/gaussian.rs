// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Two-mode Gaussian state algebra.
//!
//! States are described by a 4×4 covariance matrix over the quadratures
//! `(X_a, Y_a, X_b, Y_b)` normalized so that vacuum has unit variance, and by
//! the complex mean-field amplitudes of the probe (`a`) and conjugate (`b`)
//! modes. With `X = a + a†` a coherent amplitude `α` has `⟨X⟩ = 2 Re α` and a
//! photon flux `|α|²`.
//!
//! Channels act as `V → T V Tᵀ + N` on covariances and `d → T d` on the
//! quadrature mean vector. Complete positivity is
//! `N + i(Ω − T Ω Tᵀ) ≥ 0`.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Tolerance on the smallest eigenvalue of the uncertainty / CP matrices.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// Tolerance on the symmetry of covariance and noise matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussianError {
    #[error("amplifier gain must be >= 1 (got {0})")]
    GainBelowUnity(f64),
    #[error("transmission must lie in [0, 1] (got {0})")]
    TransmissionOutOfRange(f64),
    #[error("matrix is not symmetric (max deviation {0:.3e})")]
    NotSymmetric(f64),
    #[error("state violates the uncertainty relation (min eigenvalue {0:.3e})")]
    Unphysical(f64),
    #[error("channel is not completely positive (min eigenvalue {0:.3e})")]
    NotCompletelyPositive(f64),
    #[error("non-finite matrix entry")]
    NonFinite,
}

/// Symplectic form with one 2×2 rotation block per mode.
pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Smallest eigenvalue of the Hermitian matrix `sym + i·antisym`.
pub fn min_eigenvalue_hermitian(sym: &Matrix4<f64>, antisym: &Matrix4<f64>) -> f64 {
    let h = Matrix4::from_fn(|r, c| Complex64::new(sym[(r, c)], antisym[(r, c)]));
    h.symmetric_eigenvalues().min()
}

/// Smallest eigenvalue of `cov + iΩ`; non-negative for physical states.
pub fn uncertainty_min_eigenvalue(cov: &Matrix4<f64>) -> f64 {
    min_eigenvalue_hermitian(cov, &symplectic_form())
}

fn asymmetry(m: &Matrix4<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Real 4×4 quadrature matrix of the phase-insensitive map
/// `a → A a + B b†`, `b† → C a + D b†`, with the complex 2×2 matrix
/// `[[A, B], [C, D]]` acting on `(a, b†)`.
pub fn pair_transfer(m: &Matrix2<Complex64>) -> Matrix4<f64> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    Matrix4::new(
        a.re, -a.im, b.re, b.im, //
        a.im, a.re, b.im, -b.re, //
        c.re, -c.im, d.re, d.im, //
        -c.im, -c.re, -d.im, d.re,
    )
}

/// Second moments and mean fields of the probe/conjugate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    cov: Matrix4<f64>,
    mean: [Complex64; 2],
}

impl CovarianceState {
    /// Validates symmetry and the uncertainty relation.
    pub fn new(cov: Matrix4<f64>, mean: [Complex64; 2]) -> Result<Self, GaussianError> {
        if cov.iter().any(|x| !x.is_finite()) {
            return Err(GaussianError::NonFinite);
        }
        let dev = asymmetry(&cov);
        if dev > SYMMETRY_TOL * cov.amax().max(1.0) {
            return Err(GaussianError::NotSymmetric(dev));
        }
        let state = Self { cov, mean };
        state.check_uncertainty()?;
        Ok(state)
    }

    pub fn vacuum() -> Self {
        Self {
            cov: Matrix4::identity(),
            mean: [Complex64::new(0.0, 0.0); 2],
        }
    }

    /// Coherent probe, vacuum conjugate.
    pub fn coherent(alpha: Complex64) -> Self {
        Self {
            cov: Matrix4::identity(),
            mean: [alpha, Complex64::new(0.0, 0.0)],
        }
    }

    pub fn cov(&self) -> &Matrix4<f64> {
        &self.cov
    }

    pub fn mean(&self) -> [Complex64; 2] {
        self.mean
    }

    /// Mean photon flux of the probe and conjugate (noise contribution
    /// neglected).
    pub fn fluxes(&self) -> (f64, f64) {
        (self.mean[0].norm_sqr(), self.mean[1].norm_sqr())
    }

    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        uncertainty_min_eigenvalue(&self.cov)
    }

    pub fn check_uncertainty(&self) -> Result<(), GaussianError> {
        let min = self.uncertainty_min_eigenvalue();
        if min < -PHYSICALITY_TOL {
            Err(GaussianError::Unphysical(min))
        } else {
            Ok(())
        }
    }

    fn quadrature_mean(&self) -> Vector4<f64> {
        let [a, b] = self.mean;
        Vector4::new(2.0 * a.re, 2.0 * a.im, 2.0 * b.re, 2.0 * b.im)
    }

    fn from_quadrature_mean(cov: Matrix4<f64>, d: Vector4<f64>) -> Self {
        Self {
            cov,
            mean: [
                Complex64::new(d[0] / 2.0, d[1] / 2.0),
                Complex64::new(d[2] / 2.0, d[3] / 2.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplifierParams {
    gain: f64,
}

impl AmplifierParams {
    pub fn new(gain: f64) -> Result<Self, GaussianError> {
        if !(gain >= 1.0) || !gain.is_finite() {
            return Err(GaussianError::GainBelowUnity(gain));
        }
        Ok(Self { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// Intensity transmissions applied to the probe and conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParams {
    probe: f64,
    conjugate: f64,
}

impl LossParams {
    pub fn new(probe: f64, conjugate: f64) -> Result<Self, GaussianError> {
        for t in [probe, conjugate] {
            if !(0.0..=1.0).contains(&t) {
                return Err(GaussianError::TransmissionOutOfRange(t));
            }
        }
        Ok(Self { probe, conjugate })
    }

    pub fn probe(&self) -> f64 {
        self.probe
    }

    pub fn conjugate(&self) -> f64 {
        self.conjugate
    }
}

/// A completely positive Gaussian map on [`CovarianceState`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    transfer: Matrix4<f64>,
    added_noise: Matrix4<f64>,
}

impl GaussianChannel {
    /// Builds a channel after checking symmetry of the noise and complete
    /// positivity.
    pub fn new(transfer: Matrix4<f64>, added_noise: Matrix4<f64>) -> Result<Self, GaussianError> {
        if transfer.iter().chain(added_noise.iter()).any(|x| !x.is_finite()) {
            return Err(GaussianError::NonFinite);
        }
        let dev = asymmetry(&added_noise);
        if dev > SYMMETRY_TOL * added_noise.amax().max(1.0) {
            return Err(GaussianError::NotSymmetric(dev));
        }
        let channel = Self {
            transfer,
            added_noise,
        };
        let min = channel.cp_min_eigenvalue();
        if min < -PHYSICALITY_TOL {
            return Err(GaussianError::NotCompletelyPositive(min));
        }
        Ok(channel)
    }

    /// The channel with transfer `transfer` and the smallest added noise that
    /// keeps it completely positive: `N = |Ω − T Ω Tᵀ|`.
    pub fn with_minimal_noise(transfer: Matrix4<f64>) -> Result<Self, GaussianError> {
        if transfer.iter().any(|x| !x.is_finite()) {
            return Err(GaussianError::NonFinite);
        }
        let omega = symplectic_form();
        let k = omega - transfer * omega * transfer.transpose();
        let kkt = k * k.transpose();
        let kkt = (kkt + kkt.transpose()) * 0.5;
        let eig = kkt.symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let noise = eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        let noise = (noise + noise.transpose()) * 0.5;
        Ok(Self {
            transfer,
            added_noise: noise,
        })
    }

    pub fn identity() -> Self {
        Self {
            transfer: Matrix4::identity(),
            added_noise: Matrix4::zeros(),
        }
    }

    /// Ideal phase-insensitive amplifier fed by a vacuum conjugate:
    /// `a → √G a + √(G−1) b†`, `b → √G b + √(G−1) a†`.
    pub fn amplifier(p: AmplifierParams) -> Self {
        let g = p.gain;
        let s = g.sqrt();
        let c = (g - 1.0).sqrt();
        Self {
            transfer: Matrix4::new(
                s, 0.0, c, 0.0, //
                0.0, s, 0.0, -c, //
                c, 0.0, s, 0.0, //
                0.0, -c, 0.0, s,
            ),
            added_noise: Matrix4::zeros(),
        }
    }

    /// Two-mode squeezer with squeeze parameter `r`, i.e. an amplifier with
    /// gain `cosh² r`.
    pub fn two_mode_squeezer(r: f64) -> Self {
        let (s, c) = (r.cosh(), r.sinh());
        Self {
            transfer: Matrix4::new(
                s, 0.0, c, 0.0, //
                0.0, s, 0.0, -c, //
                c, 0.0, s, 0.0, //
                0.0, -c, 0.0, s,
            ),
            added_noise: Matrix4::zeros(),
        }
    }

    /// Beam-splitter losses coupling in vacuum on each mode.
    pub fn loss(p: LossParams) -> Self {
        let (ta, tb) = (p.probe, p.conjugate);
        Self {
            transfer: Matrix4::from_diagonal(&Vector4::new(ta.sqrt(), ta.sqrt(), tb.sqrt(), tb.sqrt())),
            added_noise: Matrix4::from_diagonal(&Vector4::new(1.0 - ta, 1.0 - ta, 1.0 - tb, 1.0 - tb)),
        }
    }

    pub fn transfer(&self) -> &Matrix4<f64> {
        &self.transfer
    }

    pub fn added_noise(&self) -> &Matrix4<f64> {
        &self.added_noise
    }

    /// Smallest eigenvalue of `N + i(Ω − T Ω Tᵀ)`.
    pub fn cp_min_eigenvalue(&self) -> f64 {
        let omega = symplectic_form();
        let anti = omega - self.transfer * omega * self.transfer.transpose();
        min_eigenvalue_hermitian(&self.added_noise, &anti)
    }

    pub fn is_symplectic(&self, tol: f64) -> bool {
        let omega = symplectic_form();
        (self.transfer * omega * self.transfer.transpose() - omega).amax() <= tol
    }

    pub fn apply(&self, s: &CovarianceState) -> CovarianceState {
        let cov = self.transfer * s.cov * self.transfer.transpose() + self.added_noise;
        let cov = (cov + cov.transpose()) * 0.5;
        CovarianceState::from_quadrature_mean(cov, self.transfer * s.quadrature_mean())
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &GaussianChannel) -> GaussianChannel {
        compose(next, self)
    }

    /// `n`-fold repetition of the channel by binary powering.
    pub fn power(&self, n: usize) -> GaussianChannel {
        let mut result = GaussianChannel::identity();
        let mut base = self.clone();
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                result = compose(&base, &result);
            }
            k >>= 1;
            if k > 0 {
                base = compose(&base, &base);
            }
        }
        result
    }

    /// Photon-flux gains `(G_a, G_b)` seen by a coherent probe input.
    pub fn flux_gains(&self) -> (f64, f64) {
        let t = &self.transfer;
        (t[(0, 0)].powi(2) + t[(1, 0)].powi(2), t[(2, 0)].powi(2) + t[(3, 0)].powi(2))
    }
}

/// `outer ∘ inner`: applies `inner` first.
pub fn compose(outer: &GaussianChannel, inner: &GaussianChannel) -> GaussianChannel {
    let t2 = &outer.transfer;
    let noise = t2 * inner.added_noise * t2.transpose() + outer.added_noise;
    GaussianChannel {
        transfer: t2 * inner.transfer,
        added_noise: (noise + noise.transpose()) * 0.5,
    }
}

pub fn apply(channel: &GaussianChannel, s: &CovarianceState) -> CovarianceState {
    channel.apply(s)
}
