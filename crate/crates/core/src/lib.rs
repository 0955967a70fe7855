// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Twin-beam noise modelling for four-wave mixing in atomic vapor.
//!
//! - [`gaussian`]: two-mode Gaussian states and channels in the shot-noise
//!   normalized quadrature picture.
//! - [`metrics`]: noise figures, gemellity and inversion of measured spectra.
//! - [`lumped`]: the ideal amplifier followed by independent losses.
//! - [`propagation`]: slab-by-slab propagation through a distributed medium.
//! - [`atomic`]: double-lambda steady state and sideband response.
//! - [`experiment`]: spectrum-analyzer trace ingestion and analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod experiment;
pub mod gaussian;
pub mod lumped;
pub mod metrics;
pub mod propagation;
