// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

//! Spectrum-analyzer trace ingestion and noise analysis.
//!
//! Trace files are CSV with the header `freq_hz,psd_db,label,rbw_hz`; one file
//! may hold several labels. Powers are in instrument dB and only ratios
//! matter, so any common offset cancels.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, Inference, MetricsError};

/// Band searched for the default analysis frequency, in Hz.
pub const DEFAULT_BAND_HZ: (f64, f64) = (0.5e6, 5e6);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace file: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid trace `{label}`: {reason}")]
    InvalidTrace { label: TraceLabel, reason: String },
    #[error("missing `{0}` trace")]
    MissingLabel(TraceLabel),
    #[error("resolution bandwidth mismatch: `{a}` has {rbw_a} Hz, `{b}` has {rbw_b} Hz")]
    RbwMismatch { a: TraceLabel, rbw_a: f64, b: TraceLabel, rbw_b: f64 },
    #[error("trace grids do not overlap or differ: {0}")]
    GridMismatch(String),
    #[error("electronic noise reaches the `{label}` trace at {freq_hz} Hz")]
    ElectronicFloor { label: TraceLabel, freq_hz: f64 },
    #[error("no points between {f_lo} and {f_hi} Hz")]
    EmptyBand { f_lo: f64, f_hi: f64 },
    #[error("frequency {0} Hz outside the trace support")]
    OutOfSupport(f64),
    #[error("invalid power record: {0}")]
    InvalidPowers(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLabel {
    Difference,
    Probe,
    Conjugate,
    Sql,
    Electronic,
}

impl fmt::Display for TraceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TraceLabel::Difference => "difference",
            TraceLabel::Probe => "probe",
            TraceLabel::Conjugate => "conjugate",
            TraceLabel::Sql => "sql",
            TraceLabel::Electronic => "electronic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumTrace {
    label: TraceLabel,
    freq: Vec<f64>,
    psd_db: Vec<f64>,
    rbw: f64,
}

impl SpectrumTrace {
    pub fn new(label: TraceLabel, freq: Vec<f64>, psd_db: Vec<f64>, rbw: f64) -> Result<Self, ExperimentError> {
        let invalid = |reason: &str| ExperimentError::InvalidTrace { label, reason: reason.into() };
        if freq.len() != psd_db.len() {
            return Err(invalid("frequency and power arrays differ in length"));
        }
        if freq.is_empty() {
            return Err(invalid("no points"));
        }
        if !(rbw > 0.0 && rbw.is_finite()) {
            return Err(invalid("resolution bandwidth must be positive"));
        }
        if freq.iter().chain(&psd_db).any(|x| !x.is_finite()) {
            return Err(invalid("non-finite value"));
        }
        if freq.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("frequencies must be strictly increasing"));
        }
        Ok(Self { label, freq, psd_db, rbw })
    }

    pub fn label(&self) -> TraceLabel {
        self.label
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn psd_db(&self) -> &[f64] {
        &self.psd_db
    }

    pub fn rbw(&self) -> f64 {
        self.rbw
    }

    /// Same data, every point shifted by `offset_db`.
    pub fn offset(&self, offset_db: f64) -> Self {
        Self { psd_db: self.psd_db.iter().map(|p| p + offset_db).collect(), ..self.clone() }
    }

    /// Linear interpolation in dB.
    pub fn value_at(&self, f: f64) -> Result<f64, ExperimentError> {
        let n = self.freq.len();
        if !(f >= self.freq[0] && f <= self.freq[n - 1]) {
            return Err(ExperimentError::OutOfSupport(f));
        }
        let k = self.freq.partition_point(|&x| x <= f);
        if k == n {
            return Ok(self.psd_db[n - 1]);
        }
        let (f0, f1) = (self.freq[k - 1], self.freq[k]);
        let (p0, p1) = (self.psd_db[k - 1], self.psd_db[k]);
        Ok(p0 + (p1 - p0) * (f - f0) / (f1 - f0))
    }

    fn resample(&self, grid: &[f64]) -> Result<Self, ExperimentError> {
        let psd = grid.iter().map(|&f| self.value_at(f)).collect::<Result<Vec<_>, _>>()?;
        Self::new(self.label, grid.to_vec(), psd, self.rbw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRecord {
    pub probe_frac: f64,
    pub conj_frac: f64,
}

impl PowerRecord {
    pub fn new(probe_frac: f64, conj_frac: f64) -> Result<Self, ExperimentError> {
        if !(probe_frac >= 0.0 && conj_frac >= 0.0 && probe_frac.is_finite() && conj_frac.is_finite()) {
            return Err(ExperimentError::InvalidPowers(format!(
                "fractions must be finite and non-negative (got {probe_frac}, {conj_frac})"
            )));
        }
        Ok(Self { probe_frac, conj_frac })
    }
}

/// Traces sharing one frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: BTreeMap<TraceLabel, SpectrumTrace>,
}

impl TraceSet {
    /// Checks bandwidths and brings all traces onto a common grid: the grid
    /// of the first label (in label order), trimmed to the span every trace
    /// covers.
    pub fn new(traces: Vec<SpectrumTrace>) -> Result<Self, ExperimentError> {
        let mut map = BTreeMap::new();
        for t in traces {
            if map.contains_key(&t.label) {
                return Err(ExperimentError::InvalidTrace { label: t.label, reason: "duplicate label".into() });
            }
            map.insert(t.label, t);
        }
        let mut iter = map.values();
        let Some(first) = iter.next() else {
            return Err(ExperimentError::GridMismatch("no traces".into()));
        };
        for t in iter {
            if t.rbw != first.rbw {
                return Err(ExperimentError::RbwMismatch { a: first.label, rbw_a: first.rbw, b: t.label, rbw_b: t.rbw });
            }
        }
        if map.values().all(|t| t.freq == first.freq) {
            return Ok(Self { traces: map });
        }
        let lo = map.values().map(|t| t.freq[0]).fold(f64::MIN, f64::max);
        let hi = map.values().map(|t| *t.freq.last().unwrap()).fold(f64::MAX, f64::min);
        let grid: Vec<f64> = first.freq.iter().copied().filter(|&f| f >= lo && f <= hi).collect();
        if grid.is_empty() {
            return Err(ExperimentError::GridMismatch(format!("traces share no span (overlap {lo}..{hi} Hz)")));
        }
        let traces = map
            .into_iter()
            .map(|(k, t)| Ok((k, t.resample(&grid)?)))
            .collect::<Result<_, ExperimentError>>()?;
        Ok(Self { traces })
    }

    pub fn get(&self, label: TraceLabel) -> Result<&SpectrumTrace, ExperimentError> {
        self.traces.get(&label).ok_or(ExperimentError::MissingLabel(label))
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = TraceLabel> + '_ {
        self.traces.keys().copied()
    }

    pub fn freq(&self) -> &[f64] {
        &self.traces.values().next().expect("a trace set is never empty").freq
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    freq_hz: f64,
    psd_db: f64,
    label: TraceLabel,
    rbw_hz: f64,
}

pub fn parse_traces<R: Read>(reader: R) -> Result<TraceSet, ExperimentError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["freq_hz", "psd_db", "label", "rbw_hz"] {
        return Err(ExperimentError::GridMismatch(format!(
            "expected header freq_hz,psd_db,label,rbw_hz, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut grouped: BTreeMap<TraceLabel, (Vec<f64>, Vec<f64>, f64)> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        let entry = grouped.entry(row.label).or_insert_with(|| (Vec::new(), Vec::new(), row.rbw_hz));
        if entry.2 != row.rbw_hz {
            return Err(ExperimentError::InvalidTrace {
                label: row.label,
                reason: format!("resolution bandwidth changes within the trace ({} vs {} Hz)", entry.2, row.rbw_hz),
            });
        }
        entry.0.push(row.freq_hz);
        entry.1.push(row.psd_db);
    }
    let traces = grouped
        .into_iter()
        .map(|(label, (f, p, rbw))| SpectrumTrace::new(label, f, p, rbw))
        .collect::<Result<Vec<_>, _>>()?;
    TraceSet::new(traces)
}

pub fn load_traces(path: &Path) -> Result<TraceSet, ExperimentError> {
    parse_traces(File::open(path)?)
}

/// Serializes traces in the input file format.
pub fn write_traces_csv(traces: &[&SpectrumTrace]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in traces {
        for (&freq_hz, &psd_db) in t.freq.iter().zip(&t.psd_db) {
            w.serialize(Row { freq_hz, psd_db, label: t.label, rbw_hz: t.rbw })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Noise relative to the shot-noise trace after subtracting the electronic
/// floor, in dB.
pub fn normalize_to_sql(
    trace: &SpectrumTrace,
    sql: &SpectrumTrace,
    electronic: Option<&SpectrumTrace>,
) -> Result<SpectrumTrace, ExperimentError> {
    if trace.freq != sql.freq || electronic.is_some_and(|e| e.freq != trace.freq) {
        return Err(ExperimentError::GridMismatch("normalization needs traces on one grid".into()));
    }
    let mut out = Vec::with_capacity(trace.freq.len());
    for (k, &f) in trace.freq.iter().enumerate() {
        let e = electronic.map_or(0.0, |e| metrics::linear_from_db(e.psd_db[k]));
        let p = metrics::linear_from_db(trace.psd_db[k]) - e;
        let s = metrics::linear_from_db(sql.psd_db[k]) - e;
        if !(p > 0.0) {
            return Err(ExperimentError::ElectronicFloor { label: trace.label, freq_hz: f });
        }
        if !(s > 0.0) {
            return Err(ExperimentError::ElectronicFloor { label: TraceLabel::Sql, freq_hz: f });
        }
        out.push(10.0 * (p / s).log10());
    }
    SpectrumTrace::new(trace.label, trace.freq.clone(), out, trace.rbw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Min,
    /// Mean of the linear power, returned in dB.
    Mean,
}

pub fn band_statistic(trace: &SpectrumTrace, f_lo: f64, f_hi: f64, stat: Statistic) -> Result<f64, ExperimentError> {
    let band: Vec<f64> = trace
        .freq
        .iter()
        .zip(&trace.psd_db)
        .filter(|(&f, _)| f >= f_lo && f <= f_hi)
        .map(|(_, &p)| p)
        .collect();
    if band.is_empty() {
        return Err(ExperimentError::EmptyBand { f_lo, f_hi });
    }
    Ok(match stat {
        Statistic::Min => band.iter().copied().fold(f64::INFINITY, f64::min),
        Statistic::Mean => {
            let mean = band.iter().map(|&p| metrics::linear_from_db(p)).sum::<f64>() / band.len() as f64;
            10.0 * mean.log10()
        }
    })
}

/// Frequency of the lowest point in the band; the first one on ties.
pub fn band_argmin(trace: &SpectrumTrace, f_lo: f64, f_hi: f64) -> Result<f64, ExperimentError> {
    trace
        .freq
        .iter()
        .zip(&trace.psd_db)
        .filter(|(&f, _)| f >= f_lo && f <= f_hi)
        .fold(None, |best: Option<(f64, f64)>, (&f, &p)| match best {
            Some((_, bp)) if bp <= p => best,
            _ => Some((f, p)),
        })
        .map(|(f, _)| f)
        .ok_or(ExperimentError::EmptyBand { f_lo, f_hi })
}

/// Gemellity and inferred correlation from SQL-normalized noise values.
pub fn measured_gemellity(
    diff_db: f64,
    probe_db: f64,
    conj_db: f64,
    powers: PowerRecord,
) -> Result<Inference, ExperimentError> {
    Ok(metrics::infer_from_measurement(diff_db, probe_db, conj_db, powers.probe_frac, powers.conj_frac)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedPoint {
    pub freq_hz: f64,
    pub difference_db: f64,
    pub probe_db: f64,
    pub conjugate_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub analysis_freq_hz: f64,
    pub diff_db: f64,
    #[serde(rename = "F_a_dB")]
    pub f_a_db: f64,
    #[serde(rename = "F_b_dB")]
    pub f_b_db: f64,
    #[serde(rename = "C_ab")]
    pub c_ab: f64,
    pub gemellity: f64,
    #[serde(rename = "gemellity_dB")]
    pub gemellity_db: f64,
    pub probe_frac: f64,
    pub conj_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub summary: AnalysisSummary,
    pub traces: Vec<NormalizedPoint>,
}

/// Normalizes the difference, probe and conjugate traces and infers the
/// gemellity at `freq_hz`, or at the lowest difference noise in
/// [`DEFAULT_BAND_HZ`] when no frequency is given.
pub fn analyze(set: &TraceSet, powers: PowerRecord, freq_hz: Option<f64>) -> Result<AnalysisReport, ExperimentError> {
    let sql = set.get(TraceLabel::Sql)?;
    let elec = set.get(TraceLabel::Electronic).ok();
    let diff = normalize_to_sql(set.get(TraceLabel::Difference)?, sql, elec)?;
    let probe = normalize_to_sql(set.get(TraceLabel::Probe)?, sql, elec)?;
    let conj = normalize_to_sql(set.get(TraceLabel::Conjugate)?, sql, elec)?;
    let f = match freq_hz {
        Some(f) => f,
        None => band_argmin(&diff, DEFAULT_BAND_HZ.0, DEFAULT_BAND_HZ.1)?,
    };
    let (d, a, b) = (diff.value_at(f)?, probe.value_at(f)?, conj.value_at(f)?);
    let inf = measured_gemellity(d, a, b, powers)?;
    let traces = diff
        .freq
        .iter()
        .enumerate()
        .map(|(k, &freq_hz)| NormalizedPoint {
            freq_hz,
            difference_db: diff.psd_db[k],
            probe_db: probe.psd_db[k],
            conjugate_db: conj.psd_db[k],
        })
        .collect();
    Ok(AnalysisReport {
        summary: AnalysisSummary {
            analysis_freq_hz: f,
            diff_db: d,
            f_a_db: a,
            f_b_db: b,
            c_ab: inf.figures.c_ab,
            gemellity: inf.gemellity,
            gemellity_db: inf.gemellity_db(),
            probe_frac: powers.probe_frac,
            conj_frac: powers.conj_frac,
        },
        traces,
    })
}
