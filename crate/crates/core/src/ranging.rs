//! Dirty-template time-of-arrival estimation on training bursts, and range
//! conversion.
//!
//! The coarse stage correlates consecutive symbol-length segments of the
//! received signal with each other and picks the segment offset that
//! maximizes the summed squared correlations. The optional fine stage folds
//! the burst into a one-period template and locates the first arrival in it
//! with the known pulse shape.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{delay, Waveform, WaveformError};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error)]
pub enum RangingError {
    #[error("a burst needs at least 2 symbols, got {0}")]
    TooFewSymbols(usize),
    #[error("symbol duration {tsym:e} s is not a whole number of samples of {dt:e} s")]
    OffGridSymbol { tsym: f64, dt: f64 },
    #[error("pulse lasts {pulse:e} s, longer than the symbol duration {tsym:e} s")]
    PulseTooLong { pulse: f64, tsym: f64 },
    #[error("received record has {got} samples, the estimator needs {needed}")]
    ShortRecord { got: usize, needed: usize },
    #[error("negative flight time {0:e} s")]
    NegativeFlightTime(f64),
    #[error("no estimates to average")]
    Empty,
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Polarity sequence of the training symbols.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPattern {
    /// Every symbol is `+p`.
    Identical,
    /// `+p, +p, −p, −p, ...`
    #[default]
    AlternatingPairs,
}

impl TrainingPattern {
    pub fn polarity(self, k: usize) -> f64 {
        match self {
            TrainingPattern::Identical => 1.0,
            TrainingPattern::AlternatingPairs => {
                if (k / 2) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// How [`estimate_toa`] turns the received burst into an arrival time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToaMethod {
    /// Sample-grid argmax of the dirty-template objective.
    DirtyTemplate,
    /// Grid argmax refined by a three-point parabola.
    DirtyTemplateInterpolated,
    /// Grid argmax followed by first-arrival fine timing on the folded
    /// template.
    #[default]
    DirtyTemplateRefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstSpec {
    pub pulse: Waveform,
    pub symbol_duration: f64,
    pub symbol_count: usize,
    pub emit_epoch: f64,
    pub pattern: TrainingPattern,
}

impl BurstSpec {
    /// Samples per symbol.
    pub fn samples_per_symbol(&self) -> Result<usize, RangingError> {
        let dt = self.pulse.dt();
        let n = self.symbol_duration / dt;
        if !(n.is_finite() && n >= 1.0) || (n - n.round()).abs() > 1e-6 {
            return Err(RangingError::OffGridSymbol { tsym: self.symbol_duration, dt });
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if self.symbol_count < 2 {
            return Err(RangingError::TooFewSymbols(self.symbol_count));
        }
        let n = self.samples_per_symbol()?;
        if self.pulse.len() > n {
            return Err(RangingError::PulseTooLong { pulse: self.pulse.duration(), tsym: self.symbol_duration });
        }
        Ok(())
    }
}

/// `M` copies of the pulse, `Tsym` apart, starting at the emit epoch and
/// signed by the training pattern.
pub fn make_burst(spec: &BurstSpec) -> Result<Waveform, RangingError> {
    spec.validate()?;
    let n = spec.samples_per_symbol()?;
    let mut samples = vec![0.0; n * spec.symbol_count];
    for k in 0..spec.symbol_count {
        let s = spec.pattern.polarity(k);
        for (i, &p) in spec.pulse.samples().iter().enumerate() {
            samples[k * n + i] = s * p;
        }
    }
    Ok(Waveform::new(samples, spec.pulse.dt(), spec.emit_epoch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToaEstimate {
    /// Absolute arrival time of the pulse start.
    pub toa: f64,
    /// Dirty-template objective at the coarse peak.
    pub objective_peak: f64,
    pub grid_resolution: f64,
    /// Grid-level estimate before any refinement.
    pub coarse_toa: f64,
}

/// Dirty-template objective `J(i) = Σ_{k=1}^{M−1} x_k(i)²` for every offset
/// `i` in one symbol, where `x_k(i)` correlates segment `k` with segment
/// `k − 1`, both starting `i` samples into their symbol.
pub fn dirty_template_objective(r: &[f64], n: usize, m: usize) -> Result<Vec<f64>, RangingError> {
    if m < 2 {
        return Err(RangingError::TooFewSymbols(m));
    }
    let needed = (m + 1) * n;
    if r.len() < needed {
        return Err(RangingError::ShortRecord { got: r.len(), needed });
    }
    // prefix[j] = Σ_{t<j} r[t]·r[t−n]
    let mut prefix = vec![0.0; r.len() + 1];
    for j in 0..r.len() {
        let q = if j >= n { r[j] * r[j - n] } else { 0.0 };
        prefix[j + 1] = prefix[j] + q;
    }
    Ok((0..n)
        .map(|i| {
            (1..m)
                .map(|k| {
                    let a = i + k * n;
                    let x = prefix[a + n] - prefix[a];
                    x * x
                })
                .sum()
        })
        .collect())
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn wrap(offset: f64, period: f64) -> f64 {
    let w = offset.rem_euclid(period);
    if w >= period {
        0.0
    } else {
        w
    }
}

/// Grid-level dirty-template estimate.
///
/// The receive window is assumed to start at the emit epoch, so the
/// returned arrival time is `received.t0() + i·dt` with `i ∈ [0, Tsym/dt)`.
pub fn toa_dirty_template(received: &Waveform, tsym: f64, m: usize) -> Result<ToaEstimate, RangingError> {
    let dt = received.dt();
    let n = tsym / dt;
    if !(n.is_finite() && n >= 1.0) || (n - n.round()).abs() > 1e-6 {
        return Err(RangingError::OffGridSymbol { tsym, dt });
    }
    let n = n.round() as usize;
    let j = dirty_template_objective(received.samples(), n, m)?;
    let i = argmax(&j);
    let toa = received.t0() + i as f64 * dt;
    Ok(ToaEstimate { toa, objective_peak: j[i], grid_resolution: dt, coarse_toa: toa })
}

fn parabolic_offset(j: &[f64], i: usize) -> f64 {
    let n = j.len();
    let (ym, y0, yp) = (j[(i + n - 1) % n], j[i], j[(i + 1) % n]);
    let denom = ym - 2.0 * y0 + yp;
    if denom < 0.0 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Lead of the fine-timing template ahead of the coarse estimate, as a
/// fraction of the symbol.
const TEMPLATE_LEAD: f64 = 0.25;
/// The earliest resolved path at least this fraction of the strongest one is
/// taken as the first arrival.
const FIRST_PATH_FRACTION: f64 = 0.2;
/// Path extraction stops once the residual peak falls below this fraction
/// of the initial correlation peak.
const CLEAN_STOP_FRACTION: f64 = 0.05;
const CLEAN_MAX_PATHS: usize = 64;
/// Half-width, in samples, of the carrier-peak search around the first
/// path.
const CARRIER_SEARCH: usize = 3;
const GOLDEN_TOL_SAMPLES: f64 = 1e-6;

/// Earliest significant path in `corr`, the correlation of a received
/// segment with `pulse`.
///
/// Paths are peeled off one at a time (CLEAN): the largest residual sample
/// is taken as a path and its scaled pulse autocorrelation, sidelobes
/// included, is subtracted. Removing the sidelobes keeps them from being
/// mistaken for an earlier, weaker arrival.
fn first_path(corr: &[f64], pulse: &[f64]) -> usize {
    let p = pulse.len();
    let energy: f64 = pulse.iter().map(|x| x * x).sum();
    // acf[p - 1 + k] is the autocorrelation at lag k.
    let acf: Vec<f64> = (0..2 * p - 1)
        .map(|j| {
            let k = j as i64 - (p as i64 - 1);
            (0..p)
                .filter_map(|i| {
                    let t = i as i64 + k;
                    (t >= 0 && (t as usize) < p).then(|| pulse[i] * pulse[t as usize])
                })
                .sum()
        })
        .collect();
    let mut residual = corr.to_vec();
    let abs_argmax = |r: &[f64]| {
        r.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
    };
    let (_, initial) = abs_argmax(&residual);
    let mut paths: Vec<(usize, f64)> = Vec::new();
    for _ in 0..CLEAN_MAX_PATHS {
        let (u, v) = abs_argmax(&residual);
        if v <= CLEAN_STOP_FRACTION * initial || v == 0.0 {
            break;
        }
        let a = residual[u] / energy;
        for (j, &c) in acf.iter().enumerate() {
            let idx = u as i64 + j as i64 - (p as i64 - 1);
            if idx >= 0 && (idx as usize) < residual.len() {
                residual[idx as usize] -= a * c;
            }
        }
        paths.push((u, a.abs()));
    }
    let strongest = paths.iter().map(|&(_, a)| a).fold(0.0, f64::max);
    paths
        .iter()
        .filter(|&&(_, a)| a >= FIRST_PATH_FRACTION * strongest)
        .map(|&(u, _)| u)
        .min()
        .unwrap_or(0)
}

/// First-arrival offset, in samples from the window start, refined from a
/// coarse grid offset.
///
/// The burst is folded with the training polarities into a one-symbol
/// template beginning a quarter symbol before the coarse offset. The template
/// is correlated with the pulse and resolved into paths (see
/// [`first_path`]); the first path is snapped to the nearest carrier peak
/// and refined by a golden-section search over the normalized correlation
/// between the template and a fractionally delayed pulse.
fn fine_offset(r: &[f64], spec: &BurstSpec, n: usize, coarse: usize) -> Result<f64, RangingError> {
    let m = spec.symbol_count;
    let start = coarse as i64 - (TEMPLATE_LEAD * n as f64).round() as i64;
    let mut tpl = vec![0.0; n];
    for k in 0..m {
        let s = spec.pattern.polarity(k) / m as f64;
        for (u, t) in tpl.iter_mut().enumerate() {
            let j = (k * n) as i64 + start + u as i64;
            if j >= 0 && (j as usize) < r.len() {
                *t += s * r[j as usize];
            }
        }
    }
    let p = spec.pulse.samples();
    let corr: Vec<f64> = (0..n)
        .map(|u| p.iter().enumerate().filter(|(i, _)| u + i < n).map(|(i, &pv)| tpl[u + i] * pv).sum())
        .collect();
    let u = first_path(&corr, p);
    let lo = u.saturating_sub(CARRIER_SEARCH);
    let hi = (u + CARRIER_SEARCH).min(n - 1);
    let peak = lo + argmax(&corr[lo..=hi]);

    let dt = spec.pulse.dt();
    let base = spec.pulse.clone().with_t0(0.0);
    let score = |tau: f64| -> Result<f64, RangingError> {
        let d = delay(&base, tau * dt)?;
        let norm = d.samples().iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = d.samples().iter().zip(&tpl).map(|(a, b)| a * b).sum();
        Ok(if norm > 0.0 { dot / norm } else { 0.0 })
    };
    let mut a = (peak as f64 - 1.0).max(0.0);
    let mut b = peak as f64 + 1.0;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = score(x1)?;
    let mut f2 = score(x2)?;
    while b - a > GOLDEN_TOL_SAMPLES {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = score(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = score(x2)?;
        }
    }
    Ok(start as f64 + 0.5 * (a + b))
}

/// Arrival time of the burst described by `spec` within `received`.
///
/// The receive window `[emit_epoch, emit_epoch + (M+1)·Tsym)` is cut from
/// `received` (zero-filled where it has no samples), so `received` must lie
/// on the pulse's sample grid. The result satisfies
/// `0 ≤ toa − emit_epoch < Tsym`.
pub fn estimate_toa(received: &Waveform, spec: &BurstSpec, method: ToaMethod) -> Result<ToaEstimate, RangingError> {
    spec.validate()?;
    let n = spec.samples_per_symbol()?;
    let dt = spec.pulse.dt();
    let window = received.window(spec.emit_epoch, (spec.symbol_count + 1) * n)?;
    let r = window.samples();
    let j = dirty_template_objective(r, n, spec.symbol_count)?;
    let i = argmax(&j);
    let coarse_toa = spec.emit_epoch + i as f64 * dt;
    let offset = match method {
        ToaMethod::DirtyTemplate => i as f64,
        ToaMethod::DirtyTemplateInterpolated => i as f64 + parabolic_offset(&j, i),
        ToaMethod::DirtyTemplateRefined => fine_offset(r, spec, n, i)?,
    };
    let toa = spec.emit_epoch + wrap(offset * dt, spec.symbol_duration);
    Ok(ToaEstimate { toa, objective_peak: j[i], grid_resolution: dt, coarse_toa })
}

/// `c·(toa − emit_epoch)`.
pub fn range_from_toa(est: &ToaEstimate, emit_epoch: f64) -> Result<f64, RangingError> {
    let flight = est.toa - emit_epoch;
    if flight < 0.0 {
        return Err(RangingError::NegativeFlightTime(flight));
    }
    Ok(SPEED_OF_LIGHT * flight)
}

/// `mean((τ̂ − truth)²) / Tsym²`.
pub fn toa_nmse(estimates: &[f64], truth: f64, tsym: f64) -> Result<f64, RangingError> {
    if estimates.is_empty() {
        return Err(RangingError::Empty);
    }
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse / (tsym * tsym))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{material_response, propagate, sample_cir, ChannelProfile, ChannelRealization, MaterialKind};
    use crate::pulse::{synthesize_pulse, BSplineBasis};
    use crate::waveform::{add_awgn, DEFAULT_DT};

    fn test_pulse() -> Waveform {
        let basis = BSplineBasis::for_duration(4, 30, 1.28e-9);
        let mut c: Vec<f64> = (0..30).map(|k| (k as f64 * 0.9).sin()).collect();
        let mean = c.iter().sum::<f64>() / 30.0;
        c.iter_mut().for_each(|x| *x -= mean);
        synthesize_pulse(&c, &basis, DEFAULT_DT).unwrap()
    }

    fn spec(m: usize) -> BurstSpec {
        BurstSpec {
            pulse: test_pulse(),
            symbol_duration: 50e-9,
            symbol_count: m,
            emit_epoch: 0.0,
            pattern: TrainingPattern::AlternatingPairs,
        }
    }

    fn received(spec: &BurstSpec, tau: f64, cir: &ChannelRealization) -> Waveform {
        let burst = make_burst(spec).unwrap();
        let d = tau * SPEED_OF_LIGHT;
        propagate(&burst, d, cir, &material_response(MaterialKind::FreeSpace)).unwrap()
    }

    #[test]
    fn burst_construction() {
        let s = spec(2);
        let b = make_burst(&s).unwrap();
        assert_eq!(b.len(), 2000);
        assert_eq!(b.samples()[1000 + 5], s.pulse.samples()[5]);
        assert!((b.energy() - 2.0 * s.pulse.energy()).abs() < 1e-12 * b.energy());
        assert!(matches!(make_burst(&spec(1)), Err(RangingError::TooFewSymbols(1))));
        let off = BurstSpec { symbol_duration: 50.01e-9, ..spec(2) };
        assert!(matches!(make_burst(&off), Err(RangingError::OffGridSymbol { .. })));
        let short = BurstSpec { symbol_duration: 1e-9, ..spec(2) };
        assert!(matches!(make_burst(&short), Err(RangingError::PulseTooLong { .. })));
    }

    #[test]
    fn pattern_polarities() {
        let p: Vec<f64> = (0..6).map(|k| TrainingPattern::AlternatingPairs.polarity(k)).collect();
        assert_eq!(p, [1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
        assert_eq!(TrainingPattern::Identical.polarity(3), 1.0);
    }

    #[test]
    fn noiseless_los() {
        // A lone echo-free pulse leaves the coarse objective flat wherever a
        // whole pulse sits inside the segment pair; the true offset is on
        // that plateau and the fine stage resolves it.
        let s = spec(20);
        let los = ChannelRealization::line_of_sight();
        for tau in [10e-9, 3.0 * DEFAULT_DT, 27.35e-9] {
            let r = received(&s, tau, &los);
            let w = r.window(0.0, 21_000).unwrap();
            let j = dirty_template_objective(w.samples(), 1000, 20).unwrap();
            let top = j.iter().cloned().fold(0.0, f64::max);
            let i = (tau / DEFAULT_DT).floor() as usize;
            assert!(j[i] >= top * (1.0 - 1e-6), "tau {tau}: {} vs {top}", j[i]);
            let est = estimate_toa(&r, &s, ToaMethod::DirtyTemplateRefined).unwrap();
            assert!((est.toa - tau).abs() <= DEFAULT_DT, "tau {tau}: {}", est.toa);
        }
    }

    #[test]
    fn zero_delay() {
        let s = spec(4);
        let burst = make_burst(&s).unwrap();
        let est = toa_dirty_template(&burst.window(0.0, 5000).unwrap(), 50e-9, 4).unwrap();
        assert!(est.toa.abs() <= DEFAULT_DT);
    }

    #[test]
    fn refined_noiseless_los_is_sub_millimetre() {
        let s = spec(20);
        let los = ChannelRealization::line_of_sight();
        for tau in [11.11e-9, 17.0e-9, 29.987e-9] {
            let r = received(&s, tau, &los);
            let est = estimate_toa(&r, &s, ToaMethod::DirtyTemplateRefined).unwrap();
            assert!((est.toa - tau).abs() * SPEED_OF_LIGHT < 1e-3, "tau {tau}: {}", est.toa);
        }
    }

    #[test]
    fn refined_multipath_noiseless() {
        let s = spec(20);
        for seed in 0..30 {
            let cir = sample_cir(&ChannelProfile::default(), seed).unwrap();
            let tau = 10e-9 + seed as f64 * 0.6e-9;
            let r = received(&s, tau, &cir);
            let est = estimate_toa(&r, &s, ToaMethod::DirtyTemplateRefined).unwrap();
            assert!((est.toa - tau).abs() * SPEED_OF_LIGHT < 0.01, "seed {seed}: err {}", est.toa - tau);
        }
    }

    #[test]
    fn identical_symbols_flatten_the_objective_under_isi() {
        // With identical symbols and echoes longer than a symbol the received
        // burst is periodic, so the objective carries almost no timing
        // information; the alternating pattern restores a clear peak.
        let cir = sample_cir(&ChannelProfile::default(), 3).unwrap();
        let contrast = |pattern| {
            let s = BurstSpec { pattern, ..spec(20) };
            let r = received(&s, 15e-9, &cir).window(0.0, 21 * 1000).unwrap();
            let j = dirty_template_objective(r.samples(), 1000, 20).unwrap();
            let max = j.iter().cloned().fold(0.0, f64::max);
            let min = j.iter().cloned().fold(f64::INFINITY, f64::min);
            (max - min) / max
        };
        assert!(contrast(TrainingPattern::Identical) < 0.1);
        assert!(contrast(TrainingPattern::AlternatingPairs) > 0.5);
    }

    #[test]
    fn short_record_rejected() {
        let r = Waveform::new(vec![1.0; 2500], DEFAULT_DT, 0.0).unwrap();
        assert!(matches!(toa_dirty_template(&r, 50e-9, 2), Err(RangingError::ShortRecord { .. })));
        assert!(matches!(toa_dirty_template(&r, 50e-9, 1), Err(RangingError::TooFewSymbols(1))));
    }

    #[test]
    fn range_conversion() {
        let est = |toa| ToaEstimate { toa, objective_peak: 1.0, grid_resolution: DEFAULT_DT, coarse_toa: toa };
        assert!((range_from_toa(&est(10e-9), 0.0).unwrap() - 2.99792458).abs() < 1e-12);
        assert_eq!(range_from_toa(&est(5e-9), 5e-9).unwrap(), 0.0);
        let a = range_from_toa(&est(20.1e-9), 0.0).unwrap();
        let b = range_from_toa(&est(20e-9), 0.0).unwrap();
        assert!((a - b - 0.0299792458).abs() < 1e-9);
        assert!(matches!(range_from_toa(&est(1e-9), 2e-9), Err(RangingError::NegativeFlightTime(_))));
    }

    #[test]
    fn nmse_definition() {
        assert_eq!(toa_nmse(&[3.0, 3.0], 3.0, 50.0).unwrap(), 0.0);
        assert!((toa_nmse(&[25e-9], 0.0, 50e-9).unwrap() - 0.25).abs() < 1e-12);
        assert!(toa_nmse(&[], 0.0, 1.0).is_err());
    }

    #[test]
    fn nmse_decreases_with_snr() {
        let s = spec(20);
        let mut prev = f64::INFINITY;
        for snr in [10.0, 20.0, 30.0, 40.0] {
            let mut errs = Vec::new();
            for seed in 0..20u64 {
                let cir = sample_cir(&ChannelProfile::default(), seed).unwrap();
                let tau = 12e-9 + seed as f64 * 0.7e-9;
                let r = received(&s, tau, &cir).window(0.0, 21_000).unwrap();
                let noisy = add_awgn(&r, snr, 1000 + seed).unwrap();
                let est = estimate_toa(&noisy, &s, ToaMethod::DirtyTemplateRefined).unwrap();
                errs.push(est.toa - tau);
            }
            let nmse = toa_nmse(&errs, 0.0, 50e-9).unwrap();
            assert!(nmse <= prev * 1.5, "snr {snr}: {nmse} after {prev}");
            prev = nmse;
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            // The objective is flat to rounding over a plateau, so the
            // argmax itself is not equivariant; the objective is.
            #[test]
            fn shift_equivariance_and_range(tau_samples in 0usize..1000, k in 0usize..60, seed in 0u64..50) {
                let s = spec(8);
                let cir = sample_cir(&ChannelProfile::default(), seed).unwrap();
                let tau = tau_samples as f64 * DEFAULT_DT + 1e-12;
                let a = received(&s, tau, &cir).window(0.0, 9000).unwrap();
                let b = delay(&a, k as f64 * DEFAULT_DT).unwrap().window(0.0, 9000).unwrap();
                let ja = dirty_template_objective(a.samples(), 1000, 8).unwrap();
                let jb = dirty_template_objective(b.samples(), 1000, 8).unwrap();
                let scale = ja.iter().fold(0.0f64, |m, &v| m.max(v));
                for i in 0..1000 - k {
                    prop_assert!((jb[i + k] - ja[i]).abs() <= 1e-9 * scale, "offset {}: {} vs {}", i, jb[i + k], ja[i]);
                }
                let ea = toa_dirty_template(&a, 50e-9, 8).unwrap();
                let ia = (ea.toa / DEFAULT_DT).round() as usize;
                prop_assert!(ea.toa >= 0.0 && ea.toa < 50e-9);
                prop_assert_eq!(ja[ia], scale);
            }

            #[test]
            fn amplitude_invariance(gain in 1e-3f64..1e3, seed in 0u64..50) {
                let s = spec(8);
                let cir = sample_cir(&ChannelProfile::default(), seed).unwrap();
                let r = received(&s, 14.3e-9, &cir).window(0.0, 9000).unwrap();
                let noisy = add_awgn(&r, 15.0, seed).unwrap();
                let a = estimate_toa(&noisy, &s, ToaMethod::DirtyTemplate).unwrap();
                let b = estimate_toa(&noisy.scaled(gain), &s, ToaMethod::DirtyTemplate).unwrap();
                prop_assert_eq!(a.toa, b.toa);
            }

            #[test]
            fn estimate_stays_in_window(snr in 0.0f64..40.0, seed in 0u64..100, epoch_k in 0usize..5) {
                let emit = epoch_k as f64 * 1e-6;
                let s = BurstSpec { emit_epoch: emit, ..spec(6) };
                let cir = sample_cir(&ChannelProfile::default(), seed).unwrap();
                let r = received(&s, 20e-9, &cir).window(emit, 7000).unwrap();
                let noisy = add_awgn(&r, snr, seed).unwrap();
                for method in [ToaMethod::DirtyTemplate, ToaMethod::DirtyTemplateInterpolated, ToaMethod::DirtyTemplateRefined] {
                    let e = estimate_toa(&noisy, &s, method).unwrap();
                    prop_assert!(e.toa - emit >= 0.0 && e.toa - emit < 50e-9);
                }
            }
        }
    }
}
