//! Human-presence classification from a medium's attenuation level and the
//! linearity of its phase response.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, MaterialSignature};
use crate::waveform::Waveform;

/// Bins whose transmit magnitude is this far below the transmit peak are
/// left out of the spectral ratio.
pub const DEFAULT_NOISE_FLOOR_DB: f64 = -40.0;

/// Level, relative to the spectral peak, that delimits the default band.
pub const DEFAULT_BAND_DB: f64 = -10.0;

/// Upper bound on the frequency step used for transfer estimation. Media
/// with strongly curved phase need a fine step to unwrap unambiguously.
const MAX_TRANSFER_STEP_HZ: f64 = 1e6;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("sample spacing differs: tx {tx} s, rx {rx} s")]
    GridMismatch { tx: f64, rx: f64 },
    #[error("tx and rx start times are not on a common sample grid")]
    Misaligned,
    #[error("invalid band [{f_lo}, {f_hi}] Hz")]
    InvalidBand { f_lo: f64, f_hi: f64 },
    #[error("no bin in the band is above the transmit noise floor")]
    BelowNoiseFloor,
    #[error("need at least 3 frequency points, got {0}")]
    TooFewPoints(usize),
    #[error("transmit waveform has no energy")]
    SilentTransmitter,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionThresholds {
    /// Mean attenuation at or above which a body may be present.
    pub attenuation_db: f64,
    /// RMS phase residual at or above which the medium counts as nonlinear.
    pub nonlinearity_rad: f64,
    /// Below this attenuation the path is treated as unobstructed.
    pub free_space_db: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self { attenuation_db: 30.0, nonlinearity_rad: 0.3, free_space_db: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionLabel {
    HumanPresent,
    ArtificialOnly,
    FreeSpace,
}

impl DetectionLabel {
    pub fn name(self) -> &'static str {
        match self {
            DetectionLabel::HumanPresent => "human_present",
            DetectionLabel::ArtificialOnly => "artificial_only",
            DetectionLabel::FreeSpace => "free_space",
        }
    }
}

impl fmt::Display for DetectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [DetectionLabel::HumanPresent, DetectionLabel::ArtificialOnly, DetectionLabel::FreeSpace]
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionVerdict {
    pub label: DetectionLabel,
    pub mean_attenuation_db: f64,
    pub phase_nonlinearity: f64,
    pub thresholds: DetectionThresholds,
}

/// Places `w` on a buffer of length `nfft` starting at sample `offset` and
/// returns its spectrum.
fn spectrum_at(w: &Waveform, offset: usize, nfft: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); nfft];
    for (i, &s) in w.samples().iter().enumerate() {
        buf[offset + i] = Complex64::new(s, 0.0);
    }
    planner.plan_fft_forward(nfft).process(&mut buf);
    buf
}

/// Contiguous band around the spectral peak of `tx` where the power stays
/// within `DEFAULT_BAND_DB` of the peak.
pub fn default_band(tx: &Waveform) -> Result<(f64, f64), DetectionError> {
    let nfft = (4 * tx.len()).max(4096).next_power_of_two();
    let spec = spectrum_at(tx, 0, nfft, &mut FftPlanner::new());
    let half = nfft / 2;
    let mag: Vec<f64> = spec[..=half].iter().map(|z| z.norm_sqr()).collect();
    let (peak_k, &peak) = mag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
    if peak <= 0.0 {
        return Err(DetectionError::SilentTransmitter);
    }
    let level = peak * 10f64.powf(DEFAULT_BAND_DB / 10.0);
    let mut lo = peak_k;
    while lo > 0 && mag[lo - 1] >= level {
        lo -= 1;
    }
    let mut hi = peak_k;
    while hi < half && mag[hi + 1] >= level {
        hi += 1;
    }
    let df = 1.0 / (nfft as f64 * tx.dt());
    Ok((lo as f64 * df, hi as f64 * df))
}

/// Spectral ratio `RX/TX` over `band`, using the default noise floor.
pub fn estimate_transfer(tx: &Waveform, rx: &Waveform, band: (f64, f64)) -> Result<MaterialSignature, DetectionError> {
    estimate_transfer_with_floor(tx, rx, band, DEFAULT_NOISE_FLOOR_DB)
}

/// Spectral ratio `H = RX/TX` on bins of `band` where `|TX|` is within
/// `floor_db` of its peak; attenuation is `−20·log₁₀|H|` and phase is the
/// unwrapped angle of `H`, both referred to a common time origin.
pub fn estimate_transfer_with_floor(
    tx: &Waveform,
    rx: &Waveform,
    band: (f64, f64),
    floor_db: f64,
) -> Result<MaterialSignature, DetectionError> {
    let dt = tx.dt();
    if (rx.dt() - dt).abs() > 1e-9 * dt {
        return Err(DetectionError::GridMismatch { tx: dt, rx: rx.dt() });
    }
    let (f_lo, f_hi) = band;
    if !(f_lo.is_finite() && f_hi.is_finite() && 0.0 <= f_lo && f_lo < f_hi) {
        return Err(DetectionError::InvalidBand { f_lo, f_hi });
    }
    let origin = tx.t0().min(rx.t0());
    let offset = |t0: f64| -> Result<usize, DetectionError> {
        let k = (t0 - origin) / dt;
        if (k - k.round()).abs() > 1e-6 {
            return Err(DetectionError::Misaligned);
        }
        Ok(k.round() as usize)
    };
    let (otx, orx) = (offset(tx.t0())?, offset(rx.t0())?);
    let span = (otx + tx.len()).max(orx + rx.len());
    let min_fine = (1.0 / (dt * MAX_TRANSFER_STEP_HZ)).ceil() as usize;
    let nfft = (2 * span).max(min_fine).next_power_of_two();

    let mut planner = FftPlanner::new();
    let stx = spectrum_at(tx, otx, nfft, &mut planner);
    let srx = spectrum_at(rx, orx, nfft, &mut planner);
    let half = nfft / 2;
    let peak = stx[..=half].iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(DetectionError::SilentTransmitter);
    }
    let floor = peak * 10f64.powf(floor_db / 20.0);
    let df = 1.0 / (nfft as f64 * dt);

    let mut freq = Vec::new();
    let mut att = Vec::new();
    let mut phase: Vec<f64> = Vec::new();
    let k_lo = (f_lo / df).ceil() as usize;
    let k_hi = ((f_hi / df).floor() as usize).min(half);
    for k in k_lo..=k_hi {
        if stx[k].norm() < floor {
            continue;
        }
        let h = srx[k] / stx[k];
        let wrapped = h.arg();
        let p = match phase.last() {
            Some(&prev) => prev + wrap(wrapped - prev),
            None => wrapped,
        };
        freq.push(k as f64 * df);
        att.push(-20.0 * h.norm().log10());
        phase.push(p);
    }
    if freq.is_empty() {
        return Err(DetectionError::BelowNoiseFloor);
    }
    Ok(MaterialSignature::new(freq, att, phase)?)
}

/// Maps an angle onto (−π, π].
fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// RMS residual of the least-squares line through the unwrapped phase.
pub fn phase_nonlinearity(sig: &MaterialSignature) -> Result<f64, DetectionError> {
    let n = sig.len();
    if n < 3 {
        return Err(DetectionError::TooFewPoints(n));
    }
    let f = sig.freq();
    let p = sig.phase_rad();
    let nf = n as f64;
    let f_mean = f.iter().sum::<f64>() / nf;
    let p_mean = p.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&fi, &pi) in f.iter().zip(p) {
        let x = fi - f_mean;
        sxx += x * x;
        sxy += x * (pi - p_mean);
    }
    let slope = sxy / sxx;
    let ss: f64 = f
        .iter()
        .zip(p)
        .map(|(&fi, &pi)| (pi - p_mean - slope * (fi - f_mean)).powi(2))
        .sum();
    Ok((ss / nf).sqrt())
}

pub fn mean_attenuation(sig: &MaterialSignature) -> f64 {
    sig.attenuation_db().iter().sum::<f64>() / sig.len() as f64
}

/// Both features are required for `human_present`; any medium at or above
/// the free-space threshold that fails either test is `artificial_only`.
pub fn classify(sig: &MaterialSignature, thresholds: &DetectionThresholds) -> Result<DetectionVerdict, DetectionError> {
    let mean_attenuation_db = mean_attenuation(sig);
    let phase_nonlinearity = phase_nonlinearity(sig)?;
    let label = if mean_attenuation_db >= thresholds.attenuation_db
        && phase_nonlinearity >= thresholds.nonlinearity_rad
    {
        DetectionLabel::HumanPresent
    } else if mean_attenuation_db >= thresholds.free_space_db {
        DetectionLabel::ArtificialOnly
    } else {
        DetectionLabel::FreeSpace
    };
    Ok(DetectionVerdict { label, mean_attenuation_db, phase_nonlinearity, thresholds: *thresholds })
}

/// Estimates the transfer over `band` (default: the −10 dB band of `tx`) and
/// classifies it.
pub fn detect(
    tx: &Waveform,
    rx: &Waveform,
    band: Option<(f64, f64)>,
    thresholds: &DetectionThresholds,
) -> Result<DetectionVerdict, DetectionError> {
    let band = match band {
        Some(b) => b,
        None => default_band(tx)?,
    };
    classify(&estimate_transfer(tx, rx, band)?, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_signature, material_response, MaterialKind};
    use crate::pulse::{synthesize_pulse, BSplineBasis};
    use crate::waveform::{add_awgn, delay, DEFAULT_DT};
    use proptest::prelude::*;

    fn tx() -> Waveform {
        let basis = BSplineBasis::for_duration(4, 30, 1.28e-9);
        let mut c: Vec<f64> = (0..30).map(|k| (k as f64 * 0.9).sin()).collect();
        let mean = c.iter().sum::<f64>() / 30.0;
        c.iter_mut().for_each(|x| *x -= mean);
        synthesize_pulse(&c, &basis, DEFAULT_DT).unwrap()
    }

    fn sig(freq: Vec<f64>, phase: Vec<f64>) -> MaterialSignature {
        let n = freq.len();
        MaterialSignature::new(freq, vec![0.0; n], phase).unwrap()
    }

    #[test]
    fn identity_and_gain() {
        let t = tx();
        let band = default_band(&t).unwrap();
        let s = estimate_transfer(&t, &t, band).unwrap();
        assert!(s.attenuation_db().iter().all(|a| a.abs() < 1e-9));
        assert!(s.phase_rad().iter().all(|p| p.abs() < 1e-9));
        let s = estimate_transfer(&t, &t.scaled(0.1), band).unwrap();
        assert!(s.attenuation_db().iter().all(|a| (a - 20.0).abs() < 1e-9));
        assert!(s.phase_rad().iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn delay_gives_linear_phase() {
        let t = tx();
        let tau = 0.37e-9;
        let rx = delay(&t, tau).unwrap();
        let s = estimate_transfer(&t, &rx, default_band(&t).unwrap()).unwrap();
        let f = s.freq();
        let p = s.phase_rad();
        let n = f.len();
        let slope = (p[n - 1] - p[0]) / (f[n - 1] - f[0]);
        assert!((slope + 2.0 * PI * tau).abs() < 1e-3 * 2.0 * PI * tau, "{slope}");
        assert!(s.attenuation_db().iter().all(|a| a.abs() < 0.05));
        assert!(phase_nonlinearity(&s).unwrap() < 1e-3);
    }

    #[test]
    fn band_checks() {
        let t = tx();
        assert!(matches!(estimate_transfer(&t, &t, (5e9, 1e9)), Err(DetectionError::InvalidBand { .. })));
        // Zero-mean pulse: nothing near DC survives the floor.
        assert!(matches!(estimate_transfer(&t, &t, (0.0, 5e6)), Err(DetectionError::BelowNoiseFloor)));
        let (lo, hi) = default_band(&t).unwrap();
        assert!(lo > 1e9 && hi < 8e9 && lo < hi, "{lo} {hi}");
    }

    #[test]
    fn nonlinearity_oracles() {
        let f: Vec<f64> = (0..101).map(|i| 3e9 + i as f64 * 1e7).collect();
        let lin = f.iter().map(|x| 2e-9 * x - 4.0).collect();
        assert!(phase_nonlinearity(&sig(f.clone(), lin)).unwrap() < 1e-12);
        assert_eq!(phase_nonlinearity(&sig(f.clone(), vec![1.5; 101])).unwrap(), 0.0);
        // Quadratic on a symmetric grid: residual is q·(x² − mean x²).
        let q = 3e-18;
        let fm = f.iter().sum::<f64>() / 101.0;
        let x2: Vec<f64> = f.iter().map(|x| (x - fm).powi(2)).collect();
        let m2 = x2.iter().sum::<f64>() / 101.0;
        let m4 = x2.iter().map(|v| v * v).sum::<f64>() / 101.0;
        let expected = q * (m4 - m2 * m2).sqrt();
        let phase = f.iter().map(|x| 0.7 * 1e-9 * x + 2.0 + q * (x - fm).powi(2)).collect();
        let got = phase_nonlinearity(&sig(f.clone(), phase)).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected, "{got} {expected}");
        assert!(matches!(
            phase_nonlinearity(&sig(f[..2].to_vec(), vec![0.0, 1.0])),
            Err(DetectionError::TooFewPoints(2))
        ));
    }

    #[test]
    fn classifier_examples() {
        let th = DetectionThresholds::default();
        let f: Vec<f64> = (0..50).map(|i| 3e9 + i as f64 * 1e7).collect();
        let make = |att: f64, q: f64| {
            let p = f.iter().map(|x| q * ((x - 3.25e9) / 1e8).powi(2)).collect();
            MaterialSignature::new(f.clone(), vec![att; 50], p).unwrap()
        };
        assert_eq!(classify(&make(50.0, 1.0), &th).unwrap().label, DetectionLabel::HumanPresent);
        assert_eq!(classify(&make(10.0, 0.0), &th).unwrap().label, DetectionLabel::ArtificialOnly);
        assert_eq!(classify(&make(0.0, 0.0), &th).unwrap().label, DetectionLabel::FreeSpace);
        // Lossy but linear, and nonlinear but weak, are both artificial.
        assert_eq!(classify(&make(50.0, 0.0), &th).unwrap().label, DetectionLabel::ArtificialOnly);
        assert_eq!(classify(&make(10.0, 1.0), &th).unwrap().label, DetectionLabel::ArtificialOnly);
        assert!((mean_attenuation(&make(10.0, 0.0)) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn verdict_json_round_trip() {
        let v = DetectionVerdict {
            label: DetectionLabel::HumanPresent,
            mean_attenuation_db: 49.2,
            phase_nonlinearity: 12.5,
            thresholds: DetectionThresholds::default(),
        };
        let text = serde_json::to_string(&v).unwrap();
        assert!(text.starts_with(r#"{"label":"human_present","mean_attenuation_db":49.2"#), "{text}");
        assert_eq!(serde_json::from_str::<DetectionVerdict>(&text).unwrap(), v);
        assert_eq!("free_space".parse::<DetectionLabel>().unwrap(), DetectionLabel::FreeSpace);
    }

    #[test]
    fn round_trip_through_media() {
        let t = tx();
        let band = default_band(&t).unwrap();
        for kind in MaterialKind::ALL {
            let truth = material_response(kind);
            let rx = apply_signature(&t, &truth).unwrap();
            let est = estimate_transfer(&t, &rx, band).unwrap();
            let n = est.len() as f64;
            let mut att_ss = 0.0;
            let mut diffs = Vec::new();
            for ((&f, &a), &p) in est.freq().iter().zip(est.attenuation_db()).zip(est.phase_rad()) {
                let (ta, tp) = truth.at(f);
                att_ss += (a - ta).powi(2);
                diffs.push(p - tp);
            }
            // Unwrapping fixes the phase only up to a multiple of 2π.
            let turns = (diffs.iter().sum::<f64>() / n / (2.0 * PI)).round() * 2.0 * PI;
            let ph_rms = (diffs.iter().map(|d| (d - turns).powi(2)).sum::<f64>() / n).sqrt();
            assert!((att_ss / n).sqrt() < 0.5, "{kind}: attenuation");
            assert!(ph_rms < 0.05, "{kind}: phase rms {ph_rms}");
            let v = classify(&est, &DetectionThresholds::default()).unwrap();
            let expected = match kind {
                MaterialKind::FreeSpace => DetectionLabel::FreeSpace,
                k if k.contains_human() => DetectionLabel::HumanPresent,
                _ => DetectionLabel::ArtificialOnly,
            };
            assert_eq!(v.label, expected, "{kind}: {v:?}");
        }
    }

    #[test]
    fn noisy_brick_wall_stays_linear() {
        let t = tx();
        let rx = apply_signature(&t, &material_response(MaterialKind::BrickWall)).unwrap();
        for seed in 0..5 {
            let noisy = add_awgn(&rx, 30.0, seed).unwrap();
            let v = detect(&t, &noisy, None, &DetectionThresholds::default()).unwrap();
            assert_eq!(v.label, DetectionLabel::ArtificialOnly);
        }
    }

    proptest! {
        #[test]
        fn affine_phase_invariance(a in -1e-8f64..1e-8, b in -50.0f64..50.0) {
            let f: Vec<f64> = (0..64).map(|i| 2e9 + i as f64 * 3e7).collect();
            let base: Vec<f64> = f.iter().map(|x| ((x - 2.9e9) / 4e8).powi(3)).collect();
            let shifted: Vec<f64> = f.iter().zip(&base).map(|(x, p)| p + a * x + b).collect();
            let r0 = phase_nonlinearity(&sig(f.clone(), base)).unwrap();
            let r1 = phase_nonlinearity(&sig(f, shifted)).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-8 * (1.0 + r0) + 1e-7);
        }

        #[test]
        fn scaling_shifts_attenuation_only(g in 0.01f64..10.0) {
            let t = tx();
            let band = default_band(&t).unwrap();
            let rx = apply_signature(&t, &material_response(MaterialKind::WoodDoor)).unwrap();
            let th = DetectionThresholds::default();
            let v0 = classify(&estimate_transfer(&t, &rx, band).unwrap(), &th).unwrap();
            let v1 = classify(&estimate_transfer(&t, &rx.scaled(g), band).unwrap(), &th).unwrap();
            prop_assert!((v1.mean_attenuation_db - v0.mean_attenuation_db + 20.0 * g.log10()).abs() < 1e-9);
            prop_assert!((v1.phase_nonlinearity - v0.phase_nonlinearity).abs() < 1e-9);
        }
    }
}
