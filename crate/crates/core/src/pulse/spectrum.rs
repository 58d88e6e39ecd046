use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::Waveform;

/// Densities below this are reported as this value instead of `-inf`.
pub const DB_FLOOR: f64 = -300.0;

/// Default pulse repetition frequency used as the PSD reference: one pulse per
/// 50 ns symbol.
pub const DEFAULT_PRF_HZ: f64 = 20e6;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("mask segment {index} is invalid: {reason}")]
    BadSegment { index: usize, reason: String },
    #[error("mask has no segments")]
    EmptyMask,
    #[error("spectrum and mask share no frequency bins")]
    DisjointBands,
    #[error("mask integrates to zero over the common band")]
    ZeroMaskIntegral,
    #[error("nfft {nfft} is smaller than the {len} waveform samples")]
    ShortTransform { nfft: usize, len: usize },
    #[error("malformed mask file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSegment {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub limit_dbm_per_mhz: f64,
}

/// Piecewise-constant PSD ceiling, in dBm/MHz.
///
/// Segments are sorted, contiguous and non-overlapping. A frequency on a
/// shared edge belongs to the upper segment; the last segment includes its
/// upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MaskSegment>", into = "Vec<MaskSegment>")]
pub struct SpectralMask {
    segments: Vec<MaskSegment>,
}

impl TryFrom<Vec<MaskSegment>> for SpectralMask {
    type Error = SpectrumError;

    fn try_from(segments: Vec<MaskSegment>) -> Result<Self, Self::Error> {
        SpectralMask::new(segments)
    }
}

impl From<SpectralMask> for Vec<MaskSegment> {
    fn from(m: SpectralMask) -> Self {
        m.segments
    }
}

impl SpectralMask {
    pub fn new(segments: Vec<MaskSegment>) -> Result<Self, SpectrumError> {
        if segments.is_empty() {
            return Err(SpectrumError::EmptyMask);
        }
        for (index, s) in segments.iter().enumerate() {
            let bad = |reason: &str| SpectrumError::BadSegment {
                index,
                reason: reason.to_string(),
            };
            if !(s.f_lo_hz.is_finite() && s.f_hi_hz.is_finite()) || s.f_lo_hz < 0.0 {
                return Err(bad("edges must be finite and non-negative"));
            }
            if s.f_lo_hz >= s.f_hi_hz {
                return Err(bad("f_lo_hz must be below f_hi_hz"));
            }
            if s.limit_dbm_per_mhz.is_nan() || s.limit_dbm_per_mhz == f64::INFINITY {
                return Err(bad("limit must be a number below +inf"));
            }
            if index > 0 {
                let prev = segments[index - 1].f_hi_hz;
                if (s.f_lo_hz - prev).abs() > 1e-9 * prev.max(1.0) {
                    return Err(bad("segments must be contiguous and sorted"));
                }
            }
        }
        Ok(Self { segments })
    }

    /// FCC-like indoor mask over 0–10 GHz: −41.3 dBm/MHz on 1–7.5 GHz and
    /// −51.3 dBm/MHz elsewhere.
    pub fn fcc_like() -> Self {
        Self::new(vec![
            MaskSegment { f_lo_hz: 0.0, f_hi_hz: 1e9, limit_dbm_per_mhz: -51.3 },
            MaskSegment { f_lo_hz: 1e9, f_hi_hz: 7.5e9, limit_dbm_per_mhz: -41.3 },
            MaskSegment { f_lo_hz: 7.5e9, f_hi_hz: 10e9, limit_dbm_per_mhz: -51.3 },
        ])
        .expect("static mask is valid")
    }

    /// Same mask with `[f_lo, f_hi)` lowered to `limit`. The notch is clipped
    /// to the mask range.
    pub fn with_notch(&self, f_lo: f64, f_hi: f64, limit: f64) -> Result<Self, SpectrumError> {
        let mut out: Vec<MaskSegment> = Vec::new();
        let mut push = |lo: f64, hi: f64, lim: f64| {
            if hi > lo {
                out.push(MaskSegment { f_lo_hz: lo, f_hi_hz: hi, limit_dbm_per_mhz: lim });
            }
        };
        for s in &self.segments {
            let (nlo, nhi) = (f_lo.max(s.f_lo_hz), f_hi.min(s.f_hi_hz));
            if nlo >= nhi {
                push(s.f_lo_hz, s.f_hi_hz, s.limit_dbm_per_mhz);
                continue;
            }
            push(s.f_lo_hz, nlo, s.limit_dbm_per_mhz);
            push(nlo, nhi, limit.min(s.limit_dbm_per_mhz));
            push(nhi, s.f_hi_hz, s.limit_dbm_per_mhz);
        }
        Self::new(out)
    }

    pub fn segments(&self) -> &[MaskSegment] {
        &self.segments
    }

    pub fn f_min(&self) -> f64 {
        self.segments[0].f_lo_hz
    }

    pub fn f_max(&self) -> f64 {
        self.segments[self.segments.len() - 1].f_hi_hz
    }

    /// Limit at `f`, or `None` outside the mask.
    pub fn limit_at(&self, f: f64) -> Option<f64> {
        let last = self.segments.len() - 1;
        self.segments
            .iter()
            .enumerate()
            .find(|(i, s)| f >= s.f_lo_hz && (f < s.f_hi_hz || (*i == last && f <= s.f_hi_hz)))
            .map(|(_, s)| s.limit_dbm_per_mhz)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SpectrumError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SpectrumError::Parse(e.to_string()))
    }
}

/// One-sided PSD on uniformly spaced bins from 0 Hz to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freq: Vec<f64>,
    /// dBm/MHz, floor-clamped at [`DB_FLOOR`].
    pub density: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        if self.freq.len() > 1 {
            self.freq[1] - self.freq[0]
        } else {
            0.0
        }
    }

    /// Densities in mW/MHz.
    pub fn linear(&self) -> Vec<f64> {
        self.density.iter().map(|&d| db_to_linear(d)).collect()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    if db <= DB_FLOOR {
        0.0
    } else {
        10f64.powf(db / 10.0)
    }
}

pub fn linear_to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Periodogram of `w` repeated at `prf_hz`, in dBm/MHz.
///
/// Samples are read as √mW. With `X_k = dt·DFT_k` the density is
/// `w_k·|X_k|²·prf·10⁶`, where `w_k = 2` folds negative frequencies onto
/// interior bins and `w_k = 1` at DC and Nyquist. Summing the linear density
/// times the bin width and dividing by `prf·10⁶` returns the energy.
pub fn psd(w: &Waveform, nfft: usize, prf_hz: f64) -> Result<Spectrum, SpectrumError> {
    if nfft < w.len() {
        return Err(SpectrumError::ShortTransform { nfft, len: w.len() });
    }
    let mut buf: Vec<Complex64> = vec![Complex64::default(); nfft];
    for (b, &s) in buf.iter_mut().zip(w.samples()) {
        *b = Complex64::new(s, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(nfft).process(&mut buf);
    let dt = w.dt();
    let df = 1.0 / (nfft as f64 * dt);
    let bins = nfft / 2 + 1;
    let mut freq = Vec::with_capacity(bins);
    let mut density = Vec::with_capacity(bins);
    for (k, x) in buf.iter().take(bins).enumerate() {
        let fold = if k == 0 || (nfft % 2 == 0 && k == nfft / 2) { 1.0 } else { 2.0 };
        let p = fold * (x * dt).norm_sqr() * prf_hz * 1e6;
        freq.push(k as f64 * df);
        density.push(linear_to_db(p));
    }
    Ok(Spectrum { freq, density })
}

/// Largest `density − limit` over bins inside the mask; `≤ 0` is compliant.
pub fn mask_violation(spectrum: &Spectrum, mask: &SpectralMask) -> Result<f64, SpectrumError> {
    let mut worst = f64::NEG_INFINITY;
    let mut any = false;
    for (&f, &d) in spectrum.freq.iter().zip(&spectrum.density) {
        if let Some(lim) = mask.limit_at(f) {
            any = true;
            worst = worst.max(d - lim);
        }
    }
    if any {
        Ok(worst)
    } else {
        Err(SpectrumError::DisjointBands)
    }
}

/// Spectral effectiveness: integral of the linear PSD over integral of the
/// linear mask, both over the bins the mask covers.
pub fn effectiveness(spectrum: &Spectrum, mask: &SpectralMask) -> Result<f64, SpectrumError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut any = false;
    for (&f, &d) in spectrum.freq.iter().zip(&spectrum.density) {
        if let Some(lim) = mask.limit_at(f) {
            any = true;
            num += db_to_linear(d);
            den += db_to_linear(lim);
        }
    }
    if !any {
        return Err(SpectrumError::DisjointBands);
    }
    if den <= 0.0 {
        return Err(SpectrumError::ZeroMaskIntegral);
    }
    Ok(num / den)
}
