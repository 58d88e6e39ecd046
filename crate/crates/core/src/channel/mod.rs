//! Multipath channel realizations, material signatures, and end-to-end
//! propagation from an anchor to the target.

mod cir;
mod material;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub use cir::{sample_cir, ChannelProfile, ChannelRealization, Tap};
pub use material::{
    human_phase_curvature, material_response, MaterialKind, MaterialSignature, HUMAN_PHASE_CENTER_HZ,
    HUMAN_PHASE_WINDOW_HZ, SIGNATURE_F_MAX_HZ, SIGNATURE_STEP_HZ,
};

use crate::waveform::{delay, Waveform, WaveformError};
use crate::SPEED_OF_LIGHT;

/// Spectral bins within this many dB of the waveform's peak must fall inside
/// the signature grid.
pub const COVERAGE_FLOOR_DB: f64 = -60.0;

/// Extra samples kept on each side of a filtered waveform for interpolation
/// tails, when the signature has any group delay.
const TAIL_GUARD: usize = 32;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel profile: {0}")]
    InvalidProfile(String),
    #[error("invalid signature: {0}")]
    Signature(String),
    #[error("signature grid does not cover {f_hz:.4e} Hz, where the waveform has significant energy")]
    BandNotCovered { f_hz: f64 },
    #[error("distance must be finite and positive, got {0}")]
    InvalidDistance(f64),
    #[error("malformed channel file: {0}")]
    Parse(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Filters `w` by `10^(−attenuation/20)·exp(i·phase)` in the frequency
/// domain.
///
/// The record is padded by the signature's group-delay range (plus a small
/// guard) so that neither causal nor anti-causal spreading wraps around. The
/// output starts `pad_before` samples earlier than the input, on the same
/// grid. Signatures with no group delay add no padding.
pub fn apply_signature(w: &Waveform, sig: &MaterialSignature) -> Result<Waveform, ChannelError> {
    let dt = w.dt();
    let (gd_lo, gd_hi) = sig.group_delay_range();
    let guard = if gd_lo == 0.0 && gd_hi == 0.0 { 0 } else { TAIL_GUARD };
    let pad_before = (-gd_lo / dt).ceil().max(0.0) as usize + guard;
    let pad_after = (gd_hi / dt).ceil().max(0.0) as usize + guard;
    let total = w.len() + pad_before + pad_after;
    let nfft = (2 * total).next_power_of_two();

    let mut buf = vec![Complex64::default(); nfft];
    for (i, &s) in w.samples().iter().enumerate() {
        buf[pad_before + i] = Complex64::new(s, 0.0);
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(nfft).process(&mut buf);

    let half = nfft / 2;
    let df = 1.0 / (nfft as f64 * dt);
    let peak = buf[..=half].iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = peak * 10f64.powf(COVERAGE_FLOOR_DB / 20.0);
    let (f_lo, f_hi) = (sig.freq()[0], sig.freq()[sig.len() - 1]);
    for k in 0..=half {
        let f = k as f64 * df;
        if peak > 0.0 && buf[k].norm() >= floor && (f < f_lo - 1e-9 * df || f > f_hi + 1e-9 * df) {
            return Err(ChannelError::BandNotCovered { f_hz: f });
        }
        let (att, ph) = sig.at(f);
        let h = Complex64::from_polar(10f64.powf(-att / 20.0), ph);
        buf[k] *= h;
        if k == 0 || k == half {
            buf[k] = Complex64::new(buf[k].re, 0.0);
        } else {
            buf[nfft - k] = buf[k].conj();
        }
    }
    planner.plan_fft_inverse(nfft).process(&mut buf);
    let scale = 1.0 / nfft as f64;
    let samples = buf[..total].iter().map(|z| z.re * scale).collect();
    Ok(Waveform::new(samples, dt, w.t0() - pad_before as f64 * dt)?)
}

/// Received waveform after free-space delay `distance/c`, the tapped delay
/// line `cir`, and the medium `sig`.
///
/// The output keeps the input's start epoch and grid. No path loss is
/// applied.
pub fn propagate(
    w: &Waveform,
    distance: f64,
    cir: &ChannelRealization,
    sig: &MaterialSignature,
) -> Result<Waveform, ChannelError> {
    if !(distance.is_finite() && distance > 0.0) {
        return Err(ChannelError::InvalidDistance(distance));
    }
    let flight = distance / SPEED_OF_LIGHT;
    let mut acc: Vec<f64> = Vec::new();
    for tap in &cir.taps {
        let d = delay(w, flight + tap.delay_s)?;
        if acc.len() < d.len() {
            acc.resize(d.len(), 0.0);
        }
        for (a, s) in acc.iter_mut().zip(d.samples()) {
            *a += tap.gain * s;
        }
    }
    let out = Waveform::new(acc, w.dt(), w.t0())?;
    if sig.is_identity() {
        Ok(out)
    } else {
        apply_signature(&out, sig)
    }
}
