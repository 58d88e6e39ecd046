//! Uniformly sampled real signals and the sampled-signal arithmetic shared by
//! every other module: energy, inner products, fractional delay, noise
//! injection and cross-correlation.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sampling interval: 20 GSa/s.
pub const DEFAULT_DT: f64 = 50e-12;

/// Half-width, in samples, of the Hann-windowed sinc kernel used by [`delay`].
pub const SINC_HALF_WIDTH: usize = 32;

/// Fractional parts closer than this (in samples) to an integer are treated
/// as exact integer shifts.
const INTEGER_SHIFT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("sample interval must be finite and positive, got {0}")]
    InvalidInterval(f64),
    #[error("waveform needs at least one sample")]
    Empty,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("start epoch must be finite, got {0}")]
    InvalidEpoch(f64),
    #[error("incompatible sample grids: dt {a} vs {b}")]
    GridMismatch { a: f64, b: f64 },
    #[error("start epochs differ by {offset_s} s, which is not a whole number of samples")]
    Misaligned { offset_s: f64 },
    #[error("waveform has zero energy, SNR is undefined")]
    ZeroEnergy,
    #[error("delay must be finite and non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("malformed waveform file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A uniformly sampled real signal.
///
/// Sample `i` sits at time `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWaveform", into = "RawWaveform")]
pub struct Waveform {
    samples: Vec<f64>,
    dt: f64,
    t0: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveform {
    dt: f64,
    t0: f64,
    samples: Vec<f64>,
}

impl TryFrom<RawWaveform> for Waveform {
    type Error = WaveformError;

    fn try_from(raw: RawWaveform) -> Result<Self, Self::Error> {
        Waveform::new(raw.samples, raw.dt, raw.t0)
    }
}

impl From<Waveform> for RawWaveform {
    fn from(w: Waveform) -> Self {
        RawWaveform {
            dt: w.dt,
            t0: w.t0,
            samples: w.samples,
        }
    }
}

impl Waveform {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self, WaveformError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(WaveformError::InvalidInterval(dt));
        }
        if !t0.is_finite() {
            return Err(WaveformError::InvalidEpoch(t0));
        }
        if samples.is_empty() {
            return Err(WaveformError::Empty);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(WaveformError::NonFinite { index });
        }
        Ok(Self { samples, dt, t0 })
    }

    /// All-zero waveform of `len` samples (at least one).
    pub fn zeros(len: usize, dt: f64, t0: f64) -> Result<Self, WaveformError> {
        Self::new(vec![0.0; len.max(1)], dt, t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false: a waveform holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Time of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Span covered by the samples, `len * dt`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn energy(&self) -> f64 {
        energy(self)
    }

    /// Mean of the squared samples over the whole record.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            dt: self.dt,
            t0: self.t0,
        }
    }

    /// Same samples with a different start epoch.
    pub fn with_t0(mut self, t0: f64) -> Waveform {
        self.t0 = t0;
        self
    }

    /// Cuts or zero-pads onto the window `[t_start, t_start + len*dt)`.
    ///
    /// `t_start` must fall on this waveform's sample grid.
    pub fn window(&self, t_start: f64, len: usize) -> Result<Waveform, WaveformError> {
        let offset = grid_offset(self.t0, t_start, self.dt)?;
        let mut out = vec![0.0; len.max(1)];
        for (i, v) in out.iter_mut().enumerate() {
            let src = offset + i as i64;
            if src >= 0 && (src as usize) < self.samples.len() {
                *v = self.samples[src as usize];
            }
        }
        Waveform::new(out, self.dt, t_start)
    }

    /// Sample-wise sum of two waveforms on the same grid; the result spans both.
    pub fn add(&self, other: &Waveform) -> Result<Waveform, WaveformError> {
        check_dt(self.dt, other.dt)?;
        let offset = grid_offset(self.t0, other.t0, self.dt)?;
        let (start, a_off, b_off) = if offset >= 0 {
            (self.t0, 0usize, offset as usize)
        } else {
            (other.t0, (-offset) as usize, 0usize)
        };
        let len = (a_off + self.len()).max(b_off + other.len());
        let mut out = vec![0.0; len];
        for (i, s) in self.samples.iter().enumerate() {
            out[a_off + i] += s;
        }
        for (i, s) in other.samples.iter().enumerate() {
            out[b_off + i] += s;
        }
        Waveform::new(out, self.dt, start)
    }

    /// Writes the `t,amplitude` CSV form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WaveformError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "amplitude"])
            .map_err(|e| WaveformError::Parse(e.to_string()))?;
        for (i, s) in self.samples.iter().enumerate() {
            wtr.write_record([format!("{:.16e}", self.time(i)), format!("{:.16e}", s)])
                .map_err(|e| WaveformError::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the `t,amplitude` CSV form. The interval is taken from the first
    /// two time stamps; the remaining stamps must agree with it.
    pub fn read_csv<R: Read>(reader: R) -> Result<Waveform, WaveformError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| WaveformError::Parse(e.to_string()))?
            .clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "amplitude" {
            return Err(WaveformError::Parse(
                "expected header `t,amplitude`".to_string(),
            ));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| WaveformError::Parse(e.to_string()))?;
            let t: f64 = parse_field(&record[0])?;
            let a: f64 = parse_field(&record[1])?;
            times.push(t);
            samples.push(a);
        }
        if times.is_empty() {
            return Err(WaveformError::Empty);
        }
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            DEFAULT_DT
        };
        for (i, t) in times.iter().enumerate() {
            let expect = times[0] + i as f64 * dt;
            if (t - expect).abs() > 1e-6 * dt {
                return Err(WaveformError::Parse(format!(
                    "time stamp {i} is off the uniform grid"
                )));
            }
        }
        Waveform::new(samples, dt, times[0])
    }
}

fn parse_field(s: &str) -> Result<f64, WaveformError> {
    s.trim()
        .parse()
        .map_err(|_| WaveformError::Parse(format!("not a number: {s:?}")))
}

fn check_dt(a: f64, b: f64) -> Result<(), WaveformError> {
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
        Err(WaveformError::GridMismatch { a, b })
    } else {
        Ok(())
    }
}

/// Whole-sample offset of `t` relative to `origin`.
fn grid_offset(origin: f64, t: f64, dt: f64) -> Result<i64, WaveformError> {
    let offset = (t - origin) / dt;
    let rounded = offset.round();
    if (offset - rounded).abs() > 1e-6 {
        return Err(WaveformError::Misaligned {
            offset_s: t - origin,
        });
    }
    Ok(rounded as i64)
}

/// Sum of squared samples times the sample interval.
pub fn energy(w: &Waveform) -> f64 {
    w.samples.iter().map(|s| s * s).sum::<f64>() * w.dt
}

/// Discrete approximation of the integral of `a(t) * b(t)`.
///
/// Both waveforms must share `dt` and their start epochs must differ by a
/// whole number of samples; samples outside either record count as zero.
pub fn inner_product(a: &Waveform, b: &Waveform) -> Result<f64, WaveformError> {
    check_dt(a.dt, b.dt)?;
    let offset = grid_offset(a.t0, b.t0, a.dt)?;
    // b[j] sits at a-index j + offset
    let mut acc = 0.0;
    for (j, bj) in b.samples.iter().enumerate() {
        let i = j as i64 + offset;
        if i >= 0 && (i as usize) < a.samples.len() {
            acc += a.samples[i as usize] * bj;
        }
    }
    Ok(acc * a.dt)
}

fn hann_sinc(u: f64) -> f64 {
    let half = SINC_HALF_WIDTH as f64;
    if u.abs() >= half {
        return 0.0;
    }
    let sinc = if u.abs() < 1e-12 {
        1.0
    } else {
        (PI * u).sin() / (PI * u)
    };
    sinc * 0.5 * (1.0 + (PI * u / half).cos())
}

/// Kernel taps for a fractional delay `frac` in (0, 1): entry `j` weights
/// the input sample that lands `j - SINC_HALF_WIDTH + 1` samples past the
/// integer shift.
fn fractional_kernel(frac: f64) -> Vec<f64> {
    let h = SINC_HALF_WIDTH as i64;
    (-h + 1..=h).map(|j| hann_sinc(j as f64 - frac)).collect()
}

/// Delays `w` by `tau` seconds, keeping the start epoch and shifting the
/// samples.
///
/// Whole-sample delays are exact shifts. Fractional delays use a Hann-windowed
/// sinc of half-width [`SINC_HALF_WIDTH`]; the output is extended so the
/// kernel tail is kept. Zero input samples are skipped, which keeps sparse
/// pulse trains cheap.
pub fn delay(w: &Waveform, tau: f64) -> Result<Waveform, WaveformError> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(WaveformError::NegativeDelay(tau));
    }
    let d = tau / w.dt;
    let mut shift = d.floor();
    let mut frac = d - shift;
    if frac > 1.0 - INTEGER_SHIFT_EPS {
        shift += 1.0;
        frac = 0.0;
    } else if frac < INTEGER_SHIFT_EPS {
        frac = 0.0;
    }
    let shift = shift as usize;
    let n = w.samples.len();

    if frac == 0.0 {
        let mut out = vec![0.0; n + shift];
        out[shift..].copy_from_slice(&w.samples);
        return Waveform::new(out, w.dt, w.t0);
    }

    let kernel = fractional_kernel(frac);
    let lead = SINC_HALF_WIDTH as i64 - 1;
    let mut out = vec![0.0; n + shift + SINC_HALF_WIDTH];
    let out_len = out.len() as i64;
    for (i, &x) in w.samples.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let base = (i + shift) as i64 - lead;
        for (j, &k) in kernel.iter().enumerate() {
            let m = base + j as i64;
            if m >= 0 && m < out_len {
                out[m as usize] += x * k;
            }
        }
    }
    Waveform::new(out, w.dt, w.t0)
}

/// Adds white Gaussian noise so that mean signal power over noise variance
/// equals `snr_db`.
///
/// `snr_db = f64::INFINITY` is the no-noise sentinel and returns a copy.
/// Noise comes from ChaCha8 seeded with `seed`, so the output is a pure
/// function of `(w, snr_db, seed)`.
pub fn add_awgn(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform, WaveformError> {
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    let power = w.mean_power();
    if power <= 0.0 {
        return Err(WaveformError::ZeroEnergy);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            s + sigma * n
        })
        .collect();
    Waveform::new(samples, w.dt, w.t0)
}

/// Full linear cross-correlation of two waveforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// Lag in seconds, including the difference of start epochs.
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl Correlation {
    pub fn peak_index(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    pub fn peak_lag(&self) -> f64 {
        self.lags[self.peak_index()]
    }

    /// Peak lag refined by a three-point parabola through the maximum.
    pub fn peak_lag_interpolated(&self) -> f64 {
        let i = self.peak_index();
        if i == 0 || i + 1 >= self.values.len() {
            return self.lags[i];
        }
        let (ym, y0, yp) = (self.values[i - 1], self.values[i], self.values[i + 1]);
        let denom = ym - 2.0 * y0 + yp;
        if denom.abs() < f64::MIN_POSITIVE {
            return self.lags[i];
        }
        let delta = 0.5 * (ym - yp) / denom;
        let step = self.lags[i + 1] - self.lags[i];
        self.lags[i] + delta * step
    }
}

/// `values[k] = dt * sum_n a[n] * b[n + lag_k]`; the peak lag is positive
/// when `b` is a delayed copy of `a`.
pub fn cross_correlate(a: &Waveform, b: &Waveform) -> Result<Correlation, WaveformError> {
    check_dt(a.dt, b.dt)?;
    let na = a.len();
    let nb = b.len();
    let count = na + nb - 1;
    let values = if na.saturating_mul(nb) <= 1 << 16 {
        let mut v = vec![0.0; count];
        for (k, out) in v.iter_mut().enumerate() {
            let lag = k as i64 - (na as i64 - 1);
            let mut acc = 0.0;
            for (n, an) in a.samples.iter().enumerate() {
                let j = n as i64 + lag;
                if j >= 0 && (j as usize) < nb {
                    acc += an * b.samples[j as usize];
                }
            }
            *out = acc * a.dt;
        }
        v
    } else {
        fft_xcorr(&a.samples, &b.samples)
            .into_iter()
            .map(|x| x * a.dt)
            .collect()
    };
    let epoch_shift = b.t0 - a.t0;
    let lags = (0..count)
        .map(|k| (k as f64 - (na as f64 - 1.0)) * a.dt + epoch_shift)
        .collect();
    Ok(Correlation { lags, values })
}

fn fft_xcorr(a: &[f64], b: &[f64]) -> Vec<f64> {
    let count = a.len() + b.len() - 1;
    let nfft = count.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    // Reverse a so the linear convolution of rev(a) and b is the correlation.
    let mut fa: Vec<Complex64> = vec![Complex64::default(); nfft];
    for (i, &x) in a.iter().rev().enumerate() {
        fa[i] = Complex64::new(x, 0.0);
    }
    let mut fb: Vec<Complex64> = vec![Complex64::default(); nfft];
    for (i, &x) in b.iter().enumerate() {
        fb[i] = Complex64::new(x, 0.0);
    }
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.iter().take(count).map(|c| c.re / nfft as f64).collect()
}
