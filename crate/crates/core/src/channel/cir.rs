use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ChannelError;

/// Parameters of the tapped-delay-line generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelProfile {
    pub tap_count_min: usize,
    pub tap_count_max: usize,
    /// Mean of the exponential inter-arrival times.
    pub mean_spacing_s: f64,
    /// Amplitude decay constant: `E|g(τ)| ∝ exp(−τ/decay)`.
    pub decay_s: f64,
    /// Fixed gap between the LOS tap and the first echo window.
    pub first_arrival_gap_s: f64,
    /// Minimum excess delay of the last tap; shorter realizations are
    /// stretched.
    pub delay_spread_target_s: f64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self {
            tap_count_min: 20,
            tap_count_max: 40,
            mean_spacing_s: 5e-9,
            decay_s: 20e-9,
            first_arrival_gap_s: 3e-9,
            delay_spread_target_s: 50e-9,
        }
    }
}

impl ChannelProfile {
    /// Single unit tap.
    pub fn line_of_sight() -> Self {
        Self { tap_count_min: 1, tap_count_max: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |s: &str| Err(ChannelError::InvalidProfile(s.to_string()));
        if self.tap_count_min == 0 || self.tap_count_min > self.tap_count_max {
            return bad("need 1 <= tap_count_min <= tap_count_max");
        }
        let positive = [self.mean_spacing_s, self.decay_s, self.delay_spread_target_s];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("spacing, decay and delay-spread target must be positive");
        }
        if !(self.first_arrival_gap_s.is_finite() && self.first_arrival_gap_s >= 0.0) {
            return bad("first arrival gap must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_s: f64,
    pub gain: f64,
}

/// Tap list with the LOS tap first at zero delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub taps: Vec<Tap>,
    /// Excess delay of the last tap.
    pub delay_spread_s: f64,
}

impl ChannelRealization {
    pub fn line_of_sight() -> Self {
        Self { taps: vec![Tap { delay_s: 0.0, gain: 1.0 }], delay_spread_s: 0.0 }
    }

    /// Power-weighted RMS delay spread.
    pub fn rms_delay_spread(&self) -> f64 {
        let p: f64 = self.taps.iter().map(|t| t.gain * t.gain).sum();
        let mean = self.taps.iter().map(|t| t.gain * t.gain * t.delay_s).sum::<f64>() / p;
        let var = self
            .taps
            .iter()
            .map(|t| t.gain * t.gain * (t.delay_s - mean).powi(2))
            .sum::<f64>()
            / p;
        var.sqrt()
    }

    /// CSV `delay_s,gain`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ChannelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| ChannelError::Parse(e.to_string());
        wtr.write_record(["delay_s", "gain"]).map_err(err)?;
        for t in &self.taps {
            wtr.write_record([format!("{:.16e}", t.delay_s), format!("{:.16e}", t.gain)])
                .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Draws a multipath realization.
///
/// The LOS tap has gain 1 at delay 0. Echo `k` arrives at
/// `gap + Σ_{j≤k} Exp(mean_spacing)`; its gain is a random sign times a
/// unit-power Rayleigh amplitude times `exp(−delay/decay)`. If the last echo
/// lands before the delay-spread target, all echo delays are scaled up so it
/// lands on the target.
pub fn sample_cir(profile: &ChannelProfile, seed: u64) -> Result<ChannelRealization, ChannelError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(profile.tap_count_min..=profile.tap_count_max);
    if count == 1 {
        return Ok(ChannelRealization::line_of_sight());
    }
    let spacing = Exp::new(1.0 / profile.mean_spacing_s).expect("rate is positive");
    let mut delays = Vec::with_capacity(count);
    delays.push(0.0);
    let mut cur = profile.first_arrival_gap_s;
    for _ in 1..count {
        cur += spacing.sample(&mut rng);
        delays.push(cur);
    }
    let last = cur;
    if last < profile.delay_spread_target_s {
        let scale = profile.delay_spread_target_s / last;
        delays.iter_mut().for_each(|d| *d *= scale);
    }
    let mut taps = Vec::with_capacity(count);
    taps.push(Tap { delay_s: 0.0, gain: 1.0 });
    for &d in &delays[1..] {
        let x: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let amplitude = ((x * x + y * y) / 2.0).sqrt();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        taps.push(Tap { delay_s: d, gain: sign * amplitude * (-d / profile.decay_s).exp() });
    }
    let delay_spread_s = delays[count - 1];
    Ok(ChannelRealization { taps, delay_spread_s })
}
