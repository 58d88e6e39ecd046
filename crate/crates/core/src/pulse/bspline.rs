use serde::{Deserialize, Serialize};

use crate::waveform::{Waveform, WaveformError};

/// Cardinal B-spline of order `m` with knot spacing `T`, evaluated at `t`.
///
/// The order-`m` spline is the `m`-fold convolution of the indicator of
/// `[0, T)` rescaled so that integer-`T` shifts sum to one. Its support is
/// `[0, mT]`. Order 1 is the half-open box.
pub fn bspline_eval(m: usize, t_knot: f64, t: f64) -> f64 {
    assert!(m >= 1, "B-spline order must be at least 1");
    assert!(t_knot > 0.0, "knot spacing must be positive");
    let x = t / t_knot;
    let mf = m as f64;
    if m == 1 {
        return if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    if x <= 0.0 || x >= mf {
        return 0.0;
    }
    // Mirror onto the left half, where the truncated-power sum has fewer
    // terms and less cancellation.
    let x = if x > 0.5 * mf { mf - x } else { x };
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=m {
        let u = x - j as f64;
        if u <= 0.0 {
            break;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * u.powi(m as i32 - 1);
        binom = binom * (m - j) as f64 / (j + 1) as f64;
    }
    acc / factorial(m - 1)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `Ns` shifted copies `φ_m(t − kT)`, `k = 0..Ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub m: usize,
    #[serde(rename = "T")]
    pub t_knot: f64,
    #[serde(rename = "Ns")]
    pub ns: usize,
}

impl BSplineBasis {
    /// Basis whose combined support `(Ns + m − 1)·T` equals `duration`.
    pub fn for_duration(m: usize, ns: usize, duration: f64) -> Self {
        Self {
            m,
            t_knot: duration / (ns + m - 1) as f64,
            ns,
        }
    }

    pub fn support(&self) -> f64 {
        (self.ns + self.m - 1) as f64 * self.t_knot
    }

    pub fn eval(&self, k: usize, t: f64) -> f64 {
        bspline_eval(self.m, self.t_knot, t - k as f64 * self.t_knot)
    }

    /// Sample count used for pulses on this basis: every grid point in
    /// `[0, support]`.
    pub fn sample_count(&self, dt: f64) -> usize {
        (self.support() / dt + 1e-9).floor() as usize + 1
    }

    /// Sampled basis functions, one row per `k`.
    pub fn sampled(&self, dt: f64) -> Vec<Vec<f64>> {
        let n = self.sample_count(dt);
        (0..self.ns)
            .map(|k| (0..n).map(|i| self.eval(k, i as f64 * dt)).collect())
            .collect()
    }
}

/// Samples `Σ_k coeffs[k]·φ_m(t − kT)` on `[0, support]` with step `dt`.
pub fn synthesize_pulse(
    coeffs: &[f64],
    basis: &BSplineBasis,
    dt: f64,
) -> Result<Waveform, WaveformError> {
    assert_eq!(coeffs.len(), basis.ns, "coefficient count must equal Ns");
    let n = basis.sample_count(dt);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(k, c)| c * basis.eval(k, t))
                .sum()
        })
        .collect();
    Waveform::new(samples, dt, 0.0)
}
