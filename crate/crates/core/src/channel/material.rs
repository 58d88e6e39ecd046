use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ChannelError;

/// Frequency grid of the synthetic signatures.
pub const SIGNATURE_F_MAX_HZ: f64 = 10e9;
pub const SIGNATURE_STEP_HZ: f64 = 2e6;

/// Center of the quadratic phase term of body-containing media.
pub const HUMAN_PHASE_CENTER_HZ: f64 = 4.25e9;
/// Window over which the quadratic phase term leaves 1 rad RMS of residual
/// after a linear fit.
pub const HUMAN_PHASE_WINDOW_HZ: f64 = 200e6;

/// Curvature `q` (rad/Hz²) of the quadratic phase term.
///
/// Over a window of width `W` the linear-fit residual of `q·f²` has RMS
/// `q·W²·√(1/80 − 1/144)`; `q` is chosen so this is 1 rad for
/// `W = HUMAN_PHASE_WINDOW_HZ`.
pub fn human_phase_curvature() -> f64 {
    let w = HUMAN_PHASE_WINDOW_HZ;
    1.0 / (w * w * (1.0f64 / 80.0 - 1.0 / 144.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    FreeSpace,
    WoodDoor,
    BrickWall,
    Human,
    HumanBehindDoor,
    HumanBehindWall,
}

impl MaterialKind {
    pub const ALL: [MaterialKind; 6] = [
        MaterialKind::FreeSpace,
        MaterialKind::WoodDoor,
        MaterialKind::BrickWall,
        MaterialKind::Human,
        MaterialKind::HumanBehindDoor,
        MaterialKind::HumanBehindWall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaterialKind::FreeSpace => "free_space",
            MaterialKind::WoodDoor => "wood_door",
            MaterialKind::BrickWall => "brick_wall",
            MaterialKind::Human => "human",
            MaterialKind::HumanBehindDoor => "human_behind_door",
            MaterialKind::HumanBehindWall => "human_behind_wall",
        }
    }

    pub fn contains_human(self) -> bool {
        matches!(
            self,
            MaterialKind::Human | MaterialKind::HumanBehindDoor | MaterialKind::HumanBehindWall
        )
    }

    /// (mean attenuation dB, through-medium delay s).
    fn parameters(self) -> (f64, f64) {
        match self {
            MaterialKind::FreeSpace => (0.0, 0.0),
            MaterialKind::WoodDoor => (9.5, 0.15e-9),
            MaterialKind::BrickWall => (10.5, 0.6e-9),
            MaterialKind::Human => (49.0, 1.2e-9),
            MaterialKind::HumanBehindDoor => (50.0, 1.35e-9),
            MaterialKind::HumanBehindWall => (51.0, 1.8e-9),
        }
    }
}

impl fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaterialKind {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MaterialKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ChannelError::Parse(format!("unknown material kind {s:?}")))
    }
}

/// Attenuation (dB, positive is loss) and unwrapped phase (rad) on a
/// strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSignature {
    freq: Vec<f64>,
    attenuation_db: Vec<f64>,
    phase_rad: Vec<f64>,
}

impl MaterialSignature {
    pub fn new(freq: Vec<f64>, attenuation_db: Vec<f64>, phase_rad: Vec<f64>) -> Result<Self, ChannelError> {
        let bad = |s: &str| Err(ChannelError::Signature(s.to_string()));
        if freq.is_empty() {
            return bad("empty frequency grid");
        }
        if freq.len() != attenuation_db.len() || freq.len() != phase_rad.len() {
            return bad("frequency, attenuation and phase lengths differ");
        }
        if freq.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("frequency grid must be strictly increasing");
        }
        let all = freq.iter().chain(&attenuation_db).chain(&phase_rad);
        if all.clone().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        Ok(Self { freq, attenuation_db, phase_rad })
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn attenuation_db(&self) -> &[f64] {
        &self.attenuation_db
    }

    pub fn phase_rad(&self) -> &[f64] {
        &self.phase_rad
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    /// Always false: a signature holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Zero attenuation and zero phase everywhere.
    pub fn is_identity(&self) -> bool {
        self.attenuation_db.iter().all(|&a| a == 0.0) && self.phase_rad.iter().all(|&p| p == 0.0)
    }

    /// Restriction to `[f_lo, f_hi]`.
    pub fn band(&self, f_lo: f64, f_hi: f64) -> Result<Self, ChannelError> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.freq[i] >= f_lo && self.freq[i] <= f_hi).collect();
        Self::new(
            idx.iter().map(|&i| self.freq[i]).collect(),
            idx.iter().map(|&i| self.attenuation_db[i]).collect(),
            idx.iter().map(|&i| self.phase_rad[i]).collect(),
        )
    }

    /// Linearly interpolated (attenuation, phase) at `f`, clamped to the
    /// grid ends.
    pub fn at(&self, f: f64) -> (f64, f64) {
        let n = self.freq.len();
        if n == 1 || f <= self.freq[0] {
            return (self.attenuation_db[0], self.phase_rad[0]);
        }
        if f >= self.freq[n - 1] {
            return (self.attenuation_db[n - 1], self.phase_rad[n - 1]);
        }
        let hi = self.freq.partition_point(|&x| x <= f);
        let lo = hi - 1;
        let u = (f - self.freq[lo]) / (self.freq[hi] - self.freq[lo]);
        let lerp = |v: &[f64]| v[lo] + u * (v[hi] - v[lo]);
        (lerp(&self.attenuation_db), lerp(&self.phase_rad))
    }

    /// Range of the group delay `−(1/2π)·dφ/df` over the grid.
    pub fn group_delay_range(&self) -> (f64, f64) {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for i in 1..self.freq.len() {
            let g = -(self.phase_rad[i] - self.phase_rad[i - 1]) / (2.0 * PI * (self.freq[i] - self.freq[i - 1]));
            lo = lo.min(g);
            hi = hi.max(g);
        }
        (lo, hi)
    }

    /// CSV `freq_hz,attenuation_db,phase_rad`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ChannelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| ChannelError::Parse(e.to_string());
        wtr.write_record(["freq_hz", "attenuation_db", "phase_rad"]).map_err(err)?;
        for i in 0..self.len() {
            wtr.write_record([
                format!("{:.16e}", self.freq[i]),
                format!("{:.16e}", self.attenuation_db[i]),
                format!("{:.16e}", self.phase_rad[i]),
            ])
            .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ChannelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let err = |e: csv::Error| ChannelError::Parse(e.to_string());
        let headers = rdr.headers().map_err(err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["freq_hz", "attenuation_db", "phase_rad"] {
            return Err(ChannelError::Parse("expected header `freq_hz,attenuation_db,phase_rad`".into()));
        }
        let (mut f, mut a, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(err)?;
            let num = |i: usize| {
                rec[i].trim().parse::<f64>().map_err(|_| ChannelError::Parse(format!("not a number: {:?}", &rec[i])))
            };
            f.push(num(0)?);
            a.push(num(1)?);
            p.push(num(2)?);
        }
        Self::new(f, a, p)
    }
}

/// Synthetic signature of `kind` on 0–10 GHz in 2 MHz steps.
///
/// Attenuation is the kind's mean level plus a ±0.5 dB tilt across the grid.
/// Phase is `−2πfτ`, plus `q·(f − 4.25 GHz)²` for media that contain a body.
/// Free space is exactly 0 dB and 0 rad.
pub fn material_response(kind: MaterialKind) -> MaterialSignature {
    let n = (SIGNATURE_F_MAX_HZ / SIGNATURE_STEP_HZ).round() as usize + 1;
    let freq: Vec<f64> = (0..n).map(|i| i as f64 * SIGNATURE_STEP_HZ).collect();
    let (level, tau) = kind.parameters();
    let tilt = if level > 0.0 { 0.5 } else { 0.0 };
    let attenuation_db = freq
        .iter()
        .map(|&f| level + tilt * (2.0 * f / SIGNATURE_F_MAX_HZ - 1.0))
        .collect();
    let q = if kind.contains_human() { human_phase_curvature() } else { 0.0 };
    let phase_rad = freq
        .iter()
        .map(|&f| -2.0 * PI * f * tau + q * (f - HUMAN_PHASE_CENTER_HZ).powi(2))
        .collect();
    MaterialSignature::new(freq, attenuation_db, phase_rad).expect("synthetic signature is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_gives_one_radian_per_window() {
        // Direct check: fit a line to q·f² sampled densely over one window.
        let q = human_phase_curvature();
        let n = 20_001;
        let f: Vec<f64> = (0..n).map(|i| (i as f64 / (n - 1) as f64 - 0.5) * HUMAN_PHASE_WINDOW_HZ).collect();
        let y: Vec<f64> = f.iter().map(|x| q * x * x).collect();
        let mean_y = y.iter().sum::<f64>() / n as f64;
        // Symmetric grid: the slope of the fit is zero, so the residual is
        // y − mean(y).
        let rms = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-3, "rms {rms}");
    }

    #[test]
    fn free_space_is_identity() {
        let s = material_response(MaterialKind::FreeSpace);
        assert!(s.is_identity());
        assert_eq!(s.len(), 5001);
        assert_eq!(s.freq()[5000], 10e9);
    }

    #[test]
    fn attenuation_levels() {
        for kind in MaterialKind::ALL {
            let s = material_response(kind);
            let mean = s.attenuation_db().iter().sum::<f64>() / s.len() as f64;
            let (level, _) = kind.parameters();
            assert!((mean - level).abs() < 1e-9);
            assert!(s.attenuation_db().iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn interpolation_and_group_delay() {
        let s = material_response(MaterialKind::BrickWall);
        let (a, p) = s.at(3.001e9);
        assert!((p + 2.0 * PI * 3.001e9 * 0.6e-9).abs() < 1e-9);
        assert!(a > 10.0 && a < 11.0);
        let (lo, hi) = s.group_delay_range();
        assert!(lo == 0.0 && (hi - 0.6e-9).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for kind in MaterialKind::ALL {
            assert_eq!(kind.name().parse::<MaterialKind>().unwrap(), kind);
            assert_eq!(serde_json::to_string(&kind).unwrap(), format!("\"{}\"", kind.name()));
        }
        assert!("steel".parse::<MaterialKind>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = material_response(MaterialKind::Human).band(3e9, 3.1e9).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"freq_hz,attenuation_db,phase_rad\n"));
        assert_eq!(MaterialSignature::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(MaterialSignature::new(vec![1.0, 1.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(MaterialSignature::new(vec![1.0], vec![0.0; 2], vec![0.0]).is_err());
        assert!(MaterialSignature::new(vec![], vec![], vec![]).is_err());
    }
}
