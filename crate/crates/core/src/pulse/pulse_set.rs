use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bspline::{synthesize_pulse, BSplineBasis};
use super::spectrum::{effectiveness, psd, SpectralMask, SpectrumError};
use crate::waveform::{inner_product, Waveform, WaveformError};

/// Largest accepted `|Σ_k c_{l,k}|` for a loaded pulse set.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// Largest accepted normalized Gram off-diagonal for a loaded pulse set.
pub const ORTHOGONALITY_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PulseSetError {
    #[error("pulse set needs at least one coefficient row")]
    NoPulses,
    #[error("row {row} has {got} coefficients, basis has {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
    #[error("invalid basis: {0}")]
    Basis(String),
    #[error("row {row} sums to {sum:e}, not zero")]
    RowSum { row: usize, sum: f64 },
    #[error("pulses {l} and {p} have normalized cross-energy {value:.4}")]
    NotOrthogonal { l: usize, p: usize, value: f64 },
    #[error("stored Es {stored:e} disagrees with synthesized {computed:e}")]
    EnergyMismatch { stored: f64, computed: f64 },
    #[error("malformed pulse-set file: {0}")]
    Parse(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `L` pulses on a shared B-spline basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSet {
    basis: BSplineBasis,
    coeffs: Vec<Vec<f64>>,
    pulses: Vec<Waveform>,
    energy_es: f64,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PulseSetFile {
    basis: BSplineBasis,
    coeffs: Vec<Vec<f64>>,
    #[serde(rename = "Es")]
    es: f64,
    dt: f64,
}

impl PulseSet {
    /// Synthesizes every row; `E_s` is the mean pulse energy. Constraints are
    /// not checked here, see [`PulseSet::verify`].
    pub fn new(basis: BSplineBasis, coeffs: Vec<Vec<f64>>, dt: f64) -> Result<Self, PulseSetError> {
        if basis.m == 0 || basis.ns == 0 || !(basis.t_knot.is_finite() && basis.t_knot > 0.0) {
            return Err(PulseSetError::Basis(format!("{basis:?}")));
        }
        if coeffs.is_empty() {
            return Err(PulseSetError::NoPulses);
        }
        for (row, c) in coeffs.iter().enumerate() {
            if c.len() != basis.ns {
                return Err(PulseSetError::RowLength { row, got: c.len(), expected: basis.ns });
            }
        }
        let pulses = coeffs
            .iter()
            .map(|c| synthesize_pulse(c, &basis, dt))
            .collect::<Result<Vec<_>, _>>()?;
        let energy_es = pulses.iter().map(Waveform::energy).sum::<f64>() / pulses.len() as f64;
        Ok(Self { basis, coeffs, pulses, energy_es, dt })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn pulses(&self) -> &[Waveform] {
        &self.pulses
    }

    pub fn pulse(&self, l: usize) -> &Waveform {
        &self.pulses[l]
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    /// Always false: a pulse set holds at least one pulse.
    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn energy_es(&self) -> f64 {
        self.energy_es
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.iter().sum()).collect()
    }

    /// Spectral effectiveness of each pulse against `mask`.
    pub fn effectiveness(
        &self,
        mask: &SpectralMask,
        nfft: usize,
        prf_hz: f64,
    ) -> Result<Vec<f64>, SpectrumError> {
        self.pulses
            .iter()
            .map(|p| effectiveness(&psd(p, nfft, prf_hz)?, mask))
            .collect()
    }

    /// Checks the zero-sum and orthogonality constraints.
    pub fn verify(&self) -> Result<(), PulseSetError> {
        for (row, sum) in self.row_sums().into_iter().enumerate() {
            if sum.abs() >= ROW_SUM_TOLERANCE {
                return Err(PulseSetError::RowSum { row, sum });
            }
        }
        let g = orthogonality_matrix(self);
        for (l, row) in g.iter().enumerate() {
            for (p, &value) in row.iter().enumerate() {
                if l != p && value.abs() > ORTHOGONALITY_TOLERANCE {
                    return Err(PulseSetError::NotOrthogonal { l, p, value });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PulseSetFile {
            basis: self.basis,
            coeffs: self.coeffs.clone(),
            es: self.energy_es,
            dt: self.dt,
        };
        serde_json::to_string_pretty(&file).expect("pulse set serializes")
    }

    /// Parses the JSON form, re-synthesizes the pulses and re-verifies the
    /// constraints.
    pub fn from_json(text: &str) -> Result<Self, PulseSetError> {
        let file: PulseSetFile =
            serde_json::from_str(text).map_err(|e| PulseSetError::Parse(e.to_string()))?;
        let set = Self::new(file.basis, file.coeffs, file.dt)?;
        set.verify()?;
        if (set.energy_es - file.es).abs() > 1e-6 * set.energy_es.abs().max(f64::MIN_POSITIVE) {
            return Err(PulseSetError::EnergyMismatch { stored: file.es, computed: set.energy_es });
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PulseSetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PulseSetError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// CSV `t,pulse_1,...,pulse_L`.
    pub fn write_pulses_csv<W: Write>(&self, writer: W) -> Result<(), PulseSetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.len()).map(|l| format!("pulse_{l}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.pulses[0].len() {
            let mut rec = vec![format!("{:.16e}", i as f64 * self.dt)];
            rec.extend(self.pulses.iter().map(|p| format!("{:.16e}", p.samples()[i])));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// CSV `freq_hz,mask_dbm_per_mhz,psd_1,...,psd_L` over the bins the mask
    /// covers.
    pub fn write_psd_csv<W: Write>(
        &self,
        writer: W,
        mask: &SpectralMask,
        nfft: usize,
        prf_hz: f64,
    ) -> Result<(), PulseSetError> {
        let spectra = self
            .pulses
            .iter()
            .map(|p| psd(p, nfft, prf_hz))
            .collect::<Result<Vec<_>, _>>()?;
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["freq_hz".to_string(), "mask_dbm_per_mhz".to_string()];
        header.extend((1..=self.len()).map(|l| format!("psd_{l}")));
        wtr.write_record(&header).map_err(csv_err)?;
        for (k, &f) in spectra[0].freq.iter().enumerate() {
            let Some(lim) = mask.limit_at(f) else { continue };
            let mut rec = vec![format!("{:.16e}", f), format!("{:.16e}", lim)];
            rec.extend(spectra.iter().map(|s| format!("{:.16e}", s.density[k])));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> PulseSetError {
    PulseSetError::Parse(e.to_string())
}

/// `G[l][p] = <ψ_l, ψ_p> / E_s`.
pub fn orthogonality_matrix(ps: &PulseSet) -> Vec<Vec<f64>> {
    let es = ps.energy_es();
    ps.pulses()
        .iter()
        .map(|a| {
            ps.pulses()
                .iter()
                .map(|b| inner_product(a, b).expect("pulses share a grid") / es)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> BSplineBasis {
        BSplineBasis { m: 2, t_knot: 0.1e-9, ns: 4 }
    }

    #[test]
    fn single_pulse_gram_is_one() {
        let ps = PulseSet::new(basis(), vec![vec![1.0, -1.0, 0.5, -0.5]], 25e-12).unwrap();
        let g = orthogonality_matrix(&ps);
        assert_eq!(g.len(), 1);
        assert!((g[0][0] - 1.0).abs() < 1e-12);
        ps.verify().unwrap();
    }

    #[test]
    fn duplicated_rows_are_not_orthogonal() {
        let row = vec![1.0, -1.0, 0.5, -0.5];
        let ps = PulseSet::new(basis(), vec![row.clone(), row], 25e-12).unwrap();
        let g = orthogonality_matrix(&ps);
        assert!((g[0][1] - 1.0).abs() < 1e-12);
        assert!(matches!(ps.verify(), Err(PulseSetError::NotOrthogonal { .. })));
    }

    #[test]
    fn nonzero_row_sum_rejected() {
        let ps = PulseSet::new(basis(), vec![vec![1.0, 0.0, 0.0, 0.0]], 25e-12).unwrap();
        assert!(matches!(ps.verify(), Err(PulseSetError::RowSum { row: 0, .. })));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let ps = PulseSet::new(basis(), vec![vec![1.0, -1.0, 0.5, -0.5]], 25e-12).unwrap();
        let text = ps.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["basis"]["T"].is_number() && v["basis"]["Ns"] == 4 && v["Es"].is_number());
        assert_eq!(PulseSet::from_json(&text).unwrap(), ps);

        let tampered = text.replace("-0.5", "-0.4");
        assert!(matches!(PulseSet::from_json(&tampered), Err(PulseSetError::RowSum { .. })));
        let mut v2 = v.clone();
        v2["Es"] = serde_json::json!(1.0);
        assert!(matches!(
            PulseSet::from_json(&v2.to_string()),
            Err(PulseSetError::EnergyMismatch { .. })
        ));
        let mut v3 = v;
        v3["extra"] = serde_json::json!(0);
        assert!(matches!(PulseSet::from_json(&v3.to_string()), Err(PulseSetError::Parse(_))));
    }

    #[test]
    fn csv_shapes() {
        let ps = PulseSet::new(basis(), vec![vec![1.0, -1.0, 0.5, -0.5]; 2], 25e-12).unwrap();
        let mut buf = Vec::new();
        ps.write_pulses_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,pulse_1,pulse_2\n"));
        assert_eq!(text.lines().count(), 1 + ps.pulse(0).len());

        let mut buf = Vec::new();
        ps.write_psd_csv(&mut buf, &SpectralMask::fcc_like(), 1024, 20e6).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("freq_hz,mask_dbm_per_mhz,psd_1,psd_2\n"));
    }
}
