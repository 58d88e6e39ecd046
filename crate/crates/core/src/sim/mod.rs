//! Monte-Carlo positioning runs: configuration, single trials, SNR sweeps
//! and their CSV output.

mod config;
mod sweep;
mod trial;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{parse_snr, Placement, SimConfig, SlotMode, PLACEMENT_INSET_M};
pub use sweep::{aggregate, SweepOutput, SweepRow, SweepTable};
pub use trial::{LinkEstimate, LinkResult, TrialResult};

use crate::channel::{material_response, ChannelError, MaterialSignature};
use crate::pulse::{design_pulses, DesignError, PulseSet, PulseSetError};
use crate::ranging::RangingError;
use crate::waveform::WaveformError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    PulseSet(#[from] PulseSetError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ranging(#[from] RangingError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(String),
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io { path: path.to_path_buf(), source }
    }
}

/// A validated configuration together with its pulse set and medium.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    pulses: PulseSet,
    medium: MaterialSignature,
}

impl Simulation {
    /// Loads the configured pulse set, or designs one when no path is given.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let pulses = match &config.pulse_set {
            Some(path) => PulseSet::load(path)?,
            None => design_pulses(&config.design)?.pulse_set,
        };
        Self::with_pulses(config, pulses)
    }

    pub fn with_pulses(config: SimConfig, pulses: PulseSet) -> Result<Self, SimError> {
        config.validate()?;
        let medium = material_response(config.medium);
        let sim = Self { config, pulses, medium };
        // Catches pulses that do not fit the symbol or an off-grid Tsym.
        sim.burst_spec_check()?;
        Ok(sim)
    }

    fn burst_spec_check(&self) -> Result<(), SimError> {
        for l in 0..self.pulses.len() {
            crate::ranging::BurstSpec {
                pulse: self.pulses.pulse(l).clone(),
                symbol_duration: self.config.symbol_duration_s,
                symbol_count: self.config.symbol_count,
                emit_epoch: 0.0,
                pattern: self.config.pattern,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn pulses(&self) -> &PulseSet {
        &self.pulses
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::BSplineBasis;
    use crate::waveform::DEFAULT_DT;
    use crate::SPEED_OF_LIGHT;

    fn pulses() -> PulseSet {
        let basis = BSplineBasis::for_duration(4, 30, 1.28e-9);
        let coeffs = (0..4)
            .map(|l| {
                let mut c: Vec<f64> = (0..30).map(|k| (k as f64 * 0.9 + l as f64).sin()).collect();
                let mean = c.iter().sum::<f64>() / 30.0;
                c.iter_mut().for_each(|x| *x -= mean);
                c
            })
            .collect();
        PulseSet::new(basis, coeffs, DEFAULT_DT).unwrap()
    }

    fn sim(cfg: SimConfig) -> Simulation {
        Simulation::with_pulses(cfg, pulses()).unwrap()
    }

    fn small() -> SimConfig {
        SimConfig { snr_db: vec![10.0, 30.0], trials: 3, ..SimConfig::default() }
    }

    #[test]
    fn noiseless_trial_is_accurate() {
        let s = sim(SimConfig::default());
        for seed in 0..5 {
            let t = s.run_trial(0, f64::INFINITY, seed).unwrap();
            let err = t.position_error_m.expect("fix");
            assert!(err <= 0.015, "seed {seed}: {err}");
            assert_eq!(t.links.len(), 4);
            assert_eq!(t.truth[2], 0.0);
        }
    }

    #[test]
    fn trials_are_deterministic_and_consistent() {
        let s = sim(SimConfig::default());
        let a = s.run_trial(7, 20.0, 99).unwrap();
        assert_eq!(a, s.run_trial(7, 20.0, 99).unwrap());
        assert_ne!(a.truth, s.run_trial(7, 20.0, 100).unwrap().truth);
        for l in &a.links {
            let e = l.estimate.unwrap();
            assert!((e.range_err_m - SPEED_OF_LIGHT * e.toa_err_s).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_serial_matches_parallel() {
        let s = sim(small());
        let a = s.sweep_with(false).unwrap();
        let b = s.sweep_with(true).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.table.write_csv(&mut x).unwrap();
        b.table.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.table.rows.len(), 2);
        assert_eq!(a.trials.len(), 6);
    }

    #[test]
    fn single_trial_table_is_that_trial() {
        let cfg = SimConfig { snr_db: vec![25.0], trials: 1, seed: 5, ..SimConfig::default() };
        let s = sim(cfg);
        let out = s.sweep().unwrap();
        let t = s.run_trial(0, 25.0, crate::seed::trial_seed(5, 0, 0)).unwrap();
        assert_eq!(out.trials, vec![t.clone()]);
        let row = out.table.rows[0];
        assert_eq!(row.mean_position_error_m, t.position_error_m.unwrap());
        assert_eq!(row.position_error_se_m, 0.0);
        let tsym = 50e-9;
        let toa = t.links.iter().map(|l| (l.estimate.unwrap().toa_err_s / tsym).powi(2)).sum::<f64>() / 4.0;
        assert!((row.toa_nmse - toa).abs() <= 1e-15 * toa.max(1e-300));
    }

    #[test]
    fn csv_round_trip() {
        let s = sim(small());
        let out = s.sweep().unwrap();
        let mut buf = Vec::new();
        out.table.write_csv(&mut buf).unwrap();
        assert_eq!(SweepTable::read_csv(&buf[..]).unwrap(), out.table);

        let mut empty = Vec::new();
        SweepTable::default().write_csv(&mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
        let one = SweepTable { rows: out.table.rows[..1].to_vec() };
        let mut b = Vec::new();
        one.write_csv(&mut b).unwrap();
        assert_eq!(String::from_utf8(b).unwrap().lines().count(), 2);

        let dir = tempfile::tempdir().unwrap();
        out.write_all(dir.path()).unwrap();
        assert_eq!(SweepTable::load(&dir.path().join("sweep.csv")).unwrap(), out.table);
        let fixes = std::fs::read_to_string(dir.path().join("fixes.csv")).unwrap();
        assert_eq!(fixes.lines().count(), 7);
        let links = std::fs::read_to_string(dir.path().join("links.csv")).unwrap();
        assert_eq!(links.lines().count(), 25);
    }

    #[test]
    fn serialized_slots_run() {
        let cfg = SimConfig { slot_mode: SlotMode::Serialized, ..SimConfig::default() };
        let s = sim(cfg);
        let t = s.run_trial(0, f64::INFINITY, 3).unwrap();
        assert!(t.position_error_m.unwrap() < 0.05, "{t:?}");
        assert!(t.links[3].true_toa_s > 3.0 * 22.0 * 50e-9);
    }

    #[test]
    fn volume_placement_stays_inside() {
        let s = sim(SimConfig { placement: Placement::Volume, ..SimConfig::default() });
        let t = s.run_trial(0, 30.0, 11).unwrap();
        assert!(t.truth[2] >= PLACEMENT_INSET_M && t.truth[2] <= 3.0 - PLACEMENT_INSET_M);
    }

    #[test]
    fn config_json() {
        let cfg = SimConfig::from_json(r#"{"snr_db": [10, "inf"], "trials": 2}"#).unwrap();
        assert_eq!(cfg.snr_db, vec![10.0, f64::INFINITY]);
        let back = SimConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(SimConfig::from_json(r#"{"trails": 2}"#), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::from_json(r#"{"trials": 0}"#), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::from_json(r#"{"snr_db": []}"#), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::from_json(r#"{"anchors": []}"#), Err(SimError::Config(_))));
        // 30 m diagonal is 100 ns of flight, longer than one symbol.
        let big = r#"{"room": {"min": [0,0,0], "max": [20,20,3]}}"#;
        assert!(matches!(SimConfig::from_json(big), Err(SimError::Config(_))));
        assert_eq!(parse_snr("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_snr(" 12.5").unwrap(), 12.5);
        assert!(parse_snr("loud").is_err());
    }

    #[test]
    fn trial_json_keeps_infinite_snr() {
        let s = sim(SimConfig::default());
        let t = s.run_trial(0, f64::INFINITY, 1).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains(r#""snr_db":"inf""#));
        assert_eq!(serde_json::from_str::<TrialResult>(&text).unwrap(), t);
    }

    #[test]
    fn short_symbol_is_rejected() {
        let cfg = SimConfig { symbol_duration_s: 40e-9 + 25e-12, ..SimConfig::default() };
        assert!(Simulation::with_pulses(cfg, pulses()).is_err());
    }
}
