use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{snr_value, Placement, SlotMode, PLACEMENT_INSET_M};
use super::{SimError, Simulation};
use crate::channel::{propagate, sample_cir};
use crate::positioning::{
    bancroft_solve, bancroft_synchronized, position_error, select_solution, PositionFix, PositioningError, Selection,
    SelectionRule,
};
use crate::ranging::{estimate_toa, make_burst, range_from_toa, BurstSpec};
use crate::seed::{derive_seed, tags};
use crate::waveform::{add_awgn, Waveform};
use crate::SPEED_OF_LIGHT;

/// Ranging outcome for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub anchor_id: String,
    pub distance_m: f64,
    /// Absolute time at which the line-of-sight path arrives.
    pub true_toa_s: f64,
    pub estimate: Option<LinkEstimate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEstimate {
    pub toa_s: f64,
    pub range_m: f64,
    pub toa_err_s: f64,
    pub range_err_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    #[serde(with = "snr_value")]
    pub snr_db: f64,
    pub seed: u64,
    pub truth: [f64; 3],
    /// One entry per anchor, in anchor order.
    pub links: Vec<LinkResult>,
    pub fix: Option<PositionFix>,
    pub selection: Option<SelectionRule>,
    pub failure: Option<String>,
    pub position_error_m: Option<f64>,
}

impl TrialResult {
    /// Link estimates, if every anchor produced one.
    pub fn ranges(&self) -> Option<Vec<f64>> {
        self.links.iter().map(|l| l.estimate.map(|e| e.range_m)).collect()
    }
}

impl Simulation {
    /// General closed form, falling back to the zero-bias form as described
    /// on [`SimConfig::bias_gate_m`](super::SimConfig::bias_gate_m).
    fn locate(&self, ranges: &[f64]) -> Result<Selection, PositioningError> {
        let anchors = &self.config.anchors;
        let room = &self.config.room;
        let general = bancroft_solve(anchors, ranges).and_then(|c| select_solution(&c, room));
        let Some(gate) = self.config.bias_gate_m else {
            return general;
        };
        if matches!(&general, Ok(sel) if sel.fix.clock_bias.abs() <= gate) {
            return general;
        }
        match bancroft_synchronized(anchors, ranges).and_then(|c| select_solution(&c, room)) {
            Ok(sel) if sel.fix.residual_rms <= gate => Ok(sel),
            _ => general,
        }
    }

    fn draw_truth(&self, seed: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::PLACEMENT));
        let room = &self.config.room;
        let mut axis = |k: usize| rng.random_range(room.min[k] + PLACEMENT_INSET_M..room.max[k] - PLACEMENT_INSET_M);
        let (x, y) = (axis(0), axis(1));
        let z = match self.config.placement {
            Placement::Floor => room.min[2],
            Placement::Volume => axis(2),
        };
        [x, y, z]
    }

    fn burst_spec(&self, anchor: usize, emit_epoch: f64) -> BurstSpec {
        BurstSpec {
            pulse: self.pulses.pulse(anchor % self.pulses.len()).clone(),
            symbol_duration: self.config.symbol_duration_s,
            symbol_count: self.config.symbol_count,
            emit_epoch,
            pattern: self.config.pattern,
        }
    }

    /// Length of one receive window, in samples.
    fn window_len(&self) -> usize {
        let n = (self.config.symbol_duration_s / self.pulses.dt()).round() as usize;
        (self.config.symbol_count + 1) * n
    }

    /// Start of anchor `l`'s slot. Serialized slots leave one spare symbol
    /// after each receive window.
    fn emit_epoch(&self, anchor: usize) -> f64 {
        match self.config.slot_mode {
            SlotMode::Shared => 0.0,
            SlotMode::Serialized => {
                anchor as f64 * (self.config.symbol_count + 2) as f64 * self.config.symbol_duration_s
            }
        }
    }

    /// Noise-free received signal from anchor `l`, over its own slot.
    fn receive(&self, anchor: usize, distance: f64, seed: u64) -> Result<Waveform, SimError> {
        let spec = self.burst_spec(anchor, self.emit_epoch(anchor));
        let burst = make_burst(&spec)?;
        let cir = sample_cir(&self.config.channel, derive_seed(derive_seed(seed, tags::CHANNEL), anchor as u64))?;
        Ok(propagate(&burst, distance, &cir, &self.medium)?)
    }

    /// Received records per anchor, with noise, each covering that anchor's
    /// receive window.
    fn received_records(&self, distances: &[f64], snr_db: f64, seed: u64) -> Result<Vec<Waveform>, SimError> {
        let noise = derive_seed(seed, tags::NOISE);
        let len = self.window_len();
        match self.config.slot_mode {
            SlotMode::Shared => distances
                .iter()
                .enumerate()
                .map(|(l, &d)| {
                    let rx = self.receive(l, d, seed)?.window(0.0, len)?;
                    Ok(add_awgn(&rx, snr_db, derive_seed(noise, l as u64))?)
                })
                .collect(),
            SlotMode::Serialized => {
                let total = self.emit_epoch(distances.len()) / self.pulses.dt();
                let mut record = Waveform::zeros(total.round() as usize, self.pulses.dt(), 0.0)?;
                for (l, &d) in distances.iter().enumerate() {
                    record = record.add(&self.receive(l, d, seed)?)?;
                }
                let record = add_awgn(&record.window(0.0, total.round() as usize)?, snr_db, noise)?;
                (0..distances.len())
                    .map(|l| Ok(record.window(self.emit_epoch(l), len)?))
                    .collect()
            }
        }
    }

    /// One positioning trial at `snr_db`, fully determined by `seed`.
    ///
    /// Ranging and solver failures are recorded in the result.
    pub fn run_trial(&self, trial: usize, snr_db: f64, seed: u64) -> Result<TrialResult, SimError> {
        let anchors = &self.config.anchors;
        let truth = self.draw_truth(seed);
        let distances: Vec<f64> = anchors.iter().map(|a| a.distance_to(&truth)).collect();
        let records = self.received_records(&distances, snr_db, seed)?;

        let links: Vec<LinkResult> = anchors
            .iter()
            .zip(&distances)
            .zip(&records)
            .enumerate()
            .map(|(l, ((a, &d), rx))| {
                let emit = self.emit_epoch(l);
                let true_toa_s = emit + d / SPEED_OF_LIGHT;
                let spec = self.burst_spec(l, emit);
                let outcome = estimate_toa(rx, &spec, self.config.toa_method).and_then(|est| {
                    let range_m = range_from_toa(&est, emit)?;
                    Ok(LinkEstimate {
                        toa_s: est.toa,
                        range_m,
                        toa_err_s: est.toa - true_toa_s,
                        range_err_m: range_m - d,
                    })
                });
                let (estimate, failure) = match outcome {
                    Ok(e) => (Some(e), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                LinkResult { anchor_id: a.id.clone(), distance_m: d, true_toa_s, estimate, failure }
            })
            .collect();

        let mut result = TrialResult {
            trial,
            snr_db,
            seed,
            truth,
            links,
            fix: None,
            selection: None,
            failure: None,
            position_error_m: None,
        };
        let Some(ranges) = result.ranges() else {
            result.failure = Some("ranging failed on at least one link".into());
            return Ok(result);
        };
        match self.locate(&ranges) {
            Ok(sel) => {
                result.position_error_m = Some(position_error(&sel.fix, &truth));
                result.fix = Some(sel.fix);
                result.selection = Some(sel.rule);
            }
            Err(e) => result.failure = Some(e.to_string()),
        }
        Ok(result)
    }
}
