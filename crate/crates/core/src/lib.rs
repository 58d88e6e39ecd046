//! Impulse-radio UWB simulation: B-spline pulse design under a spectral mask,
//! multipath and material propagation, dirty-template time-of-arrival
//! ranging, Bancroft positioning and human-presence detection.

pub mod channel;
pub mod detection;
pub mod positioning;
pub mod pulse;
pub mod ranging;
pub mod seed;
pub mod sim;
pub mod waveform;

pub use channel::{
    apply_signature, material_response, propagate, sample_cir, ChannelError, ChannelProfile, ChannelRealization,
    MaterialKind, MaterialSignature, Tap,
};
pub use detection::{
    classify, detect, estimate_transfer, mean_attenuation, phase_nonlinearity, DetectionError, DetectionLabel,
    DetectionThresholds, DetectionVerdict,
};
pub use positioning::{
    bancroft_solve, gauss_newton_refine, position_error, select_solution, Anchor, PositionFix, PositioningError,
    RoomBounds, SelectionRule, SolveMethod,
};
pub use pulse::{
    design_pulses, psd, ConstraintReport, DesignConfig, DesignError, DesignRun, PulseSet, PulseSetError,
    SpectralMask, Spectrum,
};
pub use ranging::{estimate_toa, make_burst, BurstSpec, RangingError, ToaEstimate, ToaMethod, TrainingPattern};
pub use sim::{SimConfig, SimError, Simulation, SweepOutput, SweepRow, SweepTable, TrialResult};
pub use waveform::{add_awgn, cross_correlate, delay, energy, inner_product, Correlation, Waveform, WaveformError, DEFAULT_DT};

/// Propagation speed, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
