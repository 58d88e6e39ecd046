//! B-spline pulse synthesis, PSD and mask machinery, and the constrained
//! pulse-set optimizer.

pub mod bspline;
pub mod design;
pub mod pulse_set;
pub mod spectrum;

pub use bspline::{bspline_eval, synthesize_pulse, BSplineBasis};
pub use design::{design_pulses, ConstraintReport, DesignConfig, DesignError, DesignRun, GaParams, PenaltyWeights, Tolerances};
pub use pulse_set::{orthogonality_matrix, PulseSet, PulseSetError};
pub use spectrum::{effectiveness, mask_violation, psd, MaskSegment, SpectralMask, Spectrum, SpectrumError, DEFAULT_PRF_HZ};
