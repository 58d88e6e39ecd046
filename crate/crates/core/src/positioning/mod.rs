//! Closed-form multilateration, candidate selection and an iterative
//! least-squares reference solver.

mod bancroft;
mod gauss_newton;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bancroft::{bancroft_solve, bancroft_synchronized, CONDITION_LIMIT};
pub use gauss_newton::{gauss_newton_refine, Refinement, GN_MAX_ITERATIONS, GN_STEP_TOLERANCE};

/// Slack, in metres, when testing a candidate against the room bounds, so
/// that noisy fixes on a wall or the floor are not rejected.
pub const BOUNDS_TOLERANCE_M: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PositioningError {
    #[error("need at least 4 anchors, got {0}")]
    InsufficientAnchors(usize),
    #[error("{anchors} anchors but {ranges} ranges")]
    LengthMismatch { anchors: usize, ranges: usize },
    #[error("range {index} is {value}, ranges must be finite and positive")]
    InvalidRange { index: usize, value: f64 },
    #[error("anchor geometry is degenerate (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },
    #[error("ranges admit no real solution (discriminant {discriminant:.3e})")]
    NoRealSolution { discriminant: f64 },
    #[error("no candidate lies inside the room bounds")]
    NoValidFix,
    #[error("Gauss-Newton diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("invalid room bounds: {0}")]
    InvalidBounds(String),
    #[error("malformed anchor file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnchorRecord", into = "AnchorRecord")]
pub struct Anchor {
    pub id: String,
    pub position: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorRecord {
    id: String,
    x: f64,
    y: f64,
    z: f64,
}

impl TryFrom<AnchorRecord> for Anchor {
    type Error = PositioningError;

    fn try_from(r: AnchorRecord) -> Result<Self, Self::Error> {
        if ![r.x, r.y, r.z].iter().all(|v| v.is_finite()) {
            return Err(PositioningError::Parse(format!("anchor {} has non-finite coordinates", r.id)));
        }
        Ok(Anchor { id: r.id, position: [r.x, r.y, r.z] })
    }
}

impl From<Anchor> for AnchorRecord {
    fn from(a: Anchor) -> Self {
        AnchorRecord { id: a.id, x: a.position[0], y: a.position[1], z: a.position[2] }
    }
}

impl Anchor {
    pub fn new(id: impl Into<String>, position: [f64; 3]) -> Self {
        Self { id: id.into(), position }
    }

    pub fn distance_to(&self, p: &[f64; 3]) -> f64 {
        distance(&self.position, p)
    }

    pub fn load_list(path: &Path) -> Result<Vec<Anchor>, PositioningError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PositioningError::Parse(e.to_string()))
    }
}

/// The four upper corners of `bounds`, ids `A1..A4`.
pub fn ceiling_corner_anchors(bounds: &RoomBounds) -> Vec<Anchor> {
    let (lo, hi) = (bounds.min, bounds.max);
    [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]]
        .iter()
        .enumerate()
        .map(|(i, xy)| Anchor::new(format!("A{}", i + 1), [xy[0], xy[1], hi[2]]))
        .collect()
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Axis-aligned room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for RoomBounds {
    fn default() -> Self {
        Self { min: [0.0; 3], max: [6.0, 6.0, 3.0] }
    }
}

impl RoomBounds {
    pub fn validate(&self) -> Result<(), PositioningError> {
        for k in 0..3 {
            if !(self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] < self.max[k]) {
                return Err(PositioningError::InvalidBounds(format!("axis {k}: min must be below max")));
            }
        }
        Ok(())
    }

    /// Inside, allowing `tolerance` metres of slack on every face.
    pub fn contains(&self, p: &[f64; 3], tolerance: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tolerance && p[k] <= self.max[k] + tolerance)
    }

    pub fn diagonal(&self) -> f64 {
        distance(&self.min, &self.max)
    }
}

/// Which system produced a fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Four-dimensional closed form with a clock-bias unknown.
    Lorentz,
    /// Three-dimensional closed form with the bias fixed at zero, used when
    /// the four-dimensional system is singular.
    Synchronized,
    GaussNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub position: [f64; 3],
    /// Range-equivalent clock bias: `ρ_i = |x − a_i| + bias`.
    pub clock_bias: f64,
    pub residual_rms: f64,
    /// 1 or 2: which root of the scalar quadratic.
    pub candidate_index: usize,
    pub method: SolveMethod,
    /// 1-norm condition number of the inverted system.
    pub condition: f64,
}

/// RMS of `|x − a_i| + bias − ρ_i`.
pub fn range_residual_rms(anchors: &[Anchor], ranges: &[f64], position: &[f64; 3], bias: f64) -> f64 {
    let ss: f64 = anchors
        .iter()
        .zip(ranges)
        .map(|(a, r)| (a.distance_to(position) + bias - r).powi(2))
        .sum();
    (ss / anchors.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Only one candidate was offered and it is in bounds.
    OnlyCandidate,
    /// The other candidate fell outside the room.
    BoundsRejectedOther,
    /// Both were in bounds; the smaller range residual won.
    SmallerResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub fix: PositionFix,
    pub rule: SelectionRule,
}

/// Drops out-of-bounds candidates and breaks ties by residual.
pub fn select_solution(candidates: &[PositionFix], bounds: &RoomBounds) -> Result<Selection, PositioningError> {
    let inside: Vec<&PositionFix> = candidates
        .iter()
        .filter(|c| bounds.contains(&c.position, BOUNDS_TOLERANCE_M))
        .collect();
    match inside.as_slice() {
        [] => Err(PositioningError::NoValidFix),
        [only] => Ok(Selection {
            fix: **only,
            rule: if candidates.len() == 1 { SelectionRule::OnlyCandidate } else { SelectionRule::BoundsRejectedOther },
        }),
        many => {
            let best = many
                .iter()
                .min_by(|a, b| a.residual_rms.total_cmp(&b.residual_rms))
                .expect("nonempty");
            Ok(Selection { fix: **best, rule: SelectionRule::SmallerResidual })
        }
    }
}

/// Euclidean distance between the fix and the truth.
pub fn position_error(fix: &PositionFix, truth: &[f64; 3]) -> f64 {
    distance(&fix.position, truth)
}
