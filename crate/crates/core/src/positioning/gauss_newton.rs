use nalgebra::{Matrix4, Vector4};

use super::{range_residual_rms, Anchor, PositionFix, PositioningError, SolveMethod};

pub const GN_STEP_TOLERANCE: f64 = 1e-10;
pub const GN_MAX_ITERATIONS: usize = 50;
/// Consecutive growing steps that count as divergence.
const DIVERGENCE_RUN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub fix: PositionFix,
    pub iterations: usize,
}

/// Gauss–Newton on `|x − a_i| + b − ρ_i` over `(x, y, z, b)`, starting from
/// `initial` with zero bias.
///
/// Stops when the step is shorter than [`GN_STEP_TOLERANCE`] or after
/// [`GN_MAX_ITERATIONS`]; five consecutive growing steps are reported as
/// divergence.
pub fn gauss_newton_refine(
    anchors: &[Anchor],
    ranges: &[f64],
    initial: [f64; 3],
) -> Result<Refinement, PositioningError> {
    if anchors.len() < 4 {
        return Err(PositioningError::InsufficientAnchors(anchors.len()));
    }
    if anchors.len() != ranges.len() {
        return Err(PositioningError::LengthMismatch { anchors: anchors.len(), ranges: ranges.len() });
    }
    let mut p = Vector4::new(initial[0], initial[1], initial[2], 0.0);
    let mut last_step = f64::INFINITY;
    let mut growing = 0;
    let mut iterations = 0;
    let mut condition = f64::NAN;
    while iterations < GN_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (a, &r) in anchors.iter().zip(ranges) {
            let d = Vector4::new(p[0] - a.position[0], p[1] - a.position[1], p[2] - a.position[2], 0.0);
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(f64::MIN_POSITIVE);
            let row = Vector4::new(d[0] / dist, d[1] / dist, d[2] / dist, 1.0);
            let res = dist + p[3] - r;
            jtj += row * row.transpose();
            jtr += row * res;
        }
        let Some(inv) = jtj.try_inverse() else {
            return Err(PositioningError::DegenerateGeometry { condition: f64::INFINITY });
        };
        condition = jtj.abs().column_sum().max() * inv.abs().column_sum().max();
        let step = -(inv * jtr);
        p += step;
        let size = step.norm();
        if size < GN_STEP_TOLERANCE {
            break;
        }
        growing = if size > last_step { growing + 1 } else { 0 };
        if growing >= DIVERGENCE_RUN || !size.is_finite() {
            return Err(PositioningError::Diverged { iterations });
        }
        last_step = size;
    }
    let position = [p[0], p[1], p[2]];
    Ok(Refinement {
        fix: PositionFix {
            position,
            clock_bias: p[3],
            residual_rms: range_residual_rms(anchors, ranges, &position, p[3]),
            candidate_index: 1,
            method: SolveMethod::GaussNewton,
            condition,
        },
        iterations,
    })
}
