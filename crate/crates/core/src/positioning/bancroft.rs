use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{range_residual_rms, Anchor, PositionFix, PositioningError, SolveMethod};

/// Systems with a larger 1-norm condition number are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Relative size below which a negative discriminant is rounding noise.
const DISCRIMINANT_SLACK: f64 = 1e-12;

/// Closed-form position and clock bias from pseudoranges
/// `ρ_i = |x − a_i| + b` (Bancroft 1985).
///
/// Rows `(a_i, ρ_i)` form `B`; with `α_i = ½⟨(a_i, ρ_i), (a_i, ρ_i)⟩` under
/// the Lorentz product and `Λ = ½⟨y, y⟩`, the unknown `y = (x, b)` satisfies
/// `B·M·y = α + Λ·1`, where `M = diag(1, 1, 1, −1)`. Writing `u = B⁺·1` and
/// `v = B⁺·α` gives `M·y = Λu + v`, and substituting back yields a quadratic
/// in `Λ` with up to two real roots. More than four anchors use the normal
/// equations.
///
/// If the four-dimensional system is singular (for instance equal ranges to
/// coplanar anchors) the synchronized variant with `b = 0` is solved
/// instead, on the Euclidean product; the fixes report which was used.
pub fn bancroft_solve(anchors: &[Anchor], ranges: &[f64]) -> Result<Vec<PositionFix>, PositioningError> {
    check_inputs(anchors, ranges)?;
    centered(anchors, |local| match solve_lorentz(local, ranges) {
        Err(PositioningError::DegenerateGeometry { condition }) => {
            solve_synchronized(local, ranges).map_err(|e| match e {
                PositioningError::DegenerateGeometry { condition: c } => {
                    PositioningError::DegenerateGeometry { condition: condition.max(c) }
                }
                other => other,
            })
        }
        other => other,
    })
}

/// Closed form with the clock bias known to be zero: `ρ_i = |x − a_i|`.
///
/// Same construction as [`bancroft_solve`] on the Euclidean product in three
/// dimensions; needs at least four anchors, like the general form.
pub fn bancroft_synchronized(anchors: &[Anchor], ranges: &[f64]) -> Result<Vec<PositionFix>, PositioningError> {
    check_inputs(anchors, ranges)?;
    centered(anchors, |local| solve_synchronized(local, ranges))
}

/// Runs `solve` in a frame fixed by the anchor geometry and shifts the
/// candidates back.
///
/// The closed form squares coordinates, so a nearby origin keeps rounding
/// independent of where the anchors sit. The origin is not the centroid
/// itself: coplanar anchors on a plane through the origin make `B` singular.
/// It is moved off the best-fit plane, along the axis of least spread, by
/// half the RMS anchor distance from the centroid.
fn centered(
    anchors: &[Anchor],
    solve: impl FnOnce(&[Anchor]) -> Result<Vec<PositionFix>, PositioningError>,
) -> Result<Vec<PositionFix>, PositioningError> {
    let n = anchors.len() as f64;
    let mut c = Vector3::zeros();
    for a in anchors {
        c += Vector3::from(a.position) / n;
    }
    let mut cov = Matrix3::zeros();
    for a in anchors {
        let d = Vector3::from(a.position) - c;
        cov += d * d.transpose() / n;
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(k).into();
    if normal[normal.iamax()] < 0.0 {
        normal = -normal;
    }
    let origin = c - normal * (0.5 * cov.trace().sqrt());
    let local: Vec<Anchor> = anchors
        .iter()
        .map(|a| Anchor::new(a.id.clone(), (Vector3::from(a.position) - origin).into()))
        .collect();
    let mut fixes = solve(&local)?;
    for f in &mut fixes {
        f.position = (Vector3::from(f.position) + origin).into();
    }
    Ok(fixes)
}

fn check_inputs(anchors: &[Anchor], ranges: &[f64]) -> Result<(), PositioningError> {
    if anchors.len() < 4 {
        return Err(PositioningError::InsufficientAnchors(anchors.len()));
    }
    if anchors.len() != ranges.len() {
        return Err(PositioningError::LengthMismatch { anchors: anchors.len(), ranges: ranges.len() });
    }
    if let Some((index, &value)) = ranges.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
        return Err(PositioningError::InvalidRange { index, value });
    }
    Ok(())
}

/// `(BᵀB)⁻¹Bᵀ`, or `B⁻¹` when square, with the condition number of the
/// matrix that was inverted.
fn pseudo_inverse(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), PositioningError> {
    let square = b.nrows() == b.ncols();
    let n = if square { b.clone() } else { b.transpose() * b };
    let inv = n.clone().lu().try_inverse();
    let Some(inv) = inv else {
        return Err(PositioningError::DegenerateGeometry { condition: f64::INFINITY });
    };
    let condition = one_norm(&n) * one_norm(&inv);
    if !(condition.is_finite() && condition <= CONDITION_LIMIT) {
        return Err(PositioningError::DegenerateGeometry { condition });
    }
    Ok(if square { (inv, condition) } else { (inv * b.transpose(), condition) })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Real roots of `E·Λ² + 2F·Λ + G = 0`, computed without cancellation.
fn quadratic_roots(e: f64, f: f64, g: f64) -> Result<Vec<f64>, PositioningError> {
    let scale = (f * f).abs() + (e * g).abs();
    if e.abs() <= 1e-14 * (f.abs() + g.abs().sqrt() * e.abs().sqrt()).max(f64::MIN_POSITIVE) {
        if f == 0.0 {
            return Err(PositioningError::NoRealSolution { discriminant: 0.0 });
        }
        return Ok(vec![-g / (2.0 * f)]);
    }
    let mut disc = f * f - e * g;
    if disc < 0.0 {
        if disc >= -DISCRIMINANT_SLACK * scale {
            disc = 0.0;
        } else {
            return Err(PositioningError::NoRealSolution { discriminant: disc });
        }
    }
    let q = -(f + f.signum() * disc.sqrt());
    if q == 0.0 {
        return Ok(vec![0.0]);
    }
    Ok(vec![q / e, g / q])
}

fn solve_lorentz(anchors: &[Anchor], ranges: &[f64]) -> Result<Vec<PositionFix>, PositioningError> {
    let n = anchors.len();
    let b = DMatrix::from_fn(n, 4, |i, j| if j < 3 { anchors[i].position[j] } else { ranges[i] });
    let lorentz = |x: &DVector<f64>, y: &DVector<f64>| x[0] * y[0] + x[1] * y[1] + x[2] * y[2] - x[3] * y[3];
    let alpha = DVector::from_fn(n, |i, _| {
        let a = &anchors[i].position;
        0.5 * (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - ranges[i] * ranges[i])
    });
    let (pinv, condition) = pseudo_inverse(&b)?;
    let u = &pinv * DVector::from_element(n, 1.0);
    let v = &pinv * &alpha;
    let roots = quadratic_roots(lorentz(&u, &u), lorentz(&u, &v) - 1.0, lorentz(&v, &v))?;
    Ok(roots
        .into_iter()
        .enumerate()
        .map(|(k, lam)| {
            let my = &u * lam + &v;
            let position = [my[0], my[1], my[2]];
            let clock_bias = -my[3];
            PositionFix {
                position,
                clock_bias,
                residual_rms: range_residual_rms(anchors, ranges, &position, clock_bias),
                candidate_index: k + 1,
                method: SolveMethod::Lorentz,
                condition,
            }
        })
        .collect())
}

fn solve_synchronized(anchors: &[Anchor], ranges: &[f64]) -> Result<Vec<PositionFix>, PositioningError> {
    let n = anchors.len();
    let a = DMatrix::from_fn(n, 3, |i, j| anchors[i].position[j]);
    let alpha = DVector::from_fn(n, |i, _| {
        let p = &anchors[i].position;
        0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - ranges[i] * ranges[i])
    });
    let (pinv, condition) = pseudo_inverse(&a)?;
    let u = &pinv * DVector::from_element(n, 1.0);
    let v = &pinv * &alpha;
    let roots = quadratic_roots(u.dot(&u), u.dot(&v) - 1.0, v.dot(&v))?;
    Ok(roots
        .into_iter()
        .enumerate()
        .map(|(k, lam)| {
            let x = &u * lam + &v;
            let position = [x[0], x[1], x[2]];
            PositionFix {
                position,
                clock_bias: 0.0,
                residual_rms: range_residual_rms(anchors, ranges, &position, 0.0),
                candidate_index: k + 1,
                method: SolveMethod::Synchronized,
                condition,
            }
        })
        .collect())
}
