//! Photometric and geometric residuals with analytic Jacobians.
//!
//! The intensity residual compares frame B sampled at the warped location
//! against frame A; the depth residual compares the depth measured there
//! against the transformed point's depth. Jacobians chain bilinear samples
//! of central-difference gradient images of B through the projection.

use super::VoError;
use crate::dataset::RgbdFrame;
use crate::geometry::{se3_exp, PinholeIntrinsics, RigidTransform, Twist};
use crate::grid::Grid;
use nalgebra::{Vector2, Vector3, Vector6};

/// Structured-light depth noise model coefficients: sigma(z) = s0 + s1 z^2.
const DEPTH_NOISE_OFFSET: f64 = 0.001;
const DEPTH_NOISE_QUADRATIC: f64 = 0.0019;

/// Margin keeping the bilinear supports of both the images and their
/// gradient images inside the frame.
const SAMPLE_MARGIN: f64 = 1.0 + 1e-9;

/// Intensity and depth residual images with a shared validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualImages {
    pub r_i: Grid<f64>,
    pub r_d: Grid<f64>,
    pub validity: Grid<bool>,
}

/// Per-pixel pre-weights for the two residual channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights {
    pub w_i: Grid<f64>,
    pub w_d: Grid<f64>,
}

/// Depth pre-weight image for one depth map: `1 / (s0 + s1 z^2)`, normalized
/// so the valid-pixel median is 1. Invalid pixels carry 0.
pub(crate) fn depth_weights(depth: &Grid<f64>) -> Grid<f64> {
    let mut w = depth.map(|&z| {
        if z > 0.0 {
            1.0 / (DEPTH_NOISE_OFFSET + DEPTH_NOISE_QUADRATIC * z * z)
        } else {
            0.0
        }
    });
    let mut valid: Vec<f64> = w.as_slice().iter().copied().filter(|&x| x > 0.0).collect();
    if !valid.is_empty() {
        let med = super::robust::median_in_place(&mut valid);
        if med > 0.0 {
            for v in w.as_mut_slice() {
                *v /= med;
            }
        }
    }
    w
}

/// Measurement-noise pre-weights: intensity weight 1, depth weight from the
/// quadratic structured-light noise model.
pub fn compute_pixel_weights(frame: &RgbdFrame) -> PixelWeights {
    PixelWeights {
        w_i: Grid::filled(frame.width(), frame.height(), 1.0),
        w_d: depth_weights(&frame.depth),
    }
}

/// Everything needed to evaluate residuals at one pyramid level.
pub(crate) struct LevelData {
    pub a_intensity: Grid<f64>,
    pub a_depth: Grid<f64>,
    pub b_intensity: Grid<f64>,
    pub b_depth: Grid<f64>,
    pub b_grad_ix: Grid<f64>,
    pub b_grad_iy: Grid<f64>,
    pub b_grad_dx: Grid<f64>,
    pub b_grad_dy: Grid<f64>,
    pub intrinsics: PinholeIntrinsics,
    /// Depth pre-weight of frame A at this level.
    pub w_d: Grid<f64>,
    /// Per-pixel residual multiplier (1 - dynamic score), 1 everywhere in
    /// plain mode.
    pub multiplier: Grid<f64>,
    pub alpha_i: f64,
}

impl LevelData {
    pub fn new(
        a_intensity: Grid<f64>,
        a_depth: Grid<f64>,
        b_intensity: Grid<f64>,
        b_depth: Grid<f64>,
        intrinsics: PinholeIntrinsics,
        multiplier: Grid<f64>,
        alpha_i: f64,
    ) -> Self {
        let (b_grad_ix, b_grad_iy) = b_intensity.gradients();
        let (b_grad_dx, b_grad_dy) = b_depth.gradients_depth();
        let w_d = depth_weights(&a_depth);
        Self {
            a_intensity,
            a_depth,
            b_intensity,
            b_depth,
            b_grad_ix,
            b_grad_iy,
            b_grad_dx,
            b_grad_dy,
            intrinsics,
            w_d,
            multiplier,
            alpha_i,
        }
    }

    pub fn width(&self) -> usize {
        self.a_intensity.width()
    }

    pub fn height(&self) -> usize {
        self.a_intensity.height()
    }
}

/// Scaled residuals of one pixel: `s_i = alpha_i * w_i * r_i` and
/// `s_d = w_d * r_d`, plus the multiplier applied to its energy terms.
pub(crate) struct PixelEval {
    pub s_i: f64,
    pub s_d: f64,
    pub multiplier: f64,
    /// Transformed point in frame-B camera coordinates.
    pub point_b: Vector3<f64>,
    /// Warped pixel location.
    pub warped: Vector2<f64>,
}

#[inline]
pub(crate) fn eval_pixel(ld: &LevelData, t: &RigidTransform, x: usize, y: usize) -> Option<PixelEval> {
    let d = ld.a_depth.get(x, y);
    if d <= 0.0 {
        return None;
    }
    let k = &ld.intrinsics;
    let p = Vector3::new(
        (x as f64 - k.cx) * d / k.fx,
        (y as f64 - k.cy) * d / k.fy,
        d,
    );
    // Identity maps each pixel to itself exactly; skipping the projection
    // round trip keeps residuals of identical frames at zero bit for bit.
    let identity = t.rotation == nalgebra::Matrix3::identity() && t.translation == Vector3::zeros();
    let (q, u, v) = if identity {
        (p, x as f64, y as f64)
    } else {
        let q = t.transform_point(&p);
        if q.z <= 0.0 {
            return None;
        }
        let u = k.fx * q.x / q.z + k.cx;
        let v = k.fy * q.y / q.z + k.cy;
        (q, u, v)
    };
    if u < SAMPLE_MARGIN
        || v < SAMPLE_MARGIN
        || u > k.width as f64 - 1.0 - SAMPLE_MARGIN
        || v > k.height as f64 - 1.0 - SAMPLE_MARGIN
    {
        return None;
    }
    let ib = ld.b_intensity.sample_bilinear(u, v)?;
    let db = ld.b_depth.sample_bilinear_depth(u, v)?;
    let r_i = ib - ld.a_intensity.get(x, y);
    let r_d = db - q.z;
    Some(PixelEval {
        s_i: ld.alpha_i * r_i,
        s_d: ld.w_d.get(x, y) * r_d,
        multiplier: ld.multiplier.get(x, y),
        point_b: q,
        warped: Vector2::new(u, v),
    })
}

/// Jacobians of the scaled residuals with respect to a left-composed twist
/// increment, ordered `(v, omega)`.
pub(crate) struct PixelJacobians {
    pub j_i: Vector6<f64>,
    pub j_d: Vector6<f64>,
}

#[inline]
pub(crate) fn eval_jacobians(ld: &LevelData, eval: &PixelEval, x: usize, y: usize) -> PixelJacobians {
    let k = &ld.intrinsics;
    let q = &eval.point_b;
    let (u, v) = (eval.warped.x, eval.warped.y);
    let inv_z = 1.0 / q.z;

    let gi = Vector2::new(
        ld.b_grad_ix.sample_bilinear(u, v).unwrap_or(0.0),
        ld.b_grad_iy.sample_bilinear(u, v).unwrap_or(0.0),
    );
    let gd = Vector2::new(
        ld.b_grad_dx.sample_bilinear(u, v).unwrap_or(0.0),
        ld.b_grad_dy.sample_bilinear(u, v).unwrap_or(0.0),
    );

    // Rows of the 2x6 warped-pixel Jacobian d(u, v)/d(twist): the projection
    // Jacobian chained with d(q)/d(twist) = [I | -[q]x].
    let fxz = k.fx * inv_z;
    let fyz = k.fy * inv_z;
    let xz = q.x * inv_z;
    let yz = q.y * inv_z;
    let ju = Vector6::new(
        fxz,
        0.0,
        -fxz * xz,
        -fxz * xz * q.y,
        fxz * (q.z + xz * q.x),
        -fxz * q.y,
    );
    let jv = Vector6::new(
        0.0,
        fyz,
        -fyz * yz,
        -fyz * (q.z + yz * q.y),
        fyz * yz * q.x,
        fyz * q.x,
    );
    // d(q.z)/d(twist)
    let jz = Vector6::new(0.0, 0.0, 1.0, q.y, -q.x, 0.0);

    let j_ri = ju * gi.x + jv * gi.y;
    let j_rd = ju * gd.x + jv * gd.y - jz;
    PixelJacobians {
        j_i: j_ri * ld.alpha_i,
        j_d: j_rd * ld.w_d.get(x, y),
    }
}

fn level_from_frames(a: &RgbdFrame, b: &RgbdFrame, alpha_i: f64) -> LevelData {
    LevelData::new(
        a.intensity.clone(),
        a.depth.clone(),
        b.intensity.clone(),
        b.depth.clone(),
        a.intrinsics,
        Grid::filled(a.width(), a.height(), 1.0),
        alpha_i,
    )
}

/// Full-resolution residual images at the motion hypothesis `xi`. Pixels are
/// invalid where frame A has no depth, the warp fails or leaves the image,
/// or frame B has no depth at the sampled location.
pub fn compute_residuals(
    a: &RgbdFrame,
    b: &RgbdFrame,
    xi: &Twist,
) -> Result<ResidualImages, VoError> {
    if a.intrinsics != b.intrinsics {
        return Err(VoError::IntrinsicsMismatch);
    }
    // unit alpha and unit pre-weights: the scaled residuals are the raw ones
    let mut ld = level_from_frames(a, b, 1.0);
    ld.w_d = Grid::filled(a.width(), a.height(), 1.0);
    let t = se3_exp(xi);
    let (w, h) = (a.width(), a.height());
    let mut r_i = Grid::filled(w, h, 0.0f64);
    let mut r_d = Grid::filled(w, h, 0.0f64);
    let mut validity = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if let Some(e) = eval_pixel(&ld, &t, x, y) {
                r_i.set(x, y, e.s_i);
                r_d.set(x, y, e.s_d);
                validity.set(x, y, true);
            }
        }
    }
    Ok(ResidualImages { r_i, r_d, validity })
}

/// Diagnostic hook: scaled residuals `(s_i, s_d)` of one pixel at an
/// explicit transform, using unit pre-weights and unit alpha.
pub fn pixel_residuals_at(
    a: &RgbdFrame,
    b: &RgbdFrame,
    t: &RigidTransform,
    x: usize,
    y: usize,
) -> Option<(f64, f64)> {
    let mut ld = level_from_frames(a, b, 1.0);
    ld.w_d = Grid::filled(a.width(), a.height(), 1.0);
    eval_pixel(&ld, t, x, y).map(|e| (e.s_i, e.s_d))
}

/// Diagnostic hook: analytic Jacobians of the raw residuals of one pixel at
/// an explicit transform (unit pre-weights, unit alpha), ordered
/// `(v, omega)`.
pub fn pixel_jacobians_at(
    a: &RgbdFrame,
    b: &RgbdFrame,
    t: &RigidTransform,
    x: usize,
    y: usize,
) -> Option<([f64; 6], [f64; 6])> {
    let mut ld = level_from_frames(a, b, 1.0);
    ld.w_d = Grid::filled(a.width(), a.height(), 1.0);
    let e = eval_pixel(&ld, t, x, y)?;
    let j = eval_jacobians(&ld, &e, x, y);
    Some((j.j_i.into(), j.j_d.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_frames() -> (RgbdFrame, RgbdFrame) {
        // Affine intensity and depth: central differences equal the true
        // in-cell bilinear gradients exactly, so finite differences of the
        // sampled residual match the analytic chain.
        let k = PinholeIntrinsics::new(80.0, 80.0, 32.0, 24.0, 64, 48).unwrap();
        let intensity = Grid::from_fn(64, 48, |x, y| {
            (0.3 + 0.006 * x as f64 + 0.004 * y as f64).min(1.0)
        });
        let depth = Grid::from_fn(64, 48, |x, y| 2.0 + 0.004 * x as f64 - 0.002 * y as f64);
        let a = RgbdFrame::new(0.0, intensity.clone(), depth.clone(), k).unwrap();
        let b = RgbdFrame::new(1.0, intensity, depth, k).unwrap();
        (a, b)
    }

    #[test]
    fn identical_frames_at_identity_have_zero_residuals() {
        let (a, b) = ramp_frames();
        let res = compute_residuals(&a, &b, &Twist::zero()).unwrap();
        let mut valid_count = 0;
        for (x, y, &ok) in res.validity.iter_pixels() {
            if ok {
                assert_eq!(res.r_i.get(x, y), 0.0);
                assert_eq!(res.r_d.get(x, y), 0.0);
                valid_count += 1;
            }
        }
        assert!(valid_count > 2000);
    }

    #[test]
    fn intrinsics_mismatch_is_rejected() {
        let (a, _) = ramp_frames();
        let k2 = PinholeIntrinsics::new(81.0, 80.0, 32.0, 24.0, 64, 48).unwrap();
        let b = RgbdFrame::new(1.0, a.intensity.clone(), a.depth.clone(), k2).unwrap();
        assert!(matches!(
            compute_residuals(&a, &b, &Twist::zero()),
            Err(VoError::IntrinsicsMismatch)
        ));
    }

    #[test]
    fn constant_depth_gives_unit_weights() {
        let k = PinholeIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let frame =
            RgbdFrame::new(0.0, Grid::filled(8, 8, 0.5), Grid::filled(8, 8, 2.0), k).unwrap();
        let w = compute_pixel_weights(&frame);
        assert!(w.w_i.as_slice().iter().all(|&x| x == 1.0));
        assert!(w.w_d.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn depth_weight_decreases_with_range() {
        let raw = |z: f64| 1.0 / (DEPTH_NOISE_OFFSET + DEPTH_NOISE_QUADRATIC * z * z);
        assert!(raw(2.0) < raw(1.0));
        assert!(raw(4.0) < raw(2.0));
    }

    #[test]
    fn depth_weight_ratio_matches_noise_model() {
        let k = PinholeIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let depth = Grid::from_fn(8, 8, |x, _| if x < 4 { 1.0 } else { 3.0 });
        let frame = RgbdFrame::new(0.0, Grid::filled(8, 8, 0.5), depth, k).unwrap();
        let w = compute_pixel_weights(&frame);
        let ratio = w.w_d.get(0, 0) / w.w_d.get(7, 0);
        let expected = (DEPTH_NOISE_OFFSET + 9.0 * DEPTH_NOISE_QUADRATIC)
            / (DEPTH_NOISE_OFFSET + DEPTH_NOISE_QUADRATIC);
        assert!((ratio - expected).abs() < 1e-12, "ratio {ratio} vs {expected}");
    }

    #[test]
    fn jacobians_match_central_differences() {
        let (a, b) = ramp_frames();
        let xi = Twist::from_array([0.01, -0.005, 0.008, 0.004, -0.003, 0.006]);
        let t = se3_exp(&xi);
        let eps = 1e-6;

        let mut checked = 0usize;
        for (x, y) in [(10usize, 10usize), (30, 20), (50, 40), (20, 35), (45, 8)] {
            let Some((ji, jd)) = pixel_jacobians_at(&a, &b, &t, x, y) else {
                continue;
            };
            for axis in 0..6 {
                let mut delta = [0.0; 6];
                delta[axis] = eps;
                let tp = se3_exp(&Twist::from_array(delta)).compose(&t);
                delta[axis] = -eps;
                let tm = se3_exp(&Twist::from_array(delta)).compose(&t);
                let (rip, rdp) = pixel_residuals_at(&a, &b, &tp, x, y).unwrap();
                let (rim, rdm) = pixel_residuals_at(&a, &b, &tm, x, y).unwrap();
                let fd_i = (rip - rim) / (2.0 * eps);
                let fd_d = (rdp - rdm) / (2.0 * eps);
                let rel =
                    |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(
                    rel(fd_i, ji[axis]) < 1e-4,
                    "intensity axis {axis} at ({x},{y}): fd {fd_i} vs {}",
                    ji[axis]
                );
                assert!(
                    rel(fd_d, jd[axis]) < 1e-4,
                    "depth axis {axis} at ({x},{y}): fd {fd_d} vs {}",
                    jd[axis]
                );
            }
            checked += 1;
        }
        assert!(checked >= 4);
    }
}
