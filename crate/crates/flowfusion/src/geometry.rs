//! Pinhole camera model, se(3)/SE(3) conversions and pixel warping.
//!
//! Conventions used across the whole crate:
//! - Continuous pixel coordinates, `(0, 0)` is the center of the top-left
//!   pixel.
//! - A relative transform between frames A and B maps points expressed in
//!   A's camera coordinates into B's camera coordinates, so warping resamples
//!   frame B at the locations where frame A pixels land.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is not projectable (z = {z} <= 0)")]
    NonProjectable { z: f64 },
    #[error("invalid depth {depth} (must be finite and > 0)")]
    InvalidDepth { depth: f64 },
    #[error("warped point lies behind the camera (z = {z})")]
    WarpBehindCamera { z: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation matrix is not orthonormal (defect {defect:.2e})")]
    NotARotation { defect: f64 },
}

/// Pinhole camera intrinsics; no distortion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics of the next coarser pyramid level (2× downsampling).
    ///
    /// With pixel centers at integer coordinates, fine coordinate `u` maps to
    /// coarse coordinate `(u - 0.5) / 2`, which halves the focal lengths and
    /// shifts the principal point.
    pub fn halved(&self) -> Self {
        Self {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx - 0.5) * 0.5,
            cy: (self.cy - 0.5) * 0.5,
            width: self.width / 2,
            height: self.height / 2,
        }
    }
}

/// Continuous image coordinates in pixels. In-bounds checks are the
/// caller's responsibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Whether the full bilinear support of this pixel lies inside the image.
    pub fn in_bounds(&self, k: &PinholeIntrinsics) -> bool {
        self.u >= 0.0
            && self.v >= 0.0
            && self.u <= (k.width - 1) as f64
            && self.v <= (k.height - 1) as f64
    }
}

/// Element of se(3): translational velocity (m) and rotational part (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            linear: Vector3::new(a[0], a[1], a[2]),
            angular: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn negated(&self) -> Self {
        Self {
            linear: -self.linear,
            angular: -self.angular,
        }
    }

    /// Euclidean distance between twist parameter vectors.
    pub fn param_distance(&self, other: &Twist) -> f64 {
        ((self.linear - other.linear).norm_squared()
            + (self.angular - other.angular).norm_squared())
        .sqrt()
    }
}

/// Rigid transform in SE(3): rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Construct from parts, checking orthonormality and determinant within
    /// 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det_defect = (rotation.determinant() - 1.0).abs();
        if defect > 1e-9 || det_defect > 1e-9 {
            return Err(GeometryError::NotARotation {
                defect: defect.max(det_defect),
            });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Construct without the orthonormality check. For internal composition
    /// chains where the inputs are already valid rotations.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

#[inline]
pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Threshold below which the Rodrigues coefficients switch to their series
/// expansions; avoids catastrophic cancellation near zero rotation.
const SMALL_ANGLE: f64 = 1e-8;

/// Exponential map se(3) → SE(3) via the Rodrigues formula.
pub fn se3_exp(xi: &Twist) -> RigidTransform {
    let w = xi.angular;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let wx = skew(&w);
    let wx2 = wx * wx;

    // R = I + a*[w]x + b*[w]x^2,  V = I + b*[w]x + c*[w]x^2
    let (a, b, c) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0,
            0.5 - theta2 / 24.0,
            1.0 / 6.0 - theta2 / 120.0,
        )
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };

    let rotation = Matrix3::identity() + wx * a + wx2 * b;
    let v_mat = Matrix3::identity() + wx * b + wx2 * c;
    RigidTransform {
        rotation,
        translation: v_mat * xi.linear,
    }
}

/// Logarithm map SE(3) → se(3), inverse of [`se3_exp`].
pub fn se3_log(t: &RigidTransform) -> Twist {
    let theta = t.rotation_angle();
    let w = if theta < SMALL_ANGLE {
        // R ≈ I + [w]x
        0.5 * Vector3::new(
            t.rotation[(2, 1)] - t.rotation[(1, 2)],
            t.rotation[(0, 2)] - t.rotation[(2, 0)],
            t.rotation[(1, 0)] - t.rotation[(0, 1)],
        )
    } else if theta > std::f64::consts::PI - 1e-6 {
        // Near pi the antisymmetric part degenerates; recover the axis from
        // the symmetric part R + R^T = 2(cos(theta) I + (1-cos(theta)) ww^T).
        let m = (t.rotation + Matrix3::identity()) * 0.5;
        let axis = {
            let dx = m[(0, 0)];
            let dy = m[(1, 1)];
            let dz = m[(2, 2)];
            let col = if dx >= dy && dx >= dz {
                Vector3::new(dx, m[(1, 0)], m[(2, 0)])
            } else if dy >= dz {
                Vector3::new(m[(0, 1)], dy, m[(2, 1)])
            } else {
                Vector3::new(m[(0, 2)], m[(1, 2)], dz)
            };
            col.normalize()
        };
        // Fix the sign using the antisymmetric part when it is not exactly 0.
        let anti = Vector3::new(
            t.rotation[(2, 1)] - t.rotation[(1, 2)],
            t.rotation[(0, 2)] - t.rotation[(2, 0)],
            t.rotation[(1, 0)] - t.rotation[(0, 1)],
        );
        let axis = if anti.dot(&axis) < 0.0 { -axis } else { axis };
        axis * theta
    } else {
        let anti = Vector3::new(
            t.rotation[(2, 1)] - t.rotation[(1, 2)],
            t.rotation[(0, 2)] - t.rotation[(2, 0)],
            t.rotation[(1, 0)] - t.rotation[(0, 1)],
        );
        anti * (theta / (2.0 * theta.sin()))
    };

    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let wx = skew(&w);
    let wx2 = wx * wx;
    // V^{-1} = I - 1/2 [w]x + d [w]x^2
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    let v_inv = Matrix3::identity() - wx * 0.5 + wx2 * d;
    Twist {
        linear: v_inv * t.translation,
        angular: w,
    }
}

/// Project a camera-frame point onto the image plane.
pub fn project(point: &Vector3<f64>, k: &PinholeIntrinsics) -> Result<Pixel, GeometryError> {
    if point.z <= 0.0 {
        return Err(GeometryError::NonProjectable { z: point.z });
    }
    Ok(Pixel {
        u: k.fx * point.x / point.z + k.cx,
        v: k.fy * point.y / point.z + k.cy,
    })
}

/// Back-project a pixel at a given depth into camera coordinates.
pub fn backproject(p: &Pixel, depth: f64, k: &PinholeIntrinsics) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth { depth });
    }
    Ok(Vector3::new(
        (p.u - k.cx) * depth / k.fx,
        (p.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// A warped pixel together with the transformed point's depth, which is the
/// model depth the warped location is compared against in the depth residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedPixel {
    pub pixel: Pixel,
    pub depth: f64,
}

/// Warp a frame-A pixel into frame B under the relative motion `xi`.
pub fn warp_pixel(
    x: &Pixel,
    depth_a: f64,
    xi: &Twist,
    k: &PinholeIntrinsics,
) -> Result<WarpedPixel, GeometryError> {
    warp_pixel_transform(x, depth_a, &se3_exp(xi), k)
}

/// [`warp_pixel`] with a precomputed transform, for per-pixel loops.
///
/// The identity transform maps every pixel to itself exactly (no
/// project/backproject round-off).
#[inline]
pub fn warp_pixel_transform(
    x: &Pixel,
    depth_a: f64,
    t: &RigidTransform,
    k: &PinholeIntrinsics,
) -> Result<WarpedPixel, GeometryError> {
    if !(depth_a > 0.0) || !depth_a.is_finite() {
        return Err(GeometryError::InvalidDepth { depth: depth_a });
    }
    if t.rotation == Matrix3::identity() && t.translation == Vector3::zeros() {
        return Ok(WarpedPixel {
            pixel: *x,
            depth: depth_a,
        });
    }
    let p = backproject(x, depth_a, k)?;
    let q = t.transform_point(&p);
    if q.z <= 0.0 {
        return Err(GeometryError::WarpBehindCamera { z: q.z });
    }
    Ok(WarpedPixel {
        pixel: project(&q, k)?,
        depth: q.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn project_optical_axis_hits_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &test_k()).unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
    }

    #[test]
    fn project_off_axis_point() {
        let p = project(&Vector3::new(1.0, 0.0, 2.0), &test_k()).unwrap();
        assert_eq!((p.u, p.v), (570.0, 240.0));
    }

    #[test]
    fn project_behind_camera_fails() {
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &test_k()).unwrap_err();
        assert!(matches!(err, GeometryError::NonProjectable { .. }));
    }

    #[test]
    fn backproject_examples() {
        let k = test_k();
        let p = backproject(&Pixel::new(320.0, 240.0), 2.0, &k).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        let p = backproject(&Pixel::new(570.0, 240.0), 2.0, &k).unwrap();
        assert_eq!(p, Vector3::new(1.0, 0.0, 2.0));
        assert!(matches!(
            backproject(&Pixel::new(320.0, 240.0), 0.0, &k),
            Err(GeometryError::InvalidDepth { .. })
        ));
        assert!(matches!(
            backproject(&Pixel::new(320.0, 240.0), f64::NAN, &k),
            Err(GeometryError::InvalidDepth { .. })
        ));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let t = se3_exp(&Twist::zero());
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
    }

    #[test]
    fn exp_pure_translation() {
        let t = se3_exp(&Twist::new(Vector3::new(0.1, 0.0, 0.0), Vector3::zeros()));
        assert_eq!(t.rotation, Matrix3::identity());
        assert_relative_eq!(t.translation, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let t = se3_exp(&Twist::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
        ));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(t.rotation, expected, epsilon = 1e-12);
        assert_relative_eq!(t.translation.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn log_inverts_exp() {
        let xi = Twist::new(Vector3::new(0.2, -0.1, 0.4), Vector3::new(0.3, 0.2, -0.5));
        let back = se3_log(&se3_exp(&xi));
        assert_relative_eq!(back.linear, xi.linear, epsilon = 1e-12);
        assert_relative_eq!(back.angular, xi.angular, epsilon = 1e-12);
    }

    #[test]
    fn log_handles_near_pi_rotation() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let xi = Twist::new(Vector3::new(0.1, 0.0, 0.2), axis * (std::f64::consts::PI - 1e-9));
        let back = se3_log(&se3_exp(&xi));
        assert_relative_eq!(back.angular, xi.angular, epsilon = 1e-6);
        assert_relative_eq!(back.linear, xi.linear, epsilon = 1e-6);
    }

    #[test]
    fn warp_with_zero_twist_is_identity() {
        let k = test_k();
        let x = Pixel::new(123.25, 456.75);
        let w = warp_pixel(&x, 3.7, &Twist::zero(), &k).unwrap();
        assert_eq!(w.pixel, x);
        assert_eq!(w.depth, 3.7);
    }

    // Value frozen from the independent route project(T * backproject(x)):
    // the A->B convention moves the point to (0.1, 0, 2), which projects to
    // 320 + 500*0.1/2 = 345.
    #[test]
    fn warp_translation_matches_project_backproject_route() {
        let k = test_k();
        let xi = Twist::new(Vector3::new(0.1, 0.0, 0.0), Vector3::zeros());
        let x = Pixel::new(320.0, 240.0);

        let oracle = {
            let p = backproject(&x, 2.0, &k).unwrap();
            let q = se3_exp(&xi).transform_point(&p);
            project(&q, &k).unwrap()
        };
        assert_relative_eq!(oracle.u, 345.0, epsilon = 1e-12);
        assert_relative_eq!(oracle.v, 240.0, epsilon = 1e-12);

        let w = warp_pixel(&x, 2.0, &xi, &k).unwrap();
        assert_relative_eq!(w.pixel.u, oracle.u, epsilon = 1e-12);
        assert_relative_eq!(w.pixel.v, oracle.v, epsilon = 1e-12);
        assert_relative_eq!(w.depth, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_behind_camera_is_error() {
        let k = test_k();
        let xi = Twist::new(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros());
        let err = warp_pixel(&Pixel::new(320.0, 240.0), 2.0, &xi, &k).unwrap_err();
        assert!(matches!(err, GeometryError::WarpBehindCamera { .. }));
    }

    #[test]
    fn warp_out_of_bounds_is_flagged_by_caller_check() {
        let k = test_k();
        let xi = Twist::new(Vector3::new(2.0, 0.0, 0.0), Vector3::zeros());
        let w = warp_pixel(&Pixel::new(600.0, 240.0), 1.0, &xi, &k).unwrap();
        assert!(!w.pixel.in_bounds(&k));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(PinholeIntrinsics::new(0.0, 1.0, 1.0, 1.0, 2, 2).is_err());
        assert!(PinholeIntrinsics::new(1.0, 1.0, 5.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn rigid_transform_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    proptest! {
        #[test]
        fn project_backproject_round_trip(
            u in 0.0f64..639.0,
            v in 0.0f64..479.0,
            z in 0.1f64..10.0,
        ) {
            let k = test_k();
            let p = backproject(&Pixel::new(u, v), z, &k).unwrap();
            let px = project(&p, &k).unwrap();
            prop_assert!((px.u - u).abs() < 1e-9);
            prop_assert!((px.v - v).abs() < 1e-9);
        }

        #[test]
        fn exp_composes_with_its_inverse(
            vx in -0.5f64..0.5, vy in -0.5f64..0.5, vz in -0.5f64..0.5,
            wx in -0.5f64..0.5, wy in -0.5f64..0.5, wz in -0.5f64..0.5,
        ) {
            let xi = Twist::from_array([vx, vy, vz, wx, wy, wz]);
            let t = se3_exp(&xi).compose(&se3_exp(&xi.negated()));
            prop_assert!((t.rotation - Matrix3::identity()).norm() < 1e-9);
            prop_assert!(t.translation.norm() < 1e-9);
        }

        #[test]
        fn exp_rotation_is_orthonormal(
            wx in -3.0f64..3.0, wy in -3.0f64..3.0, wz in -3.0f64..3.0,
        ) {
            let t = se3_exp(&Twist::new(Vector3::zeros(), Vector3::new(wx, wy, wz)));
            let defect = (t.rotation.transpose() * t.rotation - Matrix3::identity()).norm();
            prop_assert!(defect < 1e-9);
            prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
