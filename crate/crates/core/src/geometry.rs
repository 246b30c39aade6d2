//! Frames, rigid transforms and gaze rays.
//!
//! A [`Pose`] `ᵖH_c` maps coordinates expressed in its `child` frame into its
//! `parent` frame: `x_parent = R · x_child + t`. Composition follows the usual
//! homogeneous-matrix chaining, `ᵃH_c = ᵃH_b · ᵇH_c`. Lengths are millimetres,
//! reported angles are degrees.

use alloc::string::String;

use libm::{atan2, cos, sin};
use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance on `R·Rᵀ = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this `|direction · normal|` a ray is treated as parallel to a plane.
pub const PARALLEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameId {
    World,
    TrackerBase,
    ScreenCentre,
    Custom(String),
}

/// Rigid transform between two named frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
    parent: FrameId,
    child: FrameId,
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r * r.transpose() - Matrix3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

impl Pose {
    pub fn new(parent: FrameId, child: FrameId, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let deviation = rotation_deviation(&rotation);
        if !(deviation <= ROTATION_TOLERANCE) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation { deviation });
        }
        Ok(Self { rotation, translation, parent, child })
    }

    /// Builds a pose from a unit quaternion given as `[w, x, y, z]`. The
    /// quaternion is normalized first.
    pub fn from_quaternion(parent: FrameId, child: FrameId, wxyz: [f64; 4], translation: Vec3) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if !(q.norm() > 0.0) {
            return Err(Error::InvalidRotation { deviation: f64::INFINITY });
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Self::new(parent, child, *unit.to_rotation_matrix().matrix(), translation)
    }

    pub fn identity(frame: FrameId) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            parent: frame.clone(),
            child: frame,
        }
    }

    pub fn translation_only(parent: FrameId, child: FrameId, translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation, parent, child }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn parent(&self) -> &FrameId {
        &self.parent
    }

    pub fn child(&self) -> &FrameId {
        &self.child
    }

    /// Rotation as a unit quaternion `[w, x, y, z]`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Maximum deviation of the rotation block from a proper rotation.
    pub fn rotation_error(&self) -> f64 {
        rotation_deviation(&self.rotation)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Matrix3::identity()).amax() <= tol && self.translation.amax() <= tol
    }
}

/// `a · b`. Requires `a.child == b.parent`; the result maps `b.child` into `a.parent`.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose> {
    if a.child != b.parent {
        return Err(Error::FrameMismatch { expected: a.child.clone(), found: b.parent.clone() });
    }
    Ok(Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
        parent: a.parent.clone(),
        child: b.child.clone(),
    })
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose {
        translation: -(rt * p.translation),
        rotation: rt,
        parent: p.child.clone(),
        child: p.parent.clone(),
    }
}

/// Half-line `origin + λ·direction`, `λ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeRay {
    pub origin: Vec3,
    pub direction: Unit<Vec3>,
    pub frame: FrameId,
}

impl GazeRay {
    pub fn new(origin: Vec3, direction: Vec3, frame: FrameId) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > f64::EPSILON) || !norm.is_finite() {
            return Err(Error::DegenerateRay);
        }
        Ok(Self { origin, direction: Unit::new_normalize(direction), frame })
    }

    /// Ray from `origin` through `target`.
    pub fn through(origin: Vec3, target: Vec3, frame: FrameId) -> Result<Self> {
        Self::new(origin, target - origin, frame)
    }

    pub fn point_at(&self, lambda: f64) -> Vec3 {
        self.origin + self.direction.into_inner() * lambda
    }

    pub fn transformed(&self, pose: &Pose) -> Result<Self> {
        if pose.child != self.frame {
            return Err(Error::FrameMismatch { expected: pose.child.clone(), found: self.frame.clone() });
        }
        Ok(Self {
            origin: pose.transform_point(&self.origin),
            direction: Unit::new_normalize(pose.transform_vector(&self.direction)),
            frame: pose.parent.clone(),
        })
    }

    /// Rotates the direction by `angle_deg` away from itself, towards the
    /// in-plane azimuth `azimuth_rad` of an orthonormal basis perpendicular to it.
    pub fn deflected(&self, angle_deg: f64, azimuth_rad: f64) -> Self {
        let d = self.direction.into_inner();
        let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = d.cross(&helper).normalize();
        let v = d.cross(&u);
        let eps = angle_deg.to_radians();
        let dir = d * cos(eps) + (u * cos(azimuth_rad) + v * sin(azimuth_rad)) * sin(eps);
        Self { origin: self.origin, direction: Unit::new_normalize(dir), frame: self.frame.clone() }
    }
}

/// Which eyes the tracker reported for a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EyePositions {
    Both { left: Vec3, right: Vec3 },
    LeftOnly(Vec3),
    RightOnly(Vec3),
}

/// A reconstructed gaze ray. `degraded` marks monocular samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub ray: GazeRay,
    pub degraded: bool,
}

/// Local gaze in the screen-centre frame: origin at the mean of the two eye
/// positions, direction towards the reported screen intersection.
pub fn local_gaze(eye_left: Vec3, eye_right: Vec3, screen_point: Vec3) -> Result<GazeRay> {
    let midpoint = (eye_left + eye_right) * 0.5;
    GazeRay::through(midpoint, screen_point, FrameId::ScreenCentre)
}

/// Like [`local_gaze`] but accepts monocular samples, which are flagged as degraded.
pub fn gaze_from_eyes(eyes: EyePositions, screen_point: Vec3) -> Result<GazeSample> {
    match eyes {
        EyePositions::Both { left, right } => {
            Ok(GazeSample { ray: local_gaze(left, right, screen_point)?, degraded: false })
        }
        EyePositions::LeftOnly(eye) | EyePositions::RightOnly(eye) => Ok(GazeSample {
            ray: GazeRay::through(eye, screen_point, FrameId::ScreenCentre)?,
            degraded: true,
        }),
    }
}

/// Stores the tracker-base → screen-centre transform while both are tracked:
/// `ᵇH_c = (ʷH_b)⁻¹ · ʷH_c`, so that `ʷH_b · ᵇH_c = ʷH_c`.
pub fn calibrate_tracker_to_screen(world_to_screen: &Pose, world_to_tracker: &Pose) -> Result<Pose> {
    if world_to_screen.parent != world_to_tracker.parent {
        return Err(Error::FrameMismatch {
            expected: world_to_tracker.parent.clone(),
            found: world_to_screen.parent.clone(),
        });
    }
    compose(&invert(world_to_tracker), world_to_screen)
}

/// Gaze in the world frame from the live tracker pose and the stored calibration.
pub fn world_gaze(world_to_tracker: &Pose, stored_base_to_screen: &Pose, local: &GazeRay) -> Result<GazeRay> {
    let world_to_screen = compose(world_to_tracker, stored_base_to_screen)?;
    local.transformed(&world_to_screen)
}

/// Angle between the two ray directions in degrees, in `[0, 180]`.
///
/// Evaluated as `atan2(|a × b|, a · b)`, which equals the arccosine of the
/// normalized dot product without its loss of precision near 0° and 180°.
pub fn angular_shift(g1: &GazeRay, g2: &GazeRay) -> f64 {
    debug_assert_eq!(g1.frame, g2.frame, "angular_shift on rays in different frames");
    angle_between(&g1.direction, &g2.direction)
}

pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    atan2(cross, dot).to_degrees()
}

/// Rectangular screen: the plane `z = 0` of the screen-centre frame, front
/// face towards `+z`, in-plane `x` to the right and `y` up.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenPlane {
    pose: Pose,
    width: f64,
    height: f64,
}

impl ScreenPlane {
    /// `pose` maps screen-centre coordinates into its parent (normally the world).
    pub fn new(pose: Pose, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "screen dimensions must be positive, got {width} x {height}"
            )));
        }
        if pose.child != FrameId::ScreenCentre {
            return Err(Error::FrameMismatch { expected: FrameId::ScreenCentre, found: pose.child.clone() });
        }
        Ok(Self { pose, width, height })
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x.abs() <= 0.5 * self.width && p.y.abs() <= 0.5 * self.height
    }

    /// Screen coordinates (mm from centre) to a point in the pose's parent frame.
    pub fn to_parent(&self, p: &Vec2) -> Vec3 {
        self.pose.transform_point(&Vec3::new(p.x, p.y, 0.0))
    }

    /// A point `distance` mm in front of the screen coordinate `p`, in the parent frame.
    pub fn point_in_front(&self, p: &Vec2, distance: f64) -> Vec3 {
        self.pose.transform_point(&Vec3::new(p.x, p.y, distance))
    }

    pub fn normal(&self) -> Vec3 {
        self.pose.transform_vector(&Vec3::z())
    }
}

/// Where a ray meets the front face of the screen, in screen coordinates.
///
/// Accepts rays in either the screen-centre frame or the screen pose's parent
/// frame. `None` when parallel, behind the ray origin, hitting the back face,
/// outside the screen bounds, or in an unrelated frame.
pub fn ray_plane_intersection(ray: &GazeRay, plane: &ScreenPlane) -> Option<Vec2> {
    let local = if ray.frame == plane.pose.child {
        ray.clone()
    } else if ray.frame == plane.pose.parent {
        ray.transformed(&invert(&plane.pose)).ok()?
    } else {
        return None;
    };
    let denom = local.direction.z;
    if denom.abs() < PARALLEL_TOLERANCE || denom > 0.0 {
        return None;
    }
    let lambda = -local.origin.z / denom;
    if lambda < 0.0 {
        return None;
    }
    let hit = local.point_at(lambda);
    let p = Vec2::new(hit.x, hit.y);
    plane.contains(&p).then_some(p)
}
