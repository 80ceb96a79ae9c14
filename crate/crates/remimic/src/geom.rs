//! Rigid-transform algebra, the kinematic hand model, forward kinematics,
//! keypoint Jacobians, and mirroring.
//!
//! Rotations are unit quaternions stored in (w, x, y, z) order and
//! canonicalized to w ≥ 0 so that equal rotations compare and serialize
//! identically. Mirroring is fixed to the YZ plane (x-negation), which is
//! self-inverse and matches the left/right hand symmetry convention.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hand model: {0}")]
    InvalidModel(String),
}

/// Rigid transform: translation in meters plus a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

/// Canonicalize to the w ≥ 0 cover; renormalize only when drifted, so that
/// already-unit quaternions keep their exact bit pattern (file round-trips).
fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut inner = q.into_inner();
    let n2 = inner.norm_squared();
    if (n2 - 1.0).abs() > 1e-12 {
        inner /= n2.sqrt();
    }
    if inner.w < 0.0 {
        inner = -inner;
    }
    UnitQuaternion::new_unchecked(inner)
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: canonical(rotation),
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, UnitQuaternion::identity())
    }

    /// Build from (tx, ty, tz, qw, qx, qy, qz). The rotation part goes
    /// through the same drift-gated canonicalization as every pose, so an
    /// already-unit quaternion keeps its exact bits.
    pub fn from_array(v: [f64; 7]) -> Self {
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            UnitQuaternion::new_unchecked(q),
        )
    }

    /// Flatten to (tx, ty, tz, qw, qx, qy, qz).
    pub fn to_array(self) -> [f64; 7] {
        let t = self.translation;
        let q = self.rotation.into_inner();
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    /// Composition a∘b: apply `b` first in `a`'s frame.
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose::new(
            self.translation + self.rotation * b.translation,
            self.rotation * b.rotation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose::new(-(inv_rot * self.translation), inv_rot)
    }

    /// Apply to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }

    /// Geodesic rotation angle in radians, in [0, π].
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation * other.rotation.inverse();
        let v = rel.into_inner();
        let vec_norm = Vector3::new(v.i, v.j, v.k).norm();
        2.0 * vec_norm.atan2(v.w.abs())
    }
}

/// Translation distance in meters and geodesic rotation angle in degrees.
pub fn pose_difference(a: &Pose, b: &Pose) -> (f64, f64) {
    let t_err = (a.translation - b.translation).norm();
    let r_err = a.rotation_angle_to(b).to_degrees();
    (t_err, r_err)
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 7]>::deserialize(d)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(D::Error::custom("non-finite pose component"));
        }
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(D::Error::custom(format!(
                "quaternion norm {norm} too far from 1"
            )));
        }
        Ok(Pose::from_array(v))
    }
}

/// Linear (m/s) and angular (rad/s) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }
}

impl Serialize for Twist {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Twist {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 6]>::deserialize(d)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(D::Error::custom("non-finite twist component"));
        }
        Ok(Twist::from_array(v))
    }
}

// ---------------------------------------------------------------------------
// Mirroring across the YZ plane (x → −x).
// ---------------------------------------------------------------------------

pub fn mirror_point(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-p.x, p.y, p.z)
}

/// Conjugate a rotation by the YZ-plane reflection: (w,x,y,z) → (w,x,−y,−z).
pub fn mirror_rotation(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let v = q.into_inner();
    UnitQuaternion::new_unchecked(Quaternion::new(v.w, v.i, -v.j, -v.k))
}

pub fn mirror_pose(p: &Pose) -> Pose {
    Pose {
        translation: mirror_point(&p.translation),
        rotation: mirror_rotation(&p.rotation),
    }
}

/// Linear parts reflect as vectors, angular parts as pseudo-vectors.
pub fn mirror_twist(t: &Twist) -> Twist {
    Twist {
        linear: Vector3::new(-t.linear.x, t.linear.y, t.linear.z),
        angular: Vector3::new(t.angular.x, -t.angular.y, -t.angular.z),
    }
}

/// Rotation axes conjugate like angular velocities.
fn mirror_axis(a: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(a.x, -a.y, -a.z)
}

// ---------------------------------------------------------------------------
// Hand model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub fn flipped(self) -> Self {
        match self {
            HandSide::Left => HandSide::Right,
            HandSide::Right => HandSide::Left,
        }
    }
}

/// Rigid link. Links must be listed parent-before-child; the root has no
/// parent and its fixed transform is relative to the wrist frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    /// Fixed transform from the parent link frame (wrist frame for the root).
    pub local: Pose,
}

/// Revolute joint actuating `child_link` about `axis` (in the frame reached
/// after the link's fixed transform).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joint {
    pub child_link: usize,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
}

impl Joint {
    pub fn axis_vec(&self) -> Vector3<f64> {
        Vector3::new(self.axis[0], self.axis[1], self.axis[2])
    }
}

/// Tracked point attached to a link, with reward weight `weight` (w) and decay
/// rate `decay` (λ). `human_index` names the reference-keypoint this point
/// corresponds to; several model keypoints may share one physical attachment
/// to express many-to-one finger mappings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Keypoint {
    pub link: usize,
    pub offset: [f64; 3],
    pub weight: f64,
    pub decay: f64,
    #[serde(default)]
    pub fingertip: bool,
    pub human_index: usize,
}

impl Keypoint {
    pub fn offset_vec(&self) -> Vector3<f64> {
        Vector3::new(self.offset[0], self.offset[1], self.offset[2])
    }
}

/// Kinematic tree of a dexterous hand with keypoint attachments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandModel {
    pub name: String,
    pub side: HandSide,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub keypoints: Vec<Keypoint>,
}

impl HandModel {
    /// Number of actuated degrees of freedom K.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of keypoints F.
    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn fingertip_indices(&self) -> Vec<usize> {
        self.keypoints
            .iter()
            .enumerate()
            .filter(|(_, k)| k.fingertip)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.links.is_empty() {
            return Err(GeomError::InvalidModel("no links".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            match link.parent {
                None if i != 0 => {
                    return Err(GeomError::InvalidModel(format!(
                        "link {i} ({}) has no parent but is not the root",
                        link.name
                    )))
                }
                Some(p) if p >= i => {
                    return Err(GeomError::InvalidModel(format!(
                        "link {i} ({}) must be listed after its parent {p}",
                        link.name
                    )))
                }
                Some(_) | None => {}
            }
        }
        let mut actuated = vec![false; self.links.len()];
        for (j, joint) in self.joints.iter().enumerate() {
            if joint.child_link >= self.links.len() || joint.child_link == 0 {
                return Err(GeomError::InvalidModel(format!(
                    "joint {j} drives invalid link {}",
                    joint.child_link
                )));
            }
            if actuated[joint.child_link] {
                return Err(GeomError::InvalidModel(format!(
                    "link {} driven by more than one joint",
                    joint.child_link
                )));
            }
            actuated[joint.child_link] = true;
            if (joint.axis_vec().norm() - 1.0).abs() > 1e-9 {
                return Err(GeomError::InvalidModel(format!("joint {j} axis not unit")));
            }
            if !(joint.limits[0] < joint.limits[1]) {
                return Err(GeomError::InvalidModel(format!(
                    "joint {j} limits not ordered"
                )));
            }
            if joint.kp < 0.0 || joint.kd < 0.0 || joint.torque_limit <= 0.0 {
                return Err(GeomError::InvalidModel(format!("joint {j} gains invalid")));
            }
        }
        for (i, kp) in self.keypoints.iter().enumerate() {
            if kp.link >= self.links.len() {
                return Err(GeomError::InvalidModel(format!(
                    "keypoint {i} references invalid link {}",
                    kp.link
                )));
            }
            if kp.weight < 0.0 || kp.decay < 0.0 {
                return Err(GeomError::InvalidModel(format!(
                    "keypoint {i} weight/decay negative"
                )));
            }
        }
        Ok(())
    }

    /// Joint index driving each link, if any.
    fn joint_of_link(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.links.len()];
        for (j, joint) in self.joints.iter().enumerate() {
            map[joint.child_link] = Some(j);
        }
        map
    }

    /// Per-joint (lo, hi) limits as vectors.
    pub fn limit_vectors(&self) -> (DVector<f64>, DVector<f64>) {
        let lo = DVector::from_iterator(self.joints.len(), self.joints.iter().map(|j| j.limits[0]));
        let hi = DVector::from_iterator(self.joints.len(), self.joints.iter().map(|j| j.limits[1]));
        (lo, hi)
    }

    pub fn mid_range(&self) -> DVector<f64> {
        let (lo, hi) = self.limit_vectors();
        (lo + hi) * 0.5
    }

    pub fn clamp_to_limits(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.joints.len(),
            self.joints
                .iter()
                .zip(q.iter())
                .map(|(j, &v)| v.clamp(j.limits[0], j.limits[1])),
        )
    }

    /// World pose of every link for joint angles `q` and wrist pose.
    pub fn link_poses(&self, q: &DVector<f64>, wrist: &Pose) -> Result<Vec<Pose>, GeomError> {
        if q.len() != self.dof() {
            return Err(GeomError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        let joint_of = self.joint_of_link();
        let mut poses = Vec::with_capacity(self.links.len());
        for (i, link) in self.links.iter().enumerate() {
            let parent = match link.parent {
                Some(p) => poses[p],
                None => *wrist,
            };
            let mut pose = parent.compose(&link.local);
            if let Some(j) = joint_of[i] {
                let axis = Unit::new_normalize(self.joints[j].axis_vec());
                let rot = UnitQuaternion::from_axis_angle(&axis, q[j]);
                pose = pose.compose(&Pose::new(Vector3::zeros(), rot));
            }
            poses.push(pose);
        }
        Ok(poses)
    }

    /// World positions of all keypoints.
    pub fn forward_kinematics(
        &self,
        q: &DVector<f64>,
        wrist: &Pose,
    ) -> Result<Vec<Vector3<f64>>, GeomError> {
        let poses = self.link_poses(q, wrist)?;
        Ok(self
            .keypoints
            .iter()
            .map(|k| poses[k.link].transform_point(&k.offset_vec()))
            .collect())
    }

    /// ∂keypoints/∂(q, wrist twist) as a (3F)×(K+6) matrix. The six wrist
    /// columns use a body-frame twist (δv then δω): wrist ← wrist∘Exp(ξ).
    pub fn keypoint_jacobian(
        &self,
        q: &DVector<f64>,
        wrist: &Pose,
    ) -> Result<DMatrix<f64>, GeomError> {
        let poses = self.link_poses(q, wrist)?;
        let joint_of = self.joint_of_link();
        let k = self.dof();
        let f = self.keypoints.len();
        let mut jac = DMatrix::zeros(3 * f, k + 6);

        // World-frame axis and origin of each joint's rotation.
        let mut joint_axis_world = vec![Vector3::zeros(); k];
        let mut joint_origin_world = vec![Vector3::zeros(); k];
        for (i, link) in self.links.iter().enumerate() {
            if let Some(j) = joint_of[i] {
                let parent = match link.parent {
                    Some(p) => poses[p],
                    None => *wrist,
                };
                let frame = parent.compose(&link.local);
                joint_axis_world[j] = frame.rotation * self.joints[j].axis_vec();
                joint_origin_world[j] = frame.translation;
            }
        }

        // Chain of joints from root to each link.
        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(self.links.len());
        for (i, link) in self.links.iter().enumerate() {
            let mut chain = match link.parent {
                Some(p) => chains[p].clone(),
                None => Vec::new(),
            };
            if let Some(j) = joint_of[i] {
                chain.push(j);
            }
            chains.push(chain);
        }

        let rot_w = wrist.rotation.to_rotation_matrix();
        for (ki, kp) in self.keypoints.iter().enumerate() {
            let p = poses[kp.link].transform_point(&kp.offset_vec());
            for &j in &chains[kp.link] {
                let col = joint_axis_world[j].cross(&(p - joint_origin_world[j]));
                jac.fixed_view_mut::<3, 1>(3 * ki, j).copy_from(&col);
            }
            // p = wrist ∘ x_local: δp = R_w(δv + δω × x_local).
            let x_local = wrist.rotation.inverse() * (p - wrist.translation);
            jac.fixed_view_mut::<3, 3>(3 * ki, k)
                .copy_from(rot_w.matrix());
            let m = rot_w.matrix() * (-skew(&x_local));
            jac.fixed_view_mut::<3, 3>(3 * ki, k + 3).copy_from(&m);
        }
        Ok(jac)
    }

    /// Model reflected across the YZ plane; FK of the mirrored model equals
    /// the mirrored FK of the original at identical joint angles.
    pub fn mirrored(&self) -> HandModel {
        HandModel {
            name: format!("{}-mirrored", self.name),
            side: self.side.flipped(),
            links: self
                .links
                .iter()
                .map(|l| Link {
                    name: l.name.clone(),
                    parent: l.parent,
                    local: mirror_pose(&l.local),
                })
                .collect(),
            joints: self
                .joints
                .iter()
                .map(|j| {
                    let a = mirror_axis(&j.axis_vec());
                    Joint {
                        child_link: j.child_link,
                        axis: [a.x, a.y, a.z],
                        ..j.clone()
                    }
                })
                .collect(),
            keypoints: self
                .keypoints
                .iter()
                .map(|k| {
                    let o = mirror_point(&k.offset_vec());
                    Keypoint {
                        offset: [o.x, o.y, o.z],
                        ..k.clone()
                    }
                })
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<HandModel, GeomError> {
        let model: HandModel = serde_json::from_str(text)
            .map_err(|e| GeomError::InvalidModel(format!("parse: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("hand model serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<HandModel, GeomError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeomError::InvalidModel(format!("read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
