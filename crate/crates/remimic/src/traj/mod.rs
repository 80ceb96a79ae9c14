//! Reference-clip data model, file I/O, wrist-relative normalization,
//! resampling, synthetic interpolation, and object-shape encodings.
//!
//! Clip files are JSON with top-level `{version, fps, hands[], objects[],
//! shapes[]}`; poses are 7 numbers `(tx,ty,tz,qw,qx,qy,qz)`, twists 6 numbers
//! `(vx,vy,vz,wx,wy,wz)`. The `version` field is mandatory. Velocities may be
//! omitted and are then reconstructed by central finite differences
//! (one-sided at the ends).

pub mod bps;
pub mod hull;
pub mod shape;

pub use bps::{bps_encode, unit_ball_basis, BpsEncoding, BPS_BASIS_SIZE};
pub use hull::{convex_hull, ConvexMesh};
pub use shape::{HingeSpec, MassProperties, ObjectShape, ShapeKind, SurfacePoint};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::geom::{mirror_point, mirror_pose, mirror_twist, HandSide, Pose, Twist};

pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("io error: {0}")]
    Io(String),
}

/// One hand's trajectory. All per-frame vectors share length T; `joints` is
/// an optional per-frame joint-angle solution (retargeting sidecars store it).
#[derive(Debug, Clone, PartialEq)]
pub struct HandTrack {
    pub side: HandSide,
    pub wrist: Vec<Pose>,
    pub wrist_vel: Vec<Twist>,
    /// `[frame][keypoint]` world positions.
    pub keypoints: Vec<Vec<Vector3<f64>>>,
    pub keypoint_vel: Vec<Vec<Vector3<f64>>>,
    pub joints: Option<Vec<DVector<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    /// Index into `ReferenceClip::shapes`.
    pub shape: usize,
    pub pose: Vec<Pose>,
    pub vel: Vec<Twist>,
    pub articulation: Option<Vec<f64>>,
    pub articulation_vel: Option<Vec<f64>>,
}

/// Time-indexed reference trajectories for up to two hands and two objects.
#[derive(Debug, Clone)]
pub struct ReferenceClip {
    pub fps: f64,
    pub hands: Vec<HandTrack>,
    pub objects: Vec<ObjectTrack>,
    pub shapes: Vec<ObjectShape>,
}

// ---------------------------------------------------------------------------
// File schema (field names are frozen; see README).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipFile {
    version: u32,
    fps: f64,
    hands: Vec<HandTrackFile>,
    #[serde(default)]
    objects: Vec<ObjectTrackFile>,
    #[serde(default)]
    shapes: Vec<ObjectShape>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandTrackFile {
    side: HandSide,
    wrist: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wrist_vel: Option<Vec<Twist>>,
    keypoints: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoint_vel: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectTrackFile {
    shape: usize,
    pose: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vel: Option<Vec<Twist>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    articulation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    articulation_vel: Option<Vec<f64>>,
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

// ---------------------------------------------------------------------------
// Finite-difference velocity reconstruction
// ---------------------------------------------------------------------------

/// Central differences in the interior, one-sided at the ends.
pub(crate) fn fd_linear(xs: &[Vector3<f64>], fps: f64) -> Vec<Vector3<f64>> {
    let t = xs.len();
    (0..t)
        .map(|i| {
            if i == 0 {
                (xs[1] - xs[0]) * fps
            } else if i == t - 1 {
                (xs[t - 1] - xs[t - 2]) * fps
            } else {
                (xs[i + 1] - xs[i - 1]) * (fps / 2.0)
            }
        })
        .collect()
}

pub(crate) fn fd_scalar(xs: &[f64], fps: f64) -> Vec<f64> {
    let t = xs.len();
    (0..t)
        .map(|i| {
            if i == 0 {
                (xs[1] - xs[0]) * fps
            } else if i == t - 1 {
                (xs[t - 1] - xs[t - 2]) * fps
            } else {
                (xs[i + 1] - xs[i - 1]) * (fps / 2.0)
            }
        })
        .collect()
}

/// Angular velocity from quaternion differences (world frame).
pub(crate) fn fd_angular(qs: &[UnitQuaternion<f64>], fps: f64) -> Vec<Vector3<f64>> {
    let t = qs.len();
    (0..t)
        .map(|i| {
            let (a, b, scale) = if i == 0 {
                (qs[0], qs[1], fps)
            } else if i == t - 1 {
                (qs[t - 2], qs[t - 1], fps)
            } else {
                (qs[i - 1], qs[i + 1], fps / 2.0)
            };
            (b * a.inverse()).scaled_axis() * scale
        })
        .collect()
}

pub(crate) fn fd_twists(poses: &[Pose], fps: f64) -> Vec<Twist> {
    let translations: Vec<_> = poses.iter().map(|p| p.translation).collect();
    let rotations: Vec<_> = poses.iter().map(|p| p.rotation).collect();
    fd_linear(&translations, fps)
        .into_iter()
        .zip(fd_angular(&rotations, fps))
        .map(|(l, a)| Twist::new(l, a))
        .collect()
}

// ---------------------------------------------------------------------------
// Load / save / validate
// ---------------------------------------------------------------------------

impl ReferenceClip {
    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.hands
            .first()
            .map(|h| h.wrist.len())
            .or_else(|| self.objects.first().map(|o| o.pose.len()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(TrajError::Validation(format!("fps {} invalid", self.fps)));
        }
        if self.hands.len() > 2 {
            return Err(TrajError::Validation(format!(
                "at most 2 hands supported, got {}",
                self.hands.len()
            )));
        }
        if self.objects.len() > 2 {
            return Err(TrajError::Validation(format!(
                "at most 2 objects supported, got {}",
                self.objects.len()
            )));
        }
        if self.hands.is_empty() && self.objects.is_empty() {
            return Err(TrajError::Validation("clip has no tracks".into()));
        }
        let t = self.len();
        if t < 2 {
            return Err(TrajError::Validation(format!(
                "clip length {t} < 2 frames"
            )));
        }
        for (hi, hand) in self.hands.iter().enumerate() {
            let check = |name: &str, len: usize| {
                if len != t {
                    Err(TrajError::Validation(format!(
                        "hand {hi} field {name}: length {len} != {t}"
                    )))
                } else {
                    Ok(())
                }
            };
            check("wrist", hand.wrist.len())?;
            check("wrist_vel", hand.wrist_vel.len())?;
            check("keypoints", hand.keypoints.len())?;
            check("keypoint_vel", hand.keypoint_vel.len())?;
            let f = hand.keypoints[0].len();
            if f == 0 {
                return Err(TrajError::Validation(format!(
                    "hand {hi} has no keypoints"
                )));
            }
            for (fi, (kp, kv)) in hand
                .keypoints
                .iter()
                .zip(hand.keypoint_vel.iter())
                .enumerate()
            {
                if kp.len() != f || kv.len() != f {
                    return Err(TrajError::Validation(format!(
                        "hand {hi} frame {fi}: keypoint count differs ({} / {} vs {f})",
                        kp.len(),
                        kv.len()
                    )));
                }
                for v in kp.iter().chain(kv.iter()) {
                    if !v.iter().all(|x| x.is_finite()) {
                        return Err(TrajError::Validation(format!(
                            "hand {hi} frame {fi}: non-finite keypoint data"
                        )));
                    }
                }
            }
            if let Some(joints) = &hand.joints {
                check("joints", joints.len())?;
                let k = joints[0].len();
                for (fi, q) in joints.iter().enumerate() {
                    if q.len() != k {
                        return Err(TrajError::Validation(format!(
                            "hand {hi} frame {fi}: joint count differs"
                        )));
                    }
                }
            }
        }
        for (oi, obj) in self.objects.iter().enumerate() {
            if obj.shape >= self.shapes.len() {
                return Err(TrajError::Validation(format!(
                    "object {oi} references shape {} of {}",
                    obj.shape,
                    self.shapes.len()
                )));
            }
            if obj.pose.len() != t || obj.vel.len() != t {
                return Err(TrajError::Validation(format!(
                    "object {oi}: track length mismatch"
                )));
            }
            for (name, series) in [
                ("articulation", &obj.articulation),
                ("articulation_vel", &obj.articulation_vel),
            ] {
                if let Some(s) = series {
                    if s.len() != t {
                        return Err(TrajError::Validation(format!(
                            "object {oi} field {name}: length {} != {t}",
                            s.len()
                        )));
                    }
                    if !s.iter().all(|x| x.is_finite()) {
                        return Err(TrajError::Validation(format!(
                            "object {oi} field {name}: non-finite"
                        )));
                    }
                }
            }
            if obj.articulation.is_some() && self.shapes[obj.shape].hinge.is_none() {
                return Err(TrajError::Validation(format!(
                    "object {oi} has articulation but shape {} declares no hinge",
                    obj.shape
                )));
            }
        }
        for (si, shape) in self.shapes.iter().enumerate() {
            shape
                .validate()
                .map_err(|e| TrajError::Validation(format!("shape {si}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<ReferenceClip, TrajError> {
        let file: ClipFile = serde_json::from_str(text).map_err(|e| {
            if e.is_syntax() || e.is_eof() {
                TrajError::Parse(e.to_string())
            } else {
                TrajError::Schema(e.to_string())
            }
        })?;
        if file.version != CLIP_VERSION {
            return Err(TrajError::Validation(format!(
                "unsupported clip version {} (expected {CLIP_VERSION})",
                file.version
            )));
        }
        let fps = file.fps;
        let mut hands = Vec::with_capacity(file.hands.len());
        for h in file.hands {
            let keypoints: Vec<Vec<Vector3<f64>>> = h
                .keypoints
                .iter()
                .map(|frame| frame.iter().map(vec3).collect())
                .collect();
            let wrist_vel = match h.wrist_vel {
                Some(v) => v,
                None => {
                    if h.wrist.len() < 2 {
                        return Err(TrajError::Validation(
                            "cannot reconstruct velocities with fewer than 2 frames".into(),
                        ));
                    }
                    fd_twists(&h.wrist, fps)
                }
            };
            let keypoint_vel: Vec<Vec<Vector3<f64>>> = match h.keypoint_vel {
                Some(kv) => kv
                    .iter()
                    .map(|frame| frame.iter().map(vec3).collect())
                    .collect(),
                None => fd_keypoint_velocities(&keypoints, fps)?,
            };
            hands.push(HandTrack {
                side: h.side,
                wrist: h.wrist,
                wrist_vel,
                keypoints,
                keypoint_vel,
                joints: h
                    .joints
                    .map(|js| js.into_iter().map(DVector::from_vec).collect()),
            });
        }
        let mut objects = Vec::with_capacity(file.objects.len());
        for o in file.objects {
            let vel = match o.vel {
                Some(v) => v,
                None => {
                    if o.pose.len() < 2 {
                        return Err(TrajError::Validation(
                            "cannot reconstruct velocities with fewer than 2 frames".into(),
                        ));
                    }
                    fd_twists(&o.pose, fps)
                }
            };
            let articulation_vel = match (&o.articulation, o.articulation_vel) {
                (_, Some(v)) => Some(v),
                (Some(a), None) if a.len() >= 2 => Some(fd_scalar(a, fps)),
                _ => None,
            };
            objects.push(ObjectTrack {
                shape: o.shape,
                pose: o.pose,
                vel,
                articulation: o.articulation,
                articulation_vel,
            });
        }
        let clip = ReferenceClip {
            fps,
            hands,
            objects,
            shapes: file.shapes,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn to_json_string(&self) -> String {
        let file = ClipFile {
            version: CLIP_VERSION,
            fps: self.fps,
            hands: self
                .hands
                .iter()
                .map(|h| HandTrackFile {
                    side: h.side,
                    wrist: h.wrist.clone(),
                    wrist_vel: Some(h.wrist_vel.clone()),
                    keypoints: h
                        .keypoints
                        .iter()
                        .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                        .collect(),
                    keypoint_vel: Some(
                        h.keypoint_vel
                            .iter()
                            .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                            .collect(),
                    ),
                    joints: h
                        .joints
                        .as_ref()
                        .map(|js| js.iter().map(|q| q.iter().copied().collect()).collect()),
                })
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectTrackFile {
                    shape: o.shape,
                    pose: o.pose.clone(),
                    vel: Some(o.vel.clone()),
                    articulation: o.articulation.clone(),
                    articulation_vel: o.articulation_vel.clone(),
                })
                .collect(),
            shapes: self.shapes.clone(),
        };
        serde_json::to_string(&file).expect("clip serializes")
    }

    pub fn load(path: &Path) -> Result<ReferenceClip, TrajError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrajError::Io(format!("read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajError> {
        crate::config::write_atomic(path, self.to_json_string().as_bytes())
            .map_err(|e| TrajError::Io(format!("write {}: {e}", path.display())))
    }

    /// Snapshot of hand `hand` and all objects at frame `t`.
    pub fn frame_view(&self, hand: usize, t: usize) -> FrameView {
        let h = &self.hands[hand];
        FrameView {
            wrist: h.wrist[t],
            wrist_vel: h.wrist_vel[t],
            keypoints: h.keypoints[t].clone(),
            keypoint_vel: h.keypoint_vel[t].clone(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectView {
                    pose: o.pose[t],
                    vel: o.vel[t],
                    articulation: o.articulation.as_ref().map(|a| a[t]),
                    articulation_vel: o.articulation_vel.as_ref().map(|a| a[t]),
                })
                .collect(),
        }
    }

    /// Mirror across the YZ plane: positions x→−x, rotations conjugated,
    /// hand sides swapped, velocities reflected, mesh windings reversed.
    pub fn mirrored(&self) -> ReferenceClip {
        ReferenceClip {
            fps: self.fps,
            hands: self
                .hands
                .iter()
                .map(|h| HandTrack {
                    side: h.side.flipped(),
                    wrist: h.wrist.iter().map(mirror_pose).collect(),
                    wrist_vel: h.wrist_vel.iter().map(mirror_twist).collect(),
                    keypoints: h
                        .keypoints
                        .iter()
                        .map(|f| f.iter().map(mirror_point).collect())
                        .collect(),
                    keypoint_vel: h
                        .keypoint_vel
                        .iter()
                        .map(|f| f.iter().map(mirror_point).collect())
                        .collect(),
                    joints: h.joints.clone(),
                })
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectTrack {
                    shape: o.shape,
                    pose: o.pose.iter().map(mirror_pose).collect(),
                    vel: o.vel.iter().map(mirror_twist).collect(),
                    articulation: o.articulation.clone(),
                    articulation_vel: o.articulation_vel.clone(),
                })
                .collect(),
            shapes: self.shapes.iter().map(mirror_shape).collect(),
        }
    }

    /// Interpolate onto a uniform grid at `target_fps` ≤ fps; velocities are
    /// recomputed on the new grid.
    pub fn resample(&self, target_fps: f64) -> Result<ReferenceClip, TrajError> {
        if !(target_fps > 0.0) || target_fps > self.fps + 1e-9 {
            return Err(TrajError::InvalidRate(format!(
                "target fps {target_fps} not in (0, {}]",
                self.fps
            )));
        }
        if (target_fps - self.fps).abs() < 1e-9 {
            return Ok(self.clone());
        }
        let t_src = self.len();
        let duration = (t_src - 1) as f64 / self.fps;
        let n_out = (duration * target_fps + 1e-9).floor() as usize + 1;

        // Source sample position for output frame i: (frame index, fraction).
        let locate = |i: usize| -> (usize, f64) {
            let s = i as f64 / target_fps * self.fps;
            let k = (s.floor() as usize).min(t_src - 1);
            let u = s - k as f64;
            if u < 1e-9 || k + 1 >= t_src {
                (k, 0.0)
            } else {
                (k, u)
            }
        };
        let lerp_pose = |a: &Pose, b: &Pose, u: f64| -> Pose {
            Pose::new(
                a.translation * (1.0 - u) + b.translation * u,
                slerp_shortest(&a.rotation, &b.rotation, u),
            )
        };

        let hands = self
            .hands
            .iter()
            .map(|h| {
                let wrist: Vec<Pose> = (0..n_out)
                    .map(|i| {
                        let (k, u) = locate(i);
                        if u == 0.0 {
                            h.wrist[k]
                        } else {
                            lerp_pose(&h.wrist[k], &h.wrist[k + 1], u)
                        }
                    })
                    .collect();
                let keypoints: Vec<Vec<Vector3<f64>>> = (0..n_out)
                    .map(|i| {
                        let (k, u) = locate(i);
                        if u == 0.0 {
                            h.keypoints[k].clone()
                        } else {
                            h.keypoints[k]
                                .iter()
                                .zip(h.keypoints[k + 1].iter())
                                .map(|(a, b)| a * (1.0 - u) + b * u)
                                .collect()
                        }
                    })
                    .collect();
                let joints = h.joints.as_ref().map(|js| {
                    (0..n_out)
                        .map(|i| {
                            let (k, u) = locate(i);
                            if u == 0.0 {
                                js[k].clone()
                            } else {
                                &js[k] * (1.0 - u) + &js[k + 1] * u
                            }
                        })
                        .collect()
                });
                let wrist_vel = fd_twists(&wrist, target_fps);
                let keypoint_vel = fd_keypoint_velocities(&keypoints, target_fps)
                    .expect("resampled keypoints are well-formed");
                HandTrack {
                    side: h.side,
                    wrist,
                    wrist_vel,
                    keypoints,
                    keypoint_vel,
                    joints,
                }
            })
            .collect();

        let objects = self
            .objects
            .iter()
            .map(|o| {
                let pose: Vec<Pose> = (0..n_out)
                    .map(|i| {
                        let (k, u) = locate(i);
                        if u == 0.0 {
                            o.pose[k]
                        } else {
                            lerp_pose(&o.pose[k], &o.pose[k + 1], u)
                        }
                    })
                    .collect();
                let articulation = o.articulation.as_ref().map(|a| {
                    (0..n_out)
                        .map(|i| {
                            let (k, u) = locate(i);
                            if u == 0.0 {
                                a[k]
                            } else {
                                a[k] * (1.0 - u) + a[k + 1] * u
                            }
                        })
                        .collect::<Vec<f64>>()
                });
                let vel = fd_twists(&pose, target_fps);
                let articulation_vel = articulation.as_ref().map(|a| fd_scalar(a, target_fps));
                ObjectTrack {
                    shape: o.shape,
                    pose,
                    vel,
                    articulation,
                    articulation_vel,
                }
            })
            .collect();

        Ok(ReferenceClip {
            fps: target_fps,
            hands,
            objects,
            shapes: self.shapes.clone(),
        })
    }
}

fn fd_keypoint_velocities(
    keypoints: &[Vec<Vector3<f64>>],
    fps: f64,
) -> Result<Vec<Vec<Vector3<f64>>>, TrajError> {
    let t = keypoints.len();
    if t < 2 {
        return Err(TrajError::Validation(
            "cannot reconstruct velocities with fewer than 2 frames".into(),
        ));
    }
    let f = keypoints[0].len();
    let mut out = vec![Vec::with_capacity(f); t];
    for ki in 0..f {
        let series: Vec<Vector3<f64>> = keypoints
            .iter()
            .map(|frame| {
                *frame
                    .get(ki)
                    .unwrap_or_else(|| panic!("ragged keypoint frame"))
            })
            .collect();
        for (ti, v) in fd_linear(&series, fps).into_iter().enumerate() {
            out[ti].push(v);
        }
    }
    Ok(out)
}

fn mirror_shape(shape: &ObjectShape) -> ObjectShape {
    let mut out = shape.clone();
    if let ShapeKind::ConvexMesh { vertices, faces } = &mut out.kind {
        for v in vertices.iter_mut() {
            v[0] = -v[0];
        }
        for f in faces.iter_mut() {
            f.reverse();
        }
    }
    if let Some(h) = &mut out.hinge {
        h.axis = [h.axis[0], -h.axis[1], -h.axis[2]];
        h.anchor = [-h.anchor[0], h.anchor[1], h.anchor[2]];
    }
    out
}

// ---------------------------------------------------------------------------
// Wrist-relative normalization
// ---------------------------------------------------------------------------

/// One frame of hand + object state as seen by observation builders.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameView {
    pub wrist: Pose,
    pub wrist_vel: Twist,
    pub keypoints: Vec<Vector3<f64>>,
    pub keypoint_vel: Vec<Vector3<f64>>,
    pub objects: Vec<ObjectView>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectView {
    pub pose: Pose,
    pub vel: Twist,
    pub articulation: Option<f64>,
    pub articulation_vel: Option<f64>,
}

/// Express every translation relative to `wrist`'s translation; rotations and
/// velocities stay in the world frame (gravity direction is preserved).
pub fn normalize_to_wrist(view: &FrameView, wrist: &Pose) -> FrameView {
    let origin = wrist.translation;
    let shift_pose = |p: &Pose| Pose {
        translation: p.translation - origin,
        rotation: p.rotation,
    };
    FrameView {
        wrist: shift_pose(&view.wrist),
        wrist_vel: view.wrist_vel,
        keypoints: view.keypoints.iter().map(|p| p - origin).collect(),
        keypoint_vel: view.keypoint_vel.clone(),
        objects: view
            .objects
            .iter()
            .map(|o| ObjectView {
                pose: shift_pose(&o.pose),
                ..*o
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Synthetic interpolation
// ---------------------------------------------------------------------------

/// Single hand keyframe used for synthetic clip generation.
#[derive(Debug, Clone, PartialEq)]
pub struct HandKeyframe {
    pub wrist: Pose,
    pub keypoints: Vec<Vector3<f64>>,
}

/// Shortest-path spherical interpolation with exact endpoints.
pub fn slerp_shortest(
    a: &UnitQuaternion<f64>,
    b: &UnitQuaternion<f64>,
    t: f64,
) -> UnitQuaternion<f64> {
    if t <= 0.0 {
        return *a;
    }
    if t >= 1.0 {
        return *b;
    }
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        // Nearly parallel: normalized lerp.
        let mix = qa * (1.0 - t) + qb * t;
        return UnitQuaternion::new_normalize(mix);
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    UnitQuaternion::new_normalize(qa * wa + qb * wb)
}

/// Interpolate between two hand keyframes: wrist rotation slerped, wrist
/// translation and keypoints lerped. Endpoints are returned exactly.
pub fn synth_interpolate(a: &HandKeyframe, b: &HandKeyframe, n_frames: usize) -> Vec<HandKeyframe> {
    assert!(n_frames >= 2, "need at least 2 frames");
    assert_eq!(a.keypoints.len(), b.keypoints.len());
    (0..n_frames)
        .map(|i| {
            if i == 0 {
                return a.clone();
            }
            if i == n_frames - 1 {
                return b.clone();
            }
            let t = i as f64 / (n_frames - 1) as f64;
            HandKeyframe {
                wrist: Pose::new(
                    a.wrist.translation * (1.0 - t) + b.wrist.translation * t,
                    slerp_shortest(&a.wrist.rotation, &b.wrist.rotation, t),
                ),
                keypoints: a
                    .keypoints
                    .iter()
                    .zip(b.keypoints.iter())
                    .map(|(p, q)| p * (1.0 - t) + q * t)
                    .collect(),
            }
        })
        .collect()
}
