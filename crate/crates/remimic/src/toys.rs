//! Small built-in rigs with scripted reference motions.
//!
//! These exist so the whole pipeline can be exercised end to end in seconds:
//! a planar three-segment finger for pure tracking, and a two-finger gripper
//! with a box for the contact-rich stage. Their references are generated from
//! the models' own kinematics, so they are exactly trackable by construction.

use nalgebra::{DVector, UnitQuaternion, Vector3};

use crate::config::RunConfig;
use crate::geom::{HandModel, HandSide, Joint, Keypoint, Link, Pose, Twist};
use crate::traj::{fd_twists, HandTrack, ObjectShape, ObjectTrack, ReferenceClip, ShapeKind};

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

// ---------------------------------------------------------------------------
// Planar finger
// ---------------------------------------------------------------------------

/// A three-segment planar finger: segments of 4 cm hinging about z, tracked
/// at each segment end. The last keypoint is the fingertip.
pub fn planar_finger_model() -> HandModel {
    let seg = |name: &str, parent: usize, first: bool| Link {
        name: name.into(),
        parent: Some(parent),
        local: if first {
            Pose::identity()
        } else {
            Pose::new(Vector3::new(0.04, 0.0, 0.0), UnitQuaternion::identity())
        },
    };
    let joint = |child_link: usize| Joint {
        child_link,
        axis: [0.0, 0.0, 1.0],
        limits: [-1.4, 1.4],
        kp: 20.0,
        kd: 1.0,
        torque_limit: 5.0,
    };
    let model = HandModel {
        name: "planar_finger".into(),
        side: HandSide::Right,
        links: vec![
            Link {
                name: "palm".into(),
                parent: None,
                local: Pose::identity(),
            },
            seg("seg_1", 0, true),
            seg("seg_2", 1, false),
            seg("seg_3", 2, false),
        ],
        joints: vec![joint(1), joint(2), joint(3)],
        keypoints: vec![
            Keypoint {
                link: 1,
                offset: [0.04, 0.0, 0.0],
                weight: 0.4,
                decay: 50.0,
                fingertip: false,
                human_index: 6,
            },
            Keypoint {
                link: 2,
                offset: [0.04, 0.0, 0.0],
                weight: 0.4,
                decay: 50.0,
                fingertip: false,
                human_index: 7,
            },
            Keypoint {
                link: 3,
                offset: [0.04, 0.0, 0.0],
                weight: 0.9,
                decay: 100.0,
                fingertip: true,
                human_index: 8,
            },
        ],
    };
    debug_assert!(model.validate().is_ok());
    model
}

const FINGER_WRIST: [f64; 3] = [0.0, 0.0, 0.1];

fn finger_clip_from_joints(
    model: &HandModel,
    joints: Vec<DVector<f64>>,
    fps: f64,
) -> ReferenceClip {
    let frames = joints.len();
    let wrist = Pose::new(Vector3::from_row_slice(&FINGER_WRIST), UnitQuaternion::identity());
    let max_slot = model
        .keypoints
        .iter()
        .map(|kp| kp.human_index)
        .max()
        .unwrap_or(0);
    let keypoints: Vec<Vec<Vector3<f64>>> = joints
        .iter()
        .map(|q| {
            let fk = model.forward_kinematics(q, &wrist).expect("in-range joints");
            let mut row = vec![wrist.translation; max_slot + 1];
            for (ki, kp) in model.keypoints.iter().enumerate() {
                row[kp.human_index] = fk[ki];
            }
            row
        })
        .collect();
    let keypoint_vel = fd_point_tracks(&keypoints, fps);
    ReferenceClip {
        fps,
        hands: vec![HandTrack {
            side: model.side,
            wrist: vec![wrist; frames],
            wrist_vel: vec![Twist::zero(); frames],
            keypoints,
            keypoint_vel,
            joints: Some(joints),
        }],
        objects: vec![],
        shapes: vec![],
    }
}

/// Smooth multi-frequency joint waves, comfortably inside the limits.
pub fn finger_wave_clip(model: &HandModel, frames: usize, fps: f64) -> ReferenceClip {
    assert!(frames >= 2);
    let joints: Vec<DVector<f64>> = (0..frames)
        .map(|t| {
            let s = t as f64 / fps;
            DVector::from_vec(vec![
                0.6 + 0.5 * (2.0 * std::f64::consts::PI * 0.5 * s).sin(),
                0.4 * (2.0 * std::f64::consts::PI * 0.7 * s + 1.0).sin(),
                0.5 + 0.3 * (2.0 * std::f64::consts::PI * 0.9 * s + 2.0).sin(),
            ])
        })
        .collect();
    finger_clip_from_joints(model, joints, fps)
}

/// A held pose: the easiest possible tracking target.
pub fn finger_static_clip(model: &HandModel, frames: usize, fps: f64) -> ReferenceClip {
    assert!(frames >= 2);
    let q = DVector::from_vec(vec![0.5, 0.3, 0.4]);
    finger_clip_from_joints(model, vec![q; frames], fps)
}

// ---------------------------------------------------------------------------
// Two-finger gripper with a box
// ---------------------------------------------------------------------------

/// Distance from the palm to each finger mount along x.
const MOUNT_X: f64 = 0.06;
/// Finger length (mount to tip center).
const FINGER_LEN: f64 = 0.08;
/// Box half extent (a cube).
const BOX_HALF: f64 = 0.025;
/// Initial box center height.
const BOX_Z: f64 = 0.05;
/// How far the box is carried upward.
const LIFT: f64 = 0.05;

/// Closing angle at which each fingertip sphere (r = 12 mm) presses 1 mm into
/// the box faces: sin θ = (mount − (half + r − 1 mm)) / length = 0.3.
pub fn gripper_grasp_angle() -> f64 {
    (0.3f64).asin()
}

/// A palm with two single-hinge fingers pointing down, tips tracked as the
/// thumb/index pair.
pub fn gripper_model() -> HandModel {
    let finger = |name: &str, x: f64| Link {
        name: name.into(),
        parent: Some(0),
        local: Pose::new(Vector3::new(x, 0.0, 0.0), UnitQuaternion::identity()),
    };
    let joint = |child_link: usize| Joint {
        child_link,
        axis: [0.0, 1.0, 0.0],
        limits: [-0.6, 0.6],
        kp: 20.0,
        kd: 1.0,
        torque_limit: 5.0,
    };
    let tip = |link: usize, weight: f64, decay: f64, human_index: usize| Keypoint {
        link,
        offset: [0.0, 0.0, -FINGER_LEN],
        weight,
        decay,
        fingertip: true,
        human_index,
    };
    let model = HandModel {
        name: "gripper".into(),
        side: HandSide::Right,
        links: vec![
            Link {
                name: "palm".into(),
                parent: None,
                local: Pose::identity(),
            },
            finger("finger_a", -MOUNT_X),
            finger("finger_b", MOUNT_X),
        ],
        joints: vec![joint(1), joint(2)],
        keypoints: vec![tip(1, 0.9, 100.0, 4), tip(2, 0.8, 90.0, 8)],
    };
    debug_assert!(model.validate().is_ok());
    model
}

/// Scripted pick-and-lift: close both fingers onto the box over the first
/// half second, then carry it 5 cm upward. 91 frames at 60 fps.
pub fn gripper_lift_clip() -> ReferenceClip {
    let model = gripper_model();
    let fps = 60.0;
    let frames = 91usize;
    let close_end = 30usize;
    let lift_end = 90usize;
    let theta_g = gripper_grasp_angle();
    let wrist_z0 = BOX_Z + FINGER_LEN * theta_g.cos();

    let mut joints = Vec::with_capacity(frames);
    let mut wrists = Vec::with_capacity(frames);
    let mut boxes = Vec::with_capacity(frames);
    for t in 0..frames {
        let theta = theta_g * smoothstep(t as f64 / close_end as f64);
        let lift = LIFT
            * smoothstep((t as f64 - close_end as f64) / (lift_end - close_end) as f64);
        joints.push(DVector::from_vec(vec![-theta, theta]));
        wrists.push(Pose::new(
            Vector3::new(0.0, 0.0, wrist_z0 + lift),
            UnitQuaternion::identity(),
        ));
        boxes.push(Pose::new(
            Vector3::new(0.0, 0.0, BOX_Z + lift),
            UnitQuaternion::identity(),
        ));
    }

    let max_slot = model
        .keypoints
        .iter()
        .map(|kp| kp.human_index)
        .max()
        .unwrap_or(0);
    let keypoints: Vec<Vec<Vector3<f64>>> = joints
        .iter()
        .zip(&wrists)
        .map(|(q, wrist)| {
            let fk = model.forward_kinematics(q, wrist).expect("in-range joints");
            let mut row = vec![wrist.translation; max_slot + 1];
            for (ki, kp) in model.keypoints.iter().enumerate() {
                row[kp.human_index] = fk[ki];
            }
            row
        })
        .collect();

    let keypoint_vel = fd_point_tracks(&keypoints, fps);
    let clip = ReferenceClip {
        fps,
        hands: vec![HandTrack {
            side: model.side,
            wrist_vel: fd_twists(&wrists, fps),
            wrist: wrists,
            keypoints,
            keypoint_vel,
            joints: Some(joints),
        }],
        objects: vec![ObjectTrack {
            shape: 0,
            vel: fd_twists(&boxes, fps),
            pose: boxes,
            articulation: None,
            articulation_vel: None,
        }],
        shapes: vec![ObjectShape {
            kind: ShapeKind::Box {
                half_extents: [BOX_HALF; 3],
            },
            density: 800.0,
            mass: None,
            hinge: None,
        }],
    };
    debug_assert!(clip.validate().is_ok());
    clip
}

/// The gripper model and its lift script, bundled for convenience.
pub fn gripper_setup() -> (Vec<HandModel>, ReferenceClip) {
    (vec![gripper_model()], gripper_lift_clip())
}

fn fd_point_tracks(frames: &[Vec<Vector3<f64>>], fps: f64) -> Vec<Vec<Vector3<f64>>> {
    let slots = frames.first().map_or(0, |f| f.len());
    let mut out = vec![vec![Vector3::zeros(); slots]; frames.len()];
    for s in 0..slots {
        let track: Vec<Vector3<f64>> = frames.iter().map(|f| f[s]).collect();
        for (t, v) in crate::traj::fd_linear(&track, fps).into_iter().enumerate() {
            out[t][s] = v;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Run presets
// ---------------------------------------------------------------------------

/// A small, fast configuration suited to the toy rigs.
fn toy_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.train.envs = 16;
    cfg.train.checkpoint_every = 0;
    cfg.train.mirror_clips = false;
    cfg.ppo.hidden = vec![64, 64];
    cfg.ppo.minibatch = 512;
    cfg.ppo.learning_rate = 1e-3;
    cfg.observation.lookahead = 4;
    cfg
}

/// Preset for tracking the planar finger waves.
pub fn finger_config(seed: u64) -> RunConfig {
    let mut cfg = toy_config(seed);
    cfg.train.updates = 300;
    cfg
}

/// Preset for the gripper's contact stage (both its short pre-training and
/// the correction stage itself).
pub fn gripper_config(seed: u64) -> RunConfig {
    let mut cfg = toy_config(seed);
    cfg.train.updates = 150;
    cfg
}
