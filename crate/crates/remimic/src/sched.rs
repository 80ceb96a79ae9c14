//! Training schedules: threshold curricula, reference state initialization,
//! and episode termination.
//!
//! All schedules are linear in normalized progress and hit their endpoints
//! exactly. Termination is a pure function of the queried state so that any
//! decision can be replayed offline from a recorded rollout.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{pose_difference, HandModel};
use crate::sim::{fingertip_centers, contact_query, HandState, ObjectState, PhysicsParams, SimState};
use crate::traj::ReferenceClip;

/// Maximum fingertip penetration tolerated in a residual-stage start frame.
pub const START_PENETRATION_LIMIT: f64 = 0.002;

/// Human keypoint indices whose fingertips dominate grasps; termination
/// emphasizes these when the hand model covers them.
pub const EMPHASIZED_TIPS: [usize; 3] = [4, 8, 12];

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("range error: {0}")]
    RangeError(String),
    #[error("no valid start frame: every frame fails the penetration filter")]
    NoValidStartFrame,
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Imitation,
    Residual,
}

/// Why an episode ended, in decreasing precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndOfClip,
    TerminateObject,
    TerminateContact,
    TerminateFinger,
    Continue,
}

impl Termination {
    pub fn label(self) -> &'static str {
        match self {
            Termination::EndOfClip => "end_of_clip",
            Termination::TerminateObject => "object",
            Termination::TerminateContact => "contact",
            Termination::TerminateFinger => "finger",
            Termination::Continue => "continue",
        }
    }
}

/// Endpoints of every scheduled quantity; the `[curriculum]` table of the
/// run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Permitted mean fingertip deviation (m) at the start of training.
    pub epsilon_finger_start: f64,
    /// Looser start for hands whose fingertips are shared across human
    /// fingers (fewer physical fingers than the reference).
    pub epsilon_finger_start_wide: f64,
    pub epsilon_finger_end: f64,
    /// Object rotation tolerance (degrees).
    pub epsilon_object_rot_start: f64,
    pub epsilon_object_rot_end: f64,
    /// Object translation tolerance (m).
    pub epsilon_object_tsl_start: f64,
    pub epsilon_object_tsl_end: f64,
    /// Fraction of training over which gravity and friction anneal.
    pub ramp_fraction: f64,
    pub friction_start: f64,
    pub friction_end: f64,
    /// Reference-distance threshold for the contact reward (m).
    pub xi_c: f64,
    /// Reference-distance threshold for contact termination (m).
    pub xi_t: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            epsilon_finger_start: 0.06,
            epsilon_finger_start_wide: 0.08,
            epsilon_finger_end: 0.04,
            epsilon_object_rot_start: 90.0,
            epsilon_object_rot_end: 30.0,
            epsilon_object_tsl_start: 0.06,
            epsilon_object_tsl_end: 0.02,
            ramp_fraction: 0.4,
            friction_start: 2.0,
            friction_end: 1.2,
            xi_c: 0.02,
            xi_t: 0.01,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("epsilon_finger_start", self.epsilon_finger_start),
            ("epsilon_finger_start_wide", self.epsilon_finger_start_wide),
            ("epsilon_finger_end", self.epsilon_finger_end),
            ("epsilon_object_rot_start", self.epsilon_object_rot_start),
            ("epsilon_object_rot_end", self.epsilon_object_rot_end),
            ("epsilon_object_tsl_start", self.epsilon_object_tsl_start),
            ("epsilon_object_tsl_end", self.epsilon_object_tsl_end),
            ("friction_start", self.friction_start),
            ("friction_end", self.friction_end),
            ("xi_c", self.xi_c),
            ("xi_t", self.xi_t),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err("ramp_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Snapshot of every scheduled quantity at one training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub progress: f64,
    pub epsilon_finger: f64,
    pub epsilon_object_rot: f64,
    pub epsilon_object_tsl: f64,
    pub gravity_scale: f64,
    pub friction: f64,
    pub xi_c: f64,
    pub xi_t: f64,
}

/// Linear interpolation from `start` to `end` over progress ∈ [0, 1],
/// hitting both endpoints exactly (bit-for-bit).
pub fn schedule_value(start: f64, end: f64, progress: f64) -> Result<f64, SchedError> {
    if !(0.0..=1.0).contains(&progress) || !progress.is_finite() {
        return Err(SchedError::RangeError(format!(
            "progress {progress} outside [0, 1]"
        )));
    }
    if progress == 0.0 {
        Ok(start)
    } else if progress == 1.0 {
        Ok(end)
    } else {
        Ok(start + (end - start) * progress)
    }
}

impl CurriculumState {
    /// Evaluates all schedules at `progress`. `wide_start` selects the looser
    /// fingertip threshold for hands with merged fingertips. Tracking
    /// tolerances tighten over the whole run; gravity and friction finish
    /// annealing after `ramp_fraction` of it.
    pub fn at(cfg: &CurriculumConfig, progress: f64, wide_start: bool) -> Result<Self, SchedError> {
        let finger_start = if wide_start {
            cfg.epsilon_finger_start_wide
        } else {
            cfg.epsilon_finger_start
        };
        let ramp = if progress >= cfg.ramp_fraction {
            1.0
        } else {
            progress / cfg.ramp_fraction
        };
        Ok(CurriculumState {
            progress,
            epsilon_finger: schedule_value(finger_start, cfg.epsilon_finger_end, progress)?,
            epsilon_object_rot: schedule_value(
                cfg.epsilon_object_rot_start,
                cfg.epsilon_object_rot_end,
                progress,
            )?,
            epsilon_object_tsl: schedule_value(
                cfg.epsilon_object_tsl_start,
                cfg.epsilon_object_tsl_end,
                progress,
            )?,
            gravity_scale: schedule_value(0.0, 1.0, ramp)?,
            friction: schedule_value(cfg.friction_start, cfg.friction_end, ramp)?,
            xi_c: cfg.xi_c,
            xi_t: cfg.xi_t,
        })
    }
}

/// True when the model maps several human fingers onto one physical
/// fingertip (duplicated keypoint attachments), which earns the looser
/// starting threshold.
pub fn uses_wide_start(model: &HandModel) -> bool {
    let mut seen: Vec<(usize, [u64; 3])> = Vec::new();
    for kp in &model.keypoints {
        if !kp.fingertip {
            continue;
        }
        let key = (
            kp.link,
            [
                kp.offset[0].to_bits(),
                kp.offset[1].to_bits(),
                kp.offset[2].to_bits(),
            ],
        );
        if seen.contains(&key) {
            return true;
        }
        seen.push(key);
    }
    false
}

/// Draws an episode start frame and builds the matching simulator state.
///
/// Imitation draws uniformly over all frames. The residual stage draws
/// uniformly over frames whose cached hand pose keeps every fingertip within
/// [`START_PENETRATION_LIMIT`] of the object surfaces, and fails with
/// `NoValidStartFrame` when no frame qualifies. Joint positions come from the
/// clip's cached joint track; joint velocities by finite differences of it.
pub fn rsi_sample(
    clip: &ReferenceClip,
    models: &[HandModel],
    params: &PhysicsParams,
    stage: Stage,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, SimState), SchedError> {
    if models.len() != clip.hands.len() {
        return Err(SchedError::Validation(format!(
            "{} hand models for {} tracked hands",
            models.len(),
            clip.hands.len()
        )));
    }
    for (hand, model) in clip.hands.iter().zip(models) {
        match &hand.joints {
            None => {
                return Err(SchedError::Validation(
                    "clip carries no cached joint track; retarget it first".into(),
                ))
            }
            Some(js) => {
                if js[0].len() != model.dof() {
                    return Err(SchedError::Validation(format!(
                        "cached joint track has {} dof, model {} has {}",
                        js[0].len(),
                        model.name,
                        model.dof()
                    )));
                }
            }
        }
    }

    // The final frame is excluded: an episode started there has nothing left
    // to step toward.
    let last = clip.len() - 1;
    let frame = match stage {
        Stage::Imitation => rng.gen_range(0..last),
        Stage::Residual => {
            let valid: Vec<usize> = (0..last)
                .filter(|&t| frame_is_penetration_free(clip, models, params, t))
                .collect();
            if valid.is_empty() {
                return Err(SchedError::NoValidStartFrame);
            }
            valid[rng.gen_range(0..valid.len())]
        }
    };
    Ok((frame, state_at_frame(clip, models, frame)))
}

/// Builds the simulator state matching reference frame `t` exactly: cached
/// joints, reference wrist pose/twist, reference object states.
pub fn state_at_frame(clip: &ReferenceClip, models: &[HandModel], t: usize) -> SimState {
    let dt = 1.0 / clip.fps;
    let hands = clip
        .hands
        .iter()
        .map(|hand| {
            let joints = hand.joints.as_ref().expect("joint cache checked by caller");
            HandState {
                q: joints[t].clone(),
                qd: joint_velocity(joints, t, clip.fps),
                wrist: hand.wrist[t],
                wrist_vel: hand.wrist_vel[t],
                last_torque: DVector::zeros(joints[t].len()),
            }
        })
        .collect();
    let objects = clip
        .objects
        .iter()
        .map(|obj| ObjectState {
            shape: obj.shape,
            pose: obj.pose[t],
            vel: obj.vel[t],
            articulation: obj.articulation.as_ref().map(|a| a[t]),
            articulation_vel: obj.articulation_vel.as_ref().map(|a| a[t]),
        })
        .collect();
    SimState {
        hands,
        objects,
        contacts: models
            .iter()
            .map(|m| vec![Default::default(); m.fingertip_indices().len()])
            .collect(),
        time: t as f64 * dt,
    }
}

fn joint_velocity(joints: &[DVector<f64>], t: usize, fps: f64) -> DVector<f64> {
    let n = joints.len();
    if n < 2 {
        return DVector::zeros(joints[0].len());
    }
    if t == 0 {
        (&joints[1] - &joints[0]) * fps
    } else if t + 1 >= n {
        (&joints[n - 1] - &joints[n - 2]) * fps
    } else {
        (&joints[t + 1] - &joints[t - 1]) * (0.5 * fps)
    }
}

fn frame_is_penetration_free(
    clip: &ReferenceClip,
    models: &[HandModel],
    params: &PhysicsParams,
    t: usize,
) -> bool {
    for (hand, model) in clip.hands.iter().zip(models) {
        let joints = hand.joints.as_ref().expect("joint cache checked by caller");
        let Ok(points) = model.forward_kinematics(&joints[t], &hand.wrist[t]) else {
            return false;
        };
        for &ki in &model.fingertip_indices() {
            for obj in &clip.objects {
                let shape = &clip.shapes[obj.shape];
                let gap = contact_query(
                    shape,
                    &obj.pose[t],
                    &points[ki],
                    params.fingertip_radius,
                )
                .signed_gap;
                if gap < -START_PENETRATION_LIMIT {
                    return false;
                }
            }
        }
    }
    true
}

/// Checks the episode-end conditions against reference frame `frame`, in
/// decreasing precedence: clip exhaustion, object tracking failure, missing
/// contact, fingertip tracking failure.
///
/// `ref_tip_distances[hand][tip]` are the reference fingertip–object surface
/// distances at `frame` (pass empty slices when the clip has no objects).
/// Object and contact conditions apply only to the residual stage. The
/// fingertip condition compares the weight-averaged deviation of the
/// emphasized fingertips ([`EMPHASIZED_TIPS`], falling back to all
/// fingertips) against the curriculum threshold. Pure: no simulator access,
/// so recorded states replay to identical decisions.
pub fn check_termination(
    state: &SimState,
    models: &[HandModel],
    clip: &ReferenceClip,
    frame: usize,
    ref_tip_distances: &[Vec<f64>],
    curriculum: &CurriculumState,
    stage: Stage,
) -> Termination {
    if frame + 1 >= clip.len() {
        return Termination::EndOfClip;
    }

    if stage == Stage::Residual {
        for (obj, track) in state.objects.iter().zip(&clip.objects) {
            let (d_tsl, d_rot_deg) = pose_difference(&obj.pose, &track.pose[frame]);
            if d_rot_deg > curriculum.epsilon_object_rot || d_tsl > curriculum.epsilon_object_tsl {
                return Termination::TerminateObject;
            }
        }
        for (hi, _model) in models.iter().enumerate() {
            let Some(dists) = ref_tip_distances.get(hi) else {
                continue;
            };
            let Some(readings) = state.contacts.get(hi) else {
                continue;
            };
            for (slot, &d) in dists.iter().enumerate() {
                let force = readings.get(slot).map_or(0.0, |r| r.force);
                if d < curriculum.xi_t && force == 0.0 {
                    return Termination::TerminateContact;
                }
            }
        }
    }

    for (hi, model) in models.iter().enumerate() {
        let tips = fingertip_centers(model, &state.hands[hi]);
        let ref_points = &clip.hands[hi].keypoints[frame];
        let tip_indices = model.fingertip_indices();
        let emphasized: Vec<usize> = tip_indices
            .iter()
            .copied()
            .filter(|&ki| EMPHASIZED_TIPS.contains(&model.keypoints[ki].human_index))
            .collect();
        let chosen = if emphasized.is_empty() {
            tip_indices.clone()
        } else {
            emphasized
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for (slot, &ki) in tip_indices.iter().enumerate() {
            if !chosen.contains(&ki) {
                continue;
            }
            let kp = &model.keypoints[ki];
            let Some(target) = ref_points.get(kp.human_index) else {
                continue;
            };
            num += kp.weight * (tips[slot] - target).norm();
            den += kp.weight;
        }
        if den > 0.0 && num / den > curriculum.epsilon_finger {
            return Termination::TerminateFinger;
        }
    }

    Termination::Continue
}
