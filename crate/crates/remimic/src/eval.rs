//! Tracking-error metrics, success classification, and policy evaluation.
//!
//! Errors follow the usual conventions for this kind of transfer: object
//! rotation error in geodesic degrees, object translation error in
//! centimeters, hand keypoint errors in centimeters averaged over the clip.
//! An episode counts as a success only when every error stays strictly below
//! its threshold; aggregate error means are reported over successful episodes
//! only, so a run with zero successes reports rates but no means.

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::geom::{pose_difference, HandModel, Pose};
use crate::policy::{PolicyError, PolicyParams};
use crate::rng::stream;
use crate::sched::Stage;
use crate::sim::{self, PhysicsParams, SimState};
use crate::traj::{fd_scalar, fd_twists, ReferenceClip, TrajError};
use crate::trainer::{rollout_clip, ClipRuntime, ObservationLayout, PolicyBundle, TrainerError};

/// Success thresholds (strict `<`).
pub const SUCCESS_E_R_DEG: f64 = 30.0;
pub const SUCCESS_E_T_CM: f64 = 3.0;
pub const SUCCESS_E_J_CM: f64 = 8.0;
pub const SUCCESS_E_FT_CM: f64 = 6.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("range error: {0}")]
    RangeError(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Traj(#[from] TrajError),
}

/// Mean tracking errors of one hand over one episode, in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HandMetrics {
    /// Over all model keypoints.
    pub e_j_cm: f64,
    /// Over fingertip keypoints only.
    pub e_ft_cm: f64,
}

/// Mean object tracking errors over one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectMetrics {
    pub e_r_deg: f64,
    pub e_t_cm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeReport {
    pub clip: String,
    pub hands: Vec<HandMetrics>,
    pub object: Option<ObjectMetrics>,
    pub hand_success: Vec<bool>,
    pub success: bool,
    pub blowup: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub episodes: Vec<EpisodeReport>,
    /// Fraction of episodes classified as successes, in [0, 1].
    pub success_rate: f64,
    /// Error means over successful episodes; absent when nothing succeeded.
    pub mean_e_r_deg: Option<f64>,
    pub mean_e_t_cm: Option<f64>,
    pub mean_e_j_cm: Option<f64>,
    pub mean_e_ft_cm: Option<f64>,
    pub blowups: usize,
}

/// Rotation (geodesic degrees) and translation (centimeters) error of a pose
/// against its reference.
pub fn object_errors(sim_pose: &Pose, ref_pose: &Pose) -> (f64, f64) {
    let (d_tsl_m, d_rot_deg) = pose_difference(sim_pose, ref_pose);
    (d_rot_deg, d_tsl_m * 100.0)
}

/// Mean keypoint error over all slots and over the masked (fingertip) slots,
/// both in centimeters. Inputs are model-aligned keypoint arrays.
pub fn hand_errors(
    sim_keypoints: &[Vector3<f64>],
    ref_keypoints: &[Vector3<f64>],
    fingertip_mask: &[bool],
) -> Result<(f64, f64), EvalError> {
    let n = sim_keypoints.len();
    if ref_keypoints.len() != n || fingertip_mask.len() != n || n == 0 {
        return Err(EvalError::Validation(format!(
            "keypoint arrays disagree: {} / {} / {}",
            n,
            ref_keypoints.len(),
            fingertip_mask.len()
        )));
    }
    let mut all = 0.0;
    let mut tips = 0.0;
    let mut n_tips = 0usize;
    for i in 0..n {
        let d = (sim_keypoints[i] - ref_keypoints[i]).norm() * 100.0;
        all += d;
        if fingertip_mask[i] {
            tips += d;
            n_tips += 1;
        }
    }
    let e_ft = if n_tips > 0 { tips / n_tips as f64 } else { all / n as f64 };
    Ok((all / n as f64, e_ft))
}

/// Applies the strict success thresholds. Each hand must track well and the
/// (shared) object must track well; the episode succeeds only when every
/// tracked hand does.
pub fn classify_success(
    hands: &[HandMetrics],
    object: Option<&ObjectMetrics>,
) -> (Vec<bool>, bool) {
    let object_ok = object.map_or(true, |o| {
        o.e_r_deg < SUCCESS_E_R_DEG && o.e_t_cm < SUCCESS_E_T_CM
    });
    let per_hand: Vec<bool> = hands
        .iter()
        .map(|h| object_ok && h.e_j_cm < SUCCESS_E_J_CM && h.e_ft_cm < SUCCESS_E_FT_CM)
        .collect();
    let overall = !per_hand.is_empty() && per_hand.iter().all(|&b| b);
    (per_hand, overall)
}

// ---------------------------------------------------------------------------
// Episode scoring
// ---------------------------------------------------------------------------

struct ErrorAccum {
    hands_all: Vec<f64>,
    hands_tips: Vec<f64>,
    obj_rot: f64,
    obj_tsl: f64,
    frames: usize,
}

impl ErrorAccum {
    fn new(hands: usize) -> Self {
        ErrorAccum {
            hands_all: vec![0.0; hands],
            hands_tips: vec![0.0; hands],
            obj_rot: 0.0,
            obj_tsl: 0.0,
            frames: 0,
        }
    }

    fn finish(
        self,
        clip: &str,
        has_objects: bool,
        blowup: bool,
    ) -> EpisodeReport {
        let n = self.frames.max(1) as f64;
        let hands: Vec<HandMetrics> = self
            .hands_all
            .iter()
            .zip(&self.hands_tips)
            .map(|(&a, &t)| HandMetrics {
                e_j_cm: a / n,
                e_ft_cm: t / n,
            })
            .collect();
        let object = has_objects.then(|| ObjectMetrics {
            e_r_deg: self.obj_rot / n,
            e_t_cm: self.obj_tsl / n,
        });
        let (mut hand_success, mut success) = classify_success(&hands, object.as_ref());
        if blowup || self.frames == 0 {
            hand_success.iter_mut().for_each(|b| *b = false);
            success = false;
        }
        EpisodeReport {
            clip: clip.to_string(),
            hands,
            object,
            hand_success,
            success,
            blowup,
        }
    }
}

/// Scores simulator states against the reference they tracked. `states[t]`
/// must correspond to reference frame `t`; shorter state lists (diverged
/// rollouts) are scored over the frames they reached.
pub fn score_states(
    states: &[SimState],
    runtime: &ClipRuntime,
    blowup: bool,
) -> Result<EpisodeReport, EvalError> {
    let hands = runtime.models.len();
    let mut acc = ErrorAccum::new(hands);
    let t_len = states.len().min(runtime.len());
    for t in 0..t_len {
        let state = &states[t];
        for (hi, model) in runtime.models.iter().enumerate() {
            let sim_kp = sim::hand_keypoints(model, &state.hands[hi]);
            let ref_kp: Vec<Vector3<f64>> = model
                .keypoints
                .iter()
                .map(|kp| runtime.clip.hands[hi].keypoints[t][kp.human_index])
                .collect();
            let mask: Vec<bool> = model.keypoints.iter().map(|kp| kp.fingertip).collect();
            let (e_j, e_ft) = hand_errors(&sim_kp, &ref_kp, &mask)?;
            acc.hands_all[hi] += e_j;
            acc.hands_tips[hi] += e_ft;
        }
        for (obj, track) in state.objects.iter().zip(&runtime.clip.objects) {
            let (e_r, e_t) = object_errors(&obj.pose, &track.pose[t]);
            acc.obj_rot += e_r / state.objects.len() as f64;
            acc.obj_tsl += e_t / state.objects.len() as f64;
        }
        acc.frames += 1;
    }
    Ok(acc.finish(&runtime.name, !runtime.clip.objects.is_empty(), blowup))
}

/// Scores a recorded motion (clip form) against a reference clip, using the
/// models to pick the compared keypoint slots. Replaying the reference
/// against itself scores zero error and full success.
pub fn evaluate_replay(
    sim_clip: &ReferenceClip,
    ref_clip: &ReferenceClip,
    models: &[HandModel],
) -> Result<EpisodeReport, EvalError> {
    if sim_clip.hands.len() != ref_clip.hands.len() || sim_clip.hands.len() != models.len() {
        return Err(EvalError::Validation("hand count mismatch".into()));
    }
    if sim_clip.len() != ref_clip.len() {
        return Err(EvalError::Validation(format!(
            "length mismatch: {} vs {}",
            sim_clip.len(),
            ref_clip.len()
        )));
    }
    let mut acc = ErrorAccum::new(models.len());
    for t in 0..ref_clip.len() {
        for (hi, model) in models.iter().enumerate() {
            let pick = |clip: &ReferenceClip| -> Vec<Vector3<f64>> {
                model
                    .keypoints
                    .iter()
                    .map(|kp| clip.hands[hi].keypoints[t][kp.human_index])
                    .collect()
            };
            let mask: Vec<bool> = model.keypoints.iter().map(|kp| kp.fingertip).collect();
            let (e_j, e_ft) = hand_errors(&pick(sim_clip), &pick(ref_clip), &mask)?;
            acc.hands_all[hi] += e_j;
            acc.hands_tips[hi] += e_ft;
        }
        for (a, b) in sim_clip.objects.iter().zip(&ref_clip.objects) {
            let (e_r, e_t) = object_errors(&a.pose[t], &b.pose[t]);
            acc.obj_rot += e_r / sim_clip.objects.len() as f64;
            acc.obj_tsl += e_t / sim_clip.objects.len() as f64;
        }
        acc.frames += 1;
    }
    Ok(acc.finish("replay", !ref_clip.objects.is_empty(), false))
}

// ---------------------------------------------------------------------------
// Policy evaluation
// ---------------------------------------------------------------------------

/// Rolls the policy over every clip `rollouts` times and aggregates. Episodes
/// run the full clip from its first frame with no early termination; only a
/// numerical divergence cuts one short (and fails it). With `deterministic`
/// set, a repeated call returns a bit-identical report.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    clips: &[ClipRuntime],
    base: &PolicyParams,
    residual: Option<&PolicyParams>,
    lookahead: usize,
    physics: &PhysicsParams,
    rollouts: usize,
    deterministic: bool,
    seed: u64,
) -> Result<AggregateReport, EvalError> {
    let first = clips
        .first()
        .ok_or_else(|| EvalError::Validation("no clips to evaluate".into()))?;
    if rollouts == 0 {
        return Err(EvalError::RangeError("rollouts must be ≥ 1".into()));
    }
    let proto = &first.models[0];
    let objects = first.clip.objects.len();
    let articulated = first.clip.objects.iter().any(|o| o.articulation.is_some());
    let base_layout =
        ObservationLayout::build(Stage::Imitation, proto, objects, articulated, lookahead);
    let res_layout =
        ObservationLayout::build(Stage::Residual, proto, objects, articulated, lookahead);
    let bundle = match residual {
        None => PolicyBundle {
            stage: Stage::Imitation,
            layout: &base_layout,
            params: base,
            base_layout: None,
            base: None,
            warmup: 1.0,
        },
        Some(res) => PolicyBundle {
            stage: Stage::Residual,
            layout: &res_layout,
            params: res,
            base_layout: Some(&base_layout),
            base: Some(base),
            warmup: 1.0,
        },
    };
    if bundle.params.obs_dim() != bundle.layout.total {
        return Err(EvalError::Validation(format!(
            "policy expects {}-dim observations, clips produce {}",
            bundle.params.obs_dim(),
            bundle.layout.total
        )));
    }

    let mut episodes = Vec::with_capacity(clips.len() * rollouts);
    let mut blowups = 0usize;
    for (ci, rt) in clips.iter().enumerate() {
        for r in 0..rollouts {
            let mut rng = stream(seed, "eval", (ci * rollouts + r) as u64);
            let rollout = rollout_clip(rt, &bundle, physics, deterministic, &mut rng)?;
            if rollout.blowup {
                blowups += 1;
            }
            episodes.push(score_states(&rollout.states, rt, rollout.blowup)?);
        }
    }

    let successes: Vec<&EpisodeReport> = episodes.iter().filter(|e| e.success).collect();
    let success_rate = successes.len() as f64 / episodes.len() as f64;
    let mean_over = |f: &dyn Fn(&EpisodeReport) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = successes.iter().filter_map(|e| f(e)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let report = AggregateReport {
        success_rate,
        mean_e_r_deg: mean_over(&|e| e.object.map(|o| o.e_r_deg)),
        mean_e_t_cm: mean_over(&|e| e.object.map(|o| o.e_t_cm)),
        mean_e_j_cm: mean_over(&|e| {
            Some(e.hands.iter().map(|h| h.e_j_cm).sum::<f64>() / e.hands.len().max(1) as f64)
        }),
        mean_e_ft_cm: mean_over(&|e| {
            Some(e.hands.iter().map(|h| h.e_ft_cm).sum::<f64>() / e.hands.len().max(1) as f64)
        }),
        blowups,
        episodes,
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Low-pass filtering
// ---------------------------------------------------------------------------

/// First-order low-pass over every track of a clip: y₀ = x₀, then
/// y = α·x + (1−α)·y_prev. Rotations blend along the shortest arc by the same
/// factor; velocities are recomputed from the filtered tracks. α must lie in
/// (0, 1]; α = 1 returns the clip unchanged.
pub fn low_pass_filter(clip: &ReferenceClip, alpha: f64) -> Result<ReferenceClip, EvalError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EvalError::RangeError(format!(
            "filter alpha {alpha} outside (0, 1]"
        )));
    }
    if alpha == 1.0 {
        return Ok(clip.clone());
    }
    let mut out = clip.clone();
    let fps = clip.fps;
    for hand in &mut out.hands {
        filter_poses(&mut hand.wrist, alpha);
        hand.wrist_vel = fd_twists(&hand.wrist, fps);
        let slots = hand.keypoints.first().map_or(0, |f| f.len());
        for s in 0..slots {
            let mut y = hand.keypoints[0][s];
            for t in 1..hand.keypoints.len() {
                y = hand.keypoints[t][s] * alpha + y * (1.0 - alpha);
                hand.keypoints[t][s] = y;
            }
        }
        let tracks: Vec<Vec<Vector3<f64>>> = (0..slots)
            .map(|s| hand.keypoints.iter().map(|f| f[s]).collect())
            .collect();
        for (s, track) in tracks.iter().enumerate() {
            for (t, v) in crate::traj::fd_linear(track, fps).into_iter().enumerate() {
                hand.keypoint_vel[t][s] = v;
            }
        }
        // A cached joint track no longer matches the filtered keypoints.
        hand.joints = None;
    }
    for obj in &mut out.objects {
        filter_poses(&mut obj.pose, alpha);
        obj.vel = fd_twists(&obj.pose, fps);
        if let Some(art) = &mut obj.articulation {
            let mut y = art[0];
            for v in art.iter_mut().skip(1) {
                y = *v * alpha + y * (1.0 - alpha);
                *v = y;
            }
            obj.articulation_vel = Some(fd_scalar(art, fps));
        }
    }
    Ok(out)
}

fn filter_poses(poses: &mut [Pose], alpha: f64) {
    let mut y = poses[0];
    for p in poses.iter_mut().skip(1) {
        y = Pose::new(
            p.translation * alpha + y.translation * (1.0 - alpha),
            crate::traj::slerp_shortest(&y.rotation, &p.rotation, alpha),
        );
        *p = y;
    }
}
