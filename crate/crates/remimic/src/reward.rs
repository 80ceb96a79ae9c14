//! Reward terms for both training stages and their weighted totals.
//!
//! Every tracking term has the shape exp(−Σ λ·error²) and therefore lies in
//! (0, 1], reaching 1 exactly on a perfect match; the smoothness term is a
//! plain power penalty (≤ 0). Per-keypoint weights and decay rates live in
//! the hand model; everything else is configured here.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{HandModel, Pose, Twist};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("articulation mismatch: one side tracks a hinge angle, the other does not")]
    ArticulationMismatch,
}

/// Reward weights and decay constants; the `[rewards]` table of the run
/// config. Weighting of individual keypoints comes from the hand model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_wrist: f64,
    pub w_finger: f64,
    pub w_smooth: f64,
    pub w_object: f64,
    pub w_contact: f64,
    /// Scale of the contact-force bonus.
    pub w_c: f64,
    /// Decay of the contact-force bonus, exp(−λ_c / force_sum).
    pub lambda_c: f64,
    pub lambda_wrist_tsl: f64,
    pub lambda_wrist_rot: f64,
    pub lambda_wrist_vel: f64,
    pub lambda_wrist_ang: f64,
    pub lambda_object_tsl: f64,
    pub lambda_object_rot: f64,
    pub lambda_object_vel: f64,
    pub lambda_object_ang: f64,
    /// Hinge-angle decay for articulated objects.
    pub lambda_object_angle: f64,
    /// Hinge-angle-rate decay for articulated objects.
    pub lambda_object_angle_vel: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_wrist: 1.0,
            w_finger: 1.0,
            w_smooth: 0.02,
            w_object: 2.0,
            w_contact: 0.5,
            w_c: 1.0,
            lambda_c: 1.0,
            lambda_wrist_tsl: 100.0,
            lambda_wrist_rot: 4.0,
            lambda_wrist_vel: 1.0,
            lambda_wrist_ang: 0.1,
            lambda_object_tsl: 100.0,
            lambda_object_rot: 4.0,
            lambda_object_vel: 1.0,
            lambda_object_ang: 0.1,
            lambda_object_angle: 4.0,
            lambda_object_angle_vel: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [
            ("w_wrist", self.w_wrist),
            ("w_finger", self.w_finger),
            ("w_smooth", self.w_smooth),
            ("w_object", self.w_object),
            ("w_contact", self.w_contact),
            ("w_c", self.w_c),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be ≥ 0"));
            }
        }
        let decays = [
            ("lambda_c", self.lambda_c),
            ("lambda_wrist_tsl", self.lambda_wrist_tsl),
            ("lambda_wrist_rot", self.lambda_wrist_rot),
            ("lambda_wrist_vel", self.lambda_wrist_vel),
            ("lambda_wrist_ang", self.lambda_wrist_ang),
            ("lambda_object_tsl", self.lambda_object_tsl),
            ("lambda_object_rot", self.lambda_object_rot),
            ("lambda_object_vel", self.lambda_object_vel),
            ("lambda_object_ang", self.lambda_object_ang),
            ("lambda_object_angle", self.lambda_object_angle),
            ("lambda_object_angle_vel", self.lambda_object_angle_vel),
        ];
        for (name, v) in decays {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be > 0"));
            }
        }
        Ok(())
    }
}

/// exp(−λ_t‖Δt‖² − λ_r·Δθ² − λ_v‖Δv‖² − λ_ω‖Δω‖²) over the wrist pose and
/// twist; 1 iff both match exactly.
pub fn r_wrist(
    sim_pose: &Pose,
    sim_vel: &Twist,
    ref_pose: &Pose,
    ref_vel: &Twist,
    w: &RewardWeights,
) -> f64 {
    let d_tsl = (sim_pose.translation - ref_pose.translation).norm_squared();
    let d_rot = sim_pose.rotation_angle_to(ref_pose);
    let d_vel = (sim_vel.linear - ref_vel.linear).norm_squared();
    let d_ang = (sim_vel.angular - ref_vel.angular).norm_squared();
    (-w.lambda_wrist_tsl * d_tsl
        - w.lambda_wrist_rot * d_rot * d_rot
        - w.lambda_wrist_vel * d_vel
        - w.lambda_wrist_ang * d_ang)
        .exp()
}

/// Σ_f w_f·exp(−λ_f·‖j_f − target_f‖²) with per-keypoint (w, λ) from the
/// model. Inputs must already be aligned to the model's keypoint order.
pub fn r_finger(
    sim_keypoints: &[Vector3<f64>],
    ref_keypoints: &[Vector3<f64>],
    model: &HandModel,
) -> Result<f64, RewardError> {
    let f = model.keypoint_count();
    for arr in [sim_keypoints, ref_keypoints] {
        if arr.len() != f {
            return Err(RewardError::DimensionMismatch {
                expected: f,
                got: arr.len(),
            });
        }
    }
    Ok(model
        .keypoints
        .iter()
        .zip(sim_keypoints.iter().zip(ref_keypoints.iter()))
        .map(|(kp, (sim, target))| {
            kp.weight * (-kp.decay * (sim - target).norm_squared()).exp()
        })
        .sum())
}

/// Power penalty −Σ_k |q̇_k·τ_k| (always ≤ 0).
pub fn r_smooth(qd: &DVector<f64>, tau: &DVector<f64>) -> Result<f64, RewardError> {
    if qd.len() != tau.len() {
        return Err(RewardError::DimensionMismatch {
            expected: qd.len(),
            got: tau.len(),
        });
    }
    Ok(-qd
        .iter()
        .zip(tau.iter())
        .map(|(v, t)| (v * t).abs())
        .sum::<f64>())
}

/// Object tracking term; hinge angle/rate enter only when both sides are
/// articulated, and exactly one articulated side is an error.
#[allow(clippy::too_many_arguments)]
pub fn r_object(
    sim_pose: &Pose,
    sim_vel: &Twist,
    sim_angle: Option<(f64, f64)>,
    ref_pose: &Pose,
    ref_vel: &Twist,
    ref_angle: Option<(f64, f64)>,
    w: &RewardWeights,
) -> Result<f64, RewardError> {
    let d_tsl = (sim_pose.translation - ref_pose.translation).norm_squared();
    let d_rot = sim_pose.rotation_angle_to(ref_pose);
    let d_vel = (sim_vel.linear - ref_vel.linear).norm_squared();
    let d_ang = (sim_vel.angular - ref_vel.angular).norm_squared();
    let mut exponent = -w.lambda_object_tsl * d_tsl
        - w.lambda_object_rot * d_rot * d_rot
        - w.lambda_object_vel * d_vel
        - w.lambda_object_ang * d_ang;
    match (sim_angle, ref_angle) {
        (Some((sa, sv)), Some((ra, rv))) => {
            exponent -= w.lambda_object_angle * (sa - ra) * (sa - ra);
            exponent -= w.lambda_object_angle_vel * (sv - rv) * (sv - rv);
        }
        (None, None) => {}
        _ => return Err(RewardError::ArticulationMismatch),
    }
    Ok(exponent.exp())
}

/// Contact-force bonus. S sums fingertip forces where the reference
/// fingertip–object surface distance is below ξ_c; the bonus w_c·exp(−λ_c/S)
/// rises toward w_c with force. S = 0 (no qualifying contact) returns 0,
/// the right-limit of the expression.
pub fn r_contact(
    contact_forces: &[f64],
    ref_distances: &[f64],
    xi_c: f64,
    w_c: f64,
    lambda_c: f64,
) -> f64 {
    debug_assert_eq!(contact_forces.len(), ref_distances.len());
    let s: f64 = contact_forces
        .iter()
        .zip(ref_distances.iter())
        .filter(|(_, d)| **d < xi_c)
        .map(|(c, _)| *c)
        .sum();
    if s > 0.0 {
        w_c * (-lambda_c / s).exp()
    } else {
        0.0
    }
}

/// Stage-one total: w_wrist·r_wrist + w_finger·r_finger + w_smooth·r_smooth.
pub fn total_imitation(r_wrist: f64, r_finger: f64, r_smooth: f64, w: &RewardWeights) -> f64 {
    w.w_wrist * r_wrist + w.w_finger * r_finger + w.w_smooth * r_smooth
}

/// Stage-two total: the imitation total plus the object and contact bonuses.
pub fn total_residual(r_imitation: f64, r_object: f64, r_contact: f64, w: &RewardWeights) -> f64 {
    r_imitation + w.w_object * r_object + w.w_contact * r_contact
}
