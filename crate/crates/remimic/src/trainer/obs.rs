//! Observation vector assembly.
//!
//! The layout is computed once per run from the hand model, the stage, and
//! the clip signature (object count, articulation), then serialized into
//! every checkpoint so that a saved policy can never be silently paired with
//! differently shaped inputs. All translations are expressed relative to the
//! simulated wrist position; rotations and velocities stay in world frame.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{HandModel, HandSide, Pose, Twist};
use crate::sched::Stage;
use crate::sim::SimState;
use crate::traj::ReferenceClip;

use super::TrainerError;

/// Number of shape-encoding features per object.
pub const SHAPE_FEATURES: usize = crate::traj::BPS_BASIS_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub stage: Stage,
    pub lookahead: usize,
    pub hand_dof: usize,
    pub keypoints: usize,
    pub fingertips: usize,
    pub objects: usize,
    pub articulated: bool,
    pub blocks: Vec<LayoutBlock>,
    pub total: usize,
}

impl ObservationLayout {
    pub fn build(
        stage: Stage,
        model: &HandModel,
        objects: usize,
        articulated: bool,
        lookahead: usize,
    ) -> Self {
        let k = model.dof();
        let f = model.keypoint_count();
        let tips = model.fingertip_indices().len();
        let mut spec: Vec<(String, usize)> = Vec::new();
        // Reference track: the current frame plus `lookahead` future frames,
        // each contributing wrist pose (3 + 4), wrist twist (6), keypoints.
        for l in 0..=lookahead {
            spec.push((format!("ref_frame_{l}"), 13 + 3 * f));
        }
        spec.push(("joint_pos".into(), k));
        spec.push(("joint_vel".into(), k));
        spec.push(("wrist_rot".into(), 4));
        spec.push(("wrist_vel".into(), 6));
        spec.push(("prev_action".into(), k + 6));
        spec.push(("side".into(), 1));
        if stage == Stage::Residual {
            let art = if articulated { 2 } else { 0 };
            for o in 0..objects {
                spec.push((format!("object_ref_{o}"), 13 + art));
            }
            for o in 0..objects {
                spec.push((format!("object_state_{o}"), 13 + art));
            }
            spec.push(("object_mass".into(), objects));
            spec.push(("object_gravity".into(), 3 * objects));
            spec.push(("object_shape".into(), SHAPE_FEATURES * objects));
            spec.push(("object_distance".into(), f * objects));
            spec.push(("contact_force".into(), tips));
            spec.push(("base_action".into(), k + 6));
        }
        let mut blocks = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for (name, len) in spec {
            blocks.push(LayoutBlock { name, offset, len });
            offset += len;
        }
        ObservationLayout {
            stage,
            lookahead,
            hand_dof: k,
            keypoints: f,
            fingertips: tips,
            objects,
            articulated,
            blocks,
            total: offset,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.hand_dof + 6
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TrainerError> {
        serde_json::from_str(s).map_err(|e| TrainerError::Layout(format!("layout metadata: {e}")))
    }
}

/// Everything one observation is assembled from.
pub struct ObsContext<'a> {
    pub model: &'a HandModel,
    pub clip: &'a ReferenceClip,
    pub state: &'a SimState,
    pub hand: usize,
    /// Reference frame index the current state corresponds to.
    pub frame: usize,
    /// Previous raw (policy-space) action of the policy reading this
    /// observation; zeros right after a reset.
    pub prev_action: &'a DVector<f64>,
    /// Raw base action, present only for residual observations.
    pub base_action: Option<&'a DVector<f64>>,
    /// Per-shape encoding features and masses, indexed like `clip.shapes`.
    pub shape_features: &'a [Vec<f64>],
    pub shape_masses: &'a [f64],
    pub gravity_scale: f64,
}

struct Writer {
    data: Vec<f64>,
}

impl Writer {
    fn push(&mut self, v: f64) {
        self.data.push(v);
    }
    fn push_vec3(&mut self, v: &Vector3<f64>) {
        self.data.extend_from_slice(&[v.x, v.y, v.z]);
    }
    fn push_pose_rel(&mut self, pose: &Pose, origin: &Vector3<f64>) {
        self.push_vec3(&(pose.translation - origin));
        let q = pose.rotation.into_inner();
        self.data.extend_from_slice(&[q.w, q.i, q.j, q.k]);
    }
    fn push_twist(&mut self, t: &Twist) {
        self.push_vec3(&t.linear);
        self.push_vec3(&t.angular);
    }
}

/// Assembles the observation for one hand. The result always matches
/// `layout.total`; any structural disagreement between layout and inputs is
/// reported instead of producing a silently misaligned vector.
pub fn build_observation(
    layout: &ObservationLayout,
    ctx: &ObsContext,
) -> Result<DVector<f64>, TrainerError> {
    let model = ctx.model;
    if layout.hand_dof != model.dof() || layout.keypoints != model.keypoint_count() {
        return Err(TrainerError::Layout(format!(
            "layout built for {} dof / {} keypoints, model has {} / {}",
            layout.hand_dof,
            layout.keypoints,
            model.dof(),
            model.keypoint_count()
        )));
    }
    if layout.objects != ctx.clip.objects.len() {
        return Err(TrainerError::Layout(format!(
            "layout expects {} objects, clip has {}",
            layout.objects,
            ctx.clip.objects.len()
        )));
    }
    if ctx.prev_action.len() != layout.action_dim() {
        return Err(TrainerError::Layout("previous action length".into()));
    }
    match (layout.stage, ctx.base_action) {
        (Stage::Residual, None) => {
            return Err(TrainerError::Layout(
                "residual observation needs the base action".into(),
            ))
        }
        (Stage::Imitation, Some(_)) => {
            return Err(TrainerError::Layout(
                "imitation observation takes no base action".into(),
            ))
        }
        _ => {}
    }

    let hand_track = &ctx.clip.hands[ctx.hand];
    let hand_state = &ctx.state.hands[ctx.hand];
    let origin = hand_state.wrist.translation;
    let last = ctx.clip.len() - 1;
    let mut w = Writer {
        data: Vec::with_capacity(layout.total),
    };

    for l in 0..=layout.lookahead {
        let t = (ctx.frame + l).min(last);
        w.push_pose_rel(&hand_track.wrist[t], &origin);
        w.push_twist(&hand_track.wrist_vel[t]);
        for kp in &model.keypoints {
            let p = hand_track.keypoints[t][kp.human_index];
            w.push_vec3(&(p - origin));
        }
    }

    w.data.extend(hand_state.q.iter());
    w.data.extend(hand_state.qd.iter());
    let q = hand_state.wrist.rotation.into_inner();
    w.data.extend_from_slice(&[q.w, q.i, q.j, q.k]);
    w.push_twist(&hand_state.wrist_vel);
    w.data.extend(ctx.prev_action.iter());
    w.push(match model.side {
        HandSide::Right => 1.0,
        HandSide::Left => -1.0,
    });

    if layout.stage == Stage::Residual {
        for track in &ctx.clip.objects {
            w.push_pose_rel(&track.pose[ctx.frame], &origin);
            w.push_twist(&track.vel[ctx.frame]);
            if layout.articulated {
                w.push(track.articulation.as_ref().map_or(0.0, |a| a[ctx.frame]));
                w.push(
                    track
                        .articulation_vel
                        .as_ref()
                        .map_or(0.0, |a| a[ctx.frame]),
                );
            }
        }
        for obj in &ctx.state.objects {
            w.push_pose_rel(&obj.pose, &origin);
            w.push_twist(&obj.vel);
            if layout.articulated {
                w.push(obj.articulation.unwrap_or(0.0));
                w.push(obj.articulation_vel.unwrap_or(0.0));
            }
        }
        for obj in &ctx.state.objects {
            w.push(ctx.shape_masses[obj.shape]);
        }
        for obj in &ctx.state.objects {
            let g = ctx.shape_masses[obj.shape] * ctx.gravity_scale * crate::sim::GRAVITY;
            w.push_vec3(&Vector3::new(0.0, 0.0, -g));
        }
        for obj in &ctx.state.objects {
            w.data.extend(ctx.shape_features[obj.shape].iter());
        }
        let points = crate::sim::hand_keypoints(model, hand_state);
        for obj in &ctx.state.objects {
            let center = obj.pose.translation;
            for p in &points {
                w.push((p - center).norm_squared());
            }
        }
        let readings = &ctx.state.contacts[ctx.hand];
        for slot in 0..layout.fingertips {
            w.push(readings.get(slot).map_or(0.0, |r| r.force));
        }
        w.data
            .extend(ctx.base_action.expect("checked above").iter());
    }

    if w.data.len() != layout.total {
        return Err(TrainerError::Layout(format!(
            "assembled {} values for a layout of {}",
            w.data.len(),
            layout.total
        )));
    }
    Ok(DVector::from_vec(w.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::state_at_frame;

    fn toy() -> (HandModel, ReferenceClip) {
        let model = crate::toys::planar_finger_model();
        let clip = crate::toys::finger_wave_clip(&model, 20, 60.0);
        (model, clip)
    }

    #[test]
    fn layout_blocks_tile_the_vector_exactly() {
        let (model, _) = toy();
        for stage in [Stage::Imitation, Stage::Residual] {
            let layout = ObservationLayout::build(stage, &model, 1, false, 4);
            let mut expect = 0;
            for b in &layout.blocks {
                assert_eq!(b.offset, expect, "block {} offset", b.name);
                expect += b.len;
            }
            assert_eq!(layout.total, expect);
        }
    }

    #[test]
    fn layout_json_round_trips() {
        let (model, _) = toy();
        let layout = ObservationLayout::build(Stage::Residual, &model, 2, true, 4);
        let json = layout.to_json();
        let back = ObservationLayout::from_json(&json).unwrap();
        assert_eq!(back, layout);
    }

    #[test]
    fn observation_is_translation_invariant_and_padded() {
        let (model, clip) = toy();
        let layout = ObservationLayout::build(Stage::Imitation, &model, 0, false, 4);
        let prev = DVector::zeros(layout.action_dim());

        let build_at = |frame: usize, shift: f64| {
            let mut state = state_at_frame(&clip, std::slice::from_ref(&model), frame);
            let mut clip2 = clip.clone();
            // Rigid world shift of both the state and the reference.
            state.hands[0].wrist.translation.x += shift;
            for t in 0..clip2.len() {
                clip2.hands[0].wrist[t].translation.x += shift;
                for p in clip2.hands[0].keypoints[t].iter_mut() {
                    p.x += shift;
                }
            }
            build_observation(
                &layout,
                &ObsContext {
                    model: &model,
                    clip: &clip2,
                    state: &state,
                    hand: 0,
                    frame,
                    prev_action: &prev,
                    base_action: None,
                    shape_features: &[],
                    shape_masses: &[],
                    gravity_scale: 1.0,
                },
            )
            .unwrap()
        };

        let a = build_at(3, 0.0);
        let b = build_at(3, 12.5);
        assert!((a - b).amax() < 1e-9, "wrist-relative translations");

        // Past the end the lookahead clamps to the final frame: the tail
        // reference blocks repeat it.
        let at_end = build_at(clip.len() - 1, 0.0);
        let block0 = &layout.blocks[0];
        let block1 = &layout.blocks[1];
        let first = at_end.rows(block0.offset, block0.len).into_owned();
        let second = at_end.rows(block1.offset, block1.len).into_owned();
        assert_eq!(first, second, "padding repeats the last frame");
    }

    #[test]
    fn residual_structure_is_enforced() {
        let (model, clip) = toy();
        let layout = ObservationLayout::build(Stage::Residual, &model, 0, false, 2);
        let state = state_at_frame(&clip, std::slice::from_ref(&model), 0);
        let prev = DVector::zeros(layout.action_dim());
        let missing_base = build_observation(
            &layout,
            &ObsContext {
                model: &model,
                clip: &clip,
                state: &state,
                hand: 0,
                frame: 0,
                prev_action: &prev,
                base_action: None,
                shape_features: &[],
                shape_masses: &[],
                gravity_scale: 1.0,
            },
        );
        assert!(matches!(missing_base, Err(TrainerError::Layout(_))));

        let base = DVector::zeros(layout.action_dim());
        let ok = build_observation(
            &layout,
            &ObsContext {
                model: &model,
                clip: &clip,
                state: &state,
                hand: 0,
                frame: 0,
                prev_action: &prev,
                base_action: Some(&base),
                shape_features: &[],
                shape_masses: &[],
                gravity_scale: 1.0,
            },
        )
        .unwrap();
        assert_eq!(ok.len(), layout.total);
    }
}
