//! Rollout machinery shared by the training loop and evaluation.
//!
//! A [`ClipRuntime`] packages one reference clip with everything derived from
//! it once up front: side-matched hand models, the cached joint track, the
//! per-frame reference fingertip/object surface distances used by the contact
//! reward and termination checks, and per-shape encoding features and masses.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::HandModel;
use crate::policy::{residual_combine, PolicyParams};
use crate::retarget::{build_joint_cache, FitSettings};
use crate::sched::{rsi_sample, state_at_frame, Stage};
use crate::sim::{self, Action, PhysicsParams, SimError, SimState};
use crate::traj::{bps_encode, ReferenceClip};

use super::obs::{build_observation, ObsContext, ObservationLayout};
use super::TrainerError;

/// A clip prepared for rollout: joint cache present, lookup tables built.
#[derive(Debug, Clone)]
pub struct ClipRuntime {
    pub name: String,
    pub clip: ReferenceClip,
    /// Hand models matched to the track sides (mirrored copies when needed).
    pub models: Vec<HandModel>,
    /// `[frame][hand][fingertip slot]`: signed gap between the reference
    /// fingertip sphere and the nearest reference-posed object surface
    /// (touching reads zero). Infinite when the clip has no objects.
    pub ref_tip_distance: Vec<Vec<Vec<f64>>>,
    /// Per-shape encoding features (pose-invariant, computed once).
    pub shape_features: Vec<Vec<f64>>,
    pub shape_masses: Vec<f64>,
}

impl ClipRuntime {
    /// Validates the clip against the run's hand models, mirrors models onto
    /// tracks of the opposite side, fills the joint cache by retargeting when
    /// it is absent, and precomputes the lookup tables.
    pub fn prepare(
        mut clip: ReferenceClip,
        models: &[HandModel],
        name: &str,
        fit: &FitSettings,
        fingertip_radius: f64,
    ) -> Result<Self, TrainerError> {
        clip.validate()
            .map_err(|e| TrainerError::Clip(format!("{name}: {e}")))?;
        if clip.hands.len() != models.len() {
            return Err(TrainerError::Clip(format!(
                "{name}: {} hand tracks for {} models",
                clip.hands.len(),
                models.len()
            )));
        }
        let matched: Vec<HandModel> = clip
            .hands
            .iter()
            .zip(models)
            .map(|(track, model)| {
                if track.side == model.side {
                    model.clone()
                } else {
                    model.mirrored()
                }
            })
            .collect();
        let needs_cache = clip.hands.iter().any(|h| h.joints.is_none());
        if needs_cache {
            build_joint_cache(&mut clip, &matched, fit)?;
        } else {
            for (hand, model) in clip.hands.iter().zip(&matched) {
                let js = hand.joints.as_ref().expect("checked above");
                if js[0].len() != model.dof() {
                    return Err(TrainerError::Clip(format!(
                        "{name}: cached joints have {} dof, model {} has {}",
                        js[0].len(),
                        model.name,
                        model.dof()
                    )));
                }
            }
        }

        let shape_features: Vec<Vec<f64>> = clip
            .shapes
            .iter()
            .map(|s| bps_encode(s, &crate::geom::Pose::identity()).features)
            .collect();
        let shape_masses: Vec<f64> = clip
            .shapes
            .iter()
            .map(|s| s.mass_properties().mass)
            .collect();

        let ref_tip_distance = reference_tip_distances(&clip, &matched, fingertip_radius);

        Ok(ClipRuntime {
            name: name.to_string(),
            clip,
            models: matched,
            ref_tip_distance,
            shape_features,
            shape_masses,
        })
    }

    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }
}

/// Signed gap between each reference fingertip sphere and the nearest object
/// surface per frame (center distance minus the fingertip radius, so touching
/// reads as zero and a pressed grasp as slightly negative). The reference
/// keypoints live in the clip's human-indexed arrays; slots follow each
/// model's fingertip order.
fn reference_tip_distances(
    clip: &ReferenceClip,
    models: &[HandModel],
    fingertip_radius: f64,
) -> Vec<Vec<Vec<f64>>> {
    let t_len = clip.len();
    (0..t_len)
        .map(|t| {
            models
                .iter()
                .enumerate()
                .map(|(hi, model)| {
                    model
                        .fingertip_indices()
                        .iter()
                        .map(|&ki| {
                            let kp = &model.keypoints[ki];
                            let p = clip.hands[hi].keypoints[t][kp.human_index];
                            clip.objects
                                .iter()
                                .map(|obj| {
                                    let local = obj.pose[t].inverse().transform_point(&p);
                                    clip.shapes[obj.shape].surface_query(&local).distance
                                        - fingertip_radius
                                })
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Action mapping
// ---------------------------------------------------------------------------

/// Maps a raw policy vector onto a physical action: joint targets spread over
/// the joint ranges around their midpoints, wrench scaled by the actuator
/// limits.
pub fn map_action(
    model: &HandModel,
    params: &PhysicsParams,
    raw: &DVector<f64>,
) -> Result<Action, TrainerError> {
    let (q, wrench) = split_raw(model, params, raw)?;
    let (lo, hi) = model.limit_vectors();
    let q_target = DVector::from_iterator(
        model.dof(),
        q.iter()
            .enumerate()
            .map(|(i, r)| 0.5 * (lo[i] + hi[i]) + r * 0.5 * (hi[i] - lo[i])),
    );
    Ok(Action { q_target, wrench })
}

/// Maps a raw residual vector onto a physical correction: joint part scaled by
/// the half-ranges only (no midpoint, so zero output means zero correction),
/// wrench scaled like the base action.
pub fn map_residual_delta(
    model: &HandModel,
    params: &PhysicsParams,
    raw: &DVector<f64>,
) -> Result<Action, TrainerError> {
    let (q, wrench) = split_raw(model, params, raw)?;
    let (lo, hi) = model.limit_vectors();
    let q_target = DVector::from_iterator(
        model.dof(),
        q.iter().enumerate().map(|(i, r)| r * 0.5 * (hi[i] - lo[i])),
    );
    Ok(Action { q_target, wrench })
}

fn split_raw(
    model: &HandModel,
    params: &PhysicsParams,
    raw: &DVector<f64>,
) -> Result<(DVector<f64>, crate::geom::Twist), TrainerError> {
    let k = model.dof();
    if raw.len() != k + 6 {
        return Err(TrainerError::Layout(format!(
            "raw action has {} entries, expected {}",
            raw.len(),
            k + 6
        )));
    }
    let q = raw.rows(0, k).into_owned();
    let wrench = crate::geom::Twist::new(
        Vector3::new(raw[k], raw[k + 1], raw[k + 2]) * params.wrench_force_limit,
        Vector3::new(raw[k + 3], raw[k + 4], raw[k + 5]) * params.wrench_torque_limit,
    );
    Ok((q, wrench))
}

// ---------------------------------------------------------------------------
// Acting
// ---------------------------------------------------------------------------

/// The policies a rollout acts with. For the imitation stage `base` is absent
/// and `params` is the trained policy itself; for the residual stage `params`
/// is the correction head and `base` the frozen first-stage policy, queried
/// deterministically.
pub struct PolicyBundle<'a> {
    pub stage: Stage,
    pub layout: &'a ObservationLayout,
    pub params: &'a PolicyParams,
    pub base_layout: Option<&'a ObservationLayout>,
    pub base: Option<&'a PolicyParams>,
    /// Residual engagement in [0, 1]; ignored by the imitation stage.
    pub warmup: f64,
}

/// Everything one hand decision produces: what the simulator gets, plus what
/// the learner stores.
pub struct HandDecision {
    pub obs: DVector<f64>,
    pub raw: DVector<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub base_raw: Option<DVector<f64>>,
    pub action: Action,
}

#[allow(clippy::too_many_arguments)]
pub fn decide_hand(
    bundle: &PolicyBundle,
    runtime: &ClipRuntime,
    state: &SimState,
    frame: usize,
    hand: usize,
    prev_raw: &DVector<f64>,
    prev_base_raw: &DVector<f64>,
    physics: &PhysicsParams,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<HandDecision, TrainerError> {
    let model = &runtime.models[hand];
    fn ctx<'a>(
        model: &'a HandModel,
        runtime: &'a ClipRuntime,
        state: &'a SimState,
        frame: usize,
        hand: usize,
        gravity_scale: f64,
        prev: &'a DVector<f64>,
        base: Option<&'a DVector<f64>>,
    ) -> ObsContext<'a> {
        ObsContext {
            model,
            clip: &runtime.clip,
            state,
            hand,
            frame,
            prev_action: prev,
            base_action: base,
            shape_features: &runtime.shape_features,
            shape_masses: &runtime.shape_masses,
            gravity_scale,
        }
    }
    let g = physics.gravity_scale;

    match bundle.stage {
        Stage::Imitation => {
            let obs = build_observation(
                bundle.layout,
                &ctx(model, runtime, state, frame, hand, g, prev_raw, None),
            )?;
            let (raw, log_prob) = draw(bundle.params, &obs, deterministic, rng)?;
            let value = bundle.params.value(&obs)?;
            let action = map_action(model, physics, &raw)?;
            Ok(HandDecision {
                obs,
                raw,
                log_prob,
                value,
                base_raw: None,
                action,
            })
        }
        Stage::Residual => {
            let base = bundle.base.ok_or_else(|| {
                TrainerError::Layout("residual rollout without a base policy".into())
            })?;
            let base_layout = bundle.base_layout.ok_or_else(|| {
                TrainerError::Layout("residual rollout without a base layout".into())
            })?;
            let base_obs = build_observation(
                base_layout,
                &ctx(model, runtime, state, frame, hand, g, prev_base_raw, None),
            )?;
            let base_raw = base.deterministic_action(&base_obs)?;
            let base_action = map_action(model, physics, &base_raw)?;

            let obs = build_observation(
                bundle.layout,
                &ctx(model, runtime, state, frame, hand, g, prev_raw, Some(&base_raw)),
            )?;
            let (raw, log_prob) = draw(bundle.params, &obs, deterministic, rng)?;
            let value = bundle.params.value(&obs)?;
            let delta = map_residual_delta(model, physics, &raw)?;
            let action = residual_combine(&base_action, &delta, bundle.warmup, model, physics)?;
            Ok(HandDecision {
                obs,
                raw,
                log_prob,
                value,
                base_raw: Some(base_raw),
                action,
            })
        }
    }
}

fn draw(
    params: &PolicyParams,
    obs: &DVector<f64>,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, f64), TrainerError> {
    if deterministic {
        let mean = params.deterministic_action(obs)?;
        let log_prob = crate::policy::gaussian_log_prob(&mean, &params.log_std, &mean);
        Ok((mean, log_prob))
    } else {
        Ok(params.sample_action(obs, rng)?)
    }
}

// ---------------------------------------------------------------------------
// Environment instances
// ---------------------------------------------------------------------------

/// One rollout worker: a clip choice, the current frame cursor, the simulator
/// state, and the per-hand previous raw actions fed back into observations.
pub struct EnvInstance {
    pub clip: usize,
    pub frame: usize,
    pub state: SimState,
    pub prev_raw: Vec<DVector<f64>>,
    pub prev_base_raw: Vec<DVector<f64>>,
}

impl EnvInstance {
    pub fn reset(
        clips: &[ClipRuntime],
        stage: Stage,
        physics: &PhysicsParams,
        action_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainerError> {
        let clip_idx = rng.gen_range(0..clips.len());
        let rt = &clips[clip_idx];
        let (frame, state) = rsi_sample(&rt.clip, &rt.models, physics, stage, rng)?;
        let hands = rt.models.len();
        Ok(EnvInstance {
            clip: clip_idx,
            frame,
            state,
            prev_raw: vec![DVector::zeros(action_dim); hands],
            prev_base_raw: vec![DVector::zeros(action_dim); hands],
        })
    }
}

// ---------------------------------------------------------------------------
// Full-clip rollout (evaluation / dumps)
// ---------------------------------------------------------------------------

/// States visited while tracking a full clip, aligned so `states[t]`
/// corresponds to reference frame `t`. `blowup` marks a numerically diverged
/// rollout; the state list is then truncated at the last finite state.
pub struct Rollout {
    pub states: Vec<SimState>,
    pub blowup: bool,
}

/// Plays the policy over the whole clip from frame 0 with no early
/// termination. With `deterministic` set, repeated calls are bit-identical.
pub fn rollout_clip(
    runtime: &ClipRuntime,
    bundle: &PolicyBundle,
    physics: &PhysicsParams,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainerError> {
    let hands = runtime.models.len();
    let action_dim = bundle.layout.action_dim();
    let mut prev_raw = vec![DVector::zeros(action_dim); hands];
    let mut prev_base_raw = vec![DVector::zeros(action_dim); hands];
    let mut state = state_at_frame(&runtime.clip, &runtime.models, 0);
    let mut states = Vec::with_capacity(runtime.len());
    states.push(state.clone());

    for frame in 0..runtime.len() - 1 {
        let mut actions = Vec::with_capacity(hands);
        for h in 0..hands {
            let d = decide_hand(
                bundle,
                runtime,
                &state,
                frame,
                h,
                &prev_raw[h],
                &prev_base_raw[h],
                physics,
                deterministic,
                rng,
            )?;
            if let Some(b) = &d.base_raw {
                prev_base_raw[h] = b.clone();
            }
            prev_raw[h] = d.raw.clone();
            actions.push(d.action);
        }
        match sim::step(&state, &actions, &runtime.models, &runtime.clip.shapes, physics) {
            Ok(next) => {
                state = next;
                states.push(state.clone());
            }
            Err(SimError::NumericalBlowup(_)) => {
                return Ok(Rollout {
                    states,
                    blowup: true,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Rollout {
        states,
        blowup: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn toy_runtime() -> ClipRuntime {
        let model = crate::toys::planar_finger_model();
        let clip = crate::toys::finger_wave_clip(&model, 40, 60.0);
        ClipRuntime::prepare(clip, &[model], "wave", &FitSettings::default(), PhysicsParams::default().fingertip_radius).unwrap()
    }

    #[test]
    fn prepare_builds_tables() {
        let rt = toy_runtime();
        assert_eq!(rt.ref_tip_distance.len(), rt.len());
        assert_eq!(rt.ref_tip_distance[0].len(), 1);
        assert_eq!(
            rt.ref_tip_distance[0][0].len(),
            rt.models[0].fingertip_indices().len()
        );
        // No objects in the wave clip: distances are all infinite.
        assert!(rt.ref_tip_distance[0][0][0].is_infinite());
        assert!(rt.shape_features.is_empty());
    }

    #[test]
    fn grip_runtime_tip_distances_touch_at_grasp() {
        let (models, clip) = crate::toys::gripper_setup();
        let rt = ClipRuntime::prepare(clip, &models, "lift", &FitSettings::default(), PhysicsParams::default().fingertip_radius).unwrap();
        assert_eq!(rt.shape_features.len(), 1);
        assert_eq!(rt.shape_features[0].len(), crate::traj::BPS_BASIS_SIZE);
        // Fingers start open and close onto the box: the reference tip/surface
        // distance shrinks to (slightly below) zero by mid-clip.
        let open = rt.ref_tip_distance[0][0][0];
        let mid = rt.len() / 2;
        let grasped = rt.ref_tip_distance[mid][0][0];
        assert!(open > 0.02, "open distance {open}");
        assert!(grasped < 1e-3, "grasp distance {grasped}");
    }

    #[test]
    fn action_mapping_midpoint_and_scaling() {
        let model = crate::toys::planar_finger_model();
        let physics = PhysicsParams::default();
        let k = model.dof();
        let zero = DVector::zeros(k + 6);
        let a = map_action(&model, &physics, &zero).unwrap();
        let (lo, hi) = model.limit_vectors();
        for i in 0..k {
            assert!((a.q_target[i] - 0.5 * (lo[i] + hi[i])).abs() < 1e-12);
        }
        assert_eq!(a.wrench.linear, Vector3::zeros());

        let mut one = DVector::zeros(k + 6);
        one[0] = 1.0;
        one[k] = 0.5;
        one[k + 5] = -1.0;
        let a = map_action(&model, &physics, &one).unwrap();
        assert!((a.q_target[0] - hi[0]).abs() < 1e-12, "full deflection hits the limit");
        assert!((a.wrench.linear.x - 0.5 * physics.wrench_force_limit).abs() < 1e-12);
        assert!((a.wrench.angular.z + physics.wrench_torque_limit).abs() < 1e-12);

        // The residual mapping has no midpoint: zero input, zero correction.
        let d = map_residual_delta(&model, &physics, &zero).unwrap();
        assert_eq!(d.q_target, DVector::zeros(k));
        let d = map_residual_delta(&model, &physics, &one).unwrap();
        assert!((d.q_target[0] - 0.5 * (hi[0] - lo[0])).abs() < 1e-12);
    }

    #[test]
    fn deterministic_rollout_is_bit_identical() {
        let rt = toy_runtime();
        let model = &rt.models[0];
        let layout =
            ObservationLayout::build(Stage::Imitation, model, 0, false, 4);
        let mut rng = stream(7, "net", 0);
        let params = PolicyParams::new(layout.total, layout.action_dim(), &[16], -1.0, &mut rng);
        let physics = PhysicsParams::default();
        let bundle = PolicyBundle {
            stage: Stage::Imitation,
            layout: &layout,
            params: &params,
            base_layout: None,
            base: None,
            warmup: 1.0,
        };
        let a = rollout_clip(&rt, &bundle, &physics, true, &mut stream(7, "roll", 0)).unwrap();
        let b = rollout_clip(&rt, &bundle, &physics, true, &mut stream(7, "roll", 1)).unwrap();
        assert_eq!(a.states.len(), rt.len());
        assert!(!a.blowup);
        assert_eq!(a.states, b.states, "mean-mode rollouts ignore the rng");
    }

    #[test]
    fn residual_zero_head_matches_base_rollout() {
        let rt = toy_runtime();
        let model = &rt.models[0];
        let base_layout = ObservationLayout::build(Stage::Imitation, model, 0, false, 4);
        let res_layout = ObservationLayout::build(Stage::Residual, model, 0, false, 4);
        let mut rng = stream(9, "net", 0);
        let base =
            PolicyParams::new(base_layout.total, base_layout.action_dim(), &[16], -1.0, &mut rng);
        let residual =
            PolicyParams::residual(res_layout.total, res_layout.action_dim(), &[16], &mut rng);
        let physics = PhysicsParams::default();

        let base_bundle = PolicyBundle {
            stage: Stage::Imitation,
            layout: &base_layout,
            params: &base,
            base_layout: None,
            base: None,
            warmup: 1.0,
        };
        let res_bundle = PolicyBundle {
            stage: Stage::Residual,
            layout: &res_layout,
            params: &residual,
            base_layout: Some(&base_layout),
            base: Some(&base),
            warmup: 1.0,
        };
        let a = rollout_clip(&rt, &base_bundle, &physics, true, &mut stream(9, "r", 0)).unwrap();
        let b = rollout_clip(&rt, &res_bundle, &physics, true, &mut stream(9, "r", 1)).unwrap();
        assert_eq!(a.states, b.states, "fresh residual head adds exactly nothing");
    }
}
