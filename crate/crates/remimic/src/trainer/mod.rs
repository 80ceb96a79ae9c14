//! Two-stage training loop.
//!
//! Stage one trains a tracking policy on hand references alone; stage two
//! freezes it and trains a correction head whose action is added on top,
//! observed through an extended vector that also exposes the objects and the
//! measured contacts. Both stages share the same collection/optimization
//! machinery and differ only in the observation layout, the reward total, the
//! episode-start filter, and the action composition.

pub mod env;
pub mod obs;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::geom::{HandModel, Pose};
use crate::policy::{
    ppo_update, save_checkpoint, AdamState, CheckpointMeta, PolicyError, PolicyParams,
    RolloutBatch,
};
use crate::retarget::RetargetError;
use crate::reward::{self, RewardError, RewardWeights};
use crate::rng::stream;
use crate::sched::{
    check_termination, uses_wide_start, CurriculumState, SchedError, Stage, Termination,
};
use crate::sim::{self, PhysicsParams, SimError, SimState};
use crate::traj::{HandTrack, ObjectShape, ObjectTrack, ReferenceClip, TrajError};

pub use env::{
    decide_hand, map_action, map_residual_delta, rollout_clip, ClipRuntime, EnvInstance,
    HandDecision, PolicyBundle, Rollout,
};
pub use obs::{build_observation, LayoutBlock, ObsContext, ObservationLayout};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("clip error: {0}")]
    Clip(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error("io error: {0}")]
    Io(String),
}

/// Everything a training stage needs: the resolved config, the run's hand
/// models (one per tracked hand), and the prepared clips.
pub struct TrainRun {
    pub config: RunConfig,
    pub clips: Vec<ClipRuntime>,
    pub out_dir: PathBuf,
    pub label: String,
}

/// Per-term reward means over one update's samples (raw, unweighted).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TermBreakdown {
    pub wrist: f64,
    pub finger: f64,
    pub smooth: f64,
    pub object: f64,
    pub contact: f64,
}

impl TermBreakdown {
    fn weighted(&self, w: &RewardWeights) -> TermBreakdown {
        TermBreakdown {
            wrist: w.w_wrist * self.wrist,
            finger: w.w_finger * self.finger,
            smooth: w.w_smooth * self.smooth,
            object: w.w_object * self.object,
            contact: w.w_contact * self.contact,
        }
    }
}

/// One line of the training log (serialized as JSON lines).
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub update: usize,
    pub progress: f64,
    pub warmup: f64,
    pub reward_mean: f64,
    pub terms: TermBreakdown,
    pub weighted_terms: TermBreakdown,
    /// Fraction of finished episodes that reached the end of their clip.
    pub sr_proxy: f64,
    pub episodes: usize,
    pub terminations: BTreeMap<String, usize>,
    pub curriculum: CurriculumState,
    pub stats: crate::policy::PpoStats,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub meta: CheckpointMeta,
    pub records: Vec<LogRecord>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    /// The frozen first-stage policy the correction head trained against
    /// (residual stage only), exactly as used.
    pub base_used: Option<PolicyParams>,
}

pub fn train_imitation(run: &TrainRun) -> Result<TrainOutcome, TrainerError> {
    train_stage(run, Stage::Imitation, None)
}

pub fn train_residual(
    run: &TrainRun,
    base: &PolicyParams,
    base_meta: &CheckpointMeta,
) -> Result<TrainOutcome, TrainerError> {
    train_stage(run, Stage::Residual, Some((base, base_meta)))
}

/// Validates that every clip agrees on the signature the observation layout
/// is built from and returns (hands, objects, articulated).
fn run_signature(clips: &[ClipRuntime]) -> Result<(usize, usize, bool), TrainerError> {
    let first = clips.first().ok_or_else(|| {
        TrainerError::Config("at least one reference clip is required".into())
    })?;
    let hands = first.models.len();
    let objects = first.clip.objects.len();
    let articulated = first.clip.objects.iter().any(|o| o.articulation.is_some());
    let proto = &first.models[0];
    for rt in clips {
        if rt.models.len() != hands || rt.clip.objects.len() != objects {
            return Err(TrainerError::Config(format!(
                "clip {} has {} hands / {} objects, expected {hands} / {objects}",
                rt.name,
                rt.models.len(),
                rt.clip.objects.len()
            )));
        }
        let art = rt.clip.objects.iter().any(|o| o.articulation.is_some());
        if art != articulated {
            return Err(TrainerError::Config(format!(
                "clip {} mixes articulated and rigid runs",
                rt.name
            )));
        }
        for m in &rt.models {
            if m.dof() != proto.dof()
                || m.keypoint_count() != proto.keypoint_count()
                || m.fingertip_indices().len() != proto.fingertip_indices().len()
            {
                return Err(TrainerError::Config(format!(
                    "model {} does not structurally match {}",
                    m.name, proto.name
                )));
            }
        }
    }
    Ok((hands, objects, articulated))
}

fn train_stage(
    run: &TrainRun,
    stage: Stage,
    base: Option<(&PolicyParams, &CheckpointMeta)>,
) -> Result<TrainOutcome, TrainerError> {
    let cfg = &run.config;
    cfg.validate()
        .map_err(|e| TrainerError::Config(e.to_string()))?;
    let (hands, objects, articulated) = run_signature(&run.clips)?;
    let proto = &run.clips[0].models[0];
    let lookahead = cfg.observation.lookahead;
    let layout = ObservationLayout::build(stage, proto, objects, articulated, lookahead);
    let act_dim = layout.action_dim();
    let stage_idx = match stage {
        Stage::Imitation => 0,
        Stage::Residual => 1,
    };

    // The frozen base: its observation layout must be exactly the imitation
    // layout this run would build, and its running input statistics must not
    // move while the correction head trains.
    let mut base_used: Option<PolicyParams> = None;
    let base_layout = ObservationLayout::build(Stage::Imitation, proto, objects, articulated, lookahead);
    if stage == Stage::Residual {
        let (params, meta) = base.ok_or_else(|| {
            TrainerError::Config("residual training needs a first-stage checkpoint".into())
        })?;
        if meta.stage != "imitation" {
            return Err(TrainerError::IncompatibleCheckpoint(format!(
                "base checkpoint is a {} policy",
                meta.stage
            )));
        }
        let stored = ObservationLayout::from_json(&meta.layout)?;
        if stored != base_layout {
            return Err(TrainerError::IncompatibleCheckpoint(
                "base checkpoint was trained on a different observation layout".into(),
            ));
        }
        let mut frozen = params.clone();
        frozen.normalizer.freeze();
        base_used = Some(frozen);
    }

    let mut params = match stage {
        Stage::Imitation => PolicyParams::new(
            layout.total,
            act_dim,
            &cfg.ppo.hidden,
            cfg.ppo.log_std_init,
            &mut stream(cfg.seed, "policy_init", stage_idx),
        ),
        Stage::Residual => PolicyParams::residual(
            layout.total,
            act_dim,
            &cfg.ppo.hidden,
            &mut stream(cfg.seed, "policy_init", stage_idx),
        ),
    };
    let mut opt = AdamState::new(params.param_count());

    let updates = cfg.train.updates;
    let envs = cfg.train.envs;
    let agents = envs * hands;
    let horizon = cfg.ppo.horizon;
    let wide = uses_wide_start(proto);

    let mut col_rng = stream(cfg.seed, "collect", stage_idx);
    let mut opt_rng = stream(cfg.seed, "optimize", stage_idx);

    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| TrainerError::Io(format!("create {}: {e}", run.out_dir.display())))?;
    let log_path = run.out_dir.join(format!("{}.jsonl", run.label));
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .map_err(|e| TrainerError::Io(format!("create {}: {e}", log_path.display())))?,
    );

    // Initial worker pool; physics starts at the curriculum's first rung.
    let curriculum0 = CurriculumState::at(&cfg.curriculum, 0.0, wide)?;
    let physics0 = sim::set_physics_schedule(&cfg.physics, curriculum0.gravity_scale, curriculum0.friction)?;
    let mut workers: Vec<EnvInstance> = (0..envs)
        .map(|_| EnvInstance::reset(&run.clips, stage, &physics0, act_dim, &mut col_rng))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(updates);

    for update in 0..updates {
        let progress = update as f64 / (updates.max(2) - 1) as f64;
        let curriculum = CurriculumState::at(&cfg.curriculum, progress, wide)?;
        let physics =
            sim::set_physics_schedule(&cfg.physics, curriculum.gravity_scale, curriculum.friction)?;
        let warmup = match stage {
            Stage::Imitation => 1.0,
            Stage::Residual => (update as f64 / (0.1 * updates as f64).max(1.0)).min(1.0),
        };
        let bundle = PolicyBundle {
            stage,
            layout: &layout,
            params: &params,
            base_layout: if stage == Stage::Residual {
                Some(&base_layout)
            } else {
                None
            },
            base: base_used.as_ref(),
            warmup,
        };

        let mut batch = RolloutBatch::zeros(horizon, agents, layout.total, act_dim);
        let mut pending: Vec<Option<usize>> = vec![None; agents];
        let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
        let mut episodes = 0usize;
        let mut terms = TermBreakdown::default();

        for t in 0..horizon {
            for e in 0..envs {
                let worker = &mut workers[e];
                let rt = &run.clips[worker.clip];
                let mut actions = Vec::with_capacity(hands);
                for h in 0..hands {
                    let a = e * hands + h;
                    let d = decide_hand(
                        &bundle,
                        rt,
                        &worker.state,
                        worker.frame,
                        h,
                        &worker.prev_raw[h],
                        &worker.prev_base_raw[h],
                        &physics,
                        false,
                        &mut col_rng,
                    )?;
                    if let Some(p) = pending[a].take() {
                        batch.next_values[p] = d.value;
                    }
                    let si = batch.sample_index(t, a);
                    batch.obs.set_column(si, &d.obs);
                    batch.actions.set_column(si, &d.raw);
                    batch.values[si] = d.value;
                    batch.log_probs[si] = d.log_prob;
                    if let Some(b) = &d.base_raw {
                        worker.prev_base_raw[h] = b.clone();
                    }
                    worker.prev_raw[h] = d.raw.clone();
                    actions.push(d.action);
                }

                match sim::step(&worker.state, &actions, &rt.models, &rt.clip.shapes, &physics) {
                    Ok(next) => {
                        let f_new = worker.frame + 1;
                        for h in 0..hands {
                            let si = batch.sample_index(t, e * hands + h);
                            let (total, parts) =
                                hand_reward(&next, rt, f_new, h, stage, &cfg.rewards, curriculum.xi_c)?;
                            batch.rewards[si] = total;
                            terms.wrist += parts.wrist;
                            terms.finger += parts.finger;
                            terms.smooth += parts.smooth;
                            terms.object += parts.object;
                            terms.contact += parts.contact;
                        }
                        let term = check_termination(
                            &next,
                            &rt.models,
                            &rt.clip,
                            f_new,
                            &rt.ref_tip_distance[f_new],
                            &curriculum,
                            stage,
                        );
                        match term {
                            Termination::Continue => {
                                worker.state = next;
                                worker.frame = f_new;
                                for h in 0..hands {
                                    let a = e * hands + h;
                                    pending[a] = Some(batch.sample_index(t, a));
                                }
                            }
                            Termination::EndOfClip => {
                                episodes += 1;
                                *terminations.entry(term.label().to_string()).or_insert(0) += 1;
                                for h in 0..hands {
                                    let si = batch.sample_index(t, e * hands + h);
                                    batch.dones[si] = 1.0;
                                    batch.bootstrap[si] = 1.0;
                                    batch.next_values[si] = hand_value(
                                        &bundle,
                                        rt,
                                        &next,
                                        f_new,
                                        h,
                                        &worker.prev_raw[h],
                                        &worker.prev_base_raw[h],
                                        &physics,
                                    )?;
                                }
                                *worker = EnvInstance::reset(
                                    &run.clips,
                                    stage,
                                    &physics,
                                    act_dim,
                                    &mut col_rng,
                                )?;
                            }
                            _ => {
                                episodes += 1;
                                *terminations.entry(term.label().to_string()).or_insert(0) += 1;
                                for h in 0..hands {
                                    let si = batch.sample_index(t, e * hands + h);
                                    batch.dones[si] = 1.0;
                                    batch.bootstrap[si] = 0.0;
                                }
                                *worker = EnvInstance::reset(
                                    &run.clips,
                                    stage,
                                    &physics,
                                    act_dim,
                                    &mut col_rng,
                                )?;
                            }
                        }
                    }
                    Err(SimError::NumericalBlowup(_)) => {
                        episodes += 1;
                        *terminations.entry("blowup".to_string()).or_insert(0) += 1;
                        for h in 0..hands {
                            let si = batch.sample_index(t, e * hands + h);
                            batch.dones[si] = 1.0;
                            batch.bootstrap[si] = 0.0;
                        }
                        *worker =
                            EnvInstance::reset(&run.clips, stage, &physics, act_dim, &mut col_rng)?;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }

        // Value targets for samples whose successor fell outside the horizon.
        for e in 0..envs {
            for h in 0..hands {
                let a = e * hands + h;
                if let Some(p) = pending[a].take() {
                    let worker = &workers[e];
                    batch.next_values[p] = hand_value(
                        &bundle,
                        &run.clips[worker.clip],
                        &worker.state,
                        worker.frame,
                        h,
                        &worker.prev_raw[h],
                        &worker.prev_base_raw[h],
                        &physics,
                    )?;
                }
            }
        }

        let stats = ppo_update(&mut params, &mut opt, &batch, &cfg.ppo, progress, &mut opt_rng)?;
        // Input statistics advance only after the optimization that used them.
        params.normalizer.update_batch(&batch.obs);

        let n = batch.len() as f64;
        let end_label = Termination::EndOfClip.label();
        let finished_ok = terminations.get(end_label).copied().unwrap_or(0);
        let record = LogRecord {
            update,
            progress,
            warmup,
            reward_mean: batch.rewards.sum() / n,
            terms: TermBreakdown {
                wrist: terms.wrist / n,
                finger: terms.finger / n,
                smooth: terms.smooth / n,
                object: terms.object / n,
                contact: terms.contact / n,
            },
            weighted_terms: TermBreakdown {
                wrist: terms.wrist / n,
                finger: terms.finger / n,
                smooth: terms.smooth / n,
                object: terms.object / n,
                contact: terms.contact / n,
            }
            .weighted(&cfg.rewards),
            sr_proxy: if episodes > 0 {
                finished_ok as f64 / episodes as f64
            } else {
                0.0
            },
            episodes,
            terminations,
            curriculum,
            stats,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| TrainerError::Io(format!("log record: {e}")))?;
        writeln!(log, "{line}").map_err(|e| TrainerError::Io(format!("write log: {e}")))?;
        log.flush().map_err(|e| TrainerError::Io(e.to_string()))?;
        records.push(record);

        if cfg.train.checkpoint_every > 0
            && (update + 1) % cfg.train.checkpoint_every == 0
            && update + 1 < updates
        {
            let meta = CheckpointMeta {
                stage: stage_name(stage).to_string(),
                layout: layout.to_json(),
                config_hash: cfg.hash(),
                update: (update + 1) as u64,
            };
            let path = run.out_dir.join(format!("{}_u{:05}.ckpt", run.label, update + 1));
            save_checkpoint(&path, &params, &meta)?;
        }
    }

    let meta = CheckpointMeta {
        stage: stage_name(stage).to_string(),
        layout: layout.to_json(),
        config_hash: cfg.hash(),
        update: updates as u64,
    };
    let checkpoint_path = run.out_dir.join(format!("{}.ckpt", run.label));
    save_checkpoint(&checkpoint_path, &params, &meta)?;

    Ok(TrainOutcome {
        params,
        meta,
        records,
        checkpoint_path,
        log_path,
        base_used,
    })
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Imitation => "imitation",
        Stage::Residual => "residual",
    }
}

/// Critic value of the observation a hand would see at (state, frame): the
/// bootstrap target for episode ends that are not failures.
#[allow(clippy::too_many_arguments)]
fn hand_value(
    bundle: &PolicyBundle,
    rt: &ClipRuntime,
    state: &SimState,
    frame: usize,
    hand: usize,
    prev_raw: &DVector<f64>,
    prev_base_raw: &DVector<f64>,
    physics: &PhysicsParams,
) -> Result<f64, TrainerError> {
    let model = &rt.models[hand];
    let base_raw = match bundle.stage {
        Stage::Imitation => None,
        Stage::Residual => {
            let base = bundle.base.expect("validated at stage start");
            let base_layout = bundle.base_layout.expect("validated at stage start");
            let base_obs = build_observation(
                base_layout,
                &obs_ctx(model, rt, state, frame, hand, prev_base_raw, None, physics),
            )?;
            Some(base.deterministic_action(&base_obs)?)
        }
    };
    let obs = build_observation(
        bundle.layout,
        &obs_ctx(model, rt, state, frame, hand, prev_raw, base_raw.as_ref(), physics),
    )?;
    Ok(bundle.params.value(&obs)?)
}

#[allow(clippy::too_many_arguments)]
fn obs_ctx<'a>(
    model: &'a HandModel,
    rt: &'a ClipRuntime,
    state: &'a SimState,
    frame: usize,
    hand: usize,
    prev: &'a DVector<f64>,
    base: Option<&'a DVector<f64>>,
    physics: &PhysicsParams,
) -> ObsContext<'a> {
    ObsContext {
        model,
        clip: &rt.clip,
        state,
        hand,
        frame,
        prev_action: prev,
        base_action: base,
        shape_features: &rt.shape_features,
        shape_masses: &rt.shape_masses,
        gravity_scale: physics.gravity_scale,
    }
}

/// Reward for one hand after stepping into reference frame `frame`. The
/// object term is shared (both hands chase the same object trajectory); the
/// contact term reads this hand's own fingertip forces.
fn hand_reward(
    state: &SimState,
    rt: &ClipRuntime,
    frame: usize,
    hand: usize,
    stage: Stage,
    w: &RewardWeights,
    xi_c: f64,
) -> Result<(f64, TermBreakdown), TrainerError> {
    let model = &rt.models[hand];
    let hs = &state.hands[hand];
    let track = &rt.clip.hands[hand];

    let rw = reward::r_wrist(&hs.wrist, &hs.wrist_vel, &track.wrist[frame], &track.wrist_vel[frame], w);
    let sim_kp = sim::hand_keypoints(model, hs);
    let ref_kp: Vec<Vector3<f64>> = model
        .keypoints
        .iter()
        .map(|kp| track.keypoints[frame][kp.human_index])
        .collect();
    let rf = reward::r_finger(&sim_kp, &ref_kp, model)?;
    let rs = reward::r_smooth(&hs.qd, &hs.last_torque)?;
    let ri = reward::total_imitation(rw, rf, rs, w);

    let mut parts = TermBreakdown {
        wrist: rw,
        finger: rf,
        smooth: rs,
        object: 0.0,
        contact: 0.0,
    };
    if stage == Stage::Imitation {
        return Ok((ri, parts));
    }

    let mut robj = 0.0;
    for (obj, track_o) in state.objects.iter().zip(&rt.clip.objects) {
        let sim_angle = obj
            .articulation
            .map(|a| (a, obj.articulation_vel.unwrap_or(0.0)));
        let ref_angle = track_o.articulation.as_ref().map(|arr| {
            (
                arr[frame],
                track_o
                    .articulation_vel
                    .as_ref()
                    .map_or(0.0, |v| v[frame]),
            )
        });
        robj += reward::r_object(
            &obj.pose,
            &obj.vel,
            sim_angle,
            &track_o.pose[frame],
            &track_o.vel[frame],
            ref_angle,
            w,
        )?;
    }
    if !state.objects.is_empty() {
        robj /= state.objects.len() as f64;
    }
    let forces: Vec<f64> = state.contacts[hand].iter().map(|c| c.force).collect();
    let rc = reward::r_contact(
        &forces,
        &rt.ref_tip_distance[frame][hand],
        xi_c,
        w.w_c,
        w.lambda_c,
    );
    parts.object = robj;
    parts.contact = rc;
    Ok((reward::total_residual(ri, robj, rc, w), parts))
}

// ---------------------------------------------------------------------------
// Clip synthesis and export
// ---------------------------------------------------------------------------

/// Generates smooth joint-space motions for a hand model and records them as
/// reference clips with exact joint caches. Useful as pre-training data and
/// as self-consistent fixtures: the keypoints are the model's own forward
/// kinematics, so a perfect tracker would reproduce them identically.
pub fn gen_synthetic(
    model: &HandModel,
    n_clips: usize,
    frames: usize,
    fps: f64,
    seed: u64,
) -> Vec<ReferenceClip> {
    assert!(frames >= 2, "a clip needs at least two frames");
    let k = model.dof();
    let (lo, hi) = model.limit_vectors();
    let n_way = 4usize;
    (0..n_clips)
        .map(|c| {
            let mut rng = stream(seed, "synthetic", c as u64);
            let way_q: Vec<DVector<f64>> = (0..n_way)
                .map(|_| {
                    DVector::from_iterator(
                        k,
                        (0..k).map(|i| {
                            let u: f64 = rng.gen_range(0.1..0.9);
                            lo[i] + u * (hi[i] - lo[i])
                        }),
                    )
                })
                .collect();
            let way_t: Vec<Vector3<f64>> = (0..n_way)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                        0.1 + rng.gen_range(-0.03..0.03),
                    )
                })
                .collect();
            let way_r: Vec<nalgebra::UnitQuaternion<f64>> = (0..n_way)
                .map(|_| {
                    let axis = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let angle = rng.gen_range(-0.4..0.4);
                    if axis.norm() < 1e-9 {
                        nalgebra::UnitQuaternion::identity()
                    } else {
                        nalgebra::UnitQuaternion::from_axis_angle(
                            &nalgebra::Unit::new_normalize(axis),
                            angle,
                        )
                    }
                })
                .collect();

            let mut joints = Vec::with_capacity(frames);
            let mut wrists = Vec::with_capacity(frames);
            for t in 0..frames {
                let s = t as f64 / (frames - 1) as f64 * (n_way - 1) as f64;
                let seg = (s.floor() as usize).min(n_way - 2);
                let u = s - seg as f64;
                let u = u * u * (3.0 - 2.0 * u);
                let q = &way_q[seg] * (1.0 - u) + &way_q[seg + 1] * u;
                let tr = way_t[seg] * (1.0 - u) + way_t[seg + 1] * u;
                let rot = way_r[seg].slerp(&way_r[seg + 1], u);
                joints.push(q);
                wrists.push(Pose::new(tr, rot));
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
                    let fk = model
                        .forward_kinematics(q, wrist)
                        .expect("waypoints respect the model");
                    let mut row = vec![wrist.translation; max_slot + 1];
                    for (ki, kp) in model.keypoints.iter().enumerate() {
                        row[kp.human_index] = fk[ki];
                    }
                    row
                })
                .collect();

            let keypoint_vel = fd_points(&keypoints, fps);
            let clip = ReferenceClip {
                fps,
                hands: vec![HandTrack {
                    side: model.side,
                    wrist_vel: crate::traj::fd_twists(&wrists, fps),
                    wrist: wrists,
                    keypoints,
                    keypoint_vel,
                    joints: Some(joints),
                }],
                objects: vec![],
                shapes: vec![],
            };
            debug_assert!(clip.validate().is_ok());
            clip
        })
        .collect()
}

fn fd_points(frames: &[Vec<Vector3<f64>>], fps: f64) -> Vec<Vec<Vector3<f64>>> {
    let t_len = frames.len();
    let slots = frames[0].len();
    let mut out = vec![vec![Vector3::zeros(); slots]; t_len];
    for s in 0..slots {
        let track: Vec<Vector3<f64>> = frames.iter().map(|f| f[s]).collect();
        for (t, v) in crate::traj::fd_linear(&track, fps).into_iter().enumerate() {
            out[t][s] = v;
        }
    }
    out
}

/// Converts a rollout's states back into clip form so tracked motions can be
/// saved, inspected, or compared with their references by the same tools.
pub fn states_to_clip(
    states: &[SimState],
    models: &[HandModel],
    shapes: &[ObjectShape],
    fps: f64,
) -> ReferenceClip {
    assert!(states.len() >= 2, "a clip needs at least two frames");
    let hands = models
        .iter()
        .enumerate()
        .map(|(hi, model)| {
            let max_slot = model
                .keypoints
                .iter()
                .map(|kp| kp.human_index)
                .max()
                .unwrap_or(0);
            let wrists: Vec<Pose> = states.iter().map(|s| s.hands[hi].wrist).collect();
            let keypoints: Vec<Vec<Vector3<f64>>> = states
                .iter()
                .map(|s| {
                    let fk = sim::hand_keypoints(model, &s.hands[hi]);
                    let mut row = vec![s.hands[hi].wrist.translation; max_slot + 1];
                    for (ki, kp) in model.keypoints.iter().enumerate() {
                        row[kp.human_index] = fk[ki];
                    }
                    row
                })
                .collect();
            HandTrack {
                side: model.side,
                wrist_vel: states.iter().map(|s| s.hands[hi].wrist_vel).collect(),
                keypoint_vel: fd_points(&keypoints, fps),
                wrist: wrists,
                keypoints,
                joints: Some(states.iter().map(|s| s.hands[hi].q.clone()).collect()),
            }
        })
        .collect();
    let objects = (0..states[0].objects.len())
        .map(|oi| {
            let articulated = states[0].objects[oi].articulation.is_some();
            ObjectTrack {
                shape: states[0].objects[oi].shape,
                pose: states.iter().map(|s| s.objects[oi].pose).collect(),
                vel: states.iter().map(|s| s.objects[oi].vel).collect(),
                articulation: articulated.then(|| {
                    states
                        .iter()
                        .map(|s| s.objects[oi].articulation.unwrap_or(0.0))
                        .collect()
                }),
                articulation_vel: articulated.then(|| {
                    states
                        .iter()
                        .map(|s| s.objects[oi].articulation_vel.unwrap_or(0.0))
                        .collect()
                }),
            }
        })
        .collect();
    ReferenceClip {
        fps,
        hands,
        objects,
        shapes: shapes.to_vec(),
    }
}
