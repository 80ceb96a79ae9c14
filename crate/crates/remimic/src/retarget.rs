//! Keypoint retargeting: solving for joint angles (and optionally the wrist
//! pose) that place a hand model's keypoints onto target positions.
//!
//! The core solver is damped Gauss–Newton on the weighted keypoint residual.
//! On top of it sit the many-to-one correspondence remapping for hands with
//! fewer fingers than the reference, a temporally smoothed whole-trajectory
//! fit, and the per-clip joint cache used to start episodes mid-clip.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geom::{HandModel, Pose};
use crate::traj::ReferenceClip;

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing correspondence: no reference keypoint for human index {0}")]
    MissingCorrespondence(usize),
    #[error("validation error: {0}")]
    Validation(String),
}

/// Solver knobs. Defaults suit hand-scale problems (meters, radians).
#[derive(Debug, Clone, Copy)]
pub struct FitSettings {
    pub max_iters: usize,
    /// Accepted-step length below which iteration stops.
    pub step_tol: f64,
    /// Weighted-RMS residual (m) below which the fit counts as converged.
    pub success_tol: f64,
    /// Initial Levenberg damping; grows ×10 on rejection, shrinks ÷10 on
    /// acceptance.
    pub mu_init: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_iters: 60,
            step_tol: 1e-10,
            success_tol: 1e-5,
            mu_init: 1e-3,
        }
    }
}

/// Solution of one frame's alignment.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub q: DVector<f64>,
    pub wrist: Pose,
    /// Weighted RMS keypoint error: √(Σ w‖Δ‖² / Σ w).
    pub residual: f64,
    /// Whether the residual reached `success_tol`. An unreachable target
    /// leaves this false even when iteration stalls early.
    pub converged: bool,
    /// Residual after initialization and after every accepted step;
    /// non-increasing by construction.
    pub trace: Vec<f64>,
}

/// Whole-trajectory fit produced by [`fit_reduced_dof`].
#[derive(Debug, Clone)]
pub struct ReducedFit {
    pub joints: Vec<DVector<f64>>,
    /// Final value of the smoothed objective.
    pub objective: f64,
    pub converged: bool,
}

struct Problem<'a> {
    model: &'a HandModel,
    targets: &'a [Vector3<f64>],
    weights: &'a [f64],
    sqrt_w: Vec<f64>,
    weight_sum: f64,
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a HandModel,
        targets: &'a [Vector3<f64>],
        weights: &'a [f64],
    ) -> Result<Self, RetargetError> {
        let f = model.keypoint_count();
        if targets.len() != f {
            return Err(RetargetError::DimensionMismatch {
                expected: f,
                got: targets.len(),
            });
        }
        if weights.len() != f {
            return Err(RetargetError::DimensionMismatch {
                expected: f,
                got: weights.len(),
            });
        }
        let weight_sum: f64 = weights.iter().sum();
        if !(weight_sum > 0.0) {
            return Err(RetargetError::Validation(
                "at least one keypoint weight must be positive".into(),
            ));
        }
        Ok(Problem {
            model,
            targets,
            weights,
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            weight_sum,
        })
    }

    fn cost(&self, q: &DVector<f64>, wrist: &Pose) -> f64 {
        let points = self
            .model
            .forward_kinematics(q, wrist)
            .expect("dimensions checked at construction");
        points
            .iter()
            .zip(self.targets)
            .zip(self.weights)
            .map(|((p, t), w)| w * (p - t).norm_squared())
            .sum()
    }

    fn residual_of(&self, cost: f64) -> f64 {
        (cost / self.weight_sum).sqrt()
    }

    /// Weighted residual vector and Jacobian, restricted to the joint
    /// columns when the wrist is locked.
    fn linearize(&self, q: &DVector<f64>, wrist: &Pose, lock_wrist: bool) -> (DVector<f64>, DMatrix<f64>) {
        let points = self.model.forward_kinematics(q, wrist).unwrap();
        let jac_full = self.model.keypoint_jacobian(q, wrist).unwrap();
        let k = self.model.dof();
        let cols = if lock_wrist { k } else { k + 6 };
        let mut jac = jac_full.columns(0, cols).into_owned();
        let mut r = DVector::zeros(3 * points.len());
        for (f, (p, t)) in points.iter().zip(self.targets).enumerate() {
            let sw = self.sqrt_w[f];
            let d = p - t;
            for axis in 0..3 {
                r[3 * f + axis] = sw * d[axis];
            }
            let mut rows = jac.rows_mut(3 * f, 3);
            rows *= sw;
        }
        (r, jac)
    }
}

fn apply_step(
    model: &HandModel,
    q: &DVector<f64>,
    wrist: &Pose,
    delta: &DVector<f64>,
    lock_wrist: bool,
) -> (DVector<f64>, Pose) {
    let k = model.dof();
    let q_new = model.clamp_to_limits(&(q + delta.rows(0, k)));
    let wrist_new = if lock_wrist {
        *wrist
    } else {
        let dv = Vector3::new(delta[k], delta[k + 1], delta[k + 2]);
        let dw = Vector3::new(delta[k + 3], delta[k + 4], delta[k + 5]);
        wrist.compose(&Pose::new(dv, UnitQuaternion::from_scaled_axis(dw)))
    };
    (q_new, wrist_new)
}

/// Aligns the model's keypoints to `targets` by damped Gauss–Newton from
/// (`init_q`, `init_wrist`). Joint angles are clamped into their limits after
/// every step; with `lock_wrist` the wrist stays put and only joints move.
/// The returned trace of accepted residuals never increases.
pub fn retarget_frame(
    model: &HandModel,
    targets: &[Vector3<f64>],
    weights: &[f64],
    init_q: &DVector<f64>,
    init_wrist: &Pose,
    lock_wrist: bool,
    settings: &FitSettings,
) -> Result<FitResult, RetargetError> {
    let problem = Problem::new(model, targets, weights)?;
    if init_q.len() != model.dof() {
        return Err(RetargetError::DimensionMismatch {
            expected: model.dof(),
            got: init_q.len(),
        });
    }

    let mut q = model.clamp_to_limits(init_q);
    let mut wrist = *init_wrist;
    let mut cost = problem.cost(&q, &wrist);
    let mut trace = vec![problem.residual_of(cost)];
    let mut mu = settings.mu_init;

    if trace[0] < 1e-12 {
        return Ok(FitResult {
            q,
            wrist,
            residual: trace[0],
            converged: true,
            trace,
        });
    }

    'outer: for _ in 0..settings.max_iters {
        let (r, jac) = problem.linearize(&q, &wrist, lock_wrist);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let dim = jtj.nrows();

        // Damping loop: grow μ until a step actually reduces the cost.
        loop {
            let mut damped = jtj.clone();
            for i in 0..dim {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                if mu > 1e12 {
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let (q_new, wrist_new) = apply_step(model, &q, &wrist, &delta, lock_wrist);
            let cost_new = problem.cost(&q_new, &wrist_new);
            if cost_new <= cost {
                let step = (&q_new - &q).norm()
                    + if lock_wrist {
                        0.0
                    } else {
                        delta.rows(model.dof(), 6).norm()
                    };
                let improvement = cost - cost_new;
                q = q_new;
                wrist = wrist_new;
                cost = cost_new;
                trace.push(problem.residual_of(cost));
                mu = (mu / 10.0).max(1e-12);
                if step < settings.step_tol || improvement < 1e-14 * (1.0 + cost) {
                    break 'outer;
                }
                break;
            }
            mu *= 10.0;
            if mu > 1e12 {
                break 'outer;
            }
        }
    }

    let residual = problem.residual_of(cost);
    Ok(FitResult {
        q,
        wrist,
        residual,
        converged: residual <= settings.success_tol,
        trace,
    })
}

/// Maps a dense human keypoint array (indexed by human keypoint convention)
/// onto per-model-keypoint targets and weights.
///
/// Model keypoints that share an attachment (same link and offset) represent
/// several human keypoints landing on one physical point; each member is
/// assigned the mean of the group's targets, so the group acts as one merged
/// constraint whose weight is the members' sum.
pub fn remap_correspondence(
    human: &[Vector3<f64>],
    model: &HandModel,
) -> Result<(Vec<Vector3<f64>>, Vec<f64>), RetargetError> {
    let slots: Vec<Option<Vector3<f64>>> = human.iter().copied().map(Some).collect();
    remap_from_slots(&slots, model)
}

fn remap_from_slots(
    slots: &[Option<Vector3<f64>>],
    model: &HandModel,
) -> Result<(Vec<Vector3<f64>>, Vec<f64>), RetargetError> {
    let mut raw = Vec::with_capacity(model.keypoint_count());
    for kp in &model.keypoints {
        let target = slots
            .get(kp.human_index)
            .copied()
            .flatten()
            .ok_or(RetargetError::MissingCorrespondence(kp.human_index))?;
        raw.push(target);
    }

    // Group by attachment and average the group targets.
    let mut keys: Vec<(usize, [u64; 3])> = Vec::with_capacity(model.keypoints.len());
    for kp in &model.keypoints {
        keys.push((
            kp.link,
            [
                kp.offset[0].to_bits(),
                kp.offset[1].to_bits(),
                kp.offset[2].to_bits(),
            ],
        ));
    }
    let mut targets = raw.clone();
    for i in 0..targets.len() {
        let mut sum = Vector3::zeros();
        let mut n = 0.0;
        for (j, key) in keys.iter().enumerate() {
            if *key == keys[i] {
                sum += raw[j];
                n += 1.0;
            }
        }
        targets[i] = sum / n;
    }
    let weights = model.keypoints.iter().map(|kp| kp.weight).collect();
    Ok((targets, weights))
}

/// Fits a reduced-DoF model to a trajectory recorded on a richer model.
///
/// Per-frame targets are the full model's keypoint positions, remapped
/// through the human correspondence onto the reduced model; the wrist track
/// is copied verbatim. The objective
///   Σ_t Σ_f w_f‖fk − target‖² + smooth_weight·Σ_t ‖q̃_{t+1} − q̃_t‖²
/// is minimized by coordinate sweeps over frames, each frame solved by the
/// damped Gauss–Newton core with its neighbors held fixed, until the
/// objective's relative change drops below 1e-8.
pub fn fit_reduced_dof(
    full_model: &HandModel,
    full_joints: &[DVector<f64>],
    full_wrists: &[Pose],
    reduced_model: &HandModel,
    smooth_weight: f64,
    settings: &FitSettings,
) -> Result<ReducedFit, RetargetError> {
    if full_joints.len() != full_wrists.len() {
        return Err(RetargetError::DimensionMismatch {
            expected: full_joints.len(),
            got: full_wrists.len(),
        });
    }
    if full_joints.is_empty() {
        return Err(RetargetError::Validation("empty trajectory".into()));
    }
    if smooth_weight < 0.0 {
        return Err(RetargetError::Validation(
            "smooth_weight must be ≥ 0".into(),
        ));
    }

    // Human-indexed slots from the full model's forward kinematics.
    let max_index = reduced_model
        .keypoints
        .iter()
        .chain(full_model.keypoints.iter())
        .map(|kp| kp.human_index)
        .max()
        .unwrap_or(0);
    let t_len = full_joints.len();
    let mut all_targets = Vec::with_capacity(t_len);
    for (q, wrist) in full_joints.iter().zip(full_wrists) {
        let points = full_model
            .forward_kinematics(q, wrist)
            .map_err(|e| RetargetError::Validation(e.to_string()))?;
        let mut slots = vec![None; max_index + 1];
        for (kp, p) in full_model.keypoints.iter().zip(points) {
            slots[kp.human_index] = Some(p);
        }
        let (targets, _) = remap_from_slots(&slots, reduced_model)?;
        all_targets.push(targets);
    }
    let weights: Vec<f64> = reduced_model.keypoints.iter().map(|kp| kp.weight).collect();

    fit_targets_smoothed(
        reduced_model,
        &all_targets,
        full_wrists,
        &weights,
        smooth_weight,
        settings,
    )
}

/// The smoothed trajectory fit on explicit targets (the work behind
/// [`fit_reduced_dof`], reusable when targets come straight from a clip).
pub fn fit_targets_smoothed(
    model: &HandModel,
    targets: &[Vec<Vector3<f64>>],
    wrists: &[Pose],
    weights: &[f64],
    smooth_weight: f64,
    settings: &FitSettings,
) -> Result<ReducedFit, RetargetError> {
    let t_len = targets.len();
    if wrists.len() != t_len {
        return Err(RetargetError::DimensionMismatch {
            expected: t_len,
            got: wrists.len(),
        });
    }
    let mut joints = vec![model.mid_range(); t_len];

    let objective = |joints: &[DVector<f64>]| -> f64 {
        let mut obj = 0.0;
        for t in 0..t_len {
            let problem = Problem::new(model, &targets[t], weights).unwrap();
            obj += problem.cost(&joints[t], &wrists[t]);
        }
        for t in 1..t_len {
            obj += smooth_weight * (&joints[t] - &joints[t - 1]).norm_squared();
        }
        obj
    };

    let mut prev_obj = objective(&joints);
    let mut converged = false;
    for _ in 0..100 {
        for t in 0..t_len {
            joints[t] = solve_frame_with_ties(
                model,
                &targets[t],
                weights,
                &wrists[t],
                &joints[t],
                if t > 0 { Some(&joints[t - 1]) } else { None },
                if t + 1 < t_len {
                    Some(&joints[t + 1])
                } else {
                    None
                },
                smooth_weight,
                settings,
            )?;
        }
        // Per-frame sweeps cannot move the whole trajectory in lockstep when
        // the ties are strong (any single frame moving alone pays the tie
        // cost), so alternate with a shared shift along that free direction.
        let shifted = solve_shared_shift(model, targets, weights, wrists, &joints, settings)?;
        if objective(&shifted) < objective(&joints) {
            joints = shifted;
        }
        let obj = objective(&joints);
        if (prev_obj - obj).abs() <= 1e-8 * (1.0 + prev_obj) {
            prev_obj = obj;
            converged = true;
            break;
        }
        prev_obj = obj;
    }
    Ok(ReducedFit {
        joints,
        objective: prev_obj,
        converged,
    })
}

/// Minimizes one frame's keypoint cost plus quadratic ties to its fixed
/// neighbors, by the same damped Gauss–Newton scheme as the single-frame
/// solver (joints only; the wrist is given).
#[allow(clippy::too_many_arguments)]
fn solve_frame_with_ties(
    model: &HandModel,
    targets: &[Vector3<f64>],
    weights: &[f64],
    wrist: &Pose,
    init_q: &DVector<f64>,
    prev: Option<&DVector<f64>>,
    next: Option<&DVector<f64>>,
    smooth_weight: f64,
    settings: &FitSettings,
) -> Result<DVector<f64>, RetargetError> {
    let problem = Problem::new(model, targets, weights)?;
    let k = model.dof();
    let sw = smooth_weight.sqrt();

    let cost = |q: &DVector<f64>| -> f64 {
        let mut c = problem.cost(q, wrist);
        if let Some(p) = prev {
            c += smooth_weight * (q - p).norm_squared();
        }
        if let Some(nx) = next {
            c += smooth_weight * (q - nx).norm_squared();
        }
        c
    };

    let mut q = model.clamp_to_limits(init_q);
    let mut current = cost(&q);
    let mut mu = settings.mu_init;

    for _ in 0..settings.max_iters {
        let (r_kp, jac_kp) = problem.linearize(&q, wrist, true);
        // Stack the smoothness residuals √sw·(q − neighbor) under the
        // keypoint rows; their Jacobian is √sw·I.
        let extra = prev.is_some() as usize + next.is_some() as usize;
        let rows = r_kp.len() + extra * k;
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, k);
        r.rows_mut(0, r_kp.len()).copy_from(&r_kp);
        jac.view_mut((0, 0), (r_kp.len(), k)).copy_from(&jac_kp);
        let mut row = r_kp.len();
        for neighbor in [prev, next].into_iter().flatten() {
            for i in 0..k {
                r[row + i] = sw * (q[i] - neighbor[i]);
                jac[(row + i, i)] = sw;
            }
            row += k;
        }

        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut stepped = false;
        loop {
            let mut damped = jtj.clone();
            for i in 0..k {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                if mu > 1e12 {
                    break;
                }
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let q_new = model.clamp_to_limits(&(&q + &delta));
            let c_new = cost(&q_new);
            if c_new <= current {
                let step = (&q_new - &q).norm();
                q = q_new;
                let improvement = current - c_new;
                current = c_new;
                mu = (mu / 10.0).max(1e-12);
                stepped = step >= settings.step_tol
                    && improvement >= 1e-14 * (1.0 + current);
                break;
            }
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
        if !stepped {
            break;
        }
    }
    Ok(q)
}

/// Damped Gauss–Newton over a single delta added to every frame at once.
/// Moving all frames together leaves the neighbor ties untouched, which is
/// exactly the direction the per-frame sweep cannot explore, so the sweep in
/// [`fit_targets_smoothed`] alternates with this step. Returns the shifted
/// (and per-frame clamped) trajectory; the caller decides whether to keep it.
fn solve_shared_shift(
    model: &HandModel,
    targets: &[Vec<Vector3<f64>>],
    weights: &[f64],
    wrists: &[Pose],
    joints: &[DVector<f64>],
    settings: &FitSettings,
) -> Result<Vec<DVector<f64>>, RetargetError> {
    let k = model.dof();
    let problems: Vec<Problem> = targets
        .iter()
        .map(|t| Problem::new(model, t, weights))
        .collect::<Result<_, _>>()?;
    let apply = |delta: &DVector<f64>| -> Vec<DVector<f64>> {
        joints
            .iter()
            .map(|q| model.clamp_to_limits(&(q + delta)))
            .collect()
    };
    let cost_of = |qs: &[DVector<f64>]| -> f64 {
        qs.iter()
            .zip(problems.iter())
            .zip(wrists)
            .map(|((q, p), w)| p.cost(q, w))
            .sum()
    };

    let mut delta = DVector::zeros(k);
    let mut qs = apply(&delta);
    let mut current = cost_of(&qs);
    let mut mu = settings.mu_init;

    for _ in 0..settings.max_iters {
        let mut jtj = DMatrix::zeros(k, k);
        let mut jtr = DVector::zeros(k);
        for (t, p) in problems.iter().enumerate() {
            let (r, jac) = p.linearize(&qs[t], &wrists[t], true);
            jtj += jac.transpose() * &jac;
            jtr += jac.transpose() * &r;
        }
        let mut stepped = false;
        loop {
            let mut damped = jtj.clone();
            for i in 0..k {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                if mu > 1e12 {
                    break;
                }
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let delta_new = &delta + &step;
            let qs_new = apply(&delta_new);
            let c_new = cost_of(&qs_new);
            if c_new <= current {
                let moved = step.norm();
                delta = delta_new;
                let improvement = current - c_new;
                current = c_new;
                qs = qs_new;
                mu = (mu / 10.0).max(1e-12);
                stepped =
                    moved >= settings.step_tol && improvement >= 1e-14 * (1.0 + current);
                break;
            }
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
        if !stepped {
            break;
        }
    }
    Ok(qs)
}

/// Solves and stores the per-frame joint track for every hand in the clip
/// (wrist locked to the reference), warm-starting each frame from the
/// previous solution. Episode initialization reads this cache.
pub fn build_joint_cache(
    clip: &mut ReferenceClip,
    models: &[HandModel],
    settings: &FitSettings,
) -> Result<(), RetargetError> {
    if models.len() != clip.hands.len() {
        return Err(RetargetError::DimensionMismatch {
            expected: clip.hands.len(),
            got: models.len(),
        });
    }
    for (hand, model) in clip.hands.iter_mut().zip(models) {
        if hand.side != model.side {
            return Err(RetargetError::Validation(format!(
                "hand track side {:?} does not match model {} side {:?}",
                hand.side, model.name, model.side
            )));
        }
        let mut joints = Vec::with_capacity(hand.wrist.len());
        let mut q = model.mid_range();
        for t in 0..hand.wrist.len() {
            let (targets, weights) = remap_correspondence(&hand.keypoints[t], model)?;
            let fit = retarget_frame(
                model,
                &targets,
                &weights,
                &q,
                &hand.wrist[t],
                true,
                settings,
            )?;
            q = fit.q.clone();
            joints.push(fit.q);
        }
        hand.joints = Some(joints);
    }
    Ok(())
}
