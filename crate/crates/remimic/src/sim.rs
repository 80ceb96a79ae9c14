//! Deterministic fixed-step rigid-body simulation: PD-controlled articulated
//! hands on wrench-driven floating wrists, convex free objects, penalty
//! contact with Coulomb friction, and per-fingertip contact-force readout.
//!
//! Modeling choices (all declared, none hidden):
//! - Each control step of length `dt` integrates several equal substeps with
//!   semi-implicit Euler; contact damping is applied implicitly and the
//!   stiffness is clamped per substep, which keeps the default constants
//!   stable for light desk-scale objects.
//! - Only fingertip spheres collide with objects. Contact forces act on the
//!   objects; hands are treated as strong position-controlled mechanisms that
//!   do not feel reaction forces.
//! - Gravity acts on objects only (scaled by `gravity_scale`); the hand is
//!   assumed to compensate its own weight.
//! - Object rotation is integrated by updating angular momentum, so free
//!   tumbling conserves momentum to rounding error.
//! - Articulated objects carry one passive revolute joint (damping plus limit
//!   stops); only the base shape collides.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{HandModel, Pose, Twist};
use crate::traj::ObjectShape;

pub const GRAVITY: f64 = 9.81;
/// Any state magnitude beyond this is treated as an integration blowup.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),
    #[error("parameter out of range: {0}")]
    RangeError(String),
}

/// Physical constants of one run. Appears verbatim as the `[physics]` table
/// of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// Control-step duration, s.
    pub dt: f64,
    /// Internal integration substeps per control step.
    pub substeps: u32,
    /// Gravity scale in [0,1] applied to g = (0,0,−9.81), objects only.
    pub gravity_scale: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Contact normal stiffness, N/m.
    pub contact_stiffness: f64,
    /// Contact normal damping, N·s/m.
    pub contact_damping: f64,
    /// Viscous damping on wrist linear velocity, N·s/m.
    pub wrist_linear_damping: f64,
    /// Viscous damping on wrist angular velocity, N·m·s.
    pub wrist_angular_damping: f64,
    /// Floating wrist mass, kg.
    pub wrist_mass: f64,
    /// Isotropic wrist rotational inertia, kg·m².
    pub wrist_inertia: f64,
    /// Reflected inertia of each hand joint, kg·m².
    pub joint_inertia: f64,
    /// Collision radius of fingertip spheres, m.
    pub fingertip_radius: f64,
    /// Per-component cap on the wrist force action, N.
    pub wrench_force_limit: f64,
    /// Per-component cap on the wrist torque action, N·m.
    pub wrench_torque_limit: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            dt: 1.0 / 60.0,
            substeps: 8,
            gravity_scale: 1.0,
            friction: 1.2,
            contact_stiffness: 5000.0,
            contact_damping: 50.0,
            wrist_linear_damping: 5.0,
            wrist_angular_damping: 0.05,
            wrist_mass: 0.5,
            wrist_inertia: 0.005,
            joint_inertia: 0.01,
            fingertip_radius: 0.012,
            wrench_force_limit: 50.0,
            wrench_torque_limit: 5.0,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let check = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(SimError::RangeError(format!("{name} out of range")))
            }
        };
        check("dt", self.dt > 0.0 && self.dt.is_finite())?;
        check("substeps", self.substeps >= 1)?;
        check(
            "gravity_scale",
            (0.0..=1.0).contains(&self.gravity_scale),
        )?;
        check("friction", self.friction >= 0.0)?;
        check("contact_stiffness", self.contact_stiffness > 0.0)?;
        check("contact_damping", self.contact_damping >= 0.0)?;
        check("wrist_linear_damping", self.wrist_linear_damping >= 0.0)?;
        check("wrist_angular_damping", self.wrist_angular_damping >= 0.0)?;
        check("wrist_mass", self.wrist_mass > 0.0)?;
        check("wrist_inertia", self.wrist_inertia > 0.0)?;
        check("joint_inertia", self.joint_inertia > 0.0)?;
        check("fingertip_radius", self.fingertip_radius > 0.0)?;
        check("wrench_force_limit", self.wrench_force_limit > 0.0)?;
        check("wrench_torque_limit", self.wrench_torque_limit > 0.0)?;
        Ok(())
    }
}

/// Pure helper advancing the curriculum-controlled constants.
pub fn set_physics_schedule(
    params: &PhysicsParams,
    gravity_scale: f64,
    friction: f64,
) -> Result<PhysicsParams, SimError> {
    if !(0.0..=1.0).contains(&gravity_scale) {
        return Err(SimError::RangeError(format!(
            "gravity_scale {gravity_scale} not in [0,1]"
        )));
    }
    if !(friction >= 0.0) {
        return Err(SimError::RangeError(format!("friction {friction} < 0")));
    }
    Ok(PhysicsParams {
        gravity_scale,
        friction,
        ..params.clone()
    })
}

// ---------------------------------------------------------------------------
// State / action types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HandState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub wrist: Pose,
    pub wrist_vel: Twist,
    /// Joint torques applied during the most recent control step, averaged
    /// over substeps (used by the power penalty).
    pub last_torque: DVector<f64>,
}

impl HandState {
    pub fn new(model: &HandModel, q: DVector<f64>, wrist: Pose) -> HandState {
        let k = model.dof();
        HandState {
            q: model.clamp_to_limits(&q),
            qd: DVector::zeros(k),
            wrist,
            wrist_vel: Twist::zero(),
            last_torque: DVector::zeros(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    /// Index into the shape table.
    pub shape: usize,
    pub pose: Pose,
    /// Twist of the center of mass (world frame).
    pub vel: Twist,
    pub articulation: Option<f64>,
    pub articulation_vel: Option<f64>,
}

impl ObjectState {
    pub fn at_rest(shape: usize, pose: Pose, articulated: bool) -> ObjectState {
        ObjectState {
            shape,
            pose,
            vel: Twist::zero(),
            articulation: articulated.then_some(0.0),
            articulation_vel: articulated.then_some(0.0),
        }
    }
}

/// Per-fingertip contact readout (summed over touching objects).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactReading {
    /// Normal force magnitude, N.
    pub force: f64,
    /// Friction force magnitude, N.
    pub tangential: f64,
    /// Outward surface normal of the strongest contact; zero when free.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub hands: Vec<HandState>,
    pub objects: Vec<ObjectState>,
    /// `contacts[hand][fingertip slot]`, fingertip slots in `fingertip_indices` order.
    pub contacts: Vec<Vec<ContactReading>>,
    pub time: f64,
}

impl SimState {
    pub fn new(models: &[HandModel], hands: Vec<HandState>, objects: Vec<ObjectState>) -> SimState {
        let contacts = models
            .iter()
            .map(|m| vec![ContactReading::default(); m.fingertip_indices().len()])
            .collect();
        SimState {
            hands,
            objects,
            contacts,
            time: 0.0,
        }
    }
}

/// One hand's action: joint PD targets plus a 6-DoF wrist wrench
/// (world-frame force then torque).
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub q_target: DVector<f64>,
    pub wrench: Twist,
}

impl Action {
    pub fn zero(dof: usize) -> Action {
        Action {
            q_target: DVector::zeros(dof),
            wrench: Twist::zero(),
        }
    }

    /// Flat width of an action for a K-DoF hand.
    pub fn dim(dof: usize) -> usize {
        dof + 6
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let k = self.q_target.len();
        let mut v = DVector::zeros(k + 6);
        v.rows_mut(0, k).copy_from(&self.q_target);
        for (i, x) in self.wrench.to_array().iter().enumerate() {
            v[k + i] = *x;
        }
        v
    }

    pub fn from_flat(dof: usize, flat: &DVector<f64>) -> Result<Action, SimError> {
        if flat.len() != dof + 6 {
            return Err(SimError::DimensionMismatch {
                expected: dof + 6,
                got: flat.len(),
            });
        }
        let q_target = flat.rows(0, dof).into_owned();
        let wrench = Twist::new(
            Vector3::new(flat[dof], flat[dof + 1], flat[dof + 2]),
            Vector3::new(flat[dof + 3], flat[dof + 4], flat[dof + 5]),
        );
        Ok(Action { q_target, wrench })
    }
}

// ---------------------------------------------------------------------------
// PD control and contact queries
// ---------------------------------------------------------------------------

/// τ_k = clamp(kp_k(q*_k − q_k) − kd_k·q̇_k, ±torque limit), with q* clamped
/// into the joint range first.
pub fn pd_torque(
    model: &HandModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_target: &DVector<f64>,
) -> Result<DVector<f64>, SimError> {
    let k = model.dof();
    for v in [q, qd, q_target] {
        if v.len() != k {
            return Err(SimError::DimensionMismatch {
                expected: k,
                got: v.len(),
            });
        }
    }
    let target = model.clamp_to_limits(q_target);
    Ok(DVector::from_iterator(
        k,
        model.joints.iter().enumerate().map(|(i, j)| {
            (j.kp * (target[i] - q[i]) - j.kd * qd[i]).clamp(-j.torque_limit, j.torque_limit)
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactQuery {
    /// Distance from sphere surface to object surface; negative = penetration.
    pub signed_gap: f64,
    /// Outward surface normal at the witness point (world frame). Points from
    /// the surface toward the sphere center whenever the center is outside.
    pub normal: Vector3<f64>,
    /// Closest point on the object surface (world frame).
    pub witness: Vector3<f64>,
}

/// Sphere-versus-shape proximity in world coordinates.
pub fn contact_query(
    shape: &ObjectShape,
    pose: &Pose,
    center: &Vector3<f64>,
    radius: f64,
) -> ContactQuery {
    let local = pose.inverse().transform_point(center);
    let sq = shape.surface_query(&local);
    ContactQuery {
        signed_gap: sq.distance - radius,
        normal: pose.rotation * sq.normal,
        witness: pose.transform_point(&sq.witness),
    }
}

/// World positions of all model keypoints for a hand state.
pub fn hand_keypoints(model: &HandModel, hand: &HandState) -> Vec<Vector3<f64>> {
    model
        .forward_kinematics(&hand.q, &hand.wrist)
        .expect("state dimensions match model")
}

/// World centers of the fingertip collision spheres.
pub fn fingertip_centers(model: &HandModel, hand: &HandState) -> Vec<Vector3<f64>> {
    let all = hand_keypoints(model, hand);
    model
        .fingertip_indices()
        .into_iter()
        .map(|i| all[i])
        .collect()
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

struct ObjDyn {
    mass: f64,
    com: Vector3<f64>,
    inertia: Matrix3<f64>,
}

/// Advance the world by one control step. Pure: identical inputs give
/// bit-identical outputs.
pub fn step(
    state: &SimState,
    actions: &[Action],
    models: &[HandModel],
    shapes: &[ObjectShape],
    params: &PhysicsParams,
) -> Result<SimState, SimError> {
    params.validate()?;
    if actions.len() != state.hands.len() || models.len() != state.hands.len() {
        return Err(SimError::DimensionMismatch {
            expected: state.hands.len(),
            got: actions.len().min(models.len()),
        });
    }
    let h = params.dt / f64::from(params.substeps);
    let mut next = state.clone();

    // Clamp actions once per control step.
    let mut targets = Vec::with_capacity(actions.len());
    let mut wrenches = Vec::with_capacity(actions.len());
    for (a, m) in actions.iter().zip(models.iter()) {
        if a.q_target.len() != m.dof() {
            return Err(SimError::DimensionMismatch {
                expected: m.dof(),
                got: a.q_target.len(),
            });
        }
        targets.push(m.clamp_to_limits(&a.q_target));
        let clamp_each = |v: Vector3<f64>, lim: f64| v.map(|x| x.clamp(-lim, lim));
        wrenches.push(Twist::new(
            clamp_each(a.wrench.linear, params.wrench_force_limit),
            clamp_each(a.wrench.angular, params.wrench_torque_limit),
        ));
    }

    let dyns: Vec<ObjDyn> = next
        .objects
        .iter()
        .map(|o| {
            let mp = shapes[o.shape].mass_properties();
            ObjDyn {
                mass: mp.mass,
                com: mp.com,
                inertia: mp.inertia,
            }
        })
        .collect();

    let mut prev_tips: Vec<Vec<Vector3<f64>>> = next
        .hands
        .iter()
        .zip(models.iter())
        .map(|(hand, model)| fingertip_centers(model, hand))
        .collect();
    let mut torque_accum: Vec<DVector<f64>> =
        models.iter().map(|m| DVector::zeros(m.dof())).collect();

    for _ in 0..params.substeps {
        substep(
            &mut next,
            &targets,
            &wrenches,
            models,
            shapes,
            params,
            h,
            &dyns,
            &mut prev_tips,
            &mut torque_accum,
        )?;
    }

    for (hand, acc) in next.hands.iter_mut().zip(torque_accum.into_iter()) {
        hand.last_torque = acc / f64::from(params.substeps);
    }
    next.time = state.time + params.dt;
    check_bounded(&next)?;
    Ok(next)
}

#[allow(clippy::too_many_arguments)]
fn substep(
    state: &mut SimState,
    targets: &[DVector<f64>],
    wrenches: &[Twist],
    models: &[HandModel],
    shapes: &[ObjectShape],
    params: &PhysicsParams,
    h: f64,
    dyns: &[ObjDyn],
    prev_tips: &mut Vec<Vec<Vector3<f64>>>,
    torque_accum: &mut [DVector<f64>],
) -> Result<(), SimError> {
    // 1. Hands: PD joints and wrench-driven wrist.
    for (hi, hand) in state.hands.iter_mut().enumerate() {
        let model = &models[hi];
        let tau = pd_torque(model, &hand.q, &hand.qd, &targets[hi])?;
        torque_accum[hi] += &tau;
        for k in 0..model.dof() {
            hand.qd[k] += tau[k] / params.joint_inertia * h;
            hand.q[k] += hand.qd[k] * h;
            let [lo, hi_lim] = model.joints[k].limits;
            if hand.q[k] < lo {
                hand.q[k] = lo;
                hand.qd[k] = hand.qd[k].max(0.0);
            } else if hand.q[k] > hi_lim {
                hand.q[k] = hi_lim;
                hand.qd[k] = hand.qd[k].min(0.0);
            }
        }

        let w = &wrenches[hi];
        let lin_acc =
            (w.linear - hand.wrist_vel.linear * params.wrist_linear_damping) / params.wrist_mass;
        let ang_acc = (w.angular - hand.wrist_vel.angular * params.wrist_angular_damping)
            / params.wrist_inertia;
        hand.wrist_vel.linear += lin_acc * h;
        hand.wrist_vel.angular += ang_acc * h;
        hand.wrist.translation += hand.wrist_vel.linear * h;
        hand.wrist.rotation = UnitQuaternion::from_scaled_axis(hand.wrist_vel.angular * h)
            * hand.wrist.rotation;
    }

    // 2. Fingertip positions and finite-difference velocities.
    let tips: Vec<Vec<Vector3<f64>>> = state
        .hands
        .iter()
        .zip(models.iter())
        .map(|(hand, model)| fingertip_centers(model, hand))
        .collect();
    let tip_vels: Vec<Vec<Vector3<f64>>> = tips
        .iter()
        .zip(prev_tips.iter())
        .map(|(now, before)| {
            now.iter()
                .zip(before.iter())
                .map(|(a, b)| (a - b) / h)
                .collect()
        })
        .collect();

    // 3. Accumulate forces on objects (about their centers of mass).
    let mut force = vec![Vector3::zeros(); state.objects.len()];
    let mut torque = vec![Vector3::zeros(); state.objects.len()];
    let com_world: Vec<Vector3<f64>> = state
        .objects
        .iter()
        .zip(dyns.iter())
        .map(|(o, d)| o.pose.transform_point(&d.com))
        .collect();

    for oi in 0..state.objects.len() {
        force[oi] += Vector3::new(0.0, 0.0, -GRAVITY) * (params.gravity_scale * dyns[oi].mass);
    }

    // Fingertip–object contacts (forces act on objects only). Gather the
    // penetrating pairs first: the friction cap is split across an object's
    // simultaneous contacts so joint stiction cannot overshoot the slip.
    struct TipContact {
        hi: usize,
        ti: usize,
        oi: usize,
        cq: ContactQuery,
        v_rel: Vector3<f64>,
    }
    let mut tip_contacts: Vec<TipContact> = Vec::new();
    for (hi, tip_set) in tips.iter().enumerate() {
        for (ti, center) in tip_set.iter().enumerate() {
            state.contacts[hi][ti] = ContactReading::default();
            for (oi, obj) in state.objects.iter().enumerate() {
                let cq = contact_query(&shapes[obj.shape], &obj.pose, center, params.fingertip_radius);
                if cq.signed_gap >= 0.0 {
                    continue;
                }
                let v_point = obj.vel.linear
                    + obj.vel.angular.cross(&(cq.witness - com_world[oi]));
                let v_rel = tip_vels[hi][ti] - v_point;
                tip_contacts.push(TipContact { hi, ti, oi, cq, v_rel });
            }
        }
    }
    let mut contacts_per_object = vec![0usize; state.objects.len()];
    for c in &tip_contacts {
        contacts_per_object[c.oi] += 1;
    }
    for c in &tip_contacts {
        let (n_force, t_force) = penalty_force(
            -c.cq.signed_gap,
            &c.cq.normal,
            &c.v_rel,
            dyns[c.oi].mass,
            h,
            contacts_per_object[c.oi] as f64,
            params,
        );
        let f_total = -c.cq.normal * n_force + t_force;
        force[c.oi] += f_total;
        torque[c.oi] += (c.cq.witness - com_world[c.oi]).cross(&f_total);
        let reading = &mut state.contacts[c.hi][c.ti];
        reading.force += n_force;
        reading.tangential += t_force.norm();
        if n_force >= reading.force - n_force {
            reading.normal = c.cq.normal;
        }
    }

    // Object–object contacts (sample points of each against the other).
    for ai in 0..state.objects.len() {
        for bi in 0..state.objects.len() {
            if ai == bi {
                continue;
            }
            let (sa, sb) = (state.objects[ai].shape, state.objects[bi].shape);
            let pa = state.objects[ai].pose;
            let pb = state.objects[bi].pose;
            let r_sample = shapes[sa].sample_radius();
            let m_eff = dyns[ai].mass * dyns[bi].mass / (dyns[ai].mass + dyns[bi].mass);
            let mut pair: Vec<(Vector3<f64>, ContactQuery, Vector3<f64>)> = Vec::new();
            for sample in shapes[sa].collision_samples() {
                let p = pa.transform_point(&sample);
                let cq = contact_query(&shapes[sb], &pb, &p, r_sample);
                if cq.signed_gap >= 0.0 {
                    continue;
                }
                let va = state.objects[ai].vel.linear
                    + state.objects[ai].vel.angular.cross(&(p - com_world[ai]));
                let vb = state.objects[bi].vel.linear
                    + state.objects[bi].vel.angular.cross(&(cq.witness - com_world[bi]));
                pair.push((p, cq, va - vb));
            }
            let shared = pair.len() as f64;
            for (p, cq, v_rel) in pair {
                let (n_force, t_force) =
                    penalty_force(-cq.signed_gap, &cq.normal, &v_rel, m_eff, h, shared, params);
                // `normal` points out of object B toward the sample: push A out,
                // push B back, drag both along the slip direction.
                let f_on_a = cq.normal * n_force - t_force;
                force[ai] += f_on_a;
                torque[ai] += (p - com_world[ai]).cross(&f_on_a);
                force[bi] -= f_on_a;
                torque[bi] += (cq.witness - com_world[bi]).cross(&-f_on_a);
            }
        }
    }

    // 4. Integrate objects.
    for (oi, obj) in state.objects.iter_mut().enumerate() {
        let d = &dyns[oi];
        obj.vel.linear += force[oi] / d.mass * h;
        let new_com = com_world[oi] + obj.vel.linear * h;

        // Angular momentum update keeps free tumbling exact.
        let rot = obj.pose.rotation.to_rotation_matrix();
        let inertia_world = rot.matrix() * d.inertia * rot.matrix().transpose();
        let mut ang_mom = inertia_world * obj.vel.angular;
        ang_mom += torque[oi] * h;
        let omega_mid = inertia_world
            .try_inverse()
            .ok_or_else(|| SimError::NumericalBlowup("singular object inertia".into()))?
            * ang_mom;
        let new_rot = UnitQuaternion::from_scaled_axis(omega_mid * h) * obj.pose.rotation;
        let rot2 = new_rot.to_rotation_matrix();
        let inertia_world2 = rot2.matrix() * d.inertia * rot2.matrix().transpose();
        obj.vel.angular = inertia_world2
            .try_inverse()
            .ok_or_else(|| SimError::NumericalBlowup("singular object inertia".into()))?
            * ang_mom;
        obj.pose = Pose::new(new_com - new_rot * d.com, new_rot);

        // Passive hinge.
        if let (Some(theta), Some(theta_dot), Some(hinge)) = (
            obj.articulation,
            obj.articulation_vel,
            shapes[obj.shape].hinge.as_ref(),
        ) {
            let mut td = theta_dot - hinge.damping / hinge.inertia * theta_dot * h;
            let mut th = theta + td * h;
            if th < hinge.limits[0] {
                th = hinge.limits[0];
                td = td.max(0.0);
            } else if th > hinge.limits[1] {
                th = hinge.limits[1];
                td = td.min(0.0);
            }
            obj.articulation = Some(th);
            obj.articulation_vel = Some(td);
        }
    }

    *prev_tips = tips;
    Ok(())
}

/// Spring-damper normal force plus capped Coulomb friction for one contact.
/// `penetration` > 0; `normal` points away from the surface toward the
/// penetrating sphere; `v_rel` is sphere-minus-surface velocity; `shared` is
/// how many contacts currently act on the same body, so the stiction cap is
/// split between them and their combined impulse cannot reverse the slip.
/// Returns (normal magnitude, world-frame friction force on the surface's
/// owner as seen dragging it along the slip direction).
fn penalty_force(
    penetration: f64,
    normal: &Vector3<f64>,
    v_rel: &Vector3<f64>,
    m_eff: f64,
    h: f64,
    shared: f64,
    params: &PhysicsParams,
) -> (f64, Vector3<f64>) {
    // Substep-implicit damping and a stability clamp on the stiffness keep
    // the update contractive even for very light objects.
    let k_eff = params.contact_stiffness.min(0.25 * m_eff / (h * h));
    let c_eff = params.contact_damping * m_eff / (m_eff + params.contact_damping * h);
    let approach = -v_rel.dot(normal);
    let n_force = k_eff * penetration + c_eff * approach.max(0.0);

    let v_tan = v_rel - normal * v_rel.dot(normal);
    let speed = v_tan.norm();
    if speed < 1e-12 || n_force <= 0.0 {
        return (n_force.max(0.0), Vector3::zeros());
    }
    let cap = m_eff * speed / (h * shared.max(1.0));
    let magnitude = (params.friction * n_force).min(cap);
    (n_force, v_tan / speed * magnitude)
}

fn check_bounded(state: &SimState) -> Result<(), SimError> {
    let mut worst = 0.0_f64;
    let mut scan = |v: f64| {
        if !v.is_finite() {
            worst = f64::INFINITY;
        } else {
            worst = worst.max(v.abs());
        }
    };
    for hand in &state.hands {
        hand.q.iter().for_each(|&v| scan(v));
        hand.qd.iter().for_each(|&v| scan(v));
        hand.wrist.translation.iter().for_each(|&v| scan(v));
        hand.wrist_vel.to_array().iter().for_each(|&v| scan(v));
    }
    for obj in &state.objects {
        obj.pose.translation.iter().for_each(|&v| scan(v));
        obj.vel.to_array().iter().for_each(|&v| scan(v));
        if let Some(a) = obj.articulation {
            scan(a);
        }
    }
    if worst > BLOWUP_LIMIT {
        return Err(SimError::NumericalBlowup(format!(
            "state magnitude {worst:.3e} exceeds {BLOWUP_LIMIT:.0e}"
        )));
    }
    Ok(())
}
