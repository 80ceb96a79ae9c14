//! Acceptance suite: ten end-to-end checks, one per shipped guarantee, each
//! printing a single PASS/FAIL line with its runtime and enforcing a wall
//! clock budget. Reference values are computed by independent naive
//! implementations written from the documented formulas, never by calling
//! back into the code under test.

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix4, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use remimic::eval::{
    classify_success, score_states, HandMetrics, ObjectMetrics, SUCCESS_E_FT_CM, SUCCESS_E_J_CM,
    SUCCESS_E_R_DEG, SUCCESS_E_T_CM,
};
use remimic::geom::{HandModel, HandSide, Keypoint, Link, Pose, Twist};
use remimic::policy::net::{append_grads_flat, Mlp};
use remimic::policy::PolicyParams;
use remimic::retarget::{fit_reduced_dof, fit_targets_smoothed, retarget_frame, FitSettings};
use remimic::reward::{
    r_contact, r_finger, r_object, r_smooth, r_wrist, total_imitation, total_residual,
    RewardWeights,
};
use remimic::rng::stream;
use remimic::sched::{CurriculumConfig, CurriculumState, Stage};
use remimic::sim::{
    self, set_physics_schedule, Action, HandState, ObjectState, PhysicsParams, SimState,
};
use remimic::toys;
use remimic::trainer::env::{rollout_clip, ClipRuntime, PolicyBundle};
use remimic::trainer::{train_imitation, train_residual, ObservationLayout, TrainRun};
use remimic::traj::{
    bps_encode, convex_hull, normalize_to_wrist, FrameView, ObjectShape, ObjectTrack, ObjectView,
    ReferenceClip, ShapeKind,
};

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

/// Runs one acceptance check, prints its verdict line, and re-raises any
/// failure so the test harness reports it too.
fn criterion<F: FnOnce()>(id: u32, name: &str, budget_s: f64, body: F) {
    let t0 = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    let dt = t0.elapsed().as_secs_f64();
    let verdict = if result.is_ok() && dt < budget_s {
        "PASS"
    } else {
        "FAIL"
    };
    println!("acceptance {id:02} {name}: {verdict} ({dt:.2} s of {budget_s:.0} s budget)");
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
    assert!(
        dt < budget_s,
        "check {id:02} exceeded its {budget_s:.0} s budget ({dt:.2} s)"
    );
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load_model(file: &str) -> HandModel {
    HandModel::load(&models_dir().join(file)).expect("shipped model loads")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("remimic-acceptance-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
    ))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ),
        random_unit_quat(rng),
    )
}

fn random_twist(rng: &mut ChaCha8Rng, scale: f64) -> Twist {
    Twist::new(
        Vector3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        ),
        Vector3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        ),
    )
}

/// A pose near `base`: translation offset and rotation angle of order `scale`.
fn perturbed_pose(base: &Pose, scale: f64, rng: &mut ChaCha8Rng) -> Pose {
    let dt = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ) * scale;
    let dr = UnitQuaternion::from_scaled_axis(
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ) * scale,
    );
    Pose::new(base.translation + dt, dr * base.rotation)
}

fn perturbed_twist(base: &Twist, scale: f64, rng: &mut ChaCha8Rng) -> Twist {
    Twist::new(
        base.linear
            + Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * scale,
        base.angular
            + Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * scale,
    )
}

/// Log-uniform error magnitude so the exponential terms are exercised across
/// their whole useful range instead of saturating at 0 or 1.
fn error_scale(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-4.0..-0.3))
}

// ---------------------------------------------------------------------------
// Naive reference formulas (independent of the library implementations)
// ---------------------------------------------------------------------------

mod naive {
    use nalgebra::{UnitQuaternion, Vector3};
    use remimic::geom::{Pose, Twist};
    use remimic::reward::RewardWeights;

    /// Geodesic angle between two rotations via an explicit Hamilton product
    /// with the conjugate: θ = 2·atan2(‖vec(q_a q_b*)‖, |w(q_a q_b*)|).
    pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
        let (aw, ax, ay, az) = (a.w, a.i, a.j, a.k);
        // Conjugate of b.
        let (bw, bx, by, bz) = (b.w, -b.i, -b.j, -b.k);
        let w = aw * bw - ax * bx - ay * by - az * bz;
        let x = aw * bx + ax * bw + ay * bz - az * by;
        let y = aw * by - ax * bz + ay * bw + az * bx;
        let z = aw * bz + ax * by - ay * bx + az * bw;
        let vec_norm = (x * x + y * y + z * z).sqrt();
        2.0 * vec_norm.atan2(w.abs())
    }

    pub fn wrist(
        sim_pose: &Pose,
        sim_vel: &Twist,
        ref_pose: &Pose,
        ref_vel: &Twist,
        w: &RewardWeights,
    ) -> f64 {
        let theta = rotation_angle(&sim_pose.rotation, &ref_pose.rotation);
        let e = w.lambda_wrist_tsl * (sim_pose.translation - ref_pose.translation).norm_squared()
            + w.lambda_wrist_rot * theta * theta
            + w.lambda_wrist_vel * (sim_vel.linear - ref_vel.linear).norm_squared()
            + w.lambda_wrist_ang * (sim_vel.angular - ref_vel.angular).norm_squared();
        (-e).exp()
    }

    pub fn finger(
        sim: &[Vector3<f64>],
        target: &[Vector3<f64>],
        weights: &[f64],
        decays: &[f64],
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..sim.len() {
            let d2 = (sim[i] - target[i]).norm_squared();
            total += weights[i] * (-decays[i] * d2).exp();
        }
        total
    }

    pub fn smooth(qd: &[f64], tau: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..qd.len() {
            total -= (qd[i] * tau[i]).abs();
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    pub fn object(
        sim_pose: &Pose,
        sim_vel: &Twist,
        sim_angle: Option<(f64, f64)>,
        ref_pose: &Pose,
        ref_vel: &Twist,
        ref_angle: Option<(f64, f64)>,
        w: &RewardWeights,
    ) -> f64 {
        let theta = rotation_angle(&sim_pose.rotation, &ref_pose.rotation);
        let mut e = w.lambda_object_tsl
            * (sim_pose.translation - ref_pose.translation).norm_squared()
            + w.lambda_object_rot * theta * theta
            + w.lambda_object_vel * (sim_vel.linear - ref_vel.linear).norm_squared()
            + w.lambda_object_ang * (sim_vel.angular - ref_vel.angular).norm_squared();
        if let (Some((sa, sv)), Some((ra, rv))) = (sim_angle, ref_angle) {
            e += w.lambda_object_angle * (sa - ra) * (sa - ra);
            e += w.lambda_object_angle_vel * (sv - rv) * (sv - rv);
        }
        (-e).exp()
    }

    pub fn contact(forces: &[f64], ref_dist: &[f64], xi_c: f64, w_c: f64, lambda_c: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..forces.len() {
            if ref_dist[i] < xi_c {
                s += forces[i];
            }
        }
        if s > 0.0 {
            w_c * (-lambda_c / s).exp()
        } else {
            0.0
        }
    }

    pub fn total_imitation(rw: f64, rf: f64, rs: f64, w: &RewardWeights) -> f64 {
        w.w_wrist * rw + w.w_finger * rf + w.w_smooth * rs
    }

    pub fn total_residual(ri: f64, ro: f64, rc: f64, w: &RewardWeights) -> f64 {
        ri + w.w_object * ro + w.w_contact * rc
    }
}

// ---------------------------------------------------------------------------
// 01 — reward terms against the naive reference
// ---------------------------------------------------------------------------

#[test]
fn a01_reward_terms_match_the_naive_reference() {
    criterion(1, "reward-term equivalence", 10.0, || {
        let model = load_model("inspire_right.json");
        let weights: Vec<f64> = model.keypoints.iter().map(|k| k.weight).collect();
        let decays: Vec<f64> = model.keypoints.iter().map(|k| k.decay).collect();
        let f = model.keypoint_count();
        let mut rng = stream(0xACC1, "reward-equivalence", 0);
        let tol = 1e-12;

        for iter in 0..10_000 {
            // Randomized weighting so the equivalence is not tied to defaults.
            let mut w = RewardWeights::default();
            w.w_wrist = rng.gen_range(0.0..3.0);
            w.w_finger = rng.gen_range(0.0..3.0);
            w.w_smooth = rng.gen_range(0.0..0.2);
            w.w_object = rng.gen_range(0.0..3.0);
            w.w_contact = rng.gen_range(0.0..2.0);
            w.w_c = rng.gen_range(0.0..2.0);
            w.lambda_c = rng.gen_range(0.05..5.0);
            for lam in [
                &mut w.lambda_wrist_tsl,
                &mut w.lambda_wrist_rot,
                &mut w.lambda_wrist_vel,
                &mut w.lambda_wrist_ang,
                &mut w.lambda_object_tsl,
                &mut w.lambda_object_rot,
                &mut w.lambda_object_vel,
                &mut w.lambda_object_ang,
                &mut w.lambda_object_angle,
                &mut w.lambda_object_angle_vel,
            ] {
                *lam = rng.gen_range(0.05..120.0);
            }

            let scale = error_scale(&mut rng);
            let far = iter % 10 == 0; // every tenth state: unrelated poses

            // Wrist term.
            let ref_pose = random_pose(&mut rng);
            let ref_vel = random_twist(&mut rng, 2.0);
            let (sim_pose, sim_vel) = if far {
                (random_pose(&mut rng), random_twist(&mut rng, 2.0))
            } else {
                (
                    perturbed_pose(&ref_pose, scale, &mut rng),
                    perturbed_twist(&ref_vel, scale, &mut rng),
                )
            };
            let got = r_wrist(&sim_pose, &sim_vel, &ref_pose, &ref_vel, &w);
            let want = naive::wrist(&sim_pose, &sim_vel, &ref_pose, &ref_vel, &w);
            assert!((got - want).abs() < tol, "wrist {got} vs {want}");

            // Finger term over the full keypoint table.
            let ref_kp: Vec<Vector3<f64>> = (0..f)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                    )
                })
                .collect();
            let sim_kp: Vec<Vector3<f64>> = ref_kp
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ) * scale
                })
                .collect();
            let got = r_finger(&sim_kp, &ref_kp, &model).unwrap();
            let want = naive::finger(&sim_kp, &ref_kp, &weights, &decays);
            assert!((got - want).abs() < tol, "finger {got} vs {want}");

            // Power penalty.
            let k = model.dof();
            let qd: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let tau: Vec<f64> = (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let got = r_smooth(
                &DVector::from_vec(qd.clone()),
                &DVector::from_vec(tau.clone()),
            )
            .unwrap();
            let want = naive::smooth(&qd, &tau);
            assert!((got - want).abs() < tol, "smooth {got} vs {want}");

            // Object term, rigid and articulated alike.
            let obj_ref = random_pose(&mut rng);
            let obj_ref_vel = random_twist(&mut rng, 2.0);
            let obj_sim = perturbed_pose(&obj_ref, scale, &mut rng);
            let obj_sim_vel = perturbed_twist(&obj_ref_vel, scale, &mut rng);
            let articulated = rng.gen_bool(0.5);
            let (sa, ra) = if articulated {
                let base = rng.gen_range(-1.0..1.0);
                let basev = rng.gen_range(-2.0..2.0);
                (
                    Some((
                        base + rng.gen_range(-1.0..1.0) * scale,
                        basev + rng.gen_range(-1.0..1.0) * scale,
                    )),
                    Some((base, basev)),
                )
            } else {
                (None, None)
            };
            let got = r_object(&obj_sim, &obj_sim_vel, sa, &obj_ref, &obj_ref_vel, ra, &w).unwrap();
            let want = naive::object(&obj_sim, &obj_sim_vel, sa, &obj_ref, &obj_ref_vel, ra, &w);
            assert!((got - want).abs() < tol, "object {got} vs {want}");

            // Contact bonus with distances straddling the threshold.
            let xi_c = rng.gen_range(0.005..0.04);
            let tips = 5;
            let forces: Vec<f64> = (0..tips)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        0.0
                    } else {
                        rng.gen_range(0.0..8.0)
                    }
                })
                .collect();
            let dists: Vec<f64> = (0..tips).map(|_| rng.gen_range(0.0..0.05)).collect();
            let got = r_contact(&forces, &dists, xi_c, w.w_c, w.lambda_c);
            let want = naive::contact(&forces, &dists, xi_c, w.w_c, w.lambda_c);
            assert!((got - want).abs() < tol, "contact {got} vs {want}");

            // Weighted totals.
            let (rw_s, rf_s, rs_s, ro_s, rc_s) = (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..12.0),
                -rng.gen_range(0.0..20.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            );
            let ti = total_imitation(rw_s, rf_s, rs_s, &w);
            assert!((ti - naive::total_imitation(rw_s, rf_s, rs_s, &w)).abs() < tol);
            let tr = total_residual(ti, ro_s, rc_s, &w);
            assert!((tr - naive::total_residual(ti, ro_s, rc_s, &w)).abs() < tol);
        }
    });
}

// ---------------------------------------------------------------------------
// 02 — success rule on the boundary grid
// ---------------------------------------------------------------------------

#[test]
fn a02_success_rule_holds_on_the_boundary_grid() {
    criterion(2, "success-rule boundary grid", 1.0, || {
        let delta = 1e-9;
        // Value just under the threshold passes; the threshold itself must
        // fail because every comparison is strict.
        let pick = |threshold: f64, pass: bool| {
            if pass {
                threshold - delta
            } else {
                threshold
            }
        };

        // Two tracked hands and one object give six boundary dimensions;
        // every corner of that grid is 64 cases.
        for case in 0..64u32 {
            let bit = |i: u32| case & (1 << i) != 0;
            let hands = [
                HandMetrics {
                    e_j_cm: pick(SUCCESS_E_J_CM, bit(0)),
                    e_ft_cm: pick(SUCCESS_E_FT_CM, bit(1)),
                },
                HandMetrics {
                    e_j_cm: pick(SUCCESS_E_J_CM, bit(2)),
                    e_ft_cm: pick(SUCCESS_E_FT_CM, bit(3)),
                },
            ];
            let object = ObjectMetrics {
                e_r_deg: pick(SUCCESS_E_R_DEG, bit(4)),
                e_t_cm: pick(SUCCESS_E_T_CM, bit(5)),
            };
            let object_ok = bit(4) && bit(5);
            let expect_hands = [object_ok && bit(0) && bit(1), object_ok && bit(2) && bit(3)];
            let expect_overall = expect_hands[0] && expect_hands[1];

            let (got_hands, got_overall) = classify_success(&hands, Some(&object));
            assert_eq!(got_hands, expect_hands.to_vec(), "case {case:06b}");
            assert_eq!(got_overall, expect_overall, "case {case:06b}");
        }

        // Without an object only the hand thresholds matter.
        let good = HandMetrics {
            e_j_cm: 0.0,
            e_ft_cm: 0.0,
        };
        let bad = HandMetrics {
            e_j_cm: SUCCESS_E_J_CM,
            e_ft_cm: 0.0,
        };
        assert_eq!(classify_success(&[good], None), (vec![true], true));
        assert_eq!(classify_success(&[good, bad], None), (vec![true, false], false));
        assert_eq!(classify_success(&[], None).1, false, "no hands, no success");
    });
}

// ---------------------------------------------------------------------------
// 03 — kinematics and gradients against finite differences
// ---------------------------------------------------------------------------

/// Forward kinematics recomputed independently with chained homogeneous
/// matrices.
fn matrix_chain_fk(model: &HandModel, q: &DVector<f64>, wrist: &Pose) -> Vec<Vector3<f64>> {
    let homogeneous = |p: &Pose| -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(p.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    };
    let mut joint_of = vec![None; model.links.len()];
    for (j, joint) in model.joints.iter().enumerate() {
        joint_of[joint.child_link] = Some(j);
    }
    let mut mats: Vec<Matrix4<f64>> = Vec::with_capacity(model.links.len());
    for (i, link) in model.links.iter().enumerate() {
        let parent = match link.parent {
            Some(p) => mats[p],
            None => homogeneous(wrist),
        };
        let mut m = parent * homogeneous(&link.local);
        if let Some(j) = joint_of[i] {
            let axis = nalgebra::Unit::new_normalize(model.joints[j].axis_vec());
            let rot = Pose::new(
                Vector3::zeros(),
                UnitQuaternion::from_axis_angle(&axis, q[j]),
            );
            m *= homogeneous(&rot);
        }
        mats.push(m);
    }
    model
        .keypoints
        .iter()
        .map(|kp| {
            let o = kp.offset_vec();
            let h = mats[kp.link] * Vector4::new(o.x, o.y, o.z, 1.0);
            Vector3::new(h.x, h.y, h.z)
        })
        .collect()
}

fn random_joint_vector(model: &HandModel, spread: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let (lo, hi) = model.limit_vectors();
    DVector::from_fn(model.dof(), |i, _| {
        let mid = 0.5 * (lo[i] + hi[i]);
        let half = 0.5 * (hi[i] - lo[i]);
        mid + rng.gen_range(-1.0..1.0) * spread * half
    })
}

#[test]
fn a03_kinematics_and_gradients_match_finite_differences() {
    criterion(3, "kinematics and gradients", 60.0, || {
        let models = vec![
            toys::planar_finger_model(),
            load_model("inspire_right.json"),
            load_model("shadow_right.json"),
            load_model("arti_mano_right.json"),
            load_model("allegro_right.json"),
        ];
        let mut rng = stream(0xACC3, "kinematics", 0);

        // Forward kinematics against the homogeneous-matrix chain.
        for model in &models {
            for _ in 0..100 {
                let q = random_joint_vector(model, 0.95, &mut rng);
                let wrist = random_pose(&mut rng);
                let fast = model.forward_kinematics(&q, &wrist).unwrap();
                let slow = matrix_chain_fk(model, &q, &wrist);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-9, "fk mismatch {:?} vs {:?}", a, b);
                }
            }
        }

        // Keypoint Jacobians against central differences over joints and the
        // body-frame wrist twist.
        let eps = 1e-6;
        for model in &models {
            let k = model.dof();
            let f = model.keypoint_count();
            for _ in 0..25 {
                let q = random_joint_vector(model, 0.8, &mut rng);
                let wrist = random_pose(&mut rng);
                let jac = model.keypoint_jacobian(&q, &wrist).unwrap();

                let stack = |points: Vec<Vector3<f64>>| -> DVector<f64> {
                    DVector::from_fn(3 * f, |i, _| points[i / 3][i % 3])
                };
                let mut fd = DMatrix::zeros(3 * f, k + 6);
                for j in 0..k {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[j] += eps;
                    qm[j] -= eps;
                    let col = (stack(model.forward_kinematics(&qp, &wrist).unwrap())
                        - stack(model.forward_kinematics(&qm, &wrist).unwrap()))
                        / (2.0 * eps);
                    fd.set_column(j, &col);
                }
                for i in 0..6 {
                    let mut xi = [0.0; 6];
                    let twist_pose = |xi: &[f64; 6]| {
                        Pose::new(
                            Vector3::new(xi[0], xi[1], xi[2]),
                            UnitQuaternion::from_scaled_axis(Vector3::new(xi[3], xi[4], xi[5])),
                        )
                    };
                    xi[i] = eps;
                    let wp = wrist.compose(&twist_pose(&xi));
                    xi[i] = -eps;
                    let wm = wrist.compose(&twist_pose(&xi));
                    let col = (stack(model.forward_kinematics(&q, &wp).unwrap())
                        - stack(model.forward_kinematics(&q, &wm).unwrap()))
                        / (2.0 * eps);
                    fd.set_column(k + i, &col);
                }
                let rel = (&fd - &jac).norm() / jac.norm().max(1e-12);
                assert!(rel < 1e-4, "jacobian rel err {rel} on {}", model.name);
            }
        }

        // Network parameter gradients against central differences on a
        // scalar read-out of the output layer.
        for i in 0..100u64 {
            let mut net_rng = stream(0xACC3, "net-grad", i);
            let sizes = [
                net_rng.gen_range(3..8),
                net_rng.gen_range(6..12),
                net_rng.gen_range(6..12),
                net_rng.gen_range(2..5),
            ];
            let net = Mlp::new(&sizes, &mut net_rng);
            let x = DMatrix::from_fn(sizes[0], 1, |_, _| net_rng.gen_range(-1.5..1.5));
            let c = DMatrix::from_fn(sizes[3], 1, |_, _| net_rng.gen_range(-1.0..1.0));
            let loss = |n: &Mlp| (n.forward(&x).component_mul(&c)).sum();

            let cache = net.forward_cached(&x);
            let grads = net.backward(&cache, &c);
            let mut analytic = Vec::new();
            append_grads_flat(&grads, &mut analytic);

            let mut flat = Vec::new();
            net.append_flat(&mut flat);
            let mut fd = vec![0.0; flat.len()];
            let eps = 1e-6;
            for p in 0..flat.len() {
                let mut probe = net.clone();
                let mut plus = flat.clone();
                plus[p] += eps;
                probe.read_flat(&mut plus.into_iter());
                let up = loss(&probe);
                let mut minus = flat.clone();
                minus[p] -= eps;
                probe.read_flat(&mut minus.into_iter());
                let down = loss(&probe);
                fd[p] = (up - down) / (2.0 * eps);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = diff / norm.max(1e-12);
            assert!(rel < 1e-3, "network grad rel err {rel}");
        }
    });
}

// ---------------------------------------------------------------------------
// 04 — physics invariants
// ---------------------------------------------------------------------------

/// A one-link, zero-joint hand whose single fingertip sphere sits at the
/// wrist origin; handy for driving a controlled contact.
fn probe_hand() -> HandModel {
    let model = HandModel {
        name: "probe".into(),
        side: HandSide::Right,
        links: vec![Link {
            name: "root".into(),
            parent: None,
            local: Pose::identity(),
        }],
        joints: vec![],
        keypoints: vec![Keypoint {
            link: 0,
            offset: [0.0, 0.0, 0.0],
            weight: 1.0,
            decay: 50.0,
            fingertip: true,
            human_index: 4,
        }],
    };
    model.validate().unwrap();
    model
}

/// Presses the probe fingertip down onto a floating box while dragging it
/// sideways; returns the visited states.
fn contact_slide_states(params: &PhysicsParams, steps: usize) -> Vec<SimState> {
    let model = probe_hand();
    let shapes = vec![ObjectShape {
        kind: ShapeKind::Box {
            half_extents: [0.05, 0.05, 0.05],
        },
        density: 200.0,
        mass: Some(5.0),
        hinge: None,
    }];
    let start = Pose::from_translation(Vector3::new(
        0.0,
        0.0,
        0.05 + params.fingertip_radius - 0.002,
    ));
    let hand = HandState::new(&model, DVector::zeros(0), start);
    let object = ObjectState::at_rest(0, Pose::identity(), false);
    let mut state = SimState::new(std::slice::from_ref(&model), vec![hand], vec![object]);
    let action = Action {
        q_target: DVector::zeros(0),
        wrench: Twist::new(Vector3::new(0.8, 0.0, -1.0), Vector3::zeros()),
    };
    let mut out = vec![state.clone()];
    for _ in 0..steps {
        state = sim::step(
            &state,
            std::slice::from_ref(&action),
            std::slice::from_ref(&model),
            &shapes,
            params,
        )
        .unwrap();
        out.push(state.clone());
    }
    out
}

#[test]
fn a04_physics_invariants_hold() {
    criterion(4, "physics invariants", 30.0, || {
        let zero_g = set_physics_schedule(&PhysicsParams::default(), 0.0, 1.2).unwrap();

        // Determinism: bit-identical replay of a contact-rich trajectory.
        let a = contact_slide_states(&zero_g, 120);
        let b = contact_slide_states(&zero_g, 120);
        assert_eq!(a, b, "same inputs must give bit-identical trajectories");

        // Momentum conservation for a tumbling box in free flight.
        let shapes = vec![ObjectShape {
            kind: ShapeKind::Box {
                half_extents: [0.03, 0.05, 0.08],
            },
            density: 400.0,
            mass: None,
            hinge: None,
        }];
        let props = shapes[0].mass_properties();
        let mut obj = ObjectState::at_rest(0, random_pose(&mut stream(0xACC4, "tumble", 0)), false);
        obj.vel = Twist::new(Vector3::new(0.3, 0.2, -0.1), Vector3::new(3.0, -2.0, 1.0));
        let mut state = SimState::new(&[], vec![], vec![obj]);
        let momentum = |s: &SimState| {
            let o = &s.objects[0];
            let rot = o.pose.rotation.to_rotation_matrix();
            let inertia_world = rot.matrix() * props.inertia * rot.matrix().transpose();
            (o.vel.linear * props.mass, inertia_world * o.vel.angular)
        };
        let (mut p_prev, mut l_prev) = momentum(&state);
        for _ in 0..600 {
            state = sim::step(&state, &[], &[], &shapes, &zero_g).unwrap();
            let (p, l) = momentum(&state);
            assert!((p - p_prev).norm() < 1e-9, "linear momentum drifted");
            assert!((l - l_prev).norm() < 1e-9, "angular momentum drifted");
            p_prev = p;
            l_prev = l;
        }

        // Coulomb cone: friction never exceeds μ times the normal force, at
        // any contact step of the sliding scene nor in randomized one-step
        // probes.
        let slide = contact_slide_states(&zero_g, 120);
        let mut contact_steps = 0;
        for s in &slide {
            let reading = s.contacts[0][0];
            if reading.force > 0.0 {
                contact_steps += 1;
                assert!(
                    reading.tangential <= zero_g.friction * reading.force * (1.0 + 1e-9) + 1e-12,
                    "cone violated: |t|={} μN={}",
                    reading.tangential,
                    zero_g.friction * reading.force
                );
            }
        }
        assert!(contact_steps >= 30, "only {contact_steps} contact steps");

        let model = probe_hand();
        let box_shape = vec![ObjectShape {
            kind: ShapeKind::Box {
                half_extents: [0.05, 0.05, 0.05],
            },
            density: 200.0,
            mass: Some(2.0),
            hinge: None,
        }];
        let mut rng = stream(0xACC4, "cone-probe", 0);
        let mut probed = 0;
        for _ in 0..200 {
            let friction = rng.gen_range(0.2..2.5);
            let params = set_physics_schedule(&PhysicsParams::default(), 0.0, friction).unwrap();
            let pen = rng.gen_range(0.0005..0.004);
            let start = Pose::from_translation(Vector3::new(
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.03..0.03),
                0.05 + params.fingertip_radius - pen,
            ));
            let mut hand = HandState::new(&model, DVector::zeros(0), start);
            hand.wrist_vel = Twist::new(
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.2..0.0),
                ),
                Vector3::zeros(),
            );
            let mut object = ObjectState::at_rest(0, Pose::identity(), false);
            object.vel = random_twist(&mut rng, 0.2);
            let state = SimState::new(std::slice::from_ref(&model), vec![hand], vec![object]);
            let next = sim::step(
                &state,
                &[Action::zero(0)],
                std::slice::from_ref(&model),
                &box_shape,
                &params,
            )
            .unwrap();
            let reading = next.contacts[0][0];
            if reading.force > 0.0 {
                probed += 1;
                assert!(
                    reading.tangential <= friction * reading.force * (1.0 + 1e-9) + 1e-12,
                    "cone violated in probe: |t|={} μN={}",
                    reading.tangential,
                    friction * reading.force
                );
            }
        }
        assert!(probed >= 100, "only {probed} probes made contact");

        // Gravity schedule consequence: at zero gravity a resting object
        // remains exactly where it was; at full gravity it falls.
        let rest = ObjectState::at_rest(0, Pose::identity(), false);
        let mut state = SimState::new(&[], vec![], vec![rest]);
        let z0 = state.objects[0].pose.translation.z;
        for _ in 0..600 {
            state = sim::step(&state, &[], &[], &shapes, &zero_g).unwrap();
            assert!(
                (state.objects[0].pose.translation.z - z0).abs() < 1e-12,
                "vertical drift at zero gravity"
            );
        }
        assert!((state.objects[0].pose.translation - Vector3::zeros()).norm() < 1e-12);

        let full_g = set_physics_schedule(&PhysicsParams::default(), 1.0, 1.2).unwrap();
        let mut falling = SimState::new(&[], vec![], vec![ObjectState::at_rest(0, Pose::identity(), false)]);
        for _ in 0..60 {
            falling = sim::step(&falling, &[], &[], &shapes, &full_g).unwrap();
        }
        assert!(
            falling.objects[0].pose.translation.z < -0.5,
            "object should fall under full gravity"
        );
    });
}

// ---------------------------------------------------------------------------
// 05 — zeroed residual head composes to the identity
// ---------------------------------------------------------------------------

#[test]
fn a05_zeroed_residual_rollouts_match_the_base_policy() {
    criterion(5, "residual composition identity", 30.0, || {
        let physics = PhysicsParams::default();
        let fit = FitSettings::default();
        let finger = toys::planar_finger_model();
        let finger_rt = ClipRuntime::prepare(
            toys::finger_wave_clip(&finger, 60, 60.0),
            std::slice::from_ref(&finger),
            "wave",
            &fit,
            physics.fingertip_radius,
        )
        .unwrap();
        let (grip_models, grip_clip) = toys::gripper_setup();
        let grip_rt =
            ClipRuntime::prepare(grip_clip, &grip_models, "lift", &fit, physics.fingertip_radius)
                .unwrap();

        for (idx, rt) in [finger_rt, grip_rt].iter().enumerate() {
            let objects = rt.clip.objects.len();
            let articulated = rt.clip.objects.iter().any(|o| o.articulation.is_some());
            let lookahead = 2;
            let base_layout =
                ObservationLayout::build(Stage::Imitation, &rt.models[0], objects, articulated, lookahead);
            let res_layout =
                ObservationLayout::build(Stage::Residual, &rt.models[0], objects, articulated, lookahead);
            let act = base_layout.action_dim();

            let mut rng = stream(0xACC5, "policies", idx as u64);
            let base = PolicyParams::new(base_layout.total, act, &[24, 24], -1.0, &mut rng);
            let head = PolicyParams::residual(res_layout.total, act, &[24, 24], &mut rng);
            let last = head.actor.layers.last().unwrap();
            assert_eq!(last.w.amax(), 0.0, "head starts with a zeroed mean");
            assert_eq!(last.b.amax(), 0.0);

            let solo = PolicyBundle {
                stage: Stage::Imitation,
                layout: &base_layout,
                params: &base,
                base_layout: None,
                base: None,
                warmup: 1.0,
            };
            let stacked = PolicyBundle {
                stage: Stage::Residual,
                layout: &res_layout,
                params: &head,
                base_layout: Some(&base_layout),
                base: Some(&base),
                warmup: 1.0,
            };
            let mut rng_a = stream(0xACC5, "rollout", 2 * idx as u64);
            let mut rng_b = stream(0xACC5, "rollout", 2 * idx as u64);
            let ra = rollout_clip(rt, &solo, &physics, true, &mut rng_a).unwrap();
            let rb = rollout_clip(rt, &stacked, &physics, true, &mut rng_b).unwrap();
            assert!(!ra.blowup && !rb.blowup);
            assert_eq!(ra.states.len(), rb.states.len());
            assert_eq!(
                ra.states, rb.states,
                "zeroed correction must reproduce the base rollout bit for bit ({})",
                rt.name
            );

            // Determinism of the shared-seed comparison itself.
            let mut rng_c = stream(0xACC5, "rollout", 2 * idx as u64);
            let rc = rollout_clip(rt, &solo, &physics, true, &mut rng_c).unwrap();
            assert_eq!(ra.states, rc.states);
        }
    });
}

// ---------------------------------------------------------------------------
// 06 — imitation stage learns the planar-finger toy
// ---------------------------------------------------------------------------

/// Deterministic tracking error of a trained imitation policy on its clip.
fn imitation_eval_e_ft(outcome: &remimic::trainer::TrainOutcome, rt: &ClipRuntime, lookahead: usize) -> f64 {
    let objects = rt.clip.objects.len();
    let articulated = rt.clip.objects.iter().any(|o| o.articulation.is_some());
    let layout =
        ObservationLayout::build(Stage::Imitation, &rt.models[0], objects, articulated, lookahead);
    let bundle = PolicyBundle {
        stage: Stage::Imitation,
        layout: &layout,
        params: &outcome.params,
        base_layout: None,
        base: None,
        warmup: 1.0,
    };
    let mut rng = stream(0, "eval", 0);
    let ro = rollout_clip(rt, &bundle, &PhysicsParams::default(), true, &mut rng).unwrap();
    let report = score_states(&ro.states, rt, ro.blowup).unwrap();
    report.hands[0].e_ft_cm
}

#[test]
fn a06_imitation_training_converges_on_the_planar_finger() {
    criterion(6, "imitation toy convergence", 900.0, || {
        let model = toys::planar_finger_model();
        let dir = scratch_dir("finger");
        let mut passed = 0;
        let mut errors = Vec::new();
        for seed in 1..=5u64 {
            let cfg = toys::finger_config(seed);
            let clip = toys::finger_wave_clip(&model, 120, 60.0);
            let rt = ClipRuntime::prepare(
                clip,
                std::slice::from_ref(&model),
                "wave",
                &FitSettings::default(),
                cfg.physics.fingertip_radius,
            )
            .unwrap();
            let lookahead = cfg.observation.lookahead;
            let run = TrainRun {
                config: cfg,
                clips: vec![rt],
                out_dir: dir.join(format!("seed_{seed}")),
                label: format!("finger_{seed}"),
            };
            let out = train_imitation(&run).unwrap();
            let e_ft = imitation_eval_e_ft(&out, &run.clips[0], lookahead);
            errors.push(e_ft);
            if e_ft < 1.0 {
                passed += 1;
            }
        }
        println!("  fingertip errors by seed (cm): {errors:.3?}");
        assert!(
            passed >= 4,
            "only {passed}/5 seeds reached e_ft < 1 cm: {errors:?}"
        );
        std::fs::remove_dir_all(&dir).ok();
    });
}

// ---------------------------------------------------------------------------
// 07 — residual stage lifts the box
// ---------------------------------------------------------------------------

#[test]
fn a07_residual_training_lifts_the_gripper_box() {
    criterion(7, "residual toy manipulation", 1800.0, || {
        let dir = scratch_dir("gripper");
        let mut seed_passes = 0;
        let mut rates = Vec::new();
        for seed in 1..=5u64 {
            let (models, clip) = toys::gripper_setup();
            let cfg = toys::gripper_config(seed);
            let lookahead = cfg.observation.lookahead;
            let rt = ClipRuntime::prepare(
                clip,
                &models,
                "lift",
                &FitSettings::default(),
                cfg.physics.fingertip_radius,
            )
            .unwrap();

            let pre_run = TrainRun {
                config: toys::gripper_config(seed),
                clips: vec![rt],
                out_dir: dir.join(format!("seed_{seed}/pretrain")),
                label: format!("grip_pre_{seed}"),
            };
            let base = train_imitation(&pre_run).unwrap();

            let res_run = TrainRun {
                config: cfg,
                clips: pre_run.clips,
                out_dir: dir.join(format!("seed_{seed}/residual")),
                label: format!("grip_res_{seed}"),
            };
            let out = train_residual(&res_run, &base.params, &base.meta).unwrap();

            // The training log must show gravity ramping 0 → 1 and friction
            // annealing from its start value down to the run value.
            let log = std::fs::read_to_string(&out.log_path).unwrap();
            let mut gravity = Vec::new();
            let mut friction = Vec::new();
            for line in log.lines() {
                let rec: serde_json::Value = serde_json::from_str(line).unwrap();
                gravity.push(rec["curriculum"]["gravity_scale"].as_f64().unwrap());
                friction.push(rec["curriculum"]["friction"].as_f64().unwrap());
            }
            let curriculum = &res_run.config.curriculum;
            assert_eq!(gravity.first(), Some(&0.0), "gravity starts off");
            assert_eq!(gravity.last(), Some(&1.0), "gravity ends at full scale");
            assert!(gravity.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(friction.first(), Some(&curriculum.friction_start));
            assert_eq!(friction.last(), Some(&curriculum.friction_end));
            assert!(friction.windows(2).all(|w| w[1] <= w[0]));

            // 20 sampled evaluation rollouts; success means the object ends
            // the clip within 2 cm of its reference.
            let rt = &res_run.clips[0];
            let objects = rt.clip.objects.len();
            let articulated = false;
            let base_layout = ObservationLayout::build(
                Stage::Imitation,
                &rt.models[0],
                objects,
                articulated,
                lookahead,
            );
            let res_layout = ObservationLayout::build(
                Stage::Residual,
                &rt.models[0],
                objects,
                articulated,
                lookahead,
            );
            let bundle = PolicyBundle {
                stage: Stage::Residual,
                layout: &res_layout,
                params: &out.params,
                base_layout: Some(&base_layout),
                base: Some(out.base_used.as_ref().unwrap()),
                warmup: 1.0,
            };
            let physics = res_run.config.physics.clone();
            let last = rt.len() - 1;
            let target = rt.clip.objects[0].pose[last].translation;
            let mut hits = 0;
            for k in 0..20u64 {
                let mut rng = stream(seed, "gripper-eval", k);
                let ro = rollout_clip(rt, &bundle, &physics, false, &mut rng).unwrap();
                if ro.blowup || ro.states.len() != rt.len() {
                    continue;
                }
                let got = ro.states.last().unwrap().objects[0].pose.translation;
                if (got - target).norm() < 0.02 {
                    hits += 1;
                }
            }
            let rate = hits as f64 / 20.0;
            rates.push(rate);
            if rate >= 0.8 {
                seed_passes += 1;
            }
        }
        println!("  lift success rates by seed: {rates:?}");
        assert!(
            seed_passes >= 3,
            "only {seed_passes}/5 seeds reached 80% lift success: {rates:?}"
        );
        std::fs::remove_dir_all(&dir).ok();
    });
}

// ---------------------------------------------------------------------------
// 08 — curriculum endpoints
// ---------------------------------------------------------------------------

#[test]
fn a08_curriculum_schedules_hit_their_endpoints_exactly() {
    criterion(8, "curriculum endpoints", 1.0, || {
        let cfg = CurriculumConfig::default();
        for wide in [false, true] {
            // Resolve the whole schedule table and check its ends bit for bit.
            let table: Vec<CurriculumState> = (0..=20)
                .map(|i| CurriculumState::at(&cfg, i as f64 / 20.0, wide).unwrap())
                .collect();
            let first = table.first().unwrap();
            let last = table.last().unwrap();

            let start = if wide {
                cfg.epsilon_finger_start_wide
            } else {
                cfg.epsilon_finger_start
            };
            assert_eq!(first.epsilon_finger, start);
            assert_eq!(first.epsilon_object_rot, cfg.epsilon_object_rot_start);
            assert_eq!(first.epsilon_object_tsl, cfg.epsilon_object_tsl_start);
            assert_eq!(first.gravity_scale, 0.0);
            assert_eq!(first.friction, cfg.friction_start);

            assert_eq!(last.epsilon_finger, cfg.epsilon_finger_end);
            assert_eq!(last.epsilon_finger, 0.04, "finger tolerance ends at 4 cm");
            assert_eq!(last.epsilon_object_rot, 30.0, "rotation tolerance ends at 30°");
            assert_eq!(last.epsilon_object_tsl, 0.02, "translation tolerance ends at 2 cm");
            assert_eq!(last.gravity_scale, 1.0);
            assert_eq!(last.friction, cfg.friction_end);

            // Monotone tightening in between; gravity and friction finish
            // their ramp early and then stay flat.
            for w in table.windows(2) {
                assert!(w[1].epsilon_finger <= w[0].epsilon_finger);
                assert!(w[1].epsilon_object_rot <= w[0].epsilon_object_rot);
                assert!(w[1].epsilon_object_tsl <= w[0].epsilon_object_tsl);
                assert!(w[1].gravity_scale >= w[0].gravity_scale);
                assert!(w[1].friction <= w[0].friction);
            }
            let at_ramp = CurriculumState::at(&cfg, cfg.ramp_fraction, wide).unwrap();
            assert_eq!(at_ramp.gravity_scale, 1.0);
            assert_eq!(at_ramp.friction, cfg.friction_end);
        }
        assert_eq!(
            CurriculumState::at(&CurriculumConfig::default(), 0.0, false)
                .unwrap()
                .epsilon_finger,
            0.06,
            "finger tolerance starts at 6 cm"
        );
    });
}

// ---------------------------------------------------------------------------
// 09 — retargeting recovers synthesized configurations
// ---------------------------------------------------------------------------

#[test]
fn a09_retargeting_recovers_synthesized_trajectories() {
    criterion(9, "retargeting recovery", 60.0, || {
        let models = vec![
            toys::planar_finger_model(),
            load_model("inspire_right.json"),
            load_model("shadow_right.json"),
            load_model("allegro_right.json"),
        ];
        let mut rng = stream(0xACC9, "recover", 0);
        let settings = FitSettings::default();

        // Per-frame synthesize-and-recover on random reachable targets.
        for model in &models {
            let weights: Vec<f64> = model.keypoints.iter().map(|k| k.weight).collect();
            for _ in 0..25 {
                let q_true = random_joint_vector(model, 0.6, &mut rng);
                let wrist = random_pose(&mut rng);
                let targets = model.forward_kinematics(&q_true, &wrist).unwrap();
                let fit = retarget_frame(
                    model,
                    &targets,
                    &weights,
                    &model.mid_range(),
                    &wrist,
                    true,
                    &settings,
                )
                .unwrap();
                assert!(fit.converged, "{}: residual {}", model.name, fit.residual);
                let worst = (fit.q - &q_true).amax();
                assert!(worst < 1e-3, "{}: joint error {worst} rad", model.name);
            }
        }

        // Whole-trajectory fit through the human-indexed correspondence: a
        // motion that the target hand can express exactly is recovered to
        // numerical precision when smoothing is off.
        let tight = FitSettings {
            max_iters: 200,
            step_tol: 1e-14,
            success_tol: 1e-10,
            mu_init: 1e-3,
        };
        let model = load_model("inspire_right.json");
        let frames = 6;
        let (lo, hi) = model.limit_vectors();
        let phases: Vec<f64> = (0..model.dof())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let q_track: Vec<DVector<f64>> = (0..frames)
            .map(|t| {
                DVector::from_fn(model.dof(), |i, _| {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    let half = 0.5 * (hi[i] - lo[i]);
                    mid + 0.5 * half * (phases[i] + 0.8 * t as f64).sin()
                })
            })
            .collect();
        let wrists: Vec<Pose> = (0..frames)
            .map(|t| {
                Pose::new(
                    Vector3::new(0.01 * t as f64, 0.0, 0.002 * t as f64),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.05 * t as f64),
                )
            })
            .collect();
        let reduced = fit_reduced_dof(&model, &q_track, &wrists, &model, 0.0, &tight).unwrap();
        assert!(reduced.converged);
        let mut worst = 0.0f64;
        for (got, want) in reduced.joints.iter().zip(&q_track) {
            worst = worst.max((got - want).amax());
        }
        assert!(worst < 1e-6, "reduced-fit joint error {worst} rad");

        // Cross-hand correspondence at least runs and tracks closely even
        // when the joint spaces differ.
        let full = load_model("arti_mano_right.json");
        let q_full: Vec<DVector<f64>> = (0..4)
            .map(|_| random_joint_vector(&full, 0.3, &mut rng))
            .collect();
        let w4: Vec<Pose> = (0..4).map(|_| Pose::identity()).collect();
        let cross = fit_reduced_dof(&full, &q_full, &w4, &model, 1e-4, &settings).unwrap();
        assert_eq!(cross.joints.len(), 4);
        assert!(cross.objective.is_finite());

        // With the smoothing weight at zero the trajectory fit decouples
        // into the per-frame fits.
        let targets: Vec<Vec<Vector3<f64>>> = q_track
            .iter()
            .zip(&wrists)
            .map(|(q, w)| model.forward_kinematics(q, w).unwrap())
            .collect();
        let weights: Vec<f64> = model.keypoints.iter().map(|k| k.weight).collect();
        let joint_fit =
            fit_targets_smoothed(&model, &targets, &wrists, &weights, 0.0, &tight).unwrap();
        let mut decouple_gap = 0.0f64;
        for t in 0..frames {
            let solo = retarget_frame(
                &model,
                &targets[t],
                &weights,
                &model.mid_range(),
                &wrists[t],
                true,
                &tight,
            )
            .unwrap();
            decouple_gap = decouple_gap.max((&joint_fit.joints[t] - &solo.q).amax());
        }
        assert!(decouple_gap < 1e-6, "decoupling gap {decouple_gap} rad");
    });
}

// ---------------------------------------------------------------------------
// 10 — data-layer properties
// ---------------------------------------------------------------------------

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect()
}

/// A clip with both hands' worth of data plus an articulated second object,
/// full of non-round floating point values.
fn rich_clip(rng: &mut ChaCha8Rng) -> ReferenceClip {
    let mut clip = toys::gripper_lift_clip();
    let frames = clip.len();
    let mesh = convex_hull(&random_points(rng, 24)).unwrap();
    let mut lid = ObjectShape::from_mesh(mesh);
    lid.density = 321.5;
    lid.hinge = Some(remimic::traj::HingeSpec {
        axis: [0.0, 1.0, 0.0],
        anchor: [0.05, 0.0, 0.02],
        limits: [-0.2, 1.3],
        inertia: 2.4e-4,
        damping: 0.013,
    });
    clip.shapes.push(lid);
    let poses: Vec<Pose> = (0..frames)
        .map(|_| perturbed_pose(&Pose::identity(), 0.3, rng))
        .collect();
    let vels: Vec<Twist> = (0..frames).map(|_| random_twist(rng, 0.7)).collect();
    clip.objects.push(ObjectTrack {
        shape: 1,
        pose: poses,
        vel: vels,
        articulation: Some((0..frames).map(|_| rng.gen_range(-0.2..1.3)).collect()),
        articulation_vel: Some((0..frames).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    });
    clip.validate().unwrap();
    clip
}

#[test]
fn a10_data_layer_properties_hold() {
    criterion(10, "data-layer properties", 60.0, || {
        let mut rng = stream(0xACCA, "data", 0);

        // Clip serialization round-trips bit-exactly, in memory and on disk.
        let clip = rich_clip(&mut rng);
        let text = clip.to_json_string();
        let back = ReferenceClip::from_json_str(&text).unwrap();
        assert_eq!(text, back.to_json_string(), "round trip must be stable");
        assert_eq!(clip.hands, back.hands);
        assert_eq!(clip.objects, back.objects);
        assert_eq!(clip.fps.to_bits(), back.fps.to_bits());

        let dir = scratch_dir("clip");
        let path = dir.join("round_trip.json");
        clip.save(&path).unwrap();
        let from_disk = ReferenceClip::load(&path).unwrap();
        assert_eq!(clip.hands, from_disk.hands);
        assert_eq!(clip.objects, from_disk.objects);
        std::fs::remove_dir_all(&dir).ok();

        // Mirroring is an involution for clips and models.
        let twice = clip.mirrored().mirrored();
        assert_eq!(clip.hands, twice.hands);
        assert_eq!(clip.objects, twice.objects);
        assert_eq!(clip.to_json_string(), twice.to_json_string());
        for file in [
            "inspire_right.json",
            "shadow_right.json",
            "arti_mano_right.json",
            "allegro_right.json",
        ] {
            let model = load_model(file);
            assert_eq!(
                model.to_json_string(),
                model.mirrored().mirrored().to_json_string(),
                "{file}"
            );
        }

        // Wrist normalization is invariant to shifting the whole scene.
        for _ in 0..200 {
            let keypoints = random_points(&mut rng, 8);
            let view = FrameView {
                wrist: random_pose(&mut rng),
                wrist_vel: random_twist(&mut rng, 2.0),
                keypoint_vel: random_points(&mut rng, 8),
                keypoints,
                objects: vec![ObjectView {
                    pose: random_pose(&mut rng),
                    vel: random_twist(&mut rng, 2.0),
                    articulation: Some(rng.gen_range(-1.0..1.0)),
                    articulation_vel: Some(rng.gen_range(-1.0..1.0)),
                }],
            };
            let wrist = random_pose(&mut rng);
            let shift = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let shift_pose = |p: &Pose| Pose::new(p.translation + shift, p.rotation);
            let shifted = FrameView {
                wrist: shift_pose(&view.wrist),
                wrist_vel: view.wrist_vel,
                keypoints: view.keypoints.iter().map(|p| p + shift).collect(),
                keypoint_vel: view.keypoint_vel.clone(),
                objects: view
                    .objects
                    .iter()
                    .map(|o| ObjectView {
                        pose: shift_pose(&o.pose),
                        ..*o
                    })
                    .collect(),
            };
            let a = normalize_to_wrist(&view, &wrist);
            let b = normalize_to_wrist(&shifted, &shift_pose(&wrist));
            let tol = 1e-12;
            assert!((a.wrist.translation - b.wrist.translation).norm() < tol);
            assert_eq!(a.wrist.rotation, b.wrist.rotation);
            for (pa, pb) in a.keypoints.iter().zip(&b.keypoints) {
                assert!((pa - pb).norm() < tol);
            }
            assert_eq!(a.keypoint_vel, b.keypoint_vel);
            for (oa, ob) in a.objects.iter().zip(&b.objects) {
                assert!((oa.pose.translation - ob.pose.translation).norm() < tol);
                assert_eq!(oa.pose.rotation, ob.pose.rotation);
                assert_eq!(oa.vel, ob.vel);
            }
        }

        // Convex hulls: watertight, outward faces, and every input point on
        // or inside every face plane.
        for i in 0..100 {
            let n = 4 + (i % 36);
            let points = random_points(&mut rng, n);
            let hull = convex_hull(&points).unwrap();
            assert!(hull.is_watertight(), "set {i} not watertight");
            assert!(hull.volume() > 0.0);
            let centroid: Vector3<f64> =
                hull.vertices.iter().sum::<Vector3<f64>>() / hull.vertices.len() as f64;
            for f in 0..hull.faces.len() {
                let (normal, d) = hull.face_plane(f);
                assert!(
                    normal.dot(&centroid) < d,
                    "set {i}: face {f} does not point outward"
                );
                for p in &points {
                    assert!(
                        normal.dot(p) <= d + 1e-9,
                        "set {i}: point outside face {f} by {}",
                        normal.dot(p) - d
                    );
                }
            }
            for v in &hull.vertices {
                assert!(points.iter().any(|p| p == v), "hull vertex not an input point");
            }
        }

        // Shape encodings ignore the world pose entirely.
        let shapes = vec![
            ObjectShape::new(ShapeKind::Sphere { radius: 0.04 }),
            ObjectShape::new(ShapeKind::Box {
                half_extents: [0.02, 0.05, 0.03],
            }),
            ObjectShape::from_mesh(convex_hull(&random_points(&mut rng, 30)).unwrap()),
        ];
        let mut features = Vec::new();
        for shape in &shapes {
            let a = bps_encode(shape, &random_pose(&mut rng));
            let b = bps_encode(shape, &random_pose(&mut rng));
            assert_eq!(a.features, b.features, "encoding must not depend on pose");
            assert_eq!(a.basis, b.basis);
            features.push(a.features);
        }
        assert_ne!(features[0], features[1], "distinct shapes encode differently");
        assert_ne!(features[1], features[2]);
    });
}
