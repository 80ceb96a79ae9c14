//! Clipped-surrogate policy optimization over rollouts collected from the
//! vectorized environments, with generalized advantage estimation and a
//! hand-rolled Adam optimizer on the flattened parameter vector.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian_entropy, PolicyError, PolicyParams};

/// Optimization hyper-parameters; the `[ppo]` table of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Steps collected per environment per update.
    pub horizon: usize,
    /// Samples per gradient step (clamped to the batch size).
    pub minibatch: usize,
    /// Optimization passes over each batch.
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    /// The learning rate decays linearly to `learning_rate·lr_final_scale`.
    pub lr_final_scale: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Hidden layer widths shared by actor and critic.
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            horizon: 32,
            minibatch: 1024,
            epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 5e-4,
            lr_final_scale: 0.1,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            hidden: vec![256, 256],
            log_std_init: -1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be ≥ 1".into());
        }
        if self.minibatch == 0 {
            return Err("minibatch must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return Err("epochs must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err("gae_lambda must lie in [0, 1]".into());
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err("clip_epsilon must lie in (0, 1)".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err("learning_rate must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.lr_final_scale) {
            return Err("lr_final_scale must lie in [0, 1]".into());
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err("loss coefficients must be ≥ 0".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err("hidden must list at least one non-zero width".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, progress: f64) -> f64 {
        self.learning_rate * (1.0 - (1.0 - self.lr_final_scale) * progress)
    }
}

/// One update's worth of experience. Samples are stored column-wise with
/// index `t·envs + e` so per-environment trajectories interleave.
///
/// `dones[i] = 1` marks the last sample of an episode, whatever the cause;
/// `bootstrap[i] = 0` additionally marks endings that are true failures, so
/// no future value flows past them. A clip simply running out keeps
/// `bootstrap = 1` and is credited with the value of its final state via
/// `next_values`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub envs: usize,
    pub obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
    pub values: DVector<f64>,
    pub log_probs: DVector<f64>,
    pub dones: DVector<f64>,
    pub bootstrap: DVector<f64>,
    /// V(s_{t+1}) for every sample (the reset-free successor).
    pub next_values: DVector<f64>,
}

impl RolloutBatch {
    pub fn zeros(horizon: usize, envs: usize, obs_dim: usize, act_dim: usize) -> Self {
        let n = horizon * envs;
        RolloutBatch {
            horizon,
            envs,
            obs: DMatrix::zeros(obs_dim, n),
            actions: DMatrix::zeros(act_dim, n),
            rewards: DVector::zeros(n),
            values: DVector::zeros(n),
            log_probs: DVector::zeros(n),
            dones: DVector::zeros(n),
            bootstrap: DVector::from_element(n, 1.0),
            next_values: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.horizon * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_index(&self, t: usize, e: usize) -> usize {
        debug_assert!(t < self.horizon && e < self.envs);
        t * self.envs + e
    }
}

/// Generalized advantage estimation. Returns (advantages, value targets).
///
/// δ_t = r_t + γ·V(s_{t+1})·bootstrap_t − V(s_t)
/// A_t = δ_t + γλ·(1 − done_t)·A_{t+1}
pub fn gae_advantages(
    batch: &RolloutBatch,
    gamma: f64,
    lambda: f64,
) -> (DVector<f64>, DVector<f64>) {
    let n = batch.len();
    let mut adv = DVector::zeros(n);
    for e in 0..batch.envs {
        let mut carry = 0.0;
        for t in (0..batch.horizon).rev() {
            let i = t * batch.envs + e;
            let delta = batch.rewards[i] + gamma * batch.next_values[i] * batch.bootstrap[i]
                - batch.values[i];
            carry = delta + gamma * lambda * (1.0 - batch.dones[i]) * carry;
            adv[i] = carry;
        }
    }
    let returns = &adv + &batch.values;
    (adv, returns)
}

/// The pessimistic clipped objective for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clamped * advantage)
}

/// Adam over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>, lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Diagnostics averaged over the gradient steps of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

/// Loss and flat-parameter gradient of the full objective
/// L = −surrogate + c_v·value_mse − c_e·entropy on one minibatch.
///
/// Samples on the clipped branch contribute no policy gradient. Pure in the
/// parameters, which is what lets tests difference it numerically.
pub fn ppo_loss_and_grads(
    params: &PolicyParams,
    obs: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    old_log_probs: &DVector<f64>,
    advantages: &DVector<f64>,
    returns: &DVector<f64>,
    cfg: &PpoConfig,
) -> Result<(f64, DVector<f64>, PpoStats), PolicyError> {
    let m = obs.ncols();
    if m == 0 {
        return Err(PolicyError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let act_dim = params.act_dim();
    let x = params.normalizer.normalize_batch(obs);
    let actor_cache = params.actor.forward_cached(&x);
    let critic_cache = params.critic.forward_cached(&x);
    let means = actor_cache.activations.last().unwrap();
    let values = critic_cache.activations.last().unwrap();

    let sigma: DVector<f64> = params.log_std.map(f64::exp);
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

    // Per-sample log-probabilities and standardized residuals.
    let mut z = DMatrix::zeros(act_dim, m);
    let mut new_lp = DVector::zeros(m);
    for i in 0..m {
        let mut lp = 0.0;
        for d in 0..act_dim {
            let zz = (actions[(d, i)] - means[(d, i)]) / sigma[d];
            z[(d, i)] = zz;
            lp += -HALF_LN_2PI - params.log_std[d] - 0.5 * zz * zz;
        }
        new_lp[i] = lp;
    }

    let inv_m = 1.0 / m as f64;
    let mut policy_loss = 0.0;
    let mut clip_hits = 0usize;
    let mut kl = 0.0;
    // ∂L/∂log-prob per sample; zero when the clipped branch is active.
    let mut g_lp = DVector::zeros(m);
    for i in 0..m {
        let ratio = (new_lp[i] - old_log_probs[i]).exp();
        let a = advantages[i];
        let surr1 = ratio * a;
        let surr2 = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * a;
        policy_loss -= surr1.min(surr2) * inv_m;
        if surr1 <= surr2 {
            g_lp[i] = -a * ratio * inv_m;
        }
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            clip_hits += 1;
        }
        kl += (old_log_probs[i] - new_lp[i]) * inv_m;
    }

    // Actor gradient: ∂lp/∂mean_d = z_d/σ_d.
    let mut d_mean = DMatrix::zeros(act_dim, m);
    for i in 0..m {
        for d in 0..act_dim {
            d_mean[(d, i)] = g_lp[i] * z[(d, i)] / sigma[d];
        }
    }
    let actor_grads = params.actor.backward(&actor_cache, &d_mean);

    // Critic gradient from the value regression.
    let mut value_loss = 0.0;
    let mut d_value = DMatrix::zeros(1, m);
    for i in 0..m {
        let err = values[(0, i)] - returns[i];
        value_loss += err * err * inv_m;
        d_value[(0, i)] = cfg.value_coef * 2.0 * err * inv_m;
    }
    let critic_grads = params.critic.backward(&critic_cache, &d_value);

    // log-std gradient: policy term ∂lp/∂s_d = z² − 1, entropy term −c_e.
    let mut d_log_std = DVector::zeros(act_dim);
    for i in 0..m {
        for d in 0..act_dim {
            d_log_std[d] += g_lp[i] * (z[(d, i)] * z[(d, i)] - 1.0);
        }
    }
    for d in 0..act_dim {
        d_log_std[d] -= cfg.entropy_coef;
    }

    let entropy = gaussian_entropy(&params.log_std);
    let total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(PolicyError::NumericalBlowup(format!(
            "non-finite loss (policy {policy_loss}, value {value_loss})"
        )));
    }

    let mut grad = Vec::with_capacity(params.param_count());
    super::net::append_grads_flat(&actor_grads, &mut grad);
    super::net::append_grads_flat(&critic_grads, &mut grad);
    grad.extend(d_log_std.iter());

    let stats = PpoStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clip_hits as f64 * inv_m,
        approx_kl: kl,
        lr: 0.0,
    };
    Ok((total, DVector::from_vec(grad), stats))
}

/// One optimization update: normalizes the advantages once, then takes
/// `epochs` shuffled minibatch passes of Adam at the decayed learning rate.
pub fn ppo_update(
    params: &mut PolicyParams,
    opt: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    progress: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats, PolicyError> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(PolicyError::RangeError(format!(
            "training progress {progress} outside [0, 1]"
        )));
    }
    let n = batch.len();
    if n == 0 {
        return Err(PolicyError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let (advantages, returns) = gae_advantages(batch, cfg.gamma, cfg.gae_lambda);
    let mean = advantages.mean();
    let std = (advantages.map(|a| (a - mean) * (a - mean)).sum() / n as f64).sqrt();
    let normed = advantages.map(|a| (a - mean) / (std + 1e-8));

    let lr = cfg.lr_at(progress);
    let mb = cfg.minibatch.min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut acc = PpoStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
        lr,
    };
    let mut steps = 0usize;

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(mb) {
            let obs_mb = batch.obs.select_columns(chunk.iter());
            let act_mb = batch.actions.select_columns(chunk.iter());
            let old_mb = DVector::from_iterator(chunk.len(), chunk.iter().map(|&i| batch.log_probs[i]));
            let adv_mb = DVector::from_iterator(chunk.len(), chunk.iter().map(|&i| normed[i]));
            let ret_mb = DVector::from_iterator(chunk.len(), chunk.iter().map(|&i| returns[i]));

            let (_, grad, stats) =
                ppo_loss_and_grads(params, &obs_mb, &act_mb, &old_mb, &adv_mb, &ret_mb, cfg)?;
            let mut flat = params.to_flat();
            opt.step(&mut flat, &grad, lr);
            params.set_from_flat(&flat);

            acc.policy_loss += stats.policy_loss;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.clip_fraction += stats.clip_fraction;
            acc.approx_kl += stats.approx_kl;
            steps += 1;
        }
    }
    let s = 1.0 / steps as f64;
    acc.policy_loss *= s;
    acc.value_loss *= s;
    acc.entropy *= s;
    acc.clip_fraction *= s;
    acc.approx_kl *= s;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rng(idx: u64) -> ChaCha8Rng {
        crate::rng::stream(43, "ppo-test", idx)
    }

    #[test]
    fn single_step_advantage_is_the_td_error() {
        let mut b = RolloutBatch::zeros(1, 1, 1, 1);
        b.rewards[0] = 1.0;
        b.dones[0] = 1.0;
        b.bootstrap[0] = 0.0;
        let (adv, ret) = gae_advantages(&b, 0.99, 0.95);
        assert_eq!(adv[0], 1.0);
        assert_eq!(ret[0], 1.0);
    }

    #[test]
    fn two_step_advantage_reference_value() {
        let mut b = RolloutBatch::zeros(2, 1, 1, 1);
        b.rewards[0] = 1.0;
        b.rewards[1] = 1.0;
        let (adv, _) = gae_advantages(&b, 0.99, 0.95);
        assert!((adv[0] - 1.9405).abs() < 1e-12, "{}", adv[0]);
        assert!((adv[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn done_cuts_credit_and_bootstrap_restores_tail_value() {
        // Episode ends after the first step as a failure.
        let mut b = RolloutBatch::zeros(2, 1, 1, 1);
        b.rewards[0] = 1.0;
        b.rewards[1] = 100.0;
        b.dones[0] = 1.0;
        b.bootstrap[0] = 0.0;
        let (adv, _) = gae_advantages(&b, 0.99, 0.95);
        assert_eq!(adv[0], 1.0, "failure ending must not see later reward");

        // Same shape but the ending is a truncation with V(s') = 2.
        let mut b2 = RolloutBatch::zeros(2, 1, 1, 1);
        b2.rewards[0] = 1.0;
        b2.dones[0] = 1.0;
        b2.next_values[0] = 2.0;
        let (adv2, _) = gae_advantages(&b2, 0.99, 0.95);
        assert!((adv2[0] - (1.0 + 0.99 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn environments_are_independent_columns() {
        let mut b = RolloutBatch::zeros(2, 2, 1, 1);
        // env 0 earns 1 at both steps; env 1 earns nothing.
        let (i0, i1) = (b.sample_index(0, 0), b.sample_index(1, 0));
        b.rewards[i0] = 1.0;
        b.rewards[i1] = 1.0;
        let (adv, _) = gae_advantages(&b, 0.99, 0.95);
        assert!((adv[b.sample_index(0, 0)] - 1.9405).abs() < 1e-12);
        assert_eq!(adv[b.sample_index(0, 1)], 0.0);
    }

    #[test]
    fn surrogate_reference_value_and_branches() {
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(1.0, 1.0, 0.2) - 1.0).abs() < 1e-15);
        // Pessimism: a ratio collapse with positive advantage passes through.
        assert!((clipped_surrogate(0.1, 1.0, 0.2) - 0.1).abs() < 1e-15);
        // Negative advantage clips on the low side.
        assert!((clipped_surrogate(0.1, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let target = DVector::from_vec(vec![3.0, -2.0, 0.5]);
        let mut x = DVector::zeros(3);
        let mut opt = AdamState::new(3);
        for _ in 0..2000 {
            let grad = 2.0 * (&x - &target);
            opt.step(&mut x, &grad, 0.01);
        }
        assert!((x - target).norm() < 1e-3);
    }

    fn random_minibatch(
        r: &mut ChaCha8Rng,
        obs_dim: usize,
        act_dim: usize,
        m: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let obs = DMatrix::from_fn(obs_dim, m, |_, _| r.sample::<f64, _>(StandardNormal));
        let act = DMatrix::from_fn(act_dim, m, |_, _| r.sample::<f64, _>(StandardNormal));
        let old = DVector::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal) - 2.0);
        let adv = DVector::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal));
        let ret = DVector::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal));
        (obs, act, old, adv, ret)
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut r = rng(0);
        let mut params = PolicyParams::new(4, 2, &[6], -0.5, &mut r);
        params
            .normalizer
            .update_batch(&DMatrix::from_fn(4, 40, |_, _| r.sample::<f64, _>(StandardNormal)));
        params.normalizer.freeze();
        let cfg = PpoConfig {
            hidden: vec![6],
            ..PpoConfig::default()
        };
        let (obs, act, old, adv, ret) = random_minibatch(&mut r, 4, 2, 16);

        let (_, grad, _) =
            ppo_loss_and_grads(&params, &obs, &act, &old, &adv, &ret, &cfg).unwrap();

        let flat = params.to_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut probe = params.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            probe.set_from_flat(&fp);
            let (lp, _, _) =
                ppo_loss_and_grads(&probe, &obs, &act, &old, &adv, &ret, &cfg).unwrap();
            let mut fm = flat.clone();
            fm[i] -= h;
            probe.set_from_flat(&fm);
            let (lm, _, _) =
                ppo_loss_and_grads(&probe, &obs, &act, &old, &adv, &ret, &cfg).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (1.0 + fd.abs().max(grad[i].abs()));
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }

    #[test]
    fn fully_clipped_batch_has_no_policy_gradient() {
        let mut r = rng(1);
        let params = PolicyParams::new(3, 2, &[5], 0.0, &mut r);
        let cfg = PpoConfig {
            hidden: vec![5],
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let (obs, act, _, _, ret) = random_minibatch(&mut r, 3, 2, 8);
        // Old log-probs far below the new ones: ratio ≫ 1 + ε with positive
        // advantages puts every sample on the clipped branch.
        let mut new_lp = DVector::zeros(8);
        for i in 0..8 {
            let (mean, _) = params.net_forward(&obs.column(i).into_owned()).unwrap();
            new_lp[i] = super::super::gaussian_log_prob(&mean, &params.log_std, &act.column(i).into_owned());
        }
        let old = new_lp.map(|lp| lp - 5.0);
        let adv = DVector::from_element(8, 1.0);
        let (_, grad, stats) =
            ppo_loss_and_grads(&params, &obs, &act, &old, &adv, &ret, &cfg).unwrap();
        assert_eq!(stats.clip_fraction, 1.0);
        assert!(grad.norm() < 1e-12, "clipped samples leaked gradient: {}", grad.norm());
    }

    #[test]
    fn update_is_deterministic_per_seed() {
        let build = |seed: u64| {
            let mut r = rng(seed);
            let mut params = PolicyParams::new(3, 1, &[8], -1.0, &mut r);
            let cfg = PpoConfig {
                hidden: vec![8],
                minibatch: 16,
                ..PpoConfig::default()
            };
            let mut batch = RolloutBatch::zeros(8, 4, 3, 1);
            batch.obs = DMatrix::from_fn(3, 32, |_, _| r.sample::<f64, _>(StandardNormal));
            batch.actions = DMatrix::from_fn(1, 32, |_, _| r.sample::<f64, _>(StandardNormal));
            batch.rewards = DVector::from_fn(32, |_, _| r.sample::<f64, _>(StandardNormal));
            batch.log_probs = DVector::from_element(32, -1.0);
            let mut opt = AdamState::new(params.param_count());
            let mut update_rng = rng(seed + 100);
            ppo_update(&mut params, &mut opt, &batch, &cfg, 0.0, &mut update_rng).unwrap();
            params.to_flat()
        };
        assert_eq!(build(5), build(5));
        assert_ne!(build(5), build(6));
    }

    #[test]
    fn non_finite_rewards_are_reported_not_propagated() {
        let mut r = rng(2);
        let mut params = PolicyParams::new(2, 1, &[4], -1.0, &mut r);
        let cfg = PpoConfig {
            hidden: vec![4],
            ..PpoConfig::default()
        };
        let mut batch = RolloutBatch::zeros(2, 1, 2, 1);
        batch.rewards[0] = f64::NAN;
        let mut opt = AdamState::new(params.param_count());
        let err = ppo_update(&mut params, &mut opt, &batch, &cfg, 0.0, &mut rng(3));
        assert!(matches!(err, Err(PolicyError::NumericalBlowup(_))), "{err:?}");
    }

    #[test]
    fn learning_rate_decays_linearly_to_its_floor() {
        let cfg = PpoConfig::default();
        assert_eq!(cfg.lr_at(0.0), 5e-4);
        assert!((cfg.lr_at(1.0) - 5e-5).abs() < 1e-18);
        assert!((cfg.lr_at(0.5) - 2.75e-4).abs() < 1e-18);
    }

    /// A one-armed bandit: reward −(a − 3)². The policy mean must reach the
    /// optimum within 200 updates.
    #[test]
    fn bandit_converges_to_the_optimum() {
        let mut r = rng(4);
        let mut params = PolicyParams::new(1, 1, &[16], 0.0, &mut r);
        let cfg = PpoConfig {
            hidden: vec![16],
            minibatch: 64,
            learning_rate: 1e-2,
            lr_final_scale: 1.0,
            ..PpoConfig::default()
        };
        let mut opt = AdamState::new(params.param_count());
        let obs = DVector::zeros(1);
        let envs = 256;
        let mut solved_at = None;
        for update in 0..200 {
            let mut batch = RolloutBatch::zeros(1, envs, 1, 1);
            batch.dones.fill(1.0);
            batch.bootstrap.fill(0.0);
            for e in 0..envs {
                let (a, lp) = params.sample_action(&obs, &mut r).unwrap();
                let (_, v) = params.net_forward(&obs).unwrap();
                batch.actions[(0, e)] = a[0];
                batch.log_probs[e] = lp;
                batch.values[e] = v;
                batch.rewards[e] = -(a[0] - 3.0) * (a[0] - 3.0);
            }
            ppo_update(&mut params, &mut opt, &batch, &cfg, 0.0, &mut r).unwrap();
            let mean = params.deterministic_action(&obs).unwrap()[0];
            if (mean - 3.0).abs() < 0.1 {
                solved_at = Some(update);
                break;
            }
        }
        let mean = params.deterministic_action(&obs).unwrap()[0];
        assert!(
            solved_at.is_some(),
            "mean stuck at {mean} after 200 updates"
        );
    }
}
