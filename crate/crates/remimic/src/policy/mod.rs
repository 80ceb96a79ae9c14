//! Actor–critic policy: diagonal-Gaussian action head over an MLP pair, the
//! residual action combiner, and checkpoint serialization.

pub mod net;
pub mod ppo;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::HandModel;
use crate::sim::{Action, PhysicsParams};
pub use net::{Mlp, ObsNormalizer};
pub use ppo::{gae_advantages, ppo_update, AdamState, PpoConfig, PpoStats, RolloutBatch};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Initial log standard deviation of a freshly created residual head: the
/// refinement starts as a near-deterministic zero correction.
pub const RESIDUAL_LOG_STD: f64 = -3.0;

const CHECKPOINT_MAGIC: &[u8; 8] = b"RMIMCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("range error: {0}")]
    RangeError(String),
}

/// Everything that defines a policy's behavior: the two networks, the
/// exploration scale, and the frozen-able observation whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: DVector<f64>,
    pub normalizer: ObsNormalizer,
}

/// Metadata stored inside every checkpoint. `layout` is the JSON description
/// of the observation vector the policy was trained on; loading code must
/// refuse to pair the policy with a different layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub layout: String,
    pub config_hash: u64,
    pub update: u64,
}

impl PolicyParams {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        log_std_init: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        PolicyParams {
            actor: Mlp::new(&actor_sizes, rng),
            critic: Mlp::new(&critic_sizes, rng),
            log_std: DVector::from_element(
                act_dim,
                log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX),
            ),
            normalizer: ObsNormalizer::new(obs_dim),
        }
    }

    /// A residual head: zeroed final actor layer (mean correction is exactly
    /// zero everywhere) and a tight exploration scale.
    pub fn residual(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut p = Self::new(obs_dim, act_dim, hidden, RESIDUAL_LOG_STD, rng);
        p.actor.zero_final_layer();
        p
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    fn check_obs(&self, len: usize) -> Result<(), PolicyError> {
        if len != self.obs_dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.obs_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Action mean and state value for one observation (whitened first).
    pub fn net_forward(&self, obs: &DVector<f64>) -> Result<(DVector<f64>, f64), PolicyError> {
        self.check_obs(obs.len())?;
        let x = DMatrix::from_column_slice(obs.len(), 1, self.normalizer.normalize_vec(obs).as_slice());
        let mean = self.actor.forward(&x).column(0).into_owned();
        let value = self.critic.forward(&x)[(0, 0)];
        Ok((mean, value))
    }

    /// Batched means and values, one sample per column.
    pub fn forward_batch(&self, obs: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), PolicyError> {
        self.check_obs(obs.nrows())?;
        let x = self.normalizer.normalize_batch(obs);
        let means = self.actor.forward(&x);
        let values = self.critic.forward(&x).row(0).transpose();
        Ok((means, values))
    }

    /// Draws a ~ N(mean, diag(exp(log_std)²)) and returns its log-density.
    pub fn sample_action(
        &self,
        obs: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DVector<f64>, f64), PolicyError> {
        let (mean, _) = self.net_forward(obs)?;
        let mut action = mean.clone();
        for (a, s) in action.iter_mut().zip(self.log_std.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *a += s.exp() * z;
        }
        let lp = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, lp))
    }

    /// The distribution mean: the action used by deterministic evaluation.
    pub fn deterministic_action(&self, obs: &DVector<f64>) -> Result<DVector<f64>, PolicyError> {
        Ok(self.net_forward(obs)?.0)
    }

    pub fn value(&self, obs: &DVector<f64>) -> Result<f64, PolicyError> {
        Ok(self.net_forward(obs)?.1)
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std
            .apply(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count() + self.log_std.len()
    }

    /// Trainable parameters as one flat vector (actor, critic, log-std); the
    /// normalizer is statistics, not a trained parameter.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.actor.append_flat(&mut out);
        self.critic.append_flat(&mut out);
        out.extend(self.log_std.iter());
        DVector::from_vec(out)
    }

    pub fn set_from_flat(&mut self, flat: &DVector<f64>) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut it = flat.iter().copied();
        self.actor.read_flat(&mut it);
        self.critic.read_flat(&mut it);
        for v in self.log_std.iter_mut() {
            *v = it.next().unwrap();
        }
        self.clamp_log_std();
    }
}

/// Log-density of `action` under N(mean, diag(exp(log_std)²)).
pub fn gaussian_log_prob(mean: &DVector<f64>, log_std: &DVector<f64>, action: &DVector<f64>) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    mean.iter()
        .zip(log_std.iter())
        .zip(action.iter())
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -HALF_LN_2PI - s - 0.5 * z * z
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian (independent of the mean).
pub fn gaussian_entropy(log_std: &DVector<f64>) -> f64 {
    const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
    log_std.iter().map(|s| HALF_LN_2PI_E + s).sum()
}

/// Applies the warm-up-scaled residual correction to a base action and clamps
/// the result into the actuation limits: q into the joint range, wrench
/// components into the force/torque bounds. A zero correction reproduces the
/// base action exactly (up to the same clamping the simulator applies).
pub fn residual_combine(
    base: &Action,
    delta: &Action,
    warmup: f64,
    model: &HandModel,
    params: &PhysicsParams,
) -> Result<Action, PolicyError> {
    if !(0.0..=1.0).contains(&warmup) {
        return Err(PolicyError::RangeError(format!(
            "warm-up factor {warmup} outside [0, 1]"
        )));
    }
    let k = model.dof();
    for a in [base, delta] {
        if a.q_target.len() != k {
            return Err(PolicyError::DimensionMismatch {
                expected: k,
                got: a.q_target.len(),
            });
        }
    }
    let (lo, hi) = model.limit_vectors();
    let mut q = &base.q_target + &delta.q_target * warmup;
    for (i, v) in q.iter_mut().enumerate() {
        *v = v.clamp(lo[i], hi[i]);
    }
    let mut wrench = base.wrench;
    wrench.linear += delta.wrench.linear * warmup;
    wrench.angular += delta.wrench.angular * warmup;
    let f = params.wrench_force_limit;
    let t = params.wrench_torque_limit;
    wrench.linear.apply(|v| *v = v.clamp(-f, f));
    wrench.angular.apply(|v| *v = v.clamp(-t, t));
    Ok(Action {
        q_target: q,
        wrench,
    })
}

/// Serializes the policy and its metadata atomically. The format is
/// self-describing: magic, version, JSON metadata, then sized matrices in
/// row-major little-endian f64.
pub fn save_checkpoint(
    path: &std::path::Path,
    params: &PolicyParams,
    meta: &CheckpointMeta,
) -> Result<(), PolicyError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta_json =
        serde_json::to_vec(meta).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    write_mlp(&mut buf, &params.actor);
    write_mlp(&mut buf, &params.critic);
    write_f64_seq(&mut buf, params.log_std.iter().copied());
    buf.extend_from_slice(&(params.normalizer.dim() as u32).to_le_bytes());
    for v in params.normalizer.mean.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in params.normalizer.m2.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&params.normalizer.count.to_le_bytes());
    buf.push(params.normalizer.frozen as u8);
    crate::config::write_atomic(path, &buf)
        .map_err(|e| PolicyError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load_checkpoint(
    path: &std::path::Path,
) -> Result<(PolicyParams, CheckpointMeta), PolicyError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PolicyError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(PolicyError::Checkpoint("unrecognized file magic".into()));
    }
    let version = r.take_u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_len = r.take_u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| PolicyError::Checkpoint(format!("metadata: {e}")))?;
    let actor = read_mlp(&mut r)?;
    let critic = read_mlp(&mut r)?;
    let log_std = DVector::from_vec(r.take_f64_seq()?);
    let dim = r.take_u32()? as usize;
    let mean = DVector::from_vec(r.take_f64s(dim)?);
    let m2 = DVector::from_vec(r.take_f64s(dim)?);
    let count = r.take_f64()?;
    let frozen = r.take(1)?[0] != 0;
    let params = PolicyParams {
        actor,
        critic,
        log_std,
        normalizer: ObsNormalizer {
            mean,
            m2,
            count,
            frozen,
        },
    };
    if params.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::Checkpoint(
            "checkpoint contains non-finite parameters".into(),
        ));
    }
    if params.normalizer.dim() != params.obs_dim() || params.log_std.len() != params.act_dim() {
        return Err(PolicyError::Checkpoint(
            "inconsistent shapes inside checkpoint".into(),
        ));
    }
    Ok((params, meta))
}

fn write_mlp(buf: &mut Vec<u8>, mlp: &Mlp) {
    buf.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
    for layer in &mlp.layers {
        buf.extend_from_slice(&(layer.w.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.w.ncols() as u32).to_le_bytes());
        for r in 0..layer.w.nrows() {
            for c in 0..layer.w.ncols() {
                buf.extend_from_slice(&layer.w[(r, c)].to_le_bytes());
            }
        }
        for v in layer.b.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_mlp(r: &mut Reader) -> Result<Mlp, PolicyError> {
    let n_layers = r.take_u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(PolicyError::Checkpoint(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.take_u32()? as usize;
        let cols = r.take_u32()? as usize;
        if rows == 0 || cols == 0 || rows * cols > 100_000_000 {
            return Err(PolicyError::Checkpoint("implausible layer shape".into()));
        }
        let w = DMatrix::from_row_slice(rows, cols, &r.take_f64s(rows * cols)?);
        let b = DVector::from_vec(r.take_f64s(rows)?);
        layers.push(net::Layer { w, b });
    }
    Ok(Mlp { layers })
}

fn write_f64_seq(buf: &mut Vec<u8>, it: impl ExactSizeIterator<Item = f64>) {
    buf.extend_from_slice(&(it.len() as u32).to_le_bytes());
    for v in it {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        if self.pos + n > self.buf.len() {
            return Err(PolicyError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_f64(&mut self) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64s(&mut self, n: usize) -> Result<Vec<f64>, PolicyError> {
        let bytes = self.take(8 * n)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn take_f64_seq(&mut self) -> Result<Vec<f64>, PolicyError> {
        let n = self.take_u32()? as usize;
        if n > 1_000_000 {
            return Err(PolicyError::Checkpoint("implausible vector length".into()));
        }
        self.take_f64s(n)
    }
}
