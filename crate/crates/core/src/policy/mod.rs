//! Learned and reference controllers sharing one rollout interface.

pub mod bc;
pub mod discrete;
pub mod dqn;
pub mod encoder;
pub mod flow;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demo::{cartesian_action, quantize, Demonstrator};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Tensor};
use crate::sim::{Action, Env, Observation};

pub use bc::{detect_overfit, BcConfig, BcPolicy, OverfitReport};
pub use discrete::{DiscreteConfig, DiscretePolicy};
pub use dqn::{DqnConfig, DqnPolicy};
pub use encoder::{EncoderConfig, FrozenEncoder};
pub use flow::{FlowConfig, FlowPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Bc,
    Dqn,
    Flow,
    FlowDiscrete,
    Scripted,
    Random,
}

impl PolicyKind {
    pub const LEARNED: [PolicyKind; 4] = [PolicyKind::Bc, PolicyKind::Dqn, PolicyKind::Flow, PolicyKind::FlowDiscrete];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Bc => "bc",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Flow => "flow",
            PolicyKind::FlowDiscrete => "flow-discrete",
            PolicyKind::Scripted => "scripted",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [PolicyKind::Bc, PolicyKind::Dqn, PolicyKind::Flow, PolicyKind::FlowDiscrete, PolicyKind::Scripted, PolicyKind::Random]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("policy kind", format!("unknown policy {s:?}")))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-rollout state of a policy.
pub trait Controller {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action>;
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;
    fn n_params(&self) -> usize;
    /// Fresh controller for one rollout; `seed` drives any sampling.
    fn controller(&self, seed: u64) -> Box<dyn Controller + '_>;
    fn to_checkpoint(&self) -> Checkpoint;
}

pub fn save_policy(policy: &dyn Policy, path: &Path) -> Result<()> {
    policy.to_checkpoint().save(path)
}

pub fn load_policy(path: &Path) -> Result<Box<dyn Policy>> {
    policy_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn policy_from_checkpoint(ck: &Checkpoint) -> Result<Box<dyn Policy>> {
    let kind = PolicyKind::parse(ck.meta("kind")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(match kind {
        PolicyKind::Bc => Box::new(BcPolicy::from_checkpoint(ck)?),
        PolicyKind::Dqn => Box::new(DqnPolicy::from_checkpoint(ck)?),
        PolicyKind::Flow => Box::new(FlowPolicy::from_checkpoint(ck)?),
        PolicyKind::FlowDiscrete => Box::new(DiscretePolicy::from_checkpoint(ck)?),
        PolicyKind::Scripted | PolicyKind::Random => {
            return Err(Error::Checkpoint(format!("{kind} policies have no checkpoint")));
        }
    })
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Statistics of `rows`; deviations below `floor` are raised to it.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, floor: f64) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for r in rows {
            if sum.is_empty() {
                sum = vec![0.0; r.len()];
                sq = vec![0.0; r.len()];
            }
            if r.len() != sum.len() {
                return Err(Error::dim("normalizer row", sum.len(), r.len()));
            }
            for (i, &v) in r.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset("no rows to normalize".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(floor)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    /// [`apply`](Self::apply) followed by clipping to `±limit`.
    pub fn apply_clipped(&self, x: &[f64], limit: f64) -> Vec<f64> {
        self.apply(x).into_iter().map(|v| v.clamp(-limit, limit)).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }

    pub fn push_to(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.push(format!("{prefix}.mean"), &vec_tensor(&self.mean));
        ck.push(format!("{prefix}.std"), &vec_tensor(&self.std));
    }

    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let mean = ck.tensor::<f64>(&format!("{prefix}.mean"))?.into_data();
        let std = ck.tensor::<f64>(&format!("{prefix}.std"))?.into_data();
        if mean.len() != std.len() {
            return Err(Error::Checkpoint(format!("{prefix}: mean and std lengths differ")));
        }
        Ok(Self { mean, std })
    }
}

pub(crate) fn vec_tensor(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[v.len()], v.to_vec()).expect("1-d shape matches")
}

/// Stack rows into a `[rows, cols]` tensor.
pub(crate) fn stack(rows: &[&[f64]]) -> Tensor<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::from_vec(&[rows.len(), cols], data).expect("rows share a width")
}

/// Shuffled index order for one epoch.
pub(crate) fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    idx
}

pub(crate) fn meta_or_default<V: std::str::FromStr>(ck: &Checkpoint, key: &str, default: V) -> Result<V> {
    if ck.metadata.contains_key(key) {
        ck.meta_parse(key)
    } else {
        Ok(default)
    }
}

/// Replays the scripted demonstrator: the upper bound for any imitator.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    pub jitter: f64,
}

struct ScriptedController {
    seed: u64,
    jitter: f64,
    inner: Option<Demonstrator>,
}

impl Controller for ScriptedController {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action> {
        let (seed, jitter) = (self.seed, self.jitter);
        let demo = self.inner.get_or_insert_with(|| Demonstrator::new(env.scene_arc(), seed, jitter, 0.0));
        Ok(cartesian_action(&quantize(&demo.act(obs))))
    }
}

impl Policy for ScriptedPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Scripted
    }

    fn n_params(&self) -> usize {
        0
    }

    fn controller(&self, seed: u64) -> Box<dyn Controller + '_> {
        Box::new(ScriptedController { seed, jitter: self.jitter, inner: None })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck
    }
}

/// Uniform random Cartesian increments and adhesion commands.
#[derive(Debug, Clone, Default)]
pub struct RandomPolicy;

struct RandomController(ChaCha8Rng);

impl Controller for RandomController {
    fn act(&mut self, env: &Env, _obs: &Observation) -> Result<Action> {
        let p = env.scene().params;
        let mut a = [0.0; 7];
        for (i, v) in a.iter_mut().enumerate() {
            let cap = if i < 3 { p.max_step_pos } else if i < 6 { p.max_step_rot } else { 1.0 };
            *v = self.0.gen_range(-cap..=cap);
        }
        Ok(cartesian_action(&quantize(&a)))
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn n_params(&self) -> usize {
        0
    }

    fn controller(&self, seed: u64) -> Box<dyn Controller + '_> {
        Box::new(RandomController(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck
    }
}

/// Share a policy across rollout threads.
pub type SharedPolicy = Arc<dyn Policy>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_round_trip() {
        let rows = [vec![1.0, 5.0, 2.0], vec![3.0, 5.0, -2.0]];
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 1e-6).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0, 0.0]);
        assert_eq!(n.std, vec![1.0, 1e-6, 2.0]);
        let z = n.apply(&rows[0]);
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        assert_eq!(n.invert(&z), rows[0]);
        assert!(Normalizer::fit(std::iter::empty(), 1e-6).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PolicyKind::LEARNED {
            assert_eq!(PolicyKind::parse(k.name()).unwrap(), k);
        }
        assert!(PolicyKind::parse("ppo").is_err());
    }
}
