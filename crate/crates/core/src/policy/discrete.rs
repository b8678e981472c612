//! Discrete-token ablation: each end-effector action dimension binned into
//! 256 levels and predicted with cross-entropy, from the agent view and the
//! instruction only.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{downsample, EncoderConfig, EncoderInput, FrozenEncoder};
use super::flow::{action_targets, calibrate_encoder, episode_inputs};
use super::{epoch_order, meta_or_default, stack, Controller, Policy, PolicyKind};
use crate::demo::{cartesian_action, quantize};
use crate::episode::{ActionKind, EpisodeRecord, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::loss::{argmax, grouped_cross_entropy};
use crate::nn::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Mlp, MlpSpec};
use crate::sim::{Action, Env, Observation, SceneSpec, View, PANEL_STATE_DIM};

/// Uniform bins over `[lo, hi]` per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBins {
    pub bins: usize,
    pub lo: [f64; ACTION_DIM],
    pub hi: [f64; ACTION_DIM],
}

impl ActionBins {
    /// Bounds from the per-step caps; adhesion spans `[-1, 1]`.
    pub fn from_caps(bins: usize, max_pos: f64, max_rot: f64) -> Self {
        let mut hi = [1.0; ACTION_DIM];
        hi[..3].fill(max_pos);
        hi[3..6].fill(max_rot);
        Self { bins, lo: hi.map(|v| -v), hi }
    }

    pub fn to_bin(&self, d: usize, v: f64) -> usize {
        let u = (v - self.lo[d]) / (self.hi[d] - self.lo[d]);
        ((u * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }

    /// Bin centre.
    pub fn value(&self, d: usize, b: usize) -> f64 {
        self.lo[d] + (b as f64 + 0.5) * (self.hi[d] - self.lo[d]) / self.bins as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteConfig {
    pub encoder: EncoderConfig,
    pub hidden: Vec<usize>,
    pub bins: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Same target smoothing as the flow head.
    pub smooth: bool,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        Self {
            // Agent view and instruction only.
            encoder: EncoderConfig { wrist_dim: 0, state_dim: 0, agent_dim: 56, ..EncoderConfig::default() },
            hidden: vec![256, 256],
            bins: 256,
            epochs: 30,
            batch: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            smooth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicy {
    pub encoder: FrozenEncoder,
    pub net: Mlp<f64>,
    pub bins: ActionBins,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTraining {
    pub policy: DiscretePolicy,
    pub loss: Vec<f64>,
    pub samples: usize,
}

pub fn train_discrete(demos: &[EpisodeRecord], scene: Arc<SceneSpec>, cfg: &DiscreteConfig) -> Result<DiscreteTraining> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("discrete head needs demonstrations".into()));
    }
    if demos.iter().any(|r| r.action_kind != ActionKind::Cartesian) {
        return Err(Error::invalid("demonstration", "discrete head trains on end-effector actions"));
    }
    if cfg.bins < 2 {
        return Err(Error::invalid("bins", "need at least two"));
    }
    let mut encoder = FrozenEncoder::new(cfg.encoder.clone(), scene.chain.n_joints(), PANEL_STATE_DIM, ACTION_DIM)?;
    calibrate_encoder(&mut encoder, &scene, demos, 4)?;
    let p = scene.params;
    let bins = ActionBins::from_caps(cfg.bins, p.max_step_pos, p.max_step_rot);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in demos {
        let targets = action_targets(rec, cfg.smooth);
        for (t, (hist, v)) in episode_inputs(&scene, rec, cfg.encoder.frames)?.into_iter().enumerate() {
            let input = EncoderInput { agent_frames: &hist, wrist: &v.wrist, q: &v.q, s: &v.s, a_prev: &v.a_prev, instruction: &rec.instruction };
            xs.push(encoder.encode(&input)?);
            ys.push((0..ACTION_DIM).map(|d| bins.to_bin(d, targets[t][d])).collect::<Vec<_>>());
        }
    }
    let mut widths = vec![encoder.dim()];
    widths.extend(&cfg.hidden);
    widths.push(ACTION_DIM * cfg.bins);
    let mut net = Mlp::init(&MlpSpec::relu(&widths, cfg.seed)?);
    let mut opt = AdamWState::new(net.params());
    let ocfg = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::with_lr(cfg.lr) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD15C);
    let mut loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in epoch_order(xs.len(), &mut rng).chunks(cfg.batch.max(1)) {
            let x = stack(&chunk.iter().map(|&i| xs[i].as_slice()).collect::<Vec<_>>());
            let labels: Vec<usize> = chunk.iter().flat_map(|&i| ys[i].iter().copied()).collect();
            let (out, cache) = net.forward(&x)?;
            let (l, g) = grouped_cross_entropy(&out, cfg.bins, &labels)?;
            let grads = net.backward(&cache, &g)?;
            adamw_step(net.params_mut(), &grads.params, &mut opt, &ocfg)?;
            sum += l * chunk.len() as f64;
            n += chunk.len();
        }
        loss.push(sum / n as f64);
    }
    let samples = xs.len();
    Ok(DiscreteTraining { policy: DiscretePolicy { encoder, net, bins, instruction: demos[0].instruction.clone() }, loss, samples })
}

impl DiscretePolicy {
    /// Most likely bin centre per dimension.
    pub fn predict(&self, feature: &[f64]) -> Result<[f64; ACTION_DIM]> {
        let logits = self.net.predict_one(feature)?;
        let mut a = [0.0; ACTION_DIM];
        for (d, v) in a.iter_mut().enumerate() {
            *v = self.bins.value(d, argmax(&logits[d * self.bins.bins..(d + 1) * self.bins.bins]));
        }
        Ok(a)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths: Vec<usize> = ck.meta("widths")?.split(',').map(|w| w.parse().map_err(|_| Error::Checkpoint("bad widths".into()))).collect::<Result<_>>()?;
        let spec = MlpSpec::relu(&widths, meta_or_default(ck, "seed", 0)?)?;
        let n: usize = ck.meta_parse("bins")?;
        let bounds = |key: &str| -> Result<[f64; ACTION_DIM]> {
            let v = ck.tensor::<f64>(key)?.into_data();
            v.try_into().map_err(|_| Error::Checkpoint(format!("{key} has the wrong length")))
        };
        Ok(Self {
            encoder: FrozenEncoder::from_checkpoint(ck)?,
            net: Mlp::from_params(&spec, ck.tensors_with_prefix("head."))?,
            bins: ActionBins { bins: n, lo: bounds("bins.lo")?, hi: bounds("bins.hi")? },
            instruction: ck.meta("instruction")?.to_string(),
        })
    }
}

struct DiscreteController<'a> {
    policy: &'a DiscretePolicy,
    frames: VecDeque<Vec<f64>>,
    a_prev: Vec<f64>,
}

impl Controller for DiscreteController<'_> {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action> {
        let p = self.policy;
        self.frames.push_back(downsample(&env.render(View::Agent))?);
        while self.frames.len() > p.encoder.cfg.frames {
            self.frames.pop_front();
        }
        let frames: Vec<Vec<f64>> = self.frames.iter().cloned().collect();
        let input = EncoderInput { agent_frames: &frames, wrist: &[], q: &obs.q.q, s: &obs.s.to_array(), a_prev: &self.a_prev, instruction: &p.instruction };
        let a = quantize(&p.predict(&p.encoder.encode(&input)?)?);
        self.a_prev = a.iter().map(|&v| v as f64).collect();
        Ok(cartesian_action(&a))
    }
}

impl Policy for DiscretePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::FlowDiscrete
    }

    fn n_params(&self) -> usize {
        self.net.spec().n_params()
    }

    fn controller(&self, _seed: u64) -> Box<dyn Controller + '_> {
        Box::new(DiscreteController { policy: self, frames: VecDeque::new(), a_prev: vec![0.0; ACTION_DIM] })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck.set_meta("widths", self.net.spec().widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        ck.set_meta("seed", self.net.spec().seed);
        ck.set_meta("bins", self.bins.bins);
        ck.set_meta("instruction", &self.instruction);
        self.encoder.push_to(&mut ck);
        ck.push_all("head.", self.net.params());
        ck.push("bins.lo", &super::vec_tensor(&self.bins.lo));
        ck.push("bins.hi", &super::vec_tensor(&self.bins.hi));
        ck
    }
}
