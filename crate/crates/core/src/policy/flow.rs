//! Flow-matching action-chunk head on top of the frozen encoder.
//!
//! The head is a vector field `v(x, t | c)` over flattened chunks of `H`
//! standardized end-effector actions. It is trained to match `x₁ − x₀`
//! along the linear interpolant between a standard normal draw `x₀` and a
//! demonstration chunk `x₁`, and sampled by a few Euler steps.
//!
//! The MLP emits a chunk estimate `m` and a gain `h`; the field is
//! `v = softplus(h)·(m − x)`. The exact field of the linear interpolant,
//! `(E[x₁ | x, c] − x)/(1 − t)`, has this form, and the skip keeps the
//! network from having to carry `x` through its hidden layers.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::encoder::{downsample, EncoderConfig, EncoderInput, FrozenEncoder};
use super::{epoch_order, meta_or_default, stack, Controller, Normalizer, Policy, PolicyKind};
use crate::demo::{cartesian_action, quantize};
use crate::episode::{smooth_trajectory, window_for_rate, EpisodeRecord, ACTION_DIM};
use crate::error::{Error, Result};
use crate::kinematics::CartesianDelta;
use crate::nn::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Gradients, Mlp, MlpSpec, Tensor};
use crate::sim::{Action, Env, Observation, PerturbSpec, SceneSpec, View, PANEL_STATE_DIM};

/// `(t, sin 2πt, cos 2πt)`.
pub fn time_embedding(t: f64) -> [f64; 3] {
    [t, (TAU * t).sin(), (TAU * t).cos()]
}

/// `ψ_t = (1 − t)·x₀ + t·x₁` and `∂ψ_t/∂t = x₁ − x₀`.
pub fn interpolant(x0: &[f64], x1: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let psi = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let d = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    (psi, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowHead {
    pub net: Mlp<f64>,
    pub horizon: usize,
    pub act_dim: usize,
    pub cond_dim: usize,
}

impl FlowHead {
    pub fn new(horizon: usize, act_dim: usize, cond_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let x = horizon * act_dim;
        let mut widths = vec![x + 3 + cond_dim];
        widths.extend(hidden);
        widths.push(x + 1);
        Ok(Self { net: Mlp::init(&MlpSpec::relu(&widths, seed)?), horizon, act_dim, cond_dim })
    }

    pub fn x_dim(&self) -> usize {
        self.horizon * self.act_dim
    }

    pub fn input(&self, x: &[f64], t: f64, cond: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.net.spec().input_dim());
        row.extend_from_slice(x);
        row.extend_from_slice(&time_embedding(t));
        row.extend_from_slice(cond);
        row
    }

    pub fn field(&self, x: &[f64], t: f64, cond: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.predict_one(&self.input(x, t, cond))?;
        Ok(combine(&out, x))
    }
}

fn softplus(h: f64) -> f64 {
    if h > 30.0 {
        h
    } else {
        h.exp().ln_1p()
    }
}

fn sigmoid(h: f64) -> f64 {
    1.0 / (1.0 + (-h).exp())
}

/// `softplus(h)·(m − x)` from a raw output row `[m, h]`.
fn combine(out: &[f64], x: &[f64]) -> Vec<f64> {
    let (m, h) = out.split_at(x.len());
    let s = softplus(h[0]);
    m.iter().zip(x).map(|(m, x)| s * (m - x)).collect()
}

/// One training row: condition, standardized target chunk and per-element
/// weight (zero on padding).
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSample {
    pub cond: Vec<f64>,
    pub x1: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Masked mean of `‖v(ψ_t, t | c) − (x₁ − x₀)‖²` over valid elements, with
/// parameter gradients.
pub fn flow_matching_loss(head: &FlowHead, batch: &[&ChunkSample], x0: &[Vec<f64>], t: &[f64]) -> Result<(f64, Gradients<f64>)> {
    if batch.len() != x0.len() || batch.len() != t.len() {
        return Err(Error::dim("flow batch", batch.len(), x0.len().min(t.len())));
    }
    let n = head.x_dim();
    let mut rows = Vec::with_capacity(batch.len());
    let mut psis = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ((s, x0), &t) in batch.iter().zip(x0).zip(t) {
        let (psi, d) = interpolant(x0, &s.x1, t);
        rows.push(head.input(&psi, t, &s.cond));
        psis.push(psi);
        targets.push(d);
    }
    let x = stack(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
    let (out, cache) = head.net.forward(&x)?;
    let total: f64 = batch.iter().map(|s| s.mask.iter().sum::<f64>()).sum();
    let total = total.max(1.0);
    let mut grad = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    for (i, ((s, d), psi)) in batch.iter().zip(&targets).zip(&psis).enumerate() {
        let row = out.row(i);
        let (m, h) = (&row[..n], row[n]);
        let sp = softplus(h);
        let g = grad.row_mut(i);
        let mut dh = 0.0;
        for j in 0..n {
            let e = sp * (m[j] - psi[j]) - d[j];
            loss += s.mask[j] * e * e;
            let dv = 2.0 * s.mask[j] * e / total;
            g[j] = sp * dv;
            dh += dv * (m[j] - psi[j]);
        }
        g[n] = sigmoid(h) * dh;
    }
    Ok((loss / total, head.net.backward(&cache, &grad)?))
}

/// Euler integration of the field from `x0` over `steps` equal steps.
pub fn integrate(head: &FlowHead, cond: &[f64], x0: Vec<f64>, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("ode steps", "must be at least 1"));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let v = head.field(&x, k as f64 * h, cond)?;
        x.iter_mut().zip(&v).for_each(|(x, v)| *x += h * v);
    }
    Ok(x)
}

pub fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draw `x₀` from `rng` and integrate.
pub fn sample_chunk(head: &FlowHead, cond: &[f64], steps: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    integrate(head, cond, standard_normal(head.x_dim(), rng), steps)
}

/// Cosine learning-rate decay ends at this fraction of the initial rate.
pub const MIN_LR_FRACTION: f64 = 0.05;

/// Plain training loop over fixed samples; returns the mean loss per epoch.
pub fn train_head(head: &mut FlowHead, samples: &[ChunkSample], epochs: usize, batch: usize, ocfg: &AdamWConfig<f64>, seed: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no flow-matching samples".into()));
    }
    let mut opt = AdamWState::new(head.net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / epochs as f64).cos());
        let ocfg = AdamWConfig { lr: ocfg.lr * (MIN_LR_FRACTION + (1.0 - MIN_LR_FRACTION) * cos), ..*ocfg };
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in epoch_order(samples.len(), &mut rng).chunks(batch.max(1)) {
            let b: Vec<&ChunkSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let x0: Vec<Vec<f64>> = b.iter().map(|_| standard_normal(head.x_dim(), &mut rng)).collect();
            let t: Vec<f64> = b.iter().map(|_| rng.gen::<f64>()).collect();
            let (l, g) = flow_matching_loss(head, &b, &x0, &t)?;
            adamw_step(head.net.params_mut(), &g.params, &mut opt, &ocfg)?;
            sum += l * b.len() as f64;
            n += b.len();
        }
        curve.push(sum / n as f64);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub encoder: EncoderConfig,
    pub hidden: Vec<usize>,
    pub horizon: usize,
    pub ode_steps: usize,
    /// Environment steps executed from each sampled chunk.
    pub replan_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Smooth the motion channels of the recorded actions with the
    /// rate-scaled window; `g` is kept as recorded.
    pub smooth: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            hidden: vec![256, 256],
            horizon: 50,
            ode_steps: 4,
            replan_every: 10,
            epochs: 60,
            batch: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            smooth: true,
        }
    }
}

/// Per-episode action targets, optionally smoothed.
pub(crate) fn action_targets(rec: &EpisodeRecord, smooth: bool) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = rec.steps.iter().map(|s| s.action.iter().map(|&v| v as f64).collect()).collect();
    if !smooth {
        return raw;
    }
    let motion: Vec<Vec<f64>> = raw.iter().map(|a| a[..ACTION_DIM - 1].to_vec()).collect();
    smooth_trajectory(&motion, window_for_rate(rec.hz as f64))
        .into_iter()
        .zip(&raw)
        .map(|(mut m, a)| {
            m.push(a[ACTION_DIM - 1]);
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    pub encoder: FrozenEncoder,
    pub head: FlowHead,
    pub action_norm: Normalizer,
    pub q_norm: Normalizer,
    pub ode_steps: usize,
    pub replan_every: usize,
    pub instruction: String,
    pub max_step_pos: f64,
    pub max_step_rot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTraining {
    pub policy: FlowPolicy,
    pub loss: Vec<f64>,
    pub samples: usize,
}

impl FlowTraining {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.loss.iter().enumerate() {
            s.push_str(&format!("{},{l:.9}\n", e + 1));
        }
        s
    }

    /// Mean of the last `k` epoch losses.
    pub fn floor(&self, k: usize) -> f64 {
        let tail = &self.loss[self.loss.len().saturating_sub(k.max(1))..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Per-step encoder inputs of one episode, owned.
#[derive(Debug, Clone)]
pub(crate) struct StepView {
    pub agent: Vec<f64>,
    pub wrist: Vec<f64>,
    pub q: Vec<f64>,
    pub s: Vec<f64>,
    pub a_prev: Vec<f64>,
}

/// Replay `rec` and collect what the encoder sees at each step. Stored
/// frames are used when present; otherwise the replayed scene is rendered.
pub(crate) fn replay_views(scene: &Arc<SceneSpec>, rec: &EpisodeRecord, keep: impl Fn(usize) -> bool) -> Result<Vec<(usize, Vec<Vec<f64>>, StepView)>> {
    let mut env = Env::new(scene.clone());
    let perturb = (rec.perturb > 0.0).then_some(PerturbSpec { half_range: rec.perturb as f64 });
    env.reset(perturb.as_ref(), rec.seed)?;
    let mut out = Vec::new();
    let mut a_prev = vec![0.0; ACTION_DIM];
    for (t, step) in rec.steps.iter().enumerate() {
        if keep(t) {
            let agent = match &step.agent_view {
                Some(img) => downsample(img)?,
                None => downsample(&env.render(View::Agent))?,
            };
            let wrist = match &step.wrist_view {
                Some(img) => downsample(img)?,
                None => downsample(&env.render(View::Wrist))?,
            };
            let view = StepView { agent: agent.clone(), wrist, q: step.q64(), s: step.s.iter().map(|&v| v as f64).collect(), a_prev: a_prev.clone() };
            out.push((t, vec![agent], view));
        }
        env.step(&cartesian_action(&step.action))?;
        a_prev = step.action.iter().map(|&v| v as f64).collect();
    }
    Ok(out)
}

/// Agent frames ending at `t`, at most `k` of them.
fn history(frames: &[Vec<f64>], t: usize, k: usize) -> Vec<Vec<f64>> {
    frames[(t + 1).saturating_sub(k)..=t].to_vec()
}

/// Replay with frame history for every step of `rec`.
pub(crate) fn episode_inputs(scene: &Arc<SceneSpec>, rec: &EpisodeRecord, frames: usize) -> Result<Vec<(Vec<Vec<f64>>, StepView)>> {
    let views = replay_views(scene, rec, |_| true)?;
    let agents: Vec<Vec<f64>> = views.iter().map(|(_, _, v)| v.agent.clone()).collect();
    Ok(views.into_iter().map(|(t, _, v)| (history(&agents, t, frames), v)).collect())
}

/// Fit encoder calibration on every `stride`-th step of the training set.
pub(crate) fn calibrate_encoder(enc: &mut FrozenEncoder, scene: &Arc<SceneSpec>, demos: &[EpisodeRecord], stride: usize) -> Result<()> {
    let mut owned = Vec::new();
    for rec in demos {
        for (t, (hist, v)) in episode_inputs(scene, rec, enc.cfg.frames)?.into_iter().enumerate() {
            if t % stride.max(1) == 0 {
                owned.push((hist, v, rec.instruction.clone()));
            }
        }
    }
    let inputs: Vec<EncoderInput> = owned
        .iter()
        .map(|(h, v, ins)| EncoderInput { agent_frames: h, wrist: &v.wrist, q: &v.q, s: &v.s, a_prev: &v.a_prev, instruction: ins })
        .collect();
    enc.calibrate(&inputs)
}

fn check_cartesian(demos: &[EpisodeRecord]) -> Result<()> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("flow head needs demonstrations".into()));
    }
    if let Some(r) = demos.iter().find(|r| r.action_kind != crate::episode::ActionKind::Cartesian) {
        return Err(Error::invalid("demonstration", format!("flow head trains on end-effector actions, got {}", r.action_kind.name())));
    }
    Ok(())
}

pub fn train_flow(demos: &[EpisodeRecord], scene: Arc<SceneSpec>, cfg: &FlowConfig) -> Result<FlowTraining> {
    check_cartesian(demos)?;
    if cfg.horizon == 0 {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let n_joints = scene.chain.n_joints();
    let mut encoder = FrozenEncoder::new(cfg.encoder.clone(), n_joints, PANEL_STATE_DIM, ACTION_DIM)?;
    calibrate_encoder(&mut encoder, &scene, demos, 4)?;
    let targets: Vec<Vec<Vec<f64>>> = demos.iter().map(|r| action_targets(r, cfg.smooth)).collect();
    let action_norm = Normalizer::fit(targets.iter().flatten().map(|v| v.as_slice()), 1e-6)?;
    let qs: Vec<Vec<f64>> = demos.iter().flat_map(|r| r.steps.iter().map(|s| s.q64())).collect();
    let q_norm = Normalizer::fit(qs.iter().map(|v| v.as_slice()), 1e-3)?;

    let mut samples = Vec::new();
    for (rec, raw) in demos.iter().zip(&targets) {
        let acts: Vec<Vec<f64>> = raw.iter().map(|a| action_norm.apply(a)).collect();
        for (t, (hist, v)) in episode_inputs(&scene, rec, cfg.encoder.frames)?.into_iter().enumerate() {
            let input = EncoderInput { agent_frames: &hist, wrist: &v.wrist, q: &v.q, s: &v.s, a_prev: &v.a_prev, instruction: &rec.instruction };
            let mut cond = encoder.encode(&input)?;
            cond.extend(q_norm.apply(&v.q));
            let mut x1 = vec![0.0; cfg.horizon * ACTION_DIM];
            let mut mask = vec![0.0; cfg.horizon * ACTION_DIM];
            for (k, a) in acts[t..].iter().take(cfg.horizon).enumerate() {
                x1[k * ACTION_DIM..][..ACTION_DIM].copy_from_slice(a);
                mask[k * ACTION_DIM..][..ACTION_DIM].fill(1.0);
            }
            samples.push(ChunkSample { cond, x1, mask });
        }
    }
    let cond_dim = encoder.dim() + n_joints;
    let mut head = FlowHead::new(cfg.horizon, ACTION_DIM, cond_dim, &cfg.hidden, cfg.seed)?;
    let ocfg = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::with_lr(cfg.lr) };
    let loss = train_head(&mut head, &samples, cfg.epochs, cfg.batch, &ocfg, cfg.seed ^ 0xF10)?;
    let p = scene.params;
    let policy = FlowPolicy {
        encoder,
        head,
        action_norm,
        q_norm,
        ode_steps: cfg.ode_steps,
        replan_every: cfg.replan_every.clamp(1, cfg.horizon),
        instruction: demos[0].instruction.clone(),
        max_step_pos: p.max_step_pos,
        max_step_rot: p.max_step_rot,
    };
    Ok(FlowTraining { policy, loss, samples: samples.len() })
}

impl FlowPolicy {
    pub fn condition(&self, frames: &[Vec<f64>], wrist: &[f64], q: &[f64], s: &[f64], a_prev: &[f64]) -> Result<Vec<f64>> {
        let input = EncoderInput { agent_frames: frames, wrist, q, s, a_prev, instruction: &self.instruction };
        let mut c = self.encoder.encode(&input)?;
        c.extend(self.q_norm.apply(q));
        Ok(c)
    }

    /// Standardized chunk to executable actions: deltas capped, adhesion
    /// squashed by `tanh`.
    pub fn decode_chunk(&self, x: &[f64]) -> Vec<[f64; ACTION_DIM]> {
        x.chunks(ACTION_DIM)
            .map(|z| {
                let raw = self.action_norm.invert(z);
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(&raw);
                let mut d = CartesianDelta::from_array(&a).capped(self.max_step_pos, self.max_step_rot);
                d.g = raw[ACTION_DIM - 1].tanh();
                d.to_array()
            })
            .collect()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths: Vec<usize> = ck.meta("widths")?.split(',').map(|w| w.parse().map_err(|_| Error::Checkpoint("bad widths".into()))).collect::<Result<_>>()?;
        let spec = MlpSpec::relu(&widths, meta_or_default(ck, "seed", 0)?)?;
        let horizon: usize = ck.meta_parse("horizon")?;
        let encoder = FrozenEncoder::from_checkpoint(ck)?;
        let head = FlowHead { net: Mlp::from_params(&spec, ck.tensors_with_prefix("head."))?, horizon, act_dim: ACTION_DIM, cond_dim: widths[0] - horizon * ACTION_DIM - 3 };
        if *widths.last().unwrap_or(&0) != horizon * ACTION_DIM + 1 {
            return Err(Error::Checkpoint("flow head output width does not match its horizon".into()));
        }
        Ok(Self {
            encoder,
            head,
            action_norm: Normalizer::from_checkpoint(ck, "action")?,
            q_norm: Normalizer::from_checkpoint(ck, "q")?,
            ode_steps: ck.meta_parse("ode_steps")?,
            replan_every: ck.meta_parse("replan_every")?,
            instruction: ck.meta("instruction")?.to_string(),
            max_step_pos: ck.meta_parse("max_step_pos")?,
            max_step_rot: ck.meta_parse("max_step_rot")?,
        })
    }
}

struct FlowController<'a> {
    policy: &'a FlowPolicy,
    rng: ChaCha8Rng,
    frames: VecDeque<Vec<f64>>,
    chunk: Vec<[f64; ACTION_DIM]>,
    next: usize,
    a_prev: Vec<f64>,
}

impl Controller for FlowController<'_> {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action> {
        let p = self.policy;
        let k = p.encoder.cfg.frames;
        let replan = self.chunk.is_empty() || self.next >= p.replan_every.min(self.chunk.len());
        if k > 1 || replan {
            self.frames.push_back(downsample(&env.render(View::Agent))?);
            while self.frames.len() > k {
                self.frames.pop_front();
            }
        }
        if replan {
            let frames: Vec<Vec<f64>> = self.frames.iter().cloned().collect();
            let wrist = downsample(&env.render(View::Wrist))?;
            let c = p.condition(&frames, &wrist, &obs.q.q, &obs.s.to_array(), &self.a_prev)?;
            self.chunk = p.decode_chunk(&sample_chunk(&p.head, &c, p.ode_steps, &mut self.rng)?);
            self.next = 0;
        }
        let a = quantize(&self.chunk[self.next]);
        self.next += 1;
        self.a_prev = a.iter().map(|&v| v as f64).collect();
        Ok(cartesian_action(&a))
    }
}

impl Policy for FlowPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Flow
    }

    fn n_params(&self) -> usize {
        self.head.net.spec().n_params()
    }

    fn controller(&self, seed: u64) -> Box<dyn Controller + '_> {
        Box::new(FlowController {
            policy: self,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xF10_C0DE),
            frames: VecDeque::new(),
            chunk: Vec::new(),
            next: 0,
            a_prev: vec![0.0; ACTION_DIM],
        })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck.set_meta("widths", self.head.net.spec().widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        ck.set_meta("seed", self.head.net.spec().seed);
        ck.set_meta("horizon", self.head.horizon);
        ck.set_meta("ode_steps", self.ode_steps);
        ck.set_meta("replan_every", self.replan_every);
        ck.set_meta("instruction", &self.instruction);
        ck.set_meta("max_step_pos", self.max_step_pos);
        ck.set_meta("max_step_rot", self.max_step_rot);
        self.encoder.push_to(&mut ck);
        ck.push_all("head.", self.head.net.params());
        self.action_norm.push_to(&mut ck, "action");
        self.q_norm.push_to(&mut ck, "q");
        ck
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(targets: &[f64], n: usize) -> Vec<ChunkSample> {
        (0..n).map(|i| ChunkSample { cond: vec![1.0], x1: vec![targets[i % targets.len()]], mask: vec![1.0] }).collect()
    }

    #[test]
    fn interpolant_endpoints_and_derivative() {
        let (x0, x1) = ([0.3, -1.2, 2.0], [1.0, 0.5, -0.25]);
        assert_eq!(interpolant(&x0, &x1, 0.0).0, x0.to_vec());
        assert_eq!(interpolant(&x0, &x1, 1.0).0, x1.to_vec());
        let (t, h) = (0.37, 1e-6);
        let (_, d) = interpolant(&x0, &x1, t);
        let (a, b) = (interpolant(&x0, &x1, t + h).0, interpolant(&x0, &x1, t - h).0);
        for i in 0..3 {
            assert!(((a[i] - b[i]) / (2.0 * h) - d[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_field_has_zero_loss() {
        // The condition carries (x₀, x₁), so a linear head can output x₁ − x₀.
        let none = crate::nn::Activation::None;
        // m = ψ − x₀ + x₁ and softplus(h) = 1.
        let spec = MlpSpec::new(vec![6, 1, 2], vec![none, none], 0).unwrap();
        let t = |shape: &[usize], v: Vec<f64>| Tensor::from_vec(shape, v).unwrap();
        let gain = (std::f64::consts::E - 1.0).ln();
        let params = vec![t(&[6, 1], vec![1.0, 0.0, 0.0, 0.0, -1.0, 1.0]), t(&[1], vec![0.0]), t(&[1, 2], vec![1.0, 0.0]), t(&[2], vec![0.0, gain])];
        let head = FlowHead { net: Mlp::from_params(&spec, params).unwrap(), horizon: 1, act_dim: 1, cond_dim: 2 };
        let x0 = [0.1, -1.3, 0.8];
        let samples: Vec<ChunkSample> =
            [0.7, -0.4, 2.5].iter().zip(x0).map(|(&x1, x0)| ChunkSample { cond: vec![x0, x1], x1: vec![x1], mask: vec![1.0] }).collect();
        let b: Vec<&ChunkSample> = samples.iter().collect();
        let x0: Vec<Vec<f64>> = x0.iter().map(|&v| vec![v]).collect();
        let (l, g) = flow_matching_loss(&head, &b, &x0, &[0.0, 0.35, 0.9]).unwrap();
        assert!(l < 1e-28, "{l}");
        assert!(g.params.iter().all(|p| p.data().iter().all(|v| v.abs() < 1e-13)));
    }

    #[test]
    fn single_euler_step_is_one_field_evaluation() {
        let head = FlowHead::new(2, 3, 4, &[16], 1).unwrap();
        let c = [0.1, 0.2, 0.3, 0.4];
        let x0: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let v = head.field(&x0, 0.0, &c).unwrap();
        let x = integrate(&head, &c, x0.clone(), 1).unwrap();
        for i in 0..6 {
            assert_eq!(x[i], x0[i] + v[i]);
        }
        assert!(integrate(&head, &c, x0, 0).is_err());
    }

    #[test]
    fn padding_is_excluded_from_the_mean() {
        let head = FlowHead::new(2, 1, 1, &[8], 2).unwrap();
        let a = ChunkSample { cond: vec![0.5], x1: vec![1.0, 0.0], mask: vec![1.0, 0.0] };
        let (x0, t) = (vec![0.2, 0.3], 0.4);
        let (l, _) = flow_matching_loss(&head, &[&a], std::slice::from_ref(&x0), &[t]).unwrap();
        let (psi, d) = interpolant(&x0, &a.x1, t);
        let v = head.field(&psi, t, &a.cond).unwrap();
        assert!((l - (v[0] - d[0]).powi(2)).abs() < 1e-15);
    }

    fn trained(targets: &[f64], seed: u64) -> FlowHead {
        let mut head = FlowHead::new(1, 1, 1, &[64, 64], seed).unwrap();
        let ocfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::with_lr(2e-3) };
        train_head(&mut head, &toy(targets, 512), 150, 64, &ocfg, seed).unwrap();
        head
    }

    #[test]
    fn point_mass_is_recovered() {
        let head = trained(&[0.8], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = |steps: usize, rng: &mut ChaCha8Rng| -> f64 {
            (0..400).map(|_| (sample_chunk(&head, &[1.0], steps, rng).unwrap()[0] - 0.8).abs()).sum::<f64>() / 400.0
        };
        let e4 = err(4, &mut rng);
        assert!(e4 < 0.05, "{e4}");
        assert!(err(8, &mut rng) <= err(1, &mut rng) + 0.01);
    }

    #[test]
    fn bimodal_targets_hit_both_modes() {
        let head = trained(&[1.0, -1.0], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<f64> = (0..1000).map(|_| sample_chunk(&head, &[1.0], 4, &mut rng).unwrap()[0]).collect();
        let up = draws.iter().filter(|&&x| (x - 1.0).abs() < 0.5).count();
        let down = draws.iter().filter(|&&x| (x + 1.0).abs() < 0.5).count();
        assert!(up >= 300 && down >= 300, "{up} {down}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let head = FlowHead::new(3, 2, 2, &[8], 7).unwrap();
        let draw = |s| sample_chunk(&head, &[0.1, 0.2], 4, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }
}
