//! Hierarchical DQN imitation baseline.
//!
//! Two Q-networks (pickup, install) over factored per-joint actions
//! `{-δ, 0, +δ}` plus a two-way adhesion head, switched by a subgoal rule or
//! a learned classifier. Replay is seeded with demonstrations converted to
//! the discrete action set by joint tracking and rewarded with `-α·D₁`;
//! demonstration transitions also carry a large-margin imitation term.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{epoch_order, meta_or_default, stack, Controller, Normalizer, Policy, PolicyKind};
use crate::episode::{inject_noise, ActionKind, EpisodeMeta, EpisodeRecord, EpisodeStep, ACTION_DIM};
use crate::error::{Error, Result};
use crate::geometry::{norm, sub};
use crate::nn::loss::{argmax, grouped_cross_entropy};
use crate::nn::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Mlp, MlpSpec, Tensor};
use crate::sim::{check_success, Action, Env, Observation, PanelState, Phase, PerturbSpec, SceneSpec};

/// Which distance `D₁` measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceDef {
    /// Tool tip to grasp point, then remaining lift once attached.
    EeToPanel,
    /// Panel to target frame: position plus weighted angle.
    PanelToTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub alpha: f64,
    pub distance: DistanceDef,
    /// Contact-force penalty weight, applied in the install phase.
    pub beta: f64,
    /// Metres per radian in the install distance.
    pub angular_weight: f64,
}

impl RewardSpec {
    pub fn pickup(alpha: f64) -> Self {
        Self { alpha, distance: DistanceDef::EeToPanel, beta: 0.0, angular_weight: 0.1 }
    }

    pub fn install(alpha: f64, beta: f64) -> Self {
        Self { alpha, distance: DistanceDef::PanelToTarget, beta, angular_weight: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("reward alpha", "must be positive"));
        }
        Ok(())
    }
}

/// `R₁ = −α·D₁`.
pub fn shaped_reward(spec: &RewardSpec, d1: f64) -> f64 {
    -spec.alpha * d1
}

/// State quantities the distances depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardState {
    pub tool: crate::geometry::Vec3<f64>,
    pub panel: PanelState,
    pub lifted: f64,
    pub force: f64,
}

impl RewardState {
    pub fn from_env(env: &Env) -> Self {
        Self { tool: env.tool_pose().position, panel: *env.panel(), lifted: env.lifted(), force: env.force().magnitude() }
    }
}

pub fn distance(spec: &RewardSpec, scene: &SceneSpec, st: &RewardState) -> f64 {
    let lift = scene.params.lift_height;
    match spec.distance {
        DistanceDef::EeToPanel => {
            if st.panel.attached {
                (lift - st.lifted).max(0.0)
            } else {
                let grasp = st.panel.pose.transform_point([0.0, 0.0, scene.panel_half[2]]);
                norm(sub(st.tool, grasp)) + lift
            }
        }
        DistanceDef::PanelToTarget => {
            let p = norm(sub(st.panel.pose.position, scene.target_frame.position));
            p + spec.angular_weight * st.panel.pose.orientation.angle_to(&scene.target_frame.orientation)
        }
    }
}

/// `−α·D₁` on the phase distance, plus `−β·|f|` for installation.
pub fn phase_reward(spec: &RewardSpec, scene: &SceneSpec, st: &RewardState) -> f64 {
    shaped_reward(spec, distance(spec, scene, st)) - spec.beta * st.force
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubGoal {
    Pickup,
    Install,
}

/// Rule-based switch: pickup until the pickup predicate holds.
pub fn subgoal_switch(scene: &SceneSpec, panel: &PanelState, lifted: f64) -> SubGoal {
    if check_success(scene, panel, lifted, Phase::Pickup) {
        SubGoal::Install
    } else {
        SubGoal::Pickup
    }
}

/// Factored discrete actions: per joint `{−δ, 0, +δ}` (indices 0, 1, 2)
/// and adhesion `{release, engage}` (indices 0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteActions {
    pub n_joints: usize,
    pub delta: f64,
}

impl DiscreteActions {
    pub fn heads(&self) -> Vec<usize> {
        let mut h = vec![3; self.n_joints];
        h.push(2);
        h
    }

    pub fn zero(&self) -> Vec<usize> {
        let mut a = vec![1; self.n_joints];
        a.push(0);
        a
    }

    pub fn to_action(&self, a: &[usize]) -> Action {
        let dq = a[..self.n_joints].iter().map(|&i| (i as f64 - 1.0) * self.delta).collect();
        Action::Joint { dq, g: if a[self.n_joints] == 1 { 1.0 } else { -1.0 } }
    }

    /// Stored form: increments padded to six, then `g`.
    pub fn encode(&self, a: &[usize]) -> [f32; ACTION_DIM] {
        let mut out = [0f32; ACTION_DIM];
        for (j, &i) in a[..self.n_joints].iter().enumerate() {
            out[j] = ((i as f64 - 1.0) * self.delta) as f32;
        }
        out[ACTION_DIM - 1] = if a[self.n_joints] == 1 { 1.0 } else { -1.0 };
        out
    }

    pub fn decode(&self, v: &[f32; ACTION_DIM]) -> Vec<usize> {
        let mut a: Vec<usize> = v[..self.n_joints].iter().map(|&d| ((d as f64 / self.delta).round().clamp(-1.0, 1.0) + 1.0) as usize).collect();
        a.push(usize::from(v[ACTION_DIM - 1] >= 0.5));
        a
    }
}

/// Q-network with one output group per action head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub net: Mlp<f64>,
    pub heads: Vec<usize>,
}

impl QNet {
    pub fn new(input: usize, hidden: &[usize], heads: Vec<usize>, seed: u64) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(hidden);
        widths.push(heads.iter().sum());
        Ok(Self { net: Mlp::init(&MlpSpec::relu(&widths, seed)?), heads })
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.heads.len());
        let mut acc = 0;
        for &h in &self.heads {
            o.push(acc);
            acc += h;
        }
        o
    }

    pub fn q_values(&self, o: &[f64]) -> Result<Vec<f64>> {
        self.net.predict_one(o)
    }

    /// Per-head argmax, ties to the lowest index.
    pub fn greedy(&self, o: &[f64]) -> Result<Vec<usize>> {
        let q = self.q_values(o)?;
        Ok(self.offsets().iter().zip(&self.heads).map(|(&off, &h)| argmax(&q[off..off + h])).collect())
    }
}

/// With probability `epsilon` a uniformly random action, else greedy.
pub fn select_action(q: &QNet, o: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Ok(q.heads.iter().map(|&h| rng.gen_range(0..h)).collect())
    } else {
        q.greedy(o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub o: Vec<f64>,
    pub a: Vec<usize>,
    pub r: f64,
    pub o2: Vec<f64>,
    pub done: bool,
    pub demo: bool,
}

/// Fixed-capacity FIFO with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), data: VecDeque::new() }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample<'a>(&'a self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.data[rng.gen_range(0..self.data.len())]).collect()
    }
}

/// Per-row, per-head TD targets `r + γ·max_a' Q̄_j(o', a')`, without
/// bootstrap on terminal transitions.
pub fn td_targets(target: &QNet, batch: &[&Transition], gamma: f64) -> Result<Vec<Vec<f64>>> {
    let x2 = stack(&batch.iter().map(|t| t.o2.as_slice()).collect::<Vec<_>>());
    let q2 = target.net.predict(&x2)?;
    let offs = target.offsets();
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            offs.iter()
                .zip(&target.heads)
                .map(|(&off, &h)| {
                    let row = &q2.row(i)[off..off + h];
                    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if t.done {
                        t.r
                    } else {
                        t.r + gamma * best
                    }
                })
                .collect()
        })
        .collect())
}

/// Mean over rows and heads of `(y − Q(o, a))²` and its gradient with
/// respect to the network output.
pub fn td_loss(q: &QNet, out: &Tensor<f64>, batch: &[&Transition], targets: &[Vec<f64>]) -> (f64, Tensor<f64>) {
    let offs = q.offsets();
    let scale = (batch.len() * q.heads.len()).max(1) as f64;
    let mut grad = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        for (j, &off) in offs.iter().enumerate() {
            let col = off + t.a[j];
            let d = out.row(i)[col] - targets[i][j];
            loss += d * d;
            grad.row_mut(i)[col] += 2.0 * d / scale;
        }
    }
    (loss / scale, grad)
}

/// Large-margin imitation term on demonstration rows:
/// `max_a [Q(o, a) + m·(a ≠ a_E)] − Q(o, a_E)`, averaged over rows and heads.
pub fn margin_loss(q: &QNet, out: &Tensor<f64>, batch: &[&Transition], margin: f64, grad: &mut Tensor<f64>, weight: f64) -> f64 {
    let offs = q.offsets();
    let scale = (batch.len() * q.heads.len()).max(1) as f64;
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        if !t.demo {
            continue;
        }
        for (j, (&off, &h)) in offs.iter().zip(&q.heads).enumerate() {
            let row = &out.row(i)[off..off + h];
            let ae = t.a[j];
            let (best, val) = (0..h)
                .map(|a| (a, row[a] + if a == ae { 0.0 } else { margin }))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let l = val - row[ae];
            if l > 0.0 {
                loss += l;
                grad.row_mut(i)[off + best] += weight / scale;
                grad.row_mut(i)[off + ae] -= weight / scale;
            }
        }
    }
    loss / scale
}

/// Optimizer state for one Q-network and its target copy.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub q: QNet,
    pub target: QNet,
    opt: AdamWState<f64>,
    ocfg: AdamWConfig<f64>,
    pub gamma: f64,
    pub sync_every: usize,
    pub margin: f64,
    pub margin_weight: f64,
    pub steps: usize,
}

impl QLearner {
    pub fn new(q: QNet, lr: f64, weight_decay: f64, gamma: f64, sync_every: usize) -> Self {
        let opt = AdamWState::new(q.net.params());
        Self {
            target: q.clone(),
            q,
            opt,
            ocfg: AdamWConfig { weight_decay, ..AdamWConfig::with_lr(lr) },
            gamma,
            sync_every: sync_every.max(1),
            margin: 0.0,
            margin_weight: 0.0,
            steps: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.ocfg.lr = lr;
    }

    /// One gradient step; returns the TD part of the loss.
    pub fn step(&mut self, batch: &[&Transition]) -> Result<f64> {
        let targets = td_targets(&self.target, batch, self.gamma)?;
        let x = stack(&batch.iter().map(|t| t.o.as_slice()).collect::<Vec<_>>());
        let (out, cache) = self.q.net.forward(&x)?;
        let (loss, mut grad) = td_loss(&self.q, &out, batch, &targets);
        if self.margin_weight > 0.0 {
            margin_loss(&self.q, &out, batch, self.margin, &mut grad, self.margin_weight);
        }
        let g = self.q.net.backward(&cache, &grad)?;
        adamw_step(self.q.net.params_mut(), &g.params, &mut self.opt, &self.ocfg)?;
        self.steps += 1;
        if self.steps.is_multiple_of(self.sync_every) {
            self.target = self.q.clone();
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub target_sync: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Gradient steps per phase on demonstrations alone.
    pub pretrain_steps: usize,
    /// Environment steps of epsilon-greedy interaction after pretraining.
    pub online_steps: usize,
    /// Learning-rate multiplier during interaction.
    pub online_lr_scale: f64,
    pub margin: f64,
    pub margin_weight: f64,
    /// Observation noise injected into the demonstrations.
    pub sigma_q: f64,
    pub sigma_f: f64,
    /// Train the subgoal classifier and use it instead of the rule.
    pub classifier: bool,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            gamma: 0.98,
            lr: 5e-4,
            weight_decay: 0.0,
            batch: 64,
            alpha: 1.0,
            beta: 0.01,
            delta: 0.05,
            target_sync: 500,
            replay_capacity: 100_000,
            eps_start: 0.3,
            eps_end: 0.02,
            pretrain_steps: 6000,
            online_steps: 2000,
            online_lr_scale: 0.2,
            margin: 0.5,
            margin_weight: 1.0,
            sigma_q: 0.0,
            sigma_f: 0.0,
            classifier: false,
            seed: 0,
        }
    }
}

/// A demonstration replayed in the discrete action set, with the subgoal
/// active at each step. The last step is the terminal observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDemo {
    pub record: EpisodeRecord,
    pub phases: Vec<SubGoal>,
}

fn reset_like(env: &mut Env, rec: &EpisodeRecord) -> Result<Observation> {
    let perturb = (rec.perturb > 0.0).then_some(PerturbSpec { half_range: rec.perturb as f64 });
    let obs = env.reset(perturb.as_ref(), rec.seed)?;
    let s0 = &rec.steps[0].s;
    let p = obs.s.pose.position;
    if (0..3).any(|i| (p[i] as f32 - s0[i]).abs() > 1e-5) {
        return Err(Error::invalid("demonstration", "initial panel pose does not match the scene reset"));
    }
    Ok(obs)
}

/// Best single discrete move toward `goal` for the tool position.
fn closest_move(env: &Env, acts: &DiscreteActions, goal: crate::geometry::Vec3<f64>) -> Vec<usize> {
    let scene = env.scene();
    let n = acts.n_joints;
    let (mut best, mut best_d) = (vec![1; n], f64::INFINITY);
    let mut idx = vec![0usize; n];
    loop {
        let mut q: Vec<f64> = env.q().iter().zip(&idx).map(|(q, &i)| q + (i as f64 - 1.0) * acts.delta).collect();
        scene.chain.clamp(&mut q);
        if let Ok(p) = scene.tool_pose(&q) {
            let d = norm(sub(p.position, goal));
            if d < best_d {
                best_d = d;
                best = idx.clone();
            }
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < 3 {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    best
}

/// Track a demonstration's joint trajectory with discrete increments,
/// rewarding each step with the active phase's shaped reward. Near the
/// grasp the tracker steers the tool onto the grasp point before engaging.
pub fn discretize_demo(scene: Arc<SceneSpec>, rec: &EpisodeRecord, acts: &DiscreteActions, alpha: f64, beta: f64) -> Result<DiscreteDemo> {
    if rec.is_empty() {
        return Err(Error::EmptyDataset("empty demonstration".into()));
    }
    let mut env = Env::new(scene.clone());
    let mut obs = reset_like(&mut env, rec)?;
    let demo_q: Vec<Vec<f64>> = rec.steps.iter().map(|s| s.q64()).collect();
    let demo_g: Vec<bool> = rec.steps.iter().map(|s| s.action[ACTION_DIM - 1] >= 0.5).collect();
    let grasp_idx = demo_g.iter().position(|&g| g).unwrap_or(rec.len());
    let (pick, inst) = (RewardSpec::pickup(alpha), RewardSpec::install(alpha, beta));
    let tol = acts.delta / 2.0;
    let last = rec.len() - 1;
    let (mut idx, mut attached_once, mut installing) = (0, false, false);
    let mut steps = Vec::new();
    let mut phases = Vec::new();
    let limit = 4 * rec.len() + 100;
    loop {
        if steps.len() >= limit {
            return Err(Error::invalid("demonstration", "discrete tracking did not finish"));
        }
        let close = |i: usize, q: &[f64]| demo_q[i].iter().zip(q).all(|(a, b)| (a - b).abs() < tol);
        while idx < last && close(idx, env.q()) && (idx != grasp_idx || attached_once) {
            idx += 1;
        }
        let a = if idx >= grasp_idx && !attached_once {
            if env.grasp_distance() <= 0.5 * scene.params.grasp_tol {
                let mut a = acts.zero();
                a[acts.n_joints] = 1;
                a
            } else {
                let mut a = closest_move(&env, acts, env.grasp_point());
                a.push(0);
                a
            }
        } else {
            let mut a: Vec<usize> =
                demo_q[idx].iter().zip(env.q()).map(|(t, q)| (((t - q) / acts.delta).round().clamp(-1.0, 1.0) + 1.0) as usize).collect();
            a.push(usize::from(demo_g[idx]));
            a
        };
        let phase = if installing { SubGoal::Install } else { SubGoal::Pickup };
        let idle = a[..acts.n_joints].iter().all(|&i| i == 1);
        if idx == last && idle && attached_once && !env.panel().attached {
            steps.push(EpisodeStep::from_observation(&obs, acts.encode(&acts.zero()), None));
            phases.push(phase);
            break;
        }
        let enc = acts.encode(&a);
        let next = env.step(&acts.to_action(&a))?;
        attached_once |= env.panel().attached;
        let st = RewardState::from_env(&env);
        let r = match phase {
            SubGoal::Pickup => phase_reward(&pick, &scene, &st),
            SubGoal::Install => phase_reward(&inst, &scene, &st),
        };
        installing |= env.check_success(Phase::Pickup);
        steps.push(EpisodeStep::from_observation(&obs, enc, Some(r as f32)));
        phases.push(phase);
        obs = next;
    }
    let n = steps.len();
    let record = EpisodeRecord {
        steps,
        action_kind: ActionKind::JointDelta,
        metadata: EpisodeMeta { operator: format!("{}+discrete", rec.metadata.operator), duration_s: n as f32 / rec.hz },
        instruction: rec.instruction.clone(),
        scene_id: rec.scene_id,
        seed: rec.seed,
        perturb: rec.perturb,
        hz: rec.hz,
    };
    Ok(DiscreteDemo { record, phases })
}

/// Standardized observation, clipped so unseen contact forces stay bounded.
pub fn features(norm: &Normalizer, o: &[f64]) -> Vec<f64> {
    norm.apply_clipped(o, FEATURE_CLIP)
}

const FEATURE_CLIP: f64 = 5.0;

/// Transitions of one phase. The phase boundary and the final step are
/// terminal.
pub fn phase_transitions(demo: &DiscreteDemo, acts: &DiscreteActions, phase: SubGoal, norm: &Normalizer) -> Vec<Transition> {
    let steps = &demo.record.steps;
    let mut out = Vec::new();
    for t in 0..steps.len().saturating_sub(1) {
        if demo.phases[t] != phase {
            continue;
        }
        let done = match phase {
            SubGoal::Pickup => demo.phases[t + 1] == SubGoal::Install,
            SubGoal::Install => t + 2 == steps.len(),
        };
        out.push(Transition {
            o: features(norm, &steps[t].low_dim()),
            a: acts.decode(&steps[t].action),
            r: steps[t].reward.unwrap_or(0.0) as f64,
            o2: features(norm, &steps[t + 1].low_dim()),
            done,
            demo: true,
        });
    }
    out
}

/// Learned subgoal selector on standardized observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgoalClassifier {
    pub net: Mlp<f64>,
}

impl SubgoalClassifier {
    pub fn train(states: &[Vec<f64>], labels: &[SubGoal], epochs: usize, seed: u64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyDataset("no labelled states".into()));
        }
        let mut net = Mlp::init(&MlpSpec::relu(&[states[0].len(), 64, 64, 2], seed)?);
        let mut opt = AdamWState::new(net.params());
        let ocfg = AdamWConfig::with_lr(1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5B60);
        for _ in 0..epochs {
            for chunk in epoch_order(states.len(), &mut rng).chunks(64) {
                let x = stack(&chunk.iter().map(|&i| states[i].as_slice()).collect::<Vec<_>>());
                let y: Vec<usize> = chunk.iter().map(|&i| usize::from(labels[i] == SubGoal::Install)).collect();
                let (out, cache) = net.forward(&x)?;
                let (_, g) = grouped_cross_entropy(&out, 2, &y)?;
                let grads = net.backward(&cache, &g)?;
                adamw_step(net.params_mut(), &grads.params, &mut opt, &ocfg)?;
            }
        }
        Ok(Self { net })
    }

    pub fn predict(&self, z: &[f64]) -> Result<SubGoal> {
        Ok(if argmax(&self.net.predict_one(z)?) == 1 { SubGoal::Install } else { SubGoal::Pickup })
    }

    /// Fraction of `states` where the classifier matches `labels`.
    pub fn agreement(&self, states: &[Vec<f64>], labels: &[SubGoal]) -> Result<f64> {
        let mut hits = 0;
        for (s, l) in states.iter().zip(labels) {
            hits += usize::from(self.predict(s)? == *l);
        }
        Ok(hits as f64 / states.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnPolicy {
    pub pickup: QNet,
    pub install: QNet,
    pub norm: Normalizer,
    pub actions: DiscreteActions,
    pub classifier: Option<SubgoalClassifier>,
    pub use_classifier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnTraining {
    pub policy: DqnPolicy,
    /// `(phase, gradient step, mean TD loss over the preceding window)`.
    pub curve: Vec<(SubGoal, usize, f64)>,
    pub classifier_agreement: Option<f64>,
    pub demo_transitions: usize,
    pub online_transitions: usize,
    pub train_steps: usize,
}

impl DqnTraining {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("phase,step,td_loss\n");
        for (p, step, l) in &self.curve {
            let p = if *p == SubGoal::Pickup { "pickup" } else { "install" };
            s.push_str(&format!("{p},{step},{l:.9}\n"));
        }
        s
    }
}

const LOG_EVERY: usize = 250;

fn train_window(learner: &mut QLearner, demo: &[Transition], online: &ReplayBuffer, steps: usize, batch: usize, rng: &mut ChaCha8Rng, phase: SubGoal, acc: &mut f64, curve: &mut Vec<(SubGoal, usize, f64)>) -> Result<()> {
    let total = demo.len() + online.len();
    if total == 0 {
        return Ok(());
    }
    for _ in 0..steps {
        let b: Vec<&Transition> = (0..batch)
            .map(|_| {
                let i = rng.gen_range(0..total);
                if i < demo.len() {
                    &demo[i]
                } else {
                    online.get(i - demo.len())
                }
            })
            .collect();
        *acc += learner.step(&b)?;
        if learner.steps.is_multiple_of(LOG_EVERY) {
            curve.push((phase, learner.steps, *acc / LOG_EVERY as f64));
            *acc = 0.0;
        }
    }
    Ok(())
}

/// Train both phase networks from demonstrations, then refine with
/// epsilon-greedy interaction.
pub fn train_dqn(demos: &[EpisodeRecord], scene: Arc<SceneSpec>, cfg: &DqnConfig) -> Result<DqnTraining> {
    if demos.is_empty() {
        return Err(Error::EmptyDataset("DQN needs demonstrations to seed replay".into()));
    }
    RewardSpec::pickup(cfg.alpha).validate()?;
    let n = scene.chain.n_joints();
    if n + 1 > ACTION_DIM {
        return Err(Error::invalid("chain", format!("{n} joints exceed the stored action width")));
    }
    let acts = DiscreteActions { n_joints: n, delta: cfg.delta };
    let mut discrete = Vec::with_capacity(demos.len());
    for (i, d) in demos.iter().enumerate() {
        let mut dd = discretize_demo(scene.clone(), d, &acts, cfg.alpha, cfg.beta)?;
        if cfg.sigma_q > 0.0 || cfg.sigma_f > 0.0 {
            dd.record = inject_noise(&dd.record, cfg.sigma_q, cfg.sigma_f, cfg.seed.wrapping_add(i as u64))?;
        }
        discrete.push(dd);
    }
    let norm = Normalizer::fit(discrete.iter().flat_map(|d| d.record.steps.iter()).map(|s| s.low_dim()).collect::<Vec<_>>().iter().map(|v| v.as_slice()), 1e-2)?;
    let mut curve = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD0_0D);
    let dim = norm.dim();
    let mut learners = Vec::new();
    let mut accs = [0.0; 2];
    let mut demo_sets = Vec::new();
    let mut demo_count = 0;
    for (k, phase) in [SubGoal::Pickup, SubGoal::Install].into_iter().enumerate() {
        let q = QNet::new(dim, &cfg.hidden, acts.heads(), cfg.seed.wrapping_add(k as u64 + 1))?;
        let mut l = QLearner::new(q, cfg.lr, cfg.weight_decay, cfg.gamma, cfg.target_sync);
        l.margin = cfg.margin;
        l.margin_weight = cfg.margin_weight;
        let set: Vec<Transition> = discrete.iter().flat_map(|d| phase_transitions(d, &acts, phase, &norm)).collect();
        demo_count += set.len();
        train_window(&mut l, &set, &ReplayBuffer::new(1), cfg.pretrain_steps, cfg.batch, &mut rng, phase, &mut accs[k], &mut curve)?;
        learners.push(l);
        demo_sets.push(set);
    }
    let (states, labels): (Vec<Vec<f64>>, Vec<SubGoal>) =
        discrete.iter().flat_map(|d| d.record.steps.iter().zip(&d.phases).map(|(s, &p)| (features(&norm, &s.low_dim()), p))).unzip();
    let (classifier, agreement) = if cfg.classifier {
        let c = SubgoalClassifier::train(&states, &labels, 20, cfg.seed ^ 0xC1A5)?;
        let a = c.agreement(&states, &labels)?;
        (Some(c), Some(a))
    } else {
        (None, None)
    };

    for l in &mut learners {
        l.set_lr(cfg.lr * cfg.online_lr_scale);
    }
    let mut replays = [ReplayBuffer::new(cfg.replay_capacity), ReplayBuffer::new(cfg.replay_capacity)];
    let (pick, inst) = (RewardSpec::pickup(cfg.alpha), RewardSpec::install(cfg.alpha, cfg.beta));
    let mut env = Env::new(scene.clone());
    let mut episode = 0u64;
    let mut done_all = true;
    let mut installing = false;
    let mut ep_steps = 0;
    let mut obs = env.observe();
    let mut online = 0;
    for step in 0..cfg.online_steps {
        if done_all {
            obs = env.reset(Some(&PerturbSpec::default()), cfg.seed.wrapping_mul(7919).wrapping_add(episode))?;
            episode += 1;
            installing = false;
            ep_steps = 0;
        }
        let frac = step as f64 / cfg.online_steps.max(1) as f64;
        let eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
        let k = usize::from(installing);
        let z = features(&norm, &obs.low_dim());
        let a = select_action(&learners[k].q, &z, eps, &mut rng)?;
        obs = env.step(&acts.to_action(&a))?;
        ep_steps += 1;
        let st = RewardState::from_env(&env);
        let r = if installing { phase_reward(&inst, &scene, &st) } else { phase_reward(&pick, &scene, &st) };
        let finished = env.check_success(Phase::Align) && !env.panel().attached;
        let done = if installing { finished } else { env.check_success(Phase::Pickup) };
        replays[k].push(Transition { o: z, a, r, o2: features(&norm, &obs.low_dim()), done, demo: false });
        online += 1;
        train_window(&mut learners[k], &demo_sets[k], &replays[k], 1, cfg.batch, &mut rng, if k == 0 { SubGoal::Pickup } else { SubGoal::Install }, &mut accs[k], &mut curve)?;
        installing |= env.check_success(Phase::Pickup);
        done_all = finished || ep_steps >= 300;
    }
    let train_steps = learners.iter().map(|l| l.steps).sum();
    let mut it = learners.into_iter();
    let pickup = it.next().expect("two learners").q;
    let install = it.next().expect("two learners").q;
    let use_classifier = classifier.is_some();
    Ok(DqnTraining {
        policy: DqnPolicy { pickup, install, norm, actions: acts, classifier, use_classifier },
        curve,
        classifier_agreement: agreement,
        demo_transitions: demo_count,
        online_transitions: online,
        train_steps,
    })
}

impl DqnPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths: Vec<usize> = ck.meta("widths")?.split(',').map(|w| w.parse().map_err(|_| Error::Checkpoint("bad widths".into()))).collect::<Result<_>>()?;
        let n_joints: usize = ck.meta_parse("n_joints")?;
        let actions = DiscreteActions { n_joints, delta: ck.meta_parse("delta")? };
        let load = |prefix: &str| -> Result<QNet> {
            let spec = MlpSpec::relu(&widths, ck.meta_parse(&format!("{prefix}seed"))?)?;
            Ok(QNet { net: Mlp::from_params(&spec, ck.tensors_with_prefix(prefix))?, heads: actions.heads() })
        };
        let classifier = if ck.tensors.iter().any(|(n, _)| n.starts_with("classifier.")) {
            let spec = MlpSpec::relu(&[widths[0], 64, 64, 2], ck.meta_parse("classifier.seed")?)?;
            Some(SubgoalClassifier { net: Mlp::from_params(&spec, ck.tensors_with_prefix("classifier."))? })
        } else {
            None
        };
        Ok(Self {
            pickup: load("pickup.")?,
            install: load("install.")?,
            norm: Normalizer::from_checkpoint(ck, "obs")?,
            actions,
            use_classifier: meta_or_default(ck, "use_classifier", false)? && classifier.is_some(),
            classifier,
        })
    }

    pub fn subgoal(&self, obs: &Observation, scene: &SceneSpec, z0: f64) -> Result<SubGoal> {
        match (&self.classifier, self.use_classifier) {
            (Some(c), true) => c.predict(&features(&self.norm, &obs.low_dim())),
            _ => Ok(subgoal_switch(scene, &obs.s, obs.s.pose.position[2] - z0)),
        }
    }
}

struct DqnController<'a> {
    policy: &'a DqnPolicy,
    z0: Option<f64>,
    installing: bool,
}

impl Controller for DqnController<'_> {
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Action> {
        let z0 = *self.z0.get_or_insert(obs.s.pose.position[2]);
        if !self.installing {
            self.installing = self.policy.subgoal(obs, env.scene(), z0)? == SubGoal::Install;
        }
        let q = if self.installing { &self.policy.install } else { &self.policy.pickup };
        let a = q.greedy(&features(&self.policy.norm, &obs.low_dim()))?;
        Ok(self.policy.actions.to_action(&a))
    }
}

impl Policy for DqnPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Dqn
    }

    fn n_params(&self) -> usize {
        2 * self.pickup.net.spec().n_params() + self.classifier.as_ref().map_or(0, |c| c.net.spec().n_params())
    }

    fn controller(&self, _seed: u64) -> Box<dyn Controller + '_> {
        Box::new(DqnController { policy: self, z0: None, installing: false })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck.set_meta("widths", self.pickup.net.spec().widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        ck.set_meta("n_joints", self.actions.n_joints);
        ck.set_meta("delta", self.actions.delta);
        ck.set_meta("use_classifier", self.use_classifier);
        ck.set_meta("pickup.seed", self.pickup.net.spec().seed);
        ck.set_meta("install.seed", self.install.net.spec().seed);
        ck.push_all("pickup.", self.pickup.net.params());
        ck.push_all("install.", self.install.net.params());
        if let Some(c) = &self.classifier {
            ck.set_meta("classifier.seed", c.net.spec().seed);
            ck.push_all("classifier.", c.net.params());
        }
        self.norm.push_to(&mut ck, "obs");
        ck
    }
}

/// Reward scales tried by [`search_alpha`].
pub const ALPHA_GRID: [f64; 3] = [0.1, 1.0, 10.0];

/// Train one DQN per `alpha` in `grid` and keep the one `score` rates
/// highest (typically rollout successes). Ties keep the earlier alpha.
pub fn search_alpha(
    demos: &[EpisodeRecord],
    scene: Arc<SceneSpec>,
    cfg: &DqnConfig,
    grid: &[f64],
    mut score: impl FnMut(&DqnPolicy) -> Result<usize>,
) -> Result<(f64, Vec<(f64, usize)>, DqnTraining)> {
    let mut best: Option<(f64, usize, DqnTraining)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let t = train_dqn(demos, scene.clone(), &DqnConfig { alpha, ..cfg.clone() })?;
        let s = score(&t.policy)?;
        scores.push((alpha, s));
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((alpha, s, t));
        }
    }
    let (alpha, _, t) = best.ok_or_else(|| Error::invalid("alpha grid", "empty"))?;
    Ok((alpha, scores, t))
}
