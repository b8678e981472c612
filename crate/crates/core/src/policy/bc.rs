//! Behavior cloning: a three-layer MLP from `[f, q, s]` to the next joint
//! increment plus the adhesion command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{epoch_order, meta_or_default, stack, Controller, Normalizer, Policy, PolicyKind};
use crate::episode::{smooth_trajectory, window_for_rate, EpisodeRecord};
use crate::error::{Error, Result};
use crate::nn::{adamw_step, loss::mse, AdamWConfig, AdamWState, Checkpoint, Mlp, MlpSpec, Tensor};
use crate::sim::{Action, Env, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Smooth joint trajectories with the rate-scaled window before
    /// differencing.
    pub smooth: bool,
    pub overfit_k: usize,
    pub overfit_ratio: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            batch: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 300,
            seed: 0,
            smooth: true,
            overfit_k: 5,
            overfit_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub overfit: bool,
    /// Final validation loss over final training loss.
    pub gap_ratio: f64,
    /// Longest run of epochs where validation rose while training fell.
    pub rising_run: usize,
}

/// Overfit when validation loss rises for `k` consecutive epochs while
/// training loss falls, or when the final validation/training ratio exceeds
/// `ratio`.
pub fn detect_overfit(train: &[f64], val: &[f64], k: usize, ratio: f64) -> OverfitReport {
    let n = train.len().min(val.len());
    let (mut run, mut best) = (0, 0);
    for e in 1..n {
        if val[e] > val[e - 1] && train[e] < train[e - 1] {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    let gap_ratio = if n == 0 {
        1.0
    } else if train[n - 1] > 0.0 {
        val[n - 1] / train[n - 1]
    } else if val[n - 1] > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    OverfitReport { overfit: (k > 0 && best >= k) || gap_ratio > ratio, gap_ratio, rising_run: best }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcTraining {
    pub policy: BcPolicy,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub overfit: OverfitReport,
    pub samples: usize,
}

impl BcTraining {
    /// `epoch,train_loss,val_loss` rows.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            s.push_str(&format!("{},{t:.9},{v:.9}\n", e + 1));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    pub net: Mlp<f64>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub max_joint_step: f64,
}

/// `(observation, [dq.., g])` pairs; the final step of each episode has no
/// successor and is dropped.
pub fn bc_samples(records: &[EpisodeRecord], smooth: bool) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for rec in records {
        let q: Vec<Vec<f64>> = rec.steps.iter().map(|s| s.q64()).collect();
        let q = if smooth { smooth_trajectory(&q, window_for_rate(rec.hz as f64)) } else { q };
        for t in 0..rec.len().saturating_sub(1) {
            let mut y: Vec<f64> = q[t + 1].iter().zip(&q[t]).map(|(a, b)| a - b).collect();
            y.push(rec.steps[t].action[6] as f64);
            out.push((rec.steps[t].low_dim(), y));
        }
    }
    out
}

fn mean_loss(net: &Mlp<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<(f64, Tensor<f64>, crate::nn::ForwardCache<f64>)> {
    let (pred, cache) = net.forward(x)?;
    let (l, mut g) = mse(&pred, y, None)?;
    let c = y.cols() as f64;
    g.data_mut().iter_mut().for_each(|v| *v /= c);
    Ok((l / c, g, cache))
}

pub fn train_bc(train: &[EpisodeRecord], val: &[EpisodeRecord], cfg: &BcConfig, max_joint_step: f64) -> Result<BcTraining> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("behavior cloning needs at least one training episode".into()));
    }
    // Without a validation split the last training episode is held out.
    let (train, val): (&[EpisodeRecord], Vec<EpisodeRecord>) = match (val.is_empty(), train.len()) {
        (false, _) => (train, val.to_vec()),
        (true, 1) => (train, train.to_vec()),
        (true, n) => (&train[..n - 1], vec![train[n - 1].clone()]),
    };
    let tr = bc_samples(train, cfg.smooth);
    let va = bc_samples(&val, cfg.smooth);
    if tr.is_empty() || va.is_empty() {
        return Err(Error::EmptyDataset("episodes too short for behavior cloning".into()));
    }
    let input_norm = Normalizer::fit(tr.iter().map(|(x, _)| x.as_slice()), 1e-6)?;
    let output_norm = Normalizer::fit(tr.iter().map(|(_, y)| y.as_slice()), 1e-6)?;
    let norm = |set: &[(Vec<f64>, Vec<f64>)]| -> Vec<(Vec<f64>, Vec<f64>)> {
        set.iter().map(|(x, y)| (input_norm.apply(x), output_norm.apply(y))).collect()
    };
    let (tr, va) = (norm(&tr), norm(&va));
    let mut widths = vec![input_norm.dim()];
    widths.extend(&cfg.hidden);
    widths.push(output_norm.dim());
    let mut net = Mlp::init(&MlpSpec::relu(&widths, cfg.seed)?);
    let mut opt = AdamWState::new(net.params());
    let ocfg = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::with_lr(cfg.lr) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBC);
    let va_x = stack(&va.iter().map(|(x, _)| x.as_slice()).collect::<Vec<_>>());
    let va_y = stack(&va.iter().map(|(_, y)| y.as_slice()).collect::<Vec<_>>());
    let (mut train_loss, mut val_loss) = (Vec::new(), Vec::new());
    for _ in 0..cfg.epochs {
        let order = epoch_order(tr.len(), &mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let x = stack(&chunk.iter().map(|&i| tr[i].0.as_slice()).collect::<Vec<_>>());
            let y = stack(&chunk.iter().map(|&i| tr[i].1.as_slice()).collect::<Vec<_>>());
            let (l, g, cache) = mean_loss(&net, &x, &y)?;
            let grads = net.backward(&cache, &g)?;
            adamw_step(net.params_mut(), &grads.params, &mut opt, &ocfg)?;
            sum += l * chunk.len() as f64;
            count += chunk.len();
        }
        train_loss.push(sum / count as f64);
        val_loss.push(mean_loss(&net, &va_x, &va_y)?.0);
    }
    let overfit = detect_overfit(&train_loss, &val_loss, cfg.overfit_k, cfg.overfit_ratio);
    let samples = tr.len();
    Ok(BcTraining { policy: BcPolicy { net, input_norm, output_norm, max_joint_step }, train_loss, val_loss, overfit, samples })
}

impl BcPolicy {
    /// `[dq.., g]` for a raw observation vector `[f, q, s]`.
    pub fn predict(&self, o: &[f64]) -> Result<Vec<f64>> {
        self.predict_normalized(&self.input_norm.apply(o))
    }

    /// Same as [`predict`](Self::predict) for an already standardized input.
    pub fn predict_normalized(&self, z: &[f64]) -> Result<Vec<f64>> {
        let y = self.output_norm.invert(&self.net.predict_one(z)?);
        let n = y.len() - 1;
        let m = self.max_joint_step;
        let mut out: Vec<f64> = y[..n].iter().map(|v| v.clamp(-m, m)).collect();
        out.push(y[n].clamp(-1.0, 1.0));
        Ok(out)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths: Vec<usize> = ck.meta("widths")?.split(',').map(|w| w.parse().map_err(|_| Error::Checkpoint("bad widths".into()))).collect::<Result<_>>()?;
        let spec = MlpSpec::relu(&widths, meta_or_default(ck, "seed", 0)?)?;
        let net = Mlp::from_params(&spec, ck.tensors_with_prefix("net."))?;
        Ok(Self {
            net,
            input_norm: Normalizer::from_checkpoint(ck, "input")?,
            output_norm: Normalizer::from_checkpoint(ck, "output")?,
            max_joint_step: ck.meta_parse("max_joint_step")?,
        })
    }
}

struct BcController<'a>(&'a BcPolicy);

impl Controller for BcController<'_> {
    fn act(&mut self, _env: &Env, obs: &Observation) -> Result<Action> {
        let mut y = self.0.predict(&obs.low_dim())?;
        let g = y.pop().expect("output has a g channel");
        Ok(Action::Joint { dq: y, g })
    }
}

impl Policy for BcPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Bc
    }

    fn n_params(&self) -> usize {
        self.net.spec().n_params()
    }

    fn controller(&self, _seed: u64) -> Box<dyn Controller + '_> {
        Box::new(BcController(self))
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", self.kind());
        ck.set_meta("widths", self.net.spec().widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        ck.set_meta("seed", self.net.spec().seed);
        ck.set_meta("max_joint_step", self.max_joint_step);
        ck.push_all("net.", self.net.params());
        self.input_norm.push_to(&mut ck, "input");
        self.output_norm.push_to(&mut ck, "output");
        ck
    }
}
