//! Run configuration and the train / evaluate / bench pipeline behind the
//! command line.
//!
//! A run file is a flat `key = value` file (see [`crate::config`]). Keys:
//!
//! ```text
//! scene = desk                 # desk, ground, or a scene file path
//! policy = bc                  # bc, dqn, flow, flow-discrete
//! seed = 0                     # required by train and eval
//! demos = data/desk            # dataset directory or manifest file
//! n_demos = 100                # optional random subset of the dataset
//! out = runs/bc                # output directory
//!
//! protocol = perturbed         # perturbed or unperturbed
//! protocol.rollouts = 50
//! protocol.max_steps = 300
//! protocol.perturb = 0.02      # half range in meters, perturbed protocol
//!
//! bc.hidden = 128,128          bc.epochs   bc.batch   bc.lr   bc.weight_decay
//! bc.smooth = true             bc.overfit_k   bc.overfit_ratio
//!
//! dqn.hidden = 128,128         dqn.gamma   dqn.lr   dqn.weight_decay   dqn.batch
//! dqn.alpha   dqn.beta   dqn.delta   dqn.target_sync   dqn.replay_capacity
//! dqn.eps_start   dqn.eps_end   dqn.pretrain_steps   dqn.online_steps
//! dqn.online_lr_scale   dqn.margin   dqn.margin_weight
//! dqn.sigma_q   dqn.sigma_f   dqn.classifier
//! dqn.alpha_search = false     # pick alpha from {0.1, 1, 10} by rollout pickups
//!
//! flow.hidden = 256,256        flow.horizon   flow.ode_steps   flow.replan_every
//! flow.epochs   flow.batch   flow.lr   flow.weight_decay   flow.frames   flow.smooth
//!
//! discrete.hidden = 256,256    discrete.bins   discrete.epochs   discrete.batch
//! discrete.lr   discrete.weight_decay   discrete.smooth
//! ```
//!
//! Relative paths resolve against the directory of the file that was loaded.
//! Every random draw derives from `seed`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::ConfigFile;
use crate::episode::{subset, DatasetManifest, EpisodeRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{aggregate, run_rollouts, BenchReport, BenchRow, ProtocolSpec};
use crate::policy::bc::{train_bc, BcConfig};
use crate::policy::discrete::{train_discrete, DiscreteConfig};
use crate::policy::dqn::{search_alpha, train_dqn, DqnConfig, DqnPolicy, ALPHA_GRID};
use crate::policy::flow::{train_flow, FlowConfig};
use crate::policy::{Policy, PolicyKind};
use crate::sim::{PerturbSpec, SceneId, SceneSpec};

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// As written: a built-in scene name or a path.
    pub scene: String,
    pub policy: PolicyKind,
    pub seed: Option<u64>,
    pub demos: Option<PathBuf>,
    pub n_demos: Option<usize>,
    pub out: Option<PathBuf>,
    pub protocol_name: String,
    pub protocol: ProtocolSpec,
    pub bc: BcConfig,
    pub dqn: DqnConfig,
    /// Choose the DQN reward scale by rollouts on the run's protocol.
    pub alpha_search: bool,
    pub flow: FlowConfig,
    pub discrete: DiscreteConfig,
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: "desk".into(),
            policy: PolicyKind::Bc,
            seed: None,
            demos: None,
            n_demos: None,
            out: None,
            protocol_name: "perturbed".into(),
            protocol: ProtocolSpec::perturbed(0),
            bc: BcConfig::default(),
            dqn: DqnConfig::default(),
            alpha_search: false,
            flow: FlowConfig::default(),
            discrete: DiscreteConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn hidden(cfg: &mut ConfigFile, key: &str, default: &[usize]) -> Result<Vec<usize>> {
    match cfg.get_vec(key)? {
        None => Ok(default.to_vec()),
        Some(v) if v.is_empty() || v.iter().any(|&w| w < 1.0 || w.fract() != 0.0) => {
            Err(Error::Config { location: key.into(), reason: "expected positive integer widths".into() })
        }
        Some(v) => Ok(v.into_iter().map(|w| w as usize).collect()),
    }
}

/// Named protocol with the configured overrides.
pub fn protocol_by_name(name: &str, seed: u64) -> Result<ProtocolSpec> {
    match name {
        "perturbed" => Ok(ProtocolSpec::perturbed(seed)),
        "unperturbed" => Ok(ProtocolSpec::unperturbed(seed)),
        other => Err(Error::invalid("protocol", format!("unknown protocol {other:?}"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = ConfigFile::load(path)?;
        let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::from_config(&mut cfg, &dir)
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_config(&mut ConfigFile::parse_str(text, "run config")?, base_dir)
    }

    pub fn from_config(cfg: &mut ConfigFile, base_dir: &Path) -> Result<Self> {
        let d = Self::default();
        let mut r = Self { base_dir: base_dir.to_path_buf(), ..d.clone() };
        r.scene = cfg.get_or("scene", d.scene)?;
        if let Some(p) = cfg.get::<String>("policy")? {
            r.policy = PolicyKind::parse(&p)?;
        }
        r.seed = cfg.get("seed")?;
        r.demos = cfg.get::<String>("demos")?.map(PathBuf::from);
        r.n_demos = cfg.get("n_demos")?;
        r.out = cfg.get::<String>("out")?.map(PathBuf::from);
        r.protocol_name = cfg.get_or("protocol", d.protocol_name)?;
        let mut p = protocol_by_name(&r.protocol_name, 0)?;
        p.n_rollouts = cfg.get_or("protocol.rollouts", p.n_rollouts)?;
        p.max_steps = cfg.get_or("protocol.max_steps", p.max_steps)?;
        if let Some(h) = cfg.get::<f64>("protocol.perturb")? {
            p.perturb = p.perturb.map(|_| PerturbSpec { half_range: h });
        }
        r.protocol = p;

        let (b, bd) = (&mut r.bc, &d.bc);
        b.hidden = hidden(cfg, "bc.hidden", &bd.hidden)?;
        b.epochs = cfg.get_or("bc.epochs", bd.epochs)?;
        b.batch = cfg.get_or("bc.batch", bd.batch)?;
        b.lr = cfg.get_or("bc.lr", bd.lr)?;
        b.weight_decay = cfg.get_or("bc.weight_decay", bd.weight_decay)?;
        b.smooth = cfg.get_or("bc.smooth", bd.smooth)?;
        b.overfit_k = cfg.get_or("bc.overfit_k", bd.overfit_k)?;
        b.overfit_ratio = cfg.get_or("bc.overfit_ratio", bd.overfit_ratio)?;

        let (q, qd) = (&mut r.dqn, &d.dqn);
        q.hidden = hidden(cfg, "dqn.hidden", &qd.hidden)?;
        q.gamma = cfg.get_or("dqn.gamma", qd.gamma)?;
        q.lr = cfg.get_or("dqn.lr", qd.lr)?;
        q.weight_decay = cfg.get_or("dqn.weight_decay", qd.weight_decay)?;
        q.batch = cfg.get_or("dqn.batch", qd.batch)?;
        q.alpha = cfg.get_or("dqn.alpha", qd.alpha)?;
        q.beta = cfg.get_or("dqn.beta", qd.beta)?;
        q.delta = cfg.get_or("dqn.delta", qd.delta)?;
        q.target_sync = cfg.get_or("dqn.target_sync", qd.target_sync)?;
        q.replay_capacity = cfg.get_or("dqn.replay_capacity", qd.replay_capacity)?;
        q.eps_start = cfg.get_or("dqn.eps_start", qd.eps_start)?;
        q.eps_end = cfg.get_or("dqn.eps_end", qd.eps_end)?;
        q.pretrain_steps = cfg.get_or("dqn.pretrain_steps", qd.pretrain_steps)?;
        q.online_steps = cfg.get_or("dqn.online_steps", qd.online_steps)?;
        q.online_lr_scale = cfg.get_or("dqn.online_lr_scale", qd.online_lr_scale)?;
        q.margin = cfg.get_or("dqn.margin", qd.margin)?;
        q.margin_weight = cfg.get_or("dqn.margin_weight", qd.margin_weight)?;
        q.sigma_q = cfg.get_or("dqn.sigma_q", qd.sigma_q)?;
        q.sigma_f = cfg.get_or("dqn.sigma_f", qd.sigma_f)?;
        q.classifier = cfg.get_or("dqn.classifier", qd.classifier)?;
        r.alpha_search = cfg.get_or("dqn.alpha_search", d.alpha_search)?;

        let (f, fd) = (&mut r.flow, &d.flow);
        f.hidden = hidden(cfg, "flow.hidden", &fd.hidden)?;
        f.horizon = cfg.get_or("flow.horizon", fd.horizon)?;
        f.ode_steps = cfg.get_or("flow.ode_steps", fd.ode_steps)?;
        f.replan_every = cfg.get_or("flow.replan_every", fd.replan_every)?;
        f.epochs = cfg.get_or("flow.epochs", fd.epochs)?;
        f.batch = cfg.get_or("flow.batch", fd.batch)?;
        f.lr = cfg.get_or("flow.lr", fd.lr)?;
        f.weight_decay = cfg.get_or("flow.weight_decay", fd.weight_decay)?;
        f.encoder.frames = cfg.get_or("flow.frames", fd.encoder.frames)?;
        f.smooth = cfg.get_or("flow.smooth", fd.smooth)?;

        let (x, xd) = (&mut r.discrete, &d.discrete);
        x.hidden = hidden(cfg, "discrete.hidden", &xd.hidden)?;
        x.bins = cfg.get_or("discrete.bins", xd.bins)?;
        x.epochs = cfg.get_or("discrete.epochs", xd.epochs)?;
        x.batch = cfg.get_or("discrete.batch", xd.batch)?;
        x.lr = cfg.get_or("discrete.lr", xd.lr)?;
        x.weight_decay = cfg.get_or("discrete.weight_decay", xd.weight_decay)?;
        x.smooth = cfg.get_or("discrete.smooth", xd.smooth)?;

        cfg.reject_unknown()?;
        Ok(r)
    }

    /// The seed; train and eval refuse to run without one.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config { location: "run config".into(), reason: "seed is mandatory".into() })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn scene_spec(&self) -> Result<Arc<SceneSpec>> {
        load_scene(&self.scene, &self.base_dir)
    }

    /// Protocol with the run seed applied.
    pub fn protocol(&self) -> Result<ProtocolSpec> {
        Ok(ProtocolSpec { seed: self.require_seed()?, ..self.protocol.clone() })
    }

    /// Every sub-configuration with its seed derived from the run seed.
    fn seeded(&self) -> Result<Self> {
        let seed = self.require_seed()?;
        let mut r = self.clone();
        r.bc.seed = seed;
        r.dqn.seed = seed;
        r.flow.seed = seed;
        r.flow.encoder.seed = r.flow.encoder.seed.wrapping_add(seed);
        r.discrete.seed = seed;
        r.discrete.encoder.seed = r.discrete.encoder.seed.wrapping_add(seed);
        Ok(r)
    }
}

/// `desk`, `ground`, or a scene file.
pub fn load_scene(name: &str, base_dir: &Path) -> Result<Arc<SceneSpec>> {
    if let Ok(id) = SceneId::parse(name) {
        return Ok(Arc::new(SceneSpec::builtin(id)));
    }
    let p = Path::new(name);
    let p = if p.is_relative() { base_dir.join(p) } else { p.to_path_buf() };
    if !p.exists() {
        return Err(Error::invalid("scene", format!("{name} is neither a built-in scene nor a file")));
    }
    Ok(Arc::new(SceneSpec::load(&p)?))
}

/// A dataset directory (containing `manifest.txt`) or a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Error::DatasetNotFound(path.to_path_buf()));
    }
    DatasetManifest::load(&file)
}

/// Result of one training run.
pub struct Trained {
    pub policy: Box<dyn Policy>,
    pub demos_used: usize,
    /// Final joint configurations of the training demonstrations.
    pub endpoints: Vec<Vec<f64>>,
    pub overfit: Option<bool>,
    pub train_steps: usize,
    /// Per-epoch (or per-window) loss curves as CSV.
    pub curves_csv: String,
}

fn batches(samples: usize, batch: usize) -> usize {
    samples.div_ceil(batch.max(1))
}

/// Train the configured policy on `train` and `val` episodes.
pub fn train_on(cfg: &RunConfig, scene: Arc<SceneSpec>, train: &[EpisodeRecord], val: &[EpisodeRecord]) -> Result<Trained> {
    let cfg = cfg.seeded()?;
    let all: Vec<EpisodeRecord> = train.iter().chain(val).cloned().collect();
    if all.is_empty() {
        return Err(Error::EmptyDataset("no demonstrations".into()));
    }
    let endpoints = all.iter().filter_map(|r| r.steps.last().map(|s| s.q64())).collect();
    let demos_used = all.len();
    let t = match cfg.policy {
        PolicyKind::Bc => {
            let t = train_bc(train, val, &cfg.bc, scene.params.max_joint_step)?;
            Trained {
                demos_used,
                endpoints,
                overfit: Some(t.overfit.overfit),
                train_steps: cfg.bc.epochs * batches(t.samples, cfg.bc.batch),
                curves_csv: t.curves_csv(),
                policy: Box::new(t.policy),
            }
        }
        PolicyKind::Dqn => {
            let t = if cfg.alpha_search {
                let protocol = cfg.protocol()?;
                let score = |p: &DqnPolicy| Ok(aggregate(&run_rollouts(p, scene.clone(), &protocol, &endpoints)?).pickup);
                let (alpha, scores, t) = search_alpha(&all, scene.clone(), &cfg.dqn, &ALPHA_GRID, score)?;
                log::info!("alpha search {scores:?}: chose {alpha}");
                t
            } else {
                train_dqn(&all, scene, &cfg.dqn)?
            };
            Trained { demos_used, endpoints, overfit: None, train_steps: t.train_steps, curves_csv: t.curves_csv(), policy: Box::new(t.policy) }
        }
        PolicyKind::Flow => {
            let t = train_flow(&all, scene, &cfg.flow)?;
            Trained {
                demos_used,
                endpoints,
                overfit: None,
                train_steps: cfg.flow.epochs * batches(t.samples, cfg.flow.batch),
                curves_csv: t.curves_csv(),
                policy: Box::new(t.policy),
            }
        }
        PolicyKind::FlowDiscrete => {
            let t = train_discrete(&all, scene, &cfg.discrete)?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in t.loss.iter().enumerate() {
                csv.push_str(&format!("{},{l:.9}\n", e + 1));
            }
            Trained {
                demos_used,
                endpoints,
                overfit: None,
                train_steps: cfg.discrete.epochs * batches(t.samples, cfg.discrete.batch),
                curves_csv: csv,
                policy: Box::new(t.policy),
            }
        }
        other => return Err(Error::invalid("policy", format!("{} is not trainable", other.name()))),
    };
    Ok(t)
}

/// Load the configured dataset (and subset) and train.
pub fn train(cfg: &RunConfig) -> Result<Trained> {
    let seed = cfg.require_seed()?;
    let demos = cfg.demos.as_ref().ok_or_else(|| Error::Config { location: "run config".into(), reason: "missing required key demos".into() })?;
    let mut manifest = load_manifest(&cfg.resolve(demos))?;
    if let Some(n) = cfg.n_demos {
        manifest = subset(&manifest, n, seed)?;
    }
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(demos.display().to_string()));
    }
    let scene = cfg.scene_spec()?;
    let train_set = manifest.read_split(Split::Train)?;
    let val_set = manifest.read_split(Split::Val)?;
    train_on(cfg, scene, &train_set, &val_set)
}

/// Roll `policy` out under `protocol` and summarize as a report row.
pub fn evaluate(policy: &dyn Policy, scene: Arc<SceneSpec>, protocol_name: &str, protocol: &ProtocolSpec, endpoints: &[Vec<f64>]) -> Result<BenchRow> {
    let outcomes = run_rollouts(policy, scene.clone(), protocol, endpoints)?;
    let mut row = BenchRow::from_outcomes(policy.kind().name(), scene.scene_id.name(), protocol_name, 0, &outcomes);
    row.n_params = policy.n_params();
    Ok(row)
}

/// Train and evaluate each configuration; one row per configuration.
pub fn bench(cfgs: &[RunConfig]) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for cfg in cfgs {
        let t = train(cfg)?;
        let mut row = evaluate(t.policy.as_ref(), cfg.scene_spec()?, &cfg.protocol_name, &cfg.protocol()?, &t.endpoints)?;
        row.demos_used = t.demos_used;
        row.overfit = t.overfit;
        row.train_steps = t.train_steps;
        report.rows.push(row);
    }
    Ok(report)
}
