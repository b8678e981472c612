use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use panelbench::demo::{script_demos, DemoConfig};
use panelbench::episode::rlds::{to_csv, to_rlds_json};
use panelbench::episode::{read_episode, EpisodeRecord};
use panelbench::error::{Error, Result};
use panelbench::eval::{BenchReport, ProtocolSpec};
use panelbench::policy::{load_policy, save_policy, PolicyKind};
use panelbench::run::{bench, evaluate, load_manifest, load_scene, protocol_by_name, train, RunConfig};
use panelbench::sim::PerturbSpec;
use panelbench::teleop::{Gateway, GatewayConfig};

#[derive(Parser)]
#[command(name = "panelbench", version, about = "Panel pickup-and-install skill-learning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve teleoperation sessions over TCP.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// desk, ground, or a scene file served under its base name.
        #[arg(long)]
        scene: Option<String>,
        /// Recorded episodes go to OUT/episodes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate scripted demonstrations and a manifest.
    ScriptDemos {
        #[arg(long, default_value = "desk")]
        scene: String,
        /// Number of episodes.
        #[arg(long)]
        demos: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Reset perturbation half range in meters; 0 disables it.
        #[arg(long)]
        perturb: Option<f64>,
        /// Operator noise as a fraction of the step cap.
        #[arg(long)]
        noise: Option<f64>,
        /// Scale of the per-episode jitter ranges.
        #[arg(long)]
        jitter: Option<f64>,
        /// Store rendered views in each episode.
        #[arg(long)]
        frames: bool,
    },
    /// Train one policy from a run file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// perturbed, unperturbed, or a run file whose protocol keys apply.
        #[arg(long, default_value = "perturbed")]
        protocol: String,
        #[arg(long, default_value = "desk")]
        scene: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Dataset whose final configurations score the joint-angle error.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Train and evaluate several configurations into one report.
    Bench {
        /// Run files; repeat for a set.
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Comma-separated policies, each trained with the first run file.
        #[arg(long)]
        policies: Option<String>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Export episodes as RLDS-style JSON or CSV.
    Convert {
        /// Dataset directory, manifest, or a single episode file.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value = "rlds")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = &self.scene {
            cfg.scene = s.clone();
        }
        if let Some(p) = &self.policy {
            cfg.policy = PolicyKind::parse(p)?;
        }
        if let Some(d) = &self.demos {
            cfg.demos = Some(absolute(d)?);
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(absolute(o)?);
        }
        if let Some(p) = &self.protocol {
            let n = cfg.protocol.n_rollouts;
            cfg.protocol = ProtocolSpec { n_rollouts: n, ..protocol_by_name(p, 0)? };
            cfg.protocol_name = p.clone();
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_relative() { std::env::current_dir()?.join(p) } else { p.to_path_buf() })
}

fn load_run(path: Option<&Path>, over: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config { location: p.display().to_string(), reason: "run file not found".into() });
            }
            RunConfig::load(p)?
        }
        None => RunConfig::parse_str("", &std::env::current_dir()?)?,
    };
    over.apply(&mut cfg)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out.as_ref().ok_or_else(|| Error::Config { location: "run config".into(), reason: "missing output directory (out)".into() })?;
    let out = cfg.resolve(out);
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn cmd_serve(port: u16, scene: Option<String>, out: PathBuf) -> Result<()> {
    let mut gcfg = GatewayConfig::new(out);
    if let Some(s) = scene {
        let spec = load_scene(&s, &std::env::current_dir()?)?;
        gcfg.scenes.retain(|x| x.scene_id != spec.scene_id);
        gcfg.scenes.push(spec);
    }
    let listener = std::net::TcpListener::bind(("127.0.0.1", port))?;
    println!("listening on {}", listener.local_addr()?);
    Arc::new(Gateway::new(gcfg)).serve(listener)
}

#[allow(clippy::too_many_arguments)]
fn cmd_script_demos(scene: &str, n: usize, seed: u64, out: &Path, perturb: Option<f64>, noise: Option<f64>, jitter: Option<f64>, frames: bool) -> Result<()> {
    let spec = load_scene(scene, &std::env::current_dir()?)?;
    let mut cfg = DemoConfig { frames, ..DemoConfig::default() };
    if let Some(h) = perturb {
        cfg.perturb = (h > 0.0).then_some(PerturbSpec { half_range: h });
    }
    if let Some(v) = noise {
        cfg.operator_noise = v;
    }
    if let Some(v) = jitter {
        cfg.jitter = v;
    }
    let m = script_demos(spec, n, seed, out, &cfg)?;
    println!("wrote {} episodes to {}", m.len(), out.display());
    Ok(())
}

fn cmd_train(config: Option<PathBuf>, over: Overrides) -> Result<()> {
    let cfg = load_run(config.as_deref(), &over)?;
    cfg.require_seed()?;
    let out = out_dir(&cfg)?;
    let t = train(&cfg)?;
    save_policy(t.policy.as_ref(), &out.join("policy.ckpt"))?;
    fs::write(out.join("curves.csv"), &t.curves_csv)?;
    let overfit = t.overfit.map_or("-", |o| if o { "yes" } else { "no" });
    let summary = format!(
        "policy {}\ndemos {}\ntrain_steps {}\nn_params {}\noverfit {}\n",
        cfg.policy.name(),
        t.demos_used,
        t.train_steps,
        t.policy.n_params(),
        overfit
    );
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_eval(checkpoint: &Path, protocol: &str, scene: &str, seed: u64, out: &Path, demos: Option<&Path>) -> Result<()> {
    let (name, mut spec) = match protocol {
        "perturbed" | "unperturbed" => (protocol.to_string(), protocol_by_name(protocol, seed)?),
        file => {
            let r = RunConfig::load(Path::new(file))?;
            (r.protocol_name.clone(), r.protocol.clone())
        }
    };
    spec.seed = seed;
    let policy = load_policy(checkpoint)?;
    let endpoints = match demos {
        Some(d) => load_manifest(d)?.read_all()?.into_iter().filter_map(|(_, r)| r.steps.last().map(|s| s.q64())).collect(),
        None => Vec::new(),
    };
    let row = evaluate(policy.as_ref(), load_scene(scene, &std::env::current_dir()?)?, &name, &spec, &endpoints)?;
    let report = BenchReport { rows: vec![row], sweeps: Vec::new() };
    fs::create_dir_all(out)?;
    fs::write(out.join("eval.csv"), report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_bench(configs: Vec<PathBuf>, policies: Option<String>, over: Overrides) -> Result<()> {
    let mut runs = Vec::new();
    if configs.is_empty() {
        runs.push(load_run(None, &over)?);
    }
    for c in &configs {
        runs.push(load_run(Some(c), &over)?);
    }
    if let Some(list) = policies {
        let base = runs[0].clone();
        runs = list
            .split(',')
            .map(|p| {
                let mut r = base.clone();
                r.policy = PolicyKind::parse(p.trim())?;
                Ok(r)
            })
            .collect::<Result<_>>()?;
    }
    for r in &runs {
        r.require_seed()?;
    }
    let out = out_dir(&runs[0])?;
    let report = bench(&runs)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.txt"), report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

fn episodes_at(path: &Path) -> Result<Vec<(String, EpisodeRecord)>> {
    if path.extension().is_some_and(|e| e == "pnlb") {
        let stem = path.file_stem().map_or("episode".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![(stem, read_episode(path)?)]);
    }
    let m = load_manifest(path)?;
    m.entries
        .iter()
        .map(|e| {
            let stem = e.path.file_stem().map_or("episode".into(), |s| s.to_string_lossy().into_owned());
            Ok((stem, read_episode(&m.resolve(e))?))
        })
        .collect()
}

fn cmd_convert(demos: &Path, format: &str, out: &Path) -> Result<()> {
    if !matches!(format, "rlds" | "csv") {
        return Err(Error::invalid("format", format!("{format:?} is not rlds or csv")));
    }
    let episodes = episodes_at(demos)?;
    fs::create_dir_all(out)?;
    for (stem, rec) in &episodes {
        match format {
            "rlds" => fs::write(out.join(format!("{stem}.json")), rlds_line(rec))?,
            _ => fs::write(out.join(format!("{stem}.csv")), to_csv(rec))?,
        }
    }
    println!("converted {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

fn rlds_line(rec: &EpisodeRecord) -> String {
    let mut s = to_rlds_json(rec).to_string();
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { port, scene, out } => cmd_serve(port, scene, out),
        Command::ScriptDemos { scene, demos, seed, out, perturb, noise, jitter, frames } => cmd_script_demos(&scene, demos, seed, &out, perturb, noise, jitter, frames),
        Command::Train { config, over } => cmd_train(config, over),
        Command::Eval { checkpoint, protocol, scene, seed, out, demos } => cmd_eval(&checkpoint, &protocol, &scene, seed, &out, demos.as_deref()),
        Command::Bench { config, policies, over } => cmd_bench(config, policies, over),
        Command::Convert { demos, format, out } => cmd_convert(&demos, &format, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::from(2)
        }
    }
}
