//! Scripted waypoint demonstrator standing in for a human operator.
//!
//! Each episode runs approach → descend → adhere → lift → transit → align →
//! release, closed-loop on the observed tool and panel poses, with
//! per-episode jitter in heights and speed plus small operator noise on
//! free-space moves.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::episode::{write_episode, ActionKind, DatasetManifest, EpisodeMeta, EpisodeRecord, EpisodeStep, Split, ACTION_DIM};
use crate::error::{Error, Result};
use crate::geometry::{add, norm, Pose};
use crate::kinematics::{pose_error, CartesianDelta};
use crate::sim::{scene::tool_down, Action, Env, Observation, Phase, PerturbSpec, SceneId, SceneSpec};

pub fn default_instruction(scene: SceneId) -> &'static str {
    match scene {
        SceneId::Desk => "pick up the panel and place it on the stand",
        SceneId::Ground => "pick up the panel and install it on the frame",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub perturb: Option<PerturbSpec>,
    /// Operator noise on free-space translation, as a fraction of the step cap.
    pub operator_noise: f64,
    /// Scale of the per-episode jitter ranges; 0 pins every episode to the midpoints.
    pub jitter: f64,
    pub max_steps: usize,
    /// Store rendered views in the episode.
    pub frames: bool,
    /// Every `val_every`-th episode goes to the validation split (0 = none).
    pub val_every: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { perturb: Some(PerturbSpec::default()), operator_noise: 0.15, jitter: 0.7, max_steps: 400, frames: false, val_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Approach,
    Descend,
    Adhere(u8),
    Lift,
    Transit,
    Align,
    Release(u8),
    Done,
}

const DWELL: u8 = 2;
const POS_TOL: f64 = 0.003;
const ROT_TOL: f64 = 0.02;

/// Observation-driven waypoint controller.
#[derive(Debug, Clone)]
pub struct Demonstrator {
    scene: Arc<SceneSpec>,
    stage: Stage,
    rng: ChaCha8Rng,
    approach_h: f64,
    lift_h: f64,
    transit_h: f64,
    speed: f64,
    noise: f64,
    lift_from: Option<Pose<f64>>,
}

impl Demonstrator {
    pub fn new(scene: Arc<SceneSpec>, seed: u64, jitter: f64, operator_noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD3E0_5EED);
        let mut j = |lo: f64, hi: f64| {
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo) * jitter);
            if half > 0.0 { rng.gen_range(mid - half..=mid + half) } else { mid }
        };
        let (approach_h, lift_h, transit_h, speed) = (j(0.06, 0.10), j(0.08, 0.12), j(0.06, 0.10), j(0.7, 1.0));
        Self { scene, stage: Stage::Approach, rng, approach_h, lift_h, transit_h, speed, noise: operator_noise, lift_from: None }
    }

    pub fn done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Next `[dx, dy, dz, drx, dry, drz, g]` for the observed state.
    pub fn act(&mut self, obs: &Observation) -> [f64; ACTION_DIM] {
        let scene = self.scene.clone();
        let p = scene.params;
        let tool = scene.tool_pose(&obs.q.q).expect("observation matches the scene chain");
        let panel = obs.s.pose;
        let grasp = panel.transform_point([0.0, 0.0, scene.panel_half[2]]);
        let grasp_pose = Pose::new(grasp, panel.orientation.mul(&tool_down()));
        let place_tool = || {
            let rel = tool.inverse().compose(&panel);
            scene.target_frame.compose(&rel.inverse())
        };
        loop {
            let (goal, g, noisy) = match self.stage {
                Stage::Approach => (Pose::new(add(grasp, [0.0, 0.0, self.approach_h]), grasp_pose.orientation), -1.0, true),
                Stage::Descend => (Pose::new(add(grasp, [0.0, 0.0, 0.005]), grasp_pose.orientation), -1.0, false),
                Stage::Adhere(n) => {
                    if obs.s.attached && n >= DWELL {
                        self.lift_from = Some(tool);
                        self.stage = Stage::Lift;
                        continue;
                    }
                    self.stage = Stage::Adhere(n.saturating_add(1));
                    return [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
                }
                Stage::Lift => {
                    let from = self.lift_from.unwrap_or(tool);
                    (Pose::new(add(from.position, [0.0, 0.0, self.lift_h]), from.orientation), 1.0, true)
                }
                Stage::Transit => {
                    let t = place_tool();
                    (Pose::new(add(t.position, [0.0, 0.0, self.transit_h]), t.orientation), 1.0, true)
                }
                Stage::Align => (place_tool(), 1.0, false),
                Stage::Release(n) => {
                    if !obs.s.attached && n >= DWELL {
                        self.stage = Stage::Done;
                        continue;
                    }
                    self.stage = Stage::Release(n.saturating_add(1));
                    return [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0];
                }
                Stage::Done => return [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0],
            };
            let e = pose_error(&tool, &goal);
            let (ep, er) = (norm([e[0], e[1], e[2]]), norm([e[3], e[4], e[5]]));
            if ep < POS_TOL && er < ROT_TOL {
                self.stage = match self.stage {
                    Stage::Approach => Stage::Descend,
                    Stage::Descend => Stage::Adhere(0),
                    Stage::Lift => Stage::Transit,
                    Stage::Transit => Stage::Align,
                    Stage::Align => Stage::Release(0),
                    s => s,
                };
                continue;
            }
            let mut d = CartesianDelta { d_pos: [e[0], e[1], e[2]], d_rot: [e[3], e[4], e[5]], g }
                .capped(p.max_step_pos * self.speed, p.max_step_rot * self.speed);
            if noisy && self.noise > 0.0 {
                let n = Normal::new(0.0, self.noise * p.max_step_pos).expect("finite sigma");
                let jitter = [n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng)];
                d.d_pos = add(d.d_pos, jitter);
                d = d.capped(p.max_step_pos, p.max_step_rot);
            }
            return d.to_array();
        }
    }
}

/// Quantize an action to the stored precision so a replay reproduces it.
pub fn quantize(a: &[f64; ACTION_DIM]) -> [f32; ACTION_DIM] {
    a.map(|v| v as f32)
}

pub fn cartesian_action(a: &[f32; ACTION_DIM]) -> Action {
    Action::Cartesian(CartesianDelta::from_array(&a.map(f64::from)))
}

/// Run the demonstrator for one episode. Fails if the script does not
/// finish with the panel aligned on the target.
pub fn record_demo(scene: Arc<SceneSpec>, seed: u64, cfg: &DemoConfig) -> Result<EpisodeRecord> {
    let mut env = Env::new(scene.clone());
    // The record keeps the range as f32; reset with that value so replay matches.
    let perturb = cfg.perturb.map(|p| PerturbSpec { half_range: f64::from(p.half_range as f32) });
    let mut obs = env.reset(perturb.as_ref(), seed)?;
    let mut demo = Demonstrator::new(scene.clone(), seed, cfg.jitter, cfg.operator_noise);
    let mut steps = Vec::new();
    while !demo.done() {
        if steps.len() >= cfg.max_steps {
            return Err(Error::invalid("demonstration", format!("seed {seed} did not finish in {} steps", cfg.max_steps)));
        }
        if cfg.frames {
            obs = env.observe_full();
        }
        let a = quantize(&demo.act(&obs));
        if demo.done() {
            break;
        }
        steps.push(EpisodeStep::from_observation(&obs, a, None));
        obs = env.step(&cartesian_action(&a))?;
    }
    if !env.check_success(Phase::Align) {
        return Err(Error::invalid("demonstration", format!("seed {seed} ended without alignment")));
    }
    let hz = scene.hz as f32;
    let n = steps.len();
    Ok(EpisodeRecord {
        steps,
        instruction: default_instruction(scene.scene_id).into(),
        scene_id: scene.scene_id,
        seed,
        perturb: perturb.map_or(0.0, |p| p.half_range as f32),
        hz,
        action_kind: ActionKind::Cartesian,
        metadata: EpisodeMeta { operator: "script".into(), duration_s: n as f32 / hz },
    })
}

/// Write `n` demonstrations under `out/episodes` plus `out/manifest.txt`.
/// Seeds whose script fails are skipped; episode `i` uses the `i`-th
/// successful seed drawn from `seed`.
pub fn script_demos(scene: Arc<SceneSpec>, n: usize, seed: u64, out: &Path, cfg: &DemoConfig) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(out);
    let mut attempt = 0u64;
    while manifest.len() < n {
        if attempt >= 2 * n as u64 + 20 {
            return Err(Error::invalid("demonstration", format!("only {} of {n} scripts succeeded", manifest.len())));
        }
        let ep_seed = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
        attempt += 1;
        let rec = match record_demo(scene.clone(), ep_seed, cfg) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping demo seed {ep_seed}: {e}");
                continue;
            }
        };
        let i = manifest.len();
        let rel = format!("episodes/ep_{i:05}.pnlb");
        write_episode(&rec, &out.join(&rel))?;
        let split = if cfg.val_every > 0 && i % cfg.val_every == cfg.val_every - 1 { Split::Val } else { Split::Train };
        manifest.push(split, scene.scene_id, rel);
    }
    manifest.save(&out.join("manifest.txt"))?;
    Ok(manifest)
}

/// Generate demonstrations in memory, in the same order as [`script_demos`].
pub fn generate_demos(scene: Arc<SceneSpec>, n: usize, seed: u64, cfg: &DemoConfig) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        if attempt >= 2 * n as u64 + 20 {
            return Err(Error::invalid("demonstration", format!("only {} of {n} scripts succeeded", out.len())));
        }
        let ep_seed = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
        attempt += 1;
        if let Ok(r) = record_demo(scene.clone(), ep_seed, cfg) {
            out.push(r);
        }
    }
    Ok(out)
}
