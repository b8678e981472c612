//! Open-loop replay of recorded actions through a fresh environment.

use std::sync::Arc;

use super::{ActionKind, EpisodeRecord, EpisodeStep, ACTION_DIM};
use crate::error::{Error, Result};
use crate::kinematics::CartesianDelta;
use crate::sim::{Action, Env, PerturbSpec, SceneSpec};

/// Maximum slider joint speed, rad/s.
pub const SLIDER_SPEED: f64 = 1.0;

/// Slider targets are stored as integer tenths of a radian so the stored
/// value is exact.
pub fn slider_angle(tenths: f32) -> f64 {
    tenths as f64 / 10.0
}

/// Joint increments moving `q` toward `targets` by at most `max_step` each.
pub fn slider_increment(q: &[f64], targets: &[f64], max_step: f64) -> Vec<f64> {
    q.iter().zip(targets).map(|(q, t)| (t - q).clamp(-max_step, max_step)).collect()
}

/// The environment action a stored action row stands for, given the joint
/// state it was issued from.
pub fn stored_action(kind: ActionKind, a: &[f32; ACTION_DIM], q: &[f64], hz: f64) -> Action {
    let n = q.len();
    let g = a[ACTION_DIM - 1] as f64;
    match kind {
        ActionKind::Cartesian => Action::Cartesian(CartesianDelta::from_array(&a.map(f64::from))),
        ActionKind::JointDelta => Action::Joint { dq: a[..n].iter().map(|&v| v as f64).collect(), g },
        ActionKind::SliderTarget => {
            let targets: Vec<f64> = a[..n].iter().map(|&k| slider_angle(k)).collect();
            Action::Joint { dq: slider_increment(q, &targets, SLIDER_SPEED / hz), g }
        }
    }
}

/// Reset a fresh environment the way `rec` was reset.
pub fn reset_for(scene: Arc<SceneSpec>, rec: &EpisodeRecord) -> Result<Env> {
    let mut env = Env::new(scene);
    let perturb = (rec.perturb > 0.0).then_some(PerturbSpec { half_range: rec.perturb as f64 });
    env.reset(perturb.as_ref(), rec.seed)?;
    Ok(env)
}

/// Re-run the recorded actions and rebuild the record from the replayed
/// observations. Frames are re-rendered for the steps that stored them.
pub fn replay(scene: Arc<SceneSpec>, rec: &EpisodeRecord) -> Result<EpisodeRecord> {
    if scene.scene_id != rec.scene_id {
        return Err(Error::invalid("replay", format!("record is for the {} scene", rec.scene_id)));
    }
    if rec.n_joints() != scene.chain.n_joints() {
        return Err(Error::dim("replay joints", scene.chain.n_joints(), rec.n_joints()));
    }
    let hz = rec.hz as f64;
    let mut env = reset_for(scene, rec)?;
    let mut steps = Vec::with_capacity(rec.len());
    for s in &rec.steps {
        let mut obs = env.observe();
        if s.agent_view.is_some() || s.wrist_view.is_some() {
            obs = env.observe_full();
            if s.agent_view.is_none() {
                obs.agent_view = None;
            }
            if s.wrist_view.is_none() {
                obs.wrist_view = None;
            }
        }
        steps.push(EpisodeStep::from_observation(&obs, s.action, s.reward));
        let a = stored_action(rec.action_kind, &s.action, env.q(), hz);
        env.step(&a)?;
    }
    Ok(EpisodeRecord { steps, ..header(rec) })
}

fn header(rec: &EpisodeRecord) -> EpisodeRecord {
    EpisodeRecord {
        steps: Vec::new(),
        instruction: rec.instruction.clone(),
        scene_id: rec.scene_id,
        seed: rec.seed,
        perturb: rec.perturb,
        hz: rec.hz,
        action_kind: rec.action_kind,
        metadata: rec.metadata.clone(),
    }
}

/// Replay and compare serialized bytes with the original.
pub fn replay_matches(scene: Arc<SceneSpec>, rec: &EpisodeRecord) -> Result<bool> {
    Ok(replay(scene, rec)?.to_bytes()? == rec.to_bytes()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slider_increment_is_rate_limited() {
        let dq = slider_increment(&[0.0, 0.5, 1.0], &[0.3, 0.5, 0.995], 0.01);
        assert_eq!(dq, vec![0.01, 0.0, 0.995 - 1.0]);
    }
}
