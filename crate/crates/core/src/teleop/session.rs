//! One operator session: an environment, a control mode and an optional
//! recording in progress.

use std::sync::Arc;

use crate::demo::quantize;
use crate::episode::replay::stored_action;
use crate::episode::{ActionKind, EpisodeMeta, EpisodeRecord, EpisodeStep, ACTION_DIM};
use crate::error::{Error, Result};
use crate::kinematics::CartesianDelta;
use crate::sim::{Env, Observation, SceneSpec};

pub const KEYBOARD_HZ: f64 = 20.0;
pub const SLIDER_HZ: f64 = 100.0;
pub const SLIDER_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Slider,
    Keyboard,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Slider => "slider",
            Mode::Keyboard => "keyboard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "slider" => Ok(Mode::Slider),
            "keyboard" => Ok(Mode::Keyboard),
            other => Err(Error::Protocol(format!("unknown mode {other:?}"))),
        }
    }

    pub fn hz(self) -> f64 {
        match self {
            Mode::Slider => SLIDER_HZ,
            Mode::Keyboard => KEYBOARD_HZ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliderCommand {
    pub joint: usize,
    pub angle: f64,
    /// Adhesion command; `None` keeps the last one.
    pub g: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyCommand {
    pub delta: CartesianDelta<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Slider(SliderCommand),
    Key(KeyCommand),
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Slider(_) => Mode::Slider,
            Command::Key(_) => Mode::Keyboard,
        }
    }
}

/// Round to the nearest multiple of 0.1 rad inside `[lo, hi]`, returned as
/// the integer number of tenths.
pub fn quantize_tenths(angle: f64, lo: f64, hi: f64) -> Result<i32> {
    if !angle.is_finite() {
        return Err(Error::NonFinite("slider angle".into()));
    }
    let (kmin, kmax) = ((lo * 10.0).ceil(), (hi * 10.0).floor());
    if kmin > kmax {
        return Err(Error::invalid("joint limits", "no multiple of 0.1 rad inside"));
    }
    Ok((angle * 10.0).round().clamp(kmin, kmax) as i32)
}

/// [`quantize_tenths`] in radians.
pub fn quantize_angle(angle: f64, lo: f64, hi: f64) -> Result<f64> {
    Ok(quantize_tenths(angle, lo, hi)? as f64 / 10.0)
}

/// Acknowledgment of a recording toggle.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordAck {
    Started,
    AlreadyRecording,
    NotRecording,
    Stopped(EpisodeRecord),
}

#[derive(Debug)]
pub struct Session {
    id: String,
    env: Env,
    mode: Mode,
    instruction: String,
    seed: u64,
    frames: bool,
    recording: Option<Vec<EpisodeStep>>,
    episodes: u64,
    /// Slider targets in tenths of a radian.
    targets: Vec<i32>,
    g: f64,
    closed: bool,
}

impl Session {
    /// Opens a session; slider sessions step at 100 Hz, keyboard ones at 20 Hz.
    pub fn open(id: impl Into<String>, scene: &SceneSpec, mode: Mode, instruction: &str, seed: u64) -> Result<Self> {
        if instruction.trim().is_empty() {
            return Err(Error::invalid("instruction", "empty"));
        }
        let mut scene = scene.clone();
        scene.hz = mode.hz();
        scene.validate()?;
        if scene.chain.n_joints() >= ACTION_DIM {
            return Err(Error::dim("slider joints", ACTION_DIM - 1, scene.chain.n_joints()));
        }
        let targets = scene
            .home_q
            .iter()
            .zip(scene.chain.limits())
            .map(|(&q, &(lo, hi))| quantize_tenths(q, lo, hi))
            .collect::<Result<_>>()?;
        let mut env = Env::new(Arc::new(scene));
        env.reset(None, seed)?;
        Ok(Self { id: id.into(), env, mode, instruction: instruction.to_string(), seed, frames: false, recording: None, episodes: 0, targets, g: 0.0, closed: false })
    }

    /// Render the agent view into every observation (and recorded step).
    pub fn with_frames(mut self, on: bool) -> Self {
        self.frames = on;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn hz(&self) -> f64 {
        self.env.scene().hz
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn recorded_steps(&self) -> usize {
        self.recording.as_ref().map_or(0, Vec::len)
    }

    /// Slider targets in radians.
    pub fn targets(&self) -> Vec<f64> {
        self.targets.iter().map(|&k| k as f64 / 10.0).collect()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn observe(&self) -> Observation {
        if self.frames {
            let mut o = self.env.observe_full();
            o.wrist_view = None;
            o
        } else {
            self.env.observe()
        }
    }

    fn live(&self) -> Result<()> {
        if self.closed {
            Err(Error::SessionExpired(self.id.clone()))
        } else {
            Ok(())
        }
    }

    /// Apply one command and advance the environment one step.
    pub fn apply(&mut self, cmd: &Command) -> Result<Observation> {
        self.live()?;
        if cmd.mode() != self.mode {
            return Err(Error::ModeMismatch { session: self.mode.name(), command: cmd.mode().name() });
        }
        let (kind, stored) = match cmd {
            Command::Key(k) => {
                let p = self.env.scene().params;
                let d = k.delta;
                if d.to_array().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("key command".into()));
                }
                let capped = CartesianDelta { g: d.g.clamp(-1.0, 1.0), ..d.capped(p.max_step_pos, p.max_step_rot) };
                (ActionKind::Cartesian, quantize(&capped.to_array()))
            }
            Command::Slider(s) => {
                let limits = self.env.scene().chain.limits();
                let &(lo, hi) = limits.get(s.joint).ok_or_else(|| Error::invalid("slider joint", format!("index {} out of range", s.joint)))?;
                self.targets[s.joint] = quantize_tenths(s.angle, lo, hi)?;
                if let Some(g) = s.g {
                    if !g.is_finite() {
                        return Err(Error::NonFinite("slider adhesion".into()));
                    }
                    self.g = g.clamp(-1.0, 1.0);
                }
                let mut a = [0.0f32; ACTION_DIM];
                for (dst, &k) in a.iter_mut().zip(&self.targets) {
                    *dst = k as f32;
                }
                a[ACTION_DIM - 1] = self.g as f32;
                (ActionKind::SliderTarget, a)
            }
        };
        let before = self.recording.is_some().then(|| self.observe());
        let action = stored_action(kind, &stored, self.env.q(), self.hz());
        self.env.step(&action)?;
        if let (Some(steps), Some(o)) = (self.recording.as_mut(), before) {
            steps.push(EpisodeStep::from_observation(&o, stored, None));
        }
        Ok(self.observe())
    }

    /// Recording restarts the environment from the session seed so a flushed
    /// episode can be replayed from its header alone.
    pub fn toggle_recording(&mut self, on: bool) -> Result<RecordAck> {
        self.live()?;
        match (on, self.recording.is_some()) {
            (true, true) => Ok(RecordAck::AlreadyRecording),
            (false, false) => Ok(RecordAck::NotRecording),
            (true, false) => {
                self.env.reset(None, self.episode_seed())?;
                let lim = self.env.scene().chain.limits().to_vec();
                self.targets = self.env.q().iter().zip(&lim).map(|(&q, &(lo, hi))| quantize_tenths(q, lo, hi)).collect::<Result<_>>()?;
                self.g = 0.0;
                self.recording = Some(Vec::new());
                Ok(RecordAck::Started)
            }
            (false, true) => {
                let steps = self.recording.take().unwrap_or_default();
                let rec = self.header(steps);
                self.episodes += 1;
                Ok(RecordAck::Stopped(rec))
            }
        }
    }

    fn episode_seed(&self) -> u64 {
        self.seed.wrapping_add(self.episodes)
    }

    fn header(&self, steps: Vec<EpisodeStep>) -> EpisodeRecord {
        let hz = self.hz();
        let n = steps.len();
        EpisodeRecord {
            steps,
            instruction: self.instruction.clone(),
            scene_id: self.env.scene().scene_id,
            seed: self.episode_seed(),
            perturb: 0.0,
            hz: hz as f32,
            action_kind: match self.mode {
                Mode::Slider => ActionKind::SliderTarget,
                Mode::Keyboard => ActionKind::Cartesian,
            },
            metadata: EpisodeMeta { operator: format!("teleop-{}", self.mode.name()), duration_s: (n as f64 / hz) as f32 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::replay_matches;
    use crate::geometry::sub;

    fn key(dx: f64, dy: f64, dz: f64, g: f64) -> Command {
        Command::Key(KeyCommand { delta: CartesianDelta { d_pos: [dx, dy, dz], d_rot: [0.0; 3], g } })
    }

    fn slider(joint: usize, angle: f64) -> Command {
        Command::Slider(SliderCommand { joint, angle, g: None })
    }

    #[test]
    fn open_sets_clock_and_validates() {
        let s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "pick up the panel", 0).unwrap();
        assert_eq!(s.hz(), 20.0);
        let s = Session::open("b", &SceneSpec::ground(), Mode::Slider, "pick up the panel", 0).unwrap();
        assert_eq!(s.hz(), 100.0);
        assert!(Session::open("c", &SceneSpec::desk(), Mode::Keyboard, "  ", 0).is_err());
    }

    #[test]
    fn quantization_is_exact_and_inside_limits() {
        assert_eq!(quantize_tenths(0.27, -1.0, 1.0).unwrap(), 3);
        assert!((quantize_angle(0.27, -1.0, 1.0).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(quantize_tenths(5.0, -1.05, 1.05).unwrap(), 10);
        assert_eq!(quantize_tenths(-5.0, -1.05, 1.05).unwrap(), -10);
        assert!(quantize_tenths(0.0, 0.01, 0.09).is_err());
        assert!(quantize_tenths(f64::NAN, -1.0, 1.0).is_err());
    }

    #[test]
    fn slider_converges_under_rate_limit() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Slider, "move", 0).unwrap();
        let q0 = s.env().q()[2];
        let max_step = 1.0 / SLIDER_HZ;
        let need = ((0.30 - q0).abs() / max_step).ceil() as usize;
        let mut prev = q0;
        for i in 0..need + 2 {
            let o = s.apply(&slider(2, 0.30)).unwrap();
            assert!((o.q.q[2] - prev).abs() <= max_step + 1e-12, "step {i} exceeds the rate limit");
            prev = o.q.q[2];
        }
        assert!((prev - 0.30).abs() < 1e-12);
    }

    #[test]
    fn key_plus_x_moves_tool_in_x() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "move", 0).unwrap();
        let x0 = s.env().tool_pose().position[0];
        s.apply(&key(0.01, 0.0, 0.0, 0.0)).unwrap();
        assert!(s.env().tool_pose().position[0] > x0 + 0.005);
    }

    #[test]
    fn oversized_key_delta_is_capped() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "move", 0).unwrap();
        s.toggle_recording(true).unwrap();
        s.apply(&key(1.0, 0.0, 0.0, 5.0)).unwrap();
        let RecordAck::Stopped(rec) = s.toggle_recording(false).unwrap() else { panic!() };
        let a = rec.steps[0].action;
        let cap = SceneSpec::desk().params.max_step_pos;
        assert!((a[0] as f64 - cap).abs() < 1e-6);
        assert_eq!(a[6], 1.0);
    }

    #[test]
    fn g_near_panel_attaches_next_step() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "pick", 0).unwrap();
        let tol = s.env().scene().params.grasp_tol;
        for _ in 0..400 {
            if s.env().grasp_distance() <= 0.5 * tol {
                break;
            }
            let d = sub(s.env().grasp_point(), s.env().tool_pose().position);
            s.apply(&key(d[0], d[1], d[2], 0.0)).unwrap();
        }
        assert!(s.env().grasp_distance() <= 0.5 * tol);
        assert!(!s.env().panel().attached);
        let o = s.apply(&key(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert!(o.s.attached);
    }

    #[test]
    fn mode_mismatch_and_expiry() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "pick", 0).unwrap();
        assert!(matches!(s.apply(&slider(0, 0.1)), Err(Error::ModeMismatch { .. })));
        s.close();
        assert!(matches!(s.apply(&key(0.0, 0.0, 0.0, 0.0)), Err(Error::SessionExpired(_))));
    }

    #[test]
    fn recording_toggles() {
        let mut s = Session::open("a", &SceneSpec::desk(), Mode::Keyboard, "pick", 0).unwrap();
        assert_eq!(s.toggle_recording(false).unwrap(), RecordAck::NotRecording);
        assert_eq!(s.toggle_recording(true).unwrap(), RecordAck::Started);
        for _ in 0..20 {
            s.apply(&key(0.002, 0.0, 0.0, 0.0)).unwrap();
        }
        assert_eq!(s.toggle_recording(true).unwrap(), RecordAck::AlreadyRecording);
        for _ in 0..20 {
            s.apply(&key(0.0, 0.002, 0.0, 0.0)).unwrap();
        }
        let RecordAck::Stopped(rec) = s.toggle_recording(false).unwrap() else { panic!("expected a flushed episode") };
        assert_eq!(rec.len(), 40);
        assert_eq!(rec.action_kind, ActionKind::Cartesian);
        assert!(!s.is_recording());
    }

    #[test]
    fn flushed_episodes_replay_byte_exactly() {
        let scene = SceneSpec::desk();
        let mut s = Session::open("a", &scene, Mode::Keyboard, "pick", 9).unwrap().with_frames(true);
        s.toggle_recording(true).unwrap();
        for i in 0..30 {
            s.apply(&key(0.003 * (i as f64 * 0.3).sin(), 0.002, -0.001, if i > 20 { 1.0 } else { 0.0 })).unwrap();
        }
        let RecordAck::Stopped(rec) = s.toggle_recording(false).unwrap() else { panic!() };
        assert!(rec.steps[0].agent_view.is_some());
        assert!(replay_matches(Arc::new(scene.clone()), &rec).unwrap());

        let mut s = Session::open("b", &scene, Mode::Slider, "pick", 4).unwrap();
        s.toggle_recording(true).unwrap();
        for i in 0..60 {
            s.apply(&slider(i % 3, 0.1 * (i % 7) as f64 - 0.3)).unwrap();
        }
        let RecordAck::Stopped(rec) = s.toggle_recording(false).unwrap() else { panic!() };
        assert_eq!(rec.hz, 100.0);
        for step in &rec.steps {
            for &k in &step.action[..scene.chain.n_joints()] {
                let angle = crate::episode::replay::slider_angle(k);
                assert!((angle * 10.0 - (angle * 10.0).round()).abs() < 1e-12);
            }
        }
        assert!(replay_matches(Arc::new(scene), &rec).unwrap());
    }
}
