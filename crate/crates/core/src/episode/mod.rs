//! Episode files, smoothing, manifests, noise injection and export.
//!
//! # File layout
//!
//! All integers and floats little-endian.
//!
//! ```text
//! magic        4 bytes  "PNLB"
//! version      u32      1
//! scene        u8       0 = desk, 1 = ground
//! seed         u64      reset seed
//! perturb      f32      half range of the reset perturbation (0 = none)
//! hz           f32      step rate
//! action_kind  u8       0 = cartesian delta, 1 = slider targets (0.1 rad units),
//!                       2 = joint increments
//! instruction  u32 length + UTF-8
//! operator     u32 length + UTF-8
//! duration_s   f32
//! n_steps      u32
//! n_joints     u32
//! q            n_steps × n_joints f32
//! f            n_steps × 6 f32       force, torque
//! s            n_steps × 8 f32       panel position, quaternion wxyz, attached
//! action       n_steps × 7 f32
//! reward_mask  n_steps u8
//! reward       n_steps f32           0 where the mask is 0
//! frame_mask   n_steps u8            bit 0 agent view, bit 1 wrist view
//! frames       per step, per present view: u32 length + PPM (P6) bytes
//! crc32        u32 over everything above
//! ```

pub mod manifest;
pub mod noise;
pub mod replay;
pub mod rlds;
pub mod smooth;

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::sim::{Image, Observation, SceneId};

pub use manifest::{subset, DatasetManifest, ManifestEntry, Split};
pub use noise::inject_noise;
pub use replay::{replay, replay_matches};
pub use smooth::{smooth, smooth_trajectory, smooth_with_window, window_for_rate, DEFAULT_WINDOW};

const MAGIC: &[u8; 4] = b"PNLB";
const VERSION: u32 = 1;
pub const ACTION_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    /// `[dx, dy, dz, drx, dry, drz, g]` world-frame increments.
    Cartesian,
    /// Joint targets in integer tenths of a radian (one per joint, padded
    /// with zeros to 6) plus `g`.
    SliderTarget,
    /// Joint increments (padded with zeros to 6) plus `g`.
    JointDelta,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Cartesian => "cartesian",
            ActionKind::SliderTarget => "slider_target",
            ActionKind::JointDelta => "joint_delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub q: Vec<f32>,
    pub f: [f32; 6],
    pub s: [f32; 8],
    pub action: [f32; ACTION_DIM],
    pub reward: Option<f32>,
    pub agent_view: Option<Image>,
    pub wrist_view: Option<Image>,
}

impl EpisodeStep {
    /// Observation before `action` was applied.
    pub fn from_observation(o: &Observation, action: [f32; ACTION_DIM], reward: Option<f32>) -> Self {
        Self {
            q: o.q.q.iter().map(|&v| v as f32).collect(),
            f: o.f.to_array().map(|v| v as f32),
            s: o.s.to_array().map(|v| v as f32),
            action,
            reward,
            agent_view: o.agent_view.clone(),
            wrist_view: o.wrist_view.clone(),
        }
    }

    /// Same layout as [`Observation::low_dim`].
    pub fn low_dim(&self) -> Vec<f64> {
        self.f.iter().chain(&self.q).chain(&self.s).map(|&v| v as f64).collect()
    }

    pub fn q64(&self) -> Vec<f64> {
        self.q.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub operator: String,
    pub duration_s: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<EpisodeStep>,
    pub instruction: String,
    pub scene_id: SceneId,
    pub seed: u64,
    pub perturb: f32,
    pub hz: f32,
    pub action_kind: ActionKind,
    pub metadata: EpisodeMeta,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.steps.first().map_or(0, |s| s.q.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::invalid("episode", "no steps"));
        }
        if self.instruction.trim().is_empty() {
            return Err(Error::invalid("episode", "empty instruction"));
        }
        let nj = self.n_joints();
        if nj == 0 {
            return Err(Error::invalid("episode", "zero joints"));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.q.len() != nj {
                return Err(Error::invalid("episode", format!("step {i} has {} joints, expected {nj}", s.q.len())));
            }
            let finite = s.q.iter().chain(&s.f).chain(&s.s).chain(&s.action).chain(s.reward.as_ref()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("episode step {i}")));
            }
        }
        if !(self.hz.is_finite() && self.hz > 0.0 && self.perturb.is_finite() && self.metadata.duration_s.is_finite()) {
            return Err(Error::invalid("episode", "bad header values"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(match self.scene_id {
            SceneId::Desk => 0,
            SceneId::Ground => 1,
        });
        w.u64(self.seed);
        w.f32(self.perturb);
        w.f32(self.hz);
        w.u8(match self.action_kind {
            ActionKind::Cartesian => 0,
            ActionKind::SliderTarget => 1,
            ActionKind::JointDelta => 2,
        });
        w.str(&self.instruction);
        w.str(&self.metadata.operator);
        w.f32(self.metadata.duration_s);
        w.u32(self.steps.len() as u32);
        w.u32(self.n_joints() as u32);
        for s in &self.steps {
            w.f32s(&s.q);
        }
        for s in &self.steps {
            w.f32s(&s.f);
        }
        for s in &self.steps {
            w.f32s(&s.s);
        }
        for s in &self.steps {
            w.f32s(&s.action);
        }
        for s in &self.steps {
            w.u8(s.reward.is_some() as u8);
        }
        for s in &self.steps {
            w.f32(s.reward.unwrap_or(0.0));
        }
        for s in &self.steps {
            w.u8(s.agent_view.is_some() as u8 | (s.wrist_view.is_some() as u8) << 1);
        }
        for s in &self.steps {
            for img in [&s.agent_view, &s.wrist_view].into_iter().flatten() {
                w.blob(&img.to_ppm());
            }
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader::with_crc(bytes, origin)?;
        if r.take(4)? != MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt(&format!("unsupported version {version}")));
        }
        let scene_id = match r.u8()? {
            0 => SceneId::Desk,
            1 => SceneId::Ground,
            _ => return Err(r.corrupt("bad scene id")),
        };
        let seed = r.u64()?;
        let perturb = r.f32()?;
        let hz = r.f32()?;
        let action_kind = match r.u8()? {
            0 => ActionKind::Cartesian,
            1 => ActionKind::SliderTarget,
            2 => ActionKind::JointDelta,
            _ => return Err(r.corrupt("bad action kind")),
        };
        let instruction = r.string()?;
        let operator = r.string()?;
        let duration_s = r.f32()?;
        let n = r.u32()? as usize;
        let nj = r.u32()? as usize;
        // Each step needs at least this many bytes; reject absurd counts early.
        if n.saturating_mul(4 * (nj + 6 + 8 + ACTION_DIM + 1) + 2) > r.remaining() {
            return Err(r.corrupt("step count exceeds file size"));
        }
        let q = r.f32s(n * nj)?;
        let f = r.f32s(n * 6)?;
        let s = r.f32s(n * 8)?;
        let a = r.f32s(n * ACTION_DIM)?;
        let mask = r.take(n)?.to_vec();
        let rewards = r.f32s(n)?;
        let frames = r.take(n)?.to_vec();
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let mut img = |bit: u8| -> Result<Option<Image>> {
                if frames[i] & bit == 0 {
                    return Ok(None);
                }
                let blob = r.blob()?;
                Image::from_ppm(blob).map(Some).map_err(|_| r.corrupt("bad embedded image"))
            };
            let agent_view = img(1)?;
            let wrist_view = img(2)?;
            if mask[i] > 1 || frames[i] > 3 {
                return Err(r.corrupt("bad flag byte"));
            }
            steps.push(EpisodeStep {
                q: q[i * nj..(i + 1) * nj].to_vec(),
                f: std::array::from_fn(|k| f[i * 6 + k]),
                s: std::array::from_fn(|k| s[i * 8 + k]),
                action: std::array::from_fn(|k| a[i * ACTION_DIM + k]),
                reward: (mask[i] == 1).then_some(rewards[i]),
                agent_view,
                wrist_view,
            });
        }
        r.expect_end()?;
        let rec = Self { steps, instruction, scene_id, seed, perturb, hz, action_kind, metadata: EpisodeMeta { operator, duration_s } };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn write_episode(record: &EpisodeRecord, path: &Path) -> Result<()> {
    let bytes = record.to_bytes()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    EpisodeRecord::from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sample(n: usize, frames: bool) -> EpisodeRecord {
        let steps = (0..n)
            .map(|i| {
                let x = i as f32;
                EpisodeStep {
                    q: vec![x * 0.01, -0.5, 1.0, 0.25, 0.0, x],
                    f: [0.0, 0.0, x, 0.0, 0.1, 0.0],
                    s: [0.45, -0.2, 0.01, 1.0, 0.0, 0.0, 0.0, (i % 2) as f32],
                    action: [0.01, 0.0, -0.01, 0.0, 0.0, 0.02, 1.0],
                    reward: (i % 3 == 0).then_some(-x),
                    agent_view: (frames && i % 2 == 0).then(|| Image::filled(4, 4, [i as u8, 2, 3])),
                    wrist_view: frames.then(|| Image::filled(2, 2, [9, 9, i as u8])),
                }
            })
            .collect();
        EpisodeRecord {
            steps,
            instruction: "pick up the panel and place it on the stand".into(),
            scene_id: SceneId::Desk,
            seed: 42,
            perturb: 0.02,
            hz: 20.0,
            action_kind: ActionKind::Cartesian,
            metadata: EpisodeMeta { operator: "script".into(), duration_s: n as f32 / 20.0 },
        }
    }

    #[test]
    fn forty_step_round_trip() {
        for frames in [false, true] {
            let rec = sample(40, frames);
            let bytes = rec.to_bytes().unwrap();
            let back = EpisodeRecord::from_bytes(&bytes, "mem").unwrap();
            assert_eq!(back, rec);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn invalid_records_are_rejected() {
        let mut rec = sample(3, false);
        rec.steps.clear();
        assert!(rec.to_bytes().is_err());
        let mut rec = sample(3, false);
        rec.instruction = "  ".into();
        assert!(rec.to_bytes().is_err());
        let mut rec = sample(3, false);
        rec.steps[1].q.pop();
        assert!(rec.to_bytes().is_err());
        let mut rec = sample(3, false);
        rec.steps[2].f[0] = f32::NAN;
        assert!(rec.to_bytes().is_err());
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let bytes = sample(10, true).to_bytes().unwrap();
        for pos in [0, 9, bytes.len() / 2, bytes.len() - 5] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            assert!(matches!(EpisodeRecord::from_bytes(&bad, "mem"), Err(Error::Checksum { .. })), "byte {pos}");
        }
        assert!(EpisodeRecord::from_bytes(&bytes[..bytes.len() - 1], "mem").is_err());
    }

    #[test]
    fn file_helpers_and_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/ep.pnlb");
        let rec = sample(5, false);
        write_episode(&rec, &p).unwrap();
        assert_eq!(read_episode(&p).unwrap(), rec);
        assert!(matches!(read_episode(&dir.path().join("nope.pnlb")), Err(Error::DatasetNotFound(_))));
    }
}
