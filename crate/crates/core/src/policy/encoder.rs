//! Frozen stand-in backbone: fixed random projections of the two camera
//! views, proprioception and panel state, plus a hashed instruction
//! embedding, fused into one `d`-dimensional feature.
//!
//! Only calibration statistics are fitted, once, before any head is
//! trained; nothing here receives gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Tensor};
use crate::sim::Image;

/// Side of the downsampled gray image.
pub const THUMB: usize = 32;
const VOCAB: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub agent_dim: usize,
    pub wrist_dim: usize,
    pub state_dim: usize,
    pub instruction_dim: usize,
    /// Frames of agent-view history.
    pub frames: usize,
    /// Route `q` to the head only, not through the encoder.
    pub q_head_only: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { agent_dim: 16, wrist_dim: 16, state_dim: 24, instruction_dim: 8, frames: 1, q_head_only: false, seed: 7 }
    }
}

impl EncoderConfig {
    pub fn out_dim(&self) -> usize {
        self.agent_dim + self.wrist_dim + self.state_dim + self.instruction_dim
    }
}

/// Everything the encoder looks at for one step.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    /// Most recent last; at least one frame.
    pub agent_frames: &'a [Vec<f64>],
    pub wrist: &'a [f64],
    pub q: &'a [f64],
    pub s: &'a [f64],
    pub a_prev: &'a [f64],
    pub instruction: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    pub cfg: EncoderConfig,
    pub n_joints: usize,
    pub n_panel: usize,
    pub n_action: usize,
    agent: Tensor<f64>,
    wrist: Tensor<f64>,
    state: Tensor<f64>,
    words: Tensor<f64>,
    state_in: Normalizer,
    out: Normalizer,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>();
    Tensor::from_vec(&[rows, cols], data).expect("shape matches")
}

/// 8×8 box-averaged luminance in `[-0.5, 0.5]`, row-major `THUMB × THUMB`.
pub fn downsample(img: &Image) -> Result<Vec<f64>> {
    if !img.width.is_multiple_of(THUMB) || !img.height.is_multiple_of(THUMB) || img.data.len() != img.width * img.height * 3 {
        return Err(Error::invalid("image", format!("{}x{} does not reduce to {THUMB}x{THUMB}", img.width, img.height)));
    }
    let (bx, by) = (img.width / THUMB, img.height / THUMB);
    let mut out = vec![0.0; THUMB * THUMB];
    for y in 0..img.height {
        for x in 0..img.width {
            let p = &img.data[3 * (y * img.width + x)..][..3];
            let lum = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            out[(y / by) * THUMB + x / bx] += lum;
        }
    }
    let n = (bx * by) as f64 * 255.0;
    out.iter_mut().for_each(|v| *v = *v / n - 0.5);
    Ok(out)
}

fn project(m: &Tensor<f64>, x: &[f64], out: &mut Vec<f64>) {
    let cols = m.cols();
    let start = out.len();
    out.resize(start + cols, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (o, w) in out[start..].iter_mut().zip(m.row(i)) {
                *o += xi * w;
            }
        }
    }
}

impl FrozenEncoder {
    pub fn new(cfg: EncoderConfig, n_joints: usize, n_panel: usize, n_action: usize) -> Result<Self> {
        if cfg.frames == 0 || cfg.out_dim() == 0 {
            return Err(Error::invalid("encoder", "needs at least one frame and a positive width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let px = THUMB * THUMB;
        let state_in = if cfg.q_head_only { 0 } else { n_joints } + n_panel + n_action;
        let agent = gaussian(cfg.frames * px, cfg.agent_dim, 1.0 / ((cfg.frames * px) as f64).sqrt(), &mut rng);
        let wrist = gaussian(px, cfg.wrist_dim, 1.0 / (px as f64).sqrt(), &mut rng);
        let state = gaussian(state_in, cfg.state_dim, 1.0 / (state_in.max(1) as f64).sqrt(), &mut rng);
        let words = gaussian(VOCAB, cfg.instruction_dim, 1.0, &mut rng);
        let d = cfg.out_dim();
        Ok(Self { n_joints, n_panel, n_action, agent, wrist, state, words, state_in: Normalizer::identity(state_in), out: Normalizer::identity(d), cfg })
    }

    pub fn dim(&self) -> usize {
        self.cfg.out_dim()
    }

    fn state_vector(&self, x: &EncoderInput) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.state_in.dim());
        if !self.cfg.q_head_only {
            v.extend_from_slice(x.q);
        }
        v.extend_from_slice(x.s);
        v.extend_from_slice(x.a_prev);
        v
    }

    fn check(&self, x: &EncoderInput) -> Result<()> {
        let px = THUMB * THUMB;
        let wrist_ok = self.cfg.wrist_dim == 0 || x.wrist.len() == px;
        if x.agent_frames.is_empty() || x.agent_frames.iter().any(|f| f.len() != px) || !wrist_ok {
            return Err(Error::invalid("encoder input", "image thumbnails have the wrong size"));
        }
        if x.q.len() != self.n_joints || x.s.len() != self.n_panel || x.a_prev.len() != self.n_action {
            return Err(Error::invalid("encoder input", "state widths do not match the encoder"));
        }
        Ok(())
    }

    /// Features before output calibration.
    fn raw(&self, x: &EncoderInput) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = Vec::with_capacity(self.dim());
        let k = self.cfg.frames;
        let n = x.agent_frames.len();
        // Oldest frames are repeated when the history is short.
        let frames: Vec<f64> = (0..k).flat_map(|i| x.agent_frames[(n + i).saturating_sub(k).min(n - 1)].iter().copied()).collect();
        project(&self.agent, &frames, &mut out);
        if self.cfg.wrist_dim > 0 {
            project(&self.wrist, x.wrist, &mut out);
        }
        project(&self.state, &self.state_in.apply(&self.state_vector(x)), &mut out);
        let tokens: Vec<String> = x.instruction.split_whitespace().map(|w| w.to_lowercase()).collect();
        let start = out.len();
        out.resize(start + self.cfg.instruction_dim, 0.0);
        for t in &tokens {
            let row = self.words.row(crc32fast::hash(t.as_bytes()) as usize % VOCAB);
            for (o, w) in out[start..].iter_mut().zip(row) {
                *o += w / (tokens.len() as f64).sqrt();
            }
        }
        Ok(out)
    }

    /// `f_t` for one step.
    pub fn encode(&self, x: &EncoderInput) -> Result<Vec<f64>> {
        Ok(self.out.apply(&self.raw(x)?))
    }

    /// Fit the input standardization of the state block and the per-feature
    /// output standardization on a calibration set. Done once, before use.
    pub fn calibrate(&mut self, inputs: &[EncoderInput]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset("encoder calibration set is empty".into()));
        }
        for x in inputs {
            self.check(x)?;
        }
        let states: Vec<Vec<f64>> = inputs.iter().map(|x| self.state_vector(x)).collect();
        if !states[0].is_empty() {
            self.state_in = Normalizer::fit(states.iter().map(|v| v.as_slice()), 1e-3)?;
        }
        self.out = Normalizer::identity(self.dim());
        let raw = inputs.iter().map(|x| self.raw(x)).collect::<Result<Vec<_>>>()?;
        let mut out = Normalizer::fit(raw.iter().map(|v| v.as_slice()), 0.0)?;
        // Features constant over the calibration set are only centered.
        out.std.iter_mut().filter(|s| **s < 1e-9).for_each(|s| *s = 1.0);
        self.out = out;
        Ok(())
    }

    pub fn push_to(&self, ck: &mut Checkpoint) {
        let c = &self.cfg;
        ck.set_meta("encoder.dims", format!("{},{},{},{}", c.agent_dim, c.wrist_dim, c.state_dim, c.instruction_dim));
        ck.set_meta("encoder.frames", c.frames);
        ck.set_meta("encoder.q_head_only", c.q_head_only);
        ck.set_meta("encoder.seed", c.seed);
        ck.set_meta("encoder.widths", format!("{},{},{}", self.n_joints, self.n_panel, self.n_action));
        self.state_in.push_to(ck, "encoder.state_in");
        self.out.push_to(ck, "encoder.out");
    }

    /// Projections are regenerated from the seed; only calibration is stored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let nums = |key: &str| -> Result<Vec<usize>> {
            ck.meta(key)?.split(',').map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("bad {key}")))).collect()
        };
        let dims = nums("encoder.dims")?;
        let widths = nums("encoder.widths")?;
        if dims.len() != 4 || widths.len() != 3 {
            return Err(Error::Checkpoint("encoder shape metadata is incomplete".into()));
        }
        let cfg = EncoderConfig {
            agent_dim: dims[0],
            wrist_dim: dims[1],
            state_dim: dims[2],
            instruction_dim: dims[3],
            frames: ck.meta_parse("encoder.frames")?,
            q_head_only: ck.meta_parse("encoder.q_head_only")?,
            seed: ck.meta_parse("encoder.seed")?,
        };
        let mut enc = Self::new(cfg, widths[0], widths[1], widths[2])?;
        enc.state_in = Normalizer::from_checkpoint(ck, "encoder.state_in")?;
        enc.out = Normalizer::from_checkpoint(ck, "encoder.out")?;
        if enc.state_in.dim() != enc.state.rows() || enc.out.dim() != enc.dim() {
            return Err(Error::Checkpoint("encoder calibration does not match its shape".into()));
        }
        Ok(enc)
    }

    /// Projection weights, for freeze checks.
    pub fn weights(&self) -> [&Tensor<f64>; 4] {
        [&self.agent, &self.wrist, &self.state, &self.words]
    }
}
