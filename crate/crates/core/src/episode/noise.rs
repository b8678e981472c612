use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EpisodeRecord;
use crate::error::{Error, Result};

/// Add zero-mean Gaussian noise to joint states (`sigma_q`, radians) and
/// force/torque readings (`sigma_f`). Actions, panel state and images are
/// left untouched.
pub fn inject_noise(record: &EpisodeRecord, sigma_q: f64, sigma_f: f64, seed: u64) -> Result<EpisodeRecord> {
    if !(sigma_q >= 0.0 && sigma_f >= 0.0) {
        return Err(Error::invalid("noise sigma", "must be non-negative"));
    }
    let mut out = record.clone();
    if sigma_q == 0.0 && sigma_f == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nq = Normal::new(0.0, sigma_q).expect("finite sigma");
    let nf = Normal::new(0.0, sigma_f).expect("finite sigma");
    for step in &mut out.steps {
        for v in &mut step.q {
            *v = (*v as f64 + nq.sample(&mut rng)) as f32;
        }
        for v in &mut step.f {
            *v = (*v as f64 + nf.sample(&mut rng)) as f32;
        }
    }
    Ok(out)
}
