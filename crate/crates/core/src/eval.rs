//! Rollout protocol, success counting, sweeps and benchmark reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sim::{Env, Phase, PerturbSpec, SceneSpec};

/// Environment variable capping rollout parallelism.
pub const THREADS_ENV: &str = "PANELBENCH_THREADS";

/// Pickup rate counted as "reached" by the sample-efficiency summary.
pub const THRESHOLD: Fraction = Fraction { num: 9, den: 10 };

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub n_rollouts: usize,
    pub perturb: Option<PerturbSpec>,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self { n_rollouts: 50, perturb: None, seed: 0, max_steps: 300 }
    }
}

impl ProtocolSpec {
    pub fn perturbed(seed: u64) -> Self {
        Self { perturb: Some(PerturbSpec::default()), seed, ..Self::default() }
    }

    pub fn unperturbed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Environment seed of rollout `i`; distinct for distinct `i`.
    pub fn rollout_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(0x0000_0100_0000_01B3).wrapping_add(i as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 {
            return Err(Error::invalid("protocol", "n_rollouts must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("protocol", "max_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub seed: u64,
    pub pickup: bool,
    pub place: bool,
    pub align: bool,
    /// Mean absolute per-joint distance from the final configuration to the
    /// nearest demonstration endpoint.
    pub joint_error: Option<f64>,
    pub steps: usize,
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn mean_abs_joint_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

pub fn rollout(policy: &dyn Policy, scene: Arc<SceneSpec>, protocol: &ProtocolSpec, i: usize, endpoints: &[Vec<f64>]) -> Result<Outcome> {
    let seed = protocol.rollout_seed(i);
    let mut env = Env::new(scene);
    let mut obs = env.reset(protocol.perturb.as_ref(), seed)?;
    let mut ctrl = policy.controller(seed);
    let mut pickup = false;
    let mut steps = 0;
    while steps < protocol.max_steps {
        let a = ctrl.act(&env, &obs)?;
        obs = env.step(&a)?;
        steps += 1;
        pickup |= env.check_success(Phase::Pickup);
        if env.check_success(Phase::Align) && !env.panel().attached {
            break;
        }
    }
    let place = pickup && env.check_success(Phase::Place);
    let align = place && env.check_success(Phase::Align);
    let joint_error = endpoints
        .iter()
        .filter(|e| e.len() == env.q().len())
        .map(|e| mean_abs_joint_error(env.q(), e))
        .min_by(f64::total_cmp);
    Ok(Outcome { seed, pickup, place, align, joint_error, steps })
}

/// Run every rollout of `protocol`, in parallel up to `PANELBENCH_THREADS`.
/// The outcome list is in rollout order and independent of thread count.
pub fn run_rollouts(policy: &dyn Policy, scene: Arc<SceneSpec>, protocol: &ProtocolSpec, endpoints: &[Vec<f64>]) -> Result<Vec<Outcome>> {
    protocol.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::invalid("thread pool", e.to_string()))?;
    pool.install(|| {
        (0..protocol.n_rollouts)
            .into_par_iter()
            .map(|i| rollout(policy, scene.clone(), protocol, i, endpoints))
            .collect()
    })
}

/// Exact rational rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// `self ≥ other`, compared without rounding.
    pub fn at_least(self, other: Fraction) -> bool {
        self.num * other.den >= other.num * self.den
    }

    pub fn percent(self) -> String {
        // Integer arithmetic keeps the text identical across platforms.
        let tenths = (self.num * 1000 + self.den / 2) / self.den.max(1);
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub n: usize,
    pub pickup: usize,
    pub place: usize,
    pub align: usize,
}

impl Counts {
    pub fn pickup_rate(&self) -> Fraction {
        Fraction { num: self.pickup, den: self.n }
    }

    pub fn place_rate(&self) -> Fraction {
        Fraction { num: self.place, den: self.n }
    }

    pub fn align_rate(&self) -> Fraction {
        Fraction { num: self.align, den: self.n }
    }
}

pub fn aggregate(outcomes: &[Outcome]) -> Counts {
    Counts {
        n: outcomes.len(),
        pickup: outcomes.iter().filter(|o| o.pickup).count(),
        place: outcomes.iter().filter(|o| o.place).count(),
        align: outcomes.iter().filter(|o| o.align).count(),
    }
}

pub fn mean_joint_error(outcomes: &[Outcome]) -> Option<f64> {
    let errs: Vec<f64> = outcomes.iter().filter_map(|o| o.joint_error).collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// One policy evaluated under one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub policy: String,
    pub scene: String,
    pub protocol: String,
    pub demos_used: usize,
    pub counts: Counts,
    pub mean_joint_error_rad: Option<f64>,
    pub overfit: Option<bool>,
    pub n_params: usize,
    /// Optimizer steps taken during training.
    pub train_steps: usize,
}

impl BenchRow {
    pub fn from_outcomes(policy: &str, scene: &str, protocol: &str, demos_used: usize, outcomes: &[Outcome]) -> Self {
        Self {
            policy: policy.into(),
            scene: scene.into(),
            protocol: protocol.into(),
            demos_used,
            counts: aggregate(outcomes),
            mean_joint_error_rad: mean_joint_error(outcomes),
            overfit: None,
            n_params: 0,
            train_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub n_demos: usize,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub policy: String,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// First demo count whose pickup rate reaches [`THRESHOLD`].
    pub fn demos_to_threshold(&self) -> Option<usize> {
        self.points.iter().find(|p| p.counts.pickup_rate().at_least(THRESHOLD)).map(|p| p.n_demos)
    }

    /// `n_demos,pickup,place,align` with rates as exact fractions.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_demos,pickup,place,align\n");
        for p in &self.points {
            let c = p.counts;
            let _ = writeln!(s, "{},{}/{},{}/{},{}/{}", p.n_demos, c.pickup, c.n, c.place, c.n, c.align, c.n);
        }
        s
    }
}

/// Train at `n = step, 2·step, .., max` demonstrations and evaluate each.
/// `n = 0` entries in `ns` are skipped with a warning.
pub fn sample_efficiency_sweep<F>(policy: &str, ns: &[usize], mut train: F, scene: Arc<SceneSpec>, protocol: &ProtocolSpec) -> Result<SweepCurve>
where
    F: FnMut(usize) -> Result<Box<dyn Policy>>,
{
    let mut points = Vec::new();
    for &n in ns {
        if n == 0 {
            log::warn!("sweep point n = 0 skipped");
            continue;
        }
        let p = train(n)?;
        let outcomes = run_rollouts(p.as_ref(), scene.clone(), protocol, &[])?;
        points.push(SweepPoint { n_demos: n, counts: aggregate(&outcomes) });
    }
    Ok(SweepCurve { policy: policy.into(), points })
}

pub fn sweep_sizes(max: usize, step: usize) -> Vec<usize> {
    (1..=max / step.max(1)).map(|k| k * step).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub sweeps: Vec<SweepCurve>,
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl BenchReport {
    /// Deterministic CSV: identical inputs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "policy,scene,protocol,demos_used,rollouts,pickup,place,align,pickup_rate,place_rate,align_rate,mean_joint_angle_error_rad,overfit,n_params,train_steps\n",
        );
        for r in &self.rows {
            let c = r.counts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{},{},{},{}",
                r.policy,
                r.scene,
                r.protocol,
                r.demos_used,
                c.n,
                c.pickup,
                c.place,
                c.align,
                c.pickup_rate().value(),
                c.place_rate().value(),
                c.align_rate().value(),
                opt_f(r.mean_joint_error_rad),
                r.overfit.map_or("", |o| if o { "yes" } else { "no" }),
                r.n_params,
                r.train_steps
            );
        }
        for sw in &self.sweeps {
            let _ = writeln!(s, "# sweep {}", sw.policy);
            s.push_str(&sw.to_csv());
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:<7} {:<10} {:>6} {:>9} {:>9} {:>9} {:>10} {:>8}\n",
            "policy", "scene", "protocol", "demos", "pickup", "place", "align", "joint_err", "overfit"
        );
        for r in &self.rows {
            let c = r.counts;
            let _ = writeln!(
                s,
                "{:<14} {:<7} {:<10} {:>6} {:>9} {:>9} {:>9} {:>10} {:>8}",
                r.policy,
                r.scene,
                r.protocol,
                r.demos_used,
                c.pickup_rate().percent(),
                c.place_rate().percent(),
                c.align_rate().percent(),
                r.mean_joint_error_rad.map_or("-".into(), |v| format!("{v:.3}")),
                r.overfit.map_or("-", |o| if o { "yes" } else { "no" })
            );
        }
        s
    }
}

/// Summary across policies: rates, demonstrations needed to reach the
/// threshold, training cost and size.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub protocol: String,
    pub counts: Counts,
    pub demos_to_threshold: Option<usize>,
    pub train_time_s: Option<f64>,
    pub train_steps: usize,
    pub n_params: usize,
}

pub fn compare(report: &BenchReport, train_time_s: &BTreeMap<String, f64>) -> Vec<ComparisonRow> {
    report
        .rows
        .iter()
        .map(|r| ComparisonRow {
            policy: r.policy.clone(),
            protocol: r.protocol.clone(),
            counts: r.counts,
            demos_to_threshold: report.sweeps.iter().find(|s| s.policy == r.policy).and_then(SweepCurve::demos_to_threshold),
            train_time_s: train_time_s.get(&r.policy).copied(),
            train_steps: r.train_steps,
            n_params: r.n_params,
        })
        .collect()
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<14} {:<10} {:>9} {:>9} {:>9} {:>8} {:>10} {:>11} {:>9}\n",
        "policy", "protocol", "pickup", "place", "align", "n@90%", "train_s", "train_steps", "params"
    );
    for r in rows {
        let c = r.counts;
        let _ = writeln!(
            s,
            "{:<14} {:<10} {:>9} {:>9} {:>9} {:>8} {:>10} {:>11} {:>9}",
            r.policy,
            r.protocol,
            c.pickup_rate().percent(),
            c.place_rate().percent(),
            c.align_rate().percent(),
            r.demos_to_threshold.map_or("-".into(), |n| n.to_string()),
            r.train_time_s.map_or("-".into(), |t| format!("{t:.1}")),
            r.train_steps,
            r.n_params
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{RandomPolicy, ScriptedPolicy};

    fn counts(pickup: usize, n: usize) -> Counts {
        Counts { n, pickup, place: 0, align: 0 }
    }

    #[test]
    fn rates_are_exact() {
        assert_eq!(counts(30, 50).pickup_rate().percent(), "60.0%");
        assert_eq!(counts(50, 50).pickup_rate().value(), 1.0);
        assert_eq!(counts(0, 50).pickup_rate().value(), 0.0);
        assert!(counts(45, 50).pickup_rate().at_least(THRESHOLD));
        assert!(!counts(44, 50).pickup_rate().at_least(THRESHOLD));
        assert_eq!(Fraction { num: 1, den: 3 }.percent(), "33.3%");
    }

    #[test]
    fn seeds_distinct() {
        let p = ProtocolSpec::default();
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| p.rollout_seed(i)).collect();
        assert_eq!(s.len(), 1000);
        assert!(ProtocolSpec { n_rollouts: 0, ..p }.validate().is_err());
    }

    #[test]
    fn scripted_oracle_is_perfect_and_random_fails() {
        let scene = Arc::new(SceneSpec::desk());
        let proto = ProtocolSpec { n_rollouts: 10, ..ProtocolSpec::unperturbed(3) };
        let out = run_rollouts(&ScriptedPolicy::default(), scene.clone(), &proto, &[]).unwrap();
        let c = aggregate(&out);
        assert_eq!((c.pickup, c.place, c.align), (10, 10, 10));
        let out2 = run_rollouts(&ScriptedPolicy::default(), scene.clone(), &proto, &[]).unwrap();
        assert_eq!(out, out2);
        let rnd = run_rollouts(&RandomPolicy, scene, &proto, &[]).unwrap();
        assert_eq!(aggregate(&rnd).pickup, 0);
    }

    #[test]
    fn success_chain_and_report_bytes() {
        let scene = Arc::new(SceneSpec::desk());
        let proto = ProtocolSpec { n_rollouts: 4, ..ProtocolSpec::perturbed(1) };
        let out = run_rollouts(&ScriptedPolicy::default(), scene, &proto, &[vec![0.0; 6]]).unwrap();
        for o in &out {
            assert!(!o.align || o.place);
            assert!(!o.place || o.pickup);
            assert!(o.joint_error.is_some());
        }
        let row = BenchRow::from_outcomes("scripted", "desk", "perturbed", 0, &out);
        let rep = BenchReport { rows: vec![row.clone(), row], sweeps: vec![] };
        assert_eq!(rep.to_csv(), rep.clone().to_csv());
        assert_eq!(rep.to_csv().lines().count(), 3);
        let cmp = compare(&rep, &BTreeMap::new());
        assert_eq!(cmp[0], cmp[1]);
    }

    #[test]
    fn sweep_skips_zero_and_finds_threshold() {
        assert_eq!(sweep_sizes(35, 10), vec![10, 20, 30]);
        let scene = Arc::new(SceneSpec::desk());
        let proto = ProtocolSpec { n_rollouts: 2, ..ProtocolSpec::default() };
        let curve = sample_efficiency_sweep(
            "scripted",
            &[0, 10],
            |_| Ok(Box::new(ScriptedPolicy::default()) as Box<dyn Policy>),
            scene,
            &proto,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.demos_to_threshold(), Some(10));
    }
}
