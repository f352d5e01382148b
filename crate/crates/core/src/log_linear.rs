//! Asynchronous log-linear learning.
//!
//! At every step one unit, drawn uniformly, wakes up and resamples its own
//! type with probability proportional to `exp(η(t)·u_i)`. All other units
//! keep their types. Runs are driven by a ChaCha8 stream seeded from a
//! `u64`. Each step consumes exactly one `u32` (unit choice, uniform over
//! `0..n`) and then one `f64` in `[0, 1)` (type draw: `M` iff below `P(M)`).
//! That fixed order is what makes traces reproducible across platforms.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{enumerate_game, GameContext};
use crate::network::{Configuration, UnitType};
use crate::steady_state::solve;

/// Inverse temperature `η(t) = 1/τ(t)` as a function of the step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureSchedule {
    /// `η(t) = t / c`.
    LinearEta { c: f64 },
    ConstantTau { tau: f64 },
    ConstantEta { eta: f64 },
}

impl TemperatureSchedule {
    pub fn linear_eta(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Parameter(format!("linear schedule needs c > 0, got {c}")));
        }
        Ok(TemperatureSchedule::LinearEta { c })
    }

    pub fn constant_tau(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
        }
        Ok(TemperatureSchedule::ConstantTau { tau })
    }

    pub fn constant_eta(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Parameter(format!("inverse temperature must be >= 0, got {eta}")));
        }
        Ok(TemperatureSchedule::ConstantEta { eta })
    }

    pub fn eta(&self, t: u64) -> f64 {
        match *self {
            TemperatureSchedule::LinearEta { c } => t as f64 / c,
            TemperatureSchedule::ConstantTau { tau } => 1.0 / tau,
            TemperatureSchedule::ConstantEta { eta } => eta,
        }
    }
}

impl FromStr for TemperatureSchedule {
    type Err = Error;

    /// `linear:<c>`, `const-eta:<v>` or `const-tau:<v>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("bad schedule {s:?}; use linear:<c>, const-eta:<v> or const-tau:<v>"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "linear" => Self::linear_eta(value),
            "const-eta" => Self::constant_eta(value),
            "const-tau" => Self::constant_tau(value),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for TemperatureSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemperatureSchedule::LinearEta { c } => write!(f, "linear:{c}"),
            TemperatureSchedule::ConstantTau { tau } => write!(f, "const-tau:{tau}"),
            TemperatureSchedule::ConstantEta { eta } => write!(f, "const-eta:{eta}"),
        }
    }
}

/// Probability of each type for the woken unit `i`, indexed by
/// [`UnitType::index`].
pub fn update_distribution(
    ctx: &GameContext,
    cfg: &Configuration,
    i: usize,
    eta: f64,
) -> Result<[f64; 2]> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::Parameter(format!("eta must be finite and >= 0, got {eta}")));
    }
    let u = ctx.utility_pair(cfg, i)?;
    Ok(softmax(eta, u))
}

pub(crate) fn softmax(eta: f64, utilities: [f64; 2]) -> [f64; 2] {
    let logits = utilities.map(|u| eta * u);
    let top = logits[0].max(logits[1]);
    let w = logits.map(|l| (l - top).exp());
    let z = w[0] + w[1];
    [w[0] / z, w[1] / z]
}

/// One asynchronous update at time `t`. Returns the new configuration and
/// the dense index of the unit that woke up.
pub fn step<R: Rng + ?Sized>(
    ctx: &GameContext,
    cfg: &Configuration,
    t: u64,
    schedule: &TemperatureSchedule,
    rng: &mut R,
) -> Result<(Configuration, usize)> {
    let n = ctx.node_count();
    cfg.check_len(n)?;
    let i = rng.gen_range(0..n as u32) as usize;
    let probs = update_distribution(ctx, cfg, i, schedule.eta(t))?;
    let draw: f64 = rng.gen();
    let unit = if draw < probs[UnitType::M.index()] { UnitType::M } else { UnitType::C };
    Ok((cfg.with(i, unit), i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: u64,
    pub eta: f64,
    /// Dense index of the unit that woke up.
    pub chosen_unit: usize,
    /// Configuration after the update.
    pub cfg: Configuration,
    pub potential: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningTrace {
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    pub final_cfg: Configuration,
}

impl LearningTrace {
    pub fn final_potential(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.potential)
    }

    /// First `t` whose recorded potential is at least `threshold`.
    pub fn first_hitting_time(&self, threshold: f64) -> Option<u64> {
        self.steps.iter().find(|s| s.potential >= threshold).map(|s| s.t)
    }

    /// First `t` at which the configuration satisfies `pred`.
    pub fn first_time<F: Fn(&Configuration) -> bool>(&self, pred: F) -> Option<u64> {
        self.steps.iter().find(|s| pred(&s.cfg)).map(|s| s.t)
    }
}

/// Runs the chain for `t = 0..steps` from `initial`.
pub fn run(
    ctx: &GameContext,
    initial: &Configuration,
    schedule: &TemperatureSchedule,
    steps: u64,
    seed: u64,
) -> Result<LearningTrace> {
    if steps == 0 {
        return Err(Error::Parameter("steps must be >= 1".into()));
    }
    initial.check_len(ctx.node_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = initial.clone();
    let mut records = Vec::with_capacity(steps as usize);
    for t in 0..steps {
        let (next, chosen) = step(ctx, &cfg, t, schedule, &mut rng)?;
        cfg = next;
        let feasible = solve(ctx.network(), &cfg, ctx.damping(), ctx.delta())?.feasible;
        records.push(TraceStep {
            t,
            eta: schedule.eta(t),
            chosen_unit: chosen,
            cfg: cfg.clone(),
            potential: ctx.potential(&cfg)?,
            feasible,
        });
    }
    Ok(LearningTrace { seed, steps: records, final_cfg: cfg })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    /// Fraction of runs whose final configuration maximizes the potential.
    pub success_rate: f64,
    pub mean_final_potential: f64,
    pub successes: Vec<bool>,
    pub traces: Vec<LearningTrace>,
}

impl BatchSummary {
    pub fn hitting_times(&self, threshold: f64) -> Vec<Option<u64>> {
        self.traces.iter().map(|t| t.first_hitting_time(threshold)).collect()
    }
}

/// Independent runs, one per seed, in seed-list order.
pub fn batch_run(
    ctx: &GameContext,
    initial: &Configuration,
    schedule: &TemperatureSchedule,
    steps: u64,
    seeds: &[u64],
) -> Result<BatchSummary> {
    if seeds.is_empty() {
        return Err(Error::Parameter("seed list is empty".into()));
    }
    let report = enumerate_game(ctx)?;
    let traces = seeds
        .iter()
        .map(|&seed| run(ctx, initial, schedule, steps, seed))
        .collect::<Result<Vec<_>>>()?;
    let successes: Vec<bool> = traces.iter().map(|t| report.is_maximizer(&t.final_cfg)).collect();
    let runs = traces.len() as f64;
    Ok(BatchSummary {
        success_rate: successes.iter().filter(|&&s| s).count() as f64 / runs,
        mean_final_potential: traces.iter().map(LearningTrace::final_potential).sum::<f64>() / runs,
        successes,
        traces,
    })
}
