//! Exact analysis of the learning chain at a fixed inverse temperature.
//!
//! States are all `2^n` configurations; bit `i` of a state index holds the
//! type of node `i` (M = 0, C = 1). The transition matrix is dense and
//! row-major, which caps this module at [`MAX_CHAIN_NODES`] nodes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{GameContext, MAXIMIZER_TOLERANCE};
use crate::log_linear::{softmax, step, TemperatureSchedule};
use crate::network::Configuration;
use crate::MAX_CHAIN_NODES;

/// Fraction of an empirical run discarded before counting visits.
pub const BURN_IN_FRACTION: f64 = 0.1;

/// Shortest run accepted by [`empirical_frequency_check`].
pub const MIN_EMPIRICAL_STEPS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    nodes: usize,
    eta: f64,
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of states, `2^n`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.size..(from + 1) * self.size]
    }

    /// `max_x |Σ_y P[x→y] − 1|`.
    pub fn row_sum_error(&self) -> f64 {
        (0..self.size)
            .map(|x| (self.row(x).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Single communicating class, checked by reachability from state 0
    /// along the support and along its reverse.
    pub fn is_irreducible(&self) -> bool {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.size];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for y in 0..self.size {
                    let p = if forward { self.get(x, y) } else { self.get(y, x) };
                    if p > 0.0 && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Irreducible with a self-loop somewhere, which rules out periodicity.
    pub fn is_aperiodic(&self) -> bool {
        self.is_irreducible() && (0..self.size).any(|x| self.get(x, x) > 0.0)
    }

    /// `‖πP − π‖_∞`.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        (0..self.size)
            .map(|y| {
                let flow: f64 = (0..self.size).map(|x| pi[x] * self.get(x, y)).sum();
                (flow - pi[y]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max_{x,y} |π_x P[x→y] − π_y P[y→x]|`.
    pub fn detailed_balance_residual(&self, pi: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.size {
            for y in (x + 1)..self.size {
                worst = worst.max((pi[x] * self.get(x, y) - pi[y] * self.get(y, x)).abs());
            }
        }
        worst
    }
}

/// Exact one-step kernel of the asynchronous chain at constant `eta`.
pub fn transition_matrix(ctx: &GameContext, eta: f64) -> Result<TransitionMatrix> {
    ctx.guard(MAX_CHAIN_NODES)?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::Parameter(format!("eta must be finite and >= 0, got {eta}")));
    }
    let n = ctx.node_count();
    let size = 1usize << n;
    let costs = Configuration::enumerate(n)
        .map(|cfg| ctx.edge_costs(&cfg))
        .collect::<Result<Vec<_>>>()?;

    let pick = 1.0 / n as f64;
    let mut data = vec![0.0; size * size];
    for x in 0..size {
        for i in 0..n {
            let bit = 1usize << i;
            let (as_m, as_c) = (x & !bit, x | bit);
            let u = [
                -ctx.loss_from_costs(&costs[as_m], i),
                -ctx.loss_from_costs(&costs[as_c], i),
            ];
            let q = softmax(eta, u);
            data[x * size + as_m] += pick * q[0];
            data[x * size + as_c] += pick * q[1];
        }
    }
    Ok(TransitionMatrix { nodes: n, eta, size, data })
}

/// Unique stationary distribution by Grassmann–Taksar–Heyman elimination,
/// a subtraction-free dense direct solve.
pub fn stationary_distribution(chain: &TransitionMatrix) -> Result<Vec<f64>> {
    let size = chain.size;
    let mut a = chain.data.clone();
    for k in (1..size).rev() {
        let s: f64 = a[k * size..k * size + k].iter().sum();
        if !(s > 0.0) {
            return Err(Error::Reducible);
        }
        for i in 0..k {
            a[i * size + k] /= s;
        }
        for i in 0..k {
            let factor = a[i * size + k];
            if factor == 0.0 {
                continue;
            }
            for j in 0..k {
                a[i * size + j] += factor * a[k * size + j];
            }
        }
    }
    let mut pi = vec![0.0; size];
    pi[0] = 1.0;
    for k in 1..size {
        pi[k] = (0..k).map(|i| pi[i] * a[i * size + k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Power iteration from the uniform vector; a slower cross-check for
/// [`stationary_distribution`].
pub fn stationary_by_power_iteration(chain: &TransitionMatrix, tol: f64, max_iter: usize) -> Vec<f64> {
    let size = chain.size;
    let mut pi = vec![1.0 / size as f64; size];
    for _ in 0..max_iter {
        let mut next = vec![0.0; size];
        for x in 0..size {
            if pi[x] == 0.0 {
                continue;
            }
            for (y, p) in chain.row(x).iter().enumerate() {
                next[y] += pi[x] * p;
            }
        }
        let change = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if change < tol {
            break;
        }
    }
    pi
}

/// `∝ exp(η·U(cfg))` over all states.
pub fn gibbs_distribution(ctx: &GameContext, eta: f64) -> Result<Vec<f64>> {
    ctx.guard(MAX_CHAIN_NODES)?;
    let potentials = potentials(ctx)?;
    let top = potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = potentials.iter().map(|u| (eta * (u - top)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

fn potentials(ctx: &GameContext) -> Result<Vec<f64>> {
    Configuration::enumerate(ctx.node_count())
        .map(|cfg| ctx.potential(&cfg))
        .collect()
}

/// State indices maximizing the potential.
pub fn potential_maximizers(ctx: &GameContext) -> Result<Vec<usize>> {
    ctx.guard(MAX_CHAIN_NODES)?;
    let u = potentials(ctx)?;
    let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((0..u.len()).filter(|&k| u[k] >= top - MAXIMIZER_TOLERANCE).collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsComparison {
    pub eta: f64,
    pub total_variation: f64,
    pub stationary: Vec<f64>,
    pub gibbs: Vec<f64>,
    pub detailed_balance_residual: f64,
    pub stationarity_residual: f64,
    pub potential_maximizers: Vec<usize>,
    /// States carrying the largest stationary probability.
    pub stationary_modes: Vec<usize>,
    /// Stationary mass on [`GibbsComparison::potential_maximizers`].
    pub maximizer_mass: f64,
    pub gibbs_maximizer_mass: f64,
}

impl GibbsComparison {
    /// True when the most likely stationary states are exactly the
    /// potential maximizers.
    pub fn sets_agree(&self) -> bool {
        self.stationary_modes == self.potential_maximizers
    }
}

pub fn gibbs_comparison(ctx: &GameContext, eta: f64) -> Result<GibbsComparison> {
    let chain = transition_matrix(ctx, eta)?;
    let stationary = stationary_distribution(&chain)?;
    let gibbs = gibbs_distribution(ctx, eta)?;
    let maximizers = potential_maximizers(ctx)?;
    let top = stationary.iter().copied().fold(0.0, f64::max);
    let modes = (0..stationary.len())
        .filter(|&k| stationary[k] >= top * (1.0 - 1e-9))
        .collect();
    Ok(GibbsComparison {
        eta,
        total_variation: total_variation(&stationary, &gibbs),
        detailed_balance_residual: chain.detailed_balance_residual(&stationary),
        stationarity_residual: chain.stationarity_residual(&stationary),
        maximizer_mass: maximizers.iter().map(|&k| stationary[k]).sum(),
        gibbs_maximizer_mass: maximizers.iter().map(|&k| gibbs[k]).sum(),
        potential_maximizers: maximizers,
        stationary_modes: modes,
        stationary,
        gibbs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCheck {
    pub tv_distance: f64,
    /// Visit frequencies after burn-in, by state index.
    pub histogram: Vec<f64>,
    pub stationary: Vec<f64>,
    pub counted_steps: u64,
}

/// Simulates the chain at constant `eta` and compares visit frequencies
/// after burn-in with the exact stationary distribution.
pub fn empirical_frequency_check(
    ctx: &GameContext,
    eta: f64,
    steps: u64,
    seed: u64,
) -> Result<EmpiricalCheck> {
    if steps < MIN_EMPIRICAL_STEPS {
        return Err(Error::Parameter(format!(
            "empirical check needs at least {MIN_EMPIRICAL_STEPS} steps, got {steps}"
        )));
    }
    let chain = transition_matrix(ctx, eta)?;
    let stationary = stationary_distribution(&chain)?;
    let schedule = TemperatureSchedule::constant_eta(eta)?;

    let n = ctx.node_count();
    let burn_in = (steps as f64 * BURN_IN_FRACTION).ceil() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = Configuration::all_machines(n);
    let mut visits = vec![0u64; chain.size()];
    for t in 0..steps {
        cfg = step(ctx, &cfg, t, &schedule, &mut rng)?.0;
        if t >= burn_in {
            visits[cfg.index()] += 1;
        }
    }
    let counted = steps - burn_in;
    let histogram: Vec<f64> = visits.iter().map(|&v| v as f64 / counted as f64).collect();
    Ok(EmpiricalCheck {
        tv_distance: total_variation(&histogram, &stationary),
        histogram,
        stationary,
        counted_steps: counted,
    })
}
