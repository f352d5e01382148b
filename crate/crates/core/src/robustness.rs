//! Robustness of a configuration against a uniform susceptance drop `δ`.
//!
//! With the unperturbed steady-state sines `sin θ_e` held fixed, node `i`
//! deviates from its optimal injection by
//!
//! ```text
//! dev_i(δ) = | Σ_{e∋i} ±(b_e − δ) sin θ_e − Σ_{e∋i} ±b_e sin θ*_e | = | A_i − δ·B_i |
//! A_i = Σ_{e∋i} ±b_e (sin θ_e − sin θ*_e)
//! B_i = Σ_{e∋i} ±sin θ_e
//! ```
//!
//! where `±` is `+` when `i` is the tail of `e`. A configuration stays in
//! the feasibility region while `max_i dev_i(δ) < α`; the robustness margin
//! is the smallest `δ` that breaks this.

use crate::error::{Error, Result};
use crate::game::GameContext;
use crate::network::{Configuration, DampingParams, PowerNetwork};
use crate::steady_state::{check_delta, edge_flows, net_injections};
use crate::MAX_ENUMERATION_NODES;

/// Per-node affine coefficients of the deviation, `dev_i(δ) = |A_i − δ B_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTerms {
    pub offset: Vec<f64>,
    pub slope: Vec<f64>,
    /// Unperturbed flows satisfy `|ξ_e| < b_e` on every edge.
    pub feasible: bool,
}

impl NodeTerms {
    pub fn new(ctx0: &GameContext, cfg: &Configuration) -> Result<Self> {
        let net = ctx0.network();
        let flows = edge_flows(net, &net_injections(net, cfg, ctx0.damping())?)?;
        let sines: Vec<f64> = net.edges().iter().zip(&flows).map(|(e, x)| x / e.b).collect();
        let feasible = sines.iter().all(|s| s.abs() < 1.0);
        let n = net.node_count();
        let mut offset = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for (k, e) in net.edges().iter().enumerate() {
            let gap = e.b * (sines[k] - ctx0.target_sines()[k]);
            offset[e.tail] += gap;
            offset[e.head] -= gap;
            slope[e.tail] += sines[k];
            slope[e.head] -= sines[k];
        }
        Ok(NodeTerms { offset, slope, feasible })
    }

    pub fn deviation(&self, delta: f64) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.slope)
            .map(|(a, b)| (a - delta * b).abs())
            .collect()
    }

    pub fn max_deviation(&self, delta: f64) -> f64 {
        self.deviation(delta).into_iter().fold(0.0, f64::max)
    }

    /// Region membership without the `δ < min b` admissibility limit.
    pub fn contains(&self, delta: f64, alpha: f64) -> bool {
        self.max_deviation(delta) < alpha
    }

    /// Smallest `δ ≥ 0` at which some node reaches `α`, per node.
    pub fn crossings(&self, alpha: f64) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.slope)
            .map(|(&a, &b)| {
                if b > 0.0 {
                    (alpha + a) / b
                } else if b < 0.0 {
                    (a - alpha) / b
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn require_feasible(terms: &NodeTerms, cfg: &Configuration) -> Result<()> {
    if !terms.feasible {
        return Err(Error::Parameter(format!("configuration {cfg} is infeasible at delta = 0")));
    }
    Ok(())
}

/// `dev_i(δ)` for every node. `ctx0` supplies the network, damping and
/// targets; its own `δ` is ignored.
pub fn power_deviation(ctx0: &GameContext, cfg: &Configuration, delta: f64) -> Result<Vec<f64>> {
    check_delta(ctx0.network(), delta)?;
    Ok(NodeTerms::new(ctx0, cfg)?.deviation(delta))
}

pub fn in_feasibility_region(
    ctx0: &GameContext,
    cfg: &Configuration,
    delta: f64,
    alpha: f64,
) -> Result<bool> {
    check_alpha(alpha)?;
    let dev = power_deviation(ctx0, cfg, delta)?;
    Ok(dev.into_iter().fold(0.0, f64::max) < alpha)
}

/// `min_i (α + A_i) / B_i` over nodes with `B_i > 0`; `+∞` if there are none.
pub fn margin_closed_form(ctx0: &GameContext, cfg: &Configuration, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let terms = NodeTerms::new(ctx0, cfg)?;
    require_feasible(&terms, cfg)?;
    Ok(terms
        .offset
        .iter()
        .zip(&terms.slope)
        .filter(|(_, &b)| b > 0.0)
        .map(|(a, b)| (alpha + a) / b)
        .fold(f64::INFINITY, f64::min))
}

/// Smallest drop `δ ≥ 0` leaving the region, taking both signs of `B_i`
/// into account.
pub fn margin_exact(ctx0: &GameContext, cfg: &Configuration, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let terms = NodeTerms::new(ctx0, cfg)?;
    require_feasible(&terms, cfg)?;
    let max_deviation = terms.max_deviation(0.0);
    if max_deviation >= alpha {
        return Err(Error::OutsideRegion { max_deviation, alpha });
    }
    Ok(terms.crossings(alpha).into_iter().fold(f64::INFINITY, f64::min))
}

/// Cross-check of [`margin_exact`] by bracketing and bisection on region
/// membership. Returns `+∞` when no crossing exists below `1e12`.
pub fn margin_by_bisection(terms: &NodeTerms, alpha: f64) -> f64 {
    if !terms.contains(0.0, alpha) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while terms.contains(hi, alpha) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if terms.contains(mid, alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Largest `|A_i|` over all configurations and nodes; admissible `α` must
/// exceed it so that every configuration starts inside the region.
pub fn calibrate_alpha(ctx0: &GameContext) -> Result<f64> {
    ctx0.guard(MAX_ENUMERATION_NODES)?;
    let mut floor = 0.0f64;
    for cfg in Configuration::enumerate(ctx0.node_count()) {
        let terms = NodeTerms::new(ctx0, &cfg)?;
        floor = terms.offset.iter().fold(floor, |m, a| m.max(a.abs()));
    }
    Ok(floor)
}

/// Largest drop keeping every perturbed flow feasible, `min_e (b_e − |ξ_e|)`,
/// never more than `min_e b_e` and never negative.
pub fn delta_flow_limit(net: &PowerNetwork, cfg: &Configuration, dp: &DampingParams) -> Result<f64> {
    let flows = edge_flows(net, &net_injections(net, cfg, dp)?)?;
    let limit = net
        .edges()
        .iter()
        .zip(&flows)
        .map(|(e, x)| e.b - x.abs())
        .fold(net.min_susceptance(), f64::min);
    Ok(limit.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRecord {
    pub cfg: Configuration,
    pub margin_closed_form: f64,
    pub margin_exact: f64,
    pub delta_flow_limit: f64,
    pub effective_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub alpha: f64,
    pub records: Vec<RobustnessRecord>,
    /// Minimum of the closed-form margins.
    pub network_margin: f64,
    /// Minimum of the exact margins.
    pub network_margin_exact: f64,
    pub calibrated_alpha_floor: f64,
}

/// Margins of every configuration. Configurations already outside the
/// region (or infeasible) at `δ = 0` get margin `0`.
pub fn robustness_report(ctx0: &GameContext, alpha: f64) -> Result<RobustnessReport> {
    check_alpha(alpha)?;
    let floor = calibrate_alpha(ctx0)?;
    let net = ctx0.network();
    let mut records = Vec::with_capacity(1 << ctx0.node_count());
    for cfg in Configuration::enumerate(ctx0.node_count()) {
        let (closed, exact) = match (
            margin_closed_form(ctx0, &cfg, alpha),
            margin_exact(ctx0, &cfg, alpha),
        ) {
            (Ok(c), Ok(e)) => (c, e),
            (Ok(c), Err(Error::OutsideRegion { .. })) => (c, 0.0),
            (Err(Error::Parameter(_)), _) => (0.0, 0.0),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let flow_limit = delta_flow_limit(net, &cfg, ctx0.damping())?;
        records.push(RobustnessRecord {
            effective_margin: exact.min(flow_limit).min(net.min_susceptance()),
            cfg,
            margin_closed_form: closed,
            margin_exact: exact,
            delta_flow_limit: flow_limit,
        });
    }
    let network_margin = records.iter().map(|r| r.margin_closed_form).fold(f64::INFINITY, f64::min);
    let network_margin_exact = records.iter().map(|r| r.margin_exact).fold(f64::INFINITY, f64::min);
    Ok(RobustnessReport {
        alpha,
        records,
        network_margin,
        network_margin_exact,
        calibrated_alpha_floor: floor,
    })
}

/// Outcome of checking the exact margins against bisection and region
/// membership for every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub configurations: usize,
    /// Largest `|margin_exact − bisection|` over finite margins.
    pub max_bisection_gap: f64,
    /// Configurations whose margin lies inside the admissible `δ` range,
    /// where the flip of region membership was tested directly.
    pub flips_tested: usize,
    pub flip_failures: Vec<Configuration>,
}

impl ConsistencyReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_bisection_gap <= tolerance && self.flip_failures.is_empty()
    }
}

/// Runs the margin consistency suite. Membership is probed at
/// `margin ± step`; margins beyond `min_e b_e` are checked by confirming
/// membership just below that limit.
pub fn consistency_check(ctx0: &GameContext, alpha: f64, step: f64) -> Result<ConsistencyReport> {
    check_alpha(alpha)?;
    ctx0.guard(MAX_ENUMERATION_NODES)?;
    let limit = ctx0.network().min_susceptance();
    let mut report = ConsistencyReport {
        configurations: 0,
        max_bisection_gap: 0.0,
        flips_tested: 0,
        flip_failures: Vec::new(),
    };
    for cfg in Configuration::enumerate(ctx0.node_count()) {
        let margin = match margin_exact(ctx0, &cfg, alpha) {
            Ok(m) => m,
            Err(Error::OutsideRegion { .. }) | Err(Error::Parameter(_)) => continue,
            Err(e) => return Err(e),
        };
        report.configurations += 1;
        let terms = NodeTerms::new(ctx0, &cfg)?;
        let bisected = margin_by_bisection(&terms, alpha);
        if margin.is_finite() || bisected.is_finite() {
            report.max_bisection_gap = report.max_bisection_gap.max((margin - bisected).abs());
        }
        let ok = if margin + step < limit {
            report.flips_tested += 1;
            let before = (margin - step).max(0.0);
            in_feasibility_region(ctx0, &cfg, before, alpha)?
                && !in_feasibility_region(ctx0, &cfg, margin + step, alpha)?
        } else {
            in_feasibility_region(ctx0, &cfg, limit * (1.0 - 1e-12), alpha)?
        };
        if !ok {
            report.flip_failures.push(cfg);
        }
    }
    Ok(report)
}
