//! Synchronized steady state of a configuration.
//!
//! All units settle at one frequency `ω0 = ΣP0 / Σd`. What each unit pushes
//! into the grid is `p_i = P0_i − ω0·d_i`, and on a tree the line flows `ξ`
//! with `I·ξ = p` are unique. They are found by peeling leaves. The sine of
//! each angle difference is `ξ_e / (b_e − δ)` for a uniform susceptance drop `δ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Configuration, DampingParams, PowerNetwork};

/// Largest tolerated `|Σ p_i|` before a flow solve is rejected.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub omega0: f64,
    pub injections: Vec<f64>,
    pub edge_flows: Vec<f64>,
    /// `ξ_e / (b_e − δ)`; may leave `[-1, 1]` when infeasible.
    pub sine_diffs: Vec<f64>,
    /// Empty when the state is infeasible.
    pub angle_diffs: Vec<f64>,
    pub delta: f64,
    pub feasible: bool,
    /// `max_e |θ_e|`, absent when infeasible.
    pub cohesiveness: Option<f64>,
}

pub fn sync_frequency(net: &PowerNetwork, cfg: &Configuration, dp: &DampingParams) -> Result<f64> {
    cfg.check_len(net.node_count())?;
    let total_p0: f64 = net.nodes().iter().map(|n| n.p0).sum();
    let total_d: f64 = cfg.types().iter().map(|&t| dp.of(t)).sum();
    Ok(total_p0 / total_d)
}

/// `p_i = P0_i − ω0·d_i`.
pub fn net_injections(
    net: &PowerNetwork,
    cfg: &Configuration,
    dp: &DampingParams,
) -> Result<Vec<f64>> {
    let omega0 = sync_frequency(net, cfg, dp)?;
    Ok(injections_at(net, cfg, dp, omega0))
}

fn injections_at(net: &PowerNetwork, cfg: &Configuration, dp: &DampingParams, omega0: f64) -> Vec<f64> {
    net.nodes()
        .iter()
        .zip(cfg.types())
        .map(|(n, &t)| n.p0 - omega0 * dp.of(t))
        .collect()
}

/// Unique solution of `I·ξ = p` on the tree.
pub fn edge_flows(net: &PowerNetwork, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != net.node_count() {
        return Err(Error::ConfigLength { expected: net.node_count(), got: p.len() });
    }
    let imbalance: f64 = p.iter().sum();
    if imbalance.abs() > BALANCE_TOLERANCE {
        return Err(Error::Imbalance(imbalance));
    }
    let mut residual = p.to_vec();
    let mut flows = vec![0.0; net.edge_count()];
    for peel in net.peel() {
        let edge = &net.edges()[peel.edge];
        let flow = edge.sign_at(peel.node) * residual[peel.node];
        flows[peel.edge] = flow;
        let other = edge.other(peel.node);
        residual[other] -= edge.sign_at(other) * flow;
    }
    Ok(flows)
}

/// Checks `0 ≤ δ < min_e b_e`.
pub fn check_delta(net: &PowerNetwork, delta: f64) -> Result<()> {
    let limit = net.min_susceptance();
    if !(delta.is_finite() && delta >= 0.0 && delta < limit) {
        return Err(Error::DeltaOutOfRange { delta, limit });
    }
    Ok(())
}

/// `max_e |ξ_e| / (b_e − δ) < 1`.
pub fn flow_feasibility(net: &PowerNetwork, xi: &[f64], delta: f64) -> Result<bool> {
    check_delta(net, delta)?;
    Ok(net
        .edges()
        .iter()
        .zip(xi)
        .all(|(e, x)| x.abs() / (e.b - delta) < 1.0))
}

pub fn solve(
    net: &PowerNetwork,
    cfg: &Configuration,
    dp: &DampingParams,
    delta: f64,
) -> Result<SteadyState> {
    check_delta(net, delta)?;
    let omega0 = sync_frequency(net, cfg, dp)?;
    let injections = injections_at(net, cfg, dp, omega0);
    let edge_flows = edge_flows(net, &injections)?;
    let sine_diffs: Vec<f64> = net
        .edges()
        .iter()
        .zip(&edge_flows)
        .map(|(e, x)| x / (e.b - delta))
        .collect();
    let feasible = flow_feasibility(net, &edge_flows, delta)?;
    let (angle_diffs, cohesiveness) = if feasible {
        let angles: Vec<f64> = sine_diffs.iter().map(|s| s.asin()).collect();
        let gamma = angles.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        (angles, Some(gamma))
    } else {
        (Vec::new(), None)
    };
    Ok(SteadyState {
        omega0,
        injections,
        edge_flows,
        sine_diffs,
        angle_diffs,
        delta,
        feasible,
        cohesiveness,
    })
}
