//! The allocation game.
//!
//! Each edge is charged `c_e = |sin θ_e(s) − sin θ*_e|`, the distance
//! between the realized and the target sine of its angle difference. A unit
//! is rewarded with minus the weighted cost of its incident lines,
//! `u_i = −Σ_{e∋i} b̂_e c_e`, and the potential is minus the weighted cost of
//! the whole network, `U = −Σ_e b̂_e c_e`, with `b̂_e = b_e − δ`.
//!
//! A flip at one node moves the synchronized frequency, so it changes flows
//! on every line, not only on incident ones. The game is therefore not
//! guaranteed to be an exact potential game; [`exactness_check`] measures by
//! how much it misses.

use crate::error::{Error, Result};
use crate::network::{Configuration, DampingParams, PowerNetwork, TargetAngles, UnitType};
use crate::steady_state::{check_delta, edge_flows, net_injections, solve};
use crate::MAX_ENUMERATION_NODES;

/// Utilities closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Potentials within this distance of the best are maximizers.
pub const MAXIMIZER_TOLERANCE: f64 = 1e-9;

/// Largest angle mismatch (radians) accepted by [`recover_optimal_config`].
pub const RECOVERY_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GameContext {
    net: PowerNetwork,
    damping: DampingParams,
    targets: TargetAngles,
    target_sines: Vec<f64>,
    delta: f64,
}

impl GameContext {
    pub fn new(
        net: PowerNetwork,
        damping: DampingParams,
        targets: TargetAngles,
        delta: f64,
    ) -> Result<Self> {
        check_delta(&net, delta)?;
        if targets.len() != net.edge_count() {
            return Err(Error::Validation(format!(
                "{} targets for {} edges",
                targets.len(),
                net.edge_count()
            )));
        }
        let target_sines = targets.sines();
        Ok(GameContext { net, damping, targets, target_sines, delta })
    }

    /// The six-unit fixture at susceptance drop `delta`.
    pub fn paper6(delta: f64) -> Result<Self> {
        let (net, dp, targets) = crate::network::paper6_fixture();
        GameContext::new(net, dp, targets, delta)
    }

    /// Same game with another susceptance drop.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        GameContext::new(self.net.clone(), self.damping, self.targets.clone(), delta)
    }

    pub fn with_damping(&self, damping: DampingParams) -> Result<Self> {
        GameContext::new(self.net.clone(), damping, self.targets.clone(), self.delta)
    }

    pub fn network(&self) -> &PowerNetwork {
        &self.net
    }

    pub fn damping(&self) -> &DampingParams {
        &self.damping
    }

    pub fn targets(&self) -> &TargetAngles {
        &self.targets
    }

    pub fn target_sines(&self) -> &[f64] {
        &self.target_sines
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn node_count(&self) -> usize {
        self.net.node_count()
    }

    /// `b_e − δ`.
    pub fn weight(&self, e: usize) -> f64 {
        self.net.edges()[e].b - self.delta
    }

    /// Per-edge costs of `cfg`. Infeasible edges use the clamped sine `±1`.
    pub fn edge_costs(&self, cfg: &Configuration) -> Result<Vec<f64>> {
        let p = net_injections(&self.net, cfg, &self.damping)?;
        let flows = edge_flows(&self.net, &p)?;
        Ok(flows
            .iter()
            .enumerate()
            .map(|(e, x)| {
                let sine = (x / self.weight(e)).clamp(-1.0, 1.0);
                (sine - self.target_sines[e]).abs()
            })
            .collect())
    }

    pub fn edge_cost(&self, cfg: &Configuration, e: usize) -> Result<f64> {
        if e >= self.net.edge_count() {
            return Err(Error::Parameter(format!("edge index {e} out of range")));
        }
        Ok(self.edge_costs(cfg)?[e])
    }

    /// Weighted cost of the lines incident to node `i`, i.e. `−u_i`.
    pub fn local_loss(&self, cfg: &Configuration, i: usize) -> Result<f64> {
        self.check_node(i)?;
        let costs = self.edge_costs(cfg)?;
        Ok(self.loss_from_costs(&costs, i))
    }

    pub(crate) fn loss_from_costs(&self, costs: &[f64], i: usize) -> f64 {
        self.net
            .incident_edges(i)
            .iter()
            .map(|&e| self.weight(e) * costs[e])
            .sum()
    }

    pub(crate) fn potential_from_costs(&self, costs: &[f64]) -> f64 {
        -costs
            .iter()
            .enumerate()
            .map(|(e, c)| self.weight(e) * c)
            .sum::<f64>()
    }

    pub fn utility(&self, cfg: &Configuration, i: usize) -> Result<f64> {
        Ok(-self.local_loss(cfg, i)?)
    }

    pub fn potential(&self, cfg: &Configuration) -> Result<f64> {
        let costs = self.edge_costs(cfg)?;
        Ok(self.potential_from_costs(&costs))
    }

    /// Utility of node `i` for each choice of its own type, others fixed,
    /// indexed by [`UnitType::index`].
    pub fn utility_pair(&self, cfg: &Configuration, i: usize) -> Result<[f64; 2]> {
        self.check_node(i)?;
        let mut out = [0.0; 2];
        for unit in UnitType::ALL {
            out[unit.index()] = self.utility(&cfg.with(i, unit), i)?;
        }
        Ok(out)
    }

    /// The argmax set of node `i`'s utility over its own type.
    pub fn best_responses(&self, cfg: &Configuration, i: usize) -> Result<Vec<UnitType>> {
        let u = self.utility_pair(cfg, i)?;
        let best = u[0].max(u[1]);
        Ok(UnitType::ALL
            .into_iter()
            .filter(|t| u[t.index()] >= best - TIE_TOLERANCE)
            .collect())
    }

    pub fn is_nash(&self, cfg: &Configuration) -> Result<bool> {
        for i in 0..self.node_count() {
            if !self.best_responses(cfg, i)?.contains(&cfg.get(i)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.node_count() {
            return Err(Error::Parameter(format!("node index {i} out of range")));
        }
        Ok(())
    }

    pub(crate) fn guard(&self, limit: usize) -> Result<()> {
        let nodes = self.node_count();
        if nodes > limit {
            return Err(Error::SizeGuard { nodes, limit });
        }
        Ok(())
    }
}

/// Largest `|Δu_i − ΔU|` over all configurations and unilateral flips.
/// Zero means the utilities form an exact potential game.
pub fn exactness_check(ctx: &GameContext) -> Result<f64> {
    ctx.guard(MAX_ENUMERATION_NODES)?;
    let n = ctx.node_count();
    let mut worst = 0.0f64;
    for cfg in Configuration::enumerate(n) {
        let costs = ctx.edge_costs(&cfg)?;
        let pot = ctx.potential_from_costs(&costs);
        for i in 0..n {
            let alt = cfg.with(i, cfg.get(i).flipped());
            let alt_costs = ctx.edge_costs(&alt)?;
            let du = ctx.loss_from_costs(&costs, i) - ctx.loss_from_costs(&alt_costs, i);
            let dpot = ctx.potential_from_costs(&alt_costs) - pot;
            worst = worst.max((du - dpot).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub cfg: Configuration,
    pub potential: f64,
    pub is_nash: bool,
    pub is_maximizer: bool,
    pub feasible: bool,
}

/// One record per configuration, in state-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GameReport {
    pub records: Vec<GameRecord>,
}

impl GameReport {
    pub fn max_potential(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.potential)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn maximizers(&self) -> impl Iterator<Item = &GameRecord> {
        self.records.iter().filter(|r| r.is_maximizer)
    }

    pub fn nash_equilibria(&self) -> impl Iterator<Item = &GameRecord> {
        self.records.iter().filter(|r| r.is_nash)
    }

    pub fn is_maximizer(&self, cfg: &Configuration) -> bool {
        self.records
            .get(cfg.index())
            .is_some_and(|r| r.is_maximizer && &r.cfg == cfg)
    }

    pub fn record(&self, cfg: &Configuration) -> Option<&GameRecord> {
        self.records.get(cfg.index()).filter(|r| &r.cfg == cfg)
    }
}

/// Exhaustive table of potentials, Nash and maximizer flags.
pub fn enumerate_game(ctx: &GameContext) -> Result<GameReport> {
    ctx.guard(MAX_ENUMERATION_NODES)?;
    let n = ctx.node_count();
    let count = 1usize << n;

    let mut costs = Vec::with_capacity(count);
    let mut feasible = Vec::with_capacity(count);
    for cfg in Configuration::enumerate(n) {
        costs.push(ctx.edge_costs(&cfg)?);
        feasible.push(solve(ctx.network(), &cfg, ctx.damping(), ctx.delta())?.feasible);
    }

    let potentials: Vec<f64> = costs.iter().map(|c| ctx.potential_from_costs(c)).collect();
    let best = potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let records = (0..count)
        .map(|k| {
            let cfg = Configuration::from_index(k, n);
            let is_nash = (0..n).all(|i| {
                let own = ctx.loss_from_costs(&costs[k], i);
                let alt = ctx.loss_from_costs(&costs[k ^ (1 << i)], i);
                own <= alt + TIE_TOLERANCE
            });
            GameRecord {
                cfg,
                potential: potentials[k],
                is_nash,
                is_maximizer: potentials[k] >= best - MAXIMIZER_TOLERANCE,
                feasible: feasible[k],
            }
        })
        .collect();
    Ok(GameReport { records })
}

/// Largest `|θ_e(cfg) − θ*_e|`; infinite when `cfg` is infeasible.
pub fn angle_mismatch(
    net: &PowerNetwork,
    dp: &DampingParams,
    targets: &TargetAngles,
    cfg: &Configuration,
) -> Result<f64> {
    let ss = solve(net, cfg, dp, 0.0)?;
    if !ss.feasible {
        return Ok(f64::INFINITY);
    }
    Ok(ss
        .angle_diffs
        .iter()
        .zip(targets.as_slice())
        .fold(0.0f64, |m, (a, t)| m.max((a - t).abs())))
}

/// Reads the unknown optimal configuration off the target angles.
///
/// From the power balance, `q_i = P0_i − Σ_{e∋i} ±b_e sin θ*_e = ω0·d*_i`, so
/// the ratios `q_i / q_ref` against the smallest `|q|` are either about `1`
/// (converter) or about `d_M/d_C` (machine). If that guess does not reproduce
/// the targets, every configuration is tried.
pub fn recover_optimal_config(
    net: &PowerNetwork,
    dp: &DampingParams,
    targets: &TargetAngles,
) -> Result<Configuration> {
    if targets.len() != net.edge_count() {
        return Err(Error::Validation(format!(
            "{} targets for {} edges",
            targets.len(),
            net.edge_count()
        )));
    }
    let sines = targets.sines();
    let q: Vec<f64> = (0..net.node_count())
        .map(|i| {
            let outflow: f64 = net
                .incident_edges(i)
                .iter()
                .map(|&e| {
                    let edge = &net.edges()[e];
                    edge.sign_at(i) * edge.b * sines[e]
                })
                .sum();
            net.nodes()[i].p0 - outflow
        })
        .collect();

    let reference = q
        .iter()
        .copied()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if reference != 0.0 && reference.is_finite() {
        let high = dp.machine / dp.converter;
        let guess = Configuration::new(
            q.iter()
                .map(|qi| {
                    let r = qi / reference;
                    if (r - high).abs() < (r - 1.0).abs() {
                        UnitType::M
                    } else {
                        UnitType::C
                    }
                })
                .collect(),
        );
        if angle_mismatch(net, dp, targets, &guess)? <= RECOVERY_TOLERANCE * 0.1 {
            return Ok(guess);
        }
    }

    let n = net.node_count();
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::SizeGuard { nodes: n, limit: MAX_ENUMERATION_NODES });
    }
    let mut best: Option<(f64, Configuration)> = None;
    for cfg in Configuration::enumerate(n) {
        let mismatch = angle_mismatch(net, dp, targets, &cfg)?;
        if best.as_ref().is_none_or(|(m, _)| mismatch < *m) {
            best = Some((mismatch, cfg));
        }
    }
    match best {
        Some((m, cfg)) if m <= RECOVERY_TOLERANCE => Ok(cfg),
        Some((m, _)) => Err(Error::NoMatch(m)),
        None => Err(Error::NoMatch(f64::INFINITY)),
    }
}
