use gridalloc::game::{enumerate_game, exactness_check};
use gridalloc::log_linear::{run, update_distribution};
use gridalloc::oracle::transition_matrix;
use gridalloc::robustness::{in_feasibility_region, margin_closed_form, margin_exact, NodeTerms};
use gridalloc::steady_state::{edge_flows, net_injections, solve};
use gridalloc::{Configuration, DampingParams, GameContext, PowerNetwork, TargetAngles, TemperatureSchedule};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    net: PowerNetwork,
    damping: DampingParams,
    cfg: Configuration,
}

/// Random tree: node k > 0 hangs off a random earlier node, with a random
/// edge orientation and shuffled-looking ids.
fn instance(max_nodes: usize, p0_scale: f64) -> impl Strategy<Value = Instance> {
    (2..=max_nodes)
        .prop_flat_map(move |n| {
            (
                proptest::collection::vec(-p0_scale..p0_scale, n),
                proptest::collection::vec((any::<prop::sample::Index>(), any::<bool>(), 0.5f64..10.0), n - 1),
                1.0f64..10.0,
                0.0f64..15.0,
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(p0, links, dc, extra, types)| {
            let id = |k: usize| (k as i64) * 7 + 3;
            let nodes = p0.iter().enumerate().map(|(k, &p)| (id(k), p)).collect();
            let edges = links
                .iter()
                .enumerate()
                .map(|(k, (parent, flip, b))| {
                    let child = k + 1;
                    let parent = parent.index(child);
                    if *flip {
                        (id(child), id(parent), *b)
                    } else {
                        (id(parent), id(child), *b)
                    }
                })
                .collect();
            Instance {
                net: PowerNetwork::new(nodes, edges).expect("generated tree is valid"),
                damping: DampingParams::new(dc + extra, dc).unwrap(),
                cfg: Configuration::new(
                    types
                        .into_iter()
                        .map(|c| if c { gridalloc::UnitType::C } else { gridalloc::UnitType::M })
                        .collect(),
                ),
            }
        })
}

/// Game whose targets are the realized angles of `inst.cfg`.
fn self_consistent_game(inst: &Instance) -> Option<GameContext> {
    let ss = solve(&inst.net, &inst.cfg, &inst.damping, 0.0).ok()?;
    if !ss.feasible || ss.cohesiveness? >= 1.5 {
        return None;
    }
    let targets = TargetAngles::new(ss.angle_diffs).ok()?;
    GameContext::new(inst.net.clone(), inst.damping, targets, 0.0).ok()
}

/// Independent region-exit search: evaluates the deviation straight from
/// steady-state sines at each probe.
fn bisection_oracle(ctx: &GameContext, cfg: &Configuration, alpha: f64) -> f64 {
    let net = ctx.network();
    let ss = solve(net, cfg, ctx.damping(), 0.0).unwrap();
    let targets = ctx.targets().as_slice();
    let outside = |delta: f64| {
        (0..net.node_count()).any(|i| {
            let mut perturbed = 0.0;
            let mut optimal = 0.0;
            for &e in net.incident_edges(i) {
                let edge = &net.edges()[e];
                let sign = if edge.tail == i { 1.0 } else { -1.0 };
                perturbed += sign * (edge.b - delta) * ss.sine_diffs[e];
                optimal += sign * edge.b * targets[e].sin();
            }
            (perturbed - optimal).abs() >= alpha
        })
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while !outside(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if outside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flows_conserve_power(inst in instance(12, 1.0)) {
        let p = net_injections(&inst.net, &inst.cfg, &inst.damping).unwrap();
        prop_assert!(p.iter().sum::<f64>().abs() <= 1e-12);
        let xi = edge_flows(&inst.net, &p).unwrap();
        let residual = inst.net.incidence().apply(&xi);
        for (r, pi) in residual.iter().zip(&p) {
            prop_assert!((r - pi).abs() <= 1e-10);
        }
    }

    #[test]
    fn flows_do_not_depend_on_delta(inst in instance(12, 1.0)) {
        let base = solve(&inst.net, &inst.cfg, &inst.damping, 0.0).unwrap().edge_flows;
        for delta in [0.1, 0.3] {
            let other = solve(&inst.net, &inst.cfg, &inst.damping, delta).unwrap().edge_flows;
            prop_assert_eq!(&base, &other);
        }
    }

    #[test]
    fn leaf_elimination_matches_min_norm_solution(inst in instance(12, 1.0)) {
        let p = net_injections(&inst.net, &inst.cfg, &inst.damping).unwrap();
        let xi = edge_flows(&inst.net, &p).unwrap();
        let inc = inst.net.incidence();
        let dense = DMatrix::from_fn(inc.rows(), inc.cols(), |i, k| f64::from(inc.get(i, k)));
        let pinv = dense.pseudo_inverse(1e-12).unwrap();
        let reference = pinv * DVector::from_vec(p);
        for (a, b) in xi.iter().zip(reference.iter()) {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn arcsin_round_trip(inst in instance(10, 0.4), delta in 0.0f64..0.45) {
        let ss = solve(&inst.net, &inst.cfg, &inst.damping, delta).unwrap();
        if ss.feasible {
            for ((theta, xi), edge) in ss.angle_diffs.iter().zip(&ss.edge_flows).zip(inst.net.edges()) {
                prop_assert!((theta.sin() * (edge.b - delta) - xi).abs() <= 1e-12);
                prop_assert!(theta.abs() < std::f64::consts::FRAC_PI_2);
            }
        }
    }

    #[test]
    fn update_distribution_is_normalized_and_concentrates(inst in instance(8, 0.4), node in any::<prop::sample::Index>()) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        let probe = inst.cfg.with(0, inst.cfg.get(0).flipped());
        let i = node.index(inst.net.node_count());
        let u = ctx.utility_pair(&probe, i).unwrap();
        let best = if u[0] >= u[1] { 0 } else { 1 };
        let mut last = 0.0;
        for eta in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 1e3, 1e6] {
            let q = update_distribution(&ctx, &probe, i, eta).unwrap();
            prop_assert!((q[0] + q[1] - 1.0).abs() <= 1e-12);
            prop_assert!(q[best] >= last);
            last = q[best];
        }
    }

    #[test]
    fn potential_is_nonpositive_and_zero_at_realized_targets(inst in instance(8, 0.4)) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        prop_assert!(ctx.potential(&inst.cfg).unwrap() >= -1e-9);
        for cfg in Configuration::enumerate(inst.net.node_count()).take(64) {
            let u = ctx.potential(&cfg).unwrap();
            prop_assert!(u <= 0.0);
            if u >= -1e-3 {
                let costs = ctx.edge_costs(&cfg).unwrap();
                for (e, c) in costs.iter().enumerate() {
                    prop_assert!(c * ctx.weight(e) <= 1e-3 + 1e-15);
                }
            }
        }
        let report = enumerate_game(&ctx).unwrap();
        prop_assert!(report.is_maximizer(&inst.cfg));
    }

    #[test]
    fn maximizers_are_nash(inst in instance(8, 0.4)) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        let report = enumerate_game(&ctx).unwrap();
        prop_assert!(report.maximizers().count() >= 1);
        prop_assert!(report.maximizers().all(|r| r.is_nash));
    }

    #[test]
    fn degenerate_damping_is_exact(inst in instance(6, 0.4)) {
        let flat = DampingParams::new(inst.damping.converter, inst.damping.converter).unwrap();
        let ctx = self_consistent_game(&Instance { damping: flat, ..inst.clone() });
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        prop_assert_eq!(exactness_check(&ctx).unwrap(), 0.0);
        let n = inst.net.node_count();
        for i in 0..n {
            let u0 = ctx.utility(&Configuration::all_machines(n), i).unwrap();
            for cfg in Configuration::enumerate(n) {
                prop_assert_eq!(ctx.utility(&cfg, i).unwrap(), u0);
            }
        }
        let chain = transition_matrix(&ctx, 3.0).unwrap();
        let pi = gridalloc::oracle::stationary_distribution(&chain).unwrap();
        prop_assert!(chain.detailed_balance_residual(&pi) <= 1e-10);
    }

    #[test]
    fn traces_are_reproducible_single_flip(inst in instance(8, 0.4), seed in any::<u64>()) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        let n = inst.net.node_count();
        let sched = TemperatureSchedule::linear_eta(5.0).unwrap();
        let a = run(&ctx, &Configuration::all_machines(n), &sched, 60, seed).unwrap();
        let b = run(&ctx, &Configuration::all_machines(n), &sched, 60, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut prev = Configuration::all_machines(n);
        for s in &a.steps {
            prop_assert!(s.cfg.distance(&prev) <= 1);
            prev = s.cfg.clone();
        }
    }

    #[test]
    fn exact_margin_matches_bisection(inst in instance(7, 0.4), alpha_extra in 0.05f64..2.0) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        // a different configuration so that A_i is not identically zero
        let cfg = inst.cfg.with(0, inst.cfg.get(0).flipped());
        let terms = NodeTerms::new(&ctx, &cfg).unwrap();
        prop_assume!(terms.feasible);
        let alpha = terms.max_deviation(0.0) + alpha_extra;
        let margin = margin_exact(&ctx, &cfg, alpha).unwrap();
        let oracle = bisection_oracle(&ctx, &cfg, alpha);
        if margin.is_finite() {
            prop_assert!((margin - oracle).abs() <= 1e-9 * margin.max(1.0), "{} vs {}", margin, oracle);
        } else {
            prop_assert!(oracle.is_infinite());
        }

        let limit = inst.net.min_susceptance();
        if margin + 1e-6 < limit {
            prop_assert!(in_feasibility_region(&ctx, &cfg, (margin - 1e-6).max(0.0), alpha).unwrap());
            prop_assert!(!in_feasibility_region(&ctx, &cfg, margin + 1e-6, alpha).unwrap());
        }

        // monotone in alpha, per-node crossings never shrink when alpha doubles
        let wider = margin_exact(&ctx, &cfg, 2.0 * alpha).unwrap();
        prop_assert!(wider >= margin);
        for (a, b) in terms.crossings(alpha).iter().zip(terms.crossings(2.0 * alpha)) {
            prop_assert!(b >= *a);
        }
    }

    #[test]
    fn transition_rows_sum_to_one(inst in instance(6, 0.4), eta in 0.0f64..30.0) {
        let ctx = self_consistent_game(&inst);
        prop_assume!(ctx.is_some());
        let ctx = ctx.unwrap();
        let chain = transition_matrix(&ctx, eta).unwrap();
        prop_assert!(chain.row_sum_error() <= 1e-12);
        for x in 0..chain.size() {
            prop_assert!(chain.row(x).iter().all(|p| *p >= 0.0));
        }
    }
}

#[test]
fn exact_margin_never_exceeds_closed_form() {
    // star whose hub is the tail of every edge
    let net = PowerNetwork::new(
        vec![(0, 0.9), (1, -0.2), (2, -0.3), (3, -0.1)],
        vec![(0, 1, 2.0), (0, 2, 3.0), (0, 3, 1.5)],
    )
    .unwrap();
    let dp = DampingParams::new(2.0, 1.0).unwrap();
    let cfg: Configuration = "MCCC".parse().unwrap();
    let ss = solve(&net, &cfg, &dp, 0.0).unwrap();
    let targets = TargetAngles::new(ss.angle_diffs.iter().map(|t| t * 0.98).collect()).unwrap();
    let ctx = GameContext::new(net, dp, targets, 0.0).unwrap();
    let terms = NodeTerms::new(&ctx, &cfg).unwrap();
    let positive: Vec<usize> = (0..4).filter(|&i| terms.slope[i] > 0.0).collect();
    assert_eq!(positive, vec![0]);
    let closed = margin_closed_form(&ctx, &cfg, 1.0).unwrap();
    let exact = margin_exact(&ctx, &cfg, 1.0).unwrap();
    assert!(exact <= closed);
}

#[test]
fn single_line_branches_agree() {
    // the head's negative-slope crossing coincides with the tail's
    let net = PowerNetwork::new(vec![(1, 0.4), (2, -0.4)], vec![(1, 2, 2.0)]).unwrap();
    let dp = DampingParams::new(2.0, 1.0).unwrap();
    let ctx = GameContext::new(net, dp, TargetAngles::new(vec![0.1]).unwrap(), 0.0).unwrap();
    for cfg in Configuration::enumerate(2) {
        let closed = margin_closed_form(&ctx, &cfg, 1.0).unwrap();
        let exact = margin_exact(&ctx, &cfg, 1.0).unwrap();
        assert!((closed - exact).abs() <= 1e-12 * closed, "{closed} vs {exact}");
    }
}
