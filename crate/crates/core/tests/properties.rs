use amod_core::bounds::{chi_square_divergence, stochastic_error, verify_minima_continuity};
use amod_core::decomposed::{solve_decomposed, solve_rebalance, RebalanceMethod};
use amod_core::demand::{DemandTrace, TripRecord};
use amod_core::instances::{random_instance, Limits};
use amod_core::lpcore::{certify_integral, solve_lp, INTEGRALITY_TOL};
use amod_core::netflow::{check_flow_conservation, check_waiter_conservation, Plan, RoadNetwork, Tensor3};
use amod_core::saa::{build_saa_milp, bundle_samples, evaluate_bundled, evaluate_objective, solve_saa};
use amod_core::sim::{run_scenario, wait_summary, ReactiveController, SimConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_plans_conserve_vehicles_and_customers(seed in any::<u64>()) {
        let inst = random_instance(seed, &Limits::TINY).unwrap();
        let bundled = bundle_samples(&inst.samples).unwrap();
        let sol = solve_saa(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net).unwrap();
        prop_assert!(check_flow_conservation(&sol.plan, &inst.fleet, &inst.net).unwrap().is_none());
        prop_assert!(check_waiter_conservation(&sol.plan, &inst.outstanding).unwrap());
        let direct = evaluate_objective(&sol.plan, &inst.samples, &inst.outstanding, &inst.costs).unwrap();
        prop_assert!((direct - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn rebalance_solvers_agree(seed in any::<u64>()) {
        let inst = random_instance(seed, &Limits::SWEEP).unwrap();
        let bundled = bundle_samples(&inst.samples).unwrap();
        let lp = solve_rebalance(&inst.fleet, &bundled, &inst.costs, &inst.net, RebalanceMethod::Simplex).unwrap();
        let flow = solve_rebalance(&inst.fleet, &bundled, &inst.costs, &inst.net, RebalanceMethod::NetworkFlow).unwrap();
        prop_assert!((lp.objective - flow.objective).abs() < 1e-6, "{} vs {}", lp.objective, flow.objective);
        for plan in [&lp.plan, &flow.plan] {
            prop_assert!(check_flow_conservation(plan, &inst.fleet, &inst.net).unwrap().is_none());
        }
    }

    #[test]
    fn joint_relaxation_without_waiting_is_integral(seed in any::<u64>()) {
        let mut inst = random_instance(seed, &Limits::SWEEP).unwrap();
        inst.outstanding = amod_core::netflow::OutstandingDemand::zeros(inst.net.n());
        let bundled = bundle_samples(&inst.samples).unwrap();
        let program = build_saa_milp(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net).unwrap();
        let sol = solve_lp(&program.lp).unwrap();
        prop_assert!(certify_integral(&program.lp, &sol, INTEGRALITY_TOL).is_ok());
    }

    #[test]
    fn decomposed_plan_is_feasible(seed in any::<u64>()) {
        let inst = random_instance(seed, &Limits::TINY).unwrap();
        let bundled = bundle_samples(&inst.samples).unwrap();
        let dec = solve_decomposed(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net, RebalanceMethod::NetworkFlow).unwrap();
        for (i, row) in dec.matching.dispatch.iter().enumerate() {
            prop_assert!(row.iter().sum::<u32>() <= inst.fleet.idle()[i]);
        }
        let plan = dec.combined_plan(&inst.outstanding);
        prop_assert!(check_flow_conservation(&plan, &inst.fleet, &inst.net).unwrap().is_none());
        prop_assert!(check_waiter_conservation(&plan, &inst.outstanding).unwrap());
    }

    #[test]
    fn bundling_preserves_counts_and_objective(seed in any::<u64>()) {
        let inst = random_instance(seed, &Limits::SWEEP).unwrap();
        let bundled = bundle_samples(&inst.samples).unwrap();
        let (n, h) = (inst.net.n(), inst.fleet.horizon());
        for i in 0..n {
            for j in 0..n {
                for s in 0..h {
                    let values = bundled.values(i, j, s);
                    prop_assert_eq!(values.iter().map(|&(_, c)| c as usize).sum::<usize>(), inst.samples.len());
                    prop_assert!(values.windows(2).all(|w| w[0].0 < w[1].0));
                }
            }
        }
        let plan = Plan::all_idle(&inst.fleet);
        let a = evaluate_bundled(&plan, &bundled, &inst.costs).unwrap();
        let b = evaluate_objective(&plan, &inst.samples, &inst.outstanding, &inst.costs).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn chi_square_is_nonnegative(raw in prop::collection::vec(0.01f64..1.0, 2..6), other in prop::collection::vec(0.01f64..1.0, 2..6)) {
        let len = raw.len().min(other.len());
        let norm = |v: &[f64]| {
            let total: f64 = v[..len].iter().sum();
            v[..len].iter().map(|x| x / total).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&raw), norm(&other));
        prop_assert!(chi_square_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(chi_square_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn stochastic_error_monotone(k in 1u64..1000, n in 1u64..6, t in 1u64..6, m in 2u64..50, delta in 0.01f64..0.99) {
        let base = stochastic_error(1.0, k, n, t, m, delta).unwrap();
        prop_assert!(stochastic_error(1.0, k + 1, n, t, m, delta).unwrap() < base);
        prop_assert!(stochastic_error(1.0, k, n, t, m, (delta + 0.005).min(1.0)).unwrap() <= base);
        prop_assert!(stochastic_error(1.5, k, n, t, m, delta).unwrap() > base);
        prop_assert!(stochastic_error(1.0, k, n + 1, t, m, delta).unwrap() > base);
        prop_assert!(stochastic_error(1.0, k, n, t + 1, m, delta).unwrap() > base);
        prop_assert!(stochastic_error(1.0, k, n, t, m + 1, delta).unwrap() > base);
    }

    #[test]
    fn minima_continuity_holds(f in prop::collection::vec(-1e3f64..1e3, 1..30), noise in prop::collection::vec(-5.0f64..5.0, 30)) {
        let g: Vec<f64> = f.iter().zip(&noise).map(|(a, b)| a + b).collect();
        prop_assert!(verify_minima_continuity(&f, &g).unwrap());
    }

    #[test]
    fn tensor_index_round_trips(n in 1usize..6, h in 1usize..6) {
        let t = Tensor3::from_fn(n, h, |i, j, s| (i * 100 + j * 10 + s) as u32);
        for ((i, j, s), v) in t.iter_indexed() {
            prop_assert_eq!(v, (i * 100 + j * 10 + s) as u32);
            prop_assert_eq!(t.as_slice()[t.index(i, j, s)], v);
        }
    }

    #[test]
    fn trace_csv_round_trips(times in prop::collection::vec(0u64..10_000, 0..40), seed in any::<u64>()) {
        let mut times = times;
        times.sort_unstable();
        let records: Vec<TripRecord> = times
            .iter()
            .enumerate()
            .map(|(k, &t)| TripRecord { request_s: t, origin: (seed as usize + k) % 3, dest: (k * 7) % 3 })
            .collect();
        let trace = DemandTrace::new(records).unwrap();
        let mut buf = Vec::new();
        trace.to_writer(&mut buf).unwrap();
        let back = DemandTrace::from_reader(buf.as_slice()).unwrap();
        prop_assert_eq!(back.records(), trace.records());
    }

    #[test]
    fn simulator_accounts_for_every_request(
        arrivals in prop::collection::vec((0u64..3600, 0usize..3, 0usize..3), 0..60),
        fleet in prop::collection::vec(0u32..3, 3),
    ) {
        let mut arrivals = arrivals;
        arrivals.sort_unstable();
        let records: Vec<TripRecord> = arrivals
            .iter()
            .map(|&(t, o, d)| TripRecord { request_s: t, origin: o, dest: if d == o { (o + 1) % 3 } else { d } })
            .collect();
        let trace = DemandTrace::new(records).unwrap();
        let net = RoadNetwork::new(vec![vec![1, 1, 2], vec![1, 1, 1], vec![2, 1, 1]], 300).unwrap();
        let cfg = SimConfig::new(net, fleet.clone(), 3600);
        let stats = run_scenario(&cfg, &trace, &mut ReactiveController, 4, 1).unwrap();
        prop_assert_eq!(stats.served_count + stats.unserved_count, trace.len() as u64);
        for origin in 0..3 {
            let mut trips: Vec<_> = stats.served.iter().filter(|t| t.origin == origin).collect();
            trips.sort_by_key(|t| t.request_s);
            prop_assert!(trips.windows(2).all(|w| w[0].assigned_s <= w[1].assigned_s));
        }
        let waits = stats.waits();
        let (mean, median, p99) = wait_summary(&waits);
        prop_assert_eq!((mean, median, p99), (stats.mean_wait_s, stats.median_wait_s, stats.p99_wait_s));
        if let (Some(lo), Some(hi)) = (waits.iter().min(), waits.iter().max()) {
            prop_assert!(*lo as f64 <= median && median <= *hi as f64 && p99 <= *hi as f64);
        }
    }
}
