//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use amod_core::bounds::{
    bundled_size_bound, required_samples, stochastic_error, verify_minima_continuity, verify_oracle_inequality,
    OracleInstance,
};
use amod_core::decomposed::{build_rebalance_lp, solve_decomposed, solve_rebalance, RebalanceMethod};
use amod_core::demand::{estimate_subexponential, generate_trace, DemandTrace, RateProfile, Regime};
use amod_core::instances::{random_instance, Limits};
use amod_core::lpcore::{certify_integral, solve_lp, solve_milp, INTEGRALITY_TOL};
use amod_core::netflow::{CostModel, DemandSample, FleetState, OutstandingDemand, RoadNetwork, Tensor3};
use amod_core::saa::{build_saa_milp, build_saa_milp_naive, bundle_samples, evaluate_objective, solve_saa};
use amod_core::sim::{
    build_controller, run_scenario, ControllerSetup, SimConfig, SimStats, SolveMode, DEFAULT_ANALOG_DAYS,
    DEFAULT_ANALOG_STEPS,
};
use amod_core::split_seed;
use num::bigint::BigInt;
use num::{One, Signed, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(id: &str, name: &str, budget: Option<Duration>, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed();
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let pass = out.pass && in_budget;
    let budget_note = match budget {
        Some(b) => format!(" (budget {}s)", b.as_secs()),
        None => String::new(),
    };
    println!(
        "[{}] {id} {name}: {} | {:.1}s{budget_note}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn tum_integrality() -> Outcome {
    let mut certified = 0;
    let mut cross_checked = 0;
    let mut worst_gap = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..500u64 {
        let inst = random_instance(split_seed(1, seed), &Limits::SWEEP).expect("instance");
        let bundled = bundle_samples(&inst.samples).expect("bundle");
        let program = build_rebalance_lp(&inst.fleet, &bundled, &inst.costs, &inst.net).expect("program");
        let sol = solve_lp(&program.lp).expect("lp");
        match certify_integral(&program.lp, &sol, INTEGRALITY_TOL) {
            Ok(_) => certified += 1,
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
        if seed % 10 == 0 {
            let mut int_lp = program.lp.clone();
            int_lp.integer_mask.iter_mut().for_each(|m| *m = true);
            let milp = solve_milp(&int_lp).expect("milp");
            worst_gap = worst_gap.max((milp.objective_value - sol.objective_value).abs());
            cross_checked += 1;
        }
    }
    outcome(
        certified == 500 && cross_checked == 50 && worst_gap <= 1e-6,
        format!(
            "{certified}/500 integral vertices, {cross_checked} MILP cross-checks, max |LP-MILP| = {worst_gap:.2e}{}",
            failures.first().map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    )
}

fn decomposition() -> Outcome {
    let mut below = 0;
    let mut worst_tight = 0.0f64;
    let mut min_slack = f64::INFINITY;
    let mut with_waiting = 0;
    for seed in 0..50u64 {
        let mut inst = random_instance(split_seed(2, seed), &Limits::TINY).expect("instance");
        if inst.outstanding.total() == 0 {
            inst.outstanding.set(0, 1, 1);
        }
        with_waiting += 1;
        let bundled = bundle_samples(&inst.samples).expect("bundle");
        let full = solve_saa(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net).expect("milp");
        for method in [RebalanceMethod::Simplex, RebalanceMethod::NetworkFlow] {
            let dec = solve_decomposed(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net, method)
                .expect("decomposed");
            let plan = dec.combined_plan(&inst.outstanding);
            let cost = evaluate_objective(&plan, &inst.samples, &inst.outstanding, &inst.costs).expect("eval");
            min_slack = min_slack.min(cost - full.objective);
            if cost < full.objective - 1e-6 {
                below += 1;
            }
        }

        let none = OutstandingDemand::zeros(inst.net.n());
        let full = solve_saa(&inst.fleet, &none, &bundled, &inst.costs, &inst.net).expect("milp");
        for method in [RebalanceMethod::Simplex, RebalanceMethod::NetworkFlow] {
            let reb = solve_rebalance(&inst.fleet, &bundled, &inst.costs, &inst.net, method).expect("rebalance");
            worst_tight = worst_tight.max((reb.objective - full.objective).abs());
        }
    }
    outcome(
        below == 0 && worst_tight <= 1e-6,
        format!(
            "{with_waiting} instances with waiting customers, min(decomposed - joint) = {min_slack:.3}, \
             {below} below optimum; max |rebalance - joint| without waiting = {worst_tight:.2e}"
        ),
    )
}

fn bundling() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let inst = random_instance(split_seed(3, seed), &Limits::TINY).expect("instance");
        let bundled = bundle_samples(&inst.samples).expect("bundle");
        let a = build_saa_milp(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net).expect("bundled");
        let b = build_saa_milp_naive(&inst.fleet, &inst.outstanding, &inst.samples, &inst.costs, &inst.net)
            .expect("naive");
        let va = solve_milp(&a.lp).expect("bundled solve").objective_value;
        let vb = solve_milp(&b.lp).expect("naive solve").objective_value;
        worst = worst.max((va - vb).abs());
    }

    let (n, h, k, delta) = (2usize, 2usize, 640usize, 0.05);
    let mut within = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(33, trial));
        let pois = Poisson::new(3.0).expect("rate");
        let samples: Vec<DemandSample> = (0..k)
            .map(|_| DemandSample::new(Tensor3::from_fn(n, h, |_, _, _| pois.sample(&mut rng) as u32)))
            .collect();
        let values: Vec<f64> = samples.iter().flat_map(|s| s.tensor().as_slice().iter().map(|&v| v as f64)).collect();
        let (_, b) = estimate_subexponential(&values).expect("fit");
        let unique = bundle_samples(&samples).expect("bundle").unique_count();
        let bound = bundled_size_bound(k as u64, n as u64, h as u64, b, delta).expect("bound");
        if unique as u64 <= bound {
            within += 1;
        }
    }
    outcome(
        worst <= 1e-9 && within >= 95,
        format!("max |bundled - naive| = {worst:.2e} over 100 instances; unique count within bound in {within}/100 trials"),
    )
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn convergence_rate() -> Outcome {
    let net = RoadNetwork::uniform(2, 1, 300).expect("net");
    let fleet = FleetState::idle_only(vec![2, 1], 2).expect("fleet");
    let costs = CostModel::scaled(&net, 2, 1.0, 1.0, 4.0).expect("costs");
    let none = OutstandingDemand::zeros(2);
    let mean = Tensor3::from_fn(2, 2, |i, j, _| if i == j { 0.0 } else { 1.5 });
    let ks = [10usize, 40, 160, 640];
    let mut spreads = Vec::new();
    for &k in &ks {
        let mut values = Vec::new();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(4, seed * 1000 + k as u64));
            let samples: Vec<DemandSample> = (0..k)
                .map(|_| {
                    DemandSample::new(Tensor3::from_fn(2, 2, |i, j, s| {
                        let m = mean.get(i, j, s);
                        if m > 0.0 {
                            Poisson::new(m).expect("rate").sample(&mut rng) as u32
                        } else {
                            0
                        }
                    }))
                })
                .collect();
            let bundled = bundle_samples(&samples).expect("bundle");
            values.push(solve_saa(&fleet, &none, &bundled, &costs, &net).expect("saa").objective);
        }
        let mu = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        spreads.push(var.sqrt());
    }
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let slope = log_log_slope(&xs, &spreads);
    outcome(
        (-0.7..=-0.3).contains(&slope),
        format!(
            "std devs {:?} at K = {ks:?}, log-log slope {slope:.3} (target [-0.7, -0.3])",
            spreads.iter().map(|s| (s * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn minima_continuity() -> Outcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut held = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=40);
        let f: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let noise = rng.random_range(0.0..3.0);
        let g: Vec<f64> = f.iter().map(|v| v + rng.random_range(-noise..=noise)).collect();
        if verify_minima_continuity(&f, &g).expect("tables") {
            held += 1;
        }
    }
    outcome(held == 1000, format!("{held}/1000 random pairs satisfy the inequality exactly"))
}

fn oracle_inequality() -> Outcome {
    let inst = OracleInstance::standard();
    let delta = 0.1;
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, law) in [("true law", inst.p.clone()), ("perturbed law", inst.perturbed_law())] {
        let sigma = inst.loss_sigma(&law);
        let k = required_samples(1.0, sigma, 2, 2, inst.fleet.fleet_size() as u64, delta).expect("K") as usize;
        let rep = verify_oracle_inequality(&inst, &law, k, delta, 200, 6).expect("report");
        pass &= rep.empirical_violation_rate <= delta;
        lines.push(format!(
            "{label}: K = {k}, bound {:.3}, max half gap {:.3}, violation rate {:.3}",
            rep.bound_terms.total, rep.max_half_gap, rep.empirical_violation_rate
        ));
    }
    outcome(pass, format!("200 trials at delta = 0.1; {}", lines.join("; ")))
}

fn simulator_conservation() -> Outcome {
    let scenario = Scenario::standard();
    let truth = scenario.day(7);
    let run = |seed| scenario.run("mpc-saa", &truth, seed);
    let first = match run(7) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let again = run(7).expect("rerun");
    let identical = first.to_json().expect("json") == again.to_json().expect("json");
    let waits_exact = first.served.iter().all(|t| t.assigned_s >= t.request_s && t.wait_s() == t.assigned_s - t.request_s);
    let arrivals = truth.window(0, scenario.cfg.duration_s).len() as u64;
    let accounted = first.served_count + first.unserved_count == arrivals;
    let reactive = scenario.run("reactive", &truth, 7).is_ok();
    outcome(
        identical && waits_exact && accounted && reactive,
        format!(
            "{} ticks checked for fleet of {}, {} served + {} unserved of {arrivals} requests, waits exact: {waits_exact}, \
             byte-identical rerun: {identical}",
            (scenario.cfg.duration_s / scenario.cfg.tick_s as u64),
            scenario.cfg.fleet_size(),
            first.served_count,
            first.unserved_count
        ),
    )
}

/// Ten stations on a 2x5 grid, fifty vehicles, two hours of requests whose
/// direction flips between blocks.
struct Scenario {
    cfg: SimConfig,
    profile: RateProfile,
    history: Vec<DemandTrace>,
    costs: CostModel,
    horizon: usize,
    k: usize,
}

impl Scenario {
    fn standard() -> Self {
        let n = 10usize;
        let tau: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1
                        } else {
                            let d = (i % 5).abs_diff(j % 5) + (i / 5).abs_diff(j / 5);
                            1 + d / 2
                        }
                    })
                    .collect()
            })
            .collect();
        let net = RoadNetwork::new(tau, 300).expect("net");
        let cfg = SimConfig::new(net.clone(), vec![5; n], 7200);
        let west: Vec<f64> = (0..n).map(|i| if i % 5 < 2 { 1.0 } else { 0.05 }).collect();
        let east: Vec<f64> = (0..n).map(|i| if i % 5 >= 3 { 1.0 } else { 0.05 }).collect();
        let regime = |weight, rate_per_s, origin_weights: &Vec<f64>, dest_weights: &Vec<f64>| Regime {
            weight,
            rate_per_s,
            origin_weights: origin_weights.clone(),
            dest_weights: dest_weights.clone(),
        };
        let profile = RateProfile::Mixture {
            block_s: 1800,
            regimes: vec![
                regime(0.4, 0.03, &west, &east),
                regime(0.4, 0.03, &east, &west),
                regime(0.2, 0.01, &Vec::new(), &Vec::new()),
            ],
        };
        let history = (0..30).map(|d| generate_trace(n, 7200, &profile, 10_000 + d).expect("history")).collect();
        let horizon = 6;
        let costs = CostModel::defaults(&net, horizon).expect("costs");
        Scenario { cfg, profile, history, costs, horizon, k: 50 }
    }

    fn day(&self, seed: u64) -> DemandTrace {
        generate_trace(self.cfg.net.n(), self.cfg.duration_s, &self.profile, seed).expect("trace")
    }

    fn run(&self, controller: &str, truth: &DemandTrace, seed: u64) -> amod_core::Result<SimStats> {
        let setup = ControllerSetup {
            horizon: self.horizon,
            k: self.k,
            costs: self.costs.clone(),
            mode: SolveMode::Decomposed,
            method: RebalanceMethod::NetworkFlow,
            history: self.history.clone(),
            analog_days: DEFAULT_ANALOG_DAYS,
            analog_steps: DEFAULT_ANALOG_STEPS,
            truth: truth.clone(),
            duration_s: self.cfg.duration_s,
        };
        let mut c = build_controller(controller, &setup)?;
        run_scenario(&self.cfg, truth, c.as_mut(), self.horizon, seed)
    }
}

fn controller_ordering(target_line: &mut String) -> Outcome {
    let scenario = Scenario::standard();
    let names = ["mpc-perfect", "mpc-saa", "mpc-point", "reactive"];
    let seeds = 20u64;
    let mut total_wait = [0.0f64; 4];
    let mut total_served = [0u64; 4];
    let mut reb = [0u64; 4];
    for seed in 0..seeds {
        let truth = scenario.day(seed);
        for (c, name) in names.iter().enumerate() {
            let stats = match scenario.run(name, &truth, seed) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("{name} failed on seed {seed}: {e}")),
            };
            total_wait[c] += stats.waits().iter().sum::<u64>() as f64;
            total_served[c] += stats.served_count;
            reb[c] += stats.reb_tasks;
        }
    }
    let mean: Vec<f64> = (0..4).map(|c| total_wait[c] / total_served[c].max(1) as f64).collect();
    let [perfect, saa, point, reactive] = [mean[0], mean[1], mean[2], mean[3]];
    let ordered = perfect <= saa && saa <= point && saa < reactive;
    let improvement = if point > 0.0 { 1.0 - saa / point } else { 0.0 };
    *target_line = format!(
        "[{}] 8t mpc-saa at least 20% below mpc-point: {:.1}% lower mean wait",
        if improvement >= 0.2 { "PASS" } else { "FAIL" },
        improvement * 100.0
    );
    outcome(
        ordered,
        format!(
            "mean wait over {seeds} seeds: perfect {perfect:.2}s, saa {saa:.2}s, point {point:.2}s, reactive {reactive:.2}s; \
             rebalance trips {:?}",
            reb
        ),
    )
}

/// Fixed-point decimal arithmetic with `DIGITS` fractional digits.
const DIGITS: u32 = 60;

fn scale() -> BigInt {
    BigInt::from(10u32).pow(DIGITS)
}

fn fixed(numer: i64, denom: i64) -> BigInt {
    BigInt::from(numer) * scale() / BigInt::from(denom)
}

fn mul(a: &BigInt, b: &BigInt) -> BigInt {
    a * b / scale()
}

fn div(a: &BigInt, b: &BigInt) -> BigInt {
    a * scale() / b
}

/// `ln(x) = 2 atanh((x-1)/(x+1))`, summed until terms vanish.
fn ln_fixed(x: &BigInt) -> BigInt {
    let y = div(&(x - scale()), &(x + scale()));
    let y2 = mul(&y, &y);
    let mut term = y.clone();
    let mut sum = BigInt::zero();
    let mut k = 1u32;
    while !term.is_zero() {
        sum += &term / BigInt::from(k);
        term = mul(&term, &y2);
        k += 2;
    }
    sum * 2
}

fn sqrt_fixed(x: &BigInt) -> BigInt {
    (x * scale()).sqrt()
}

fn to_f64(x: &BigInt) -> f64 {
    let digits = x.abs().to_string();
    let sign = if x.is_negative() { -1.0 } else { 1.0 };
    let padded = format!("{digits:0>width$}", width = DIGITS as usize + 1);
    let (int, frac) = padded.split_at(padded.len() - DIGITS as usize);
    sign * format!("{int}.{}", &frac[..20]).parse::<f64>().expect("decimal")
}

fn calculators() -> Outcome {
    // (2σ/√K)·√(n²T ln m − ½ ln δ) with σ=1, K=100, n=2, T=2, m=4, δ=0.1.
    let ln4 = ln_fixed(&fixed(4, 1));
    let ln_delta = ln_fixed(&fixed(1, 10));
    let inner = ln4 * 8 - ln_delta / 2;
    let reference = mul(&fixed(2, 10), &sqrt_fixed(&inner));
    let reference_f = to_f64(&reference);
    let computed = stochastic_error(1.0, 100, 2, 2, 4, 0.1).expect("formula");

    // ceil(64 σ² ε⁻² (n²T ln m − ½ ln δ)) with σ = ε = 1.
    let raw = &inner * 64;
    let k_ref: BigInt = (&raw + scale() - BigInt::one()) / scale();
    let k_ref = k_ref.to_u64().expect("fits");
    let k = required_samples(1.0, 1.0, 2, 2, 4, 0.1).expect("formula");

    let pass = (computed - 0.6998).abs() <= 1e-3 && (computed - reference_f).abs() <= 1e-12 && k == 784 && k_ref == 784;
    outcome(
        pass,
        format!("stochastic_error = {computed:.6} (60-digit reference {reference_f:.15}); required_samples = {k} (reference {k_ref})"),
    )
}

fn main() {
    let mut all = true;
    all &= report("1", "integral vertices of the rebalancing LP", Some(Duration::from_secs(120)), tum_integrality);
    all &= report("2", "decomposition bounds and tightness", None, decomposition);
    all &= report("3", "bundling equivalence and size bound", None, bundling);
    all &= report("4", "sample average convergence rate", None, convergence_rate);
    all &= report("5", "continuity of minima", None, minima_continuity);
    all &= report("6", "oracle inequality", None, oracle_inequality);
    all &= report("7", "simulator conservation and determinism", None, simulator_conservation);
    let mut target = String::new();
    all &= report("8", "controller ordering", Some(Duration::from_secs(900)), || controller_ordering(&mut target));
    println!("{target}");
    all &= report("9", "bound calculators", None, calculators);
    if !all {
        std::process::exit(1);
    }
}
