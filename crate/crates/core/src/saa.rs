//! Sample-average surrogate of the stochastic fleet problem.
//!
//! Each demand sample contributes drop terms `c_λ (λ^k + w - x)₊`. Samples
//! that agree on a coordinate produce identical terms, so they are merged
//! into one variable weighted by multiplicity ([`bundle_samples`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpcore::{certify_integral, solve_milp, LinearProgram, VarTag, INTEGRALITY_TOL};
use crate::netflow::{
    check_flow_conservation, check_waiter_conservation, CostModel, DemandSample, FleetState,
    OutstandingDemand, Plan, RoadNetwork, Tensor3,
};

/// Deduplicated samples: per `(i, j, step)` a strictly increasing list of
/// `(value, count)` pairs whose counts add up to `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundledDemand {
    n: usize,
    horizon: usize,
    k: usize,
    entries: Vec<Vec<(u32, u32)>>,
}

impl BundledDemand {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of samples that were bundled.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self, i: usize, j: usize, step: usize) -> &[(u32, u32)] {
        &self.entries[(i * self.n + j) * self.horizon + step]
    }

    /// Total number of bundled drop variables.
    pub fn unique_count(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    /// `(1/K) Σ_k λ^k` per coordinate.
    pub fn mean(&self, i: usize, j: usize, step: usize) -> f64 {
        let total: u64 = self.values(i, j, step).iter().map(|&(v, c)| v as u64 * c as u64).sum();
        total as f64 / self.k as f64
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().flatten().all(|&(v, _)| v == 0)
    }

    /// All-zero demand for `k` samples.
    pub fn zeros(n: usize, horizon: usize, k: usize) -> Self {
        BundledDemand {
            n,
            horizon,
            k,
            entries: vec![vec![(0, k as u32)]; n * n * horizon],
        }
    }
}

pub fn bundle_samples(samples: &[DemandSample]) -> Result<BundledDemand> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("at least one demand sample is required".into()))?;
    let (n, horizon) = (first.n(), first.horizon());
    if let Some(bad) = samples.iter().position(|s| !s.tensor().same_shape(first.tensor())) {
        return Err(Error::Shape(format!("sample {bad} differs in shape from sample 0")));
    }
    let mut entries = Vec::with_capacity(n * n * horizon);
    let mut column = Vec::with_capacity(samples.len());
    for idx in 0..n * n * horizon {
        column.clear();
        column.extend(samples.iter().map(|s| s.tensor().as_slice()[idx]));
        column.sort_unstable();
        let mut bundle: Vec<(u32, u32)> = Vec::new();
        for &v in &column {
            match bundle.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => bundle.push((v, 1)),
            }
        }
        entries.push(bundle);
    }
    Ok(BundledDemand {
        n,
        horizon,
        k: samples.len(),
        entries,
    })
}

/// Variable layout of a built program.
#[derive(Clone, Debug)]
pub struct SaaProgram {
    pub lp: LinearProgram,
    pub x: Tensor3<usize>,
    pub w: Tensor3<usize>,
}

fn check_dims(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    costs: &CostModel,
    net: &RoadNetwork,
    n: usize,
    horizon: usize,
) -> Result<()> {
    let ok = fleet.n() == n
        && outstanding.n() == n
        && costs.n() == n
        && net.n() == n
        && fleet.horizon() == horizon
        && costs.horizon() == horizon;
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "demand is {n}x{n}x{horizon}; fleet {}x{}, outstanding {}, costs {}x{}, network {}",
            fleet.n(),
            fleet.horizon(),
            outstanding.n(),
            costs.n(),
            costs.horizon(),
            net.n()
        )))
    }
}

/// Adds `x` columns and one conservation row per `(station, step)`.
pub(crate) fn add_flow_block(
    lp: &mut LinearProgram,
    fleet: &FleetState,
    costs: &CostModel,
    net: &RoadNetwork,
    integer: bool,
) -> Tensor3<usize> {
    let (n, h) = (fleet.n(), fleet.horizon());
    let x = Tensor3::from_fn(n, h, |i, j, s| {
        lp.add_var(VarTag::Flow { i, j, t: s + 1 }, costs.move_cost.get(i, j, s), integer)
    });
    for s in 0..h {
        for i in 0..n {
            let mut coeffs: Vec<(usize, f64)> = (0..n).map(|j| (x.get(i, j, s), 1.0)).collect();
            for j in 0..n {
                let tau = net.tau(j, i);
                if s >= tau {
                    coeffs.push((x.get(j, i, s - tau), -1.0));
                }
            }
            lp.add_eq(coeffs, fleet.supply(i, s) as f64);
        }
    }
    x
}

struct DropTerm {
    i: usize,
    j: usize,
    step: usize,
    value: u32,
    weight: f64,
    label: usize,
}

fn build(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    costs: &CostModel,
    net: &RoadNetwork,
    terms: impl Iterator<Item = DropTerm>,
) -> SaaProgram {
    let (n, h) = (fleet.n(), fleet.horizon());
    let mut lp = LinearProgram::new();
    let x = add_flow_block(&mut lp, fleet, costs, net, true);
    let w = Tensor3::from_fn(n, h, |i, j, s| {
        lp.add_var(VarTag::Wait { i, j, t: s + 1 }, costs.wait_cost.get(i, j, s), true)
    });
    for i in 0..n {
        for j in 0..n {
            let coeffs = (0..h).map(|s| (w.get(i, j, s), 1.0)).collect();
            lp.add_eq(coeffs, outstanding.get(i, j) as f64);
        }
    }
    for term in terms {
        let DropTerm { i, j, step, value, weight, label } = term;
        let u = lp.add_var(VarTag::Drop { i, j, t: step + 1, k: label }, weight, true);
        lp.add_ge(
            vec![(u, 1.0), (x.get(i, j, step), 1.0), (w.get(i, j, step), -1.0)],
            value as f64,
        );
    }
    SaaProgram { lp, x, w }
}

/// Bundled surrogate MILP: one drop variable per distinct sample value,
/// labelled `u[i,j,t,value]`.
pub fn build_saa_milp(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    bundled: &BundledDemand,
    costs: &CostModel,
    net: &RoadNetwork,
) -> Result<SaaProgram> {
    let (n, h) = (bundled.n(), bundled.horizon());
    check_dims(fleet, outstanding, costs, net, n, h)?;
    let k = bundled.k() as f64;
    let terms = (0..n).flat_map(move |i| {
        (0..n).flat_map(move |j| {
            (0..h).flat_map(move |step| {
                bundled.values(i, j, step).iter().map(move |&(value, count)| DropTerm {
                    i,
                    j,
                    step,
                    value,
                    weight: costs.drop_cost.get(i, j, step) * count as f64 / k,
                    label: value as usize,
                })
            })
        })
    });
    Ok(build(fleet, outstanding, costs, net, terms))
}

/// Unbundled surrogate MILP: one drop variable per sample, labelled
/// `u[i,j,t,k]`.
pub fn build_saa_milp_naive(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    samples: &[DemandSample],
    costs: &CostModel,
    net: &RoadNetwork,
) -> Result<SaaProgram> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("at least one demand sample is required".into()))?;
    let (n, h) = (first.n(), first.horizon());
    check_dims(fleet, outstanding, costs, net, n, h)?;
    if samples.iter().any(|s| !s.tensor().same_shape(first.tensor())) {
        return Err(Error::Shape("samples differ in shape".into()));
    }
    let k = samples.len() as f64;
    let terms = (0..n).flat_map(move |i| {
        (0..n).flat_map(move |j| {
            (0..h).flat_map(move |step| {
                samples.iter().enumerate().map(move |(label, sample)| DropTerm {
                    i,
                    j,
                    step,
                    value: sample.get(i, j, step),
                    weight: costs.drop_cost.get(i, j, step) / k,
                    label,
                })
            })
        })
    });
    Ok(build(fleet, outstanding, costs, net, terms))
}

#[derive(Clone, Debug)]
pub struct SaaSolution {
    pub plan: Plan,
    pub objective: f64,
}

/// Extracts and certifies the plan of an optimal program solution.
pub(crate) fn extract_plan(program: &SaaProgram, values: &[f64], has_wait: bool) -> Plan {
    let (n, h) = (program.x.n(), program.x.horizon());
    let mut plan = Plan::zeros(n, h);
    for ((i, j, s), var) in program.x.iter_indexed() {
        plan.x.set(i, j, s, values[var].round() as u32);
        if has_wait {
            plan.w.set(i, j, s, values[program.w.get(i, j, s)].round() as u32);
        }
    }
    plan
}

/// Solves the bundled surrogate to integer optimality and verifies both
/// conservation laws on the result.
pub fn solve_saa(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    bundled: &BundledDemand,
    costs: &CostModel,
    net: &RoadNetwork,
) -> Result<SaaSolution> {
    let program = build_saa_milp(fleet, outstanding, bundled, costs, net)?;
    let sol = solve_milp(&program.lp)?;
    let values = certify_integral(&program.lp, &sol, INTEGRALITY_TOL)?;
    let values: Vec<f64> = values.into_iter().map(|v| v as f64).collect();
    let plan = extract_plan(&program, &values, true);
    if let Some(v) = check_flow_conservation(&plan, fleet, net)? {
        return Err(Error::Invariant(format!(
            "surrogate plan breaks flow conservation at station {} timestep {}",
            v.station, v.timestep
        )));
    }
    if !check_waiter_conservation(&plan, outstanding)? {
        return Err(Error::Invariant("surrogate plan leaves waiting customers unserved".into()));
    }
    Ok(SaaSolution {
        plan,
        objective: sol.objective_value,
    })
}

fn movement_and_wait_cost(plan: &Plan, costs: &CostModel) -> f64 {
    plan.x
        .iter_indexed()
        .map(|((i, j, s), x)| costs.move_cost.get(i, j, s) * x as f64 + costs.wait_cost.get(i, j, s) * plan.w.get(i, j, s) as f64)
        .sum()
}

/// Surrogate objective of a plan with the drop variables eliminated:
/// `c_x'x + c_w'w + (1/K) Σ_k Σ c_λ (λ^k + w - x)₊`.
pub fn evaluate_objective(
    plan: &Plan,
    samples: &[DemandSample],
    outstanding: &OutstandingDemand,
    costs: &CostModel,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("at least one demand sample is required".into()));
    }
    if outstanding.n() != plan.n()
        || !plan.x.same_shape(&costs.move_cost)
        || samples.iter().any(|s| !s.tensor().same_shape(&plan.x))
    {
        return Err(Error::Shape("plan, samples and costs must share n and T".into()));
    }
    let k = samples.len() as f64;
    let mut drop = 0.0;
    for ((i, j, s), x) in plan.x.iter_indexed() {
        let w = plan.w.get(i, j, s) as i64;
        let unmet: i64 = samples
            .iter()
            .map(|smp| (smp.get(i, j, s) as i64 + w - x as i64).max(0))
            .sum();
        drop += costs.drop_cost.get(i, j, s) * unmet as f64;
    }
    Ok(movement_and_wait_cost(plan, costs) + drop / k)
}

/// Same quantity as [`evaluate_objective`] computed from bundled samples.
pub fn evaluate_bundled(plan: &Plan, bundled: &BundledDemand, costs: &CostModel) -> Result<f64> {
    if bundled.n() != plan.n() || bundled.horizon() != plan.horizon() || !plan.x.same_shape(&costs.move_cost) {
        return Err(Error::Shape("plan, samples and costs must share n and T".into()));
    }
    let k = bundled.k() as f64;
    let mut drop = 0.0;
    for ((i, j, s), x) in plan.x.iter_indexed() {
        let w = plan.w.get(i, j, s) as i64;
        let unmet: i64 = bundled
            .values(i, j, s)
            .iter()
            .map(|&(v, c)| c as i64 * (v as i64 + w - x as i64).max(0))
            .sum();
        drop += costs.drop_cost.get(i, j, s) * unmet as f64;
    }
    Ok(movement_and_wait_cost(plan, costs) + drop / k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_station(a: Vec<u32>, horizon: usize) -> (RoadNetwork, FleetState) {
        let net = RoadNetwork::uniform(2, 1, 300).unwrap();
        (net, FleetState::idle_only(a, horizon).unwrap())
    }

    fn sample_with(n: usize, h: usize, entries: &[((usize, usize, usize), u32)]) -> DemandSample {
        let mut s = DemandSample::zeros(n, h);
        for &((i, j, t), v) in entries {
            s.tensor_mut().set(i, j, t, v);
        }
        s
    }

    #[test]
    fn multiset_dedup() {
        let samples: Vec<DemandSample> = [2, 2, 3, 2].iter().map(|&v| sample_with(1, 1, &[((0, 0, 0), v)])).collect();
        let b = bundle_samples(&samples).unwrap();
        assert_eq!(b.values(0, 0, 0), &[(2, 3), (3, 1)]);
        assert_eq!(b.k(), 4);
    }

    #[test]
    fn identical_samples_give_one_bundle_each() {
        let s = sample_with(2, 2, &[((0, 1, 0), 4)]);
        let b = bundle_samples(&vec![s; 7]).unwrap();
        assert_eq!(b.unique_count(), 8);
        assert_eq!(b.values(0, 1, 0), &[(4, 7)]);
        assert!(bundle_samples(&[]).is_err());
    }

    #[test]
    fn zero_demand_keeps_everyone_idle() {
        let (net, fleet) = two_station(vec![1, 0], 2);
        let costs = CostModel::scaled(&net, 2, 1.0, 1.0, 10.0).unwrap();
        let b = bundle_samples(&[DemandSample::zeros(2, 2)]).unwrap();
        let sol = solve_saa(&fleet, &OutstandingDemand::zeros(2), &b, &costs, &net).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.plan.x, Plan::all_idle(&fleet).x);
    }

    #[test]
    fn single_trip_is_served() {
        let (net, fleet) = two_station(vec![2, 0], 2);
        let costs = CostModel::scaled(&net, 2, 1.0, 1.0, 10.0).unwrap();
        let samples = vec![sample_with(2, 2, &[((0, 1, 0), 1)])];
        let b = bundle_samples(&samples).unwrap();
        let sol = solve_saa(&fleet, &OutstandingDemand::zeros(2), &b, &costs, &net).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert_eq!(sol.plan.x.get(0, 1, 0), 1);
        assert_eq!(sol.plan.x.get(0, 0, 0), 1);
        let direct = evaluate_objective(&sol.plan, &samples, &OutstandingDemand::zeros(2), &costs).unwrap();
        assert!((direct - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn waiting_customer_is_picked_up_first_step() {
        let (net, fleet) = two_station(vec![1, 0], 2);
        let costs = CostModel::scaled(&net, 2, 1.0, 1.0, 10.0).unwrap();
        let mut outstanding = OutstandingDemand::zeros(2);
        outstanding.set(0, 1, 1);
        let b = bundle_samples(&[DemandSample::zeros(2, 2)]).unwrap();
        let sol = solve_saa(&fleet, &outstanding, &b, &costs, &net).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert_eq!(sol.plan.w.get(0, 1, 0), 1);
        assert_eq!(sol.plan.x.get(0, 1, 0), 1);
    }

    #[test]
    fn direct_objective_formula() {
        let net = RoadNetwork::uniform(2, 1, 300).unwrap();
        let costs = CostModel::scaled(&net, 1, 1.0, 1.0, 10.0).unwrap();
        let samples = vec![sample_with(2, 1, &[((0, 1, 0), 1)])];
        let none = OutstandingDemand::zeros(2);
        let mut plan = Plan::zeros(2, 1);
        assert_eq!(evaluate_objective(&plan, &samples, &none, &costs).unwrap(), 10.0);
        plan.x.set(0, 1, 0, 1);
        assert_eq!(evaluate_objective(&plan, &samples, &none, &costs).unwrap(), 1.0);
        let b = bundle_samples(&samples).unwrap();
        assert_eq!(evaluate_bundled(&plan, &b, &costs).unwrap(), 1.0);
    }

    #[test]
    fn bundled_program_is_smaller() {
        let (net, fleet) = two_station(vec![2, 0], 2);
        let costs = CostModel::defaults(&net, 2).unwrap();
        let samples = vec![sample_with(2, 2, &[((0, 1, 0), 1)]); 5];
        let b = bundle_samples(&samples).unwrap();
        let none = OutstandingDemand::zeros(2);
        let bundled = build_saa_milp(&fleet, &none, &b, &costs, &net).unwrap();
        let naive = build_saa_milp_naive(&fleet, &none, &samples, &costs, &net).unwrap();
        assert_eq!(bundled.lp.num_vars(), 8 + 8 + 8);
        assert_eq!(naive.lp.num_vars(), 8 + 8 + 40);
    }
}
