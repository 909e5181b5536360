//! Two-stage alternative to the joint surrogate.
//!
//! Waiting customers are first matched to idle vehicles with a bipartite
//! transport LP. The remaining fleet is then repositioned for future demand
//! by a continuous LP with `w = 0`, whose constraint matrix is totally
//! unimodular, so its vertex optima are integral.
//!
//! The rebalance LP is also a convex-cost network flow on the time-expanded
//! graph; [`RebalanceMethod::NetworkFlow`] solves it that way, which is far
//! faster than the dense simplex at simulator scale.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpcore::{certify_integral, solve_lp, LinearProgram, VarTag, INTEGRALITY_TOL};
use crate::netflow::{check_flow_conservation, CostModel, FleetState, OutstandingDemand, Plan, RoadNetwork, Tensor3};
use crate::saa::{add_flow_block, evaluate_bundled, BundledDemand};

/// Waiting customers per station and the vehicles that could serve them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingInstance {
    pub z: Vec<u32>,
    pub y: Vec<u32>,
    /// Row-major `n × n` dispatch cost, zero on the diagonal.
    pub cost: Vec<f64>,
    pub drop_penalty: f64,
}

impl MatchingInstance {
    pub fn new(z: Vec<u32>, y: Vec<u32>, cost: Vec<f64>, drop_penalty: f64) -> Result<Self> {
        let n = z.len();
        if y.len() != n || cost.len() != n * n {
            return Err(Error::Shape(format!(
                "z has {n} entries, y has {}, cost has {}",
                y.len(),
                cost.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) || !(drop_penalty >= 0.0) {
            return Err(Error::Argument("matching costs must be finite and non-negative".into()));
        }
        if (0..n).any(|i| cost[i * n + i] != 0.0) {
            return Err(Error::Argument("staying put must cost nothing".into()));
        }
        Ok(MatchingInstance { z, y, cost, drop_penalty })
    }

    /// Dispatch cost equal to travel time in steps.
    pub fn from_network(z: Vec<u32>, y: Vec<u32>, net: &RoadNetwork, drop_penalty: f64) -> Result<Self> {
        let n = net.n();
        let cost = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { net.tau(k / n, k % n) as f64 })
            .collect();
        Self::new(z, y, cost, drop_penalty)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
}

#[derive(Clone, Debug)]
pub struct MatchingProgram {
    pub lp: LinearProgram,
    /// Row-major dispatch variables.
    pub dispatch: Vec<usize>,
    pub unserved: Vec<usize>,
}

/// `min c'd + p·1'u` s.t. `u_k + Σ_i d_ik - Σ_j d_kj >= y_k - z_k` and
/// `Σ_j d_kj <= z_k`.
pub fn build_matching_lp(inst: &MatchingInstance) -> MatchingProgram {
    let n = inst.n();
    let mut lp = LinearProgram::new();
    let dispatch: Vec<usize> = (0..n * n)
        .map(|k| lp.add_var(VarTag::Dispatch { i: k / n, j: k % n }, inst.cost[k], true))
        .collect();
    let unserved: Vec<usize> = (0..n)
        .map(|i| lp.add_var(VarTag::Unserved { i }, inst.drop_penalty, true))
        .collect();
    for k in 0..n {
        let mut coeffs = vec![(unserved[k], 1.0)];
        for other in 0..n {
            if other != k {
                coeffs.push((dispatch[other * n + k], 1.0));
                coeffs.push((dispatch[k * n + other], -1.0));
            }
        }
        lp.add_ge(coeffs, inst.y[k] as f64 - inst.z[k] as f64);
    }
    for i in 0..n {
        let coeffs = (0..n).map(|j| (dispatch[i * n + j], 1.0)).collect();
        lp.add_le(coeffs, inst.z[i] as f64);
    }
    MatchingProgram { lp, dispatch, unserved }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingSolution {
    /// `dispatch[i][j]` vehicles sent from `i` to pick up customers at `j`;
    /// the diagonal is always zero.
    pub dispatch: Vec<Vec<u32>>,
    pub unserved: Vec<u32>,
    pub objective: f64,
}

pub fn solve_matching(inst: &MatchingInstance) -> Result<MatchingSolution> {
    let n = inst.n();
    let program = build_matching_lp(inst);
    let sol = solve_lp(&program.lp)?;
    let values = certify_integral(&program.lp, &sol, INTEGRALITY_TOL)?;
    let dispatch = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0 } else { values[program.dispatch[i * n + j]] as u32 })
                .collect()
        })
        .collect();
    let unserved = program.unserved.iter().map(|&v| values[v] as u32).collect();
    Ok(MatchingSolution {
        dispatch,
        unserved,
        objective: sol.objective_value,
    })
}

/// Continuous rebalancing program with `w = 0`. Drop rows are emitted only
/// for positive sample values; for value 0 the row `u >= -x` is implied by
/// `u >= 0`.
#[derive(Clone, Debug)]
pub struct RebalanceProgram {
    pub lp: LinearProgram,
    pub x: Tensor3<usize>,
}

pub fn build_rebalance_lp(
    fleet: &FleetState,
    bundled: &BundledDemand,
    costs: &CostModel,
    net: &RoadNetwork,
) -> Result<RebalanceProgram> {
    check_dims(fleet, bundled, costs, net)?;
    let (n, h) = (fleet.n(), fleet.horizon());
    let k = bundled.k() as f64;
    let mut lp = LinearProgram::new();
    let x = add_flow_block(&mut lp, fleet, costs, net, false);
    for i in 0..n {
        for j in 0..n {
            for s in 0..h {
                for &(value, count) in bundled.values(i, j, s) {
                    if value == 0 {
                        continue;
                    }
                    let weight = costs.drop_cost.get(i, j, s) * count as f64 / k;
                    let u = lp.add_var(VarTag::Drop { i, j, t: s + 1, k: value as usize }, weight, false);
                    lp.add_ge(vec![(u, 1.0), (x.get(i, j, s), 1.0)], value as f64);
                }
            }
        }
    }
    Ok(RebalanceProgram { lp, x })
}

fn check_dims(fleet: &FleetState, bundled: &BundledDemand, costs: &CostModel, net: &RoadNetwork) -> Result<()> {
    let n = fleet.n();
    let h = fleet.horizon();
    if bundled.n() != n || net.n() != n || costs.n() != n || bundled.horizon() != h || costs.horizon() != h {
        return Err(Error::Shape(format!(
            "fleet is {n}x{h}, demand {}x{}, costs {}x{}, network {}",
            bundled.n(),
            bundled.horizon(),
            costs.n(),
            costs.horizon(),
            net.n()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RebalanceMethod {
    /// Dense simplex on [`build_rebalance_lp`], certified integral.
    Simplex,
    /// Successive shortest paths on the time-expanded graph.
    #[default]
    NetworkFlow,
}

#[derive(Clone, Debug)]
pub struct RebalanceSolution {
    /// Flows with `w = 0`.
    pub plan: Plan,
    pub objective: f64,
}

pub fn solve_rebalance(
    fleet: &FleetState,
    bundled: &BundledDemand,
    costs: &CostModel,
    net: &RoadNetwork,
    method: RebalanceMethod,
) -> Result<RebalanceSolution> {
    check_dims(fleet, bundled, costs, net)?;
    let plan = match method {
        RebalanceMethod::Simplex => {
            let program = build_rebalance_lp(fleet, bundled, costs, net)?;
            let sol = solve_lp(&program.lp)?;
            let values = certify_integral(&program.lp, &sol, INTEGRALITY_TOL)?;
            let mut plan = Plan::zeros(fleet.n(), fleet.horizon());
            for ((i, j, s), var) in program.x.iter_indexed() {
                plan.x.set(i, j, s, values[var] as u32);
            }
            plan
        }
        RebalanceMethod::NetworkFlow => rebalance_by_flow(fleet, bundled, costs, net)?,
    };
    if let Some(v) = check_flow_conservation(&plan, fleet, net)? {
        return Err(Error::Invariant(format!(
            "rebalance plan breaks flow conservation at station {} timestep {}",
            v.station, v.timestep
        )));
    }
    let objective = evaluate_bundled(&plan, bundled, costs)?;
    Ok(RebalanceSolution { plan, objective })
}

struct Arc {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
    /// Plan coordinate this arc carries flow for.
    coord: Option<(usize, usize, usize)>,
}

struct FlowGraph {
    adj: Vec<Vec<Arc>>,
}

impl FlowGraph {
    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64, coord: Option<(usize, usize, usize)>) {
        let rf = self.adj[to].len();
        let rt = self.adj[from].len();
        self.adj[from].push(Arc { to, rev: rf, cap, cost, coord });
        self.adj[to].push(Arc { to: from, rev: rt, cap: 0, cost: -cost, coord: None });
    }
}

/// Min-cost flow formulation: node `(i, s)` receives the supply `s_is`; each
/// move `(i, j, s)` is a bundle of parallel arcs with increasing unit cost
/// `c_x - (c_λ/K)·#{samples >= v_l}` between consecutive sample values, then
/// `c_x` beyond the largest value. Moves landing past the horizon go to the
/// sink.
fn rebalance_by_flow(fleet: &FleetState, bundled: &BundledDemand, costs: &CostModel, net: &RoadNetwork) -> Result<Plan> {
    let (n, h) = (fleet.n(), fleet.horizon());
    let node = |i: usize, s: usize| i * h + s;
    let source = n * h;
    let sink = source + 1;
    let mut g = FlowGraph {
        adj: (0..sink + 1).map(|_| Vec::new()).collect(),
    };
    let total = fleet.total_supply() as i64;
    let k = bundled.k() as f64;
    for i in 0..n {
        for s in 0..h {
            let supply = fleet.supply(i, s) as i64;
            if supply > 0 {
                g.add(source, node(i, s), supply, 0.0, None);
            }
            for j in 0..n {
                let head = if s + net.tau(i, j) < h { node(j, s + net.tau(i, j)) } else { sink };
                let cx = costs.move_cost.get(i, j, s);
                let per_sample = costs.drop_cost.get(i, j, s) / k;
                let values = bundled.values(i, j, s);
                let mut remaining = bundled.k() as i64;
                let mut prev = 0i64;
                for &(value, count) in values {
                    let value = value as i64;
                    if value > prev {
                        g.add(node(i, s), head, value - prev, cx - per_sample * remaining as f64, Some((i, j, s)));
                        prev = value;
                    }
                    remaining -= count as i64;
                }
                g.add(node(i, s), head, total, cx, Some((i, j, s)));
            }
        }
    }

    // Initial potentials: shortest distances on the DAG from a virtual root
    // attached to every node at cost 0.
    let mut pot = vec![0.0f64; sink + 1];
    for s in 0..h {
        for i in 0..n {
            let u = node(i, s);
            for arc in &g.adj[u] {
                if arc.cap > 0 && arc.to != source {
                    let cand = pot[u] + arc.cost;
                    if cand < pot[arc.to] {
                        pot[arc.to] = cand;
                    }
                }
            }
        }
    }

    let mut sent = 0i64;
    let mut dist = vec![f64::INFINITY; sink + 1];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; sink + 1];
    let mut done = vec![false; sink + 1];
    while sent < total {
        dist.fill(f64::INFINITY);
        prev.fill(None);
        done.fill(false);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), source)));
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            for (e, arc) in g.adj[u].iter().enumerate() {
                if arc.cap <= 0 || done[arc.to] {
                    continue;
                }
                let reduced = (arc.cost + pot[u] - pot[arc.to]).max(0.0);
                let cand = d + reduced;
                if cand < dist[arc.to] {
                    dist[arc.to] = cand;
                    prev[arc.to] = Some((u, e));
                    heap.push(Reverse((OrdF64(cand), arc.to)));
                }
            }
        }
        if !done[sink] {
            return Err(Error::Invariant("vehicle supply cannot reach the end of the horizon".into()));
        }
        let dt = dist[sink];
        for v in 0..=sink {
            if done[v] {
                pot[v] += dist[v] - dt;
            }
        }
        let mut push = total - sent;
        let mut v = sink;
        while let Some((u, e)) = prev[v] {
            push = push.min(g.adj[u][e].cap);
            v = u;
        }
        let mut v = sink;
        while let Some((u, e)) = prev[v] {
            g.adj[u][e].cap -= push;
            let (to, rev) = (g.adj[u][e].to, g.adj[u][e].rev);
            g.adj[to][rev].cap += push;
            v = u;
        }
        sent += push;
    }

    let mut plan = Plan::zeros(n, h);
    for arcs in &g.adj {
        for arc in arcs {
            if let Some((i, j, s)) = arc.coord {
                let flow = g.adj[arc.to][arc.rev].cap;
                *plan.x.get_mut(i, j, s) += flow as u32;
            }
        }
    }
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// One waiting customer assigned to a vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pickup {
    pub vehicle_from: usize,
    pub station: usize,
    pub dest: usize,
    /// 0-based step at which the customer boards.
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct DecomposedSolution {
    pub matching: MatchingSolution,
    pub pickups: Vec<Pickup>,
    /// Fleet left for rebalancing after the matching has used its vehicles.
    pub residual: FleetState,
    pub rebalance: RebalanceSolution,
}

impl DecomposedSolution {
    /// Joint plan with pickups encoded as `w`. Customers not picked up
    /// within the horizon are recorded as waiting at step 0 with no vehicle,
    /// so the joint objective charges them the drop penalty.
    pub fn combined_plan(&self, outstanding: &OutstandingDemand) -> Plan {
        let mut plan = self.rebalance.plan.clone();
        let h = plan.horizon();
        let n = plan.n();
        for i in 0..n {
            for j in 0..n {
                let d = self.matching.dispatch[i][j];
                if d > 0 {
                    *plan.x.get_mut(i, j, 0) += d;
                }
            }
        }
        let mut left = outstanding.clone();
        for p in self.pickups.iter().filter(|p| p.step < h) {
            *plan.x.get_mut(p.station, p.dest, p.step) += 1;
            *plan.w.get_mut(p.station, p.dest, p.step) += 1;
            left.set(p.station, p.dest, left.get(p.station, p.dest) - 1);
        }
        for i in 0..n {
            for j in 0..n {
                *plan.w.get_mut(i, j, 0) += left.get(i, j);
            }
        }
        plan
    }
}

/// Matching on current idle vehicles, then rebalancing of what is left.
///
/// A vehicle assigned to a waiting customer reappears in the residual fleet
/// at the customer's destination once the trip ends; surplus dispatched
/// vehicles reappear at the station they were sent to.
pub fn solve_decomposed(
    fleet: &FleetState,
    outstanding: &OutstandingDemand,
    bundled: &BundledDemand,
    costs: &CostModel,
    net: &RoadNetwork,
    method: RebalanceMethod,
) -> Result<DecomposedSolution> {
    check_dims(fleet, bundled, costs, net)?;
    let (n, h) = (fleet.n(), fleet.horizon());
    if outstanding.n() != n {
        return Err(Error::Shape("outstanding demand has the wrong station count".into()));
    }
    let drop_penalty = costs.drop_cost.as_slice().iter().cloned().fold(0.0, f64::max);
    let inst = MatchingInstance::from_network(fleet.idle().to_vec(), outstanding.by_station(), net, drop_penalty)?;
    let matching = solve_matching(&inst)?;

    let mut idle = fleet.idle().to_vec();
    let mut incoming: Vec<Vec<u32>> = fleet.incoming().to_vec();
    let arrive = |station: usize, step: usize, incoming: &mut Vec<Vec<u32>>| {
        if step < h {
            incoming[station][step] += 1;
        }
    };
    let mut pickups = Vec::new();
    for k in 0..n {
        let out: u32 = matching.dispatch[k].iter().sum();
        idle[k] -= out;
        let mut customers: Vec<usize> = (0..n)
            .flat_map(|d| std::iter::repeat_n(d, outstanding.get(k, d) as usize))
            .collect();
        customers.reverse();
        let local = idle[k].min(customers.len() as u32);
        for _ in 0..local {
            let dest = customers.pop().expect("counted above");
            idle[k] -= 1;
            pickups.push(Pickup { vehicle_from: k, station: k, dest, step: 0 });
            arrive(dest, net.tau(k, dest), &mut incoming);
        }
        let mut remote: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| std::iter::repeat_n((net.tau(i, k), i), matching.dispatch[i][k] as usize))
            .collect();
        remote.sort_unstable();
        for (tau, i) in remote {
            match customers.pop() {
                Some(dest) => {
                    pickups.push(Pickup { vehicle_from: i, station: k, dest, step: tau });
                    arrive(dest, tau + net.tau(k, dest), &mut incoming);
                }
                None => arrive(k, tau, &mut incoming),
            }
        }
    }
    let residual = FleetState::new(idle, incoming, fleet.fleet_size())?;
    let rebalance = solve_rebalance(&residual, bundled, costs, net, method)?;
    Ok(DecomposedSolution {
        matching,
        pickups,
        residual,
        rebalance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netflow::DemandSample;
    use crate::saa::bundle_samples;

    fn net2() -> RoadNetwork {
        RoadNetwork::uniform(2, 1, 300).unwrap()
    }

    #[test]
    fn one_vehicle_one_customer() {
        let inst = MatchingInstance::from_network(vec![1, 0], vec![0, 1], &net2(), 10.0).unwrap();
        let sol = solve_matching(&inst).unwrap();
        assert_eq!(sol.dispatch, vec![vec![0, 1], vec![0, 0]]);
        assert_eq!(sol.unserved, vec![0, 0]);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_customers_no_dispatch() {
        let inst = MatchingInstance::from_network(vec![3, 1], vec![0, 0], &net2(), 10.0).unwrap();
        let sol = solve_matching(&inst).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert!(sol.dispatch.iter().flatten().all(|&d| d == 0));
    }

    #[test]
    fn no_vehicles_forces_drop() {
        let inst = MatchingInstance::from_network(vec![0, 0], vec![1, 0], &net2(), 10.0).unwrap();
        let sol = solve_matching(&inst).unwrap();
        assert_eq!(sol.unserved, vec![1, 0]);
        assert!((sol.objective - 10.0).abs() < 1e-9);
    }

    #[test]
    fn capacity_limits_dispatch() {
        let inst = MatchingInstance::from_network(vec![1, 0, 0], vec![0, 2, 2], &RoadNetwork::uniform(3, 1, 60).unwrap(), 10.0).unwrap();
        let sol = solve_matching(&inst).unwrap();
        assert_eq!(sol.dispatch[0].iter().sum::<u32>(), 1);
        assert_eq!(sol.unserved.iter().sum::<u32>(), 3);
    }

    fn t2_bundle() -> BundledDemand {
        let mut s = DemandSample::zeros(2, 2);
        s.tensor_mut().set(0, 1, 0, 1);
        bundle_samples(&[s]).unwrap()
    }

    #[test]
    fn rebalance_methods_agree_on_single_trip() {
        let net = net2();
        let fleet = FleetState::idle_only(vec![2, 0], 2).unwrap();
        let costs = CostModel::scaled(&net, 2, 1.0, 1.0, 10.0).unwrap();
        let b = t2_bundle();
        for method in [RebalanceMethod::Simplex, RebalanceMethod::NetworkFlow] {
            let sol = solve_rebalance(&fleet, &b, &costs, &net, method).unwrap();
            assert!((sol.objective - 1.0).abs() < 1e-9, "{method:?}");
            assert_eq!(sol.plan.x.get(0, 1, 0), 1);
        }
    }

    #[test]
    fn zero_demand_rebalance_idles() {
        let net = net2();
        let fleet = FleetState::new(vec![1, 2], vec![vec![0, 1], vec![0, 0]], 4).unwrap();
        let costs = CostModel::defaults(&net, 2).unwrap();
        let b = BundledDemand::zeros(2, 2, 3);
        for method in [RebalanceMethod::Simplex, RebalanceMethod::NetworkFlow] {
            let sol = solve_rebalance(&fleet, &b, &costs, &net, method).unwrap();
            assert_eq!(sol.objective, 0.0);
            assert_eq!(sol.plan.x, Plan::all_idle(&fleet).x);
        }
    }

    #[test]
    fn matched_vehicle_reappears_at_destination() {
        let net = RoadNetwork::new(vec![vec![1, 2, 1], vec![2, 1, 1], vec![1, 1, 1]], 60).unwrap();
        let fleet = FleetState::idle_only(vec![1, 0, 0], 6).unwrap();
        let mut outstanding = OutstandingDemand::zeros(3);
        outstanding.set(1, 2, 1);
        let costs = CostModel::defaults(&net, 6).unwrap();
        let b = BundledDemand::zeros(3, 6, 1);
        let sol = solve_decomposed(&fleet, &outstanding, &b, &costs, &net, RebalanceMethod::NetworkFlow).unwrap();
        assert_eq!(sol.matching.dispatch[0][1], 1);
        assert_eq!(sol.pickups, vec![Pickup { vehicle_from: 0, station: 1, dest: 2, step: 2 }]);
        assert_eq!(sol.residual.idle(), &[0, 0, 0]);
        assert_eq!(sol.residual.incoming()[2][3], 1);
        let plan = sol.combined_plan(&outstanding);
        assert!(check_flow_conservation(&plan, &fleet, &net).unwrap().is_none());
    }
}
