//! Time-expanded fleet model.
//!
//! Stations are indexed `0..n`. Timesteps of a planning horizon are written
//! 1-based in the public checkers (`t = 1..=T`), while tensors are addressed by
//! a 0-based *step* (`step = t - 1`). A vehicle departing station `i` at step
//! `s` towards `j` reaches `j` at step `s + tau(i, j)`; departures whose
//! arrival falls past the horizon simply leave the conservation system.
//!
//! Idle vehicles persist through self-loop edges `(i, i)` with `tau = 1` and
//! zero movement cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `n × n × T` tensor addressed by `(origin, destination, step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<V> {
    n: usize,
    horizon: usize,
    data: Vec<V>,
}

impl<V: Copy + Default> Tensor3<V> {
    pub fn zeros(n: usize, horizon: usize) -> Self {
        Self::filled(n, horizon, V::default())
    }

    pub fn filled(n: usize, horizon: usize, value: V) -> Self {
        Tensor3 {
            n,
            horizon,
            data: vec![value; n * n * horizon],
        }
    }

    pub fn from_fn(n: usize, horizon: usize, mut f: impl FnMut(usize, usize, usize) -> V) -> Self {
        let mut data = Vec::with_capacity(n * n * horizon);
        for i in 0..n {
            for j in 0..n {
                for t in 0..horizon {
                    data.push(f(i, j, t));
                }
            }
        }
        Tensor3 { n, horizon, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, t: usize) -> usize {
        debug_assert!(i < self.n && j < self.n && t < self.horizon);
        (i * self.n + j) * self.horizon + t
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> V {
        self.data[self.index(i, j, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, t: usize, value: V) {
        let k = self.index(i, j, t);
        self.data[k] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize, t: usize) -> &mut V {
        let k = self.index(i, j, t);
        &mut self.data[k]
    }

    pub fn as_slice(&self) -> &[V] {
        &self.data
    }

    pub fn same_shape<W>(&self, other: &Tensor3<W>) -> bool {
        self.n == other.n && self.horizon == other.horizon
    }

    /// Iterates `((i, j, step), value)` in storage order.
    pub fn iter_indexed(&self) -> impl Iterator<Item = ((usize, usize, usize), V)> + '_ {
        let (n, h) = (self.n, self.horizon);
        self.data
            .iter()
            .enumerate()
            .map(move |(k, v)| ((k / (n * h), (k / h) % n, k % h), *v))
    }

    pub fn map<W: Copy + Default>(&self, f: impl Fn(V) -> W) -> Tensor3<W> {
        Tensor3 {
            n: self.n,
            horizon: self.horizon,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }
}

/// Fully connected station graph with integer travel times in timesteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    n: usize,
    tau: Vec<usize>,
    dt_s: u32,
}

impl RoadNetwork {
    pub fn new(tau: Vec<Vec<usize>>, dt_s: u32) -> Result<Self> {
        let n = tau.len();
        if n == 0 {
            return Err(Error::Argument("road network needs at least one station".into()));
        }
        if dt_s == 0 {
            return Err(Error::Argument("dt_s must be positive".into()));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in tau.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "travel-time row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v == 0 {
                    return Err(Error::Argument(format!("tau[{i}][{j}] must be at least 1")));
                }
                if i == j && v != 1 {
                    return Err(Error::Argument(format!(
                        "self-loop tau[{i}][{i}] must be 1, got {v}"
                    )));
                }
                flat.push(v);
            }
        }
        Ok(RoadNetwork { n, tau: flat, dt_s })
    }

    /// Every cross edge takes `cross_tau` steps.
    pub fn uniform(n: usize, cross_tau: usize, dt_s: u32) -> Result<Self> {
        let tau = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1 } else { cross_tau }).collect())
            .collect();
        Self::new(tau, dt_s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt_s(&self) -> u32 {
        self.dt_s
    }

    #[inline]
    pub fn tau(&self, i: usize, j: usize) -> usize {
        self.tau[i * self.n + j]
    }

    /// Travel time between stations in seconds.
    pub fn travel_s(&self, i: usize, j: usize) -> u64 {
        self.tau(i, j) as u64 * self.dt_s as u64
    }

    pub fn max_tau(&self) -> usize {
        self.tau.iter().copied().max().unwrap_or(1)
    }

    pub fn tau_matrix(&self) -> Vec<Vec<usize>> {
        self.tau.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Vehicles idle now (`a`) and vehicles that finish a task at each step (`v`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    idle: Vec<u32>,
    incoming: Vec<Vec<u32>>,
    fleet_size: u32,
}

impl FleetState {
    /// `incoming[i][s]` counts vehicles becoming available at station `i` at step `s`.
    pub fn new(idle: Vec<u32>, incoming: Vec<Vec<u32>>, fleet_size: u32) -> Result<Self> {
        let n = idle.len();
        if n == 0 {
            return Err(Error::Argument("fleet state needs at least one station".into()));
        }
        if incoming.len() != n {
            return Err(Error::Shape(format!(
                "incoming has {} stations, idle has {n}",
                incoming.len()
            )));
        }
        let horizon = incoming[0].len();
        if horizon == 0 {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        if incoming.iter().any(|row| row.len() != horizon) {
            return Err(Error::Shape("incoming rows have different horizons".into()));
        }
        let counted: u64 = idle.iter().map(|&a| a as u64).sum::<u64>()
            + incoming.iter().flatten().map(|&v| v as u64).sum::<u64>();
        if counted > fleet_size as u64 {
            return Err(Error::Argument(format!(
                "{counted} vehicles accounted for but fleet size is {fleet_size}"
            )));
        }
        Ok(FleetState {
            idle,
            incoming,
            fleet_size,
        })
    }

    /// Only idle vehicles, nothing in flight.
    pub fn idle_only(idle: Vec<u32>, horizon: usize) -> Result<Self> {
        let m = idle.iter().sum();
        let n = idle.len();
        Self::new(idle, vec![vec![0; horizon]; n], m)
    }

    pub fn n(&self) -> usize {
        self.idle.len()
    }

    pub fn horizon(&self) -> usize {
        self.incoming[0].len()
    }

    pub fn fleet_size(&self) -> u32 {
        self.fleet_size
    }

    pub fn idle(&self) -> &[u32] {
        &self.idle
    }

    pub fn incoming(&self) -> &[Vec<u32>] {
        &self.incoming
    }

    /// `s_i` at 0-based step: `a_i + v_i0` at step 0, `v_is` afterwards.
    #[inline]
    pub fn supply(&self, i: usize, step: usize) -> u32 {
        let v = self.incoming[i][step];
        if step == 0 {
            self.idle[i] + v
        } else {
            v
        }
    }

    /// Availability vector at 1-based timestep `t`.
    pub fn availability(&self, t: usize) -> Result<Vec<u32>> {
        availability(self, t)
    }

    pub fn total_supply(&self) -> u64 {
        (0..self.n())
            .flat_map(|i| (0..self.horizon()).map(move |s| (i, s)))
            .map(|(i, s)| self.supply(i, s) as u64)
            .sum()
    }
}

/// Available vehicles per station at 1-based timestep `t`.
pub fn availability(fleet: &FleetState, t: usize) -> Result<Vec<u32>> {
    if t == 0 || t > fleet.horizon() {
        return Err(Error::Range(format!(
            "timestep {t} outside horizon 1..={}",
            fleet.horizon()
        )));
    }
    Ok((0..fleet.n()).map(|i| fleet.supply(i, t - 1)).collect())
}

/// Customers already waiting, by origin and destination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutstandingDemand {
    n: usize,
    counts: Vec<u32>,
}

impl OutstandingDemand {
    pub fn zeros(n: usize) -> Self {
        OutstandingDemand {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn new(matrix: Vec<Vec<u32>>) -> Result<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("outstanding demand must be square".into()));
        }
        Ok(OutstandingDemand {
            n,
            counts: matrix.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u32) {
        self.counts[i * self.n + j] = v;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Waiting customers aggregated per origin station.
    pub fn by_station(&self) -> Vec<u32> {
        self.counts.chunks(self.n).map(|r| r.iter().sum()).collect()
    }
}

/// One realisation of future trip requests over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSample(Tensor3<u32>);

impl DemandSample {
    pub fn new(lam: Tensor3<u32>) -> Self {
        DemandSample(lam)
    }

    pub fn zeros(n: usize, horizon: usize) -> Self {
        DemandSample(Tensor3::zeros(n, horizon))
    }

    pub fn tensor(&self) -> &Tensor3<u32> {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor3<u32> {
        &mut self.0
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn horizon(&self) -> usize {
        self.0.horizon()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> u32 {
        self.0.get(i, j, t)
    }

    pub fn total(&self) -> u64 {
        self.0.as_slice().iter().map(|&v| v as u64).sum()
    }
}

/// Vehicle flows `x` and outstanding-customer service schedule `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub x: Tensor3<u32>,
    pub w: Tensor3<u32>,
    /// Absolute index of the timestep the horizon starts at.
    pub origin_step: u64,
}

impl Plan {
    pub fn zeros(n: usize, horizon: usize) -> Self {
        Plan {
            x: Tensor3::zeros(n, horizon),
            w: Tensor3::zeros(n, horizon),
            origin_step: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn horizon(&self) -> usize {
        self.x.horizon()
    }

    /// Keeps every available vehicle parked where it becomes available.
    pub fn all_idle(fleet: &FleetState) -> Self {
        let (n, h) = (fleet.n(), fleet.horizon());
        let mut plan = Plan::zeros(n, h);
        for i in 0..n {
            let mut parked = 0;
            for s in 0..h {
                parked += fleet.supply(i, s);
                plan.x.set(i, i, s, parked);
            }
        }
        plan
    }
}

/// Costs of movement, waiting and dropped demand per `(i, j, step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub move_cost: Tensor3<f64>,
    pub wait_cost: Tensor3<f64>,
    pub drop_cost: Tensor3<f64>,
}

impl CostModel {
    pub fn new(move_cost: Tensor3<f64>, wait_cost: Tensor3<f64>, drop_cost: Tensor3<f64>) -> Result<Self> {
        if !move_cost.same_shape(&wait_cost) || !move_cost.same_shape(&drop_cost) {
            return Err(Error::Shape("cost tensors differ in shape".into()));
        }
        for tensor in [&move_cost, &wait_cost, &drop_cost] {
            if tensor.as_slice().iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::Argument("costs must be finite and non-negative".into()));
            }
        }
        let (n, h) = (move_cost.n(), move_cost.horizon());
        for i in 0..n {
            for s in 0..h {
                if move_cost.get(i, i, s) != 0.0 {
                    return Err(Error::Argument(format!("self-loop cost at station {i} must be 0")));
                }
            }
            for j in 0..n {
                for s in 1..h {
                    if wait_cost.get(i, j, s) < wait_cost.get(i, j, s - 1) {
                        return Err(Error::Argument(format!(
                            "waiting cost for ({i},{j}) decreases in time"
                        )));
                    }
                }
            }
        }
        Ok(CostModel {
            move_cost,
            wait_cost,
            drop_cost,
        })
    }

    /// `c_x = move_scale * tau_ij` off the diagonal, `c_w = wait_scale * t`
    /// with `t` the 1-based timestep, and a flat drop penalty.
    pub fn scaled(net: &RoadNetwork, horizon: usize, move_scale: f64, wait_scale: f64, drop: f64) -> Result<Self> {
        let n = net.n();
        let move_cost = Tensor3::from_fn(n, horizon, |i, j, _| {
            if i == j {
                0.0
            } else {
                move_scale * net.tau(i, j) as f64
            }
        });
        let wait_cost = Tensor3::from_fn(n, horizon, |_, _, s| wait_scale * (s + 1) as f64);
        let drop_cost = Tensor3::filled(n, horizon, drop);
        Self::new(move_cost, wait_cost, drop_cost)
    }

    /// Travel-time movement cost, linear waiting cost and a drop penalty of
    /// `100 * max tau`.
    pub fn defaults(net: &RoadNetwork, horizon: usize) -> Result<Self> {
        Self::scaled(net, horizon, 1.0, 1.0, default_drop_penalty(net))
    }

    pub fn n(&self) -> usize {
        self.move_cost.n()
    }

    pub fn horizon(&self) -> usize {
        self.move_cost.horizon()
    }
}

pub fn default_drop_penalty(net: &RoadNetwork) -> f64 {
    100.0 * net.max_tau() as f64
}

/// Location of the first broken conservation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub station: usize,
    /// 1-based timestep.
    pub timestep: usize,
}

/// Checks `sum_j x_ijt - sum_j x_ji(t - tau_ji) = s_it` for every station and
/// timestep. Returns the first violation found, scanning timesteps in order.
pub fn check_flow_conservation(plan: &Plan, fleet: &FleetState, net: &RoadNetwork) -> Result<Option<Violation>> {
    let (n, h) = (plan.n(), plan.horizon());
    if fleet.n() != n || net.n() != n || fleet.horizon() != h || !plan.x.same_shape(&plan.w) {
        return Err(Error::Shape(format!(
            "plan is {n}x{n}x{h}, fleet is {}x{}, network has {} stations",
            fleet.n(),
            fleet.horizon(),
            net.n()
        )));
    }
    for s in 0..h {
        for i in 0..n {
            let out: i64 = (0..n).map(|j| plan.x.get(i, j, s) as i64).sum();
            let inflow: i64 = (0..n)
                .filter_map(|j| {
                    let tau = net.tau(j, i);
                    (s >= tau).then(|| plan.x.get(j, i, s - tau) as i64)
                })
                .sum();
            if out - inflow != fleet.supply(i, s) as i64 {
                return Ok(Some(Violation {
                    station: i,
                    timestep: s + 1,
                }));
            }
        }
    }
    Ok(None)
}

/// Checks `sum_t w_ijt = lambda_ij0` over `t = 1..=T`.
pub fn check_waiter_conservation(plan: &Plan, outstanding: &OutstandingDemand) -> Result<bool> {
    let n = plan.n();
    if outstanding.n() != n || !plan.x.same_shape(&plan.w) {
        return Err(Error::Shape(format!(
            "plan has {n} stations, outstanding demand has {}",
            outstanding.n()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let served: u64 = (0..plan.horizon()).map(|s| plan.w.get(i, j, s) as u64).sum();
            if served != outstanding.get(i, j) as u64 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
