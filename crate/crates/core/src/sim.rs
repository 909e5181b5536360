//! Discrete-event fleet simulator and the controllers it drives.
//!
//! Time advances in ticks. Within a tick starting at clock `C`:
//!
//! 1. vehicles whose trip ends at or before `C` become idle;
//! 2. waiting customers are served first-come first-served by idle vehicles
//!    at their station;
//! 3. at epoch boundaries unused tasks are dropped and the controller is
//!    asked for new ones;
//! 4. requests in `[C, C + tick)` arrive in trace order; a request finding an
//!    idle vehicle at its origin is assigned at its request time, otherwise
//!    it joins the station queue;
//! 5. idle vehicles take pending tasks, dispatches before rebalancing.
//!
//! After the configured duration no new requests arrive; epochs and ticks
//! continue until the queues empty or the drain limit passes.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomposed::{solve_decomposed, RebalanceMethod};
use crate::demand::{AnalogMeanModel, AnalogModel, DemandTrace, ForecastContext, GenerativeModel, PerfectModel};
use crate::error::{Error, Result};
use crate::netflow::{CostModel, DemandSample, FleetState, OutstandingDemand, Plan, RoadNetwork, Tensor3};
use crate::saa::{bundle_samples, solve_saa, BundledDemand};
use crate::split_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Empty vehicle sent to pick up customers waiting at the destination.
    Dispatch,
    /// Empty vehicle repositioned for anticipated demand.
    Rebalance,
}

/// Send `count` idle vehicles from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub from: usize,
    pub to: usize,
    pub count: u32,
    pub kind: TaskKind,
}

/// What a controller sees at an epoch boundary.
#[derive(Clone, Debug)]
pub struct Snapshot<'a> {
    pub epoch: usize,
    pub clock_s: u64,
    pub net: &'a RoadNetwork,
    pub fleet: FleetState,
    pub outstanding: OutstandingDemand,
    /// Realized demand over the lookback window, binned per epoch.
    pub history: DemandSample,
    /// Sampling seed for this epoch.
    pub seed: u64,
}

pub trait Controller {
    fn name(&self) -> &str;
    fn act(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Task>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub net: RoadNetwork,
    pub initial_vehicles: Vec<u32>,
    pub tick_s: u32,
    pub controller_period_s: u32,
    pub duration_s: u64,
    pub lookback_s: u64,
    pub drain_limit_s: u64,
}

impl SimConfig {
    /// Six-second ticks, five-minute epochs, four hours of lookback and one
    /// hour of draining.
    pub fn new(net: RoadNetwork, initial_vehicles: Vec<u32>, duration_s: u64) -> Self {
        SimConfig {
            net,
            initial_vehicles,
            tick_s: 6,
            controller_period_s: 300,
            duration_s,
            lookback_s: 4 * 3600,
            drain_limit_s: 3600,
        }
    }

    pub fn fleet_size(&self) -> u32 {
        self.initial_vehicles.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_vehicles.len() != self.net.n() {
            return Err(Error::Config(format!(
                "{} initial vehicle counts for {} stations",
                self.initial_vehicles.len(),
                self.net.n()
            )));
        }
        if self.tick_s == 0 || self.controller_period_s == 0 || !self.controller_period_s.is_multiple_of(self.tick_s) {
            return Err(Error::Config(format!(
                "controller period {}s must be a positive multiple of the {}s tick",
                self.controller_period_s, self.tick_s
            )));
        }
        if self.net.dt_s() != self.controller_period_s {
            return Err(Error::Config(format!(
                "controller period {}s differs from the network step of {}s",
                self.controller_period_s,
                self.net.dt_s()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedTrip {
    pub request_s: u64,
    pub assigned_s: u64,
    pub origin: usize,
    pub dest: usize,
}

impl ServedTrip {
    pub fn wait_s(&self) -> u64 {
        self.assigned_s - self.request_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clock_s: u64,
    pub waiting_customers: u64,
    pub reb_tasks_issued: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub controller: String,
    pub seed: u64,
    pub mean_wait_s: f64,
    pub median_wait_s: f64,
    pub p99_wait_s: f64,
    /// Empty-vehicle trips actually driven, dispatches included.
    pub reb_tasks: u64,
    pub served_count: u64,
    pub unserved_count: u64,
    pub served: Vec<ServedTrip>,
    pub epochs: Vec<EpochRecord>,
}

/// Mean, median (average of the middle pair for even counts) and 99th
/// percentile (nearest rank) of wait times; zeros when empty.
pub fn wait_summary(waits: &[u64]) -> (f64, f64, f64) {
    if waits.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sorted = waits.to_vec();
    sorted.sort_unstable();
    let len = sorted.len();
    let mean = sorted.iter().sum::<u64>() as f64 / len as f64;
    let median = if len % 2 == 1 {
        sorted[len / 2] as f64
    } else {
        (sorted[len / 2 - 1] + sorted[len / 2]) as f64 / 2.0
    };
    let rank = ((0.99 * len as f64).ceil() as usize).clamp(1, len);
    (mean, median, sorted[rank - 1] as f64)
}

impl SimStats {
    pub fn waits(&self) -> Vec<u64> {
        self.served.iter().map(ServedTrip::wait_s).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_timeseries(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for e in &self.epochs {
            wtr.serialize(e)?;
        }
        if self.epochs.is_empty() {
            wtr.write_record(["epoch", "clock_s", "waiting_customers", "reb_tasks_issued"])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_files(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(json_path, self.to_json()?)?;
        self.write_timeseries(std::io::BufWriter::new(std::fs::File::create(csv_path)?))
    }
}

#[derive(Clone, Copy, Debug)]
struct Waiting {
    request_s: u64,
    dest: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Trip {
    arrive_s: u64,
    vehicle: usize,
    dest: usize,
}

/// Live simulation state.
pub struct SimulationState<'a> {
    cfg: &'a SimConfig,
    pub clock_s: u64,
    /// Idle vehicle ids per station, in the order they became idle.
    idle: Vec<VecDeque<usize>>,
    in_flight: BinaryHeap<Reverse<Trip>>,
    queues: Vec<VecDeque<Waiting>>,
    dispatch_tasks: Vec<VecDeque<usize>>,
    rebalance_tasks: Vec<VecDeque<usize>>,
    served: Vec<ServedTrip>,
    reb_executed: u64,
    fleet_size: usize,
}

impl<'a> SimulationState<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.net.n();
        let mut idle: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
        let mut id = 0;
        for (i, &count) in cfg.initial_vehicles.iter().enumerate() {
            for _ in 0..count {
                idle[i].push_back(id);
                id += 1;
            }
        }
        Ok(SimulationState {
            cfg,
            clock_s: 0,
            idle,
            in_flight: BinaryHeap::new(),
            queues: vec![VecDeque::new(); n],
            dispatch_tasks: vec![VecDeque::new(); n],
            rebalance_tasks: vec![VecDeque::new(); n],
            served: Vec::new(),
            reb_executed: 0,
            fleet_size: id,
        })
    }

    pub fn idle_counts(&self) -> Vec<u32> {
        self.idle.iter().map(|q| q.len() as u32).collect()
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    pub fn waiting_count(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    pub fn served(&self) -> &[ServedTrip] {
        &self.served
    }

    pub fn pending_task_count(&self) -> usize {
        self.dispatch_tasks.iter().chain(&self.rebalance_tasks).map(VecDeque::len).sum()
    }

    fn depart(&mut self, vehicle: usize, from: usize, to: usize, at_s: u64) {
        let arrive_s = at_s + self.cfg.net.travel_s(from, to);
        self.in_flight.push(Reverse(Trip { arrive_s, vehicle, dest: to }));
    }

    fn assign(&mut self, origin: usize, request_s: u64, dest: usize, at_s: u64) {
        let vehicle = self.idle[origin].pop_front().expect("caller checked for an idle vehicle");
        self.served.push(ServedTrip {
            request_s,
            assigned_s: at_s,
            origin,
            dest,
        });
        self.depart(vehicle, origin, dest, at_s);
    }

    /// Trip completions and queue service at the current clock.
    pub fn settle(&mut self) {
        while let Some(Reverse(trip)) = self.in_flight.peek().copied() {
            if trip.arrive_s > self.clock_s {
                break;
            }
            self.in_flight.pop();
            self.idle[trip.dest].push_back(trip.vehicle);
        }
        for i in 0..self.idle.len() {
            while !self.idle[i].is_empty() {
                let Some(c) = self.queues[i].pop_front() else { break };
                self.assign(i, c.request_s, c.dest, self.clock_s);
            }
        }
    }

    /// A new request: served on the spot by an idle vehicle, else queued.
    pub fn arrive(&mut self, request_s: u64, origin: usize, dest: usize) {
        if self.idle[origin].is_empty() {
            self.queues[origin].push_back(Waiting { request_s, dest });
        } else {
            self.assign(origin, request_s, dest, request_s);
        }
    }

    /// Idle vehicles take pending tasks, dispatches first.
    pub fn run_tasks(&mut self) {
        for i in 0..self.idle.len() {
            for kind in [TaskKind::Dispatch, TaskKind::Rebalance] {
                loop {
                    if self.idle[i].is_empty() {
                        break;
                    }
                    let tasks = match kind {
                        TaskKind::Dispatch => &mut self.dispatch_tasks[i],
                        TaskKind::Rebalance => &mut self.rebalance_tasks[i],
                    };
                    let Some(to) = tasks.pop_front() else { break };
                    let vehicle = self.idle[i].pop_front().expect("checked non-empty");
                    self.reb_executed += 1;
                    self.depart(vehicle, i, to, self.clock_s);
                }
            }
        }
    }

    pub fn check_conservation(&self) -> Result<()> {
        let idle: usize = self.idle.iter().map(VecDeque::len).sum();
        if idle + self.in_flight.len() != self.fleet_size {
            return Err(Error::Invariant(format!(
                "at t={}s: {idle} idle + {} moving != fleet of {}",
                self.clock_s,
                self.in_flight.len(),
                self.fleet_size
            )));
        }
        Ok(())
    }

    /// One tick without a controller call: settle, take the trace requests
    /// in `[C, C + tick)`, run tasks, check conservation, advance the clock.
    pub fn step(&mut self, trace: &DemandTrace) -> Result<()> {
        self.settle();
        let tick = self.cfg.tick_s as u64;
        for r in trace.window(self.clock_s, self.clock_s + tick) {
            self.arrive(r.request_s, r.origin, r.dest);
        }
        self.run_tasks();
        self.check_conservation()?;
        self.clock_s += tick;
        Ok(())
    }

    /// Drops unused tasks, asks the controller for new ones and registers
    /// them. Any controller failure becomes an epoch error.
    pub fn run_epoch(
        &mut self,
        controller: &mut dyn Controller,
        epoch: usize,
        trace: &DemandTrace,
        horizon: usize,
        seed: u64,
    ) -> Result<EpochRecord> {
        self.clear_tasks();
        let snap = self.snapshot(epoch, trace, horizon, seed)?;
        let tasks = controller.act(&snap).map_err(|e| match e {
            e @ Error::Epoch { .. } => e,
            other => self.epoch_error(&snap, format!("{} failed: {other}", controller.name())),
        })?;
        let issued = self.register_tasks(&snap, &tasks)?;
        Ok(EpochRecord {
            epoch,
            clock_s: snap.clock_s,
            waiting_customers: snap.outstanding.total(),
            reb_tasks_issued: issued,
        })
    }

    /// Fleet, waiting customers and lookback demand as a controller sees them.
    pub fn snapshot(&self, epoch: usize, trace: &DemandTrace, horizon: usize, seed: u64) -> Result<Snapshot<'a>> {
        let cfg = self.cfg;
        let n = cfg.net.n();
        let dt = cfg.controller_period_s as u64;
        let mut incoming = vec![vec![0u32; horizon]; n];
        for Reverse(trip) in &self.in_flight {
            let step = ((trip.arrive_s - self.clock_s) / dt) as usize;
            if step < horizon {
                incoming[trip.dest][step] += 1;
            }
        }
        let fleet = FleetState::new(self.idle_counts(), incoming, self.fleet_size as u32)?;
        let mut outstanding = OutstandingDemand::zeros(n);
        for (i, q) in self.queues.iter().enumerate() {
            for c in q {
                outstanding.set(i, c.dest, outstanding.get(i, c.dest) + 1);
            }
        }
        let steps = (cfg.lookback_s / dt) as usize;
        let start = self.clock_s.saturating_sub(steps as u64 * dt);
        let mut lam = Tensor3::zeros(n, steps);
        for r in trace.window(start, self.clock_s) {
            let s = ((r.request_s - start) / dt) as usize;
            if s < steps {
                *lam.get_mut(r.origin, r.dest, s) += 1;
            }
        }
        Ok(Snapshot {
            epoch,
            clock_s: self.clock_s,
            net: &cfg.net,
            fleet,
            outstanding,
            history: DemandSample::new(lam),
            seed: split_seed(seed, epoch as u64),
        })
    }

    /// Replaces the pending tasks after checking that every station has the
    /// vehicles they require.
    pub fn register_tasks(&mut self, snap: &Snapshot<'_>, tasks: &[Task]) -> Result<u64> {
        let n = self.cfg.net.n();
        let mut from = vec![0u64; n];
        for t in tasks {
            if t.from >= n || t.to >= n {
                return Err(self.epoch_error(snap, format!("task {t:?} references an unknown station")));
            }
            from[t.from] += t.count as u64;
        }
        for i in 0..n {
            let available = snap.fleet.supply(i, 0) as u64;
            if from[i] > available {
                return Err(self.epoch_error(
                    snap,
                    format!("{} tasks leave station {i} but only {available} vehicles are available", from[i]),
                ));
            }
        }
        let mut issued = 0;
        for t in tasks.iter().filter(|t| t.from != t.to) {
            let queue = match t.kind {
                TaskKind::Dispatch => &mut self.dispatch_tasks[t.from],
                TaskKind::Rebalance => &mut self.rebalance_tasks[t.from],
            };
            queue.extend(std::iter::repeat_n(t.to, t.count as usize));
            issued += t.count as u64;
        }
        Ok(issued)
    }

    fn epoch_error(&self, snap: &Snapshot<'_>, message: String) -> Error {
        Error::Epoch {
            epoch: snap.epoch,
            clock_s: snap.clock_s,
            message,
        }
    }

    pub fn clear_tasks(&mut self) {
        self.dispatch_tasks.iter_mut().chain(&mut self.rebalance_tasks).for_each(VecDeque::clear);
    }
}

/// Runs one scenario. Requests at or after `duration_s` are ignored.
pub fn run_scenario(
    cfg: &SimConfig,
    trace: &DemandTrace,
    controller: &mut dyn Controller,
    horizon: usize,
    seed: u64,
) -> Result<SimStats> {
    cfg.validate()?;
    trace.check_stations(cfg.net.n())?;
    let mut state = SimulationState::new(cfg)?;
    let observed = DemandTrace::new(trace.window(0, cfg.duration_s).to_vec())?;
    let mut epochs = Vec::new();
    let period = cfg.controller_period_s as u64;
    loop {
        let clock = state.clock_s;
        let running = clock < cfg.duration_s;
        if !running && (state.waiting_count() == 0 || clock >= cfg.duration_s + cfg.drain_limit_s) {
            break;
        }
        if clock % period == 0 {
            state.settle();
            epochs.push(state.run_epoch(controller, epochs.len(), trace, horizon, seed)?);
        }
        if running {
            state.step(&observed)?;
        } else {
            state.step(&DemandTrace::default())?;
        }
    }
    let waits: Vec<u64> = state.served.iter().map(ServedTrip::wait_s).collect();
    let (mean, median, p99) = wait_summary(&waits);
    Ok(SimStats {
        controller: controller.name().to_string(),
        seed,
        mean_wait_s: mean,
        median_wait_s: median,
        p99_wait_s: p99,
        reb_tasks: state.reb_executed,
        served_count: state.served.len() as u64,
        unserved_count: state.waiting_count(),
        served: state.served,
        epochs,
    })
}

/// Uniform split of the idle fleet; transport of surpluses to deficits by
/// the matching LP with a prohibitive drop penalty.
#[derive(Clone, Debug, Default)]
pub struct ReactiveController;

pub const REACTIVE_DROP_PENALTY: f64 = 1e6;

/// Target counts: `floor(total / n)` everywhere, one extra at the lowest
/// indices until the remainder is used.
pub fn uniform_targets(total: u32, n: usize) -> Vec<u32> {
    let base = total / n as u32;
    let extra = (total % n as u32) as usize;
    (0..n).map(|i| base + u32::from(i < extra)).collect()
}

pub fn reactive_tasks(idle: &[u32], net: &RoadNetwork) -> Result<Vec<Task>> {
    let n = idle.len();
    let targets = uniform_targets(idle.iter().sum(), n);
    let z: Vec<u32> = idle.iter().zip(&targets).map(|(&a, &t)| a.saturating_sub(t)).collect();
    let y: Vec<u32> = idle.iter().zip(&targets).map(|(&a, &t)| t.saturating_sub(a)).collect();
    if y.iter().all(|&d| d == 0) {
        return Ok(Vec::new());
    }
    let inst = crate::decomposed::MatchingInstance::from_network(z, y, net, REACTIVE_DROP_PENALTY)?;
    let sol = crate::decomposed::solve_matching(&inst)?;
    Ok(tasks_from_matrix(&sol.dispatch, TaskKind::Rebalance))
}

fn tasks_from_matrix(m: &[Vec<u32>], kind: TaskKind) -> Vec<Task> {
    let mut out = Vec::new();
    for (from, row) in m.iter().enumerate() {
        for (to, &count) in row.iter().enumerate() {
            if from != to && count > 0 {
                out.push(Task { from, to, count, kind });
            }
        }
    }
    out
}

impl Controller for ReactiveController {
    fn name(&self) -> &str {
        "reactive"
    }

    fn act(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Task>> {
        reactive_tasks(snap.fleet.idle(), snap.net)
    }
}

/// Which optimization the MPC controller solves each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Matching for waiting customers, then the integral rebalancing LP.
    #[default]
    Decomposed,
    /// The joint surrogate MILP.
    Joint,
}

/// Receding-horizon controller: sample, optimize, issue the first step.
pub struct MpcController {
    name: String,
    mode: SolveMode,
    method: RebalanceMethod,
    model: Box<dyn GenerativeModel>,
    k: usize,
    horizon: usize,
    costs: CostModel,
}

impl MpcController {
    pub fn new(
        name: impl Into<String>,
        mode: SolveMode,
        model: Box<dyn GenerativeModel>,
        k: usize,
        horizon: usize,
        costs: CostModel,
    ) -> Result<Self> {
        if k == 0 || horizon == 0 {
            return Err(Error::Argument("MPC needs K >= 1 and a horizon of at least one step".into()));
        }
        if costs.horizon() != horizon {
            return Err(Error::Shape(format!("costs cover {} steps, horizon is {horizon}", costs.horizon())));
        }
        Ok(MpcController {
            name: name.into(),
            mode,
            method: RebalanceMethod::NetworkFlow,
            model,
            k,
            horizon,
            costs,
        })
    }

    pub fn with_method(mut self, method: RebalanceMethod) -> Self {
        self.method = method;
        self
    }
}

/// Vehicles the first plan step moves from `i` to `j` empty in every
/// sample: `(x - w - max_k λᵏ)₊`. Vehicles that might carry a new customer
/// stay put and serve the station queue.
pub fn first_step_tasks(plan: &Plan, bundled: &BundledDemand) -> Vec<Task> {
    let n = plan.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let free = plan.x.get(i, j, 0).saturating_sub(plan.w.get(i, j, 0));
            let busiest = bundled.values(i, j, 0).iter().map(|&(v, _)| v).max().unwrap_or(0);
            let empty = free.saturating_sub(busiest);
            if empty > 0 {
                out.push(Task {
                    from: i,
                    to: j,
                    count: empty,
                    kind: TaskKind::Rebalance,
                });
            }
        }
    }
    out
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Task>> {
        let n = snap.net.n();
        let ctx = ForecastContext::new(n, snap.clock_s, snap.net.dt_s()).with_history(&snap.history);
        let samples = self.model.sample(&ctx, self.horizon, self.k, snap.seed)?;
        let bundled = bundle_samples(&samples)?;
        let fleet = if snap.fleet.horizon() == self.horizon {
            snap.fleet.clone()
        } else {
            return Err(Error::Shape(format!(
                "snapshot covers {} steps, controller plans {}",
                snap.fleet.horizon(),
                self.horizon
            )));
        };
        match self.mode {
            SolveMode::Joint => {
                let sol = solve_saa(&fleet, &snap.outstanding, &bundled, &self.costs, snap.net)?;
                Ok(first_step_tasks(&sol.plan, &bundled))
            }
            SolveMode::Decomposed => {
                let sol = solve_decomposed(&fleet, &snap.outstanding, &bundled, &self.costs, snap.net, self.method)?;
                let mut tasks = tasks_from_matrix(&sol.matching.dispatch, TaskKind::Dispatch);
                tasks.extend(first_step_tasks(&sol.rebalance.plan, &bundled));
                Ok(tasks)
            }
        }
    }
}

/// Everything needed to build one of the named controllers.
#[derive(Clone, Debug)]
pub struct ControllerSetup {
    pub horizon: usize,
    pub k: usize,
    pub costs: CostModel,
    pub mode: SolveMode,
    pub method: RebalanceMethod,
    /// Past days used by forecasting controllers.
    pub history: Vec<DemandTrace>,
    /// How many of the closest historical days forecasts draw from.
    pub analog_days: usize,
    /// How many recent epochs of realized demand select those days.
    pub analog_steps: usize,
    /// The trace being simulated, for the clairvoyant controller.
    pub truth: DemandTrace,
    pub duration_s: u64,
}

pub const DEFAULT_ANALOG_DAYS: usize = 6;
pub const DEFAULT_ANALOG_STEPS: usize = 2;

pub const CONTROLLER_NAMES: [&str; 4] = ["reactive", "mpc-point", "mpc-saa", "mpc-perfect"];

/// `reactive`, `mpc-point` (rounded mean of the analog days, one sample),
/// `mpc-saa` (analog days resampled, `K` samples) or `mpc-perfect` (the
/// simulated trace itself, one sample).
pub fn build_controller(name: &str, setup: &ControllerSetup) -> Result<Box<dyn Controller>> {
    let need_history = || {
        if setup.history.is_empty() {
            Err(Error::Config(format!("controller {name} needs historical demand traces")))
        } else {
            Ok(setup.history.clone())
        }
    };
    let mpc = |model: Box<dyn GenerativeModel>, k: usize| -> Result<Box<dyn Controller>> {
        let c = MpcController::new(name, setup.mode, model, k, setup.horizon, setup.costs.clone())?.with_method(setup.method);
        Ok(Box::new(c))
    };
    match name {
        "reactive" => Ok(Box::new(ReactiveController)),
        "mpc-point" => {
            let analog = AnalogModel::new(need_history()?, setup.analog_days, setup.analog_steps)?;
            mpc(Box::new(AnalogMeanModel(analog)), 1)
        }
        "mpc-saa" => mpc(
            Box::new(AnalogModel::new(need_history()?, setup.analog_days, setup.analog_steps)?),
            setup.k,
        ),
        "mpc-perfect" => {
            let observed = DemandTrace::new(setup.truth.window(0, setup.duration_s).to_vec())?;
            // Nothing arrives after the simulated duration, so the future is
            // known indefinitely.
            mpc(Box::new(PerfectModel::new(observed.with_span(u64::MAX / 4)?)), 1)
        }
        other => Err(Error::Config(format!(
            "unknown controller {other:?}; expected one of {}",
            CONTROLLER_NAMES.join(", ")
        ))),
    }
}
