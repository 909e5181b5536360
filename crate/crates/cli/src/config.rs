use std::path::{Path, PathBuf};

use amod_core::decomposed::RebalanceMethod;
use amod_core::demand::DemandTrace;
use amod_core::netflow::{default_drop_penalty, CostModel, RoadNetwork};
use amod_core::sim::{ControllerSetup, SimConfig, SolveMode, DEFAULT_ANALOG_DAYS, DEFAULT_ANALOG_STEPS};
use serde::Deserialize;

/// Cost coefficients: `c_x = c_x_scale * tau`, `c_w = c_wait_scale * t`, and
/// a flat drop penalty (default `100 * max tau`).
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsConfig {
    pub c_x_scale: f64,
    pub c_wait_scale: f64,
    #[serde(default)]
    pub c_drop: Option<f64>,
}

/// A scenario file. Paths are resolved relative to the file itself.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub dt_s: u32,
    /// Travel times in whole steps.
    pub travel_time: Vec<Vec<usize>>,
    pub fleet_size: u32,
    pub initial_vehicles: Vec<u32>,
    pub demand_trace: PathBuf,
    pub costs: CostsConfig,
    #[serde(rename = "horizon_T")]
    pub horizon: usize,
    pub controller_period_s: u32,
    pub tick_s: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    /// Simulated seconds; defaults to the span of the demand trace.
    #[serde(default)]
    pub duration_s: Option<u64>,
    #[serde(default)]
    pub lookback_s: Option<u64>,
    #[serde(default)]
    pub drain_limit_s: Option<u64>,
    /// Past days for the forecasting controllers.
    #[serde(default)]
    pub history_traces: Vec<PathBuf>,
    #[serde(default)]
    pub analog_days: Option<usize>,
    #[serde(default)]
    pub analog_steps: Option<usize>,
    #[serde(default)]
    pub solve_mode: SolveMode,
    #[serde(default)]
    pub rebalance_method: RebalanceMethod,
}

/// Everything a run needs, loaded and checked.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub sim: SimConfig,
    pub trace: DemandTrace,
    pub setup: ControllerSetup,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.travel_time.len() != self.n || self.travel_time.iter().any(|r| r.len() != self.n) {
            return Err(format!("travel_time must be {0} x {0}", self.n));
        }
        if self.initial_vehicles.len() != self.n {
            return Err(format!("initial_vehicles has {} entries for n = {}", self.initial_vehicles.len(), self.n));
        }
        let placed: u64 = self.initial_vehicles.iter().map(|&v| v as u64).sum();
        if placed != self.fleet_size as u64 {
            return Err(format!("initial_vehicles sum to {placed}, fleet_size is {}", self.fleet_size));
        }
        if self.tick_s == 0 || !self.controller_period_s.is_multiple_of(self.tick_s) {
            return Err(format!(
                "controller_period_s = {} is not a multiple of tick_s = {}",
                self.controller_period_s, self.tick_s
            ));
        }
        if self.controller_period_s != self.dt_s {
            return Err(format!("controller_period_s = {} must equal dt_s = {}", self.controller_period_s, self.dt_s));
        }
        if self.horizon == 0 {
            return Err("horizon_T must be at least 1".into());
        }
        if self.k == 0 {
            return Err("K must be at least 1".into());
        }
        let c = &self.costs;
        if [c.c_x_scale, c.c_wait_scale].iter().chain(&c.c_drop).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("cost coefficients must be finite and non-negative".into());
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads and validates a scenario file together with the traces it names.
pub fn load(path: &Path) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config: ScenarioConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    config.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));

    let net = RoadNetwork::new(config.travel_time.clone(), config.dt_s).map_err(|e| e.to_string())?;
    let read = |p: &Path| -> Result<DemandTrace, String> {
        let trace = DemandTrace::read_csv(resolve(base, p)).map_err(|e| e.to_string())?;
        trace.check_stations(config.n).map_err(|e| format!("{}: {e}", p.display()))?;
        Ok(trace)
    };
    let trace = read(&config.demand_trace)?;
    let history = config.history_traces.iter().map(|p| read(p)).collect::<Result<Vec<_>, _>>()?;

    let duration_s = config.duration_s.unwrap_or(trace.span_s());
    let mut sim = SimConfig::new(net.clone(), config.initial_vehicles.clone(), duration_s);
    sim.tick_s = config.tick_s;
    sim.controller_period_s = config.controller_period_s;
    if let Some(l) = config.lookback_s {
        sim.lookback_s = l;
    }
    if let Some(d) = config.drain_limit_s {
        sim.drain_limit_s = d;
    }
    sim.validate().map_err(|e| e.to_string())?;

    let drop = config.costs.c_drop.unwrap_or_else(|| default_drop_penalty(&net));
    let costs = CostModel::scaled(&net, config.horizon, config.costs.c_x_scale, config.costs.c_wait_scale, drop)
        .map_err(|e| e.to_string())?;
    let setup = ControllerSetup {
        horizon: config.horizon,
        k: config.k,
        costs,
        mode: config.solve_mode,
        method: config.rebalance_method,
        history,
        analog_days: config.analog_days.unwrap_or(DEFAULT_ANALOG_DAYS),
        analog_steps: config.analog_steps.unwrap_or(DEFAULT_ANALOG_STEPS),
        truth: trace.clone(),
        duration_s,
    };
    Ok(Scenario { config, sim, trace, setup })
}
