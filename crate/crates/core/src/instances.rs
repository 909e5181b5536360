//! Random tiny fleet problems with integer data, for property checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::netflow::{CostModel, DemandSample, FleetState, OutstandingDemand, RoadNetwork, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_n: usize,
    pub max_horizon: usize,
    pub max_k: usize,
    pub max_fleet: u32,
    pub max_tau: usize,
    pub max_demand: u32,
    pub max_waiting: u32,
}

impl Limits {
    /// Up to 5 stations, 6 steps, 8 samples and 10 vehicles, nobody waiting.
    pub const SWEEP: Limits = Limits {
        max_n: 5,
        max_horizon: 6,
        max_k: 8,
        max_fleet: 10,
        max_tau: 3,
        max_demand: 3,
        max_waiting: 0,
    };

    /// Small enough for branch and bound on the joint problem, with waiting
    /// customers.
    pub const TINY: Limits = Limits {
        max_n: 3,
        max_horizon: 3,
        max_k: 4,
        max_fleet: 4,
        max_tau: 2,
        max_demand: 2,
        max_waiting: 2,
    };
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub net: RoadNetwork,
    pub fleet: FleetState,
    pub outstanding: OutstandingDemand,
    pub samples: Vec<DemandSample>,
    pub costs: CostModel,
}

/// Integer travel times, movement costs `c·τ`, waiting costs `t`, integer
/// drop penalties, some vehicles in flight, and demand on cross pairs only.
pub fn random_instance(seed: u64, limits: &Limits) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=limits.max_n.max(2));
    let horizon = rng.random_range(1..=limits.max_horizon.max(1));
    let k = rng.random_range(1..=limits.max_k.max(1));

    let tau = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1 } else { rng.random_range(1..=limits.max_tau.max(1)) })
                .collect()
        })
        .collect();
    let net = RoadNetwork::new(tau, 300)?;

    let fleet_size = rng.random_range(1..=limits.max_fleet.max(1));
    let mut idle = vec![0u32; n];
    let mut incoming = vec![vec![0u32; horizon]; n];
    for _ in 0..fleet_size {
        let station = rng.random_range(0..n);
        if rng.random_bool(0.8) {
            idle[station] += 1;
        } else {
            let step = rng.random_range(0..horizon + 1);
            if step < horizon {
                incoming[station][step] += 1;
            }
        }
    }
    let fleet = FleetState::new(idle, incoming, fleet_size)?;

    let mut outstanding = OutstandingDemand::zeros(n);
    if limits.max_waiting > 0 {
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.3) {
                    outstanding.set(i, j, rng.random_range(1..=limits.max_waiting));
                }
            }
        }
    }

    let samples = (0..k)
        .map(|_| {
            DemandSample::new(Tensor3::from_fn(n, horizon, |i, j, _| {
                if i != j && rng.random_bool(0.5) {
                    rng.random_range(0..=limits.max_demand)
                } else {
                    0
                }
            }))
        })
        .collect();

    let move_scale = rng.random_range(1..=3) as f64;
    let drop = rng.random_range(2..=12) as f64;
    let costs = CostModel::scaled(&net, horizon, move_scale, 1.0, drop)?;
    Ok(Instance {
        net,
        fleet,
        outstanding,
        samples,
        costs,
    })
}
