//! Error bounds for the sample-average surrogate and their numeric checks.
//!
//! All logarithms are natural.

use num::{BigRational, Signed, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netflow::{CostModel, DemandSample, FleetState, OutstandingDemand, Plan, RoadNetwork, Tensor3};
use crate::saa::{bundle_samples, solve_saa};
use crate::split_seed;

const NORMALIZATION_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument(format!("{name} has negative or non-finite mass")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Argument(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `χ²(p̂‖p) = Σ p (1 - p̂/p)²` over a shared support enumeration; infinite
/// when `p̂` puts mass where `p` has none.
pub fn chi_square_divergence(p_hat: &[f64], p: &[f64]) -> Result<f64> {
    if p_hat.len() != p.len() {
        return Err(Error::Shape(format!("supports differ: {} vs {}", p_hat.len(), p.len())));
    }
    check_distribution(p_hat, "p_hat")?;
    check_distribution(p, "p")?;
    let mut total = 0.0;
    for (&q, &r) in p_hat.iter().zip(p) {
        if r == 0.0 {
            if q > 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            total += r * (1.0 - q / r).powi(2);
        }
    }
    Ok(total)
}

fn check_common(k: u64, m: u64, delta: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    if m < 2 {
        return Err(Error::Argument("fleet size must be at least 2".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// `(2σ/√K) · √(n²T ln m + ln(1/√δ))`.
pub fn stochastic_error(sigma: f64, k: u64, n: u64, horizon: u64, m: u64, delta: f64) -> Result<f64> {
    check_common(k, m, delta)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let cover = (n * n * horizon) as f64 * (m as f64).ln() - 0.5 * delta.ln();
    Ok(2.0 * sigma / (k as f64).sqrt() * cover.sqrt())
}

/// `‖χ‖₂ · √var_norm`.
pub fn model_error(chi: &[f64], var_norm: f64) -> Result<f64> {
    if !(var_norm >= 0.0) {
        return Err(Error::Argument(format!("variance must be non-negative, got {var_norm}")));
    }
    if chi.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::Argument("χ entries must be non-negative".into()));
    }
    let norm = chi.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 || var_norm == 0.0 {
        return Ok(0.0);
    }
    Ok(norm * var_norm.sqrt())
}

/// Smallest `K` with `K >= 64σ²ε⁻²(n²T ln m - 0.5 ln δ)`.
pub fn required_samples(epsilon: f64, sigma: f64, n: u64, horizon: u64, m: u64, delta: f64) -> Result<u64> {
    check_common(1, m, delta)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let raw = 64.0 * sigma * sigma / (epsilon * epsilon)
        * ((n * n * horizon) as f64 * (m as f64).ln() - 0.5 * delta.ln());
    Ok(raw.ceil() as u64)
}

/// `floor(min(4b·n²T·ln(K n²T/δ), K n²T))`.
pub fn bundled_size_bound(k: u64, n: u64, horizon: u64, b: f64, delta: f64) -> Result<u64> {
    if k == 0 || n == 0 || horizon == 0 || !(b > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Argument("bundle bound needs positive K, n, T, b and delta in (0, 1]".into()));
    }
    let coords = (n * n * horizon) as f64;
    let log_bound = 4.0 * b * coords * (k as f64 * coords / delta).ln();
    Ok(log_bound.min(k as f64 * coords).floor() as u64)
}

fn exact(v: f64) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| Error::Argument(format!("non-finite table entry {v}")))
}

fn argmin(values: &[BigRational]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    best
}

/// Checks `f(argmin g) <= f(argmin f) + 2 max |f - g|` in exact rational
/// arithmetic on tabulated functions.
pub fn verify_minima_continuity(f: &[f64], g: &[f64]) -> Result<bool> {
    if f.is_empty() {
        return Err(Error::Argument("empty domain".into()));
    }
    if f.len() != g.len() {
        return Err(Error::Shape(format!("domains differ: {} vs {}", f.len(), g.len())));
    }
    let f: Vec<BigRational> = f.iter().map(|&v| exact(v)).collect::<Result<_>>()?;
    let g: Vec<BigRational> = g.iter().map(|&v| exact(v)).collect::<Result<_>>()?;
    let mut sup = BigRational::zero();
    for (a, b) in f.iter().zip(&g) {
        let d = (a - b).abs();
        if d > sup {
            sup = d;
        }
    }
    let lhs = &f[argmin(&g)];
    let rhs = &f[argmin(&f)] + &sup + &sup;
    Ok(*lhs <= rhs)
}

/// Finite distribution as `(value, probability)` pairs.
pub type DiscreteDist = Vec<(u32, f64)>;

/// Both terms of the uniform deviation bound with the inputs that produced
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub stochastic_error: f64,
    pub model_error: f64,
    pub sigma2: f64,
    pub b: f64,
    #[serde(rename = "K")]
    pub k: u64,
    pub n: u64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub m: u64,
    pub delta: f64,
}

impl ErrorBudget {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(sigma2: f64, b: f64, k: u64, n: u64, horizon: u64, m: u64, delta: f64, chi: &[f64], var_norm: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !(b >= 0.0) {
            return Err(Error::Argument("sigma2 and b must be non-negative".into()));
        }
        Ok(ErrorBudget {
            stochastic_error: stochastic_error(sigma2.sqrt(), k, n, horizon, m, delta)?,
            model_error: model_error(chi, var_norm)?,
            sigma2,
            b,
            k,
            n,
            horizon,
            m,
            delta,
        })
    }

    pub fn total(&self) -> f64 {
        self.stochastic_error + self.model_error
    }
}

/// `Var(‖λ‖₂)` under independent coordinates: exact over the product support
/// when it has at most 10⁶ points, otherwise from 10⁵ Monte Carlo draws.
pub fn norm_variance(p: &[DiscreteDist], seed: u64) -> Result<f64> {
    let combos = p.iter().try_fold(1u64, |acc, d| acc.checked_mul(d.len().max(1) as u64));
    match combos {
        Some(c) if c <= 1_000_000 => {
            let (mut m1, mut m2) = (0.0, 0.0);
            let mut stack = vec![(0usize, 1.0f64, 0.0f64)];
            while let Some((idx, prob, sq)) = stack.pop() {
                if idx == p.len() {
                    let norm = sq.sqrt();
                    m1 += prob * norm;
                    m2 += prob * norm * norm;
                    continue;
                }
                for &(v, q) in &p[idx] {
                    if q > 0.0 {
                        stack.push((idx + 1, prob * q, sq + (v as f64).powi(2)));
                    }
                }
            }
            Ok((m2 - m1 * m1).max(0.0))
        }
        _ => {
            let dists = samplers(p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws = 100_000;
            let (mut m1, mut m2) = (0.0, 0.0);
            for _ in 0..draws {
                let sq: f64 = dists.iter().zip(p).map(|(d, dist)| (dist[d.sample(&mut rng)].0 as f64).powi(2)).sum();
                m1 += sq.sqrt();
                m2 += sq;
            }
            let mean = m1 / draws as f64;
            Ok((m2 / draws as f64 - mean * mean).max(0.0))
        }
    }
}

fn samplers(p: &[DiscreteDist]) -> Result<Vec<WeightedIndex<f64>>> {
    p.iter()
        .map(|d| {
            WeightedIndex::new(d.iter().map(|&(_, q)| q)).map_err(|e| Error::Argument(format!("distribution weights: {e}")))
        })
        .collect()
}

/// Tiny fleet problem with a known demand law and no waiting customers,
/// small enough that the true objective can be computed exactly.
#[derive(Clone, Debug)]
pub struct OracleInstance {
    pub net: RoadNetwork,
    pub fleet: FleetState,
    pub costs: CostModel,
    /// Independent per-coordinate demand law, indexed like [`Tensor3`].
    pub p: Vec<DiscreteDist>,
}

impl OracleInstance {
    /// Two stations one step apart, one vehicle each, two steps. Trips
    /// between the stations occur with probability 1/2 per step and
    /// direction; movement costs 0.3 per step and a lost trip costs 1.
    pub fn standard() -> Self {
        let net = RoadNetwork::uniform(2, 1, 300).expect("valid network");
        let fleet = FleetState::idle_only(vec![1, 1], 2).expect("valid fleet");
        let costs = CostModel::scaled(&net, 2, 0.3, 0.0, 1.0).expect("valid costs");
        let p = (0..8)
            .map(|idx| {
                let (i, j) = (idx / 4, (idx / 2) % 2);
                if i == j {
                    vec![(0, 1.0)]
                } else {
                    vec![(0, 0.5), (1, 0.5)]
                }
            })
            .collect();
        OracleInstance { net, fleet, costs, p }
    }

    /// The standard law with cross-station trips made more likely: 3/4
    /// instead of 1/2, a χ² divergence of 1/4 per such coordinate.
    pub fn perturbed_law(&self) -> Vec<DiscreteDist> {
        self.p
            .iter()
            .map(|d| if d.len() == 2 { vec![(0, 0.25), (1, 0.75)] } else { d.clone() })
            .collect()
    }

    fn check_scale(&self) -> Result<()> {
        let (n, h) = (self.fleet.n(), self.fleet.horizon());
        if n > 2 || h > 2 || self.p.iter().any(|d| d.len() > 4) {
            return Err(Error::Scale(format!(
                "{n} stations, {h} steps, largest support {}; limits are 2, 2, 4",
                self.p.iter().map(Vec::len).max().unwrap_or(0)
            )));
        }
        if self.p.len() != n * n * h {
            return Err(Error::Shape(format!("need {} coordinate laws, got {}", n * n * h, self.p.len())));
        }
        for d in &self.p {
            let probs: Vec<f64> = d.iter().map(|&(_, q)| q).collect();
            check_distribution(&probs, "coordinate law")?;
        }
        Ok(())
    }

    /// Exact `F(x) = c_x'x + Σ c_λ E[(λ - x)₊]` for a plan with `w = 0`.
    pub fn true_objective(&self, plan: &Plan, law: &[DiscreteDist]) -> f64 {
        plan.x
            .iter_indexed()
            .map(|((i, j, s), x)| {
                let idx = plan.x.index(i, j, s);
                let shortfall: f64 = law[idx].iter().map(|&(v, q)| q * (v as f64 - x as f64).max(0.0)).sum();
                self.costs.move_cost.get(i, j, s) * x as f64 + self.costs.drop_cost.get(i, j, s) * shortfall
            })
            .sum()
    }

    /// Loss range of a single sample, a valid sub-Gaussian constant for the
    /// per-sample surrogate objective: `σ = Σ c_λ (max λ - min λ) / 2`.
    pub fn loss_sigma(&self, law: &[DiscreteDist]) -> f64 {
        law.iter()
            .enumerate()
            .map(|(idx, d)| {
                let lo = d.iter().map(|&(v, _)| v).min().unwrap_or(0);
                let hi = d.iter().map(|&(v, _)| v).max().unwrap_or(0);
                self.costs.drop_cost.as_slice()[idx] * (hi - lo) as f64
            })
            .sum::<f64>()
            / 2.0
    }
}

/// Every integer plan with `w = 0` that satisfies flow conservation.
pub fn enumerate_plans(fleet: &FleetState, net: &RoadNetwork) -> Result<Vec<Plan>> {
    let (n, h) = (fleet.n(), fleet.horizon());
    if n > 3 || h > 3 || fleet.total_supply() > 6 {
        return Err(Error::Scale(format!("{n} stations, {h} steps, {} vehicles", fleet.total_supply())));
    }
    let mut out = Vec::new();
    let mut plan = Plan::zeros(n, h);
    fill_plan(fleet, net, &mut plan, 0, 0, &mut out);
    Ok(out)
}

fn fill_plan(fleet: &FleetState, net: &RoadNetwork, plan: &mut Plan, step: usize, station: usize, out: &mut Vec<Plan>) {
    let (n, h) = (fleet.n(), fleet.horizon());
    if step == h {
        out.push(plan.clone());
        return;
    }
    if station == n {
        fill_plan(fleet, net, plan, step + 1, 0, out);
        return;
    }
    let inflow: u32 = (0..n)
        .filter(|&j| step >= net.tau(j, station))
        .map(|j| plan.x.get(j, station, step - net.tau(j, station)))
        .sum();
    let total = fleet.supply(station, step) + inflow;
    split(fleet, net, plan, step, station, 0, total, out);
}

#[allow(clippy::too_many_arguments)]
fn split(fleet: &FleetState, net: &RoadNetwork, plan: &mut Plan, step: usize, station: usize, dest: usize, left: u32, out: &mut Vec<Plan>) {
    let n = fleet.n();
    if dest == n - 1 {
        plan.x.set(station, dest, step, left);
        fill_plan(fleet, net, plan, step, station + 1, out);
        plan.x.set(station, dest, step, 0);
        return;
    }
    for take in 0..=left {
        plan.x.set(station, dest, step, take);
        split(fleet, net, plan, step, station, dest + 1, left - take, out);
    }
    plan.x.set(station, dest, step, 0);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub stochastic_error: f64,
    pub model_error: f64,
    pub total: f64,
    pub sigma: f64,
    pub chi_norm: f64,
    pub var_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub bound_terms: BoundTerms,
    pub empirical_violation_rate: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    /// Largest observed `(F(x̂) - F(x*)) / 2`.
    pub max_half_gap: f64,
    pub optimal_value: f64,
}

/// Draws `k` samples from `p_hat` per trial, solves the surrogate, and
/// counts trials whose half true-objective gap exceeds the bound.
pub fn verify_oracle_inequality(
    inst: &OracleInstance,
    p_hat: &[DiscreteDist],
    k: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<OracleReport> {
    inst.check_scale()?;
    if p_hat.len() != inst.p.len() {
        return Err(Error::Shape("model law has the wrong number of coordinates".into()));
    }
    let (n, h) = (inst.fleet.n(), inst.fleet.horizon());
    let m = inst.fleet.fleet_size() as u64;

    let plans = enumerate_plans(&inst.fleet, &inst.net)?;
    let optimal_value = plans
        .iter()
        .map(|p| inst.true_objective(p, &inst.p))
        .fold(f64::INFINITY, f64::min);

    let mut chi = Vec::with_capacity(p_hat.len());
    for (q, r) in p_hat.iter().zip(&inst.p) {
        let mut support: Vec<u32> = q.iter().chain(r).map(|&(v, _)| v).collect();
        support.sort_unstable();
        support.dedup();
        let mass = |d: &DiscreteDist, v: u32| d.iter().filter(|&&(x, _)| x == v).map(|&(_, p)| p).sum::<f64>();
        let qv: Vec<f64> = support.iter().map(|&v| mass(q, v)).collect();
        let rv: Vec<f64> = support.iter().map(|&v| mass(r, v)).collect();
        chi.push(chi_square_divergence(&qv, &rv)?.sqrt());
    }
    let var_norm = norm_variance(&inst.p, seed)?;
    let sigma = inst.loss_sigma(p_hat);
    let stochastic = stochastic_error(sigma, k as u64, n as u64, h as u64, m, delta)?;
    let model = model_error(&chi, var_norm)?;
    let bound = stochastic + model;

    let dists = samplers(p_hat)?;
    let none = OutstandingDemand::zeros(n);
    let mut violations = 0usize;
    let mut max_half_gap = 0.0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, trial as u64));
        let samples: Vec<DemandSample> = (0..k)
            .map(|_| {
                DemandSample::new(Tensor3::from_fn(n, h, |i, j, s| {
                    let idx = (i * n + j) * h + s;
                    p_hat[idx][dists[idx].sample(&mut rng)].0
                }))
            })
            .collect();
        let bundled = bundle_samples(&samples)?;
        let sol = solve_saa(&inst.fleet, &none, &bundled, &inst.costs, &inst.net)?;
        let half_gap = (inst.true_objective(&sol.plan, &inst.p) - optimal_value) / 2.0;
        max_half_gap = max_half_gap.max(half_gap);
        if half_gap > bound {
            violations += 1;
        }
    }
    Ok(OracleReport {
        bound_terms: BoundTerms {
            stochastic_error: stochastic,
            model_error: model,
            total: bound,
            sigma,
            chi_norm: chi.iter().map(|c| c * c).sum::<f64>().sqrt(),
            var_norm,
        },
        empirical_violation_rate: if trials == 0 { 0.0 } else { violations as f64 / trials as f64 },
        trials,
        seed,
        k,
        delta,
        max_half_gap,
        optimal_value,
    })
}
