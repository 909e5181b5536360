use amod_core::bounds::{required_samples, verify_minima_continuity, verify_oracle_inequality, OracleInstance};
use amod_core::decomposed::build_rebalance_lp;
use amod_core::instances::{random_instance, Limits};
use amod_core::lpcore::{certify_integral, solve_lp, solve_milp, VarTag, INTEGRALITY_TOL};
use amod_core::saa::{build_saa_milp, build_saa_milp_naive, bundle_samples};
use amod_core::split_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one check: trials run, violations seen, and the first problem.
pub struct Check {
    pub name: &'static str,
    pub trials: usize,
    pub violations: usize,
    pub allowed_rate: f64,
    pub note: Option<String>,
}

impl Check {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.violations as f64 / self.trials as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.rate() <= self.allowed_rate
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} trials, {} violations (rate {:.3}, allowed {:.3}){}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.violations,
            self.rate(),
            self.allowed_rate,
            self.note.as_deref().map(|n| format!("; {n}")).unwrap_or_default()
        )
    }
}

/// Rebalancing LP vertices must be integral. With `inject_fault` the first
/// flow variable of the first solution is nudged off its integer value.
fn integrality(inject_fault: bool) -> Check {
    let trials = 200;
    let mut violations = 0;
    let mut note = None;
    for seed in 0..trials as u64 {
        let result = (|| -> amod_core::error::Result<()> {
            let inst = random_instance(split_seed(101, seed), &Limits::SWEEP)?;
            let bundled = bundle_samples(&inst.samples)?;
            let program = build_rebalance_lp(&inst.fleet, &bundled, &inst.costs, &inst.net)?;
            let mut sol = solve_lp(&program.lp)?;
            if inject_fault && seed == 0 {
                if let Some(v) = program.lp.variable_names.iter().position(|t| matches!(t, VarTag::Flow { .. })) {
                    sol.values[v] += 0.5;
                }
            }
            certify_integral(&program.lp, &sol, INTEGRALITY_TOL)?;
            Ok(())
        })();
        if let Err(e) = result {
            violations += 1;
            note.get_or_insert_with(|| format!("instance {seed}: {e}"));
        }
    }
    Check {
        name: "integral vertices of the rebalancing LP",
        trials,
        violations,
        allowed_rate: 0.0,
        note,
    }
}

fn bundling() -> Check {
    let trials = 30;
    let mut violations = 0;
    let mut note = None;
    for seed in 0..trials as u64 {
        let result = (|| -> amod_core::error::Result<f64> {
            let inst = random_instance(split_seed(102, seed), &Limits::TINY)?;
            let bundled = bundle_samples(&inst.samples)?;
            let a = build_saa_milp(&inst.fleet, &inst.outstanding, &bundled, &inst.costs, &inst.net)?;
            let b = build_saa_milp_naive(&inst.fleet, &inst.outstanding, &inst.samples, &inst.costs, &inst.net)?;
            Ok((solve_milp(&a.lp)?.objective_value - solve_milp(&b.lp)?.objective_value).abs())
        })();
        match result {
            Ok(gap) if gap <= 1e-9 => {}
            Ok(gap) => {
                violations += 1;
                note.get_or_insert_with(|| format!("instance {seed}: objectives differ by {gap:e}"));
            }
            Err(e) => {
                violations += 1;
                note.get_or_insert_with(|| format!("instance {seed}: {e}"));
            }
        }
    }
    Check {
        name: "bundled and per-sample formulations agree",
        trials,
        violations,
        allowed_rate: 0.0,
        note,
    }
}

fn minima_continuity() -> Check {
    let trials = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut violations = 0;
    for _ in 0..trials {
        let len = rng.random_range(1..=40);
        let f: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let noise = rng.random_range(0.0..3.0);
        let g: Vec<f64> = f.iter().map(|v| v + rng.random_range(-noise..=noise)).collect();
        if !verify_minima_continuity(&f, &g).unwrap_or(false) {
            violations += 1;
        }
    }
    Check {
        name: "continuity of minima",
        trials,
        violations,
        allowed_rate: 0.0,
        note: None,
    }
}

fn oracle() -> Check {
    let inst = OracleInstance::standard();
    let delta = 0.1;
    let trials = 200;
    let sigma = inst.loss_sigma(&inst.p);
    let report = required_samples(1.0, sigma, 2, 2, inst.fleet.fleet_size() as u64, delta)
        .and_then(|k| verify_oracle_inequality(&inst, &inst.p, k as usize, delta, trials, 104));
    match report {
        Ok(r) => Check {
            name: "oracle inequality",
            trials: r.trials,
            violations: (r.empirical_violation_rate * r.trials as f64).round() as usize,
            allowed_rate: delta,
            note: Some(format!("K = {}, bound {:.3}, max half gap {:.3}", r.k, r.bound_terms.total, r.max_half_gap)),
        },
        Err(e) => Check {
            name: "oracle inequality",
            trials: 0,
            violations: 0,
            allowed_rate: delta,
            note: Some(e.to_string()),
        },
    }
}

pub fn run(inject_fault: bool) -> Vec<Check> {
    vec![integrality(inject_fault), bundling(), minima_continuity(), oracle()]
}
