//! Small exact LP/MILP machinery.
//!
//! [`solve_lp`] is a dense two-phase primal simplex on a tableau. It returns
//! basic feasible solutions, which is what makes total unimodularity usable:
//! a vertex of a TUM polyhedron with integer data is integral, an interior
//! point generally is not. Pricing is Dantzig's rule; after a run of
//! degenerate pivots the solver falls back to Bland's rule until the
//! objective moves again, so it cannot cycle.
//!
//! [`solve_milp`] wraps it in best-first branch and bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const INTEGRALITY_TOL: f64 = 1e-6;

const PIVOT_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-12;
const DEGENERATE_STREAK: usize = 25;

/// What an LP column stands for.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarTag {
    /// Vehicle flow `x[i,j,t]`.
    Flow { i: usize, j: usize, t: usize },
    /// Outstanding customers served `w[i,j,t]`.
    Wait { i: usize, j: usize, t: usize },
    /// Unmet-demand surrogate `u[i,j,t,k]`; `k` is a sample index or a bundled value.
    Drop { i: usize, j: usize, t: usize, k: usize },
    /// Matching dispatch from `i` to `j`.
    Dispatch { i: usize, j: usize },
    /// Customers left unpicked at station `i`.
    Unserved { i: usize },
    Anon(usize),
}

impl fmt::Display for VarTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarTag::Flow { i, j, t } => write!(f, "x[{i},{j},{t}]"),
            VarTag::Wait { i, j, t } => write!(f, "w[{i},{j},{t}]"),
            VarTag::Drop { i, j, t, k } => write!(f, "u[{i},{j},{t},{k}]"),
            VarTag::Dispatch { i, j } => write!(f, "d[{i},{j}]"),
            VarTag::Unserved { i } => write!(f, "u[{i}]"),
            VarTag::Anon(k) => write!(f, "v{k}"),
        }
    }
}

/// Sparse constraint row `sum coeff * var (= | >=) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * values[v]).sum()
    }
}

/// `min c'x` subject to equality rows, `>=` rows and `x >= lower`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Row>,
    pub ge_rows: Vec<Row>,
    pub var_lower_bounds: Vec<f64>,
    pub integer_mask: Vec<bool>,
    pub variable_names: Vec<VarTag>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column with lower bound 0 and returns its index.
    pub fn add_var(&mut self, tag: VarTag, cost: f64, integer: bool) -> usize {
        self.objective.push(cost);
        self.var_lower_bounds.push(0.0);
        self.integer_mask.push(integer);
        self.variable_names.push(tag);
        self.objective.len() - 1
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq_rows.push(Row { coeffs, rhs });
    }

    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.ge_rows.push(Row { coeffs, rhs });
    }

    /// Stored as the negated `>=` row.
    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let coeffs = coeffs.into_iter().map(|(v, c)| (v, -c)).collect();
        self.ge_rows.push(Row { coeffs, rhs: -rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.ge_rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.objective.len();
        if self.var_lower_bounds.len() != nv || self.integer_mask.len() != nv || self.variable_names.len() != nv {
            return Err(Error::Shape("per-variable vectors disagree in length".into()));
        }
        if self.objective.iter().chain(&self.var_lower_bounds).any(|v| !v.is_finite()) {
            return Err(Error::Argument("objective and bounds must be finite".into()));
        }
        for row in self.eq_rows.iter().chain(&self.ge_rows) {
            if !row.rhs.is_finite() {
                return Err(Error::Argument("non-finite right-hand side".into()));
            }
            if let Some(&(v, c)) = row.coeffs.iter().find(|(v, c)| *v >= nv || !c.is_finite()) {
                return Err(Error::Argument(format!("row references variable {v} with coefficient {c}")));
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Largest violation over rows and bounds; 0 for a feasible point.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let eq = self.eq_rows.iter().map(|r| (r.eval(values) - r.rhs).abs());
        let ge = self.ge_rows.iter().map(|r| (r.rhs - r.eval(values)).max(0.0));
        let lb = self
            .var_lower_bounds
            .iter()
            .zip(values)
            .map(|(l, x)| (l - x).max(0.0));
        eq.chain(ge).chain(lb).fold(0.0, f64::max)
    }

    /// Plain-text listing, one constraint per line:
    ///
    /// ```text
    /// min: +1 x[0,1,0] +10 u[0,1,0,1]
    /// e0: +1 x[0,0,0] +1 x[0,1,0] = 2
    /// g0: +1 u[0,1,0,1] +1 x[0,1,0] >= 1
    /// bound: x[0,0,0] >= 0
    /// int: x[0,0,0] x[0,1,0]
    /// ```
    ///
    /// Only non-zero lower bounds get a `bound:` line.
    pub fn to_lp_string(&self) -> String {
        let term = |v: usize, c: f64| format!("{c:+} {}", self.variable_names[v]);
        let mut out = String::new();
        let obj: Vec<String> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, &c)| term(v, c))
            .collect();
        out.push_str(&format!("min: {}\n", obj.join(" ")));
        for (k, r) in self.eq_rows.iter().enumerate() {
            let lhs: Vec<String> = r.coeffs.iter().map(|&(v, c)| term(v, c)).collect();
            out.push_str(&format!("e{k}: {} = {}\n", lhs.join(" "), r.rhs));
        }
        for (k, r) in self.ge_rows.iter().enumerate() {
            let lhs: Vec<String> = r.coeffs.iter().map(|&(v, c)| term(v, c)).collect();
            out.push_str(&format!("g{k}: {} >= {}\n", lhs.join(" "), r.rhs));
        }
        for (v, &lb) in self.var_lower_bounds.iter().enumerate() {
            if lb != 0.0 {
                out.push_str(&format!("bound: {} >= {lb}\n", self.variable_names[v]));
            }
        }
        let ints: Vec<String> = (0..self.num_vars())
            .filter(|&v| self.integer_mask[v])
            .map(|v| self.variable_names[v].to_string())
            .collect();
        if !ints.is_empty() {
            out.push_str(&format!("int: {}\n", ints.join(" ")));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Constraint that holds with equality at the returned point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Active {
    Eq(usize),
    Ge(usize),
    LowerBound(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: Vec<f64>,
    pub objective_value: f64,
    pub status: Status,
    /// Active constraints at the vertex.
    pub basis: Vec<Active>,
}

impl Solution {
    fn not_optimal(status: Status) -> Self {
        Solution {
            values: Vec::new(),
            objective_value: match status {
                Status::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            status,
            basis: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major, `cols + 1` entries per row; the last is the rhs.
    a: Vec<f64>,
    /// Reduced costs, last entry is minus the objective value.
    obj: Vec<f64>,
    basis: Vec<usize>,
    enterable: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.a[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let inv = 1.0 / self.a[pr * w + pc];
        let mut nz = Vec::new();
        for c in 0..w {
            let v = &mut self.a[pr * w + c];
            if *v != 0.0 {
                *v *= inv;
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                } else {
                    nz.push(c);
                }
            }
        }
        self.a[pr * w + pc] = 1.0;
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for &c in &nz {
                    let v = row[c] - f * prow[c];
                    row[c] = if v.abs() < DROP_TOL { 0.0 } else { v };
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        eliminate(&mut self.obj);
        self.basis[pr] = pc;
    }

    fn run(&mut self) -> Result<PhaseEnd> {
        let mut streak = 0usize;
        loop {
            let bland = streak >= DEGENERATE_STREAK;
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for c in 0..self.cols {
                if !self.enterable[c] {
                    continue;
                }
                let d = self.obj[c];
                if d < best {
                    entering = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leaving = match leaving {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        if (tie && self.basis[r] < self.basis[br]) || (!tie && ratio < bratio) {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            let Some((pr, ratio)) = leaving else {
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= DROP_TOL {
                streak += 1;
            } else {
                streak = 0;
            }
            self.pivot(pr, pc);
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::IterationLimit(self.max_iterations));
            }
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let w = self.width();
        self.obj = vec![0.0; w];
        self.obj[..costs.len()].copy_from_slice(costs);
        for r in 0..self.rows {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..w {
                    let v = self.a[r * w + c];
                    if v != 0.0 {
                        self.obj[c] -= cb * v;
                    }
                }
            }
        }
        for r in 0..self.rows {
            self.obj[self.basis[r]] = 0.0;
        }
    }
}

/// Solves an LP to a basic optimal solution.
pub fn solve_lp(lp: &LinearProgram) -> Result<Solution> {
    lp.validate()?;
    let nv = lp.num_vars();
    let n_ge = lp.ge_rows.len();
    let rows: Vec<(&Row, bool)> = lp
        .eq_rows
        .iter()
        .map(|r| (r, false))
        .chain(lp.ge_rows.iter().map(|r| (r, true)))
        .collect();
    let m = rows.len();

    // Shift x = lb + y so that y >= 0.
    let shifted_rhs: Vec<f64> = rows
        .iter()
        .map(|(r, _)| r.rhs - r.coeffs.iter().map(|&(v, c)| c * lp.var_lower_bounds[v]).sum::<f64>())
        .collect();

    // Columns: structural | surplus (one per >= row) | artificial (as needed).
    let mut needs_artificial = vec![false; m];
    let mut sign = vec![1.0; m];
    for (k, (_, is_ge)) in rows.iter().enumerate() {
        let b = shifted_rhs[k];
        if *is_ge && b <= 0.0 {
            // -a.y + s = -b >= 0 with the surplus column basic.
            sign[k] = -1.0;
        } else {
            if b < 0.0 {
                sign[k] = -1.0;
            }
            needs_artificial[k] = true;
        }
    }
    let n_art = needs_artificial.iter().filter(|&&b| b).count();
    let cols = nv + n_ge + n_art;
    let w = cols + 1;
    let mut a = vec![0.0; m * w];
    let mut basis = vec![0usize; m];
    let mut ge_k = 0;
    let mut art_k = 0;
    for (k, (row, is_ge)) in rows.iter().enumerate() {
        let base = k * w;
        for &(v, c) in &row.coeffs {
            a[base + v] += sign[k] * c;
        }
        a[base + cols] = sign[k] * shifted_rhs[k];
        if *is_ge {
            let col = nv + ge_k;
            a[base + col] = -sign[k];
            if !needs_artificial[k] {
                basis[k] = col;
            }
            ge_k += 1;
        }
        if needs_artificial[k] {
            let col = nv + n_ge + art_k;
            a[base + col] = 1.0;
            basis[k] = col;
            art_k += 1;
        }
    }

    let mut tab = Tableau {
        rows: m,
        cols,
        a,
        obj: Vec::new(),
        basis,
        enterable: vec![true; cols],
        iterations: 0,
        max_iterations: 200 * (m + cols) + 10_000,
    };

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in nv + n_ge..cols {
            phase1[c] = 1.0;
        }
        tab.set_objective(&phase1);
        if let PhaseEnd::Unbounded = tab.run()? {
            unreachable!("phase one objective is bounded below by zero");
        }
        let infeasibility = -tab.obj[cols];
        let scale = 1.0 + shifted_rhs.iter().map(|b| b.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-7 * scale {
            return Ok(Solution::not_optimal(Status::Infeasible));
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] >= nv + n_ge {
                let replacement = (0..nv + n_ge).find(|&c| tab.at(r, c).abs() > PIVOT_TOL);
                if let Some(c) = replacement {
                    tab.pivot(r, c);
                }
            }
        }
        for c in nv + n_ge..cols {
            tab.enterable[c] = false;
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..nv].copy_from_slice(&lp.objective);
    tab.set_objective(&phase2);
    if let PhaseEnd::Unbounded = tab.run()? {
        return Ok(Solution::not_optimal(Status::Unbounded));
    }

    let mut values = lp.var_lower_bounds.clone();
    for r in 0..m {
        let c = tab.basis[r];
        if c < nv {
            values[c] += tab.rhs(r);
        }
    }
    let objective_value = lp.objective_at(&values);
    let basis = active_set(lp, &values);
    Ok(Solution {
        values,
        objective_value,
        status: Status::Optimal,
        basis,
    })
}

fn active_set(lp: &LinearProgram, values: &[f64]) -> Vec<Active> {
    let tight = |x: f64, b: f64| (x - b).abs() <= FEASIBILITY_TOL * (1.0 + b.abs());
    let mut out: Vec<Active> = (0..lp.eq_rows.len()).map(Active::Eq).collect();
    out.extend(
        lp.ge_rows
            .iter()
            .enumerate()
            .filter(|(_, r)| tight(r.eval(values), r.rhs))
            .map(|(k, _)| Active::Ge(k)),
    );
    out.extend(
        lp.var_lower_bounds
            .iter()
            .zip(values)
            .enumerate()
            .filter(|(_, (l, x))| tight(**x, **l))
            .map(|(v, _)| Active::LowerBound(v)),
    );
    out
}

/// Rounds an optimal solution to integers, failing on the worst fractional entry.
pub fn certify_integral(lp: &LinearProgram, sol: &Solution, tol: f64) -> Result<Vec<i64>> {
    if sol.status != Status::Optimal {
        return Err(Error::NotOptimal(match sol.status {
            Status::Infeasible => "infeasible",
            _ => "unbounded",
        }));
    }
    let worst = sol
        .values
        .iter()
        .enumerate()
        .map(|(v, x)| (v, (x - x.round()).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((v, gap)) = worst {
        if gap > tol {
            return Err(Error::Integrality {
                var: v,
                tag: lp
                    .variable_names
                    .get(v)
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| format!("v{v}")),
                value: sol.values[v],
            });
        }
    }
    Ok(sol.values.iter().map(|x| x.round() as i64).collect())
}

#[derive(Clone, Debug)]
pub struct MilpOptions {
    pub node_budget: usize,
    pub integrality_tol: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            node_budget: 100_000,
            integrality_tol: INTEGRALITY_TOL,
        }
    }
}

struct Node {
    bound: f64,
    id: usize,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    sol: Solution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed so the max-heap pops the smallest bound, oldest first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

pub fn solve_milp(lp: &LinearProgram) -> Result<Solution> {
    solve_milp_with(lp, &MilpOptions::default())
}

/// Best-first branch and bound, branching on the most fractional variable.
pub fn solve_milp_with(lp: &LinearProgram, opts: &MilpOptions) -> Result<Solution> {
    lp.validate()?;
    let solve_node = |lower: &[(usize, f64)], upper: &[(usize, f64)]| -> Result<Solution> {
        let mut sub = lp.clone();
        for &(v, b) in lower {
            sub.var_lower_bounds[v] = sub.var_lower_bounds[v].max(b);
        }
        for &(v, b) in upper {
            sub.add_le(vec![(v, 1.0)], b);
        }
        solve_lp(&sub)
    };

    let root = solve_node(&[], &[])?;
    if !root.is_optimal() {
        return Ok(root);
    }
    let mut solved = 1usize;
    let mut next_id = 1usize;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: root.objective_value,
        id: 0,
        lower: Vec::new(),
        upper: Vec::new(),
        sol: root,
    });

    while let Some(node) = heap.pop() {
        let branch_var = (0..lp.num_vars())
            .filter(|&v| lp.integer_mask[v])
            .map(|v| {
                let x = node.sol.values[v];
                (v, (x - x.floor() - 0.5).abs())
            })
            .filter(|&(v, d)| {
                let x = node.sol.values[v];
                (x - x.round()).abs() > opts.integrality_tol && d.is_finite()
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let Some((v, _)) = branch_var else {
            // Best-first: the first integral node popped is optimal.
            let mut sol = node.sol;
            for (k, x) in sol.values.iter_mut().enumerate() {
                if lp.integer_mask[k] {
                    *x = x.round();
                }
            }
            sol.objective_value = lp.objective_at(&sol.values);
            sol.basis = active_set(lp, &sol.values);
            return Ok(sol);
        };

        let x = node.sol.values[v];
        let mut down_upper = node.upper.clone();
        down_upper.push((v, x.floor()));
        let mut up_lower = node.lower.clone();
        up_lower.push((v, x.ceil()));
        for (lower, upper) in [(node.lower.clone(), down_upper), (up_lower, node.upper.clone())] {
            if solved >= opts.node_budget {
                return Err(Error::NodeBudget(opts.node_budget));
            }
            let sol = solve_node(&lower, &upper)?;
            solved += 1;
            match sol.status {
                Status::Optimal => {
                    heap.push(Node {
                        bound: sol.objective_value,
                        id: next_id,
                        lower,
                        upper,
                        sol,
                    });
                    next_id += 1;
                }
                Status::Infeasible => {}
                Status::Unbounded => return Ok(sol),
            }
        }
    }
    Ok(Solution::not_optimal(Status::Infeasible))
}
