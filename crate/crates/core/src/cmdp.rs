//! Deterministic-policy CMDP as an occupancy MILP.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpSolution, Sense};
use crate::mdp::{argmax, Policy, TabularMdp};

const INT_TOL: f64 = 1e-6;
const PRUNE_TOL: f64 = 1e-9;
const VISIT_TOL: f64 = 1e-9;
const MAX_NODES: usize = 200_000;

/// `C(s,a) = 1` where `a` differs from the greedy action of `pi_b`; zero at
/// absorbing states.
pub fn deviation_cost(mdp: &TabularMdp, pi_b: &Policy) -> Vec<Vec<f64>> {
    let absorbing = mdp.absorbing_mask();
    (0..mdp.n_states)
        .map(|s| {
            let b = pi_b.greedy(&s);
            (0..mdp.n_actions)
                .map(|a| if absorbing[s] || a == b { 0.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

/// Column layout of the occupancy program: `x` then `Δ` over transient
/// states in index order.
struct Layout {
    transient: Vec<usize>,
    n_actions: usize,
}

impl Layout {
    fn new(mdp: &TabularMdp) -> Self {
        Self {
            transient: mdp.transient_states(),
            n_actions: mdp.n_actions,
        }
    }

    fn n_x(&self) -> usize {
        self.transient.len() * self.n_actions
    }

    fn x(&self, k: usize, a: usize) -> usize {
        k * self.n_actions + a
    }

    fn delta(&self, k: usize, a: usize) -> usize {
        self.n_x() + k * self.n_actions + a
    }
}

/// Flow polytope over `x` only, with `extra` trailing columns.
fn flow_problem(mdp: &TabularMdp, lay: &Layout, extra: usize) -> LpProblem {
    let mut p = LpProblem::new(lay.n_x() + extra);
    for (k2, &s2) in lay.transient.iter().enumerate() {
        let mut row: Vec<(usize, f64)> = (0..mdp.n_actions).map(|a| (lay.x(k2, a), 1.0)).collect();
        for (k, &s) in lay.transient.iter().enumerate() {
            for a in 0..mdp.n_actions {
                let t = mdp.transition[s][a][s2];
                if t != 0.0 {
                    row.push((lay.x(k, a), -t));
                }
            }
        }
        p.add(row, Sense::Eq, mdp.p0[s2]);
    }
    for (k, &s) in lay.transient.iter().enumerate() {
        for a in 0..mdp.n_actions {
            if !mdp.allowed(s, a) {
                p.upper[lay.x(k, a)] = 0.0;
            }
        }
    }
    p
}

/// Maximal expected total visits over the flow polytope.
pub fn compute_big_m(mdp: &TabularMdp) -> Result<f64> {
    mdp.validate()?;
    let lay = Layout::new(mdp);
    let mut p = flow_problem(mdp, &lay, 0);
    p.objective = vec![1.0; lay.n_x()];
    Ok(solve_lp(&p)?.objective)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmdpInstance {
    pub mdp: TabularMdp,
    pub cost: Vec<Vec<f64>>,
    /// Budget on expected cost under p0; infinite means unconstrained.
    pub kappa: f64,
    pub big_m: f64,
}

impl CmdpInstance {
    pub fn new(mdp: TabularMdp, cost: Vec<Vec<f64>>, kappa: f64) -> Result<Self> {
        let big_m = compute_big_m(&mdp)?;
        let inst = Self {
            mdp,
            cost,
            kappa,
            big_m,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self { kappa, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        if self.cost.len() != self.mdp.n_states || self.cost.iter().any(|r| r.len() != self.mdp.n_actions) {
            return Err(Error::DimensionMismatch {
                expected: self.mdp.n_states,
                got: self.cost.len(),
            });
        }
        if self.cost.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("cost has a non-finite entry".into()));
        }
        for &t in &self.mdp.absorbing {
            if self.cost[t].iter().any(|&c| c != 0.0) {
                return Err(Error::InvalidArgument(format!("absorbing state {t} has nonzero cost")));
            }
        }
        if self.kappa.is_nan() || self.kappa < 0.0 {
            return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !self.big_m.is_finite() || self.big_m <= 0.0 {
            return Err(Error::InvalidArgument("big M must be positive and finite".into()));
        }
        Ok(())
    }

    fn objective_coeffs(&self, lay: &Layout, table: &[Vec<f64>]) -> Vec<(usize, f64)> {
        let mut v = Vec::new();
        for (k, &s) in lay.transient.iter().enumerate() {
            for a in 0..self.mdp.n_actions {
                if table[s][a] != 0.0 {
                    v.push((lay.x(k, a), table[s][a]));
                }
            }
        }
        v
    }

    fn milp(&self, lay: &Layout) -> LpProblem {
        let n_x = lay.n_x();
        let mut p = flow_problem(&self.mdp, lay, n_x);
        for (j, c) in self.objective_coeffs(lay, &self.mdp.reward) {
            p.objective[j] = c;
        }
        if self.kappa.is_finite() {
            p.add(self.objective_coeffs(lay, &self.cost), Sense::Le, self.kappa);
        }
        for (k, &s) in lay.transient.iter().enumerate() {
            p.add((0..self.mdp.n_actions).map(|a| (lay.delta(k, a), 1.0)).collect(), Sense::Le, 1.0);
            for a in 0..self.mdp.n_actions {
                let d = lay.delta(k, a);
                p.upper[d] = if self.mdp.allowed(s, a) { 1.0 } else { 0.0 };
                p.add(vec![(lay.x(k, a), 1.0), (d, -self.big_m)], Sense::Le, 0.0);
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Solution of the LP relaxation; `delta` is not binary.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancySolution {
    /// `x[s][a]`, zero at absorbing states.
    pub x: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub objective: f64,
    pub expected_cost: f64,
    pub status: SolveStatus,
    pub nodes: usize,
}

impl OccupancySolution {
    fn from_lp(inst: &CmdpInstance, lay: &Layout, sol: &LpSolution, status: SolveStatus, nodes: usize) -> Self {
        let (n, na) = (inst.mdp.n_states, inst.mdp.n_actions);
        let mut x = vec![vec![0.0; na]; n];
        let mut delta = vec![vec![0.0; na]; n];
        for (k, &s) in lay.transient.iter().enumerate() {
            for a in 0..na {
                x[s][a] = sol.x[lay.x(k, a)];
                let d = sol.x[lay.delta(k, a)];
                delta[s][a] = if status == SolveStatus::Optimal { d.round() } else { d };
            }
        }
        let dot = |t: &[Vec<f64>]| -> f64 { (0..n).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| x[s][a] * t[s][a]).sum() };
        let objective = dot(&inst.mdp.reward);
        let expected_cost = dot(&inst.cost);
        Self {
            x,
            delta,
            objective,
            expected_cost,
            status,
            nodes,
        }
    }

    /// Largest flow-conservation residual over transient states.
    pub fn flow_residual(&self, mdp: &TabularMdp) -> f64 {
        mdp.transient_states()
            .into_iter()
            .map(|s2| {
                let out: f64 = self.x[s2].iter().sum();
                let inflow: f64 = (0..mdp.n_states)
                    .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
                    .map(|(s, a)| self.x[s][a] * mdp.transition[s][a][s2])
                    .sum();
                (out - inflow - mdp.p0[s2]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn visits(&self, s: usize) -> f64 {
        self.x[s].iter().sum()
    }
}

#[derive(Debug)]
struct Node {
    bound: f64,
    id: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    sol: LpSolution,
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
    // best bound first; among equal bounds the newest node
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then(self.id.cmp(&other.id))
    }
}

fn solve_node(base: &LpProblem, lower: &[f64], upper: &[f64]) -> Result<Option<LpSolution>> {
    let mut p = base.clone();
    p.lower = lower.to_vec();
    p.upper = upper.to_vec();
    match solve_lp(&p) {
        Ok(s) => Ok(Some(s)),
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Best-bound branch and bound over the `binaries` columns. Returns the
/// optimum and the number of solved nodes, or `None` if infeasible.
fn branch_and_bound(base: &LpProblem, binaries: &[usize]) -> Result<(Option<LpSolution>, usize)> {
    let mut heap = BinaryHeap::new();
    let mut next_id = 0;
    let mut solved = 1;
    if let Some(sol) = solve_node(base, &base.lower, &base.upper)? {
        heap.push(Node {
            bound: sol.objective,
            id: next_id,
            lower: base.lower.clone(),
            upper: base.upper.clone(),
            sol,
        });
    }
    let mut incumbent: Option<LpSolution> = None;
    while let Some(node) = heap.pop() {
        if let Some(inc) = &incumbent {
            if node.bound <= inc.objective + PRUNE_TOL {
                break;
            }
        }
        // most fractional binary, lowest column on ties
        let mut branch: Option<(usize, f64)> = None;
        for &j in binaries {
            let v = node.sol.x[j];
            let frac = (v - v.round()).abs();
            if frac > INT_TOL && branch.map_or(true, |(_, f)| frac > f + 1e-12) {
                branch = Some((j, frac));
            }
        }
        let Some((j, _)) = branch else {
            incumbent = Some(node.sol);
            continue;
        };
        for fix in [0.0, 1.0] {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            lower[j] = fix;
            upper[j] = fix;
            solved += 1;
            if solved > MAX_NODES {
                return Err(Error::NumericalFailure("branch-and-bound node limit reached".into()));
            }
            if let Some(sol) = solve_node(base, &lower, &upper)? {
                if incumbent.as_ref().map_or(true, |inc| sol.objective > inc.objective + PRUNE_TOL) {
                    next_id += 1;
                    heap.push(Node {
                        bound: sol.objective,
                        id: next_id,
                        lower,
                        upper,
                        sol,
                    });
                }
            }
        }
    }
    Ok((incumbent, solved))
}

/// LP relaxation of the occupancy program (binaries relaxed to `[0,1]`).
pub fn solve_relaxation(inst: &CmdpInstance) -> Result<OccupancySolution> {
    inst.validate()?;
    let lay = Layout::new(&inst.mdp);
    let sol = solve_lp(&inst.milp(&lay))?;
    Ok(OccupancySolution::from_lp(inst, &lay, &sol, SolveStatus::Relaxed, 1))
}

/// Exact optimum of the occupancy MILP. Among optimal solutions the one
/// with the least expected cost is returned.
pub fn solve_cmdp_milp(inst: &CmdpInstance) -> Result<OccupancySolution> {
    inst.validate()?;
    let lay = Layout::new(&inst.mdp);
    let base = inst.milp(&lay);
    let binaries: Vec<usize> = (lay.n_x()..2 * lay.n_x()).collect();
    let (best, n1) = branch_and_bound(&base, &binaries)?;
    let best = best.ok_or(Error::Infeasible)?;

    let mut second = base.clone();
    let reward = inst.objective_coeffs(&lay, &inst.mdp.reward);
    let floor = best.objective - 1e-9 * (1.0 + best.objective.abs());
    second.add(reward, Sense::Ge, floor);
    second.objective = vec![0.0; base.n_vars()];
    for (j, c) in inst.objective_coeffs(&lay, &inst.cost) {
        second.objective[j] = -c;
    }
    let (refined, n2) = branch_and_bound(&second, &binaries)?;
    let chosen = refined.unwrap_or(best);
    let out = OccupancySolution::from_lp(inst, &lay, &chosen, SolveStatus::Optimal, n1 + n2);
    for &s in &lay.transient {
        if out.visits(s) > 1e-6 && out.delta[s].iter().sum::<f64>() < 0.5 {
            return Err(Error::NumericalFailure(format!("state {s} is visited without a selected action")));
        }
    }
    Ok(out)
}

/// Deterministic policy from an optimal occupancy; unvisited states keep
/// the action of `pi_b`.
pub fn extract_policy(sol: &OccupancySolution, mdp: &TabularMdp, pi_b: &Policy) -> Result<Policy> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::NotOptimal);
    }
    let actions: Vec<usize> = (0..mdp.n_states)
        .map(|s| {
            if sol.visits(s) > VISIT_TOL {
                argmax(&sol.x[s])
            } else {
                pi_b.greedy(&s)
            }
        })
        .collect();
    Ok(Policy::deterministic(&actions, mdp.n_actions))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaUnits {
    /// Expected cost under p0.
    #[default]
    Expected,
    /// Expected cost summed over the support of a uniform p0.
    Aggregate,
}

impl KappaUnits {
    /// Converts `kappa` to expected-cost units.
    pub fn to_expected(self, mdp: &TabularMdp, kappa: f64) -> Result<f64> {
        match self {
            KappaUnits::Expected => Ok(kappa),
            KappaUnits::Aggregate => {
                if !mdp.p0_is_uniform() {
                    return Err(Error::InvalidArgument("aggregate budgets need a uniform p0".into()));
                }
                Ok(kappa / mdp.p0_support().len() as f64)
            }
        }
    }
}

/// Expected cost scaled to a count over the starts of a uniform p0.
pub fn aggregate_changes(mdp: &TabularMdp, expected_cost: f64) -> Option<f64> {
    mdp.p0_is_uniform()
        .then(|| expected_cost * mdp.p0_support().len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub kappa: f64,
    pub expected_cost: f64,
    pub aggregate_changes: Option<f64>,
    pub expected_return: f64,
    pub policy: Policy,
}

/// One MILP solve per budget, in the units given.
pub fn sweep_kappa(template: &CmdpInstance, pi_b: &Policy, kappas: &[f64], units: KappaUnits) -> Result<Vec<FrontierPoint>> {
    if kappas.is_empty() {
        return Err(Error::InvalidArgument("no budgets given".into()));
    }
    if kappas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("budgets must be sorted ascending".into()));
    }
    let mdp = &template.mdp;
    kappas
        .par_iter()
        .map(|&k| {
            let inst = template.with_kappa(units.to_expected(mdp, k)?);
            let sol = solve_cmdp_milp(&inst)?;
            Ok(FrontierPoint {
                kappa: k,
                expected_cost: sol.expected_cost,
                aggregate_changes: aggregate_changes(mdp, sol.expected_cost),
                expected_return: sol.objective,
                policy: extract_policy(&sol, mdp, pi_b)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{toy_mdp_with_slip, toy_pi_b};
    use crate::mdp::{expected_return_exact, state_values};
    use proptest::prelude::*;

    fn toy() -> (TabularMdp, Policy) {
        (toy_mdp_with_slip(0.0), toy_pi_b())
    }

    // exhaustive search over deterministic policies, independent of the MILP
    fn enumerate(mdp: &TabularMdp, cost: &[Vec<f64>], kappa: f64) -> Option<f64> {
        let n = mdp.n_states;
        let total = mdp.n_actions.pow(n as u32);
        let mut best: Option<f64> = None;
        for code in 0..total {
            let mut c = code;
            let acts: Vec<usize> = (0..n)
                .map(|_| {
                    let a = c % mdp.n_actions;
                    c /= mdp.n_actions;
                    a
                })
                .collect();
            let pi = Policy::deterministic(&acts, mdp.n_actions);
            let Ok(ret) = expected_return_exact(mdp, &pi) else { continue };
            let v = state_values(mdp, &pi, &|s, a| cost[s][a]).unwrap();
            let ec: f64 = (0..n).filter(|&s| mdp.p0[s] > 0.0).map(|s| mdp.p0[s] * v[s]).sum();
            if ec <= kappa + 1e-9 {
                best = Some(best.map_or(ret, |b: f64| b.max(ret)));
            }
        }
        best
    }

    #[test]
    fn deviation_cost_indicator() {
        let (mdp, pi_b) = toy();
        let c = deviation_cost(&mdp, &pi_b);
        assert_eq!(c[1][0], 0.0);
        assert_eq!(c[1][1], 1.0);
        assert_eq!(c[11], vec![0.0, 0.0]);
    }

    #[test]
    fn big_m_single_state() {
        let mdp = TabularMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![vec![1.0], vec![0.0]],
            vec![1.0, 0.0],
            vec![1],
        )
        .unwrap();
        assert!((compute_big_m(&mdp).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn big_m_toy_is_bounded() {
        // longest path s0→s1→s2→…→s10 visits 11 states; the p0 average is below that
        let m = compute_big_m(&toy().0).unwrap();
        assert!(m > 1.0 && m <= 12.0, "{m}");
    }

    #[test]
    fn big_m_detects_improper_loop() {
        // action 1 at state 0 loops forever
        let mdp = TabularMdp::new(
            vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 0.0],
            vec![1],
        )
        .unwrap();
        assert!(matches!(compute_big_m(&mdp), Err(Error::Unbounded)));
    }

    #[test]
    fn zero_budget_keeps_behavior() {
        let (mdp, pi_b) = toy();
        let inst = CmdpInstance::new(mdp.clone(), deviation_cost(&mdp, &pi_b), 0.0).unwrap();
        let sol = solve_cmdp_milp(&inst).unwrap();
        let pi = extract_policy(&sol, &mdp, &pi_b).unwrap();
        assert_eq!(pi.greedy_table(mdp.n_states), pi_b.greedy_table(mdp.n_states));
        assert!((sol.objective - expected_return_exact(&mdp, &pi_b).unwrap()).abs() < 1e-9);
        assert!(sol.flow_residual(&mdp) < 1e-9);
    }

    #[test]
    fn unlimited_budget_reaches_optimum() {
        let (mdp, pi_b) = toy();
        let cost = deviation_cost(&mdp, &pi_b);
        let inst = CmdpInstance::new(mdp.clone(), cost.clone(), f64::INFINITY).unwrap();
        let sol = solve_cmdp_milp(&inst).unwrap();
        let oracle = enumerate(&mdp, &cost, f64::INFINITY).unwrap();
        assert!((sol.objective - oracle).abs() < 1e-9);
        let acts = extract_policy(&sol, &mdp, &pi_b).unwrap().greedy_table(mdp.n_states);
        assert_eq!(acts, vec![0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0]);
        // the s0 deviation is free of gain, so the cheaper action is kept
        assert!((sol.expected_cost - 8.0 / 11.0).abs() < 1e-9);
    }

    #[test]
    fn relaxation_bounds_milp() {
        let (mdp, pi_b) = toy();
        let inst = CmdpInstance::new(mdp.clone(), deviation_cost(&mdp, &pi_b), 3.0 / 11.0).unwrap();
        let relaxed = solve_relaxation(&inst).unwrap();
        let exact = solve_cmdp_milp(&inst).unwrap();
        assert!(relaxed.objective >= exact.objective - 1e-9);
        assert!(matches!(extract_policy(&relaxed, &mdp, &pi_b), Err(Error::NotOptimal)));
    }

    #[test]
    fn toy_sweep_in_aggregate_units() {
        let (mdp, pi_b) = toy();
        let inst = CmdpInstance::new(mdp.clone(), deviation_cost(&mdp, &pi_b), 0.0).unwrap();
        let f = sweep_kappa(&inst, &pi_b, &[0.0, 2.0, 6.0, 8.0, 8.0], KappaUnits::Aggregate).unwrap();
        let changes: Vec<f64> = f.iter().map(|p| p.aggregate_changes.unwrap().round()).collect();
        assert_eq!(changes, vec![0.0, 2.0, 6.0, 8.0, 8.0]);
        assert!(f.windows(2).all(|w| w[1].expected_return >= w[0].expected_return - 1e-9));
        assert_eq!(f[3], f[4]);
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let (mdp, pi_b) = toy();
        let inst = CmdpInstance::new(mdp.clone(), deviation_cost(&mdp, &pi_b), 0.0).unwrap();
        assert!(sweep_kappa(&inst, &pi_b, &[2.0, 1.0], KappaUnits::Expected).is_err());
    }

    #[test]
    fn disallowed_actions_are_never_chosen() {
        let (mut mdp, pi_b) = toy();
        let mut mask = vec![vec![true; 2]; mdp.n_states];
        mask[5][1] = false;
        mdp.allowed_actions = Some(mask);
        let inst = CmdpInstance::new(mdp.clone(), deviation_cost(&mdp, &pi_b), f64::INFINITY).unwrap();
        let sol = solve_cmdp_milp(&inst).unwrap();
        assert_eq!(sol.x[5][1], 0.0);
        assert_eq!(extract_policy(&sol, &mdp, &pi_b).unwrap().greedy(&1usize), 1);
    }

    fn random_instance() -> impl Strategy<Value = (TabularMdp, Vec<Vec<f64>>, f64)> {
        (2usize..=4).prop_flat_map(|n| {
            let rows = proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, n + 1), n * 2);
            let rewards = proptest::collection::vec(-1.0f64..1.0, n * 2);
            let start = proptest::collection::vec(0.01f64..1.0, n);
            (Just(n), rows, rewards, start, 0.0f64..3.0)
        })
        .prop_map(|(n, rows, rewards, start, kappa)| {
            let mut t = vec![vec![vec![0.0; n + 1]; 2]; n + 1];
            let mut r = vec![vec![0.0; 2]; n + 1];
            for s in 0..n {
                for a in 0..2 {
                    let w = &rows[s * 2 + a];
                    // at least 10% exit mass keeps every policy proper
                    let total: f64 = w.iter().sum::<f64>().max(1e-9);
                    let w: Vec<f64> = if total > 1e-9 { w.clone() } else { vec![1.0; n + 1] };
                    let total: f64 = w.iter().sum();
                    for j in 0..=n {
                        t[s][a][j] = 0.9 * w[j] / total;
                    }
                    t[s][a][n] += 0.1;
                    r[s][a] = rewards[s * 2 + a];
                }
            }
            t[n][0][n] = 1.0;
            t[n][1][n] = 1.0;
            let z: f64 = start.iter().sum();
            let mut p0: Vec<f64> = start.iter().map(|v| v / z).collect();
            p0.push(0.0);
            let mdp = TabularMdp::new(t, r, p0, vec![n]).unwrap();
            let pi_b = Policy::deterministic(&vec![0; n + 1], 2);
            let cost = deviation_cost(&mdp, &pi_b);
            (mdp, cost, kappa)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn milp_matches_enumeration((mdp, cost, kappa) in random_instance()) {
            let inst = CmdpInstance::new(mdp.clone(), cost.clone(), kappa).unwrap();
            let sol = solve_cmdp_milp(&inst).unwrap();
            let oracle = enumerate(&mdp, &cost, kappa).unwrap();
            prop_assert!((sol.objective - oracle).abs() < 1e-6, "{} vs {}", sol.objective, oracle);
            prop_assert!(sol.flow_residual(&mdp) < 1e-6);
            prop_assert!(sol.expected_cost <= kappa + 1e-6);
            let relaxed = solve_relaxation(&inst).unwrap();
            prop_assert!(relaxed.objective >= sol.objective - 1e-7);
        }
    }
}
