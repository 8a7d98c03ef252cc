//! Dense two-phase simplex with Bland's rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Sparse coefficients `(variable, value)`.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }
}

/// Maximize `objective · x` subject to the constraints and
/// `lower ≤ x ≤ upper`. Lower bounds must be finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const TINY_PIVOT: f64 = 1e-11;
const MAX_ITERS: usize = 200_000;

impl LpProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            constraints: Vec::new(),
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint::new(coeffs, sense, rhs));
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.lower.len().min(self.upper.len()),
            });
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("objective has a non-finite coefficient".into()));
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || self.upper[j].is_nan() {
                return Err(Error::InvalidArgument(format!("variable {j} needs a finite lower bound")));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() || c.coeffs.iter().any(|&(j, v)| j >= n || !v.is_finite()) {
                return Err(Error::InvalidArgument("malformed constraint".into()));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            let gap = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

struct Tableau {
    /// rows × (cols + 1); last column is the right-hand side
    a: Vec<Vec<f64>>,
    /// reduced costs d_j = c_B B⁻¹ A_j − c_j, last entry is the objective value
    z: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        let p = self.a[r][c];
        if p.abs() < TINY_PIVOT {
            return Err(Error::NumericalFailure(format!("pivot {p:e} below tolerance")));
        }
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.z[c];
        if f != 0.0 {
            for (v, pv) in self.z.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.z[c] = 0.0;
        }
        self.basis[r] = c;
        Ok(())
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let mut z = vec![0.0; w];
        for j in 0..self.cols {
            z[j] = -cost[j];
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for j in 0..w {
                    z[j] += cb * self.a[i][j];
                }
            }
        }
        self.z = z;
    }

    /// Bland's rule iterations over columns where `allowed[j]`.
    fn optimize(&mut self, allowed: &[bool], iters: &mut usize) -> Result<()> {
        loop {
            *iters += 1;
            if *iters > MAX_ITERS {
                return Err(Error::NumericalFailure("iteration limit reached".into()));
            }
            let Some(c) = (0..self.cols).find(|&j| allowed[j] && self.z[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                let aij = row[c];
                if aij > PIVOT_TOL {
                    let ratio = row[self.cols] / aij;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Unbounded);
            };
            self.pivot(r, c)?;
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.check()?;
    let n = problem.n_vars();
    // rows over shifted variables y = x − lower ≥ 0
    let mut rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = Vec::new();
    for c in &problem.constraints {
        let shift: f64 = c.coeffs.iter().map(|&(j, v)| v * problem.lower[j]).sum();
        rows.push((c.coeffs.clone(), c.sense, c.rhs - shift));
    }
    for j in 0..n {
        if problem.upper[j].is_finite() {
            let span = problem.upper[j] - problem.lower[j];
            if span < -FEAS_TOL {
                return Err(Error::Infeasible);
            }
            rows.push((vec![(j, 1.0)], Sense::Le, span.max(0.0)));
        }
    }
    for r in rows.iter_mut() {
        if r.2 < 0.0 {
            for c in r.0.iter_mut() {
                c.1 = -c.1;
            }
            r.1 = match r.1 {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
            r.2 = -r.2;
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let mut a = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let (mut si, mut ai) = (n, n + n_slack);
    for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        for &(j, v) in coeffs {
            a[i][j] += v;
        }
        a[i][cols] = *rhs;
        match sense {
            Sense::Le => {
                a[i][si] = 1.0;
                basis[i] = si;
                si += 1;
            }
            Sense::Ge => {
                a[i][si] = -1.0;
                si += 1;
                a[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
            Sense::Eq => {
                a[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
        }
    }
    let is_art = |j: usize| j >= n + n_slack && j < cols;
    let mut t = Tableau {
        a,
        z: Vec::new(),
        basis,
        cols,
    };
    let mut iters = 0;
    if n_art > 0 {
        let cost1: Vec<f64> = (0..cols).map(|j| if is_art(j) { -1.0 } else { 0.0 }).collect();
        t.set_objective(&cost1);
        t.optimize(&vec![true; cols], &mut iters)?;
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if t.z[cols] < -FEAS_TOL * scale {
            return Err(Error::Infeasible);
        }
        // drive zero-valued artificials out of the basis, dropping redundant rows
        let mut i = 0;
        while i < t.a.len() {
            if is_art(t.basis[i]) {
                match (0..n + n_slack).find(|&j| t.a[i][j].abs() > 1e-7) {
                    Some(j) => {
                        t.pivot(i, j)?;
                        i += 1;
                    }
                    None => {
                        t.a.remove(i);
                        t.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }
    let mut cost2 = vec![0.0; cols];
    cost2[..n].copy_from_slice(&problem.objective);
    t.set_objective(&cost2);
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art(j)).collect();
    t.optimize(&allowed, &mut iters)?;
    let mut y = vec![0.0; cols];
    for (i, &b) in t.basis.iter().enumerate() {
        y[b] = t.a[i][cols];
    }
    let x: Vec<f64> = (0..n).map(|j| problem.lower[j] + y[j].max(0.0)).collect();
    let objective = problem.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    if problem.max_violation(&x) > 1e-6 {
        return Err(Error::NumericalFailure("solution violates constraints".into()));
    }
    Ok(LpSolution { x, objective })
}
