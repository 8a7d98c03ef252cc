//! Threshold predicates over state features, conjunctive clauses, and the
//! half-open boxes they describe.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Ge => "≥",
            Comparator::Gt => ">",
            Comparator::Lt => "<",
            Comparator::Le => "≤",
            Comparator::Eq => "=",
        }
    }

    fn is_lower(self) -> bool {
        matches!(self, Comparator::Ge | Comparator::Gt)
    }

    fn is_upper(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: usize,
    pub cmp: Comparator,
    pub threshold: f64,
}

impl Predicate {
    pub fn new(feature: usize, cmp: Comparator, threshold: f64) -> Self {
        Self {
            feature,
            cmp,
            threshold,
        }
    }

    pub fn ge(feature: usize, threshold: f64) -> Self {
        Self::new(feature, Comparator::Ge, threshold)
    }

    pub fn lt(feature: usize, threshold: f64) -> Self {
        Self::new(feature, Comparator::Lt, threshold)
    }

    pub fn eq(feature: usize, value: f64) -> Self {
        Self::new(feature, Comparator::Eq, value)
    }

    pub fn holds(&self, features: &[f64]) -> bool {
        let v = features[self.feature];
        match self.cmp {
            Comparator::Ge => v >= self.threshold,
            Comparator::Gt => v > self.threshold,
            Comparator::Lt => v < self.threshold,
            Comparator::Le => v <= self.threshold,
            Comparator::Eq => v == self.threshold,
        }
    }

    /// The complementary predicate, when one exists in the same vocabulary.
    pub fn negate(&self) -> Option<Self> {
        let cmp = match self.cmp {
            Comparator::Ge => Comparator::Lt,
            Comparator::Gt => Comparator::Le,
            Comparator::Lt => Comparator::Ge,
            Comparator::Le => Comparator::Gt,
            Comparator::Eq => return None,
        };
        Some(Self::new(self.feature, cmp, self.threshold))
    }
}

/// A conjunction of predicates. The empty clause matches everything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clause(pub Vec<Predicate>);

impl Clause {
    pub fn new(preds: Vec<Predicate>) -> Self {
        Clause(preds)
    }

    pub fn matches(&self, features: &[f64]) -> bool {
        self.0.iter().all(|p| p.holds(features))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Drops duplicate and implied predicates: per feature only the tightest
    /// lower bound and the tightest upper bound survive.
    pub fn simplified(&self) -> Clause {
        let mut out: Vec<Predicate> = Vec::new();
        for p in &self.0 {
            if p.cmp == Comparator::Eq {
                if !out.iter().any(|q| q == p) {
                    out.push(*p);
                }
                continue;
            }
            let slot = out.iter_mut().find(|q| {
                q.feature == p.feature
                    && ((q.cmp.is_lower() && p.cmp.is_lower()) || (q.cmp.is_upper() && p.cmp.is_upper()))
            });
            match slot {
                None => out.push(*p),
                Some(q) => {
                    if tighter(p, q) {
                        *q = *p;
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            a.feature
                .cmp(&b.feature)
                .then(rank(a.cmp).cmp(&rank(b.cmp)))
                .then(a.threshold.total_cmp(&b.threshold))
        });
        Clause(out)
    }

    /// Axis-aligned box over `dims` features implied by the clause.
    pub fn to_box(&self, dims: usize) -> RegionBox {
        let mut b = RegionBox::unbounded(dims);
        for p in &self.0 {
            match p.cmp {
                Comparator::Ge | Comparator::Gt => b.lo[p.feature] = b.lo[p.feature].max(p.threshold),
                Comparator::Lt | Comparator::Le => b.hi[p.feature] = b.hi[p.feature].min(p.threshold),
                Comparator::Eq => {
                    b.lo[p.feature] = p.threshold;
                    b.hi[p.feature] = p.threshold;
                }
            }
        }
        b
    }
}

fn rank(c: Comparator) -> u8 {
    match c {
        Comparator::Eq => 0,
        Comparator::Ge | Comparator::Gt => 1,
        Comparator::Lt | Comparator::Le => 2,
    }
}

// whether `p` is at least as restrictive as `q` (same feature, same side)
fn tighter(p: &Predicate, q: &Predicate) -> bool {
    if p.cmp.is_lower() {
        p.threshold > q.threshold || (p.threshold == q.threshold && p.cmp == Comparator::Gt)
    } else {
        p.threshold < q.threshold || (p.threshold == q.threshold && p.cmp == Comparator::Lt)
    }
}

/// Disjunction of clauses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dnf(pub Vec<Clause>);

impl Dnf {
    pub fn matches(&self, features: &[f64]) -> bool {
        self.0.iter().any(|c| c.matches(features))
    }

    pub fn matching_clause(&self, features: &[f64]) -> Option<usize> {
        self.0.iter().position(|c| c.matches(features))
    }
}

/// Half-open box `lo ≤ f < hi` per feature; infinite bounds are open sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RegionBox {
    pub fn unbounded(dims: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dims],
            hi: vec![f64::INFINITY; dims],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, f: &[f64]) -> bool {
        (0..self.dims()).all(|i| f[i] >= self.lo[i] && f[i] < self.hi[i])
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dims()).any(|i| self.lo[i] >= self.hi[i])
    }

    pub fn intersection(&self, other: &RegionBox) -> RegionBox {
        RegionBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn overlaps(&self, other: &RegionBox) -> bool {
        !self.intersection(other).is_empty()
    }

    /// Clamps open sides to a finite domain.
    pub fn clamped(&self, lo: &[f64], hi: &[f64]) -> RegionBox {
        RegionBox {
            lo: self.lo.iter().zip(lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    /// Half-open predicates for the finite sides.
    pub fn to_clause(&self) -> Clause {
        let mut preds = Vec::new();
        for i in 0..self.dims() {
            if self.lo[i].is_finite() {
                preds.push(Predicate::ge(i, self.lo[i]));
            }
            if self.hi[i].is_finite() {
                preds.push(Predicate::lt(i, self.hi[i]));
            }
        }
        Clause(preds)
    }

    /// Approximate equality of bounds, used to compare learned boxes.
    pub fn approx_eq(&self, other: &RegionBox, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a == b) || (a - b).abs() <= tol;
        self.dims() == other.dims()
            && (0..self.dims()).all(|i| close(self.lo[i], other.lo[i]) && close(self.hi[i], other.hi[i]))
    }
}

/// Renders a threshold without binary-expansion noise (0.15000000000000002 → "0.15").
pub fn fmt_num(v: f64) -> String {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{}", r)
    }
}

/// Splits boxes so that the result is pairwise disjoint and covers the same
/// union. Non-overlapping inputs are returned untouched and in order; an
/// overlapping group is replaced by the grid cells of its boundaries that lie
/// inside at least one member. The second tuple field is the index of the
/// first input box covering each output piece.
pub fn disjoint_cells(boxes: &[RegionBox]) -> Vec<(RegionBox, usize)> {
    let n = boxes.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn find(g: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while g[r] != r {
            r = g[r];
        }
        g[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if boxes[i].overlaps(&boxes[j]) {
                let (a, b) = (find(&mut group, i), find(&mut group, j));
                if a != b {
                    group[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] {
            continue;
        }
        let root = find(&mut group, i);
        let members: Vec<usize> = (0..n).filter(|&j| find(&mut group, j) == root).collect();
        for &j in &members {
            done[j] = true;
        }
        if members.len() == 1 {
            out.push((boxes[i].clone(), i));
            continue;
        }
        let dims = boxes[i].dims();
        let mut cuts: Vec<Vec<f64>> = Vec::with_capacity(dims);
        for d in 0..dims {
            let mut c: Vec<f64> = members
                .iter()
                .flat_map(|&j| [boxes[j].lo[d], boxes[j].hi[d]])
                .collect();
            c.sort_by(|a, b| a.total_cmp(b));
            c.dedup();
            cuts.push(c);
        }
        let mut idx = vec![0usize; dims];
        'cells: loop {
            let lo: Vec<f64> = (0..dims).map(|d| cuts[d][idx[d]]).collect();
            let hi: Vec<f64> = (0..dims).map(|d| cuts[d][idx[d] + 1]).collect();
            let cell = RegionBox::new(lo, hi);
            if let Some(&owner) = members.iter().find(|&&j| {
                let inter = boxes[j].intersection(&cell);
                !inter.is_empty() && inter.approx_eq(&cell, 0.0)
            }) {
                out.push((cell, owner));
            }
            let mut d = 0;
            loop {
                if d == dims {
                    break 'cells;
                }
                idx[d] += 1;
                if idx[d] + 1 < cuts[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplify_keeps_tightest_bounds() {
        let c = Clause(vec![
            Predicate::ge(0, 0.1),
            Predicate::ge(0, 0.2),
            Predicate::lt(1, 0.5),
            Predicate::lt(1, 0.4),
        ]);
        let s = c.simplified();
        assert_eq!(s.0, vec![Predicate::ge(0, 0.2), Predicate::lt(1, 0.4)]);
    }

    #[test]
    fn duplicate_predicates_collapse() {
        let c = Clause(vec![Predicate::ge(0, 0.1), Predicate::ge(0, 0.1)]);
        assert_eq!(c.simplified().len(), 1);
    }

    #[test]
    fn box_from_clause_is_half_open() {
        let b = Clause(vec![Predicate::ge(0, 0.1), Predicate::lt(0, 0.2)]).to_box(1);
        assert!(b.contains(&[0.1]));
        assert!(!b.contains(&[0.2]));
    }

    #[test]
    fn fmt_num_strips_noise() {
        assert_eq!(fmt_num(3.0 * 0.05), "0.15");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
    }

    #[test]
    fn disjoint_cells_leave_separate_boxes_alone() {
        let a = RegionBox::new(vec![0.0, 0.0], vec![0.1, 0.1]);
        let b = RegionBox::new(vec![0.2, 0.0], vec![0.3, 0.1]);
        let out = disjoint_cells(&[a.clone(), b.clone()]);
        assert_eq!(out, vec![(a, 0), (b, 1)]);
    }

    #[test]
    fn disjoint_cells_split_overlaps() {
        let a = RegionBox::new(vec![0.0, 0.0], vec![0.2, 0.1]);
        let b = RegionBox::new(vec![0.1, 0.0], vec![0.3, 0.1]);
        let out = disjoint_cells(&[a.clone(), b.clone()]);
        assert_eq!(out.len(), 3);
        for (i, (x, _)) in out.iter().enumerate() {
            for (y, _) in out.iter().skip(i + 1) {
                assert!(!x.overlaps(y));
            }
        }
        // union preserved on sample points
        for p in [[0.05, 0.05], [0.15, 0.05], [0.25, 0.05]] {
            assert_eq!(out.iter().filter(|(c, _)| c.contains(&p)).count(), 1);
        }
    }
}
