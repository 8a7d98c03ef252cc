//! Binarization of state features and greedy DNF rule learning, with a
//! one-vs-rest decision list for several classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::{fmt_num, Clause, Comparator, Predicate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Literals `f ≥ t` and `f < t` per threshold.
    Continuous { thresholds: Vec<f64> },
    /// One-hot literals `f == v`.
    Categorical { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn continuous(name: &str, thresholds: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Continuous { thresholds },
        }
    }

    pub fn categorical(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical { values },
        }
    }

    /// Thresholds `k/n` for `k = 1..n-1`.
    pub fn uniform_grid(name: &str, n: usize) -> Self {
        Self::continuous(name, (1..n).map(|k| k as f64 / n as f64).collect())
    }
}

/// Binarized training data: one boolean column per literal, plus the raw
/// feature values.
#[derive(Clone, Debug)]
pub struct BinarizedData {
    pub literals: Vec<Predicate>,
    /// `columns[j][i]`: literal `j` holds on row `i`.
    pub columns: Vec<Vec<bool>>,
    pub raw: Vec<Vec<f64>>,
}

impl BinarizedData {
    pub fn n_rows(&self) -> usize {
        self.raw.len()
    }
}

fn check_specs(specs: &[FeatureSpec]) -> Result<()> {
    for (f, spec) in specs.iter().enumerate() {
        let empty = match &spec.kind {
            FeatureKind::Continuous { thresholds } => thresholds.is_empty(),
            FeatureKind::Categorical { values } => values.is_empty(),
        };
        if empty {
            return Err(Error::EmptyThresholds(f));
        }
    }
    Ok(())
}

pub fn binarize(specs: &[FeatureSpec], rows: &[Vec<f64>]) -> Result<BinarizedData> {
    check_specs(specs)?;
    for r in rows {
        if r.len() != specs.len() {
            return Err(Error::DimensionMismatch {
                expected: specs.len(),
                got: r.len(),
            });
        }
    }
    let mut literals = Vec::new();
    for (f, spec) in specs.iter().enumerate() {
        match &spec.kind {
            FeatureKind::Continuous { thresholds } => {
                for &t in thresholds {
                    literals.push(Predicate::ge(f, t));
                    literals.push(Predicate::lt(f, t));
                }
            }
            FeatureKind::Categorical { values } => {
                for &v in values {
                    literals.push(Predicate::eq(f, v));
                }
            }
        }
    }
    let columns = literals
        .iter()
        .map(|p| rows.iter().map(|r| p.holds(r)).collect())
        .collect();
    Ok(BinarizedData {
        literals,
        columns,
        raw: rows.to_vec(),
    })
}

/// Learned DNF for one binary task. `perfect` is false when the budget ran
/// out before every positive was covered by a pure clause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub clauses: Vec<Clause>,
    pub perfect: bool,
}

impl RuleSet {
    pub fn matches(&self, f: &[f64]) -> bool {
        self.clauses.iter().any(|c| c.matches(f))
    }
}

pub trait BinaryRuleLearner {
    /// Learns a DNF separating `positive[i]` rows from the others, over the
    /// subset `rows` of `data`.
    fn learn(&self, data: &BinarizedData, rows: &[usize], positive: &[bool]) -> Result<RuleSet>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyDnfLearner {
    pub max_clauses: usize,
    pub max_clause_len: usize,
    /// Shrink each accepted clause to the tightest grid bounds around the
    /// positives it covers.
    pub tighten: bool,
}

impl Default for GreedyDnfLearner {
    fn default() -> Self {
        Self {
            max_clauses: 8,
            max_clause_len: 6,
            tighten: true,
        }
    }
}

impl GreedyDnfLearner {
    fn margin(data: &BinarizedData, lit: usize, rows: &[usize]) -> f64 {
        let p = data.literals[lit];
        if p.cmp == Comparator::Eq {
            return 0.0;
        }
        rows.iter()
            .map(|&i| (data.raw[i][p.feature] - p.threshold).abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn grow_clause(&self, data: &BinarizedData, pos: &[usize], neg: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut lits: Vec<usize> = Vec::new();
        let mut cp = pos.to_vec();
        let mut cn = neg.to_vec();
        while !cn.is_empty() && lits.len() < self.max_clause_len {
            let mut scope = cp.clone();
            scope.extend_from_slice(&cn);
            let mut best: Option<(usize, (i64, f64, i64))> = None;
            // keep every current positive, drop as many negatives as possible
            for (j, col) in data.columns.iter().enumerate() {
                if !cp.iter().all(|&i| col[i]) {
                    continue;
                }
                let removed = cn.iter().filter(|&&i| !col[i]).count() as i64;
                if removed == 0 {
                    continue;
                }
                let key = (removed, Self::margin(data, j, &scope), 0);
                if best.as_ref().map_or(true, |(_, b)| better(&key, b)) {
                    best = Some((j, key));
                }
            }
            if best.is_none() {
                for (j, col) in data.columns.iter().enumerate() {
                    let p1 = cp.iter().filter(|&&i| col[i]).count() as i64;
                    let n1 = cn.iter().filter(|&&i| col[i]).count() as i64;
                    if p1 == 0 || n1 == cn.len() as i64 {
                        continue;
                    }
                    let key = (p1 - n1, Self::margin(data, j, &scope), p1);
                    if best.as_ref().map_or(true, |(_, b)| better(&key, b)) {
                        best = Some((j, key));
                    }
                }
            }
            let Some((j, _)) = best else { break };
            lits.push(j);
            let col = &data.columns[j];
            cp.retain(|&i| col[i]);
            cn.retain(|&i| col[i]);
        }
        (lits, cp, cn)
    }
}

// lexicographic comparison; earlier column wins exact ties
fn better(a: &(i64, f64, i64), b: &(i64, f64, i64)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    a.2 > b.2
}

impl BinaryRuleLearner for GreedyDnfLearner {
    fn learn(&self, data: &BinarizedData, rows: &[usize], positive: &[bool]) -> Result<RuleSet> {
        if rows.len() != positive.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: positive.len(),
            });
        }
        let mut uncovered: Vec<usize> = rows.iter().zip(positive).filter(|(_, &p)| p).map(|(&i, _)| i).collect();
        let neg: Vec<usize> = rows.iter().zip(positive).filter(|(_, &p)| !p).map(|(&i, _)| i).collect();
        let mut clauses = Vec::new();
        let mut perfect = true;
        while !uncovered.is_empty() {
            if clauses.len() >= self.max_clauses {
                perfect = false;
                break;
            }
            let (lits, cp, cn) = self.grow_clause(data, &uncovered, &neg);
            if cp.is_empty() || (!cn.is_empty() && cp.len() <= cn.len()) {
                perfect = false;
                break;
            }
            if !cn.is_empty() {
                perfect = false;
            }
            let mut preds: Vec<Predicate> = lits.iter().map(|&j| data.literals[j]).collect();
            if self.tighten {
                for (j, col) in data.columns.iter().enumerate() {
                    if data.literals[j].cmp != Comparator::Eq && cp.iter().all(|&i| col[i]) {
                        preds.push(data.literals[j]);
                    }
                }
            }
            let clause = Clause::new(preds).simplified();
            uncovered.retain(|&i| !clause.matches(&data.raw[i]));
            clauses.push(clause);
        }
        Ok(RuleSet { clauses, perfect })
    }
}

/// Ordered decision list: the first class whose rules match wins, the last
/// class is the default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassRules {
    pub features: Vec<FeatureSpec>,
    pub rules: Vec<(usize, RuleSet)>,
    pub default_label: usize,
}

/// Learns one rule set per class, smallest classes first, removing each
/// class from the pool after it is processed.
pub fn learn_multiclass(
    learner: &dyn BinaryRuleLearner,
    specs: &[FeatureSpec],
    rows: &[Vec<f64>],
    labels: &[usize],
) -> Result<MulticlassRules> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let data = binarize(specs, rows)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<(usize, usize)> = counts.into_iter().map(|(l, c)| (c, l)).collect();
    order.sort();
    let mut active: Vec<usize> = (0..rows.len()).collect();
    let mut rules = Vec::new();
    for &(_, label) in &order[..order.len() - 1] {
        let positive: Vec<bool> = active.iter().map(|&i| labels[i] == label).collect();
        let rs = learner.learn(&data, &active, &positive)?;
        rules.push((label, rs));
        active.retain(|&i| labels[i] != label);
    }
    Ok(MulticlassRules {
        features: specs.to_vec(),
        rules,
        default_label: order[order.len() - 1].1,
    })
}

impl MulticlassRules {
    pub fn classify(&self, f: &[f64]) -> usize {
        self.classify_detailed(f).0
    }

    /// Label and index of the matching clause; `None` for the default class.
    pub fn classify_detailed(&self, f: &[f64]) -> (usize, Option<usize>) {
        for (label, rs) in &self.rules {
            if let Some(c) = rs.clauses.iter().position(|c| c.matches(f)) {
                return (*label, Some(c));
            }
        }
        (self.default_label, None)
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rules.iter().map(|(l, _)| *l).collect();
        v.push(self.default_label);
        v
    }

    pub fn is_perfect(&self) -> bool {
        self.rules.iter().all(|(_, r)| r.perfect)
    }

    pub fn clauses_of(&self, label: usize) -> Result<&[Clause]> {
        if label == self.default_label {
            return Ok(&[]);
        }
        self.rules
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, r)| r.clauses.as_slice())
            .ok_or(Error::UnknownLabel(label))
    }

    /// Human-readable region of `label`; the default class reads "otherwise".
    pub fn describe(&self, label: usize) -> Result<String> {
        if label == self.default_label {
            return Ok("otherwise".to_string());
        }
        let clauses = self.clauses_of(label)?;
        Ok(clauses
            .iter()
            .map(|c| describe_clause(&self.features, c))
            .collect::<Vec<_>>()
            .join(" or "))
    }
}

/// Renders a clause as comma-separated intervals, e.g. `0.1≤x<0.2, y≥0.3`.
pub fn describe_clause(features: &[FeatureSpec], clause: &Clause) -> String {
    let c = clause.simplified();
    let mut parts = Vec::new();
    let mut f = 0;
    while f < features.len() {
        let preds: Vec<&Predicate> = c.0.iter().filter(|p| p.feature == f).collect();
        let name = &features[f].name;
        let mut lo: Option<&Predicate> = None;
        let mut hi: Option<&Predicate> = None;
        for p in preds {
            match p.cmp {
                Comparator::Eq => parts.push(format!("{}_{}", name, fmt_num(p.threshold))),
                Comparator::Ge | Comparator::Gt => lo = Some(p),
                Comparator::Lt | Comparator::Le => hi = Some(p),
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) => {
                let ls = if l.cmp == Comparator::Ge { "≤" } else { "<" };
                parts.push(format!("{}{}{}{}{}", fmt_num(l.threshold), ls, name, h.cmp.symbol(), fmt_num(h.threshold)));
            }
            (Some(l), None) => parts.push(format!("{}{}{}", name, l.cmp.symbol(), fmt_num(l.threshold))),
            (None, Some(h)) => parts.push(format!("{}{}{}", name, h.cmp.symbol(), fmt_num(h.threshold))),
            (None, None) => {}
        }
        f += 1;
    }
    if parts.is_empty() {
        "anywhere".to_string()
    } else {
        parts.join(", ")
    }
}
