//! Region aggregation of diverging states, diverging paths, and the global
//! contrastive explanation with its text rendering.

use serde::{Deserialize, Serialize};

use crate::divergence::LabeledStateSet;
use crate::error::{Error, Result};
use crate::mdp::{rng_for, rollout_with, Direction, Environment, OutcomeFunctionSet, Policy, State};
use crate::outcome::{OutcomeOracle, OutcomeVerdict};
use crate::predicate::Clause;
use crate::rules::{describe_clause, learn_multiclass, BinaryRuleLearner, FeatureSpec, MulticlassRules};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegionClassifier {
    /// Every state gets this label.
    Constant(usize),
    Rules(MulticlassRules),
}

/// The aggregation classifier over diverging states plus the action pair
/// behind each nonzero label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregator {
    pub features: Vec<FeatureSpec>,
    pub classifier: RegionClassifier,
    pub action_pairs: Vec<(usize, usize)>,
}

impl Aggregator {
    pub fn train<S: State>(set: &LabeledStateSet<S>, features: &[FeatureSpec], learner: &dyn BinaryRuleLearner) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let rows: Vec<Vec<f64>> = set.entries.iter().map(|e| e.state.features()).collect();
        let labels: Vec<usize> = set.entries.iter().map(|e| e.label).collect();
        let classifier = if labels.iter().all(|&l| l == labels[0]) {
            RegionClassifier::Constant(labels[0])
        } else {
            RegionClassifier::Rules(learn_multiclass(learner, features, &rows, &labels)?)
        };
        Ok(Self {
            features: features.to_vec(),
            classifier,
            action_pairs: set.action_pairs.clone(),
        })
    }

    /// Label and clause index of the region containing `f`.
    pub fn region_of(&self, f: &[f64]) -> (usize, Option<usize>) {
        match &self.classifier {
            RegionClassifier::Constant(l) => (*l, None),
            RegionClassifier::Rules(r) => r.classify_detailed(f),
        }
    }

    pub fn clause(&self, label: usize, clause: Option<usize>) -> Option<&Clause> {
        match (&self.classifier, clause) {
            (RegionClassifier::Rules(r), Some(c)) => r.clauses_of(label).ok().and_then(|cs| cs.get(c)),
            _ => None,
        }
    }

    pub fn describe(&self, label: usize, clause: Option<usize>) -> String {
        match self.clause(label, clause) {
            Some(c) => describe_clause(&self.features, c),
            None => "elsewhere".to_string(),
        }
    }

    /// Nonzero-label clauses as (label, clause index, clause).
    pub fn diverging_clauses(&self) -> Vec<(usize, usize, Clause)> {
        let mut out = Vec::new();
        if let RegionClassifier::Rules(r) = &self.classifier {
            for (label, rs) in &r.rules {
                if *label == 0 {
                    continue;
                }
                for (i, c) in rs.clauses.iter().enumerate() {
                    out.push((*label, i, c.clone()));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub label: usize,
    pub clause: Option<usize>,
    pub description: String,
    pub action_b: usize,
    pub action_e: usize,
}

/// Regions visited by an alternative-policy rollout from `s0`, in order;
/// consecutive visits to one region count once.
pub fn diverging_path<E: Environment>(
    env: &E,
    pi_e: &Policy,
    agg: &Aggregator,
    s0: &E::State,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<PathEntry>> {
    env.validate_state(s0)?;
    let mut rng = rng_for(seed, 0);
    let t = rollout_with(env, s0, max_steps, &mut rng, |s, _, r| pi_e.sample(s, r));
    if !t.terminated {
        return Err(Error::HorizonExceeded(max_steps));
    }
    let mut path: Vec<PathEntry> = Vec::new();
    let mut last: Option<(usize, Option<usize>)> = None;
    for s in &t.states[..t.states.len() - 1] {
        let (label, clause) = agg.region_of(&s.features());
        if label == 0 {
            last = None;
            continue;
        }
        if last == Some((label, clause)) {
            continue;
        }
        last = Some((label, clause));
        let (action_b, action_e) = agg.action_pairs.get(label - 1).copied().unwrap_or((0, 0));
        path.push(PathEntry {
            label,
            clause,
            description: agg.describe(label, clause),
            action_b,
            action_e,
        });
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    /// Phrase naming the initial region, e.g. "initial region s_0".
    pub initial_region: String,
    pub key: usize,
    pub path: Vec<PathEntry>,
    pub verdict: OutcomeVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub cases: Vec<Case>,
    /// Outcome phrases: (more, less, unknown) per outcome.
    pub phrases: Vec<(String, String, String)>,
    pub directions: Vec<Direction>,
}

/// How action names and initial regions read in the rendered text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RenderStyle {
    /// "doing action 1 instead of action 0" and "in region ..." clauses.
    Indexed,
    /// "going north instead of east when reaching region ..." clauses.
    Named(Vec<String>),
}

pub struct ExplainSetup<'a, S: State> {
    pub starts: &'a [S],
    pub start_features: &'a [FeatureSpec],
    pub learner: &'a dyn BinaryRuleLearner,
    /// Names a set of start states that no rule singles out.
    pub describe_members: &'a dyn Fn(&[S], bool) -> String,
    pub seed: u64,
}

/// Keys every start by (diverging path, verdict), learns rules mapping
/// starts to keys and emits one case per rule clause. Keys without a
/// diverging path, and the default class, become a single member-described
/// case.
pub fn build_explanation<E: Environment>(
    env: &E,
    pi_e: &Policy,
    agg: &Aggregator,
    oracle: &dyn OutcomeOracle<E::State>,
    outcomes: &OutcomeFunctionSet<E::State>,
    setup: &ExplainSetup<'_, E::State>,
) -> Result<Explanation> {
    if setup.starts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    type Key = (Vec<(usize, Option<usize>)>, OutcomeVerdict);
    let mut keys: Vec<Key> = Vec::new();
    let mut key_paths: Vec<Vec<PathEntry>> = Vec::new();
    let mut labels = Vec::with_capacity(setup.starts.len());
    for s0 in setup.starts {
        let path = diverging_path(env, pi_e, agg, s0, env.default_max_steps(), setup.seed)?;
        let verdict = oracle.verdict(s0)?;
        let key: Key = (path.iter().map(|e| (e.label, e.clause)).collect(), verdict);
        let id = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                key_paths.push(path);
                keys.len() - 1
            }
        };
        labels.push(id);
    }
    let members = |id: usize| -> Vec<E::State> {
        setup
            .starts
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == id)
            .map(|(s, _)| s.clone())
            .collect()
    };
    let mut cases = Vec::new();
    if keys.len() == 1 {
        cases.push(Case {
            initial_region: (setup.describe_members)(&members(0), true),
            key: 0,
            path: key_paths[0].clone(),
            verdict: keys[0].1.clone(),
        });
    } else {
        let rows: Vec<Vec<f64>> = setup.starts.iter().map(|s| s.features()).collect();
        let h_exp = learn_multiclass(setup.learner, setup.start_features, &rows, &labels)?;
        for (id, key) in keys.iter().enumerate() {
            let clauses = h_exp.clauses_of(id)?;
            if key.0.is_empty() || clauses.is_empty() {
                cases.push(Case {
                    initial_region: format!("initial region {}", (setup.describe_members)(&members(id), false)),
                    key: id,
                    path: key_paths[id].clone(),
                    verdict: key.1.clone(),
                });
                continue;
            }
            for c in clauses {
                cases.push(Case {
                    initial_region: format!("initial region {}", describe_clause(setup.start_features, c)),
                    key: id,
                    path: key_paths[id].clone(),
                    verdict: key.1.clone(),
                });
            }
        }
    }
    Ok(Explanation {
        cases,
        phrases: outcomes
            .outcomes
            .iter()
            .map(|o| (o.more_phrase.clone(), o.less_phrase.clone(), o.unknown_phrase.clone()))
            .collect(),
        directions: outcomes.outcomes.iter().map(|o| o.direction).collect(),
    })
}

/// Member description for tabular starts: "s_6⋯s_10" for a contiguous run,
/// otherwise a comma-separated list.
pub fn describe_tabular_members(states: &[usize]) -> String {
    let mut v = states.to_vec();
    v.sort_unstable();
    v.dedup();
    match v.len() {
        0 => "none".to_string(),
        1 => format!("s_{}", v[0]),
        n if v[n - 1] - v[0] == n - 1 => format!("s_{}⋯s_{}", v[0], v[n - 1]),
        _ => v.iter().map(|s| format!("s_{s}")).collect::<Vec<_>>().join(", "),
    }
}

fn outcome_text(expl: &Explanation, verdict: &OutcomeVerdict) -> String {
    let phrases: Vec<&str> = verdict
        .raw
        .iter()
        .zip(&expl.phrases)
        .map(|(&r, (more, less, unknown))| match r {
            1 => more.as_str(),
            -1 => less.as_str(),
            _ => unknown.as_str(),
        })
        .collect();
    let oriented = verdict.oriented(&expl.directions);
    let mixed = oriented.contains(&1) && oriented.contains(&-1);
    match phrases.len() {
        0 => String::new(),
        1 => phrases[0].to_string(),
        n => format!(
            "{} {} {}",
            phrases[..n - 1].join(", "),
            if mixed { "but" } else { "and" },
            phrases[n - 1]
        ),
    }
}

fn action_name(style: &RenderStyle, a: usize) -> String {
    match style {
        RenderStyle::Indexed => format!("action {a}"),
        RenderStyle::Named(names) => names.get(a).cloned().unwrap_or_else(|| format!("action {a}")),
    }
}

pub fn render_case(expl: &Explanation, case: &Case, style: &RenderStyle) -> String {
    let head = format!("Starting from {}", case.initial_region);
    if case.path.is_empty() {
        return format!("{head}, two policies, π_b and π_e act the same");
    }
    let outcome = outcome_text(expl, &case.verdict);
    match style {
        RenderStyle::Indexed => {
            let steps: Vec<String> = case
                .path
                .iter()
                .map(|e| {
                    format!(
                        "in region {}, doing {} instead of {}",
                        e.description,
                        action_name(style, e.action_e),
                        action_name(style, e.action_b)
                    )
                })
                .collect();
            format!("{head}, {} will lead to {outcome}", steps.join(" and then "))
        }
        RenderStyle::Named(_) => {
            let steps: Vec<String> = case
                .path
                .iter()
                .map(|e| {
                    format!(
                        "going {} instead of {} when reaching region {}",
                        action_name(style, e.action_e),
                        action_name(style, e.action_b),
                        e.description
                    )
                })
                .collect();
            format!("{head}, {}, will lead to {outcome}", steps.join(", then "))
        }
    }
}

/// One paragraph per case; every case but the last ends with ";".
pub fn render(expl: &Explanation, style: &RenderStyle) -> String {
    let n = expl.cases.len();
    let mut out = String::new();
    for (i, c) in expl.cases.iter().enumerate() {
        out.push_str(&render_case(expl, c, style));
        out.push_str(if i + 1 == n { ".\n" } else { ";\n\n" });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{collect_diverging_states_multi, DivergenceConfig};
    use crate::domains::{tabular_features, toy_domain};
    use crate::outcome::{BootstrapConfig, OnlineOracle};
    use crate::rules::GreedyDnfLearner;

    fn toy_aggregator() -> (crate::domains::ToyDomain, Aggregator) {
        let d = toy_domain();
        let starts: Vec<usize> = (0..11).collect();
        let set = collect_diverging_states_multi(&d.mdp, &d.pi_b, &d.pi_e, &starts, &DivergenceConfig::default(), 0).unwrap();
        let agg = Aggregator::train(&set, &tabular_features(12), &GreedyDnfLearner::default()).unwrap();
        (d, agg)
    }

    #[test]
    fn toy_paths() {
        let (d, agg) = toy_aggregator();
        let labels = |s0: usize| -> Vec<String> {
            diverging_path(&d.mdp, &d.pi_e, &agg, &s0, 100, 0)
                .unwrap()
                .iter()
                .map(|e| e.description.clone())
                .collect()
        };
        assert_eq!(labels(0), vec!["s_1", "s_5"]);
        assert_eq!(labels(2), vec!["s_5"]);
        assert!(labels(7).is_empty());
        let p = diverging_path(&d.mdp, &d.pi_e, &agg, &0, 100, 0).unwrap();
        assert_eq!((p[0].action_b, p[0].action_e), (0, 1));
    }

    #[test]
    fn toy_explanation_has_seven_cases() {
        let (d, agg) = toy_aggregator();
        let oracle = OnlineOracle {
            env: &d.mdp,
            pi_b: &d.pi_b,
            pi_e: &d.pi_e,
            outcomes: &d.outcomes,
            cfg: BootstrapConfig {
                n_bootstrap: 20,
                n_rollouts: 5,
                ci_level: 0.95,
            },
            seed: 1,
        };
        let starts: Vec<usize> = (0..11).collect();
        let describe = |m: &[usize], _: bool| describe_tabular_members(m);
        let setup = ExplainSetup {
            starts: &starts,
            start_features: &tabular_features(12),
            learner: &GreedyDnfLearner::default(),
            describe_members: &describe,
            seed: 0,
        };
        let e = build_explanation(&d.mdp, &d.pi_e, &agg, &oracle, &d.outcomes, &setup).unwrap();
        let regions: Vec<&str> = e.cases.iter().map(|c| c.initial_region.as_str()).collect();
        assert_eq!(
            regions,
            vec![
                "initial region s_0",
                "initial region s_1",
                "initial region s_2",
                "initial region s_3",
                "initial region s_4",
                "initial region s_5",
                "initial region s_6⋯s_10"
            ]
        );
        let text = render(&e, &RenderStyle::Indexed);
        let first = text.split(";\n\n").next().unwrap();
        assert_eq!(
            first,
            "Starting from initial region s_0, in region s_1, doing action 1 instead of action 0 and then in region s_5, doing action 1 instead of action 0 will lead to longer trajectory but more visits to desired states"
        );
        assert!(text.ends_with("Starting from initial region s_6⋯s_10, two policies, π_b and π_e act the same.\n"));
    }

    #[test]
    fn identical_policies_yield_agreement_only() {
        let d = toy_domain();
        let starts: Vec<usize> = (0..11).collect();
        let set = collect_diverging_states_multi(&d.mdp, &d.pi_b, &d.pi_b, &starts, &DivergenceConfig::default(), 0).unwrap();
        let agg = Aggregator::train(&set, &tabular_features(12), &GreedyDnfLearner::default()).unwrap();
        let oracle = OnlineOracle {
            env: &d.mdp,
            pi_b: &d.pi_b,
            pi_e: &d.pi_b,
            outcomes: &d.outcomes,
            cfg: BootstrapConfig::default(),
            seed: 1,
        };
        let describe = |m: &[usize], _: bool| describe_tabular_members(m);
        let setup = ExplainSetup {
            starts: &starts,
            start_features: &tabular_features(12),
            learner: &GreedyDnfLearner::default(),
            describe_members: &describe,
            seed: 0,
        };
        let e = build_explanation(&d.mdp, &d.pi_b, &agg, &oracle, &d.outcomes, &setup).unwrap();
        assert_eq!(e.cases.len(), 1);
        assert!(e.cases[0].path.is_empty());
        assert!(render(&e, &RenderStyle::Indexed).contains("act the same"));
    }

    #[test]
    fn member_ranges() {
        assert_eq!(describe_tabular_members(&[8, 6, 7, 9, 10]), "s_6⋯s_10");
        assert_eq!(describe_tabular_members(&[1, 3]), "s_1, s_3");
        assert_eq!(describe_tabular_members(&[4]), "s_4");
    }
}
