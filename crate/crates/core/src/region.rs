//! Discrete region MDP over the diverging regions of a continuous domain,
//! and lifting of region policies back to the continuous domain.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::divergence::{collect_diverging_states_multi, DivergenceConfig};
use crate::error::{Error, Result};
use crate::explain::Aggregator;
use crate::mdp::{rng_for, rollout_with, Environment, Policy, PolicyRule, State, TabularMdp, Trajectory};
use crate::predicate::{disjoint_cells, Dnf, RegionBox};
use crate::rules::{describe_clause, BinaryRuleLearner, FeatureSpec};

const MAX_ROLLOUTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub bounds: RegionBox,
    pub description: String,
    /// Candidate whose comparison produced the region.
    pub source: usize,
    /// Behavior and candidate actions observed in the region.
    pub action_pair: (usize, usize),
}

/// Pairwise disjoint diverging regions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_of(&self, f: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.bounds.contains(f))
    }

    pub fn names(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.name.clone()).collect()
    }
}

/// Unions the diverging regions of every candidate against `pi_b` and
/// splits overlaps into disjoint cells, ordered by lower corner. Candidate `j` collects with seed
/// `seed + j`.
#[allow(clippy::too_many_arguments)]
pub fn collect_regions<E: Environment>(
    env: &E,
    pi_b: &Policy,
    candidates: &[Policy],
    starts: &[E::State],
    features: &[FeatureSpec],
    cfg: &DivergenceConfig,
    learner: &dyn BinaryRuleLearner,
    seed: u64,
) -> Result<RegionSet> {
    let mut boxes: Vec<RegionBox> = Vec::new();
    let mut meta: Vec<(usize, (usize, usize))> = Vec::new();
    for (j, cand) in candidates.iter().enumerate() {
        let set = collect_diverging_states_multi(env, pi_b, cand, starts, cfg, seed.wrapping_add(j as u64))?;
        if set.diverging().next().is_none() {
            continue;
        }
        let agg = Aggregator::train(&set, features, learner)?;
        for (label, _, clause) in agg.diverging_clauses() {
            let b = clause.to_box(features.len());
            if boxes.iter().any(|o| o.approx_eq(&b, 1e-9)) {
                continue;
            }
            boxes.push(b);
            meta.push((j, agg.action_pairs[label - 1]));
        }
    }
    let mut cells = disjoint_cells(&boxes);
    cells.sort_by(|a, b| {
        let key = |r: &RegionBox| r.lo.iter().zip(&r.hi).flat_map(|(l, h)| [*l, *h]).collect::<Vec<f64>>();
        key(&a.0)
            .iter()
            .zip(key(&b.0).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let regions = cells
        .into_iter()
        .enumerate()
        .map(|(k, (bounds, owner))| Region {
            name: format!("S{k}"),
            description: describe_clause(features, &bounds.to_clause()),
            bounds,
            source: meta[owner].0,
            action_pair: meta[owner].1,
        })
        .collect();
    Ok(RegionSet { regions })
}

/// Region labels of each state; `None` outside every region and at
/// absorbing states.
fn label_states<E: Environment>(env: &E, regions: &RegionSet, t: &Trajectory<E::State>) -> Vec<Option<usize>> {
    t.states
        .iter()
        .map(|s| if env.is_absorbing(s) { None } else { regions.region_of(&s.features()) })
        .collect()
}

/// Rollouts of `pi_b` and every candidate from each start, then one
/// perturbation rollout per region state on those rollouts and per action:
/// take the action once, then follow `pi_b`.
/// The first `starts.len() * (1 + candidates.len())` trajectories are the
/// base rollouts, start-major.
pub fn region_trajectories<E: Environment>(
    env: &E,
    pi_b: &Policy,
    candidates: &[Policy],
    regions: &RegionSet,
    starts: &[E::State],
    seed: u64,
) -> Result<Vec<Trajectory<E::State>>> {
    let max_steps = env.default_max_steps();
    let mut stream = 0u64;
    let mut out = Vec::new();
    for s0 in starts {
        env.validate_state(s0)?;
        for pi in std::iter::once(pi_b).chain(candidates) {
            let mut rng = rng_for(seed, stream);
            stream += 1;
            out.push(rollout_with(env, s0, max_steps, &mut rng, |s, _, r| pi.sample(s, r)));
        }
    }
    let mut seen: HashSet<E::State> = HashSet::new();
    let n_base = out.len();
    for ti in 0..n_base {
        let labels = label_states(env, regions, &out[ti]);
        let region_states: Vec<E::State> = out[ti]
            .states
            .iter()
            .zip(&labels)
            .filter(|(_, l)| l.is_some())
            .map(|(s, _)| s.clone())
            .collect();
        for s in region_states {
            if !seen.insert(s.clone()) {
                continue;
            }
            for a in 0..env.n_actions() {
                if out.len() >= MAX_ROLLOUTS {
                    return Err(Error::NumericalFailure("too many perturbation rollouts".into()));
                }
                let mut rng = rng_for(seed, stream);
                stream += 1;
                out.push(rollout_with(env, &s, max_steps, &mut rng, |st, k, r| if k == 0 { a } else { pi_b.sample(st, r) }));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMdp {
    /// States are the regions in order, then one absorbing state.
    pub mdp: TabularMdp,
    pub regions: RegionSet,
    /// Majority behavior action per region state.
    pub pi_b: Policy,
    /// Segments sampled per (region, action).
    pub counts: Vec<Vec<usize>>,
    /// Mean reward collected before the first region, over starts.
    pub offset: f64,
    /// Fraction of starts that reach a region before absorption.
    pub entry_fraction: f64,
}

impl RegionMdp {
    pub fn absorbing_state(&self) -> usize {
        self.regions.len()
    }

    /// Continuous-domain mean return matching a region-MDP return `j`.
    pub fn continuous_return(&self, j: f64) -> f64 {
        self.offset + self.entry_fraction * j
    }
}

#[derive(Default, Clone)]
struct PairStats {
    n: usize,
    reward: f64,
    dest: HashMap<usize, usize>,
}

/// Count-based region dynamics over region states of the first `n_base`
/// trajectories. A segment runs from such a state to the next region or
/// absorbing state; segments whose intermediate actions
/// differ from `pi_b` or that are truncated are dropped. Deterministic
/// environments count each (state, action) segment once. Pairs without
/// segments or that only return to their own region are disallowed.
pub fn build_region_mdp<E: Environment>(
    env: &E,
    pi_b: &Policy,
    trajectories: &[Trajectory<E::State>],
    n_base: usize,
    regions: &RegionSet,
) -> Result<RegionMdp> {
    let k = regions.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no regions".into()));
    }
    let na = env.n_actions();
    let mut stats = vec![vec![PairStats::default(); na]; k];
    let mut seen_seg: HashSet<(E::State, usize)> = HashSet::new();
    let mut votes = vec![vec![0usize; na]; k];
    let mut voted: HashSet<E::State> = HashSet::new();
    let dedup = env.is_deterministic();
    let mut base_states: HashSet<E::State> = HashSet::new();
    for t in &trajectories[..n_base.min(trajectories.len())] {
        for (s, l) in t.states.iter().zip(label_states(env, regions, t)) {
            if l.is_some() {
                base_states.insert(s.clone());
            }
        }
    }

    let mut start_seen: HashSet<E::State> = HashSet::new();
    let mut p0_counts = vec![0usize; k];
    let (mut n_starts, mut prefix_sum) = (0usize, 0.0);

    for (ti, t) in trajectories.iter().enumerate() {
        let labels = label_states(env, regions, t);
        for (i, lab) in labels.iter().enumerate() {
            if let Some(r) = lab {
                if base_states.contains(&t.states[i]) && voted.insert(t.states[i].clone()) {
                    votes[*r][pi_b.greedy(&t.states[i])] += 1;
                }
            }
        }
        if ti < n_base && (!dedup || start_seen.insert(t.states[0].clone())) {
            let first = labels.iter().position(|l| l.is_some());
            let end = first.unwrap_or(t.len());
            let consistent = (0..end).all(|m| t.actions[m] == pi_b.greedy(&t.states[m]));
            if consistent && (first.is_some() || t.terminated) {
                n_starts += 1;
                prefix_sum += t.rewards[..end].iter().sum::<f64>();
                if let Some(f) = first {
                    p0_counts[labels[f].unwrap()] += 1;
                }
            }
        }
        for i in 0..t.len() {
            let Some(src) = labels[i] else { continue };
            if !base_states.contains(&t.states[i]) {
                continue;
            }
            let j = (i + 1..=t.len()).find(|&j| labels[j].is_some()).unwrap_or(t.len());
            let dest = match labels[j] {
                Some(r) => r,
                None if j == t.len() && t.terminated => k,
                None => continue,
            };
            if (i + 1..j).any(|m| t.actions[m] != pi_b.greedy(&t.states[m])) {
                continue;
            }
            let a = t.actions[i];
            if dedup && !seen_seg.insert((t.states[i].clone(), a)) {
                continue;
            }
            let st = &mut stats[src][a];
            st.n += 1;
            st.reward += t.rewards[i..j].iter().sum::<f64>();
            *st.dest.entry(dest).or_insert(0) += 1;
        }
    }

    let n = k + 1;
    let mut transition = vec![vec![vec![0.0; n]; na]; n];
    let mut reward = vec![vec![0.0; na]; n];
    let mut allowed = vec![vec![false; na]; n];
    let mut counts = vec![vec![0usize; na]; k];
    for r in 0..k {
        for a in 0..na {
            let st = &stats[r][a];
            counts[r][a] = st.n;
            let self_only = st.dest.len() == 1 && st.dest.contains_key(&r);
            if st.n == 0 || self_only {
                transition[r][a][r] = 1.0;
                continue;
            }
            allowed[r][a] = true;
            reward[r][a] = st.reward / st.n as f64;
            for (&d, &c) in &st.dest {
                transition[r][a][d] = c as f64 / st.n as f64;
            }
        }
        if !allowed[r].iter().any(|&b| b) {
            return Err(Error::NoCoverage(r));
        }
    }
    for a in 0..na {
        transition[k][a][k] = 1.0;
    }
    let entered: usize = p0_counts.iter().sum();
    if entered == 0 {
        return Err(Error::NoCoverage(0));
    }
    let mut p0: Vec<f64> = p0_counts.iter().map(|&c| c as f64 / entered as f64).collect();
    p0.push(0.0);
    let mut mdp = TabularMdp::new(transition, reward, p0, vec![k])?;
    mdp.allowed_actions = Some(allowed);
    mdp.validate()?;

    let mut behavior: Vec<usize> = votes
        .iter()
        .map(|v| {
            let top = *v.iter().max().unwrap_or(&0);
            v.iter().position(|&c| c == top).unwrap_or(0)
        })
        .collect();
    behavior.push(0);
    Ok(RegionMdp {
        pi_b: Policy::deterministic(&behavior, na),
        mdp,
        regions: regions.clone(),
        counts,
        offset: prefix_sum / n_starts as f64,
        entry_fraction: entered as f64 / n_starts as f64,
    })
}

/// Convenience: regions' trajectories plus the region MDP.
pub fn region_mdp_from_rollouts<E: Environment>(
    env: &E,
    pi_b: &Policy,
    candidates: &[Policy],
    regions: &RegionSet,
    starts: &[E::State],
    seed: u64,
) -> Result<RegionMdp> {
    let trajs = region_trajectories(env, pi_b, candidates, regions, starts, seed)?;
    build_region_mdp(env, pi_b, &trajs, starts.len() * (1 + candidates.len()), regions)
}

/// Continuous policy taking `actions[k]` inside region `k` where it differs
/// from the region's behavior action, and `pi_b` elsewhere.
pub fn lift_policy(actions: &[usize], region_mdp: &RegionMdp, pi_b: &Policy) -> Result<Policy> {
    let Policy::Piecewise {
        n_actions,
        rules,
        default_action,
    } = pi_b
    else {
        return Err(Error::InvalidArgument("lifting needs a rule-based behavior policy".into()));
    };
    let k = region_mdp.regions.len();
    if actions.len() < k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: actions.len(),
        });
    }
    let mut out = Vec::new();
    for (r, region) in region_mdp.regions.regions.iter().enumerate() {
        if actions[r] >= *n_actions {
            return Err(Error::InvalidArgument(format!("action {} out of range", actions[r])));
        }
        if actions[r] != region_mdp.pi_b.greedy(&r) {
            out.push(PolicyRule {
                when: Dnf(vec![region.bounds.to_clause()]),
                action: actions[r],
            });
        }
    }
    out.extend(rules.iter().cloned());
    Ok(Policy::Piecewise {
        n_actions: *n_actions,
        rules: out,
        default_action: *default_action,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{BoxNavMdp, Point, EAST, NORTH};
    use crate::rules::GreedyDnfLearner;

    fn straight_env() -> BoxNavMdp {
        BoxNavMdp {
            step: 0.1,
            goal_x: 0.95,
            goal_reward: -0.001,
            step_reward: -0.001,
            boxes: vec![],
            initial: RegionBox::new(vec![0.0, 0.0], vec![0.1, 0.1]),
            max_steps: 100,
        }
    }

    fn east() -> Policy {
        Policy::Piecewise {
            n_actions: 3,
            rules: vec![],
            default_action: EAST,
        }
    }

    fn single_region() -> RegionSet {
        RegionSet {
            regions: vec![Region {
                name: "S0".into(),
                bounds: RegionBox::new(vec![0.5, 0.0], vec![0.6, 1.0]),
                description: String::new(),
                source: 0,
                action_pair: (EAST, NORTH),
            }],
        }
    }

    #[test]
    fn straight_path_reward_is_summed_step_cost() {
        // from x=0.52 east: 0.62, 0.72, 0.82, 0.92, 1.02 → five steps, each costing 0.001
        let env = straight_env();
        let regions = single_region();
        let s0 = Point::new(0.52, 0.55);
        let t = rollout_with(&env, &s0, 100, &mut rng_for(0, 0), |_, _, _| EAST);
        let rm = build_region_mdp(&env, &east(), &[t], 1, &regions).unwrap();
        assert!((rm.mdp.reward[0][EAST] + 0.005).abs() < 1e-12);
        assert_eq!(rm.mdp.transition[0][EAST][1], 1.0);
        assert!(rm.mdp.allowed(0, EAST));
        assert!(!rm.mdp.allowed(0, NORTH));
    }

    #[test]
    fn gaps_must_follow_behavior() {
        let env = straight_env();
        let regions = single_region();
        let s0 = Point::new(0.55, 0.55);
        // leaves the region east, then deviates north in the gap
        let t = rollout_with(&env, &s0, 100, &mut rng_for(0, 0), |_, k, _| if k == 1 { NORTH } else { EAST });
        assert!(matches!(build_region_mdp(&env, &east(), &[t], 1, &regions), Err(Error::NoCoverage(0))));
    }

    #[test]
    fn no_candidates_no_regions() {
        let env = straight_env();
        let starts = vec![Point::new(0.05, 0.05)];
        let feats = crate::domains::nav_features();
        let rs = collect_regions(&env, &east(), &[east()], &starts, &feats, &DivergenceConfig::default(), &GreedyDnfLearner::default(), 0).unwrap();
        assert!(rs.is_empty());
    }

    #[test]
    fn lifting_behavior_actions_is_identity() {
        let env = straight_env();
        let regions = single_region();
        let s0 = Point::new(0.55, 0.55);
        let trajs = region_trajectories(&env, &east(), &[], &regions, &[s0], 0).unwrap();
        let rm = build_region_mdp(&env, &east(), &trajs, 1, &regions).unwrap();
        let lifted = lift_policy(&[EAST], &rm, &east()).unwrap();
        assert_eq!(lifted, east());
        let moved = lift_policy(&[NORTH], &rm, &east()).unwrap();
        assert_eq!(moved.greedy(&s0), NORTH);
        assert_eq!(moved.greedy(&Point::new(0.65, 0.55)), EAST);
    }
}
