//! Episodic MDPs, policies, trajectories and outcome functions.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::hash::Hash;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predicate::{Dnf, RegionBox};

pub type SimRng = ChaCha8Rng;

/// Deterministic generator for stream `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub trait State: Clone + Debug + PartialEq + Eq + Hash + Send + Sync + 'static {
    fn features(&self) -> Vec<f64>;

    /// Position in a tabular state space, if there is one.
    fn index(&self) -> Option<usize> {
        None
    }

    fn repr(&self) -> String;

    fn parse(s: &str) -> Result<Self>;
}

impl State for usize {
    fn features(&self) -> Vec<f64> {
        vec![*self as f64]
    }

    fn index(&self) -> Option<usize> {
        Some(*self)
    }

    fn repr(&self) -> String {
        self.to_string()
    }

    fn parse(s: &str) -> Result<Self> {
        s.trim()
            .trim_start_matches("s_")
            .trim_start_matches('s')
            .parse()
            .map_err(|_| Error::InvalidState(s.to_string()))
    }
}

/// Continuous 2-D position. Equality and hashing are bitwise.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.x.to_bits() == other.x.to_bits() && self.y.to_bits() == other.y.to_bits()
    }
}

impl Eq for Point {}

impl Hash for Point {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.x.to_bits().hash(state);
        self.y.to_bits().hash(state);
    }
}

impl State for Point {
    fn features(&self) -> Vec<f64> {
        vec![self.x, self.y]
    }

    fn repr(&self) -> String {
        format!("({};{})", self.x, self.y)
    }

    fn parse(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut it = t.split(';');
        let bad = || Error::InvalidState(s.to_string());
        let x = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let y = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(Point { x, y })
    }
}

pub trait Environment: Sync {
    type State: State;

    fn n_actions(&self) -> usize;

    fn is_absorbing(&self, s: &Self::State) -> bool;

    fn validate_state(&self, s: &Self::State) -> Result<()>;

    /// Successor distribution; probabilities sum to one.
    fn transitions(&self, s: &Self::State, a: usize) -> Vec<(Self::State, f64)>;

    fn reward(&self, s: &Self::State, a: usize) -> f64;

    fn is_deterministic(&self) -> bool;

    /// Actions a solver may assign at `s`.
    fn is_allowed(&self, _s: &Self::State, _a: usize) -> bool {
        true
    }

    fn default_max_steps(&self) -> usize;

    fn sample_next(&self, s: &Self::State, a: usize, rng: &mut SimRng) -> Self::State {
        let tr = self.transitions(s, a);
        if tr.len() == 1 {
            return tr[0].0.clone();
        }
        let probs: Vec<f64> = tr.iter().map(|(_, p)| *p).collect();
        tr[sample_index(&probs, rng)].0.clone()
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Self::State;
}

/// Finite MDP with explicit tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub p0: Vec<f64>,
    pub absorbing: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_actions: Option<Vec<Vec<bool>>>,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        p0: Vec<f64>,
        absorbing: Vec<usize>,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map(|r| r.len()).unwrap_or(0);
        let m = TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            p0,
            absorbing,
            allowed_actions: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.n_states == 0 || self.n_actions == 0 {
            return bad("empty state or action space".into());
        }
        if self.transition.len() != self.n_states || self.reward.len() != self.n_states {
            return bad("table length differs from n_states".into());
        }
        if self.p0.len() != self.n_states {
            return bad("p0 length differs from n_states".into());
        }
        for s in 0..self.n_states {
            if self.transition[s].len() != self.n_actions || self.reward[s].len() != self.n_actions {
                return bad(format!("state {s}: table width differs from n_actions"));
            }
            for a in 0..self.n_actions {
                let row = &self.transition[s][a];
                if row.len() != self.n_states {
                    return bad(format!("T[{s}][{a}] has wrong length"));
                }
                if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                    return bad(format!("T[{s}][{a}] has a probability outside [0,1]"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("T[{s}][{a}] sums to {sum}"));
                }
                if !self.reward[s][a].is_finite() {
                    return bad(format!("R[{s}][{a}] is not finite"));
                }
            }
        }
        if self.absorbing.is_empty() {
            return bad("no absorbing state".into());
        }
        for &t in &self.absorbing {
            if t >= self.n_states {
                return bad(format!("absorbing state {t} out of range"));
            }
            if self.reward[t].iter().any(|&r| r != 0.0) {
                return bad(format!("absorbing state {t} has nonzero reward"));
            }
            if self.p0[t] > 0.0 {
                return bad(format!("absorbing state {t} has initial mass"));
            }
        }
        let p0sum: f64 = self.p0.iter().sum();
        if self.p0.iter().any(|&p| p < 0.0) || (p0sum - 1.0).abs() > 1e-9 {
            return bad(format!("p0 is not a distribution (sum {p0sum})"));
        }
        if let Some(mask) = &self.allowed_actions {
            if mask.len() != self.n_states || mask.iter().any(|r| r.len() != self.n_actions) {
                return bad("allowed_actions has wrong shape".into());
            }
            for s in self.transient_states() {
                if !mask[s].iter().any(|&b| b) {
                    return bad(format!("state {s} has no allowed action"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: TabularMdp = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn absorbing_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_states];
        for &t in &self.absorbing {
            m[t] = true;
        }
        m
    }

    pub fn transient_states(&self) -> Vec<usize> {
        let mask = self.absorbing_mask();
        (0..self.n_states).filter(|&s| !mask[s]).collect()
    }

    pub fn allowed(&self, s: usize, a: usize) -> bool {
        self.allowed_actions.as_ref().map_or(true, |m| m[s][a])
    }

    pub fn p0_support(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.p0[s] > 0.0).collect()
    }

    /// Whether p0 is uniform on its support.
    pub fn p0_is_uniform(&self) -> bool {
        let sup = self.p0_support();
        let u = 1.0 / sup.len() as f64;
        sup.iter().all(|&s| (self.p0[s] - u).abs() <= 1e-9)
    }
}

impl Environment for TabularMdp {
    type State = usize;

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn is_absorbing(&self, s: &usize) -> bool {
        self.absorbing.contains(s)
    }

    fn validate_state(&self, s: &usize) -> Result<()> {
        if *s >= self.n_states {
            return Err(Error::InvalidState(format!("state {s} out of range")));
        }
        Ok(())
    }

    fn transitions(&self, s: &usize, a: usize) -> Vec<(usize, f64)> {
        self.transition[*s][a]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, &p)| (j, p))
            .collect()
    }

    fn reward(&self, s: &usize, a: usize) -> f64 {
        self.reward[*s][a]
    }

    fn is_deterministic(&self) -> bool {
        self.transition
            .iter()
            .flatten()
            .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    fn is_allowed(&self, s: &usize, a: usize) -> bool {
        self.allowed(*s, a)
    }

    fn default_max_steps(&self) -> usize {
        1000
    }

    fn sample_initial(&self, rng: &mut SimRng) -> usize {
        sample_index(&self.p0, rng)
    }
}

/// A reward box of the navigation domain; closed on every side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub value: f64,
}

impl RewardBox {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x.0 && p.x <= self.x.1 && p.y >= self.y.0 && p.y <= self.y.1
    }
}

pub const EAST: usize = 0;
pub const NORTH: usize = 1;
pub const SOUTH: usize = 2;

/// Deterministic continuous navigation: actions east, north and south move
/// by a fixed step; positions past the goal line are absorbing. Rewards are
/// those of the arrival position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxNavMdp {
    pub step: f64,
    pub goal_x: f64,
    pub goal_reward: f64,
    pub step_reward: f64,
    /// Checked in order; first match wins.
    pub boxes: Vec<RewardBox>,
    pub initial: RegionBox,
    pub max_steps: usize,
}

impl BoxNavMdp {
    pub fn next(&self, s: &Point, a: usize) -> Point {
        match a {
            EAST => Point::new(s.x + self.step, s.y),
            NORTH => Point::new(s.x, s.y + self.step),
            SOUTH => Point::new(s.x, s.y - self.step),
            _ => panic!("action {a} out of range"),
        }
    }

    pub fn arrival_reward(&self, p: &Point) -> f64 {
        if p.x > self.goal_x {
            return self.goal_reward;
        }
        self.boxes
            .iter()
            .find(|b| b.contains(p))
            .map_or(self.step_reward, |b| b.value)
    }

    pub fn action_name(a: usize) -> &'static str {
        match a {
            EAST => "east",
            NORTH => "north",
            SOUTH => "south",
            _ => "unknown",
        }
    }
}

impl Environment for BoxNavMdp {
    type State = Point;

    fn n_actions(&self) -> usize {
        3
    }

    fn is_absorbing(&self, s: &Point) -> bool {
        s.x > self.goal_x
    }

    fn validate_state(&self, s: &Point) -> Result<()> {
        if !s.x.is_finite() || !s.y.is_finite() {
            return Err(Error::InvalidState(s.repr()));
        }
        Ok(())
    }

    fn transitions(&self, s: &Point, a: usize) -> Vec<(Point, f64)> {
        vec![(self.next(s, a), 1.0)]
    }

    fn reward(&self, s: &Point, a: usize) -> f64 {
        if self.is_absorbing(s) {
            return 0.0;
        }
        self.arrival_reward(&self.next(s, a))
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn default_max_steps(&self) -> usize {
        self.max_steps
    }

    fn sample_next(&self, s: &Point, a: usize, _rng: &mut SimRng) -> Point {
        self.next(s, a)
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Point {
        let lo = &self.initial.lo;
        let hi = &self.initial.hi;
        Point::new(rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub when: Dnf,
    pub action: usize,
}

/// Stochastic or rule-based policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `probs[s][a]`
    Tabular { probs: Vec<Vec<f64>> },
    /// First matching rule decides; otherwise `default_action`.
    Piecewise {
        n_actions: usize,
        rules: Vec<PolicyRule>,
        default_action: usize,
    },
}

impl Policy {
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut r = vec![0.0; n_actions];
                r[a] = 1.0;
                r
            })
            .collect();
        Policy::Tabular { probs }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Tabular { probs } => probs.first().map_or(0, |r| r.len()),
            Policy::Piecewise { n_actions, .. } => *n_actions,
        }
    }

    pub fn validate(&self, n_actions: usize, n_states: Option<usize>) -> Result<()> {
        if self.n_actions() != n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_actions,
                got: self.n_actions(),
            });
        }
        match self {
            Policy::Tabular { probs } => {
                if let Some(n) = n_states {
                    if probs.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: probs.len(),
                        });
                    }
                }
                for (s, row) in probs.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.len() != n_actions || row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidModel(format!("policy row {s} is not a distribution")));
                    }
                }
            }
            Policy::Piecewise {
                rules, default_action, ..
            } => {
                if *default_action >= n_actions || rules.iter().any(|r| r.action >= n_actions) {
                    return Err(Error::InvalidModel("policy action out of range".into()));
                }
            }
        }
        Ok(())
    }

    pub fn probs<S: State>(&self, s: &S) -> Vec<f64> {
        match self {
            Policy::Tabular { probs } => {
                let i = s
                    .index()
                    .expect("tabular policy applied to a state without an index");
                probs[i].clone()
            }
            Policy::Piecewise { n_actions, .. } => {
                let mut v = vec![0.0; *n_actions];
                v[self.greedy(s)] = 1.0;
                v
            }
        }
    }

    /// Most likely action, ties to the lowest index.
    pub fn greedy<S: State>(&self, s: &S) -> usize {
        match self {
            Policy::Tabular { probs } => {
                let i = s
                    .index()
                    .expect("tabular policy applied to a state without an index");
                argmax(&probs[i])
            }
            Policy::Piecewise {
                rules, default_action, ..
            } => {
                let f = s.features();
                rules
                    .iter()
                    .find(|r| r.when.matches(&f))
                    .map_or(*default_action, |r| r.action)
            }
        }
    }

    pub fn sample<S: State>(&self, s: &S, rng: &mut SimRng) -> usize {
        match self {
            Policy::Tabular { .. } => sample_index(&self.probs(s), rng),
            Policy::Piecewise { .. } => self.greedy(s),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Greedy action per state of a tabular space.
    pub fn greedy_table(&self, n_states: usize) -> Vec<usize> {
        (0..n_states).map(|s| self.greedy(&s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    /// Visited states, including the final one.
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Rolls out `choose` from `s0` until absorption or `max_steps` actions.
pub fn rollout_with<E, F>(env: &E, s0: &E::State, max_steps: usize, rng: &mut SimRng, mut choose: F) -> Trajectory<E::State>
where
    E: Environment + ?Sized,
    F: FnMut(&E::State, usize, &mut SimRng) -> usize,
{
    let mut t = Trajectory {
        states: vec![s0.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: env.is_absorbing(s0),
    };
    let mut s = s0.clone();
    while !t.terminated && t.actions.len() < max_steps {
        let a = choose(&s, t.actions.len(), rng);
        let r = env.reward(&s, a);
        let next = env.sample_next(&s, a, rng);
        t.actions.push(a);
        t.rewards.push(r);
        t.terminated = env.is_absorbing(&next);
        t.states.push(next.clone());
        s = next;
    }
    t
}

pub fn rollout<E: Environment + ?Sized>(
    env: &E,
    policy: &Policy,
    s0: &E::State,
    max_steps: usize,
    seed: u64,
) -> Result<Trajectory<E::State>> {
    env.validate_state(s0)?;
    if env.is_absorbing(s0) {
        return Err(Error::InvalidState(format!("{} is absorbing", s0.repr())));
    }
    let mut rng = rng_for(seed, 0);
    Ok(rollout_with(env, s0, max_steps, &mut rng, |s, _, r| policy.sample(s, r)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::HigherIsBetter => 1.0,
            Direction::LowerIsBetter => -1.0,
        }
    }
}

pub type OutcomeFn<S> = Arc<dyn Fn(&S, usize) -> f64 + Send + Sync>;

/// Per-step outcome `g(s, a)`; its cumulative sum over a trajectory is the
/// outcome value `G`. Phrases complete "lead to ___".
#[derive(Clone)]
pub struct Outcome<S> {
    pub name: String,
    pub direction: Direction,
    pub more_phrase: String,
    pub less_phrase: String,
    pub unknown_phrase: String,
    pub g: OutcomeFn<S>,
}

impl<S> Debug for Outcome<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Outcome")
            .field("name", &self.name)
            .field("direction", &self.direction)
            .finish()
    }
}

impl<S> Outcome<S> {
    pub fn new(
        name: &str,
        direction: Direction,
        more_phrase: &str,
        less_phrase: &str,
        g: impl Fn(&S, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            direction,
            more_phrase: more_phrase.to_string(),
            less_phrase: less_phrase.to_string(),
            unknown_phrase: format!("unknown change in {name}"),
            g: Arc::new(g),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OutcomeFunctionSet<S> {
    pub outcomes: Vec<Outcome<S>>,
}

impl<S> OutcomeFunctionSet<S> {
    pub fn new(outcomes: Vec<Outcome<S>>) -> Self {
        Self { outcomes }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn step(&self, s: &S, a: usize) -> Vec<f64> {
        self.outcomes.iter().map(|o| (o.g)(s, a)).collect()
    }

    /// Outcome values `G` of a finished trajectory.
    pub fn totals(&self, t: &Trajectory<S>) -> Vec<f64> {
        let mut g = vec![0.0; self.len()];
        for (s, &a) in t.states.iter().zip(&t.actions) {
            for (k, o) in self.outcomes.iter().enumerate() {
                g[k] += (o.g)(s, a);
            }
        }
        g
    }
}

/// Monte Carlo mean of each outcome over `n_rollouts` rollouts of `policy`
/// from `s0`. Rollout `i` uses stream `i` of `seed`.
pub fn expected_outcomes_mc<E: Environment>(
    env: &E,
    policy: &Policy,
    s0: &E::State,
    outcomes: &OutcomeFunctionSet<E::State>,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let samples = outcome_samples_mc(env, policy, s0, outcomes, n_rollouts, seed)?;
    let mut mean = vec![0.0; outcomes.len()];
    for row in &samples {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    Ok(mean.into_iter().map(|m| m / n_rollouts as f64).collect())
}

/// Per-rollout outcome values, in rollout order.
pub fn outcome_samples_mc<E: Environment>(
    env: &E,
    policy: &Policy,
    s0: &E::State,
    outcomes: &OutcomeFunctionSet<E::State>,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("n_rollouts must be positive".into()));
    }
    env.validate_state(s0)?;
    let max_steps = env.default_max_steps();
    (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let t = rollout_with(env, s0, max_steps, &mut rng, |s, _, r| policy.sample(s, r));
            if !t.terminated {
                return Err(Error::HorizonExceeded(max_steps));
            }
            Ok(outcomes.totals(&t))
        })
        .collect()
}

/// Row-stochastic matrix of the chain induced by `policy`.
pub fn induced_chain(mdp: &TabularMdp, policy: &Policy) -> Vec<Vec<f64>> {
    let n = mdp.n_states;
    let mut p = vec![vec![0.0; n]; n];
    for (s, row) in p.iter_mut().enumerate() {
        let pi = policy.probs(&s);
        for (a, &pa) in pi.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (j, &q) in mdp.transition[s][a].iter().enumerate() {
                row[j] += pa * q;
            }
        }
    }
    p
}

/// States from which the induced chain reaches the absorbing set with
/// probability one.
pub fn proper_states(mdp: &TabularMdp, chain: &[Vec<f64>]) -> Vec<bool> {
    let n = mdp.n_states;
    let absorbing = mdp.absorbing_mask();
    // can_exit[s]: some path from s hits an absorbing state
    let mut can_exit = absorbing.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| absorbing[s]).collect();
    while let Some(j) = queue.pop_front() {
        for s in 0..n {
            if !can_exit[s] && chain[s][j] > 0.0 {
                can_exit[s] = true;
                queue.push_back(s);
            }
        }
    }
    // trapped[s]: some path from s hits a state that cannot exit
    let mut trapped: Vec<bool> = (0..n).map(|s| !can_exit[s]).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| trapped[s]).collect();
    while let Some(j) = queue.pop_front() {
        for s in 0..n {
            if !trapped[s] && !absorbing[s] && chain[s][j] > 0.0 {
                trapped[s] = true;
                queue.push_back(s);
            }
        }
    }
    trapped.into_iter().map(|t| !t).collect()
}

/// Expected cumulative `value(s, a)` from every state under `policy`.
/// Absorbing states are 0; states of improper chains are NaN.
pub fn state_values(mdp: &TabularMdp, policy: &Policy, value: &dyn Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    policy.validate(mdp.n_actions, Some(mdp.n_states))?;
    let chain = induced_chain(mdp, policy);
    let proper = proper_states(mdp, &chain);
    let absorbing = mdp.absorbing_mask();
    let live: Vec<usize> = (0..mdp.n_states).filter(|&s| proper[s] && !absorbing[s]).collect();
    let mut pos = vec![usize::MAX; mdp.n_states];
    for (i, &s) in live.iter().enumerate() {
        pos[s] = i;
    }
    let k = live.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (i, &s) in live.iter().enumerate() {
        let pi = policy.probs(&s);
        b[i] = pi
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(act, &p)| p * value(s, act))
            .sum();
        for (j, &q) in chain[s].iter().enumerate() {
            if q > 0.0 && pos[j] != usize::MAX {
                a[(i, pos[j])] -= q;
            }
        }
    }
    let x = if k == 0 {
        DVector::zeros(0)
    } else {
        a.lu()
            .solve(&b)
            .ok_or_else(|| Error::ImproperPolicy("singular evaluation system".into()))?
    };
    let mut v = vec![f64::NAN; mdp.n_states];
    for s in 0..mdp.n_states {
        if absorbing[s] {
            v[s] = 0.0;
        } else if pos[s] != usize::MAX {
            v[s] = x[pos[s]];
        }
    }
    Ok(v)
}

/// States reachable from the support of p0 under `policy`.
pub fn reachable_states(mdp: &TabularMdp, policy: &Policy) -> Vec<bool> {
    let chain = induced_chain(mdp, policy);
    let mut seen = vec![false; mdp.n_states];
    let mut queue: VecDeque<usize> = mdp.p0_support().into_iter().collect();
    for &s in &queue {
        seen[s] = true;
    }
    while let Some(s) = queue.pop_front() {
        for (j, &q) in chain[s].iter().enumerate() {
            if q > 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Fails with `ImproperPolicy` if some state reachable from p0 may never
/// reach the absorbing set.
pub fn check_proper(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    policy.validate(mdp.n_actions, Some(mdp.n_states))?;
    let proper = proper_states(mdp, &induced_chain(mdp, policy));
    let reach = reachable_states(mdp, policy);
    match (0..mdp.n_states).find(|&s| reach[s] && !proper[s]) {
        Some(s) => Err(Error::ImproperPolicy(format!("state {s} is not guaranteed to terminate"))),
        None => Ok(()),
    }
}

/// Exact expected return under p0.
pub fn expected_return_exact(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    check_proper(mdp, policy)?;
    let v = state_values(mdp, policy, &|s, a| mdp.reward[s][a])?;
    Ok(mdp.p0_support().iter().map(|&s| mdp.p0[s] * v[s]).sum())
}

/// Exact expected outcome values from `s0`.
pub fn expected_outcomes_exact(
    mdp: &TabularMdp,
    policy: &Policy,
    outcomes: &OutcomeFunctionSet<usize>,
    s0: usize,
) -> Result<Vec<f64>> {
    mdp.validate_state(&s0)?;
    outcomes
        .outcomes
        .iter()
        .map(|o| {
            let v = state_values(mdp, policy, &|s, a| (o.g)(&s, a))?;
            if v[s0].is_nan() {
                return Err(Error::ImproperPolicy(format!("state {s0} is not guaranteed to terminate")));
            }
            Ok(v[s0])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> TabularMdp {
        // 0 -> 1 -> 2(absorbing); action 1 at 0 loops back to 0
        let t = vec![
            vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
        ];
        let r = vec![vec![1.0, 0.5], vec![2.0, 3.0], vec![0.0, 0.0]];
        TabularMdp::new(t, r, vec![1.0, 0.0, 0.0], vec![2]).unwrap()
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut m = chain3();
        m.transition[0][0][1] = 0.5;
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn validation_rejects_absorbing_reward() {
        let mut m = chain3();
        m.reward[2][0] = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn exact_return_of_simple_chain() {
        let m = chain3();
        let pi = Policy::deterministic(&[0, 1, 0], 2);
        assert_eq!(expected_return_exact(&m, &pi).unwrap(), 1.0 + 3.0);
    }

    #[test]
    fn self_loop_policy_is_improper() {
        let m = chain3();
        let pi = Policy::deterministic(&[1, 0, 0], 2);
        assert!(matches!(expected_return_exact(&m, &pi), Err(Error::ImproperPolicy(_))));
    }

    #[test]
    fn mixed_loop_is_proper_with_geometric_value() {
        let m = chain3();
        let pi = Policy::Tabular {
            probs: vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![1.0, 0.0]],
        };
        // V0 = 0.5*1 + 0.5*0.5 + 0.5*V0 + 0.5*2  =>  V0 = 3.5
        let v = expected_return_exact(&m, &pi).unwrap();
        assert!((v - 3.5).abs() < 1e-12);
    }

    #[test]
    fn improper_unreachable_state_is_tolerated() {
        let mut m = chain3();
        // state 1 is unreachable when pi picks action 1 nowhere and 0 -> 1 ... make 1 loop
        m.transition[1][1] = vec![0.0, 1.0, 0.0];
        m.p0 = vec![0.0, 1.0, 0.0];
        let pi = Policy::deterministic(&[1, 0, 0], 2);
        // 0 loops forever but only 1 is reachable from p0
        assert_eq!(expected_return_exact(&m, &pi).unwrap(), 2.0);
    }

    #[test]
    fn rollout_rejects_absorbing_start() {
        let m = chain3();
        let pi = Policy::deterministic(&[0, 0, 0], 2);
        assert!(matches!(rollout(&m, &pi, &2, 10, 0), Err(Error::InvalidState(_))));
        assert!(matches!(rollout(&m, &pi, &7, 10, 0), Err(Error::InvalidState(_))));
    }

    #[test]
    fn rollout_stops_at_horizon() {
        let m = chain3();
        let pi = Policy::deterministic(&[1, 0, 0], 2);
        let t = rollout(&m, &pi, &0, 5, 0).unwrap();
        assert_eq!(t.len(), 5);
        assert!(!t.terminated);
    }

    #[test]
    fn mc_horizon_error() {
        let m = chain3();
        let pi = Policy::deterministic(&[1, 0, 0], 2);
        let o = OutcomeFunctionSet::new(vec![Outcome::new("len", Direction::LowerIsBetter, "longer", "shorter", |_: &usize, _| 1.0)]);
        assert!(matches!(
            expected_outcomes_mc(&m, &pi, &0, &o, 3, 1),
            Err(Error::HorizonExceeded(_))
        ));
    }

    #[test]
    fn policy_json_roundtrip() {
        let p = Policy::deterministic(&[0, 1], 2);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"tabular\""));
        assert_eq!(serde_json::from_str::<Policy>(&s).unwrap(), p);
    }

    #[test]
    fn mdp_json_roundtrip() {
        let m = chain3();
        let back = TabularMdp::from_json_str(&m.to_json_string().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn point_parse_roundtrip() {
        let p = Point::new(0.15000000000000002, 0.3);
        assert_eq!(Point::parse(&p.repr()).unwrap(), p);
    }

    #[test]
    fn sample_index_follows_probabilities() {
        let mut rng = rng_for(3, 0);
        let n = 20000;
        let hits = (0..n).filter(|_| sample_index(&[0.25, 0.75], &mut rng) == 1).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.75).abs() < 0.02, "{f}");
    }
}
