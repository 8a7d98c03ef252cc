//! Diverging-state test and the branching / batch collection procedures.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, rng_for, Environment, Policy, SimRng, State};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub kappa_pi: f64,
    pub kappa_t: f64,
    pub d_max: usize,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            kappa_pi: 0.1,
            kappa_t: 0.1,
            d_max: 3,
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.kappa_pi) || !unit.contains(&self.kappa_t) {
            return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
        }
        if self.d_max < 1 {
            return Err(Error::InvalidArgument("d_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Next-state distribution under the policy's action mixture, in first
/// appearance order.
fn next_state_marginal<E: Environment>(env: &E, s: &E::State, probs: &[f64]) -> Vec<(E::State, f64)> {
    let mut out: Vec<(E::State, f64)> = Vec::new();
    for (a, &pa) in probs.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        for (next, q) in env.transitions(s, a) {
            match out.iter_mut().find(|(t, _)| *t == next) {
                Some(e) => e.1 += pa * q,
                None => out.push((next, pa * q)),
            }
        }
    }
    out
}

// most probable entry; ties go to the lower state index, then to the earlier entry
fn most_probable<S: State>(dist: &[(S, f64)]) -> (S, f64) {
    let mut best = 0;
    for i in 1..dist.len() {
        let (ref s, p) = dist[i];
        let (ref b, q) = dist[best];
        let lower = match (s.index(), b.index()) {
            (Some(x), Some(y)) => x < y,
            _ => false,
        };
        if p > q || (p == q && lower) {
            best = i;
        }
    }
    dist[best].clone()
}

/// Greedy action pair `(a_b, a_e)` when `s` is diverging, else `None`.
pub fn divergence_pair<E: Environment>(
    env: &E,
    s: &E::State,
    pi_b: &Policy,
    pi_e: &Policy,
    cfg: &DivergenceConfig,
) -> Option<(usize, usize)> {
    if env.is_absorbing(s) {
        return None;
    }
    let pb = pi_b.probs(s);
    let pe = pi_e.probs(s);
    let (ab, ae) = (argmax(&pb), argmax(&pe));
    let cond_action = ab != ae || (pb[ab] - pe[ae]).abs() > cfg.kappa_pi;
    if !cond_action {
        return None;
    }
    let (sb, qb) = most_probable(&next_state_marginal(env, s, &pb));
    let (se, qe) = most_probable(&next_state_marginal(env, s, &pe));
    let cond_next = sb != se || (!env.is_deterministic() && (qb - qe).abs() > cfg.kappa_t);
    cond_next.then_some((ab, ae))
}

pub fn is_diverging<E: Environment>(env: &E, s: &E::State, pi_b: &Policy, pi_e: &Policy, cfg: &DivergenceConfig) -> bool {
    divergence_pair(env, s, pi_b, pi_e, cfg).is_some()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledState<S> {
    pub state: S,
    /// 0 for non-diverging states, otherwise the index of `(action_b, action_e)`.
    pub label: usize,
    pub action_b: usize,
    pub action_e: usize,
}

/// Distinct states in first-visit order with divergence labels. Label `k`
/// stands for `action_pairs[k - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledStateSet<S: State> {
    pub entries: Vec<LabeledState<S>>,
    pub action_pairs: Vec<(usize, usize)>,
    #[serde(skip)]
    seen: HashMap<S, usize>,
}

impl<S: State> Default for LabeledStateSet<S> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            action_pairs: Vec::new(),
            seen: HashMap::new(),
        }
    }
}

impl<S: State> LabeledStateSet<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label_for_pair(&mut self, pair: (usize, usize)) -> usize {
        match self.action_pairs.iter().position(|&p| p == pair) {
            Some(i) => i + 1,
            None => {
                self.action_pairs.push(pair);
                self.action_pairs.len()
            }
        }
    }

    pub fn action_pair(&self, label: usize) -> Option<(usize, usize)> {
        label.checked_sub(1).and_then(|i| self.action_pairs.get(i).copied())
    }

    pub fn contains(&self, s: &S) -> bool {
        self.seen.contains_key(s)
    }

    /// Records `s` unless already present. Returns whether it was new.
    pub fn insert(&mut self, s: &S, pair: Option<(usize, usize)>, greedy: (usize, usize)) -> bool {
        if self.seen.contains_key(s) {
            return false;
        }
        let label = pair.map_or(0, |p| self.label_for_pair(p));
        self.seen.insert(s.clone(), self.entries.len());
        self.entries.push(LabeledState {
            state: s.clone(),
            label,
            action_b: greedy.0,
            action_e: greedy.1,
        });
        true
    }

    pub fn diverging(&self) -> impl Iterator<Item = &LabeledState<S>> {
        self.entries.iter().filter(|e| e.label > 0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["state_repr", "label", "action_b", "action_e"])?;
        for e in &self.entries {
            wr.write_record([
                e.state.repr(),
                e.label.to_string(),
                e.action_b.to_string(),
                e.action_e.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Collector<'a, E: Environment> {
    env: &'a E,
    pi_b: &'a Policy,
    pi_e: &'a Policy,
    cfg: &'a DivergenceConfig,
    max_steps: usize,
    out: LabeledStateSet<E::State>,
}

impl<'a, E: Environment> Collector<'a, E> {
    fn record(&mut self, s: &E::State) -> bool {
        if self.out.contains(s) {
            return is_diverging(self.env, s, self.pi_b, self.pi_e, self.cfg);
        }
        let pair = divergence_pair(self.env, s, self.pi_b, self.pi_e, self.cfg);
        let greedy = (self.pi_b.greedy(s), self.pi_e.greedy(s));
        self.out.insert(s, pair, greedy);
        pair.is_some()
    }

    // branching rollout of `first`; at diverging states a branch follows `second`
    fn run(&mut self, first: &Policy, second: &Policy, s0: &E::State, d: usize, rng: &mut SimRng) -> Result<()> {
        if d >= self.cfg.d_max {
            return Ok(());
        }
        let mut s = s0.clone();
        let mut steps = 0;
        while !self.env.is_absorbing(&s) {
            if steps >= self.max_steps {
                return Err(Error::HorizonExceeded(self.max_steps));
            }
            if self.record(&s) {
                self.run(second, first, &s, d + 1, rng)?;
            }
            let a = first.greedy(&s);
            s = self.env.sample_next(&s, a, rng);
            steps += 1;
        }
        self.record(&s);
        Ok(())
    }
}

/// Branching collection from several starts sharing one action-pair index.
/// Start `i` draws transitions from stream `i` of `seed`.
pub fn collect_diverging_states_multi<E: Environment>(
    env: &E,
    pi_b: &Policy,
    pi_e: &Policy,
    starts: &[E::State],
    cfg: &DivergenceConfig,
    seed: u64,
) -> Result<LabeledStateSet<E::State>> {
    cfg.validate()?;
    let mut c = Collector {
        env,
        pi_b,
        pi_e,
        cfg,
        max_steps: env.default_max_steps(),
        out: LabeledStateSet::new(),
    };
    for (i, s0) in starts.iter().enumerate() {
        env.validate_state(s0)?;
        if env.is_absorbing(s0) {
            return Err(Error::InvalidState(format!("{} is absorbing", s0.repr())));
        }
        let mut rng = rng_for(seed, i as u64);
        c.run(pi_b, pi_e, s0, 0, &mut rng)?;
    }
    Ok(c.out)
}

pub fn collect_diverging_states<E: Environment>(
    env: &E,
    pi_b: &Policy,
    pi_e: &Policy,
    s0: &E::State,
    cfg: &DivergenceConfig,
    seed: u64,
) -> Result<LabeledStateSet<E::State>> {
    collect_diverging_states_multi(env, pi_b, pi_e, std::slice::from_ref(s0), cfg, seed)
}

/// Labels every distinct batch state using `env` as the dynamics model.
pub fn collect_diverging_states_batch<E: Environment>(
    env: &E,
    pi_b: &Policy,
    pi_e: &Policy,
    batch: &[E::State],
    cfg: &DivergenceConfig,
) -> Result<LabeledStateSet<E::State>> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = LabeledStateSet::new();
    for s in batch {
        env.validate_state(s)?;
        let pair = divergence_pair(env, s, pi_b, pi_e, cfg);
        out.insert(s, pair, (pi_b.greedy(s), pi_e.greedy(s)));
    }
    Ok(out)
}
