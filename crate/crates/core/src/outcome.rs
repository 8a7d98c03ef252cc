//! Outcome estimation with confidence intervals and the per-outcome verdict.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{outcome_samples_mc, rng_for, rollout_with, Direction, Environment, OutcomeFunctionSet, Policy, SimRng, State, TabularMdp, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEstimate {
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub ci_level: f64,
    #[serde(rename = "B")]
    pub n_bootstrap: usize,
    /// Some rollout used a state-action pair absent from the data.
    #[serde(default)]
    pub unobserved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub n_rollouts: usize,
    pub ci_level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 200,
            n_rollouts: 100,
            ci_level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap < 2 {
            return Err(Error::InvalidArgument("B must be at least 2".into()));
        }
        if self.n_rollouts == 0 {
            return Err(Error::InvalidArgument("n_rollouts must be positive".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidArgument("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of replicate vectors around `point`.
pub fn percentile_interval(replicates: &[Vec<f64>], point: &[f64], ci_level: f64) -> (Vec<f64>, Vec<f64>) {
    let m = point.len();
    let (mut lower, mut upper) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let mut col: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        lower[k] = quantile(&col, (1.0 - ci_level) / 2.0).min(point[k]);
        upper[k] = quantile(&col, (1.0 + ci_level) / 2.0).max(point[k]);
    }
    (lower, upper)
}

/// Empirical tabular model. Pairs never observed become self-loops and are
/// flagged in `unobserved`.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub mdp: TabularMdp,
    pub unobserved: Vec<Vec<bool>>,
    pub counts: Vec<Vec<usize>>,
}

pub fn fit_dynamics(n_states: usize, n_actions: usize, absorbing: &[usize], batch: &[Trajectory<usize>]) -> Result<FittedModel> {
    fit_from_refs(n_states, n_actions, absorbing, &batch.iter().collect::<Vec<_>>())
}

fn fit_from_refs(n_states: usize, n_actions: usize, absorbing: &[usize], batch: &[&Trajectory<usize>]) -> Result<FittedModel> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut next = vec![vec![vec![0usize; n_states]; n_actions]; n_states];
    let mut rsum = vec![vec![0.0; n_actions]; n_states];
    let mut counts = vec![vec![0usize; n_actions]; n_states];
    let mut starts = vec![0usize; n_states];
    for t in batch {
        for &s in &t.states {
            if s >= n_states {
                return Err(Error::InvalidState(format!("state {s} out of range")));
            }
        }
        starts[t.states[0]] += 1;
        for (i, &a) in t.actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            let (s, s2) = (t.states[i], t.states[i + 1]);
            next[s][a][s2] += 1;
            rsum[s][a] += t.rewards[i];
            counts[s][a] += 1;
        }
    }
    let is_abs = |s: usize| absorbing.contains(&s);
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    let mut unobserved = vec![vec![false; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            if is_abs(s) {
                transition[s][a][s] = 1.0;
            } else if counts[s][a] == 0 {
                transition[s][a][s] = 1.0;
                unobserved[s][a] = true;
            } else {
                let c = counts[s][a] as f64;
                for s2 in 0..n_states {
                    transition[s][a][s2] = next[s][a][s2] as f64 / c;
                }
                reward[s][a] = rsum[s][a] / c;
            }
        }
    }
    let live: usize = (0..n_states).filter(|&s| !is_abs(s)).map(|s| starts[s]).sum();
    if live == 0 {
        return Err(Error::InvalidModel("every batch trajectory starts absorbed".into()));
    }
    let p0 = (0..n_states)
        .map(|s| if is_abs(s) { 0.0 } else { starts[s] as f64 / live as f64 })
        .collect();
    let mdp = TabularMdp::new(transition, reward, p0, absorbing.to_vec())?;
    Ok(FittedModel {
        mdp,
        unobserved,
        counts,
    })
}

/// Mean outcome totals of `n` rollouts on a fitted model. Rollouts stop at
/// the first unobserved pair; the flag reports whether that happened.
fn fitted_rollout_mean(
    model: &FittedModel,
    policy: &Policy,
    s0: usize,
    outcomes: &OutcomeFunctionSet<usize>,
    n: usize,
    rng: &mut SimRng,
) -> Result<(Vec<f64>, bool)> {
    let max_steps = model.mdp.default_max_steps();
    let mut mean = vec![0.0; outcomes.len()];
    let mut touched = false;
    for _ in 0..n {
        let mut hit = false;
        let mut t = rollout_with(&model.mdp, &s0, max_steps, rng, |s, _, r| policy.sample(s, r));
        if let Some(cut) = t.actions.iter().zip(&t.states).position(|(&a, &s)| model.unobserved[s][a]) {
            t.actions.truncate(cut);
            t.rewards.truncate(cut);
            t.states.truncate(cut + 1);
            t.terminated = true;
            hit = true;
        }
        if !t.terminated {
            return Err(Error::HorizonExceeded(max_steps));
        }
        touched |= hit;
        for (m, v) in mean.iter_mut().zip(outcomes.totals(&t)) {
            *m += v;
        }
    }
    Ok((mean.into_iter().map(|m| m / n as f64).collect(), touched))
}

/// Model-based bootstrap: resample trajectories, refit, simulate `policy`
/// from `s0`. Replicate `b` uses stream `b` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_outcome_ci(
    n_states: usize,
    n_actions: usize,
    absorbing: &[usize],
    batch: &[Trajectory<usize>],
    policy: &Policy,
    s0: usize,
    outcomes: &OutcomeFunctionSet<usize>,
    cfg: &BootstrapConfig,
    seed: u64,
) -> Result<OutcomeEstimate> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let reps: Vec<(Vec<f64>, bool)> = (0..cfg.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, b as u64);
            let sample: Vec<&Trajectory<usize>> = (0..batch.len()).map(|_| &batch[rng.gen_range(0..batch.len())]).collect();
            let model = fit_from_refs(n_states, n_actions, absorbing, &sample)?;
            fitted_rollout_mean(&model, policy, s0, outcomes, cfg.n_rollouts, &mut rng)
        })
        .collect::<Result<_>>()?;
    let unobserved = reps.iter().any(|(_, t)| *t);
    let values: Vec<Vec<f64>> = reps.into_iter().map(|(v, _)| v).collect();
    let m = outcomes.len();
    let point: Vec<f64> = (0..m)
        .map(|k| values.iter().map(|v| v[k]).sum::<f64>() / values.len() as f64)
        .collect();
    let (lower, upper) = percentile_interval(&values, &point, cfg.ci_level);
    Ok(OutcomeEstimate {
        point,
        lower,
        upper,
        ci_level: cfg.ci_level,
        n_bootstrap: cfg.n_bootstrap,
        unobserved,
    })
}

/// Bootstrap over per-rollout totals simulated in the true environment.
pub fn online_outcome_ci<E: Environment>(
    env: &E,
    policy: &Policy,
    s0: &E::State,
    outcomes: &OutcomeFunctionSet<E::State>,
    cfg: &BootstrapConfig,
    seed: u64,
) -> Result<OutcomeEstimate> {
    cfg.validate()?;
    let samples = outcome_samples_mc(env, policy, s0, outcomes, cfg.n_rollouts, seed)?;
    let n = samples.len();
    let m = outcomes.len();
    let point: Vec<f64> = (0..m).map(|k| samples.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
    let reps: Vec<Vec<f64>> = (0..cfg.n_bootstrap)
        .map(|b| {
            let mut rng = rng_for(seed ^ 0x5eed_b007, b as u64);
            let mut acc = vec![0.0; m];
            for _ in 0..n {
                let row = &samples[rng.gen_range(0..n)];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.into_iter().map(|a| a / n as f64).collect()
        })
        .collect();
    let (lower, upper) = percentile_interval(&reps, &point, cfg.ci_level);
    Ok(OutcomeEstimate {
        point,
        lower,
        upper,
        ci_level: cfg.ci_level,
        n_bootstrap: cfg.n_bootstrap,
        unobserved: false,
    })
}

/// Three-valued comparison per outcome: `raw[m]` is +1 when the alternative
/// policy's lower bound exceeds the behavior estimate, -1 when its upper
/// bound falls below it, else 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomeVerdict {
    pub raw: Vec<i8>,
}

impl OutcomeVerdict {
    /// +1 when the change is an improvement for that outcome.
    pub fn oriented(&self, directions: &[Direction]) -> Vec<i8> {
        self.raw
            .iter()
            .zip(directions)
            .map(|(&r, d)| if *d == Direction::LowerIsBetter { -r } else { r })
            .collect()
    }

    pub fn labels(&self, directions: &[Direction]) -> Vec<&'static str> {
        self.oriented(directions)
            .into_iter()
            .map(|v| match v {
                1 => "better",
                -1 => "worse",
                _ => "unknown",
            })
            .collect()
    }

    pub fn is_unknown(&self) -> bool {
        self.raw.iter().all(|&r| r == 0)
    }
}

pub fn compare_outcomes(point_b: &[f64], est_e: &OutcomeEstimate) -> Result<OutcomeVerdict> {
    let m = point_b.len();
    if est_e.lower.len() != m || est_e.upper.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: est_e.lower.len().min(est_e.upper.len()),
        });
    }
    if est_e.unobserved {
        return Ok(OutcomeVerdict { raw: vec![0; m] });
    }
    let raw = (0..m)
        .map(|k| {
            if point_b[k] < est_e.lower[k] {
                1
            } else if point_b[k] > est_e.upper[k] {
                -1
            } else {
                0
            }
        })
        .collect();
    Ok(OutcomeVerdict { raw })
}

/// Source of per-start outcome estimates for the two policies.
pub trait OutcomeOracle<S: State>: Sync {
    fn behavior_point(&self, s0: &S) -> Result<Vec<f64>>;

    fn alternative_estimate(&self, s0: &S) -> Result<OutcomeEstimate>;

    fn verdict(&self, s0: &S) -> Result<OutcomeVerdict> {
        compare_outcomes(&self.behavior_point(s0)?, &self.alternative_estimate(s0)?)
    }
}

/// Monte Carlo in the true environment.
pub struct OnlineOracle<'a, E: Environment> {
    pub env: &'a E,
    pub pi_b: &'a Policy,
    pub pi_e: &'a Policy,
    pub outcomes: &'a OutcomeFunctionSet<E::State>,
    pub cfg: BootstrapConfig,
    pub seed: u64,
}

impl<'a, E: Environment> OutcomeOracle<E::State> for OnlineOracle<'a, E> {
    fn behavior_point(&self, s0: &E::State) -> Result<Vec<f64>> {
        Ok(online_outcome_ci(self.env, self.pi_b, s0, self.outcomes, &self.cfg, self.seed)?.point)
    }

    fn alternative_estimate(&self, s0: &E::State) -> Result<OutcomeEstimate> {
        online_outcome_ci(self.env, self.pi_e, s0, self.outcomes, &self.cfg, self.seed.wrapping_add(1))
    }
}

/// Model-based bootstrap from logged behavior trajectories.
pub struct BatchOracle<'a> {
    pub n_states: usize,
    pub n_actions: usize,
    pub absorbing: Vec<usize>,
    pub batch: &'a [Trajectory<usize>],
    pub pi_b: &'a Policy,
    pub pi_e: &'a Policy,
    pub outcomes: &'a OutcomeFunctionSet<usize>,
    pub cfg: BootstrapConfig,
    pub seed: u64,
    pub model: FittedModel,
}

impl<'a> BatchOracle<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        absorbing: Vec<usize>,
        batch: &'a [Trajectory<usize>],
        pi_b: &'a Policy,
        pi_e: &'a Policy,
        outcomes: &'a OutcomeFunctionSet<usize>,
        cfg: BootstrapConfig,
        seed: u64,
    ) -> Result<Self> {
        let model = fit_dynamics(n_states, n_actions, &absorbing, batch)?;
        Ok(Self {
            n_states,
            n_actions,
            absorbing,
            batch,
            pi_b,
            pi_e,
            outcomes,
            cfg,
            seed,
            model,
        })
    }
}

impl<'a> OutcomeOracle<usize> for BatchOracle<'a> {
    fn behavior_point(&self, s0: &usize) -> Result<Vec<f64>> {
        let mut rng = rng_for(self.seed, u64::MAX - *s0 as u64);
        Ok(fitted_rollout_mean(&self.model, self.pi_b, *s0, self.outcomes, self.cfg.n_rollouts, &mut rng)?.0)
    }

    fn alternative_estimate(&self, s0: &usize) -> Result<OutcomeEstimate> {
        bootstrap_outcome_ci(
            self.n_states,
            self.n_actions,
            &self.absorbing,
            self.batch,
            self.pi_e,
            *s0,
            self.outcomes,
            &self.cfg,
            self.seed.wrapping_add(*s0 as u64 * 7919),
        )
    }
}

/// Trajectories of an epsilon-greedy version of `policy` from p0.
pub fn epsilon_greedy_batch(mdp: &TabularMdp, policy: &Policy, epsilon: f64, n: usize, seed: u64) -> Vec<Trajectory<usize>> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let s0 = mdp.sample_initial(&mut rng);
            rollout_with(mdp, &s0, mdp.default_max_steps(), &mut rng, |s, _, r| {
                if r.gen::<f64>() < epsilon {
                    r.gen_range(0..mdp.n_actions)
                } else {
                    policy.sample(s, r)
                }
            })
        })
        .collect()
}
