//! Baselines and exhaustive oracles over tabular MDPs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_proper, state_values, Policy, TabularMdp};

const VI_TOL: f64 = 1e-12;
const VI_MAX_ITERS: usize = 1_000_000;
const PI_GAIN: f64 = 1e-12;
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Undiscounted value iteration over allowed actions. Returns optimal state
/// values and a greedy policy, ties to the lowest action.
pub fn value_iteration(mdp: &TabularMdp) -> Result<(Vec<f64>, Policy)> {
    mdp.validate()?;
    let absorbing = mdp.absorbing_mask();
    let transient = mdp.transient_states();
    let q = |v: &[f64], s: usize, a: usize| -> f64 {
        mdp.reward[s][a] + mdp.transition[s][a].iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
    };
    let mut v = vec![0.0; mdp.n_states];
    let mut converged = false;
    for _ in 0..VI_MAX_ITERS {
        let mut delta: f64 = 0.0;
        for &s in &transient {
            let best = (0..mdp.n_actions)
                .filter(|&a| mdp.allowed(s, a))
                .map(|a| q(&v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < VI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure("value iteration did not converge".into()));
    }
    let actions: Vec<usize> = (0..mdp.n_states)
        .map(|s| {
            if absorbing[s] {
                return 0;
            }
            let qs: Vec<f64> = (0..mdp.n_actions)
                .map(|a| if mdp.allowed(s, a) { q(&v, s, a) } else { f64::NEG_INFINITY })
                .collect();
            let top = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            qs.iter().position(|&x| x >= top - 1e-9).unwrap_or(0)
        })
        .collect();
    Ok((v, Policy::deterministic(&actions, mdp.n_actions)))
}

/// p0-weighted expected total of `table[s][a]` under `policy`.
pub fn expected_total(mdp: &TabularMdp, policy: &Policy, table: &[Vec<f64>]) -> Result<f64> {
    check_proper(mdp, policy)?;
    let v = state_values(mdp, policy, &|s, a| table[s][a])?;
    Ok(mdp.p0_support().iter().map(|&s| mdp.p0[s] * v[s]).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub policy: Policy,
    pub expected_cost: f64,
    pub expected_return: f64,
}

/// Policy iteration from the greedy actions of `pi_b`, recording every
/// iterate with its deviation cost against `pi_b` and its exact return.
pub fn policy_iteration_trace(mdp: &TabularMdp, pi_b: &Policy) -> Result<Vec<TracePoint>> {
    let cost = crate::cmdp::deviation_cost(mdp, pi_b);
    let mut actions = pi_b.greedy_table(mdp.n_states);
    let transient = mdp.transient_states();
    let mut trace = Vec::new();
    let limit = mdp.n_states * mdp.n_actions + 2;
    loop {
        let pi = Policy::deterministic(&actions, mdp.n_actions);
        check_proper(mdp, &pi)?;
        let v = state_values(mdp, &pi, &|s, a| mdp.reward[s][a])?;
        trace.push(TracePoint {
            expected_cost: expected_total(mdp, &pi, &cost)?,
            expected_return: mdp.p0_support().iter().map(|&s| mdp.p0[s] * v[s]).sum(),
            policy: pi,
        });
        let vv: Vec<f64> = v.iter().map(|&x| if x.is_nan() { f64::NEG_INFINITY } else { x }).collect();
        let q = |s: usize, a: usize| -> f64 {
            let mut tot = mdp.reward[s][a];
            for (j, &p) in mdp.transition[s][a].iter().enumerate() {
                if p > 0.0 {
                    tot += p * vv[j];
                }
            }
            tot
        };
        let mut changed = false;
        for &s in &transient {
            let cur = if mdp.allowed(s, actions[s]) { q(s, actions[s]) } else { f64::NEG_INFINITY };
            let mut best = (actions[s], cur);
            for a in (0..mdp.n_actions).filter(|&a| mdp.allowed(s, a)) {
                let qa = q(s, a);
                if qa > best.1 + PI_GAIN {
                    best = (a, qa);
                }
            }
            if best.0 != actions[s] && best.1 > cur + PI_GAIN {
                actions[s] = best.0;
                changed = true;
            }
        }
        if !changed {
            return Ok(trace);
        }
        if trace.len() > limit {
            return Err(Error::NumericalFailure("policy iteration did not terminate".into()));
        }
    }
}

/// Best deterministic policy with expected cost at most `kappa`, by
/// enumeration. Absorbing states take action 0; ties go to the
/// lexicographically smallest action vector.
pub fn brute_force_cmdp(mdp: &TabularMdp, cost: &[Vec<f64>], kappa: f64) -> Result<(Policy, f64)> {
    mdp.validate()?;
    let transient = mdp.transient_states();
    let choices: Vec<Vec<usize>> = transient
        .iter()
        .map(|&s| (0..mdp.n_actions).filter(|&a| mdp.allowed(s, a)).collect())
        .collect();
    let total: f64 = choices.iter().map(|c| c.len() as f64).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(total));
    }
    let total = total as usize;
    let decode = |mut code: usize| -> Vec<usize> {
        let mut actions = vec![0; mdp.n_states];
        // first transient state is the most significant digit
        for (k, &s) in transient.iter().enumerate().rev() {
            let c = &choices[k];
            actions[s] = c[code % c.len()];
            code /= c.len();
        }
        actions
    };
    let scores: Vec<Option<f64>> = (0..total)
        .into_par_iter()
        .map(|code| {
            let pi = Policy::deterministic(&decode(code), mdp.n_actions);
            if check_proper(mdp, &pi).is_err() {
                return None;
            }
            let c = expected_total(mdp, &pi, cost).ok()?;
            if c > kappa + 1e-9 {
                return None;
            }
            expected_total(mdp, &pi, &mdp.reward).ok()
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (code, score) in scores.into_iter().enumerate() {
        if let Some(r) = score {
            if best.map_or(true, |(_, b)| r > b + 1e-9) {
                best = Some((code, r));
            }
        }
    }
    let (code, r) = best.ok_or(Error::Infeasible)?;
    Ok((Policy::deterministic(&decode(code), mdp.n_actions), r))
}
