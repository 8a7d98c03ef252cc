//! Bundled benchmark domains: the 12-state toy chain and the 2-D box
//! navigation task, each with its behavior and alternative policies.

use crate::mdp::{BoxNavMdp, Direction, Outcome, OutcomeFunctionSet, Point, Policy, PolicyRule, RewardBox, TabularMdp, EAST, NORTH, SOUTH};
use crate::predicate::{Clause, Comparator, Dnf, Predicate, RegionBox};
use crate::rules::FeatureSpec;

pub const TOY_STATES: usize = 12;
pub const TOY_ABSORBING: usize = 11;
pub const TOY_DESIRED: [usize; 2] = [2, 6];
pub const STEP_REWARD: f64 = -0.001;

pub struct ToyDomain {
    pub mdp: TabularMdp,
    pub pi_b: Policy,
    pub pi_e: Policy,
    pub outcomes: OutcomeFunctionSet<usize>,
}

fn toy_successor(s: usize, a: usize) -> usize {
    match (s, a) {
        (0, _) => 1,
        (1, 0) => 3,
        (1, _) => 2,
        (2, _) => 3,
        (5, 0) => 7,
        (5, _) => 6,
        (6, _) => 7,
        (11, _) => 11,
        (s, _) => s + 1,
    }
}

fn toy_reward(s: usize, a: usize) -> f64 {
    match (s, a) {
        (11, _) => 0.0,
        (1, 1) => 1.0,
        (5, 1) => 3.0,
        (9, 0) | (10, 0) => 5.0,
        _ => STEP_REWARD,
    }
}

/// Toy chain with deterministic moves. With `slip > 0` each action takes
/// the other action's successor with probability `slip`.
pub fn toy_mdp_with_slip(slip: f64) -> TabularMdp {
    let n = TOY_STATES;
    let mut t = vec![vec![vec![0.0; n]; 2]; n];
    let mut r = vec![vec![0.0; 2]; n];
    for s in 0..n {
        for a in 0..2 {
            t[s][a][toy_successor(s, a)] += 1.0 - slip;
            t[s][a][toy_successor(s, 1 - a)] += slip;
            r[s][a] = toy_reward(s, a);
        }
    }
    let mut p0 = vec![1.0 / 11.0; n];
    p0[TOY_ABSORBING] = 0.0;
    TabularMdp::new(t, r, p0, vec![TOY_ABSORBING]).expect("toy model is well formed")
}

pub fn toy_outcomes() -> OutcomeFunctionSet<usize> {
    OutcomeFunctionSet::new(vec![
        Outcome::new(
            "trajectory length",
            Direction::LowerIsBetter,
            "longer trajectory",
            "shorter trajectory",
            |s: &usize, _| if *s == TOY_ABSORBING { 0.0 } else { 1.0 },
        ),
        Outcome::new(
            "visits to desired states",
            Direction::HigherIsBetter,
            "more visits to desired states",
            "fewer visits to desired states",
            |s: &usize, _| if TOY_DESIRED.contains(s) { 1.0 } else { 0.0 },
        ),
    ])
}

pub fn toy_pi_b() -> Policy {
    Policy::deterministic(&[0; TOY_STATES], 2)
}

pub fn toy_pi_e() -> Policy {
    let mut a = [0; TOY_STATES];
    a[0] = 1;
    a[1] = 1;
    a[5] = 1;
    Policy::deterministic(&a, 2)
}

pub fn toy_domain() -> ToyDomain {
    ToyDomain {
        mdp: toy_mdp_with_slip(0.0),
        pi_b: toy_pi_b(),
        pi_e: toy_pi_e(),
        outcomes: toy_outcomes(),
    }
}

/// One-hot state identity features for a tabular space.
pub fn tabular_features(n_states: usize) -> Vec<FeatureSpec> {
    vec![FeatureSpec::categorical("s", (0..n_states).map(|v| v as f64).collect())]
}

pub struct NavDomain {
    pub mdp: BoxNavMdp,
    pub pi_b: Policy,
    pub pi_e1: Policy,
    pub pi_e2: Policy,
    pub outcomes: OutcomeFunctionSet<Point>,
}

pub const BAND: (f64, f64) = (0.2, 0.3);

pub fn nav_mdp() -> BoxNavMdp {
    let b = |x: (f64, f64), y: (f64, f64), value: f64| RewardBox { x, y, value };
    BoxNavMdp {
        step: 0.1,
        goal_x: 0.95,
        goal_reward: 10.0,
        step_reward: STEP_REWARD,
        boxes: vec![
            b((0.1, 0.2), (0.0, 0.1), 4.0),
            b((0.2, 0.3), (0.1, 0.2), 3.0),
            b((0.0, 0.1), (0.3, 0.4), 5.0),
            b((0.5, 0.6), (0.3, 0.4), 7.0),
        ],
        initial: RegionBox::new(vec![0.0, 0.0], vec![0.1, 0.1]),
        max_steps: 200,
    }
}

fn closed(feature: usize, lo: f64, hi: f64) -> Vec<Predicate> {
    vec![
        Predicate::new(feature, Comparator::Ge, lo),
        Predicate::new(feature, Comparator::Le, hi),
    ]
}

fn rect(x: (f64, f64), y: (f64, f64)) -> Clause {
    let mut p = closed(0, x.0, x.1);
    p.extend(closed(1, y.0, y.1));
    Clause::new(p)
}

fn strips_above(y: f64) -> Dnf {
    let mk = |lo, hi| {
        let mut p = closed(0, lo, hi);
        p.push(Predicate::new(1, Comparator::Gt, y));
        Clause::new(p)
    };
    Dnf(vec![mk(0.1, 0.2), mk(0.5, 0.6)])
}

fn below(y: f64) -> Dnf {
    Dnf(vec![Clause::new(vec![Predicate::lt(1, y)])])
}

fn rule(when: Dnf, action: usize) -> PolicyRule {
    PolicyRule { when, action }
}

pub fn nav_pi_b() -> Policy {
    Policy::Piecewise {
        n_actions: 3,
        rules: vec![rule(strips_above(0.3), SOUTH), rule(below(0.2), NORTH)],
        default_action: EAST,
    }
}

pub fn nav_pi_e1() -> Policy {
    Policy::Piecewise {
        n_actions: 3,
        rules: vec![
            rule(Dnf(vec![rect((0.0, 0.1), (0.0, 0.1))]), EAST),
            rule(Dnf(vec![rect((0.1, 0.2), (0.1, 0.2))]), EAST),
            rule(strips_above(0.3), SOUTH),
            rule(below(0.2), NORTH),
        ],
        default_action: EAST,
    }
}

pub fn nav_pi_e2() -> Policy {
    Policy::Piecewise {
        n_actions: 3,
        rules: vec![rule(Dnf(vec![rect((0.0, 0.1), (0.2, 0.3))]), NORTH), rule(below(0.2), NORTH)],
        default_action: EAST,
    }
}

pub fn in_band(p: &Point) -> bool {
    p.y >= BAND.0 && p.y < BAND.1
}

pub fn nav_outcomes(mdp: &BoxNavMdp) -> OutcomeFunctionSet<Point> {
    let m = mdp.clone();
    OutcomeFunctionSet::new(vec![
        Outcome::new(
            "desired-region stay",
            Direction::HigherIsBetter,
            "more stay in the desired region",
            "less stay in the desired region",
            |s: &Point, _| if in_band(s) { 1.0 } else { 0.0 },
        ),
        Outcome::new(
            "collected rewards",
            Direction::HigherIsBetter,
            "more collected rewards",
            "less collected rewards",
            move |s: &Point, a| crate::mdp::Environment::reward(&m, s, a),
        ),
    ])
}

pub fn nav_features() -> Vec<FeatureSpec> {
    vec![FeatureSpec::uniform_grid("x", 20), FeatureSpec::uniform_grid("y", 20)]
}

pub fn nav_domain() -> NavDomain {
    let mdp = nav_mdp();
    let outcomes = nav_outcomes(&mdp);
    NavDomain {
        mdp,
        pi_b: nav_pi_b(),
        pi_e1: nav_pi_e1(),
        pi_e2: nav_pi_e2(),
        outcomes,
    }
}

/// Centers of a regular `n × n` grid over the unit square.
pub fn grid_centers(n: usize) -> Vec<Point> {
    let h = 1.0 / n as f64;
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(Point::new(h / 2.0 + h * i as f64, h / 2.0 + h * j as f64));
        }
    }
    v
}

/// Centers of an `n × n` grid of cells over a finite 2-D box.
pub fn box_grid(b: &RegionBox, n: usize) -> Vec<Point> {
    let (wx, wy) = ((b.hi[0] - b.lo[0]) / n as f64, (b.hi[1] - b.lo[1]) / n as f64);
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(Point::new(b.lo[0] + wx * (i as f64 + 0.5), b.lo[1] + wy * (j as f64 + 0.5)));
        }
    }
    v
}

/// Start states for the nav domain: one per 0.05 cell of the initial box.
pub fn nav_starts(mdp: &BoxNavMdp) -> Vec<Point> {
    box_grid(&mdp.initial, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{expected_outcomes_exact, expected_return_exact, rollout, state_values, Environment};

    #[test]
    fn toy_rewards_follow_table() {
        let m = toy_domain().mdp;
        assert_eq!(m.reward[5][1], 3.0);
        assert_eq!(m.reward[1][1], 1.0);
        assert_eq!(m.reward[9][0], 5.0);
        assert_eq!(m.reward[10][0], 5.0);
        assert_eq!(m.reward[9][1], STEP_REWARD);
        assert!(m.reward[11].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn toy_behavior_path() {
        let d = toy_domain();
        let t = rollout(&d.mdp, &d.pi_b, &0, 1000, 1).unwrap();
        assert_eq!(t.states, vec![0, 1, 3, 4, 5, 7, 8, 9, 10, 11]);
        assert!(t.terminated);
    }

    #[test]
    fn toy_per_start_returns() {
        // hand count: reward 5 at s9 and s10, step cost on the other transient steps
        let d = toy_domain();
        let v = state_values(&d.mdp, &d.pi_b, &|s, a| d.mdp.reward[s][a]).unwrap();
        let path_b = [0usize, 1, 3, 4, 5, 7, 8, 9, 10];
        for (i, &s) in path_b.iter().enumerate() {
            let rest = &path_b[i..];
            let expect: f64 = rest.iter().map(|&u| if u == 9 || u == 10 { 5.0 } else { STEP_REWARD }).sum();
            assert!((v[s] - expect).abs() < 1e-12, "s{s}");
        }
        assert!((v[0] - (10.0 - 7.0 * 0.001)).abs() < 1e-12);
        let ve = state_values(&d.mdp, &d.pi_e, &|s, a| d.mdp.reward[s][a]).unwrap();
        assert!((ve[0] - v[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn toy_mean_return() {
        let d = toy_domain();
        let j = expected_return_exact(&d.mdp, &d.pi_b).unwrap();
        let per_start = [9.993, 9.994, 9.994, 9.995, 9.996, 9.997, 9.997, 9.998, 9.999, 10.0, 5.0];
        let oracle: f64 = per_start.iter().sum::<f64>() / 11.0;
        assert!((j - oracle).abs() < 1e-9);
    }

    #[test]
    fn toy_outcomes_from_s0() {
        let d = toy_domain();
        let ge = expected_outcomes_exact(&d.mdp, &d.pi_e, &d.outcomes, 0).unwrap();
        let gb = expected_outcomes_exact(&d.mdp, &d.pi_b, &d.outcomes, 0).unwrap();
        assert_eq!(ge, vec![11.0, 2.0]);
        assert_eq!(gb, vec![9.0, 0.0]);
        for s in 6..11 {
            assert_eq!(
                expected_outcomes_exact(&d.mdp, &d.pi_e, &d.outcomes, s).unwrap(),
                expected_outcomes_exact(&d.mdp, &d.pi_b, &d.outcomes, s).unwrap()
            );
        }
    }

    #[test]
    fn slip_rows_are_distributions() {
        let m = toy_mdp_with_slip(0.1);
        assert!(m.validate().is_ok());
        assert!((m.transition[1][1][2] - 0.9).abs() < 1e-12);
        assert!((m.transition[1][1][3] - 0.1).abs() < 1e-12);
        assert_eq!(m.transition[3][0][4], 1.0);
    }

    #[test]
    fn nav_reward_examples() {
        let m = nav_mdp();
        assert_eq!(m.arrival_reward(&Point::new(0.55, 0.35)), 7.0);
        assert_eq!(m.arrival_reward(&Point::new(0.15, 0.05)), 4.0);
        assert_eq!(m.arrival_reward(&Point::new(0.96, 0.5)), 10.0);
        assert_eq!(m.arrival_reward(&Point::new(0.45, 0.45)), STEP_REWARD);
    }

    #[test]
    fn nav_policy_examples() {
        assert_eq!(nav_pi_b().greedy(&Point::new(0.15, 0.45)), SOUTH);
        assert_eq!(nav_pi_b().greedy(&Point::new(0.05, 0.05)), NORTH);
        assert_eq!(nav_pi_b().greedy(&Point::new(0.35, 0.25)), EAST);
        assert_eq!(nav_pi_e2().greedy(&Point::new(0.05, 0.25)), NORTH);
        assert_eq!(nav_pi_e1().greedy(&Point::new(0.05, 0.05)), EAST);
        assert_eq!(nav_pi_e1().greedy(&Point::new(0.15, 0.15)), EAST);
    }

    #[test]
    fn nav_behavior_rollout_stays_in_band() {
        let d = nav_domain();
        let t = rollout(&d.mdp, &d.pi_b, &Point::new(0.05, 0.05), 200, 0).unwrap();
        assert!(t.terminated);
        assert_eq!(&t.actions[..3], &[NORTH, NORTH, EAST]);
        assert!(t.states[2..t.states.len() - 1].iter().all(in_band));
        let g = d.outcomes.totals(&t);
        // integer oracle: x in hundredths, 5 + 10k > 95 first at k = 10
        let k = (0..).find(|k| 5 + 10 * k > 95).unwrap();
        assert_eq!(g[0], k as f64);
    }

    #[test]
    fn nav_rollouts_terminate_quickly() {
        let d = nav_domain();
        for p in [&d.pi_b, &d.pi_e1, &d.pi_e2] {
            for i in 0..10 {
                for j in 0..10 {
                    let s0 = Point::new(0.005 + 0.01 * i as f64, 0.005 + 0.01 * j as f64);
                    let t = rollout(&d.mdp, p, &s0, 30, 0).unwrap();
                    assert!(t.terminated);
                }
            }
        }
        assert!(d.mdp.is_deterministic());
    }
}
