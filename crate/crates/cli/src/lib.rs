//! Subcommand implementations behind the `cpk` binary.

use std::fs;
use std::path::Path;

use serde::Serialize;

use cpk_core::bench::{policy_iteration_trace, TracePoint};
use cpk_core::cmdp::{
    aggregate_changes, deviation_cost, extract_policy, solve_cmdp_milp, sweep_kappa, CmdpInstance, FrontierPoint, KappaUnits,
};
use cpk_core::divergence::{collect_diverging_states_multi, DivergenceConfig, LabeledStateSet};
use cpk_core::domains::{nav_domain, nav_features, nav_starts, tabular_features, toy_domain};
use cpk_core::explain::{build_explanation, describe_tabular_members, render, Aggregator, ExplainSetup, Explanation, RenderStyle};
use cpk_core::mdp::{BoxNavMdp, Direction, Outcome, OutcomeFunctionSet, Point, Policy, State, TabularMdp};
use cpk_core::outcome::{epsilon_greedy_batch, BatchOracle, BootstrapConfig, OnlineOracle};
use cpk_core::region::{collect_regions, lift_policy, region_mdp_from_rollouts, RegionMdp};
use cpk_core::rules::GreedyDnfLearner;
use cpk_core::{Error, Result};

pub const DOMAINS: [&str; 2] = ["toy", "nav2d"];

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub divergence: DivergenceConfig,
    pub bootstrap: BootstrapConfig,
    /// Trajectories in the logged batch for tabular outcome estimation.
    pub batch_size: usize,
    /// Exploration rate of the logging policy.
    pub epsilon: f64,
}

impl Settings {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            divergence: DivergenceConfig::default(),
            bootstrap: BootstrapConfig::default(),
            batch_size: 500,
            epsilon: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.divergence.validate()?;
        self.bootstrap.validate()?;
        if self.batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub enum Problem {
    Tabular {
        mdp: TabularMdp,
        pi_b: Policy,
        pi_e: Option<Policy>,
        outcomes: OutcomeFunctionSet<usize>,
    },
    Nav {
        mdp: BoxNavMdp,
        pi_b: Policy,
        pi_e: Option<Policy>,
        candidates: Vec<Policy>,
        outcomes: OutcomeFunctionSet<Point>,
    },
}

/// Total reward and trajectory length, for tabular models without bundled
/// outcomes.
pub fn generic_outcomes(mdp: &TabularMdp) -> OutcomeFunctionSet<usize> {
    let reward = mdp.reward.clone();
    let absorbing = mdp.absorbing_mask();
    OutcomeFunctionSet::new(vec![
        Outcome::new(
            "trajectory length",
            Direction::LowerIsBetter,
            "longer trajectory",
            "shorter trajectory",
            move |s: &usize, _| if absorbing[*s] { 0.0 } else { 1.0 },
        ),
        Outcome::new("total reward", Direction::HigherIsBetter, "more reward", "less reward", move |s: &usize, a| {
            reward[*s][a]
        }),
    ])
}

/// Resolves a bundled domain or a tabular model with policy overrides.
pub fn resolve(
    domain: Option<&str>,
    mdp_path: Option<&Path>,
    pi_b: Option<&Path>,
    pi_e: Option<&Path>,
    candidates: &[std::path::PathBuf],
) -> Result<Problem> {
    let load = |p: Option<&Path>| p.map(Policy::load).transpose();
    let cands = candidates.iter().map(|p| Policy::load(p)).collect::<Result<Vec<_>>>()?;
    match (domain, mdp_path) {
        (Some(_), Some(_)) => Err(Error::InvalidArgument("give either --domain or --mdp".into())),
        (Some("toy"), None) => {
            let d = toy_domain();
            Ok(Problem::Tabular {
                mdp: d.mdp,
                pi_b: load(pi_b)?.unwrap_or(d.pi_b),
                pi_e: Some(load(pi_e)?.unwrap_or(d.pi_e)),
                outcomes: d.outcomes,
            })
        }
        (Some("nav2d"), None) => {
            let d = nav_domain();
            Ok(Problem::Nav {
                mdp: d.mdp,
                pi_b: load(pi_b)?.unwrap_or(d.pi_b),
                pi_e: load(pi_e)?,
                candidates: if cands.is_empty() { vec![d.pi_e1, d.pi_e2] } else { cands },
                outcomes: d.outcomes,
            })
        }
        (Some(other), None) => Err(Error::InvalidArgument(format!("unknown domain '{other}'"))),
        (None, Some(path)) => {
            let mdp = TabularMdp::load(path)?;
            let pi_b = load(pi_b)?.ok_or_else(|| Error::InvalidArgument("--mdp needs --pi-b".into()))?;
            pi_b.validate(mdp.n_actions, Some(mdp.n_states))?;
            let pi_e = load(pi_e)?;
            if let Some(p) = &pi_e {
                p.validate(mdp.n_actions, Some(mdp.n_states))?;
            }
            let outcomes = generic_outcomes(&mdp);
            Ok(Problem::Tabular { mdp, pi_b, pi_e, outcomes })
        }
        (None, None) => Err(Error::InvalidArgument("give --domain or --mdp".into())),
    }
}

pub struct ExplainOutput {
    pub explanation: Explanation,
    pub text: String,
    pub aggregator: Aggregator,
    pub diverging_csv: String,
}

fn set_csv<S: State>(set: &LabeledStateSet<S>) -> Result<String> {
    let mut buf = Vec::new();
    set.write_csv(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

/// Explanation over the starts in the support of p0, with outcomes
/// estimated by model-based bootstrapping on an ε-greedy batch of `pi_b`.
pub fn explain_tabular(
    mdp: &TabularMdp,
    pi_b: &Policy,
    pi_e: &Policy,
    outcomes: &OutcomeFunctionSet<usize>,
    st: &Settings,
) -> Result<ExplainOutput> {
    st.validate()?;
    let starts = mdp.p0_support();
    let set = collect_diverging_states_multi(mdp, pi_b, pi_e, &starts, &st.divergence, st.seed)?;
    let features = tabular_features(mdp.n_states);
    let learner = GreedyDnfLearner::default();
    let aggregator = Aggregator::train(&set, &features, &learner)?;
    let batch = epsilon_greedy_batch(mdp, pi_b, st.epsilon, st.batch_size, st.seed);
    let oracle = BatchOracle::new(
        mdp.n_states,
        mdp.n_actions,
        mdp.absorbing.clone(),
        &batch,
        pi_b,
        pi_e,
        outcomes,
        st.bootstrap,
        st.seed,
    )?;
    let describe = |m: &[usize], _: bool| describe_tabular_members(m);
    let setup = ExplainSetup {
        starts: &starts,
        start_features: &features,
        learner: &learner,
        describe_members: &describe,
        seed: st.seed,
    };
    let explanation = build_explanation(mdp, pi_e, &aggregator, &oracle, outcomes, &setup)?;
    let text = render(&explanation, &RenderStyle::Indexed);
    Ok(ExplainOutput {
        explanation,
        text,
        aggregator,
        diverging_csv: set_csv(&set)?,
    })
}

pub fn nav_style() -> RenderStyle {
    RenderStyle::Named((0..3).map(|a| BoxNavMdp::action_name(a).to_string()).collect())
}

/// Explanation over a grid of starts in the initial box, with outcomes
/// estimated from bootstrapped rollouts.
pub fn explain_nav(
    mdp: &BoxNavMdp,
    pi_b: &Policy,
    pi_e: &Policy,
    outcomes: &OutcomeFunctionSet<Point>,
    st: &Settings,
) -> Result<ExplainOutput> {
    st.validate()?;
    let starts = nav_starts(mdp);
    let set = collect_diverging_states_multi(mdp, pi_b, pi_e, &starts, &st.divergence, st.seed)?;
    let features = nav_features();
    let learner = GreedyDnfLearner::default();
    let aggregator = Aggregator::train(&set, &features, &learner)?;
    let oracle = OnlineOracle {
        env: mdp,
        pi_b,
        pi_e,
        outcomes,
        cfg: st.bootstrap,
        seed: st.seed,
    };
    let describe = |m: &[Point], single: bool| {
        if single {
            "the initial region".to_string()
        } else {
            m.iter().map(|p| p.repr()).collect::<Vec<_>>().join(", ")
        }
    };
    let setup = ExplainSetup {
        starts: &starts,
        start_features: &features,
        learner: &learner,
        describe_members: &describe,
        seed: st.seed,
    };
    let explanation = build_explanation(mdp, pi_e, &aggregator, &oracle, outcomes, &setup)?;
    let text = render(&explanation, &nav_style());
    Ok(ExplainOutput {
        explanation,
        text,
        aggregator,
        diverging_csv: set_csv(&set)?,
    })
}

/// Region MDP over the diverging regions of `candidates` against `pi_b`.
pub fn nav_bridge(mdp: &BoxNavMdp, pi_b: &Policy, candidates: &[Policy], st: &Settings) -> Result<RegionMdp> {
    st.validate()?;
    let starts = nav_starts(mdp);
    let learner = GreedyDnfLearner::default();
    let regions = collect_regions(mdp, pi_b, candidates, &starts, &nav_features(), &st.divergence, &learner, st.seed)?;
    if regions.is_empty() {
        return Err(Error::InvalidArgument("no candidate diverges from the behavior policy".into()));
    }
    region_mdp_from_rollouts(mdp, pi_b, candidates, &regions, &starts, st.seed)
}

/// Unconstrained optimum of the region MDP, lifted to the continuous domain.
pub fn nav_optimum(mdp: &BoxNavMdp, pi_b: &Policy, candidates: &[Policy], st: &Settings) -> Result<Policy> {
    let rm = nav_bridge(mdp, pi_b, candidates, st)?;
    let inst = CmdpInstance::new(rm.mdp.clone(), deviation_cost(&rm.mdp, &rm.pi_b), f64::INFINITY)?;
    let sol = solve_cmdp_milp(&inst)?;
    let acts = extract_policy(&sol, &rm.mdp, &rm.pi_b)?.greedy_table(rm.mdp.n_states);
    lift_policy(&acts, &rm, pi_b)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    Ok(fs::write(path, contents)?)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

#[derive(Serialize)]
struct ExplainFile<'a> {
    domain: &'a str,
    seed: u64,
    explanation: &'a Explanation,
    text: &'a str,
}

/// `explain`: writes explanation.txt, explanation.json and
/// diverging_states.csv.
pub fn cmd_explain(problem: &Problem, label: &str, st: &Settings, out: &Path) -> Result<ExplainOutput> {
    fs::create_dir_all(out)?;
    let result = match problem {
        Problem::Tabular {
            mdp, pi_b, pi_e, outcomes, ..
        } => {
            let pi_e = pi_e.as_ref().ok_or_else(|| Error::InvalidArgument("explain needs --pi-e".into()))?;
            explain_tabular(mdp, pi_b, pi_e, outcomes, st)?
        }
        Problem::Nav {
            mdp,
            pi_b,
            pi_e,
            candidates,
            outcomes,
        } => {
            let pi_e = match pi_e {
                Some(p) => p.clone(),
                None => nav_optimum(mdp, pi_b, candidates, st)?,
            };
            explain_nav(mdp, pi_b, &pi_e, outcomes, st)?
        }
    };
    write(&out.join("explanation.txt"), &result.text)?;
    write(
        &out.join("explanation.json"),
        &to_json(&ExplainFile {
            domain: label,
            seed: st.seed,
            explanation: &result.explanation,
            text: &result.text,
        })?,
    )?;
    write(&out.join("diverging_states.csv"), &result.diverging_csv)?;
    Ok(result)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn frontier_csv(points: &[FrontierPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kappa", "expected_cost", "aggregate_changes", "expected_return"])
        .map_err(Error::from)?;
    for p in points {
        w.write_record([
            p.kappa.to_string(),
            p.expected_cost.to_string(),
            fmt_opt(p.aggregate_changes),
            p.expected_return.to_string(),
        ])
        .map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// `optimize`: writes frontier.csv, then policy_k{i}.json and
/// explanation_k{i}.txt for the i-th budget. Nav runs also write the
/// region MDP and each region-level policy.
pub fn cmd_optimize(problem: &Problem, kappas: &[f64], units: KappaUnits, st: &Settings, out: &Path) -> Result<Vec<FrontierPoint>> {
    if kappas.is_empty() {
        return Err(Error::InvalidArgument("give at least one --kappa".into()));
    }
    let mut sorted = kappas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    fs::create_dir_all(out)?;
    let frontier = match problem {
        Problem::Tabular {
            mdp, pi_b, outcomes, ..
        } => {
            let inst = CmdpInstance::new(mdp.clone(), deviation_cost(mdp, pi_b), 0.0)?;
            let frontier = sweep_kappa(&inst, pi_b, &sorted, units)?;
            for (i, p) in frontier.iter().enumerate() {
                write(&out.join(format!("policy_k{i}.json")), &to_json(&p.policy)?)?;
                let e = explain_tabular(mdp, pi_b, &p.policy, outcomes, st)?;
                write(&out.join(format!("explanation_k{i}.txt")), &e.text)?;
            }
            frontier
        }
        Problem::Nav {
            mdp,
            pi_b,
            candidates,
            outcomes,
            ..
        } => {
            let rm = nav_bridge(mdp, pi_b, candidates, st)?;
            write(&out.join("region_mdp.json"), &to_json(&rm)?)?;
            let inst = CmdpInstance::new(rm.mdp.clone(), deviation_cost(&rm.mdp, &rm.pi_b), 0.0)?;
            let mut frontier = sweep_kappa(&inst, &rm.pi_b, &sorted, units)?;
            for (i, p) in frontier.iter_mut().enumerate() {
                write(&out.join(format!("region_policy_k{i}.json")), &to_json(&p.policy)?)?;
                let lifted = lift_policy(&p.policy.greedy_table(rm.mdp.n_states), &rm, pi_b)?;
                write(&out.join(format!("policy_k{i}.json")), &to_json(&lifted)?)?;
                let e = explain_nav(mdp, pi_b, &lifted, outcomes, st)?;
                write(&out.join(format!("explanation_k{i}.txt")), &e.text)?;
                p.expected_return = rm.continuous_return(p.expected_return);
                p.policy = lifted;
            }
            frontier
        }
    };
    write(&out.join("frontier.csv"), &frontier_csv(&frontier)?)?;
    Ok(frontier)
}

#[derive(Clone, Debug, Serialize)]
pub struct BaselineReport {
    pub cmdp: Vec<(f64, f64, f64)>,
    pub pi: Vec<(f64, f64)>,
    /// Every policy-iteration point matches some frontier point.
    pub pi_subset_of_cmdp: bool,
    /// Policy-iteration points strictly between the first and the last
    /// that lie on the frontier.
    pub pi_intermediate_on_frontier: usize,
    pub pi_final_on_frontier: bool,
}

const MATCH_TOL: f64 = 1e-6;

fn on_frontier(p: &TracePoint, frontier: &[FrontierPoint]) -> bool {
    frontier
        .iter()
        .any(|q| (q.expected_cost - p.expected_cost).abs() < MATCH_TOL && (q.expected_return - p.expected_return).abs() < MATCH_TOL)
}

fn baseline(mdp: &TabularMdp, pi_b: &Policy, kappas: &[f64], units: KappaUnits) -> Result<(Vec<FrontierPoint>, Vec<TracePoint>)> {
    let trace = policy_iteration_trace(mdp, pi_b)?;
    let mut budgets: Vec<f64> = kappas.iter().map(|&k| units.to_expected(mdp, k)).collect::<Result<_>>()?;
    budgets.extend(trace.iter().map(|p| p.expected_cost));
    budgets.sort_by(|a, b| a.total_cmp(b));
    budgets.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let inst = CmdpInstance::new(mdp.clone(), deviation_cost(mdp, pi_b), 0.0)?;
    Ok((sweep_kappa(&inst, pi_b, &budgets, KappaUnits::Expected)?, trace))
}

/// `compare-baseline`: sweeps the budgets in `kappas` plus every
/// policy-iteration cost, and writes baseline.csv and baseline.json.
pub fn cmd_compare_baseline(problem: &Problem, kappas: &[f64], units: KappaUnits, st: &Settings, out: &Path) -> Result<BaselineReport> {
    fs::create_dir_all(out)?;
    let (mdp, frontier, trace) = match problem {
        Problem::Tabular { mdp, pi_b, .. } => {
            let (f, t) = baseline(mdp, pi_b, kappas, units)?;
            (mdp.clone(), f, t)
        }
        Problem::Nav {
            mdp, pi_b, candidates, ..
        } => {
            let rm = nav_bridge(mdp, pi_b, candidates, st)?;
            let (f, t) = baseline(&rm.mdp, &rm.pi_b, kappas, units)?;
            (rm.mdp, f, t)
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "kappa", "expected_cost", "aggregate_changes", "expected_return"])
        .map_err(Error::from)?;
    for p in &frontier {
        w.write_record([
            "cmdp".to_string(),
            p.kappa.to_string(),
            p.expected_cost.to_string(),
            fmt_opt(p.aggregate_changes),
            p.expected_return.to_string(),
        ])
        .map_err(Error::from)?;
    }
    for p in &trace {
        w.write_record([
            "pi".to_string(),
            String::new(),
            p.expected_cost.to_string(),
            fmt_opt(aggregate_changes(&mdp, p.expected_cost)),
            p.expected_return.to_string(),
        ])
        .map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write(&out.join("baseline.csv"), &String::from_utf8_lossy(&bytes))?;
    let n = trace.len();
    let report = BaselineReport {
        cmdp: frontier.iter().map(|p| (p.kappa, p.expected_cost, p.expected_return)).collect(),
        pi: trace.iter().map(|p| (p.expected_cost, p.expected_return)).collect(),
        pi_subset_of_cmdp: trace.iter().all(|p| on_frontier(p, &frontier)),
        pi_intermediate_on_frontier: if n > 2 {
            trace[1..n - 1].iter().filter(|p| on_frontier(p, &frontier)).count()
        } else {
            0
        },
        pi_final_on_frontier: trace.last().is_some_and(|p| on_frontier(p, &frontier)),
    };
    write(&out.join("baseline.json"), &to_json(&report)?)?;
    Ok(report)
}

/// `domains export`: the model and its policies as JSON.
pub fn cmd_export(domain: &str, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        write(&out.join(name), &body)?;
        files.push(name.to_string());
        Ok(())
    };
    match domain {
        "toy" => {
            let d = toy_domain();
            put("mdp.json", d.mdp.to_json_string()? + "\n")?;
            put("pi_b.json", to_json(&d.pi_b)?)?;
            put("pi_e.json", to_json(&d.pi_e)?)?;
        }
        "nav2d" => {
            let d = nav_domain();
            put("domain.json", to_json(&d.mdp)?)?;
            put("pi_b.json", to_json(&d.pi_b)?)?;
            put("pi_e1.json", to_json(&d.pi_e1)?)?;
            put("pi_e2.json", to_json(&d.pi_e2)?)?;
        }
        other => return Err(Error::InvalidArgument(format!("unknown domain '{other}'"))),
    }
    Ok(files)
}
