use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cpk_cli::{cmd_compare_baseline, cmd_explain, cmd_export, cmd_optimize, resolve, Settings, DOMAINS};
use cpk_core::cmdp::KappaUnits;

#[derive(Parser)]
#[command(name = "cpk", version, about = "Explain and optimize policy changes against a behavior policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain how an alternative policy changes outcomes relative to the behavior policy.
    Explain(Common),
    /// Sweep the change budget and write the return/cost frontier.
    Optimize(Common),
    /// Compare the budget sweep with the policy-iteration trace.
    CompareBaseline(Common),
    /// List or export the bundled domains.
    Domains {
        #[command(subcommand)]
        action: DomainsCmd,
    },
}

#[derive(Subcommand)]
enum DomainsCmd {
    List,
    Export {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Expected,
    Aggregate,
}

#[derive(Args)]
struct Common {
    /// Bundled domain: toy or nav2d.
    #[arg(long)]
    domain: Option<String>,
    /// Tabular MDP in JSON.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long)]
    pi_b: Option<PathBuf>,
    #[arg(long)]
    pi_e: Option<PathBuf>,
    /// Candidate policies for the region construction (nav2d).
    #[arg(long, num_args = 1..)]
    candidates: Vec<PathBuf>,
    /// Change budget; repeatable. Accepts "inf".
    #[arg(long = "kappa", value_parser = parse_kappa)]
    kappa: Vec<f64>,
    #[arg(long, value_enum, default_value = "expected")]
    kappa_units: Units,
    #[arg(long, default_value_t = 0.1)]
    kappa_pi: f64,
    #[arg(long, default_value_t = 0.1)]
    kappa_t: f64,
    #[arg(long, default_value_t = 3)]
    d_max: usize,
    #[arg(long, default_value_t = 200)]
    bootstrap_b: usize,
    /// Rollouts per bootstrap resample.
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Logged trajectories for tabular outcome estimation.
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    /// Exploration rate of the logging policy.
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kappa(s: &str) -> Result<f64, String> {
    let v = match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => f64::INFINITY,
        t => t.parse::<f64>().map_err(|e| e.to_string())?,
    };
    if v.is_nan() || v < 0.0 {
        return Err("kappa must be non-negative".into());
    }
    Ok(v)
}

impl Common {
    fn settings(&self) -> Settings {
        let mut st = Settings::with_seed(self.seed);
        st.divergence.kappa_pi = self.kappa_pi;
        st.divergence.kappa_t = self.kappa_t;
        st.divergence.d_max = self.d_max;
        st.bootstrap.n_bootstrap = self.bootstrap_b;
        st.bootstrap.n_rollouts = self.rollouts;
        st.bootstrap.ci_level = self.ci_level;
        st.batch_size = self.batch_size;
        st.epsilon = self.epsilon;
        st
    }

    fn units(&self) -> KappaUnits {
        match self.kappa_units {
            Units::Expected => KappaUnits::Expected,
            Units::Aggregate => KappaUnits::Aggregate,
        }
    }

    fn label(&self) -> String {
        match (&self.domain, &self.mdp) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => p.display().to_string(),
            (None, None) => String::new(),
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn run(cli: &Cli) -> cpk_core::Result<()> {
    match &cli.command {
        Command::Explain(c) | Command::Optimize(c) | Command::CompareBaseline(c) => {
            let problem = resolve(c.domain.as_deref(), c.mdp.as_deref(), c.pi_b.as_deref(), c.pi_e.as_deref(), &c.candidates)?;
            let st = c.settings();
            match &cli.command {
                Command::Explain(_) => {
                    let r = cmd_explain(&problem, &c.label(), &st, &c.out)?;
                    print!("{}", r.text);
                }
                Command::Optimize(_) => {
                    let f = cmd_optimize(&problem, &c.kappa, c.units(), &st, &c.out)?;
                    for p in f {
                        println!("kappa={} cost={} return={}", p.kappa, p.expected_cost, p.expected_return);
                    }
                }
                _ => {
                    let r = cmd_compare_baseline(&problem, &c.kappa, c.units(), &st, &c.out)?;
                    println!("pi_subset_of_cmdp={}", r.pi_subset_of_cmdp);
                }
            }
            Ok(())
        }
        Command::Domains { action } => match action {
            DomainsCmd::List => {
                for d in DOMAINS {
                    println!("{d}");
                }
                Ok(())
            }
            DomainsCmd::Export { name, out } => {
                for f in cmd_export(name, out)? {
                    println!("{}", out.join(f).display());
                }
                Ok(())
            }
        },
    }
}

fn out_dir(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Explain(c) | Command::Optimize(c) | Command::CompareBaseline(c) => Some(&c.out),
        Command::Domains {
            action: DomainsCmd::Export { out, .. },
        } => Some(out),
        Command::Domains { .. } => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CPK_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            let json = serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.kind()));
            eprintln!("{json}");
            if let Some(dir) = out_dir(&cli) {
                if std::fs::create_dir_all(dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), format!("{json}\n"));
                }
            }
            ExitCode::FAILURE
        }
    }
}
