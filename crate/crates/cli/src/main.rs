use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use creator_game::bounds::BoundReport;
use creator_game::checks::standard_suite;
use creator_game::dynamics::{run_dynamics, DynamicsConfig, DynamicsSummary, Exp3Config, HistogramKey};
use creator_game::equilibrium::{
    max_welfare_exact, max_welfare_heuristic, poa, SolveOptions, DEFAULT_ENUMERATION_BUDGET,
    DEFAULT_LP_BUDGET,
};
use creator_game::instances::InstanceSpec;
use creator_game::GameInstance;
use creator_game_cli::{exit, run_experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "ccgame", version, about = "Content-creator competition games: equilibria, learning dynamics and efficiency bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Input JSON (instance, instance spec or experiment config).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance from an instance spec and write `instance.json`.
    Gen(Common),
    /// Exact PoA: maximal welfare over pure profiles and the worst CCE.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        exact_threshold: u128,
        #[arg(long, default_value_t = DEFAULT_LP_BUDGET)]
        lp_budget: u128,
    },
    /// Run Exp3 for every player and report PotA and regret.
    Dynamics {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 5000)]
        horizon: usize,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        exact_threshold: u128,
    },
    /// Closed-form bounds as CSV, one column per beta.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5])]
        beta: Vec<f64>,
        #[arg(long = "k", value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5, 7])]
        k: Vec<usize>,
        /// Player count for the lower bound.
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Oracle and property suites; exits with status 3 on any failure.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Acceptance-scale sample sizes.
        #[arg(long)]
        full: bool,
    },
    /// Run an experiment config over its grid and write reports.
    Experiment(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn require_config(common: &Common) -> Result<&Path, HarnessError> {
    common
        .config
        .as_deref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Accepts either a serialized instance or an instance spec.
fn load_instance(path: &Path, seed: Option<u64>) -> Result<GameInstance, HarnessError> {
    let text = fs::read_to_string(path)?;
    if let Ok(g) = GameInstance::from_json_str(&text) {
        return Ok(g);
    }
    let mut spec: InstanceSpec = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let built = spec.build()?;
    for w in &built.warnings {
        eprintln!("warning: {w}");
    }
    Ok(built.instance)
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Gen(common) => {
            let text = fs::read_to_string(require_config(&common)?)?;
            let mut spec: InstanceSpec = serde_json::from_str(&text)?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let built = spec.build()?;
            for w in &built.warnings {
                eprintln!("warning: {w}");
            }
            let dir = out_dir(&common);
            fs::create_dir_all(&dir)?;
            let path = dir.join("instance.json");
            built.instance.save(&path)?;
            println!("{}", path.display());
        }
        Command::Solve {
            common,
            exact_threshold,
            lp_budget,
        } => {
            let g = load_instance(require_config(&common)?, common.seed)?;
            let report = poa(
                &g,
                &SolveOptions {
                    exact_threshold,
                    lp_budget,
                    seed: common.seed.unwrap_or(0),
                },
            )?;
            let dir = out_dir(&common);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("solve.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            if let Some(cce) = &report.cce {
                cce.write_csv(fs::File::create(dir.join("cce.csv"))?)?;
            }
            println!("max_welfare,{}", report.max_welfare);
            println!("argmax_profile,{}", report.argmax_profile);
            println!("worst_cce_welfare,{}", report.worst_cce_welfare);
            println!("poa,{}", report.poa);
        }
        Command::Dynamics {
            common,
            eta,
            epsilon,
            horizon,
            exact_threshold,
        } => {
            let seed = common.seed.unwrap_or(0);
            let g = load_instance(require_config(&common)?, common.seed)?;
            let config = DynamicsConfig::shared(Exp3Config {
                eta,
                epsilon,
                horizon,
                seed,
                reward_scale: None,
            });
            let trace = run_dynamics(&g, &config)?;
            let opt = match g.num_profiles() {
                Some(p) if p <= exact_threshold => max_welfare_exact(&g, exact_threshold)?,
                _ => max_welfare_heuristic(&g, seed)?,
            };
            let summary = DynamicsSummary::new(&trace, &g, Some(opt.welfare), true, HistogramKey::PlayerAction);
            let dir = out_dir(&common);
            fs::create_dir_all(&dir)?;
            trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
            fs::write(dir.join("dynamics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            println!("avg_welfare,{}", summary.avg_welfare);
            println!("max_welfare,{}", opt.welfare);
            if let Some(p) = summary.pota {
                println!("pota,{p}");
            }
        }
        Command::Bounds { common, beta, k, n } => {
            let mut buf = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                let mut header = vec!["K".to_string()];
                header.extend(beta.iter().map(|b| format!("beta={b}")));
                header.extend(beta.iter().map(|b| format!("lower n={n} beta={b}")));
                w.write_record(&header)?;
                for &kk in &k {
                    let reports: Vec<BoundReport> = beta.iter().map(|&b| BoundReport::new(n, b, kk, None)).collect();
                    let mut rec = vec![kk.to_string()];
                    rec.extend(reports.iter().map(|r| format!("{:.2}", r.poa_upper)));
                    rec.extend(reports.iter().map(|r| {
                        if r.lower_bound_valid {
                            format!("{:.2}", r.poa_lower)
                        } else {
                            "/".into()
                        }
                    }));
                    w.write_record(&rec)?;
                }
                w.flush()?;
            }
            let text = String::from_utf8(buf).expect("csv output is utf-8");
            print!("{text}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("bounds.csv"), &text)?;
            }
        }
        Command::Verify { common, full } => {
            let outcomes = standard_suite(common.seed.unwrap_or(0), full)?;
            let mut failed = false;
            for o in &outcomes {
                let status = if o.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", o.name, o.detail);
                failed |= !o.passed;
            }
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&outcomes)? + "\n")?;
            }
            if failed {
                return Ok(exit::VERIFICATION_FAILED);
            }
        }
        Command::Experiment(common) => {
            let mut config = ExperimentConfig::load(require_config(&common)?)?;
            if let Some(s) = common.seed {
                config.seed = s;
            }
            if common.workers.is_some() {
                config.workers = common.workers;
            }
            let dir = common.out.clone().unwrap_or_else(|| config.out.clone());
            let outcome = run_experiment(&config, &dir)?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.summary.failed_rows > 0 {
                eprintln!("warning: {} rows recorded errors", outcome.summary.failed_rows);
            }
            if !outcome.all_checks_passed() {
                for name in &outcome.summary.failed_checks {
                    eprintln!("FAIL {name}");
                }
                return Ok(exit::VERIFICATION_FAILED);
            }
        }
    }
    Ok(exit::SUCCESS)
}
