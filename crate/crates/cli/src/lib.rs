//! Command-line front end: config loading, report writing and the
//! acceptance suite.

// `!(a > b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod verify;

use std::path::PathBuf;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use feedback_lab_core::lyapunov::NConvention;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::Context;
use crate::report::{fmt_f64, Reporter, Stamp};

#[derive(Debug, Parser)]
#[command(name = "feedback-lab", version, about = "Analyses of cyclic feedback ODE systems")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON, schema 1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides `n_convention`, e.g. edge_forward_negative.
    #[arg(long, global = true)]
    pub convention: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample Jacobians against the sign pattern and test dissipativity.
    CheckClass,
    /// Integrate one trajectory and record N along it.
    Simulate {
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        t1: Option<f64>,
    },
    /// Classify limit sets from a grid of initial conditions.
    Limits {
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Locate and classify equilibria in the search box.
    Equilibria,
    /// Locate periodic orbits and their multipliers.
    Cycles,
    /// Floquet blocks and cone checks for all critical elements.
    Floquet,
    /// Shoot connecting orbits between critical elements.
    Connect {
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Connections with dichotomy frames and transversality verdicts.
    Transversality {
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Robustness of a limit set under bump perturbations.
    Perturb {
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Critical elements, limit sets and connections in one report.
    Census,
    /// Run the acceptance suite.
    Verify {
        /// Subset of criteria, e.g. 1,2,6.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u32>>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckClass => "check-class",
            Command::Simulate { .. } => "simulate",
            Command::Limits { .. } => "limits",
            Command::Equilibria => "equilibria",
            Command::Cycles => "cycles",
            Command::Floquet => "floquet",
            Command::Connect { .. } => "connect",
            Command::Transversality { .. } => "transversality",
            Command::Perturb { .. } => "perturb",
            Command::Census => "census",
            Command::Verify { .. } => "verify",
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FEEDBACK_LAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.global.config, &cli.command) {
        (Some(p), _) => RunConfig::load(p)?,
        // verify stamps its reports with the shipped Goodwin config
        (None, Command::Verify { .. }) => RunConfig::from_json(verify::GOODWIN_CONFIG)?,
        (None, _) => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(s) = cli.global.seed {
        cfg.rng_seed = s;
    }
    if let Some(c) = &cli.global.convention {
        cfg.n_convention = c.parse::<NConvention>().map_err(|e| CliError::Config(format!("--convention: {e}")))?;
    }
    let a = &mut cfg.analysis;
    match &cli.command {
        Command::Simulate { x0, t1 } => {
            if x0.is_some() {
                a.simulate.x0 = x0.clone();
            }
            if let Some(t) = t1 {
                a.simulate.t1 = *t;
            }
        }
        Command::Limits { horizon: Some(h) } => a.limits.thresholds.horizon = *h,
        Command::Connect { directions: Some(d) } | Command::Transversality { directions: Some(d) } => {
            a.shoot.directions = *d
        }
        Command::Perturb { epsilons: Some(e) } => a.perturb.epsilons = e.clone(),
        _ => {}
    }
    if let Some(o) = &cli.global.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_verify(cfg: &RunConfig, rep: &Reporter, criteria: &Option<Vec<u32>>) -> Result<serde_json::Value, CliError> {
    let ids: Vec<u32> = match criteria {
        Some(c) => c.clone(),
        None => verify::CRITERIA.iter().map(|c| c.0).collect(),
    };
    let mut results = Vec::new();
    for id in ids {
        let r = verify::run_criterion(id, cfg.n_convention, cfg.rng_seed);
        println!("{}", r.line());
        results.push(r);
    }
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| vec![r.id.to_string(), r.passed.to_string(), r.title.to_string(), r.detail.clone()])
        .collect();
    rep.write_csv("verify.csv", &["criterion".into(), "passed".into(), "title".into(), "detail".into()], &rows)?;
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    rep.write_report("verify", &json!({ "passed": failed.is_empty(), "failed": failed, "criteria": results }))?;
    let timings =
        json!(results.iter().map(|r| json!({ "criterion": r.id, "seconds": fmt_f64(r.elapsed) })).collect::<Vec<_>>());
    if failed.is_empty() {
        Ok(timings)
    } else {
        Err(CliError::VerifyFailed(format!("criteria {failed:?} failed")))
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig, rep: &Reporter) -> Result<serde_json::Value, CliError> {
    if let Command::Verify { criteria } = &cli.command {
        return run_verify(cfg, rep, criteria);
    }
    let ctx = Context::new(cfg)?;
    match &cli.command {
        Command::CheckClass => commands::check_class_cmd(&ctx, rep),
        Command::Simulate { .. } => commands::simulate_cmd(&ctx, rep),
        Command::Limits { .. } => commands::limits_cmd(&ctx, rep),
        Command::Equilibria => commands::equilibria_cmd(&ctx, rep),
        Command::Cycles => commands::cycles_cmd(&ctx, rep),
        Command::Floquet => commands::floquet_cmd(&ctx, rep),
        Command::Connect { .. } => commands::connect_cmd(&ctx, rep),
        Command::Transversality { .. } => commands::transversality_cmd(&ctx, rep),
        Command::Perturb { .. } => commands::perturb_cmd(&ctx, rep),
        Command::Census => commands::census_cmd(&ctx, rep),
        Command::Verify { .. } => unreachable!("handled above"),
    }?;
    Ok(serde_json::Value::Null)
}

fn report_error(err: &CliError, rep: Option<&Reporter>) {
    eprintln!("{}", serde_json::to_string(&err.to_json()).expect("serializable"));
    if let Some(r) = rep {
        let _ = r.write_error(err);
    }
}

fn report_early_error(err: &CliError, out: Option<&std::path::Path>) {
    eprintln!("{}", serde_json::to_string(&err.to_json()).expect("serializable"));
    if let Some(o) = out {
        if std::fs::create_dir_all(o).is_ok() {
            let _ = std::fs::write(
                o.join("error.json"),
                serde_json::to_string_pretty(&err.to_json()).expect("serializable") + "\n",
            );
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = SystemTime::now();
    let command = cli.command.name();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            // without a config only --out names the output directory
            report_early_error(&e, cli.global.out.as_deref());
            return e.exit_code();
        }
    };
    let field = match cfg.build_model() {
        Ok(f) => f,
        Err(e) => {
            report_early_error(&e, Some(&cfg.output_dir));
            return e.exit_code();
        }
    };
    let rep = match Reporter::new(&cfg.output_dir, Stamp::new(&cfg, &field)) {
        Ok(r) => r,
        Err(e) => {
            report_error(&e, None);
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.global.workers.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            let e = CliError::Config(format!("--workers: {e}"));
            report_error(&e, Some(&rep));
            return e.exit_code();
        }
    };
    log::info!("{command} with {} worker threads", pool.current_num_threads());
    let outcome = pool.install(|| dispatch(&cli, &cfg, &rep));
    let (code, extra) = match outcome {
        Ok(extra) => (0, extra),
        Err(e) => {
            report_error(&e, Some(&rep));
            (e.exit_code(), serde_json::Value::Null)
        }
    };
    if let Err(e) = rep.write_meta(command, started, code, extra) {
        report_error(&e, None);
        return e.exit_code();
    }
    code
}
