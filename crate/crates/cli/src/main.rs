use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lem_core::data::{compare_metrics, export_results, report_metrics, Metrics, RunStats, ScenarioConfig};
use lem_core::orchestrator::{run_timeline, run_without_smo, save_scenario, RunOutcome, Scenario};
use lem_core::secondary::BudgetMode;
use lem_core::validate::validate_run_dir;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lem", version, about = "Two-tier local electricity market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario (feeder, profiles, LMPs, config).
    Gen(Common),
    /// Run the market with secondary-market operators.
    Run(Common),
    /// Run the primary market alone, with assumed node flexibility.
    Baseline(Common),
    /// Run both and report metrics side by side.
    Compare(Common),
    /// Check the invariants of a finished run directory.
    Validate(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (TOML). Defaults to the built-in synthetic scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    budget_mode: Option<BudgetMode>,
    #[arg(long)]
    horizon_minutes: Option<usize>,
}

fn parse_mode(s: &str) -> Result<BudgetMode, String> {
    s.parse()
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.budget_mode {
            cfg.market.budget_mode = m;
        }
        if let Some(h) = self.horizon_minutes {
            cfg.horizon_minutes = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_metadata(dir: &Path, scn: &Scenario, out: &RunOutcome, metrics: &Metrics) -> Result<()> {
    let cfg = &scn.config;
    let meta = json!({
        "mode": out.results.mode,
        "seed": cfg.seed,
        "horizon_minutes": cfg.horizon_minutes,
        "dt_s_minutes": cfg.dt_s_minutes,
        "dt_p_minutes": cfg.dt_p_minutes,
        "budget_mode": cfg.market.budget_mode,
        "tolerances": {
            "solver_feas": 1e-7,
            "solver_gap": 1e-7,
            "pm_solver_feas": 1e-8,
            "lexicographic_epsilon": cfg.market.epsilon,
            "lexicographic_abs_floor": 1e-9,
            "socp_gap_flag": lem_core::primary::SOCP_GAP_FLAG,
        },
        "versions": {
            "lem": env!("CARGO_PKG_VERSION"),
            "clarabel": "0.11.1",
        },
        "stats": stats_json(&out.stats),
        "metrics": metrics,
    });
    let path = dir.join("run_metadata.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn stats_json(s: &RunStats) -> serde_json::Value {
    let finite = |x: f64| if x.is_finite() { json!(x) } else { serde_json::Value::Null };
    json!({
        "sm_clearings": s.sm_clearings,
        "pm_clearings": s.pm_clearings,
        "relaxed_setpoints": s.relaxed_setpoints,
        "max_setpoint_gap_kw": s.max_setpoint_gap_kw,
        "budget_dropped": s.budget_dropped,
        "price_infeasible": s.price_infeasible,
        "max_socp_gap": finite(s.max_socp_gap),
        "min_socp_gap": finite(s.min_socp_gap),
        "flagged_lines": s.flagged_lines,
    })
}

fn execute(scn: &Scenario, with_smo: bool, dir: &Path) -> Result<Metrics> {
    let outcome = if with_smo {
        run_timeline(scn, scn.config.market.budget_mode)?
    } else {
        run_without_smo(scn)?
    };
    save_scenario(scn, dir)?;
    export_results(&outcome.results, dir)?;
    let metrics = report_metrics(&outcome.results, scn.network.slack_id());
    write_metadata(dir, scn, &outcome, &metrics)?;
    log::info!("{}: {:?}", dir.display(), outcome.stats);
    Ok(metrics)
}

fn print_metrics(m: &Metrics) {
    println!(
        "{:<8} avg d-LMP {:.5} $/kWh  avg retail {:.5} $/kWh  losses {:.2} kWh  import {:.1} kWh",
        match m.mode {
            lem_core::data::RunMode::WithSmo => "SM+PM",
            lem_core::data::RunMode::PmOnly => "PM only",
        },
        m.avg_dlmp_p,
        m.avg_retail,
        m.losses_kwh,
        m.slack_import_kwh
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(c) => {
            let scn = Scenario::from_config(&c.config()?)?;
            save_scenario(&scn, &c.out)?;
            println!("scenario written to {}", c.out.display());
        }
        Command::Run(c) => {
            let scn = Scenario::from_config(&c.config()?)?;
            print_metrics(&execute(&scn, true, &c.out)?);
        }
        Command::Baseline(c) => {
            let scn = Scenario::from_config(&c.config()?)?;
            print_metrics(&execute(&scn, false, &c.out)?);
        }
        Command::Compare(c) => {
            let cfg = c.config()?;
            let scn = Scenario::from_config(&cfg)?;
            let with = execute(&scn, true, &c.out.join("with_smo"))?;
            let without = execute(&scn, false, &c.out.join("pm_only"))?;
            let cmp = compare_metrics(&with, &without, cfg.market.flat_rate)?;
            print_metrics(&with);
            print_metrics(&without);
            println!("flat rate {:.3} $/kWh", cfg.market.flat_rate);
            let path = c.out.join("metrics.json");
            std::fs::write(&path, serde_json::to_string_pretty(&cmp)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Command::Validate(c) => {
            let dirs: Vec<PathBuf> = if c.out.join("run_metadata.json").exists() {
                vec![c.out.clone()]
            } else {
                ["with_smo", "pm_only"]
                    .iter()
                    .map(|d| c.out.join(d))
                    .filter(|d| d.join("run_metadata.json").exists())
                    .collect()
            };
            if dirs.is_empty() {
                bail!("no run found in {}", c.out.display());
            }
            let mut ok = true;
            for d in dirs {
                let report = validate_run_dir(&d)?;
                println!("{}", d.display());
                for check in &report.checks {
                    println!("  {check}");
                }
                ok &= report.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
