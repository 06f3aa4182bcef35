use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glss::sim::{self, ExperimentConfig, ScenarioId};

/// Monte Carlo and one-shot tools for generalized linear spectral statistics.
#[derive(Parser, Debug)]
#[command(name = "glss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// GLSS, centering, mean and variance for one sample covariance.
    Glss(Common),
    /// Marchenko–Pastur Stieltjes transform at the configured points.
    Stieltjes(Common),
    /// One projection test on generated or supplied data.
    #[command(name = "fp-test")]
    FpTest(Common),
    /// Standardized-record simulation for Table-1 model k (1..=8).
    Model {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=8))]
        k: u8,
        #[command(flatten)]
        common: Common,
    },
    /// Size and power simulation for scenario I, II or III.
    Scenario {
        which: ScenarioId,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file whose keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Use the dimensions and replication counts of the published study.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn resolve(&self, mut cfg: ExperimentConfig) -> glss::Result<ExperimentConfig> {
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        if let Some(p) = &self.config {
            cfg = cfg.merged_with_file(p)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> glss::Result<()> {
    match cli.command {
        Command::Glss(common) => {
            let cfg = common.resolve(ExperimentConfig::model(1)?)?;
            let reports = sim::glss_single(&cfg)?;
            for (f, r) in cfg.functions.iter().zip(&reports) {
                println!(
                    "f={f} mode={} glss={} centering={} omega={} variance={} standardized={}",
                    r.mode, r.raw_glss, r.centering, r.omega, r.variance, r.standardized
                );
            }
            sim::write_glss_reports(&reports, &cfg, &cfg.out)
        }
        Command::Stieltjes(common) => {
            let cfg = common.resolve(ExperimentConfig::model(1)?)?;
            let rows = sim::stieltjes_table(&cfg)?;
            for r in &rows {
                println!("z={} m={} m_under={} residual={:e}", r.z, r.m, r.m_under, r.inverse_residual);
            }
            sim::write_stieltjes_rows(&rows, &cfg, &cfg.out)
        }
        Command::FpTest(common) => {
            let cfg = common.resolve(ExperimentConfig::scenario(ScenarioId::I))?;
            let reports = sim::fp_single(&cfg)?;
            for (f, r) in cfg.functions.iter().zip(&reports) {
                println!(
                    "f={f} delta={} mu_hat={} rho_hat={} z={} p={} reject={}",
                    r.delta_stat, r.mu_hat, r.rho_hat, r.z_score, r.p_value, r.reject
                );
            }
            sim::write_fp_reports(&reports, &cfg, &cfg.out)
        }
        Command::Model { k, common } => {
            let cfg = common.resolve(ExperimentConfig::model(k)?)?;
            let cfg = ExperimentConfig { model: Some(k), ..cfg };
            let run = if cfg.experiment == sim::ExperimentKind::Custom {
                sim::run_clt("custom", &sim::clt_spec(&cfg)?, &cfg)?
            } else {
                sim::run_model(k, &cfg)?
            };
            for m in &run.moments {
                println!(
                    "{} f={} mean_hat={:.4} var_hat={:.4} ks_p={:.4} ({} records, {} failed)",
                    run.label,
                    m.f,
                    m.mean_hat,
                    m.var_hat,
                    m.ks_p,
                    m.records.len(),
                    run.failures.len()
                );
            }
            sim::write_model_run(&run, &cfg, &cfg.out)?;
            sim::check_budget(run.failures.len(), run.total, cfg.failure_budget)
        }
        Command::Scenario { which, common } => {
            let cfg = common.resolve(ExperimentConfig::scenario(which))?;
            let cfg = ExperimentConfig { scenario: Some(which), ..cfg };
            let run = sim::run_scenario(which, &cfg)?;
            for r in &run.rows {
                println!(
                    "{} {} r={} phi={} f={} power={:.3} (se {:.3}, {} reps)",
                    run.label,
                    sim::dist_name(r.point.dist),
                    r.point.r_n,
                    r.point.phi,
                    r.f,
                    r.power,
                    r.mc_se,
                    r.reps
                );
            }
            sim::write_scenario_run(&run, &cfg, &cfg.out)?;
            sim::check_budget(run.failures.len(), run.total, cfg.failure_budget)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
