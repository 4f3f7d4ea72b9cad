//! `hte` command-line interface. Errors are printed to stderr as one JSON
//! object and the process exits nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hte_core::config::{ModelKind, RunConfig};
use hte_core::harness::{replicate, run_estimate};
use hte_core::identify::{completeness_diagnostic, span_grid};
use hte_core::io::{read_aux, read_dataset, write_dataset, write_json, ReadOptions};
use hte_core::model::{GaussianModelParams, Setup};
use hte_core::posterior::TargetKind;
use hte_core::simulate::simulate;
use hte_core::{HteError, Result};

#[derive(Parser)]
#[command(name = "hte", version, about = "Heterogeneous treatment effects under nonignorable assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// gaussian or tobit-gumbel; overrides the config.
    #[arg(long)]
    model: Option<ModelKind>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV (id,r,z,y1,y0,x1..xd); overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// marginal, augmented or quasi; overrides the config.
    #[arg(long)]
    target: Option<TargetKind>,
    /// Auxiliary moments JSON (meanY0, meanX, probZ0[, momentY0Sq]).
    #[arg(long)]
    aux: Option<PathBuf>,
    /// RCT_ONE_SIDED, OBS_MICRO or OBS_MACRO; overrides the config.
    #[arg(long)]
    setup: Option<Setup>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the configured design and write data.csv.
    Simulate(Common),
    /// Fit a model and write params.json, estimands.json, hte_curve.csv, diagnostics.json.
    #[command(alias = "fit")]
    Estimate(FitArgs),
    /// Run the replication study and write summary.json plus per-replication records.
    Replicate(Common),
    /// Numerical completeness diagnostic of the configured Gaussian design.
    Identify(Common),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = common.model {
        cfg.model = m;
        if m == ModelKind::TobitGumbel && common.config.is_none() {
            cfg.target = TargetKind::QuasiBayes;
        }
    }
    Ok(cfg)
}

fn install_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| HteError::Config(format!("cannot build a {t}-thread pool: {e}")))?;
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HteError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    install_threads(c.threads)?;
    let data = simulate(&cfg.dgp.simulation_config(cfg.model, c.seed))?;
    create_out(&c.out)?;
    write_dataset(&data, &c.out.join("data.csv"))?;
    if let Some(aux) = &data.aux {
        write_json(aux, &c.out.join("aux.json"))?;
    }
    Ok(())
}

fn cmd_estimate(a: &FitArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(t) = a.target {
        cfg.target = t;
    }
    if let Some(s) = a.setup {
        cfg.data.setup = s;
    }
    if let Some(p) = &a.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(p) = &a.aux {
        cfg.data.aux_path = Some(p.clone());
    }
    if cfg.model == ModelKind::TobitGumbel {
        cfg.data.censored = true;
    }
    cfg.validate()?;
    install_threads(a.common.threads)?;
    if cfg.data.aux.is_none() {
        if let Some(p) = &cfg.data.aux_path {
            cfg.data.aux = Some(read_aux(p)?);
        }
    }
    if cfg.data.setup == Setup::ObsMacro && cfg.data.aux.is_none() {
        return Err(HteError::Usage(
            "setup OBS_MACRO requires auxiliary moments: pass --aux or set data.aux / data.auxPath (missing key 'meanY0')".into(),
        ));
    }
    let path = cfg.data.path.clone().ok_or_else(|| HteError::Usage("no dataset: pass --data or set data.path".into()))?;
    let opts = ReadOptions { setup: cfg.data.setup, censored: cfg.data.censored, aux: cfg.data.aux.clone() };
    let data = read_dataset(&path, &opts)?;
    let out = run_estimate(&data, &cfg, a.common.seed)?;
    create_out(&a.common.out)?;
    out.write(&a.common.out)
}

fn cmd_replicate(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if c.config.is_none() || cfg.replication.base_seed == 0 {
        cfg.replication.base_seed = c.seed;
    }
    create_out(&c.out)?;
    let (summary, _) = replicate(&cfg, c.threads, Some(&c.out))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_identify(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    if cfg.model != ModelKind::Gaussian {
        return Err(HteError::Usage("identify supports the gaussian model only".into()));
    }
    let sim = cfg.dgp.simulation_config(cfg.model, c.seed);
    let psi = cfg.dgp.gaussian.unwrap_or_else(GaussianModelParams::simulation_design);
    let ix = &cfg.identify;
    let sd_y0 = (psi.theta01.powi(2) * sim.x_sd.powi(2) + psi.sigma0.powi(2)).sqrt();
    let report = completeness_diagnostic(
        &psi,
        &span_grid(0.0, ix.span_sd * sim.x_sd, ix.x_points),
        &span_grid(psi.mu0(0.0), ix.span_sd * sd_y0, ix.y0_points),
        ix.tolerance,
    )?;
    create_out(&c.out)?;
    write_json(&report, &c.out.join("identify.json"))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": e.to_string().trim_end() } }));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Replicate(c) => cmd_replicate(c),
        Command::Identify(c) => cmd_identify(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::from(if matches!(e, HteError::Usage(_)) { 2 } else { 1 })
        }
    }
}
