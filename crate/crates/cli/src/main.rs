use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluidsense::control::Mode;
use fluidsense::diffusion::{train, Checkpoint, GradMode, SamplerConfig};
use fluidsense::energy::CsiMode;
use fluidsense::experiments::{
    calibrate_for, emit_results, run_case1_stealth, run_case2_sweep, write_resolved_config, ExperimentConfig,
    OutputFormat, Policy, StealthTable, SweepOutput,
};
use fluidsense::expert::{generate_dataset_file, read_dataset};
use fluidsense::numerics::RngStream;
use fluidsense::scenario::ScenarioModel;
use fluidsense::{Error, Result};

#[derive(Parser)]
#[command(name = "fluidsense", version, about = "Fluid-antenna port selection experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the CFAR threshold for the configured scenario.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Overrides scenario.p_fa.
        #[arg(long)]
        p_fa: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate an expert dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Overrides expert.n_samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a denoiser on an expert dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Sample a mask for one realized scenario.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Experiment config supplying the scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        n_cand: Option<usize>,
        #[arg(long)]
        csi_mode: Option<CsiMode>,
        #[arg(long)]
        grad_mode: Option<GradMode>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cooperative sweep: detection and localization of User A.
    SweepCase2(SweepArgs),
    /// Stealth sweep: detectability of User B over m_active.
    SweepCase1(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Overrides policy.checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain JSON value");
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn write_sweep(cfg: &ExperimentConfig, out: &SweepOutput, path: &Path, format: OutputFormat) -> Result<()> {
    emit_results(&out.rows, path, format)?;
    let diag = with_suffix(path, ".diagnostics");
    let diag = diag.with_extension("json");
    let text = serde_json::to_string_pretty(&out.diagnostics).expect("diagnostics serialize");
    std::fs::write(&diag, text + "\n").map_err(|e| Error::io(&diag, e))?;
    write_resolved_config(cfg, path)?;
    log::info!("wrote {} rows to {}", out.rows.len(), path.display());
    Ok(())
}

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&args.common)?;
    if let Some(c) = &args.ckpt {
        cfg.policy.checkpoint = Some(c.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { common, p_fa, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = p_fa {
                cfg.scenario.p_fa = p;
            }
            cfg.scenario.validate()?;
            let model = ScenarioModel::new(cfg.scenario.clone(), cfg.seed)?;
            let p = cfg.scenario.p_fa;
            let draws = cfg.calibration_draws(p);
            let tau = calibrate_for(&model, p, draws, cfg.seed)?;
            write_json(
                &serde_json::json!({ "p_fa": p, "draws": draws, "tau": tau }),
                out.as_deref(),
            )
        }
        Command::GenData { common, out, n } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.expert.n_samples = n;
            }
            let model = ScenarioModel::new(cfg.scenario.clone(), cfg.seed)?;
            let header = generate_dataset_file(&model, &cfg.expert, cfg.seed, &out)?;
            log::info!(
                "wrote {} samples to {} (config {})",
                header.n_samples,
                out.display(),
                header.config_hash
            );
            Ok(())
        }
        Command::Train {
            common,
            data,
            out,
            epochs,
            lr,
            batch,
        } => {
            let cfg = load_config(&common)?;
            let mut tc = cfg.train.clone();
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.lr = lr.unwrap_or(tc.lr);
            tc.batch = batch.unwrap_or(tc.batch);
            let dataset = read_dataset(&data)?;
            let result = train(&dataset, &tc, cfg.seed)?;
            result.checkpoint.save(&out)?;
            log::info!("saved checkpoint to {}", out.display());
            Ok(())
        }
        Command::Sample {
            ckpt,
            scenario,
            seed,
            kappa,
            n_cand,
            csi_mode,
            grad_mode,
            mode,
            out,
        } => {
            let policy = Policy::new(Checkpoint::load(&ckpt)?)?;
            let cfg = load_config(&Common { config: scenario, seed })?;
            let defaults = cfg.policy.sampler;
            let sampler = SamplerConfig {
                kappa: kappa.unwrap_or(defaults.kappa),
                n_cand: n_cand.unwrap_or(defaults.n_cand),
                csi_mode: csi_mode.unwrap_or(defaults.csi_mode),
                grad_mode: grad_mode.unwrap_or(defaults.grad_mode),
            };
            let model = ScenarioModel::new(cfg.scenario.clone(), cfg.seed)?;
            let k = model.num_ports();
            policy
                .checkpoint
                .check_compatible(k, fluidsense::control::context_len(k))?;
            let mode = mode.unwrap_or(cfg.scenario.mode);
            let inst = model.realize_with(cfg.seed, cfg.scenario.m_active, cfg.scenario.m_obs, mode)?;
            let problem = model.energy_problem(&inst, sampler.csi_mode)?;
            let result = fluidsense::diffusion::guided_reverse_sample(
                &policy.checkpoint.params,
                policy.schedule(),
                inst.context.as_slice(),
                &problem,
                &sampler,
                &mut RngStream::new(cfg.seed, 1),
            )?;
            write_json(
                &serde_json::json!({
                    "active": result.active,
                    "energy": result.energy,
                    "candidate_energies": result.candidate_energies,
                    "aborted": result.aborted,
                }),
                out.as_deref(),
            )
        }
        Command::SweepCase2(args) => {
            let cfg = sweep_config(&args)?;
            let out = run_case2_sweep(&cfg, None)?;
            write_sweep(&cfg, &out, &args.out, args.format)
        }
        Command::SweepCase1(args) => {
            let cfg = sweep_config(&args)?;
            for StealthTable { p_fa, output } in run_case1_stealth(&cfg, None)? {
                let path = with_suffix(&args.out, &format!("_pfa{p_fa}"));
                write_sweep(&cfg, &output, &path, args.format)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let level = std::env::var("FLUIDSENSE_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&level).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
