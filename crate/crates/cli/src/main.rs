use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kaclab_core::ch::NoiseMode;
use kaclab_core::experiments::{run_experiment, Cell, ExperimentConfig, ExperimentKind, Model};
use kaclab_core::skeleton::{recover_control_ch, recover_control_ikk};
use kaclab_core::{Error, Trajectory};

#[derive(Parser)]
#[command(
    name = "kaclab",
    version,
    about = "Kac-Kawasaki and Cahn-Hilliard experiments on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent Monte Carlo cells.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ch,
    Ikk,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ch => Model::Ch,
            ModelArg::Ikk => Model::Ikk,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plain simulations, one trajectory file per replicate.
    Simulate {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Two-step convergence table.
    Converge(Common),
    /// Entropy dissipation functionals.
    Entropy(Common),
    /// Remainder scaling slopes.
    Remainders(Common),
    /// Scaling regime schedule and controlled-equation distances.
    LdpRegime(Common),
    /// Recovery sequence and recovered rate functionals.
    GammaConverge(Common),
    /// Noise coefficient identities.
    NoiseCheck(Common),
    /// Recovers the minimal control of a saved trajectory and prints its rate.
    Rate {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Kac scale; only used for the Kac model.
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Abort { .. }
        | Error::NonFinite { .. }
        | Error::Inadmissible { .. }
        | Error::WeightBelowFloor { .. }
        | Error::ResidualMass { .. } => 3,
        _ => 2,
    }
}

fn load_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "config is for {}, not {}",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| Path::new("kaclab-out").join(cfg.kind.name()))
}

fn run(kind: ExperimentKind, common: &Common, model: Option<ModelArg>) -> Result<u8, Error> {
    let mut cfg = load_config(kind, common)?;
    if let Some(m) = model {
        cfg.model = m.into();
        cfg.validate()?;
    }
    let report = run_experiment(&cfg, common.workers)?;
    for path in report.write(&output_dir(&cfg))? {
        println!("{}", path.display());
    }
    let aborted: usize = report.table.column_index("aborted").map_or(0, |i| {
        report
            .table
            .rows
            .iter()
            .map(|r| match r[i] {
                Cell::Bool(b) => b as usize,
                Cell::Int(k) => k.max(0) as usize,
                _ => 0,
            })
            .sum()
    });
    if aborted > 0 {
        if kind == ExperimentKind::Simulate {
            eprintln!("warning: {aborted} runs aborted; their last good states were saved");
            return Ok(3);
        }
        eprintln!("warning: {aborted} runs aborted; their rows are flagged");
    }
    Ok(0)
}

fn rate(traj: &Path, model: ModelArg, gamma: f64, common: &Common) -> Result<u8, Error> {
    let tr = Trajectory::load(traj)?;
    let mut cfg = match &common.config {
        Some(_) => load_config(ExperimentKind::GammaConverge, common)?,
        None => ExperimentConfig::new(ExperimentKind::GammaConverge),
    };
    cfg.n = tr.n();
    cfg.t_final = tr.times().last().copied().unwrap_or(0.0);
    let (control, value) = match model {
        ModelArg::Ch => {
            let mut p = cfg.ch_params(NoiseMode::Off);
            p.n = tr.n();
            recover_control_ch(&tr, &p)?
        }
        ModelArg::Ikk => {
            let mut p = cfg.ikk_params(gamma, cfg.reference_delta, 0.0);
            p.n = tr.n();
            recover_control_ikk(&tr, &p)?
        }
    };
    let out = serde_json::json!({
        "rate": value.value,
        "residual_norm": value.residual_norm,
        "mean_removed": value.mean_removed,
        "control_slices": control.times().len(),
    });
    println!("{out}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { model, common } => run(ExperimentKind::Simulate, common, *model),
        Command::Converge(c) => run(ExperimentKind::ConvergeTwoStep, c, None),
        Command::Entropy(c) => run(ExperimentKind::EntropyReport, c, None),
        Command::Remainders(c) => run(ExperimentKind::RemainderScaling, c, None),
        Command::LdpRegime(c) => run(ExperimentKind::LdpRegime, c, None),
        Command::GammaConverge(c) => run(ExperimentKind::GammaConverge, c, None),
        Command::NoiseCheck(c) => run(ExperimentKind::NoiseChecks, c, None),
        Command::Rate {
            traj,
            model,
            gamma,
            common,
        } => rate(traj, *model, *gamma, common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
