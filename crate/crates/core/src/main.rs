use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kneereg::experiment::{
    cmd_evaluate, cmd_kinematics, cmd_phantom, cmd_register, cmd_simulate, cmd_track, is_config_error,
    CommandOutput, ExperimentConfig, Workspace,
};
use kneereg::kinematics::PlateauMode;
use kneereg::Error;

#[derive(Parser)]
#[command(name = "kneereg", version, about = "Single-plane 2D-3D knee registration experiments")]
struct Cli {
    /// JSON experiment config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Register every frame from scratch instead of using the kinematic prior.
    #[arg(long, global = true)]
    no_kpm: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the analytic knee phantom: volume, bone masks, landmarks.
    Phantom,
    /// Render a flexion sequence and its ground-truth poses.
    Simulate {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        max_flexion: Option<f64>,
        /// Photons per pixel for Poisson noise.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Register one frame with global initialization.
    Register {
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Track all frames in order.
    Track,
    /// Score a tracking result (or plain pose list) against ground truth.
    Evaluate {
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Contact kinematics of a tracking result.
    Kinematics {
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Plane 9 mm below the plateau anchors.
        #[arg(long)]
        pre_tka: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Simulate { .. } => "simulate",
            Command::Register { .. } => "register",
            Command::Track => "track",
            Command::Evaluate { .. } => "evaluate",
            Command::Kinematics { .. } => "kinematics",
        }
    }
}

fn resolve(cli: &Cli) -> kneereg::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if cli.no_kpm {
        cfg.registration.kpm.enabled = false;
    }
    match &cli.command {
        Command::Simulate {
            frames,
            max_flexion,
            noise,
        } => {
            if let Some(n) = frames {
                cfg.trajectory.frames = *n;
            }
            if let Some(f) = max_flexion {
                cfg.trajectory.max_flexion_deg = *f;
            }
            if noise.is_some() {
                cfg.noise_photons = *noise;
            }
        }
        Command::Evaluate { estimate, ground_truth } => {
            if estimate.is_some() {
                cfg.paths.sequence = estimate.clone();
            }
            if ground_truth.is_some() {
                cfg.paths.ground_truth = ground_truth.clone();
            }
        }
        Command::Kinematics { sequence, pre_tka } => {
            if sequence.is_some() {
                cfg.paths.sequence = sequence.clone();
            }
            if *pre_tka {
                cfg.plateau_mode = PlateauMode::PreTka;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> kneereg::Result<CommandOutput> {
    let cfg = resolve(cli)?;
    let ws = Workspace::new(&cli.out);
    std::fs::create_dir_all(&ws.out).map_err(|e| Error::io(&ws.out, e))?;
    let out = match &cli.command {
        Command::Phantom => cmd_phantom(&cfg, &ws),
        Command::Simulate { .. } => cmd_simulate(&cfg, &ws),
        Command::Register { frame } => cmd_register(&cfg, &ws, *frame),
        Command::Track => cmd_track(&cfg, &ws),
        Command::Evaluate { .. } => cmd_evaluate(&cfg, &ws),
        Command::Kinematics { .. } => cmd_kinematics(&cfg, &ws),
    }?;
    ws.write_run(cli.command.name(), &cfg, &out)?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": "config", "message": e.to_string()}));
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            for f in &out.files {
                if writeln!(stdout, "{}", f.display()).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = if is_config_error(&e) { "config" } else { "runtime" };
            eprintln!(
                "{}",
                serde_json::json!({"error": kind, "command": cli.command.name(), "message": e.to_string()})
            );
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
