use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cav_alpha::rollout::{simulate, TimeGrid};
use cav_alpha::scenarios::{
    run, ControlModel, ObstacleSize, Overrides, PresetName, RunOptions, ScenarioPreset,
};
use cav_alpha::trainer::Checkpoint;
use cav_alpha::verification::{certify, default_best_response};
use cav_alpha::{alpha_bound, GameSpec};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cav-alpha",
    version,
    about = "Alpha-potential game solver for vehicle fleets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Velocity,
    Acceleration,
}

#[derive(Clone, Copy, ValueEnum)]
enum Obstacle {
    None,
    Small,
    Large,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset and write its artifacts.
    Run {
        /// interaction_1d_velocity, interaction_1d_acceleration, obstacle_2d or heterogeneous_1d.
        preset: String,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum)]
        obstacle: Option<Obstacle>,
        #[arg(long, value_enum)]
        model: Option<Model>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip the best-response certificate.
        #[arg(long)]
        no_verify: bool,
        /// Best-response iterations per player.
        #[arg(long)]
        br_iters: Option<usize>,
    },
    /// Compute the exploitability certificate of a checkpoint.
    Verify {
        checkpoint: PathBuf,
        #[arg(long)]
        br_iters: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Print the alpha bound of a game or preset config.
    Alpha { config: PathBuf },
    /// Simulate a checkpoint and print its trajectories.
    Export {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn load_spec(path: &PathBuf) -> Result<GameSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(p) = ScenarioPreset::from_json(&text) {
        return Ok(p.spec);
    }
    if let Ok(c) = serde_json::from_str::<Checkpoint>(&text) {
        return Ok(c.spec);
    }
    serde_json::from_str::<GameSpec>(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            preset,
            beta,
            obstacle,
            model,
            seed,
            iters,
            steps,
            samples,
            out,
            no_verify,
            br_iters,
        } => {
            let name: PresetName = preset.parse()?;
            let overrides = Overrides {
                beta,
                obstacle: obstacle.map(|o| match o {
                    Obstacle::None => ObstacleSize::None,
                    Obstacle::Small => ObstacleSize::Small,
                    Obstacle::Large => ObstacleSize::Large,
                }),
                model: model.map(|m| match m {
                    Model::Velocity => ControlModel::Velocity,
                    Model::Acceleration => ControlModel::Acceleration,
                }),
            };
            let mut p = ScenarioPreset::resolve(name, &overrides)?;
            if let Some(n) = iters {
                p.train.iterations = n;
            }
            if let Some(n) = steps {
                p.train.steps = n;
            }
            if let Some(n) = samples {
                p.train.samples = n;
            }
            let opts = RunOptions {
                seed,
                verify: !no_verify,
                best_response_iterations: br_iters,
                ..RunOptions::default()
            };
            let r = run(&p, &out, &opts)?;
            println!(
                "{}: phi {:.6} -> {:.6} after {} iterations",
                r.preset.name,
                r.report.initial_phi,
                r.report.final_objective,
                r.report.iterations_completed
            );
            if let Some(c) = &r.certificate {
                println!(
                    "certificate: max relative improvement {:.4} ({})",
                    c.max_relative_improvement,
                    if c.passed { "pass" } else { "fail" }
                );
            }
            for f in &r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Verify {
            checkpoint,
            br_iters,
            tolerance,
        } => {
            let c = Checkpoint::load(&checkpoint)?;
            let mut br = default_best_response(&c.config);
            if let Some(n) = br_iters {
                br.iterations = n;
            }
            let cert = certify(&c.spec, &c.architecture, &c.params, &br, tolerance)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            if !cert.passed {
                anyhow::bail!("certificate failed");
            }
        }
        Command::Alpha { config } => {
            let spec = load_spec(&config)?;
            println!("{}", alpha_bound(&spec));
        }
        Command::Export { checkpoint, format } => {
            let c = Checkpoint::load(&checkpoint)?;
            let grid = TimeGrid::uniform(c.spec.horizon, c.config.steps)?;
            let batch = simulate(
                &c.spec,
                &c.architecture,
                &c.params,
                &grid,
                c.config.samples,
                c.config.eval_seed(),
            )?;
            match format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    batch.write_csv(&mut buf)?;
                    print!("{}", String::from_utf8(buf)?);
                }
                Format::Json => {
                    let samples: Vec<Vec<Vec<&[f64]>>> = (0..batch.samples)
                        .map(|m| {
                            (0..batch.players)
                                .map(|i| (0..=batch.steps).map(|l| batch.state(m, i, l)).collect())
                                .collect()
                        })
                        .collect();
                    let doc = serde_json::json!({
                        "times": batch.times,
                        "states": samples,
                    });
                    println!("{}", serde_json::to_string(&doc)?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
