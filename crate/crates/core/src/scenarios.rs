//! Ready-made highway experiments and the train, verify, export pipeline.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::game_model::{
    DynamicsKind, GameSpec, InteractionWeights, Kernel, ObstacleCost, PlayerCost,
};
use crate::plot::{group_colors, planar_paths, player_colors, time_series, Circle, Figure};
use crate::policy::Architecture;
use crate::rollout::{simulate, RolloutBatch, TimeGrid};
use crate::trainer::{eval_samples, train_in, Objective, TrainConfig, TrainReport};
use crate::verification::{certify, default_best_response, NECertificate};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlModel {
    #[default]
    Velocity,
    Acceleration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleSize {
    None,
    Small,
    #[default]
    Large,
}

impl ObstacleSize {
    /// Curvature `M` of the obstacle penalty; the disk radius is `1/√M`.
    pub fn curvature(self) -> Option<f64> {
        match self {
            ObstacleSize::None => None,
            ObstacleSize::Small => Some(100.0),
            ObstacleSize::Large => Some(4.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    #[serde(rename = "interaction_1d_velocity")]
    Interaction1dVelocity,
    #[serde(rename = "interaction_1d_acceleration")]
    Interaction1dAcceleration,
    #[serde(rename = "obstacle_2d")]
    Obstacle2d,
    #[serde(rename = "heterogeneous_1d")]
    Heterogeneous1d,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Interaction1dVelocity,
        PresetName::Interaction1dAcceleration,
        PresetName::Obstacle2d,
        PresetName::Heterogeneous1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Interaction1dVelocity => "interaction_1d_velocity",
            PresetName::Interaction1dAcceleration => "interaction_1d_acceleration",
            PresetName::Obstacle2d => "obstacle_2d",
            PresetName::Heterogeneous1d => "heterogeneous_1d",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}`")))
    }
}

/// Parameters a preset exposes beyond its name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Overrides {
    /// Interaction strength exponent; 0 or 1.
    pub beta: Option<f64>,
    pub obstacle: Option<ObstacleSize>,
    pub model: Option<ControlModel>,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPreset {
    pub name: PresetName,
    pub overrides: Overrides,
    pub spec: GameSpec,
    pub train: TrainConfig,
    pub architecture: Architecture,
}

const HORIZON: f64 = 1.0;

fn dynamics(model: ControlModel, dim: usize, n: usize, sigma: f64) -> DynamicsKind {
    match model {
        ControlModel::Velocity => DynamicsKind::Velocity { dim },
        ControlModel::Acceleration => DynamicsKind::Acceleration {
            dim,
            sigma: vec![sigma; n],
        },
    }
}

/// Start position `ξ` with zero initial velocity under acceleration control.
fn initial_state(model: ControlModel, xi: &[f64]) -> Vec<f64> {
    let mut s = xi.to_vec();
    if model == ControlModel::Acceleration {
        s.extend(std::iter::repeat_n(0.0, xi.len()));
    }
    s
}

fn train_config(spec: &GameSpec, objective: Objective) -> TrainConfig {
    TrainConfig {
        samples: if spec.dynamics.is_deterministic() {
            1
        } else {
            64
        },
        objective,
        ..TrainConfig::default()
    }
}

/// Ten vehicles on a line from −1 to 1 with interaction weight `N^{β−1}`
/// and kernel `1/(N^{2β} z² + 1)`.
pub fn preset_interaction(model: ControlModel, beta: f64) -> Result<ScenarioPreset> {
    if beta != 0.0 && beta != 1.0 {
        return Err(Error::InvalidConfig(format!(
            "beta must be 0 or 1, got {beta}"
        )));
    }
    let n = 10;
    let spec = GameSpec {
        n_players: n,
        horizon: HORIZON,
        dynamics: dynamics(model, 1, n, 0.1),
        weights: InteractionWeights::uniform(n, (n as f64).powf(beta - 1.0))?,
        kernel: Kernel::scaled_radial(beta, n, 1),
        costs: vec![
            PlayerCost {
                action_coeff: 0.1,
                terminal_coeff: 10.0,
                target: vec![1.0],
                obstacle: None,
            };
            n
        ],
        initial_states: vec![initial_state(model, &[-1.0]); n],
    };
    spec.validate()?;
    let name = match model {
        ControlModel::Velocity => PresetName::Interaction1dVelocity,
        ControlModel::Acceleration => PresetName::Interaction1dAcceleration,
    };
    Ok(ScenarioPreset {
        name,
        overrides: Overrides {
            beta: Some(beta),
            obstacle: None,
            model: Some(model),
        },
        train: train_config(&spec, Objective::Potential),
        spec,
        architecture: Architecture::default(),
    })
}

/// Ten noiseless double integrators crossing the plane from `(−1, −1)` to
/// `(1, 1)` around an optional obstacle at the origin.
pub fn preset_obstacle(size: ObstacleSize) -> Result<ScenarioPreset> {
    let n = 10;
    let model = ControlModel::Acceleration;
    let spec = GameSpec {
        n_players: n,
        horizon: HORIZON,
        dynamics: dynamics(model, 2, n, 0.0),
        weights: InteractionWeights::uniform(n, 1.0)?,
        kernel: Kernel::scaled_radial(1.0, n, 2),
        costs: vec![
            PlayerCost {
                action_coeff: 0.02,
                terminal_coeff: 2.0,
                target: vec![1.0, 1.0],
                obstacle: size.curvature().map(|m| ObstacleCost::centered(m, 2)),
            };
            n
        ],
        initial_states: vec![initial_state(model, &[-1.0, -1.0]); n],
    };
    spec.validate()?;
    Ok(ScenarioPreset {
        name: PresetName::Obstacle2d,
        overrides: Overrides {
            beta: Some(1.0),
            obstacle: Some(size),
            model: Some(model),
        },
        train: train_config(&spec, Objective::Potential),
        spec,
        architecture: Architecture::default(),
    })
}

/// Type tags of the nine heterogeneous vehicles: three large, three medium,
/// three small.
pub const HETEROGENEOUS_GAMMA: [f64; 9] = [
    0.115, 0.117, 0.095, 0.395, 0.319, 0.347, 1.805, 2.235, 2.353,
];
pub const HETEROGENEOUS_TAU: [f64; 9] = [10.0, 10.0, 10.0, 3.0, 3.0, 3.0, 0.5, 0.5, 0.5];

/// Nine noiseless vehicles of three sizes with separable weights
/// `λ_ij = γ_i τ_j`, trained on the rescaled potential.
pub fn preset_heterogeneous(model: ControlModel) -> Result<ScenarioPreset> {
    let n = 9;
    let spec = GameSpec {
        n_players: n,
        horizon: HORIZON,
        dynamics: dynamics(model, 1, n, 0.0),
        weights: InteractionWeights::separable(
            HETEROGENEOUS_GAMMA.to_vec(),
            HETEROGENEOUS_TAU.to_vec(),
        )?,
        kernel: Kernel::InverseQuadratic { scale: n as f64 },
        costs: vec![
            PlayerCost {
                action_coeff: 0.02,
                terminal_coeff: 2.0,
                target: vec![1.0],
                obstacle: None,
            };
            n
        ],
        initial_states: vec![initial_state(model, &[-1.0]); n],
    };
    spec.validate()?;
    Ok(ScenarioPreset {
        name: PresetName::Heterogeneous1d,
        overrides: Overrides {
            beta: None,
            obstacle: None,
            model: Some(model),
        },
        train: train_config(&spec, Objective::Rescaled),
        spec,
        architecture: Architecture::default(),
    })
}

impl ScenarioPreset {
    /// Builds a preset by name, applying whichever overrides it accepts.
    pub fn resolve(name: PresetName, overrides: &Overrides) -> Result<Self> {
        match name {
            PresetName::Interaction1dVelocity => {
                preset_interaction(ControlModel::Velocity, overrides.beta.unwrap_or(0.0))
            }
            PresetName::Interaction1dAcceleration => {
                preset_interaction(ControlModel::Acceleration, overrides.beta.unwrap_or(0.0))
            }
            PresetName::Obstacle2d => preset_obstacle(overrides.obstacle.unwrap_or_default()),
            PresetName::Heterogeneous1d => {
                preset_heterogeneous(overrides.model.unwrap_or_default())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ScenarioPreset = serde_json::from_str(s)?;
        p.train.validate()?;
        Ok(p)
    }

    /// Disk radius of the obstacle, if any.
    pub fn obstacle_radius(&self) -> Option<f64> {
        self.spec.costs[0]
            .obstacle
            .as_ref()
            .map(ObstacleCost::radius)
    }

    /// Vehicle class per player (0 = largest `τ`), when weights are
    /// separable.
    pub fn type_groups(&self) -> Option<Vec<usize>> {
        let (_, tau) = self.spec.weights.tags()?;
        let mut levels: Vec<f64> = tau.to_vec();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        Some(
            tau.iter()
                .map(|t| levels.iter().position(|l| l == t).unwrap_or(0))
                .collect(),
        )
    }

    /// Figure of sample 0 of `batch` in the layout matching this preset.
    pub fn figure(&self, batch: &RolloutBatch) -> Figure {
        let colors = match self.type_groups() {
            Some(g) => group_colors(&g),
            None => player_colors(self.spec.n_players),
        };
        let title = match (self.name, &self.overrides) {
            (PresetName::Obstacle2d, o) => format!(
                "{} ({})",
                self.name,
                match o.obstacle.unwrap_or_default() {
                    ObstacleSize::None => "no obstacle",
                    ObstacleSize::Small => "small obstacle",
                    ObstacleSize::Large => "large obstacle",
                }
            ),
            (_, Overrides { beta: Some(b), .. }) => format!("{} (beta = {b})", self.name),
            _ => self.name.to_string(),
        };
        if self.spec.dim() == 2 {
            Figure {
                title,
                x_label: "x".into(),
                y_label: "y".into(),
                series: planar_paths(batch, 0, &colors),
                circles: self
                    .obstacle_radius()
                    .map(|radius| Circle {
                        center: (0.0, 0.0),
                        radius,
                    })
                    .into_iter()
                    .collect(),
                equal_aspect: true,
            }
        } else {
            Figure {
                title,
                x_label: "t".into(),
                y_label: "position".into(),
                series: time_series(batch, 0, &colors),
                circles: Vec::new(),
                equal_aspect: false,
            }
        }
    }
}

/// Switches for [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    /// Compute the exploitability certificate.
    pub verify: bool,
    /// Best-response iterations; defaults to 1000.
    pub best_response_iterations: Option<usize>,
    /// Allowed best-response improvement as a fraction of `|J_i|`.
    pub tolerance_fraction: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            verify: true,
            best_response_iterations: None,
            tolerance_fraction: 0.05,
        }
    }
}

/// Everything a run produced, with the files it wrote.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub preset: ScenarioPreset,
    pub report: TrainReport,
    pub certificate: Option<NECertificate>,
    pub batch: RolloutBatch,
    pub files: Vec<PathBuf>,
}

/// Trains the preset, optionally certifies it, and writes the config
/// snapshot, report, certificate, trajectories, history, checkpoints and
/// figure into `out_dir`.
pub fn run(preset: &ScenarioPreset, out_dir: &Path, opts: &RunOptions) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let mut preset = preset.clone();
    preset.train.seed = opts.seed;
    let spec = &preset.spec;
    let arch = &preset.architecture;
    let cfg = &preset.train;

    let mut files = Vec::new();
    let mut write = |name: &str, contents: &[u8]| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, contents)?;
        files.push(path);
        Ok(())
    };
    write("config.json", preset.to_json()?.as_bytes())?;

    let mut report = train_in(spec, arch, cfg, Some(out_dir))?;
    let certificate = if opts.verify {
        let mut br = default_best_response(cfg);
        if let Some(it) = opts.best_response_iterations {
            br.iterations = it;
        }
        let c = certify(
            spec,
            arch,
            &report.final_params,
            &br,
            opts.tolerance_fraction,
        )?;
        report.verification = Some(c.clone());
        Some(c)
    } else {
        None
    };

    let grid = TimeGrid::uniform(spec.horizon, cfg.steps)?;
    let batch = simulate(
        spec,
        arch,
        &report.final_params,
        &grid,
        eval_samples(spec, cfg),
        cfg.eval_seed(),
    )?;

    write(
        "train_report.json",
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    if let Some(c) = &certificate {
        write(
            "certificate.json",
            serde_json::to_string_pretty(c)?.as_bytes(),
        )?;
    }
    let mut csv = Vec::new();
    batch.write_csv(&mut csv)?;
    write("trajectories.csv", &csv)?;
    write("phi_history.csv", report.history_csv().as_bytes())?;
    write("figure.svg", preset.figure(&batch).to_svg().as_bytes())?;
    files.push(out_dir.join("checkpoint_final.json"));

    Ok(RunOutput {
        preset,
        report,
        certificate,
        batch,
        files,
    })
}
