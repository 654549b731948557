use cav_alpha::scenarios::{
    preset_interaction, run, ControlModel, ObstacleSize, Overrides, PresetName, RunOptions,
    ScenarioPreset,
};
use cav_alpha::trainer::train;

#[test]
fn training_never_increases_the_potential() {
    let presets = [
        (PresetName::Interaction1dVelocity, Overrides::default()),
        (
            PresetName::Interaction1dVelocity,
            Overrides {
                beta: Some(1.0),
                ..Overrides::default()
            },
        ),
        (PresetName::Heterogeneous1d, Overrides::default()),
        (
            PresetName::Obstacle2d,
            Overrides {
                obstacle: Some(ObstacleSize::Small),
                ..Overrides::default()
            },
        ),
        (PresetName::Interaction1dAcceleration, Overrides::default()),
    ];
    for (name, o) in presets {
        let mut p = ScenarioPreset::resolve(name, &o).unwrap();
        p.train.iterations = 200;
        let r = train(&p.spec, &p.architecture, &p.train).unwrap();
        assert!(
            r.final_objective <= r.initial_phi,
            "{name}: {} > {}",
            r.final_objective,
            r.initial_phi
        );
        assert_eq!(r.phi_history.len(), r.iterations_completed);
    }
}

#[test]
fn weak_interaction_potential_has_plateaued() {
    let p = preset_interaction(ControlModel::Velocity, 0.0).unwrap();
    let base = train(&p.spec, &p.architecture, &p.train).unwrap();
    let mut long = p.train.clone();
    long.iterations *= 5;
    let longer = train(&p.spec, &p.architecture, &long).unwrap();
    let rel = (base.final_objective - longer.final_objective).abs() / longer.final_objective.abs();
    assert!(
        rel <= 0.02,
        "{} vs {}",
        base.final_objective,
        longer.final_objective
    );
}

#[test]
fn interaction_run_produces_ten_paths_to_the_target() {
    let p = preset_interaction(ControlModel::Velocity, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        verify: false,
        ..RunOptions::default()
    };
    let out = run(&p, dir.path(), &opts).unwrap();
    let b = &out.batch;
    assert_eq!(b.players, 10);
    for i in 0..10 {
        assert_eq!(b.state(0, i, 0), &[-1.0]);
        assert!((b.state(0, i, b.steps)[0] - 1.0).abs() < 0.1);
    }
    let svg = std::fs::read_to_string(dir.path().join("figure.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 10);
}

#[test]
fn large_obstacle_figure_draws_the_disk() {
    let mut p = ScenarioPreset::resolve(
        PresetName::Obstacle2d,
        &Overrides {
            obstacle: Some(ObstacleSize::Large),
            ..Overrides::default()
        },
    )
    .unwrap();
    p.train.iterations = 3;
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        verify: false,
        ..RunOptions::default()
    };
    let out = run(&p, dir.path(), &opts).unwrap();
    let fig = out.preset.figure(&out.batch);
    assert_eq!(fig.circles.len(), 1);
    assert_eq!(fig.circles[0].radius, 0.5);
    assert_eq!(fig.circles[0].center, (0.0, 0.0));
}
