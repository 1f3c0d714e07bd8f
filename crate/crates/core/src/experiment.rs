//! End-to-end experiment presets and pipeline: build a configuration,
//! train an operator model on sampled inputs, evaluate it on held-out test
//! inputs against the reference solver, and write all artifacts to a
//! directory.
//!
//! Two experiments ship in two sizes each. `powermap2d` learns the map from
//! a top-surface power map to the temperature field; `htc-dual` learns the
//! map from the two z-face convection coefficients. The `paper` scale uses
//! the full-size settings; `desk` shrinks network widths, iteration count,
//! and sampling so a CPU run finishes in minutes.

use crate::config::{
    BoundaryCondition, ChipConfig, ConductivityField, Geometry, Mesh, PowerMap, PowerUnits,
    Surface, SurfaceField, SurfacePower,
};
use crate::error::{Error, Result};
use crate::eval::{
    block_pattern_maps, export_slice, mape_pape, mesh_coords, predict_field, with_htc,
    with_power_map, EvalReport,
};
use crate::fdm;
use crate::operator::{BranchSpec, ModelSpec, OperatorModel};
use crate::tensor::Tensor;
use crate::trainer::{train, CollocationMode, FunctionSource, TrainSpec};
use serde::Serialize;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

const AMBIENT_K: f64 = 298.15;
const CONDUCTIVITY: f64 = 0.1;
/// Heat-flux density of one unit of power-map intensity. At a 21×21 node
/// grid on a 1 mm² die this is 6.25 μW per tile.
const UNIT_FLUX_WM2: f64 = 2500.0;
const P_MAX_UNITS: f64 = 4.0;
const GRF_LENGTH_SCALE: f64 = 0.3;
const HTC_LO: f64 = 333.33;
const HTC_HI: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    PowerMap2D,
    HtcDual,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::PowerMap2D => "powermap2d",
            ExperimentKind::HtcDual => "htc-dual",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "powermap2d" => Ok(ExperimentKind::PowerMap2D),
            "htc-dual" => Ok(ExperimentKind::HtcDual),
            other => Err(Error::Config(format!(
                "unknown experiment '{other}'; valid names: powermap2d, htc-dual"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentScale {
    Desk,
    Paper,
}

impl fmt::Display for ExperimentScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentScale::Desk => "desk",
            ExperimentScale::Full => "full",
        })
    }
}

impl FromStr for ExperimentScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(ExperimentScale::Desk),
            "full" => Ok(ExperimentScale::Full),
            other => Err(Error::Config(format!(
                "unknown scale '{other}'; valid scales: desk, paper"
            ))),
        }
    }
}

/// One held-out test input.
#[derive(Debug, Clone)]
pub enum TestInput {
    PowerMap(Tensor),
    Htc { top: f64, bottom: f64 },
}

/// Everything needed to run one experiment end to end.
#[derive(Debug, Clone)]
pub struct ExperimentPreset {
    pub kind: ExperimentKind,
    pub config: ChipConfig,
    pub model: ModelSpec,
    pub source: FunctionSource,
    /// Seed is a placeholder here; the runner overwrites it.
    pub train: TrainSpec,
    pub tests: Vec<(String, TestInput)>,
}

/// Single-cuboid chip with a unit-power map on the top surface, adiabatic
/// sides and top, convection-cooled bottom.
///
/// One unit of map intensity always means the same heat-flux density
/// (`UNIT_FLUX_WM2`), whatever the tile resolution: the per-tile wattage is
/// flux × tile area, so a coarser mesh models the same die at the same
/// power, not a cooler one.
fn powermap_config(counts: [usize; 3]) -> ChipConfig {
    let geometry = Geometry::single([1e-3, 1e-3, 5e-4]);
    let mesh = Mesh::new(counts, &geometry);
    let dims = mesh.surface_dims(Surface::ZMax);
    let extent = geometry.total_extent();
    let tile_area =
        (extent[0] / (counts[0] - 1) as f64) * (extent[1] / (counts[1] - 1) as f64);
    ChipConfig {
        geometry,
        mesh,
        bcs: [
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Convection {
                h: SurfaceField::Uniform(500.0),
                t_amb: AMBIENT_K,
            },
            BoundaryCondition::Adiabatic,
        ],
        power: vec![PowerMap::Surface2D(SurfacePower {
            surface: Surface::ZMax,
            grid: Tensor::zeros(dims.1, dims.0),
            units: PowerUnits::UnitPower,
            unit_power_w: UNIT_FLUX_WM2 * tile_area,
        })],
        conductivity: ConductivityField::Uniform(CONDUCTIVITY),
        ambient: AMBIENT_K,
    }
}

/// Single-cuboid chip with a buried uniform power slab and convection on
/// both z faces (coefficients are the model inputs; the config values are
/// placeholders replaced per sample/test).
fn htc_config(counts: [usize; 3]) -> ChipConfig {
    let geometry = Geometry::single([1e-3, 1e-3, 5.5e-4]);
    let mesh = Mesh::new(counts, &geometry);
    let conv = || BoundaryCondition::Convection {
        h: SurfaceField::Uniform(500.0),
        t_amb: AMBIENT_K,
    };
    ChipConfig {
        geometry,
        mesh,
        bcs: [
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            BoundaryCondition::Adiabatic,
            conv(),
            conv(),
        ],
        power: vec![PowerMap::VolumetricSlab {
            z0_m: 2.5e-4,
            z1_m: 3.0e-4,
            total_w: 6.25e-4,
        }],
        conductivity: ConductivityField::Uniform(CONDUCTIVITY),
        ambient: AMBIENT_K,
    }
}

fn base_train_spec(iterations: usize, functions: usize, collocation: CollocationMode) -> TrainSpec {
    TrainSpec {
        iterations,
        functions_per_iter: functions,
        lr0: 1e-3,
        lr_decay: 0.9,
        lr_decay_every: 500,
        seed: 0,
        t_scale: 20.0,
        term_weights: [1.0; 7],
        checkpoint_every: 500,
        collocation,
    }
}

/// Settings for one (experiment, scale) pair.
pub fn preset(kind: ExperimentKind, scale: ExperimentScale) -> ExperimentPreset {
    match (kind, scale) {
        (ExperimentKind::PowerMap2D, ExperimentScale::Desk) => {
            let config = powermap_config([11, 11, 6]);
            ExperimentPreset {
                kind,
                config,
                model: ModelSpec {
                    branches: vec![BranchSpec {
                        name: "power".into(),
                        input_dim: 121,
                        layers: vec![128, 128, 128, 128, 128, 64],
                    }],
                    trunk_layers: vec![64, 64, 64, 64],
                    fourier_features: 32,
                    // Short-budget runs need coordinate features in the
                    // smooth regime: at larger scales the iteration-1 PDE
                    // residual is so stiff that the optimizer flattens the
                    // trunk into the flat-field basin before the top-flux
                    // term can steer it, and it never recovers.
                    sigma_ff: 0.5,
                    head_bias: true,
                },
                source: FunctionSource::PowerMaps {
                    grid_size: 11,
                    length_scale: GRF_LENGTH_SCALE,
                    p_max: P_MAX_UNITS,
                    rescale: true,
                },
                // Fresh uniform collocation each iteration. The 11×11×6
                // mesh has only four interior z-planes; training on those
                // fixed nodes lets a thin near-surface layer satisfy the
                // top-flux condition while the bulk field stays wrong.
                train: base_train_spec(2000, 16, CollocationMode::Random { n: 1500 }),
                tests: powermap_tests(11),
            }
        }
        (ExperimentKind::PowerMap2D, ExperimentScale::Full) => {
            let config = powermap_config([21, 21, 11]);
            ExperimentPreset {
                kind,
                config,
                model: ModelSpec {
                    branches: vec![BranchSpec {
                        name: "power".into(),
                        input_dim: 441,
                        layers: vec![256, 256, 256, 256, 256, 256, 256, 256, 128],
                    }],
                    trunk_layers: vec![128, 128, 128, 128, 128, 128],
                    fourier_features: 64,
                    sigma_ff: 2.0 * std::f64::consts::PI,
                    head_bias: true,
                },
                source: FunctionSource::PowerMaps {
                    grid_size: 21,
                    length_scale: GRF_LENGTH_SCALE,
                    p_max: P_MAX_UNITS,
                    rescale: true,
                },
                train: base_train_spec(10_000, 50, CollocationMode::Mesh),
                tests: powermap_tests(21),
            }
        }
        (ExperimentKind::HtcDual, ExperimentScale::Desk) => {
            let config = htc_config([11, 11, 12]);
            let mut train = base_train_spec(2000, 16, CollocationMode::Random { n: 1000 });
            // The buried-slab die only rises ~0.3–1.7 K above ambient; the
            // default 20 K temperature scale would squash the regression
            // target to ~0.05 and leave the near-zero output basin
            // loss-competitive. Scale so the target is O(1).
            train.t_scale = 2.0;
            let mut model = htc_model(vec![64, 64, 64, 50], 32);
            // Same smooth-regime feature scale as the desk power-map run
            // (see that preset); at π the trunk flattens before the slab
            // source can raise the field.
            model.sigma_ff = 1.0;
            ExperimentPreset {
                kind,
                config,
                model,
                source: FunctionSource::HtcPairs { lo: HTC_LO, hi: HTC_HI },
                train,
                tests: htc_tests(),
            }
        }
        (ExperimentKind::HtcDual, ExperimentScale::Full) => {
            let config = htc_config([21, 21, 41]);
            let mut train = base_train_spec(5000, 20, CollocationMode::Random { n: 7000 });
            train.t_scale = 2.0;
            ExperimentPreset {
                kind,
                config,
                model: htc_model(vec![128, 128, 128, 128, 128, 50], 64),
                source: FunctionSource::HtcPairs { lo: HTC_LO, hi: HTC_HI },
                train,
                tests: htc_tests(),
            }
        }
    }
}

fn htc_model(trunk_layers: Vec<usize>, fourier_features: usize) -> ModelSpec {
    let p = *trunk_layers.last().expect("nonempty trunk");
    let branch = |name: &str| BranchSpec {
        name: name.into(),
        input_dim: 1,
        layers: vec![20, 20, 20, 20, p],
    };
    ModelSpec {
        branches: vec![branch("htc_top"), branch("htc_bottom")],
        trunk_layers,
        fourier_features,
        sigma_ff: std::f64::consts::PI,
        head_bias: true,
    }
}

fn powermap_tests(m: usize) -> Vec<(String, TestInput)> {
    block_pattern_maps(m, P_MAX_UNITS)
        .into_iter()
        .enumerate()
        .map(|(i, map)| {
            let name = if i < 9 {
                format!("blocks_{}", i + 1)
            } else {
                "dotted".to_string()
            };
            (name, TestInput::PowerMap(map))
        })
        .collect()
}

fn htc_tests() -> Vec<(String, TestInput)> {
    vec![
        ("htc_top1000_bottom333".into(), TestInput::Htc { top: 1000.0, bottom: HTC_LO }),
        ("htc_top500_bottom500".into(), TestInput::Htc { top: 500.0, bottom: 500.0 }),
    ]
}

/// One test input's evaluation, for the summary JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub name: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Everything `run_experiment` produced, also written as
/// `experiment.json` in the artifacts directory.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub scale: String,
    pub seed: u64,
    pub iterations: usize,
    pub train_wall_s: f64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub tests: Vec<TestResult>,
}

/// Runs a named preset end to end. Artifacts land in `out_dir`:
/// `model.ckpt`, periodic checkpoints, `loss_history.csv`, per-test
/// predicted/reference fields under `fields/`, mid-height slice images
/// under `slices/`, and `experiment.json`.
pub fn run_experiment(
    kind: ExperimentKind,
    scale: ExperimentScale,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentSummary> {
    run_preset(&preset(kind, scale), scale, seed, out_dir)
}

/// Pipeline body, callable with custom presets (used by tests).
pub fn run_preset(
    preset: &ExperimentPreset,
    scale: ExperimentScale,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out_dir)?;
    let model = OperatorModel::init(preset.model.clone(), seed)?;
    let spec = TrainSpec { seed, ..preset.train.clone() };

    let t_train = Instant::now();
    let out = train(model, &preset.config, &preset.source, &spec, Some(out_dir))?;
    let train_wall_s = t_train.elapsed().as_secs_f64();

    let fields_dir = out_dir.join("fields");
    let slices_dir = out_dir.join("slices");
    std::fs::create_dir_all(&fields_dir)?;
    std::fs::create_dir_all(&slices_dir)?;

    let mut tests = Vec::with_capacity(preset.tests.len());
    for (name, input) in &preset.tests {
        let case = match input {
            TestInput::PowerMap(map) => with_power_map(&preset.config, map.clone())?,
            TestInput::Htc { top, bottom } => with_htc(&preset.config, *top, *bottom)?,
        };
        let t0 = Instant::now();
        let pred = predict_field(&out.packaged, &case)?;
        let pred_time_s = t0.elapsed().as_secs_f64().max(1e-9);
        let t1 = Instant::now();
        let oracle = fdm::solve_config(&case)?;
        let oracle_time_s = t1.elapsed().as_secs_f64().max(1e-9);
        let (mape, pape) = mape_pape(&pred.values, &oracle.values)?;

        std::fs::write(fields_dir.join(format!("{name}_pred.csv")), pred.to_csv())?;
        std::fs::write(fields_dir.join(format!("{name}_oracle.csv")), oracle.to_csv())?;
        let mid_z = case.mesh.counts[2] / 2;
        export_slice(&pred, 2, mid_z, &slices_dir.join(format!("{name}_pred_zmid")))?;
        export_slice(&oracle, 2, mid_z, &slices_dir.join(format!("{name}_oracle_zmid")))?;

        tests.push(TestResult {
            name: name.clone(),
            report: EvalReport {
                mape,
                pape,
                n_points: pred.values.len(),
                pred_time_s,
                oracle_time_s,
                speedup: oracle_time_s / pred_time_s,
            },
        });
    }

    let summary = ExperimentSummary {
        experiment: preset.kind.to_string(),
        scale: scale.to_string(),
        seed,
        iterations: spec.iterations,
        train_wall_s,
        first_loss: out.history.first().map(|r| r.total).unwrap_or(f64::NAN),
        final_loss: out.history.last().map(|r| r.total).unwrap_or(f64::NAN),
        tests,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Eval(format!("summary serialization: {e}")))?;
    std::fs::write(out_dir.join("experiment.json"), json)?;
    Ok(summary)
}

/// Loss history plus the trained model for convergence inspection without
/// the evaluation stage (used by the acceptance checks for the powermap
/// experiment, which share one desk training run).
pub fn train_only(
    preset: &ExperimentPreset,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<crate::trainer::TrainOutput> {
    let model = OperatorModel::init(preset.model.clone(), seed)?;
    let spec = TrainSpec { seed, ..preset.train.clone() };
    train(model, &preset.config, &preset.source, &spec, out_dir)
}

/// Coordinates used for full-field prediction, exposed for benchmarks.
pub fn prediction_coords(config: &ChipConfig) -> Vec<[f64; 3]> {
    mesh_coords(&config.mesh)
}
