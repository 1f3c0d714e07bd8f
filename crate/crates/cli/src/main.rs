//! `thermo` — command-line front end for the thermal operator toolkit.
//!
//! Every subcommand exits 0 on success; on failure it prints a single
//! `{"error": "..."}` line to stderr and exits nonzero. All randomness is
//! controlled by explicit `--seed` flags.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thermo_core::config::{parse_config_path, parse_matrix, serialize_matrix, ChipConfig};
use thermo_core::eval::{
    evaluate_config, export_slice, predict_field, with_htc, with_power_map,
};
use thermo_core::experiment::{preset, ExperimentKind, ExperimentScale};
use thermo_core::fdm::{self, TemperatureField};
use thermo_core::grf::GrfSampler;
use thermo_core::operator::{OperatorModel, PackagedModel};
use thermo_core::trainer::{train, FunctionSource, TrainSpec};
use thermo_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "thermo",
    about = "Steady-state chip thermal simulation: finite-difference solver plus a physics-trained neural operator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a chip configuration with the finite-difference reference solver
    SolveFdm {
        /// Chip configuration file
        #[arg(long)]
        config: PathBuf,
        /// Output temperature-field CSV
        #[arg(long)]
        out: PathBuf,
        /// Also print the injected-vs-convected energy balance as JSON
        #[arg(long)]
        energy: bool,
    },
    /// Sample smooth random power maps on an m-by-m surface grid
    SampleGrf {
        /// Grid size per side
        #[arg(long, default_value_t = 21)]
        m: usize,
        /// Correlation length on the unit square
        #[arg(long, default_value_t = 0.3)]
        length_scale: f64,
        /// Number of maps to draw
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper end of the rescaled power range
        #[arg(long, default_value_t = 4.0)]
        p_max: f64,
        /// Write raw field values instead of rescaling to [0, p_max]
        #[arg(long)]
        raw: bool,
        /// Output directory for map_000.txt .. map_{n-1}.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an operator model on a chip configuration
    Train(TrainArgs),
    /// Predict a full temperature field with a trained model
    Predict {
        /// Trained model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Chip configuration file
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        input: CaseInput,
        /// Output temperature-field CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a trained model against the reference solver on one case
    Evaluate {
        /// Trained model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Chip configuration file
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        input: CaseInput,
        /// Optional path for the JSON report (always printed to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one mesh-aligned slice of a field CSV as a grayscale image plus CSV
    ExportSlice {
        /// Temperature-field CSV produced by solve-fdm or predict
        #[arg(long)]
        field: PathBuf,
        /// Slice axis: x, y, or z
        #[arg(long)]
        axis: String,
        /// Node index along the axis
        #[arg(long)]
        index: usize,
        /// Output path stem; writes <stem>.pgm and <stem>.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named experiment end to end and write all artifacts
    RunExperiment {
        /// Experiment name: powermap2d or htc-dual
        #[arg(long)]
        name: String,
        /// Settings size: desk or full
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Random seed for initialization, sampling, and collocation
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Artifacts directory
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Chip configuration file; defaults to the experiment preset's config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name: powermap2d or htc-dual
    #[arg(long)]
    experiment: String,
    /// Settings size the defaults are taken from: desk or full
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Training iterations; defaults to the preset's value
    #[arg(long)]
    iterations: Option<usize>,
    /// Input functions sampled per iteration; defaults to the preset's value
    #[arg(long)]
    functions_per_iter: Option<usize>,
    /// Initial learning rate; defaults to the preset's value
    #[arg(long)]
    lr: Option<f64>,
    /// Multiplicative learning-rate decay factor; defaults to the preset's value
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Iterations between learning-rate decays; defaults to the preset's value
    #[arg(long)]
    lr_decay_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint cadence in iterations; 0 disables periodic checkpoints
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Drop the trainable scalar bias on the combination head
    #[arg(long)]
    no_head_bias: bool,
    /// Output directory for model.ckpt, checkpoints, and loss_history.csv
    #[arg(long)]
    out: PathBuf,
}

/// Case-level model inputs shared by predict and evaluate.
#[derive(Args)]
struct CaseInput {
    /// Power-map matrix file replacing the config's top-surface map
    #[arg(long)]
    powermap: Option<PathBuf>,
    /// Convection coefficient for the top surface
    #[arg(long, requires = "htc_bottom")]
    htc_top: Option<f64>,
    /// Convection coefficient for the bottom surface
    #[arg(long, requires = "htc_top")]
    htc_bottom: Option<f64>,
}

impl CaseInput {
    /// Applies whichever input was given to the base config.
    fn apply(&self, config: &ChipConfig) -> Result<ChipConfig> {
        if self.powermap.is_some() && self.htc_top.is_some() {
            return Err(Error::Config(
                "give either --powermap or --htc-top/--htc-bottom, not both".into(),
            ));
        }
        if let Some(path) = &self.powermap {
            let grid = parse_matrix(&std::fs::read_to_string(path)?)?;
            return with_power_map(config, grid);
        }
        if let (Some(top), Some(bottom)) = (self.htc_top, self.htc_bottom) {
            return with_htc(config, top, bottom);
        }
        Ok(config.clone())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let line = e.to_string().lines().next().unwrap_or("bad arguments").to_string();
            eprintln!("{}", serde_json::json!({ "error": line }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SolveFdm { config, out, energy } => {
            let config = parse_config_path(&config)?;
            let field = fdm::solve_config(&config)?;
            std::fs::write(&out, field.to_csv())?;
            if energy {
                let bal = fdm::energy_balance(&config, &field)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "injected_w": bal.injected_w,
                        "convected_w": bal.convected_w,
                    })
                );
            }
            Ok(())
        }
        Command::SampleGrf { m, length_scale, n, seed, p_max, raw, out } => {
            use rand::SeedableRng;
            let sampler = GrfSampler::new(m, length_scale)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            std::fs::create_dir_all(&out)?;
            for i in 0..n {
                let map = if raw {
                    sampler.sample_raw(&mut rng)
                } else {
                    sampler.sample_power_map(p_max, true, &mut rng)
                };
                std::fs::write(out.join(format!("map_{i:03}.txt")), serialize_matrix(&map))?;
            }
            Ok(())
        }
        Command::Train(args) => run_train(args),
        Command::Predict { model, config, input, out } => {
            let packaged = PackagedModel::load(&model)?;
            let case = input.apply(&parse_config_path(&config)?)?;
            let field = predict_field(&packaged, &case)?;
            std::fs::write(&out, field.to_csv())?;
            Ok(())
        }
        Command::Evaluate { model, config, input, out } => {
            let packaged = PackagedModel::load(&model)?;
            let case = input.apply(&parse_config_path(&config)?)?;
            let report = evaluate_config(&packaged, &case)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Eval(format!("report serialization: {e}")))?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
            Ok(())
        }
        Command::ExportSlice { field, axis, index, out } => {
            let field = TemperatureField::from_csv(&std::fs::read_to_string(&field)?)?;
            let axis = match axis.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                other => {
                    return Err(Error::Eval(format!("unknown axis '{other}'; use x, y, or z")))
                }
            };
            export_slice(&field, axis, index, &out)?;
            println!("wrote {0}.pgm and {0}.csv", out.display());
            Ok(())
        }
        Command::RunExperiment { name, scale, seed, out } => {
            let kind: ExperimentKind = name.parse()?;
            let scale: ExperimentScale = scale.parse()?;
            let summary = thermo_core::experiment::run_experiment(kind, scale, seed, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary)
                    .map_err(|e| Error::Eval(format!("summary serialization: {e}")))?
            );
            Ok(())
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let kind: ExperimentKind = args.experiment.parse()?;
    let scale: ExperimentScale = args.scale.parse()?;
    let mut p = preset(kind, scale);

    if let Some(path) = &args.config {
        p.config = parse_config_path(path)?;
        adapt_to_config(&mut p, kind)?;
    }
    if args.no_head_bias {
        p.model.head_bias = false;
    }
    let spec = TrainSpec {
        iterations: args.iterations.unwrap_or(p.train.iterations),
        functions_per_iter: args.functions_per_iter.unwrap_or(p.train.functions_per_iter),
        lr0: args.lr.unwrap_or(p.train.lr0),
        lr_decay: args.lr_decay.unwrap_or(p.train.lr_decay),
        lr_decay_every: args.lr_decay_every.unwrap_or(p.train.lr_decay_every),
        seed: args.seed,
        checkpoint_every: args.checkpoint_every.unwrap_or(p.train.checkpoint_every),
        ..p.train
    };
    std::fs::create_dir_all(&args.out)?;
    let model = OperatorModel::init(p.model, args.seed)?;
    let out = train(model, &p.config, &p.source, &spec, Some(&args.out))?;
    let last = out.history.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "{}",
        serde_json::json!({
            "out": args.out.display().to_string(),
            "iterations": spec.iterations,
            "final_loss": last,
        })
    );
    Ok(())
}

/// Makes a preset's model and sampler consistent with a user-supplied
/// configuration (branch width and sampled-map size follow the mesh).
fn adapt_to_config(p: &mut thermo_core::experiment::ExperimentPreset, kind: ExperimentKind) -> Result<()> {
    match kind {
        ExperimentKind::PowerMap2D => {
            let [nx, ny, _] = p.config.mesh.counts;
            if nx != ny {
                return Err(Error::Config(format!(
                    "powermap2d training needs a square top-surface grid, got {nx}x{ny}"
                )));
            }
            p.model.branches[0].input_dim = nx * ny;
            if let FunctionSource::PowerMaps { grid_size, .. } = &mut p.source {
                *grid_size = nx;
            }
        }
        // The two scalar-input branches fit any mesh.
        ExperimentKind::HtcDual => {}
    }
    Ok(())
}
