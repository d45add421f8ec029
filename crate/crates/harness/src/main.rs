use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlo_core::control::{CsvSink, DiagnosticsSink, LoopDiagnostics};
use dlo_core::dataset::{Dataset, DatasetError};
use dlo_core::gradcheck::gradient_check;
use dlo_core::linalg::svd;
use dlo_core::model_file::{self, ModelFileError};
use dlo_core::rbfn::Dims;
use dlo_core::train::{TrainConfig, TrainError};
use dlo_harness::pipeline::{self, CollectError, TrainStageError};
use dlo_harness::run::{run_scenario, RunError, RunReport};
use dlo_harness::scenario::{resolve, ScenarioError};

#[derive(Parser)]
#[command(name = "dlo-harness", version, about = "Collect, train and run rod shape-control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record random exploration of the rod
    Collect {
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// preset name or scenario file supplying the rod and workspace
        #[arg(long, default_value = "task1")]
        scenario: String,
    },
    /// Fit the network to a dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 256)]
        q: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        target_feature: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Run a scenario
    Run {
        /// task1, task2, task3 or a scenario file
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        no_online_update: bool,
        /// run with and without online updates and report both
        #[arg(long, conflicts_with = "no_online_update")]
        compare: bool,
        /// seed for preset geometry
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// per-target metrics CSV
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// per-tick diagnostics CSV
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Write a preset scenario to a file
    Scenario {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check training gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Finite-difference Jacobian of one feature at a scenario's start
    ProbeJacobian {
        #[arg(long, default_value = "task1")]
        scenario: String,
        #[arg(long, default_value_t = 4)]
        feature: usize,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failure with a stable category name and exit code.
struct Failure {
    category: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self { category: "config", code: 2, message: message.to_string() }
    }
    fn io(message: impl ToString) -> Self {
        Self { category: "io", code: 3, message: message.to_string() }
    }
    fn data(message: impl ToString) -> Self {
        Self { category: "data", code: 4, message: message.to_string() }
    }
    fn diverged(message: impl ToString) -> Self {
        Self { category: "diverged", code: 5, message: message.to_string() }
    }
    fn check(message: impl ToString) -> Self {
        Self { category: "check", code: 6, message: message.to_string() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(_) => Failure::io(e),
            ScenarioError::Setup(_) => Failure::diverged(e),
            _ => Failure::config(e),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => Failure::io(e),
            DatasetError::InvalidSetup(_) => Failure::config(e),
            DatasetError::Diverged { .. } => Failure::diverged(e),
            _ => Failure::data(e),
        }
    }
}

impl From<ModelFileError> for Failure {
    fn from(e: ModelFileError) -> Self {
        match e {
            ModelFileError::Io(_) => Failure::io(e),
            _ => Failure::data(e),
        }
    }
}

impl From<CollectError> for Failure {
    fn from(e: CollectError) -> Self {
        match e {
            CollectError::Scenario(e) => e.into(),
            CollectError::Dataset(e) => e.into(),
        }
    }
}

impl From<TrainStageError> for Failure {
    fn from(e: TrainStageError) -> Self {
        match e {
            TrainStageError::Train(TrainError::Diverged { .. }) => Failure::diverged(e),
            TrainStageError::Train(e) => Failure::config(e),
            TrainStageError::Model(e) => e.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Scenario(e) => e.into(),
            RunError::ModelMismatch { .. } => Failure::data(e),
            RunError::Control { source: dlo_core::control::ControlError::InvalidConfig(_), .. } => Failure::config(e),
            RunError::Control { .. } => Failure::diverged(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: category={} message={:?}", f.category, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Collect { duration, seed, out, scenario } => {
            let sc = resolve(&scenario, 0)?;
            let (rec, meta) = pipeline::collect(&sc, duration, seed)?;
            rec.dataset.save(&out, &meta)?;
            println!("samples={} out={}", rec.dataset.samples.len(), out.display());
        }
        Command::Train { data, q, beta, epochs, lr, batch, target_feature, seed, out_model } => {
            let dataset = Dataset::<f64>::load(&data, 3, 3)?;
            let mut cfg = TrainConfig { q, beta, epochs, batch_size: batch, target_feature, seed, ..TrainConfig::default() };
            cfg.adam.learning_rate = lr;
            let outcome = pipeline::train_to_file(&dataset, &cfg, &out_model)?;
            for (epoch, loss) in outcome.loss_history.iter().enumerate() {
                println!("epoch={epoch} loss={loss:.9e}");
            }
            println!("out={}", out_model.display());
        }
        Command::Run { scenario, model, no_online_update, compare, seed, metrics, diagnostics } => {
            let sc = resolve(&scenario, seed)?;
            let model_path = model
                .or_else(|| sc.model_path.clone().map(PathBuf::from))
                .ok_or_else(|| Failure::config("no model given and the scenario names none"))?;
            let dims = Dims { q: 0, l: 3, n: 3, m: sc.sim.feature_count };
            let net = model_file::load_expecting::<f64>(&model_path, dims)?;
            let modes: Vec<bool> = if compare { vec![false, true] } else { vec![!no_online_update] };

            let mut diag_sink = match &diagnostics {
                Some(p) => Some(CsvSink::new(BufWriter::new(File::create(p).map_err(Failure::io)?), 3).map_err(Failure::io)?),
                None => None,
            };
            let mut reports = Vec::new();
            for update in modes {
                let mut discard = Vec::<LoopDiagnostics<f64>>::new();
                let sink: &mut dyn DiagnosticsSink<f64> = match diag_sink.as_mut() {
                    Some(s) => s,
                    None => &mut discard,
                };
                let result = run_scenario(&sc, &net, update, sink);
                if let Some(s) = diag_sink.as_mut() {
                    s.flush().map_err(Failure::io)?;
                }
                let report = result?;
                for (i, t) in report.targets.iter().enumerate() {
                    let ttt = t.time_to_threshold.map_or("none".to_string(), |v| format!("{v:.2}"));
                    println!(
                        "update={update} target={i} feature={} time_to_threshold={ttt} succeeded={} final_dy={:.4e}",
                        t.feature, t.succeeded, t.final_dy_norm
                    );
                }
                println!("update={update} completed={} total_time={:.2}", report.completed, report.total_time);
                reports.push(report);
            }
            if let Some(p) = metrics.or_else(|| sc.metrics_out.clone().map(PathBuf::from)) {
                let mut text = String::new();
                for (k, r) in reports.iter().enumerate() {
                    let csv = r.to_csv();
                    text.push_str(if k == 0 { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
                }
                std::fs::write(&p, text).map_err(Failure::io)?;
            }
            if !reports.iter().all(|r: &RunReport| r.completed) {
                return Err(Failure::check("scenario did not complete"));
            }
        }
        Command::Scenario { name, seed, out } => {
            let sc = dlo_harness::scenario::preset(&name, seed)?;
            sc.save(&out)?;
            println!("out={}", out.display());
        }
        Command::Gradcheck { configs, seed, tolerance } => {
            let r = gradient_check(configs, seed, 1.0);
            println!(
                "configurations={} parameters={} worst_relative_error={:.3e}",
                r.configurations, r.parameters_checked, r.worst_relative_error
            );
            if !(r.worst_relative_error < tolerance) {
                return Err(Failure::check(format!("worst relative error {:.3e} at {:?}", r.worst_relative_error, r.worst_at)));
            }
        }
        Command::ProbeJacobian { scenario, feature, h, seed } => {
            let sc = resolve(&scenario, seed)?;
            if feature >= sc.sim.feature_count {
                return Err(Failure::config(format!("feature {feature} out of range")));
            }
            let state = sc.initial_state().map_err(ScenarioError::from)?;
            let j = state
                .probe_true_jacobian(feature, sc.sim.feature_count, &sc.sim, h)
                .map_err(Failure::diverged)?;
            for r in 0..3 {
                println!("{:.9e},{:.9e},{:.9e}", j[(r, 0)], j[(r, 1)], j[(r, 2)]);
            }
            let s = svd(&j).singular_values;
            println!("singular_values={:.6e},{:.6e},{:.6e}", s[0], s[1], s[2]);
        }
    }
    Ok(())
}
