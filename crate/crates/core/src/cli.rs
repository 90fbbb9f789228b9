//! Command-line front end: `collect`, `train`, `servo`, `report`, `reproduce`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 run failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::control::{MlpEstimator, Outcome, PoseEstimator, TruePoseStub};
use crate::datagen::{
    collect_all, collect_trajectories, linear_sweep, read_dataset_csv, rotation_sweep, write_dataset_csv,
    CollectionSpec, DatagenError, Dataset,
};
use crate::estimator::{
    load_model, mlp_train, model_to_bytes, split_trajectories, window_dataset, write_loss_csv, EstimatorError,
    MlpModel, Series, WindowSet, OUTPUT_DIM,
};
use crate::evaluation::{
    cross_size_eval, per_limb_error_table, predict_windows, range_heatmap, run_task_suite_with, run_trial,
    write_bands_csv, write_heatmap_csv, write_heatmap_long, EvalError, HeatmapKind, TaskSpec, TaskSuiteReport,
};
use crate::geometry::RelativePose;
use crate::io::{sha256_file, sha256_hex, write_file};
use crate::rng::substream_seed;
use crate::sensor::ELECTRODE_COUNT;

/// Default output root when neither `--out` nor `output_dir` is given.
pub const OUTPUT_ROOT_ENV: &str = "CAPSERVO_OUTPUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const SERVO_LOG_FILE: &str = "servo_log.csv";

#[derive(Debug, Parser)]
#[command(name = "capservo", version, about = "Capacitive servoing simulator")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set collection.trajectories=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record training trajectories at every station.
    Collect,
    /// Train the pose estimator on a dataset CSV.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run one closed-loop traversal.
    Servo {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use the true pose instead of the model.
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
        stub_estimator: bool,
    },
    /// Error tables, heatmaps, task suite and cross-size tables.
    Report {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
        stub_estimator: bool,
    },
    /// collect, train, servo and report in one go.
    Reproduce,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Collect => "collect",
            Command::Train { .. } => "train",
            Command::Servo { .. } => "servo",
            Command::Report { .. } => "report",
            Command::Reproduce => "reproduce",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Run(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::InvalidSpec(m) => CliError::Config(m),
            DatagenError::Csv(_) | DatagenError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidConfig(m) => CliError::Config(m),
            EstimatorError::NanLoss { .. } => CliError::Run(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Invalid(m) => CliError::Config(m),
            EvalError::Estimator(e) => e.into(),
            EvalError::Datagen(e) => e.into(),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    version: &'a str,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
    config: &'a RunConfig,
}

/// Files written by one command, hashed as they are written.
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<FileHash>,
    pub inputs: Vec<FileHash>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new(), inputs: Vec::new() }
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path).map_err(io_err(path))?;
        self.inputs.push(FileHash { path: path.display().to_string(), sha256 });
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_file(&path, bytes).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        self.files.push(FileHash { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory");
        self.write(name, &buf)
    }

    /// Writes the manifest; it has no timestamps, so reruns reproduce it.
    fn finish(self, command: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let m = Manifest {
            command,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs: &self.inputs,
            outputs: &self.files,
            config: cfg,
        };
        let text = toml::to_string(&m).map_err(|e| CliError::Run(e.to_string()))?;
        let path = self.dir.join(MANIFEST_FILE);
        write_file(&path, text.as_bytes()).map_err(|e| CliError::Run(e.to_string()))?;
        Ok(path)
    }
}

/// `--out`, then `output_dir`, then `$CAPSERVO_OUTPUT_ROOT/<command>`, then
/// `./capservo-out/<command>`.
pub fn resolve_output_dir(cli_out: Option<&Path>, cfg: &RunConfig, command: &str) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("capservo-out").join(command),
    }
}

pub struct CollectSummary {
    pub dataset: PathBuf,
    pub trajectories: usize,
    pub samples: usize,
    pub aborted: usize,
}

pub fn cmd_collect(cfg: &RunConfig, out: &Path) -> Result<CollectSummary, CliError> {
    let rig = cfg.sensor.rig();
    let data = collect_all(&cfg.collection, &rig, cfg.seed)?;
    let mut outputs = Outputs::new(out.to_path_buf());
    let dataset = outputs.write_with(DATASET_FILE, |b| write_dataset_csv(b, &data))?;
    outputs.finish("collect", cfg)?;

    let n = data.trajectories.len();
    let lens: Vec<usize> = data.trajectories.iter().map(|t| t.len()).collect();
    let (min, max) = (lens.iter().min().copied().unwrap_or(0), lens.iter().max().copied().unwrap_or(0));
    let mean = if n > 0 { data.sample_count() as f64 / n as f64 } else { 0.0 };
    println!("trajectories={n} samples={} aborted={}", data.sample_count(), data.aborted_count());
    println!("frames_per_trajectory min={min} mean={mean:.1} max={max}");
    let short = lens.iter().filter(|l| **l < cfg.servo.config.window_len).count();
    println!("shorter_than_window={short}");
    if n > 0 && data.aborted_count() as f64 > 0.05 * n as f64 {
        eprintln!("warning: {} of {n} trajectories aborted on contact", data.aborted_count());
        for (i, st) in cfg.collection.stations.iter().enumerate() {
            let ids: Vec<String> = data
                .trajectories
                .iter()
                .filter(|t| t.aborted && t.id / cfg.collection.trajectories.max(1) == i)
                .map(|t| t.id.to_string())
                .collect();
            if !ids.is_empty() {
                eprintln!("  {}: {}", st.name, ids.join(" "));
            }
        }
    }
    Ok(CollectSummary { dataset, trajectories: n, samples: data.sample_count(), aborted: data.aborted_count() })
}

/// Model dimensions implied by the configuration.
pub fn model_dims(cfg: &RunConfig) -> Vec<usize> {
    vec![cfg.servo.config.window_len * ELECTRODE_COUNT, 400, 400, 400, 400, OUTPUT_DIM]
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let file = std::fs::File::open(dataset).map_err(io_err(dataset))?;
    let loaded = read_dataset_csv(std::io::BufReader::new(file))?;
    let series: Vec<Series<'_>> = loaded.iter().map(|t| Series { frames: &t.frames, poses: &t.poses }).collect();
    let all = window_dataset(&series, cfg.servo.config.window_len)?;
    let seed = substream_seed(cfg.seed, "train", cfg.train.seed);
    let (tr, va) = split_trajectories(loaded.len(), cfg.train.val_fraction, seed);
    let train = all.filter_trajectories(|i| tr.binary_search(&i).is_ok());
    let val = all.filter_trajectories(|i| va.binary_search(&i).is_ok());
    println!("windows train={} val={}", train.len(), val.len());
    let tcfg = crate::estimator::TrainConfig { seed, ..cfg.train.clone() };
    let (model, curve) = mlp_train(&train, (!val.is_empty()).then_some(&val), &model_dims(cfg), &tcfg)?;

    let mut outputs = Outputs::new(out.to_path_buf());
    outputs.input(dataset)?;
    let bytes = model_to_bytes(&model);
    let path = outputs.write(MODEL_FILE, &bytes)?;
    outputs.write_with(LOSS_FILE, |b| write_loss_csv(b, &curve))?;
    outputs.finish("train", cfg)?;
    if let Some(last) = curve.last() {
        println!("epoch={} train_mse={:.6} val_mse={:.6}", last.epoch, last.train_mse, last.val_mse);
    }
    println!("model_sha256={}", sha256_hex(&bytes));
    Ok(path)
}

/// Loads a model and checks it against the configured window.
pub fn load_checked_model(cfg: &RunConfig, path: &Path) -> Result<MlpModel, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("model not found: {}", path.display())));
    }
    let model = load_model(path)?;
    let expected = cfg.servo.config.window_len * ELECTRODE_COUNT;
    if model.input_dim() != expected || model.output_dim() != OUTPUT_DIM {
        return Err(CliError::Config(format!(
            "model/config mismatch: model maps {} inputs to {} outputs, config expects {} ({} frames x {} electrodes) to {}",
            model.input_dim(),
            model.output_dim(),
            expected,
            cfg.servo.config.window_len,
            ELECTRODE_COUNT,
            OUTPUT_DIM
        )));
    }
    Ok(model)
}

/// Servo outcome and where its log went.
pub struct ServoSummary {
    pub outcome: Outcome,
    pub log: PathBuf,
}

pub fn cmd_servo(cfg: &RunConfig, model: Option<&Path>, stub: bool, out: &Path) -> Result<ServoSummary, CliError> {
    let mut outputs = Outputs::new(out.to_path_buf());
    let loaded = if stub {
        None
    } else {
        let p = model.ok_or_else(|| CliError::Config("servo needs --model or --stub-estimator".into()))?;
        let m = load_checked_model(cfg, p)?;
        outputs.input(p)?;
        Some(m)
    };
    let mut est: Box<dyn PoseEstimator + '_> = match &loaded {
        Some(m) => Box::new(MlpEstimator { model: m }),
        None => Box::new(TruePoseStub),
    };
    let spec = cfg.servo.task_spec();
    let scfg = cfg.servo.servo_config();
    let rig = cfg.sensor.rig();
    let run = run_trial(&spec, cfg.servo.joint_angle_deg, cfg.servo.trial, est.as_mut(), &scfg, &rig, cfg.seed)?;
    let log = outputs.write_with(SERVO_LOG_FILE, |b| run.log.write_csv(b))?;
    outputs.finish("servo", cfg)?;
    println!("control_steps={}", run.log.rows.len());
    println!("outcome={}", run.outcome);
    Ok(ServoSummary { outcome: run.outcome, log })
}

fn predictions(model: Option<&MlpModel>, windows: &WindowSet) -> Result<Vec<(RelativePose, RelativePose)>, CliError> {
    let truth: Vec<RelativePose> = windows.iter().map(|s| s.y).collect();
    let pred = match model {
        Some(m) => predict_windows(m, windows)?,
        None => truth.clone(),
    };
    Ok(truth.into_iter().zip(pred).collect())
}

fn dataset_windows(cfg: &RunConfig, data: &Dataset) -> Result<WindowSet, CliError> {
    Ok(data.windows(cfg.servo.config.window_len)?)
}

pub fn cmd_report(cfg: &RunConfig, model: Option<&Path>, stub: bool, out: &Path) -> Result<Vec<FileHash>, CliError> {
    let mut missing = Vec::new();
    if !stub {
        match model {
            None => missing.push("--model".to_string()),
            Some(p) if !p.exists() => missing.push(format!("model file {}", p.display())),
            _ => {}
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Data(format!("missing inputs: {}", missing.join(", "))));
    }
    let mut outputs = Outputs::new(out.to_path_buf());
    let model = match (stub, model) {
        (false, Some(p)) => {
            let m = load_checked_model(cfg, p)?;
            outputs.input(p)?;
            Some(m)
        }
        _ => None,
    };
    let rig = cfg.sensor.rig();
    let rep = &cfg.report;

    let test_spec = CollectionSpec { trajectories: rep.test_trajectories, ..cfg.collection.clone() };
    let test_seed = substream_seed(cfg.seed, "report/test", 0);
    let mut per_station = Vec::new();
    for (i, st) in test_spec.stations.iter().enumerate() {
        let data = collect_trajectories(&test_spec, &rig, i, test_seed)?;
        per_station.push((st.name.clone(), predictions(model.as_ref(), &dataset_windows(cfg, &data)?)?));
    }
    let table = per_limb_error_table(&per_station)?;
    outputs.write_with("error_table.csv", |b| table.write_csv(b))?;
    let avg = table.average();
    println!(
        "average_mae dy={:.3} dz={:.3} thy_deg={:.3} thz_deg={:.3}",
        avg.mae[0], avg.mae[1], avg.mae[2], avg.mae[3]
    );

    let station = &cfg.collection.stations[rep.sweep_station];
    let lin = linear_sweep(&rig, station, rep.sweep_runs, &rep.sweep, substream_seed(cfg.seed, "report/linear", 0))?;
    let rot = rotation_sweep(&rig, station, rep.sweep_runs, &rep.sweep, substream_seed(cfg.seed, "report/rotation", 0))?;
    let tgrid = range_heatmap(&predictions(model.as_ref(), &dataset_windows(cfg, &lin)?)?, HeatmapKind::Translation)?;
    let rgrid = range_heatmap(&predictions(model.as_ref(), &dataset_windows(cfg, &rot)?)?, HeatmapKind::Rotation)?;
    outputs.write_with("heatmap_translation.csv", |b| write_heatmap_csv(b, &tgrid))?;
    outputs.write_with("heatmap_rotation.csv", |b| write_heatmap_csv(b, &rgrid))?;
    outputs.write_with("heatmaps_long.csv", |b| {
        write_heatmap_long(&mut *b, &tgrid, "translation_cm", true)?;
        write_heatmap_long(b, &rgrid, "rotation_deg", false)
    })?;
    outputs.write_with("range_bands.csv", |b| write_bands_csv(b, &[("translation", &tgrid), ("rotation", &rgrid)]))?;
    for b in tgrid.bands.iter().chain(&rgrid.bands) {
        println!("band {} mean={}", b.label, b.mean.map_or("empty".into(), |m| format!("{m:.3}")));
    }

    let mut suite = TaskSuiteReport { trials: Vec::new() };
    let mut est: Box<dyn PoseEstimator + '_> = match &model {
        Some(m) => Box::new(MlpEstimator { model: m }),
        None => Box::new(TruePoseStub),
    };
    for &kind in &rep.tasks {
        let spec = TaskSpec { trials: rep.trials, ..TaskSpec::preset(kind) };
        let r = run_task_suite_with(&spec, est.as_mut(), &cfg.servo.config, &rig, cfg.seed)?;
        suite.trials.extend(r.trials);
    }
    if !suite.trials.is_empty() {
        outputs.write_with("task_success.csv", |b| suite.write_success_csv(b))?;
        outputs.write_with("task_trials.csv", |b| suite.write_trials_csv(b))?;
        outputs.write_with("task_distance_long.csv", |b| suite.write_distance_curves_long(b))?;
        for c in suite.cells() {
            println!("task {} angle={} success={}/{}", c.task.name(), c.angle_deg, c.successes, c.trials);
        }
    }

    if !rep.cross_size_seeds.is_empty() {
        let mut buf = Vec::new();
        for (k, &s) in rep.cross_size_seeds.iter().enumerate() {
            let (_, r) = cross_size_eval(&rep.cross_size, &rig, substream_seed(cfg.seed, "report/cross_size", s))?;
            let mut one = Vec::new();
            r.write_csv(&mut one).expect("writing to memory");
            let text = String::from_utf8(one).expect("csv is utf-8");
            let body = if k == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
            buf.extend_from_slice(body.as_bytes());
            println!("cross_size seed={s} worst_ratio={:.3}", r.worst_ratio());
        }
        outputs.write("cross_size.csv", &buf)?;
    }
    let files = outputs.files.clone();
    outputs.finish("report", cfg)?;
    Ok(files)
}

/// Runs the four stages into `out/{collect,train,servo,report}`. Servo
/// failures are reported but do not stop the report.
pub fn cmd_reproduce(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let collect = cmd_collect(cfg, &out.join("collect"))?;
    let model = cmd_train(cfg, &collect.dataset, &out.join("train"))?;
    let servo = cmd_servo(cfg, Some(&model), false, &out.join("servo"))?;
    cmd_report(cfg, Some(&model), false, &out.join("report"))?;
    let mut summary = String::new();
    for stage in ["collect", "train", "servo", "report"] {
        let p = out.join(stage).join(MANIFEST_FILE);
        let h = sha256_file(&p).map_err(io_err(&p))?;
        writeln!(summary, "{stage} = \"{h}\"").expect("writing to a string");
    }
    writeln!(summary, "servo_outcome = \"{}\"", servo.outcome).expect("writing to a string");
    write_file(&out.join(MANIFEST_FILE), summary.as_bytes()).map_err(|e| CliError::Run(e.to_string()))?;
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let out = resolve_output_dir(cli.out.as_deref(), &cfg, cli.command.name());
    match &cli.command {
        Command::Collect => cmd_collect(&cfg, &out).map(|_| 0),
        Command::Train { dataset } => cmd_train(&cfg, dataset, &out).map(|_| 0),
        Command::Servo { model, stub_estimator } => {
            let s = cmd_servo(&cfg, model.as_deref(), *stub_estimator, &out)?;
            match s.outcome {
                Outcome::Success => Ok(0),
                _ if cfg.servo.strict => Err(CliError::Run(format!("outcome={}", s.outcome))),
                _ => Ok(0),
            }
        }
        Command::Report { model, stub_estimator } => cmd_report(&cfg, model.as_deref(), *stub_estimator, &out).map(|_| 0),
        Command::Reproduce => cmd_reproduce(&cfg, &out).map(|_| 0),
    }
}
