//! Command-line driver: `dln train | eval | quantize | simplify | export-dot |
//! export-json | count-ops | search`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
//! divergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{classification_report, load_csv, read_raw_csv, split, FoldPlan, Schema, DEFAULT_MAX_MISSING_FRACTION};
use crate::error::DlnError;
use crate::manifest::RunManifest;
use crate::model::{AnyModel, Model};
use crate::network::{Network, NetworkSpec, PhaseMode, SteFlags};
use crate::simplify::{export_dot, extract};
use crate::trainer::{random_search, train_network, SearchSpace, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub const MODEL_FILE: &str = "model.json";
pub const QUANTIZED_FILE: &str = "quantized.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Held-out fraction for the test split; 0 trains on everything.
    pub test_fraction: f64,
    pub max_missing_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            schema: None,
            test_fraction: 0.2,
            max_missing_fraction: DEFAULT_MAX_MISSING_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: usize,
    pub folds: usize,
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            trials: 8,
            folds: 3,
            space: SearchSpace::default(),
        }
    }
}

/// The single JSON config file. Input dimensions in `network` are filled in
/// from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub search: SearchConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperDefault,
}

#[derive(Debug, Parser)]
#[command(name = "dln", version, about = "Differentiable logic networks for tabular classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON config with sections {data, network, train, search}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON schema sidecar: {"column": {"kind": "continuous|categorical|label"}}.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter preset applied before the config file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Trained (`dln-model`) or quantized (`dln-quantized`) model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes model, quantized model, history and manifest into --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Balanced accuracy of a model on labelled data, soft and quantized.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the schema stored in the model.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Quantize a trained model into a boolean circuit.
    Quantize(ModelArgs),
    /// Extract and simplify the rules of a model.
    Simplify(ModelArgs),
    /// Simplified rules as Graphviz DOT.
    ExportDot(ModelArgs),
    /// Quantized circuit as JSON.
    ExportJson(ModelArgs),
    /// Operation counts of the quantized circuit.
    CountOps {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 16)]
        bits: u32,
    },
    /// Random hyperparameter search scored by cross-validation.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Writes the best configuration as a config file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn fail(code: i32, e: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

fn code_of(e: &DlnError, io_code: i32) -> i32 {
    match e {
        DlnError::Data(_) => EXIT_DATA,
        DlnError::Divergence { .. } => EXIT_DIVERGED,
        DlnError::Config(m) if m.starts_with("all trials diverged") => EXIT_DIVERGED,
        DlnError::Io { .. } => io_code,
        _ => EXIT_CONFIG,
    }
}

/// Maps errors of config-side inputs (config, schema, model files).
fn config_err(e: DlnError) -> Failure {
    fail(code_of(&e, EXIT_CONFIG), e)
}

/// Maps errors of data-side inputs (CSV files) and processing.
fn data_err(e: DlnError) -> Failure {
    fail(code_of(&e, EXIT_DATA), e)
}

/// Parses `args` (including the program name), runs the command, and returns
/// the exit code. Output goes to `stdout`; diagnostics to stderr.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DLN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(EXIT_CONFIG, format!("DLN_THREADS must be a positive integer, got '{value}'")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train { run, out, json } => cmd_train(&run, &out, json, stdout),
        Command::Eval {
            model,
            data,
            schema,
            json: _,
        } => cmd_eval(&model, &data, schema.as_deref(), stdout),
        Command::Quantize(m) => {
            let q = load_model(&m.model)?.quantized().map_err(config_err)?;
            emit(&m.out, &q.to_json(), stdout)
        }
        Command::Simplify(m) => {
            let any = load_model(&m.model)?;
            let q = any.quantized().map_err(config_err)?;
            let rules = extract(&q.circuit, &q.preprocessor).map_err(config_err)?.simplify();
            let text = if m.json { rules.to_json() } else { rules.to_text() };
            emit(&m.out, &text, stdout)
        }
        Command::ExportDot(m) => {
            let q = load_model(&m.model)?.quantized().map_err(config_err)?;
            let rules = extract(&q.circuit, &q.preprocessor).map_err(config_err)?.simplify();
            emit(&m.out, &export_dot(&rules), stdout)
        }
        Command::ExportJson(m) => {
            let q = load_model(&m.model)?.quantized().map_err(config_err)?;
            emit(&m.out, &q.circuit.to_json(), stdout)
        }
        Command::CountOps { model: m, bits } => {
            let q = load_model(&m.model)?.quantized().map_err(config_err)?;
            let ops = q.circuit.count_ops(bits).map_err(config_err)?;
            let text = if m.json {
                serde_json::to_string_pretty(&ops).expect("serializes")
            } else {
                let h = ops.high_level;
                format!(
                    "bit width: {}\ncomparisons: {}\nlogic ops: {}\nadditions: {}\nargmax comparisons: {}\ngate-level ops: {}",
                    ops.bit_width, h.comparisons, h.logic_ops, h.additions, h.argmax_comparisons, ops.gate_level
                )
            };
            emit(&m.out, &text, stdout)
        }
        Command::Search {
            run,
            trials,
            folds,
            out,
            json,
        } => cmd_search(&run, trials, folds, out.as_deref(), json, stdout),
    }
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match out {
        Some(path) => write_file(path, &text),
        None => stdout.write_all(text.as_bytes()).map_err(|e| fail(EXIT_CONFIG, e)),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<AnyModel> {
    AnyModel::load(path).map_err(config_err)
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

fn preset_overlay(preset: Preset) -> Value {
    match preset {
        Preset::PaperDefault => {
            let mut v = serde_json::to_value(NetworkSpec::paper_default(0, 0, 2, vec![])).expect("serializes");
            let obj = v.as_object_mut().expect("object");
            for key in ["n_continuous", "n_onehot", "n_classes", "layer_widths"] {
                obj.remove(key);
            }
            serde_json::json!({ "network": v })
        }
    }
}

/// Resolves defaults, then the preset, then the config file, then flags.
pub fn resolve_config(args: &RunArgs) -> CliResult<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("serializes");
    if let Some(p) = args.preset {
        merge(&mut value, preset_overlay(p));
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| fail(EXIT_CONFIG, format!("{}: invalid JSON: {e}", path.display())))?;
        merge(&mut value, file);
    }
    let mut config: RunConfig = serde_json::from_value(value).map_err(|e| fail(EXIT_CONFIG, format!("invalid config: {e}")))?;
    if let Some(d) = &args.data {
        config.data.path = Some(d.clone());
    }
    if let Some(s) = &args.schema {
        config.data.schema = Some(s.clone());
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    Ok(config)
}

fn load_training_data(config: &RunConfig) -> CliResult<(crate::data::Dataset, PathBuf, PathBuf)> {
    let schema_path = config
        .data
        .schema
        .clone()
        .ok_or_else(|| fail(EXIT_CONFIG, "no schema given (use --schema or data.schema)"))?;
    let data_path = config
        .data
        .path
        .clone()
        .ok_or_else(|| fail(EXIT_CONFIG, "no data given (use --data or data.path)"))?;
    let schema = Schema::from_json_file(&schema_path).map_err(config_err)?;
    let data = load_csv(&data_path, &schema, config.data.max_missing_fraction).map_err(data_err)?;
    Ok((data, data_path, schema_path))
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    train_balanced_accuracy: f64,
    test_balanced_accuracy: Option<f64>,
    n_train: usize,
    n_test: usize,
    manifest_hash: String,
    out: String,
}

fn balanced(net: &Network, data: &crate::data::Dataset) -> CliResult<f64> {
    let pred = net.predict_dataset(data, PhaseMode::Inference).map_err(data_err)?;
    Ok(classification_report(&pred, &data.labels, data.n_classes())
        .map_err(data_err)?
        .balanced_accuracy)
}

fn cmd_train(args: &RunArgs, out: &Path, json: bool, stdout: &mut dyn Write) -> CliResult<()> {
    let mut config = resolve_config(args)?;
    config.train.validate().map_err(config_err)?;
    let (data, data_path, schema_path) = load_training_data(&config)?;
    let (train_data, test_data) = if config.data.test_fraction > 0.0 {
        let (a, b) = split(&data, config.data.test_fraction, config.train.seed).map_err(data_err)?;
        (a, Some(b))
    } else {
        (data, None)
    };
    config.network.n_continuous = train_data.n_continuous();
    config.network.n_onehot = train_data.n_onehot();
    config.network.n_classes = train_data.n_classes();
    config.network.validate().map_err(config_err)?;

    let mut manifest = RunManifest::new(
        "train",
        config.train.seed,
        serde_json::to_value(&config).expect("serializes"),
    );
    manifest.add_input("data", &data_path).map_err(data_err)?;
    manifest.add_input("schema", &schema_path).map_err(config_err)?;
    for (role, name) in [
        ("model", MODEL_FILE),
        ("quantized", QUANTIZED_FILE),
        ("history", HISTORY_FILE),
    ] {
        manifest.add_artifact(role, Path::new(name));
    }
    let hash = manifest.hash();

    std::fs::create_dir_all(out).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", out.display())))?;
    write_file(&out.join(MANIFEST_FILE), &format!("{}\n", manifest.to_json()))?;

    let pre = (*train_data.preprocessor).clone();
    let net = Network::init(config.network.clone(), &train_data, config.train.seed).map_err(data_err)?;
    let mut history = String::new();
    let result = train_network(net, &train_data, test_data.as_ref(), &config.train, |record, _| {
        history.push_str(&serde_json::to_string(record).expect("serializes"));
        history.push('\n');
    });
    write_file(&out.join(HISTORY_FILE), &history)?;
    let output = match result {
        Ok(o) => o,
        Err(DlnError::Divergence { batch, checkpoint }) => {
            let mut message = format!("training diverged at batch {batch}");
            if let Some(params) = checkpoint {
                let net = Network::new(config.network.clone(), *params).map_err(config_err)?;
                let model = Model::new(net, pre, Some(hash)).map_err(config_err)?;
                let path = out.join(CHECKPOINT_FILE);
                write_file(&path, &format!("{}\n", model.to_json()))?;
                message.push_str(&format!("; last good parameters saved to {}", path.display()));
            }
            return Err(fail(EXIT_DIVERGED, message));
        }
        Err(e) => return Err(data_err(e)),
    };

    let model = Model::new(output.network.clone(), pre, Some(hash.clone())).map_err(config_err)?;
    write_file(&out.join(MODEL_FILE), &format!("{}\n", model.to_json()))?;
    let quantized = model.quantize().map_err(config_err)?;
    write_file(&out.join(QUANTIZED_FILE), &format!("{}\n", quantized.to_json()))?;

    let summary = TrainSummary {
        epochs: output.history.len(),
        train_balanced_accuracy: balanced(&output.network, &train_data)?,
        test_balanced_accuracy: test_data.as_ref().map(|t| balanced(&output.network, t)).transpose()?,
        n_train: train_data.len(),
        n_test: test_data.as_ref().map_or(0, |t| t.len()),
        manifest_hash: hash,
        out: out.display().to_string(),
    };
    let text = if json {
        serde_json::to_string_pretty(&summary).expect("serializes")
    } else {
        let test = summary
            .test_balanced_accuracy
            .map_or("n/a".to_string(), |t| format!("{t:.4}"));
        format!(
            "trained {} epochs on {} samples\ntrain balanced accuracy: {:.4}\ntest balanced accuracy: {test}\nwrote {}",
            summary.epochs, summary.n_train, summary.train_balanced_accuracy, summary.out
        )
    };
    emit(&None, &text, stdout)
}

/// Output of `dln eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Quantized circuit.
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    /// Relaxed network (phase II forward without straight-through); `None`
    /// for quantized model files.
    pub soft_balanced_accuracy: Option<f64>,
    /// `soft_balanced_accuracy - balanced_accuracy`.
    pub quantization_gap: Option<f64>,
    pub classes: Vec<String>,
    pub n_samples: usize,
}

fn cmd_eval(model_path: &Path, data_path: &Path, schema: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let report = evaluate(model_path, data_path, schema)?;
    emit(&None, &serde_json::to_string_pretty(&report).expect("serializes"), stdout)
}

pub fn evaluate(model_path: &Path, data_path: &Path, schema: Option<&Path>) -> CliResult<EvalReport> {
    let any = load_model(model_path)?;
    let pre = any.preprocessor().clone();
    let schema = match schema {
        Some(p) => Schema::from_json_file(p).map_err(config_err)?,
        None => pre.schema.clone(),
    };
    let (_, table) = read_raw_csv(data_path, &schema, DEFAULT_MAX_MISSING_FRACTION).map_err(data_err)?;
    let rows: Vec<usize> = (0..table.len()).collect();
    let data = pre.transform(&Arc::new(table), &rows).map_err(data_err)?;
    let q = any.quantized().map_err(config_err)?;
    let hard = q.circuit.predict_dataset(&data).map_err(data_err)?;
    let report = classification_report(&hard, &data.labels, data.n_classes()).map_err(data_err)?;
    let soft = match &any {
        AnyModel::Trained(m) => {
            let mut net = m.network().map_err(config_err)?;
            net.spec.ste = SteFlags::NONE;
            let pred = net.predict_dataset(&data, PhaseMode::PhaseII).map_err(data_err)?;
            Some(
                classification_report(&pred, &data.labels, data.n_classes())
                    .map_err(data_err)?
                    .balanced_accuracy,
            )
        }
        AnyModel::Quantized(_) => None,
    };
    Ok(EvalReport {
        balanced_accuracy: report.balanced_accuracy,
        accuracy: report.accuracy,
        per_class_recall: report.per_class_recall,
        soft_balanced_accuracy: soft,
        quantization_gap: soft.map(|s| s - report.balanced_accuracy),
        classes: pre.classes.clone(),
        n_samples: data.len(),
    })
}

fn cmd_search(
    args: &RunArgs,
    trials: Option<usize>,
    folds: Option<usize>,
    out: Option<&Path>,
    json: bool,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let mut config = resolve_config(args)?;
    if let Some(t) = trials {
        config.search.trials = t;
    }
    if let Some(k) = folds {
        config.search.folds = k;
    }
    let (data, _, _) = load_training_data(&config)?;
    config.network.n_continuous = data.n_continuous();
    config.network.n_onehot = data.n_onehot();
    config.network.n_classes = data.n_classes();
    let plan = FoldPlan::stratified(&data, config.search.folds, config.train.seed).map_err(|e| match e {
        DlnError::InvalidArgument(m) => fail(EXIT_CONFIG, m),
        e => data_err(e),
    })?;
    let result = random_search(
        &config.network,
        &config.train,
        &config.search.space,
        config.search.trials,
        &data,
        &plan,
        config.train.seed,
    )
    .map_err(data_err)?;
    if let Some(path) = out {
        let mut best = config.clone();
        best.network = result.best.spec.clone();
        best.train = result.best.config.clone();
        write_file(path, &format!("{}\n", serde_json::to_string_pretty(&best).expect("serializes")))?;
    }
    let text = if json {
        serde_json::to_string_pretty(&result).expect("serializes")
    } else {
        let mut lines = Vec::new();
        for t in &result.trials {
            let outcome = match &t.outcome {
                crate::trainer::TrialOutcome::Scored(s) => format!("{s:.4}"),
                crate::trainer::TrialOutcome::Rejected(m) => format!("rejected: {m}"),
                crate::trainer::TrialOutcome::Diverged => "diverged".into(),
            };
            lines.push(format!(
                "trial {}: widths {:?} lr {:.5} -> {outcome}",
                t.index, t.spec.layer_widths, t.config.learning_rate
            ));
        }
        lines.push(format!("best: trial {}", result.best.index));
        lines.join("\n")
    };
    emit(&None, &text, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(code_of(&DlnError::Config("x".into()), EXIT_DATA), EXIT_CONFIG);
        assert_eq!(code_of(&DlnError::InvalidArgument("x".into()), EXIT_DATA), EXIT_CONFIG);
        assert_eq!(code_of(&DlnError::Data("x".into()), EXIT_CONFIG), EXIT_DATA);
        let diverged = DlnError::Divergence { batch: 3, checkpoint: None };
        assert_eq!(code_of(&diverged, EXIT_CONFIG), EXIT_DIVERGED);
        assert_eq!(code_of(&DlnError::Config("all trials diverged (seeds [1])".into()), EXIT_CONFIG), EXIT_DIVERGED);
        let io = || DlnError::Io { path: "p".into(), source: std::io::Error::other("x") };
        assert_eq!(config_err(io()).code, EXIT_CONFIG);
        assert_eq!(data_err(io()).code, EXIT_DATA);
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"network": {"neurons_per_feature": 3}, "train": {"seed": 4, "iterations": 2}}"#).unwrap();
        let base = resolve_config(&RunArgs::default()).unwrap();
        assert_eq!(base, RunConfig::default());
        let args = RunArgs {
            config: Some(path),
            preset: Some(Preset::PaperDefault),
            seed: Some(9),
            ..RunArgs::default()
        };
        let c = resolve_config(&args).unwrap();
        let paper = NetworkSpec::paper_default(0, 0, 2, vec![]);
        assert_eq!(c.network.neurons_per_feature, 3);
        assert_eq!(c.network.gate_subspace_size, paper.gate_subspace_size);
        assert_eq!(c.network.link_subspace_size, paper.link_subspace_size);
        assert_eq!(c.network.layer_widths, NetworkSpec::default().layer_widths);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.iterations, 2);
    }

    #[test]
    fn merge_is_deep() {
        let mut a = serde_json::json!({"x": {"y": 1, "z": 2}, "w": [1]});
        merge(&mut a, serde_json::json!({"x": {"z": 3}, "w": [2, 3]}));
        assert_eq!(a, serde_json::json!({"x": {"y": 1, "z": 3}, "w": [2, 3]}));
    }
}
