//! Command-line pipeline: generate → train → evaluate → explain, plus
//! a three-model comparison harness.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 for usage
//! or validation problems, 3 for runtime numeric failures (divergence,
//! undefined metrics). Every output file is written atomically and all
//! randomness flows from the `--seed` flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tfcam::data::{
    generate_cohort, load_csv, split, write_atomic, CohortDataset, FeatureDef, GeneratorSpec,
    ImputePolicy, NormPolicy, Preprocessor, SplitSpec,
};
use tfcam::error::{Error, Result};
use tfcam::explain::{
    alpha_csv, attention_csv, build_influence_hierarchy, export_graph, feature_importance,
    importance_csv, temporal_profile, GraphFormat, InfluenceQuery, InfluenceRoot, Scope,
};
use tfcam::metrics::{compare_models, evaluate_model, ComparisonReport, ComparisonRow};
use tfcam::model::{
    load_checkpoint, save_checkpoint, train, Model, ModelConfig, ModelKind,
};

#[derive(Parser)]
#[command(name = "tfcam", version, about = "Temporal-feature cross attention for longitudinal clinical prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort CSV (plus its generator spec JSON).
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Evaluate checkpoints on the held-out test split.
    Evaluate(EvaluateArgs),
    /// Produce explanation artifacts from a checkpoint.
    Explain(ExplainArgs),
    /// Train and compare all three models on one dataset.
    Compare(CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Explain(a) => cmd_explain(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Diverged { .. } | Error::NonFinite(_) | Error::UndefinedMetric(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn log(msg: &str) {
    if std::env::var("TFCAM_LOG").as_deref() != Ok("quiet") {
        eprintln!("{msg}");
    }
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("config file {}: {e}", p.display())))
        }
    }
}

// ---------------------------------------------------------------- generate

#[derive(Args)]
struct GenerateArgs {
    /// Number of patients.
    #[arg(long)]
    patients: Option<usize>,
    /// Positive-outcome prevalence in (0,1).
    #[arg(long)]
    prevalence: Option<f64>,
    /// Number of observation intervals.
    #[arg(long)]
    timesteps: Option<usize>,
    /// Scales the progressor/non-progressor mean gap.
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file holding a feature schema (array of feature defs).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON file with a full generator spec; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Where to write the resolved spec JSON (default: <output>.spec.json).
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec: GeneratorSpec = read_config(&args.config)?;
    if let Some(v) = args.patients {
        spec.n_patients = v;
    }
    if let Some(v) = args.prevalence {
        spec.prevalence = v;
    }
    if let Some(v) = args.timesteps {
        spec.n_timesteps = v;
    }
    if let Some(v) = args.signal {
        spec.signal_strength = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(path) = &args.schema {
        let text = std::fs::read_to_string(path)?;
        let features: Vec<FeatureDef> = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("schema file {}: {e}", path.display())))?;
        spec.features = features;
    }

    let dataset = generate_cohort(&spec)?;
    dataset.save_csv(&args.output)?;
    let spec_path = args
        .spec_out
        .unwrap_or_else(|| sibling(&args.output, "spec.json"));
    let spec_json = serde_json::to_vec_pretty(&spec)
        .map_err(|e| Error::InvalidArgument(format!("spec encode: {e}")))?;
    write_atomic(&spec_path, &spec_json)?;
    log(&format!(
        "wrote {} patients ({} positive) to {} and spec to {}",
        dataset.n_patients(),
        dataset.n_positive(),
        args.output.display(),
        spec_path.display()
    ));
    Ok(())
}

/// `cohort.csv` → `cohort.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

// ------------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Model kind: tfcam, retain, or lstm.
    #[arg(long)]
    model: Option<String>,
    /// Training data (wide CSV).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Positive-class loss weight; defaults to the train-split class ratio.
    #[arg(long)]
    pos_weight: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    /// Missing-cell policy: carry_forward or mean.
    #[arg(long)]
    impute: Option<String>,
    /// JSON config mirroring these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(short, long)]
    output: PathBuf,
    /// Loss history CSV (default: <output>.history.csv).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    embed_dim: Option<usize>,
    lstm_hidden: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    pos_weight: Option<f64>,
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
    impute: Option<String>,
}

fn parse_impute(name: Option<&str>) -> Result<ImputePolicy> {
    match name.unwrap_or("carry_forward") {
        "carry_forward" => Ok(ImputePolicy::CarryForward),
        "mean" => Ok(ImputePolicy::Mean),
        other => Err(Error::InvalidArgument(format!(
            "unknown impute policy '{other}', expected carry_forward|mean"
        ))),
    }
}

/// All entries {0,1} → leave alone, otherwise z-score. Used when no
/// generator schema is available to pick per-feature policies.
fn infer_policies(ds: &CohortDataset) -> Vec<NormPolicy> {
    let (n, t, f) = (ds.n_patients(), ds.n_timesteps(), ds.n_features());
    (0..f)
        .map(|fi| {
            let binary = (0..n).all(|pi| {
                (0..t).all(|ti| {
                    let v = ds.x.at3(pi, ti, fi);
                    v == 0.0 || v == 1.0
                })
            });
            if binary {
                NormPolicy::None
            } else {
                NormPolicy::Zscore
            }
        })
        .collect()
}

fn split_spec(
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
    seed: u64,
) -> SplitSpec {
    let d = SplitSpec::default();
    SplitSpec {
        train: train_frac.unwrap_or(d.train),
        val: val_frac.unwrap_or(d.val),
        test: test_frac.unwrap_or(d.test),
        stratified: true,
        seed,
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file: TrainFile = read_config(&args.config)?;
    let kind: ModelKind = args
        .model
        .or(file.model)
        .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?
        .parse()?;
    let impute = parse_impute(args.impute.as_deref().or(file.impute.as_deref()))?;
    let dataset = load_csv(&args.data, impute)?;

    let mut config = ModelConfig::new(kind, dataset.n_features(), dataset.n_timesteps());
    config.seed = args.seed.or(file.seed).unwrap_or(config.seed);
    if let Some(v) = args.epochs.or(file.epochs) {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size.or(file.batch_size) {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate.or(file.learning_rate) {
        config.learning_rate = v;
    }
    if let Some(v) = args.embed_dim.or(file.embed_dim) {
        config.embed_dim = v;
    }
    if let Some(v) = args.lstm_hidden.or(file.lstm_hidden) {
        config.lstm_hidden = v;
    }
    if let Some(v) = args.layers.or(file.layers) {
        config.n_layers = v;
    }
    if let Some(v) = args.heads.or(file.heads) {
        config.n_heads = v;
    }
    config.pos_weight = args.pos_weight.or(file.pos_weight);

    let spec = split_spec(
        args.train_frac.or(file.train_frac),
        args.val_frac.or(file.val_frac),
        args.test_frac.or(file.test_frac),
        config.seed,
    );
    let (train_ds, _val, _test) = split(&dataset, &spec)?;
    let pre = Preprocessor::fit(&train_ds, infer_policies(&train_ds))?;
    if !pre.clamped.is_empty() {
        log(&format!(
            "warning: constant features z-scored to 0: {}",
            pre.clamped.join(", ")
        ));
    }
    let train_norm = pre.apply(&train_ds);

    log(&format!(
        "training {} on {} patients ({} positive), {} epochs",
        kind.as_str(),
        train_norm.n_patients(),
        train_norm.n_positive(),
        config.epochs
    ));
    let trained = train(&train_norm, &config)?;

    save_checkpoint(&trained.model, Some(&pre), &args.output)?;
    let history_path = args
        .history
        .unwrap_or_else(|| sibling(&args.output, "history.csv"));
    let mut history = String::from("epoch,mean_loss\n");
    for (epoch, loss) in trained.history.iter().enumerate() {
        history.push_str(&format!("{epoch},{loss}\n"));
    }
    write_atomic(&history_path, history.as_bytes())?;
    log(&format!(
        "wrote checkpoint to {} and history to {}",
        args.output.display(),
        history_path.display()
    ));
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint path(s); one report row per checkpoint.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Dataset CSV; split parameters must match those used at training.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long)]
    impute: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report prefix: writes <output>.csv and <output>.txt.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    threshold: Option<f64>,
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
    impute: Option<String>,
}

/// Rebuilds the test split a checkpoint was held out from: same
/// fractions, split seeded by the model seed (as in cmd_train).
fn test_split_for(
    dataset: &CohortDataset,
    model: &Model,
    pre: &Option<Preprocessor>,
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
) -> Result<CohortDataset> {
    let spec = split_spec(train_frac, val_frac, test_frac, model.config.seed);
    let (_train, _val, test) = split(dataset, &spec)?;
    Ok(match pre {
        Some(p) => p.apply(&test),
        None => test,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let file: EvaluateFile = read_config(&args.config)?;
    let impute = parse_impute(args.impute.as_deref().or(file.impute.as_deref()))?;
    let dataset = load_csv(&args.data, impute)?;
    let threshold = args.threshold.or(file.threshold).unwrap_or(0.5);

    let mut rows = Vec::new();
    for ckpt_path in &args.checkpoint {
        let (model, pre) = load_checkpoint(ckpt_path)?;
        if model.config.n_features != dataset.n_features()
            || model.config.n_timesteps != dataset.n_timesteps()
        {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {} expects T={} F={}, dataset has T={} F={}",
                ckpt_path.display(),
                model.config.n_timesteps,
                model.config.n_features,
                dataset.n_timesteps(),
                dataset.n_features()
            )));
        }
        let single_class =
            dataset.n_positive() == 0 || dataset.n_positive() == dataset.n_patients();
        let test = if single_class {
            // splitting cannot help; let the undefined AUROC surface
            match &pre {
                Some(p) => p.apply(&dataset),
                None => dataset.clone(),
            }
        } else {
            test_split_for(
                &dataset,
                &model,
                &pre,
                args.train_frac.or(file.train_frac),
                args.val_frac.or(file.val_frac),
                args.test_frac.or(file.test_frac),
            )?
        };
        let report = evaluate_model(&model, &test, threshold)?;
        rows.push(ComparisonRow {
            model_kind: report.model_kind,
            mean: [
                report.auroc,
                report.metrics.f1,
                report.metrics.precision,
                report.metrics.recall,
                report.metrics.accuracy,
            ],
            per_seed: vec![report],
        });
    }
    let report = ComparisonReport {
        rows,
        seeds: Vec::new(),
    };
    write_report(&report, &args.output)?;
    Ok(())
}

fn write_report(report: &ComparisonReport, prefix: &Path) -> Result<()> {
    let csv_path = prefix.with_extension("csv");
    let txt_path = prefix.with_extension("txt");
    write_atomic(&csv_path, report.to_csv().as_bytes())?;
    write_atomic(&txt_path, report.to_text_table().as_bytes())?;
    log(&format!(
        "wrote report to {} and {}",
        csv_path.display(),
        txt_path.display()
    ));
    print!("{}", report.to_text_table());
    Ok(())
}

// ----------------------------------------------------------------- explain

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// temporal, feature, or influence (alias: cross).
    #[arg(long)]
    level: String,
    /// Hierarchy depth (influence level).
    #[arg(long)]
    depth: Option<usize>,
    /// Fan-out per node (influence level).
    #[arg(long)]
    top_k: Option<usize>,
    /// cohort or patient:<id>.
    #[arg(long)]
    scope: Option<String>,
    /// prediction or <feature>@t<k>.
    #[arg(long)]
    root: Option<String>,
    #[arg(long)]
    impute: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(short, long)]
    out_dir: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExplainFile {
    depth: Option<usize>,
    top_k: Option<usize>,
    scope: Option<String>,
    root: Option<String>,
    impute: Option<String>,
}

fn parse_scope(s: Option<&str>) -> Result<Scope> {
    match s.unwrap_or("cohort") {
        "cohort" => Ok(Scope::Cohort),
        other => match other.strip_prefix("patient:") {
            Some(id) if !id.is_empty() => Ok(Scope::Patient { id: id.to_string() }),
            _ => Err(Error::InvalidArgument(format!(
                "scope must be cohort or patient:<id>, got '{other}'"
            ))),
        },
    }
}

fn parse_root(s: Option<&str>) -> Result<InfluenceRoot> {
    match s.unwrap_or("prediction") {
        "prediction" => Ok(InfluenceRoot::Prediction),
        other => {
            let (feature, rest) = other.rsplit_once("@t").ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "root must be prediction or <feature>@t<k>, got '{other}'"
                ))
            })?;
            let time: usize = rest.parse().map_err(|_| {
                Error::InvalidArgument(format!("root '{other}' has a non-numeric time index"))
            })?;
            Ok(InfluenceRoot::Feature {
                time,
                feature: feature.to_string(),
            })
        }
    }
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let file: ExplainFile = read_config(&args.config)?;
    let (model, pre) = load_checkpoint(&args.checkpoint)?;
    let kind = model.config.model_kind;
    let (cap_feature, cap_temporal, cap_cross) = kind.capabilities();

    let level = match args.level.as_str() {
        "temporal" => "temporal",
        "feature" => "feature",
        "influence" | "cross" => "influence",
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown level '{other}', expected temporal|feature|influence"
            )))
        }
    };
    let supported = match level {
        "temporal" => cap_temporal,
        "feature" => cap_feature,
        _ => cap_cross,
    };
    if !supported {
        return Err(Error::Capability(format!(
            "{} does not support {level}-level explanations \
             (capability matrix: lstm none; retain feature+temporal; tfcam all)",
            kind.as_str()
        )));
    }

    let impute = parse_impute(args.impute.as_deref().or(file.impute.as_deref()))?;
    let full = load_csv(&args.data, impute)?;
    let scope = parse_scope(args.scope.as_deref().or(file.scope.as_deref()))?;
    let dataset = match &scope {
        Scope::Cohort => full,
        Scope::Patient { id } => {
            let idx = full.patient_index(id).ok_or_else(|| {
                Error::InvalidArgument(format!("patient '{id}' not found in dataset"))
            })?;
            full.subset(&[idx])
        }
    };
    let dataset = match &pre {
        Some(p) => p.apply(&dataset),
        None => dataset,
    };

    let artifacts = model.forward(&dataset.x)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let out = |name: &str| args.out_dir.join(name);

    match level {
        "temporal" => {
            let alpha = artifacts.alpha.as_ref().expect("capability checked");
            write_atomic(
                &out("alpha.csv"),
                alpha_csv(alpha, &dataset.patient_ids).as_bytes(),
            )?;
            let profile = temporal_profile(alpha, &dataset.y)?;
            for w in &profile.warnings {
                log(&format!("warning: {w}"));
            }
            let json = serde_json::to_vec_pretty(&profile)
                .map_err(|e| Error::InvalidArgument(format!("profile encode: {e}")))?;
            write_atomic(&out("temporal_profile.json"), &json)?;
            log(&format!(
                "wrote alpha.csv and temporal_profile.json to {}",
                args.out_dir.display()
            ));
        }
        "feature" => {
            let c = artifacts.contribution.as_ref().expect("capability checked");
            let importance = feature_importance(c, &dataset.feature_names)?;
            write_atomic(&out("importance.csv"), importance_csv(&importance).as_bytes())?;
            log(&format!(
                "wrote importance.csv to {}",
                args.out_dir.display()
            ));
        }
        _ => {
            let c = artifacts.contribution.as_ref().expect("capability checked");
            let a = artifacts
                .aggregated_attention
                .as_ref()
                .expect("capability checked");
            write_atomic(
                &out("attention.csv"),
                attention_csv(a, &dataset.patient_ids).as_bytes(),
            )?;
            let query = InfluenceQuery {
                root: parse_root(args.root.as_deref().or(file.root.as_deref()))?,
                depth: args.depth.or(file.depth).unwrap_or(3),
                fan_out: args.top_k.or(file.top_k).unwrap_or(3),
                scope,
            };
            let graph = build_influence_hierarchy(&query, c, a, &dataset.feature_names)?;
            if graph.truncated {
                log("warning: hierarchy truncated at the start of the observation window");
            }
            write_atomic(&out("influence.dot"), &export_graph(&graph, GraphFormat::Dot)?)?;
            write_atomic(
                &out("influence.json"),
                &export_graph(&graph, GraphFormat::Json)?,
            )?;
            log(&format!(
                "wrote attention.csv, influence.dot, influence.json to {} ({} nodes, {} edges)",
                args.out_dir.display(),
                graph.nodes.len(),
                graph.edges.len()
            ));
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- compare

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated training seeds, e.g. 0,1,2.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Seed for the shared train/val/test split.
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long)]
    impute: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report prefix: writes <output>.csv and <output>.txt.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CompareFile {
    seeds: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    embed_dim: Option<usize>,
    lstm_hidden: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    split_seed: Option<u64>,
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
    impute: Option<String>,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let file: CompareFile = read_config(&args.config)?;
    let impute = parse_impute(args.impute.as_deref().or(file.impute.as_deref()))?;
    let dataset = load_csv(&args.data, impute)?;

    let seeds: Vec<u64> = args
        .seeds
        .or(file.seeds)
        .unwrap_or_else(|| "0".into())
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad seed '{s}'")))
        })
        .collect::<Result<_>>()?;

    let configs: Vec<ModelConfig> = [ModelKind::Lstm, ModelKind::Retain, ModelKind::Tfcam]
        .into_iter()
        .map(|kind| {
            let mut c = ModelConfig::new(kind, dataset.n_features(), dataset.n_timesteps());
            if let Some(v) = args.epochs.or(file.epochs) {
                c.epochs = v;
            }
            if let Some(v) = args.batch_size.or(file.batch_size) {
                c.batch_size = v;
            }
            if let Some(v) = args.learning_rate.or(file.learning_rate) {
                c.learning_rate = v;
            }
            if let Some(v) = args.embed_dim.or(file.embed_dim) {
                c.embed_dim = v;
            }
            if let Some(v) = args.lstm_hidden.or(file.lstm_hidden) {
                c.lstm_hidden = v;
            }
            if let Some(v) = args.layers.or(file.layers) {
                c.n_layers = v;
            }
            if let Some(v) = args.heads.or(file.heads) {
                c.n_heads = v;
            }
            c
        })
        .collect();

    let spec = split_spec(
        args.train_frac.or(file.train_frac),
        args.val_frac.or(file.val_frac),
        args.test_frac.or(file.test_frac),
        args.split_seed.or(file.split_seed).unwrap_or(0),
    );
    let policies = infer_policies(&dataset);
    log(&format!(
        "comparing 3 models × {} seed(s) on {} patients",
        seeds.len(),
        dataset.n_patients()
    ));
    let report = compare_models(&dataset, &configs, &seeds, &spec, &policies)?;
    write_report(&report, &args.output)?;
    Ok(())
}
