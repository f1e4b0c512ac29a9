//! `greybox` command-line interface.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use greybox::classifier::{
    accuracy, predict, predict_nb, train_logreg, train_nb, LogRegModel, SavedModel, TrainConfig,
};
use greybox::config::FileConfig;
use greybox::dataset::{
    load_dataset, serialize_manifest, synth_generate, vectorize, TripleDataset, VectorizeConfig,
};
use greybox::error::{write_string, Error, Result};
use greybox::explain::{counterfactual_scan, explain, SelfExplainingConfig};
use greybox::kb::{extract_kb, kb_to_graph, load_kb, serialize_kb, KnowledgeBase};
use greybox::kg::{extract_kg, ged, KnowledgeGraph, DEFAULT_EPSILON};
use greybox::lsp::{predict_segmap, NoiseConfig, PredictorConfig};
use greybox::pipeline::{audit, evaluate, AuditOptions};

#[derive(Parser, Debug)]
#[command(name = "greybox", version, about = "Greybox explainable part-based classification")]
struct Cli {
    /// TOML config file (default: $GREYBOX_CONFIG). Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic annotated dataset from a knowledge base.
    Synth(SynthArgs),
    /// Triplify an annotated dataset into a knowledge base.
    ExtractKb(ExtractKbArgs),
    /// Train a classifier on ground-truth attribute vectors.
    Train(TrainArgs),
    /// Run the full pipeline over a dataset and report accuracy and failures.
    Eval(EvalArgs),
    /// Explain the prediction for one sample.
    Explain(ExplainArgs),
    /// Minimal attribute flips that change one sample's prediction.
    Counterfactual(CounterfactualArgs),
    /// Extract the attribute/class graph from model weights.
    ExtractKg(ExtractKgArgs),
    /// Graph edit distance between two graphs.
    Ged(GedArgs),
    /// Audit explanations, validity against a KB, and self-explainability.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Jsonl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Logreg,
    Nb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    Oracle,
    Noisy,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GraphFormat {
    Edges,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GraphInput {
    /// Edge-list file as written by `extract-kg`.
    Kg,
    /// Knowledge base file; its isPartOf triples form the graph.
    Kb,
}

#[derive(Args, Debug)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VectorizeArgs {
    /// Confidence threshold for attribute pixels.
    #[arg(long)]
    tau: Option<f64>,
    /// Minimum confident pixels for an attribute to be present.
    #[arg(long)]
    min_pixels: Option<usize>,
}

impl VectorizeArgs {
    fn resolve(&self, file: &FileConfig) -> Result<VectorizeConfig> {
        let mut cfg = file.vectorize_config();
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(m) = self.min_pixels {
            cfg.min_pixels = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Expert knowledge base (default: built-in MonuMAI).
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Probability of omitting each linked attribute.
    #[arg(long)]
    p_omit: Option<f64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    max_instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ExtractKbArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Minimum fraction of a class's samples showing an attribute.
    #[arg(long)]
    min_support: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Logreg)]
    model: ModelKind,
    /// Where to save the trained model.
    #[arg(long)]
    save: PathBuf,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    l2_penalty: Option<f64>,
    /// Add per-class intercepts.
    #[arg(long)]
    bias: bool,
    /// Hold out this fraction for testing and report its accuracy.
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    vectorize: VectorizeArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct PredictorArgs {
    #[arg(long, value_enum, default_value_t = PredictorKind::Oracle)]
    predictor: PredictorKind,
    /// Directory of `<sample_id>.seg` / `.conf` files for `--predictor file`.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    p_drop_instance: Option<f64>,
    #[arg(long)]
    p_drop_attribute: Option<f64>,
    #[arg(long)]
    p_spurious: Option<f64>,
    #[arg(long)]
    keep_one_instance: bool,
    #[arg(long)]
    noise_seed: Option<u64>,
}

impl PredictorArgs {
    fn resolve(&self, file: &FileConfig) -> Result<PredictorConfig> {
        let cfg = match self.predictor {
            PredictorKind::Oracle => PredictorConfig::Oracle,
            PredictorKind::File => match &self.pred_dir {
                Some(dir) => PredictorConfig::File(dir.clone()),
                None => return Err(Error::validation("--predictor file needs --pred-dir")),
            },
            PredictorKind::Noisy => {
                let mut n: NoiseConfig = file.noise_config();
                n.p_drop_instance = self.p_drop_instance.unwrap_or(n.p_drop_instance);
                n.p_drop_attribute = self.p_drop_attribute.unwrap_or(n.p_drop_attribute);
                n.p_spurious = self.p_spurious.unwrap_or(n.p_spurious);
                n.keep_one_instance |= self.keep_one_instance;
                n.seed = self.noise_seed.unwrap_or(n.seed);
                PredictorConfig::Noisy(n)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    predictor: PredictorArgs,
    #[command(flatten)]
    vectorize: VectorizeArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sample: String,
    #[command(flatten)]
    predictor: PredictorArgs,
    #[command(flatten)]
    vectorize: VectorizeArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct CounterfactualArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sample: String,
    /// Largest flip set to search.
    #[arg(long)]
    max_flips: Option<usize>,
    #[command(flatten)]
    vectorize: VectorizeArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct ExtractKgArgs {
    #[arg(long)]
    model: PathBuf,
    /// Weights at or below this value are not edges.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = GraphFormat::Edges)]
    format: GraphFormat,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct GedArgs {
    left: PathBuf,
    right: PathBuf,
    #[arg(long, value_enum, default_value_t = GraphInput::Kg)]
    left_kind: GraphInput,
    #[arg(long, value_enum, default_value_t = GraphInput::Kg)]
    right_kind: GraphInput,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Expert knowledge base (default: built-in MonuMAI).
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_flips: Option<usize>,
    /// Simulatability bound on the number of attributes.
    #[arg(long)]
    max_attributes: Option<usize>,
    #[command(flatten)]
    vectorize: VectorizeArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    output: Output,
}

const DEFAULT_N_PER_CLASS: usize = 100;
const DEFAULT_MIN_SUPPORT: f64 = 0.0;
const DEFAULT_MAX_FLIPS: usize = 2;

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => write_string(path, text),
        None => {
            let mut stdout = io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn expert_kb(path: Option<&Path>) -> Result<KnowledgeBase> {
    path.map_or_else(|| Ok(KnowledgeBase::monumai()), load_kb)
}

fn load_logreg(path: &Path) -> Result<LogRegModel> {
    match SavedModel::load(path)? {
        SavedModel::LogReg(m) => Ok(m),
        SavedModel::NaiveBayes(_) => Err(Error::validation(
            "this command needs a logistic regression model; naive Bayes has no per-attribute weights to explain",
        )),
    }
}

fn sample_of<'a>(ds: &'a TripleDataset, id: &str) -> Result<&'a greybox::dataset::Sample> {
    ds.sample(id)
        .ok_or_else(|| Error::validation(format!("no sample with id {id:?}")))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string(value).expect("report records serialize");
    s.push('\n');
    s
}

fn run_synth(args: &SynthArgs, file: &FileConfig) -> Result<()> {
    let kb = expert_kb(args.kb.as_deref())?;
    let mut cfg = file.synth_config();
    cfg.p_omit = args.p_omit.unwrap_or(cfg.p_omit);
    cfg.height = args.height.unwrap_or(cfg.height);
    cfg.width = args.width.unwrap_or(cfg.width);
    cfg.max_instances = args.max_instances.unwrap_or(cfg.max_instances);
    let n = args
        .n_per_class
        .or(file.synth.n_per_class)
        .unwrap_or(DEFAULT_N_PER_CLASS);
    let seed = args.seed.or(file.synth.seed).unwrap_or(0);
    let ds = synth_generate(&kb, n, &cfg, seed)?;
    emit(&args.output, &serialize_manifest(&ds))
}

fn run_extract_kb(args: &ExtractKbArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let min_support = args
        .min_support
        .or(file.kg.min_support)
        .unwrap_or(DEFAULT_MIN_SUPPORT);
    emit(&args.output, &serialize_kb(&extract_kb(&ds, min_support)?))
}

fn run_train(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let vect = args.vectorize.resolve(file)?;
    let (train, test) = ds.split(args.test_fraction, args.split_seed)?;
    let xs = train.vectors(&vect)?;
    let ys = train.labels();
    let test_xs = test.vectors(&vect)?;
    let test_ys = test.labels();

    let mut report = format!("model: {:?}\ntrain samples: {}\n", args.model, train.len())
        .to_lowercase();
    let saved = match args.model {
        ModelKind::Logreg => {
            let mut cfg: TrainConfig = file.train_config();
            cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);
            cfg.max_epochs = args.max_epochs.unwrap_or(cfg.max_epochs);
            cfg.l2_penalty = args.l2_penalty.unwrap_or(cfg.l2_penalty);
            cfg.bias |= args.bias;
            let (model, tr) = train_logreg(&xs, &ys, &ds.attr_vocab, &ds.class_vocab, &cfg)?;
            report.push_str(&format!(
                "epochs: {}\nloss: {:.6} -> {:.6}\nconverged: {}\n",
                tr.epochs, tr.initial_loss, tr.final_loss, tr.converged
            ));
            report.push_str(&format!(
                "train accuracy: {:.4}\n",
                accuracy(|z| predict(&model, z), &xs, &ys)?
            ));
            if !test.is_empty() {
                report.push_str(&format!(
                    "test samples: {}\ntest accuracy: {:.4}\n",
                    test.len(),
                    accuracy(|z| predict(&model, z), &test_xs, &test_ys)?
                ));
            }
            SavedModel::LogReg(model)
        }
        ModelKind::Nb => {
            let model = train_nb(&xs, &ys, &ds.attr_vocab, &ds.class_vocab, 1.0)?;
            report.push_str(&format!(
                "train accuracy: {:.4}\n",
                accuracy(|z| predict_nb(&model, z), &xs, &ys)?
            ));
            if !test.is_empty() {
                report.push_str(&format!(
                    "test samples: {}\ntest accuracy: {:.4}\n",
                    test.len(),
                    accuracy(|z| predict_nb(&model, z), &test_xs, &test_ys)?
                ));
            }
            SavedModel::NaiveBayes(model)
        }
    };
    write_string(&args.save, &saved.to_text())?;
    emit(&args.output, &report)
}

fn run_eval(args: &EvalArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let model = load_logreg(&args.model)?;
    let predictor = args.predictor.resolve(file)?;
    let vect = args.vectorize.resolve(file)?;
    let report = evaluate(&ds, &predictor, &model, &vect)?;
    let text = match args.format {
        Format::Text => report.to_text(),
        Format::Jsonl => report.to_records(),
    };
    emit(&args.output, &text)
}

fn run_explain(args: &ExplainArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let model = load_logreg(&args.model)?;
    let predictor = args.predictor.resolve(file)?;
    let vect = args.vectorize.resolve(file)?;
    let sample = sample_of(&ds, &args.sample)?;
    let latent = predict_segmap(&predictor, sample, model.attr_vocab(), &vect)?;
    let z = vectorize(&latent.segmap, model.attr_vocab(), &vect)?;
    let mut e = explain(&model, &z, &sample.sample_id)?;
    if let PredictorConfig::File(_) = predictor {
        e.segmap_ref = Some(format!("{}.seg", sample.sample_id));
    }
    let text = match args.format {
        Format::Text => format!("{}\n", e.text),
        Format::Jsonl => to_json(&e),
    };
    emit(&args.output, &text)
}

fn run_counterfactual(args: &CounterfactualArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let model = load_logreg(&args.model)?;
    let vect = args.vectorize.resolve(file)?;
    let sample = sample_of(&ds, &args.sample)?;
    let z = vectorize(&sample.gt_segmap, model.attr_vocab(), &vect)?;
    let max_flips = args
        .max_flips
        .or(file.counterfactual.max_flips)
        .unwrap_or(DEFAULT_MAX_FLIPS);
    let original = predict(&model, &z)?;
    let results = counterfactual_scan(&model, &z, max_flips)?;
    let classes = model.class_vocab().names();
    let text = match args.format {
        Format::Jsonl => results.iter().map(to_json).collect(),
        Format::Text => {
            let mut out = format!(
                "sample {}: predicted {}, attributes {}\n",
                sample.sample_id, classes[original], z
            );
            if results.is_empty() {
                out.push_str(&format!("no prediction change within {max_flips} flip(s)\n"));
            }
            for r in &results {
                let flips: Vec<String> = r
                    .flips
                    .iter()
                    .map(|&j| {
                        let verb = if z.get(j) { "remove" } else { "add" };
                        format!("{verb} {}", model.attr_vocab().name_at(j))
                    })
                    .collect();
                out.push_str(&format!(
                    "{} -> {} (p[{}] {:.4} -> {:.4})\n",
                    flips.join(", "),
                    classes[r.new_class],
                    classes[original],
                    r.old_prob,
                    r.new_prob
                ));
            }
            out
        }
    };
    emit(&args.output, &text)
}

fn run_extract_kg(args: &ExtractKgArgs, file: &FileConfig) -> Result<()> {
    let model = load_logreg(&args.model)?;
    let eps = args.epsilon.or(file.kg.epsilon).unwrap_or(DEFAULT_EPSILON);
    let kg = extract_kg(&model, eps);
    let text = match args.format {
        GraphFormat::Edges => kg.to_edge_list(),
        GraphFormat::Dot => kg.to_dot(),
    };
    emit(&args.output, &text)
}

fn load_graph(path: &Path, kind: GraphInput) -> Result<KnowledgeGraph> {
    match kind {
        GraphInput::Kb => Ok(kb_to_graph(&load_kb(path)?)),
        GraphInput::Kg => KnowledgeGraph::parse_edge_list(
            &greybox::error::read_to_string(path)?,
            &path.display().to_string(),
        ),
    }
}

fn run_ged(args: &GedArgs) -> Result<()> {
    let left = load_graph(&args.left, args.left_kind)?;
    let right = load_graph(&args.right, args.right_kind)?;
    let result = ged(&left, &right)?;
    let text = match args.format {
        Format::Jsonl => to_json(&result),
        Format::Text => {
            let mut out = format!("graph edit distance: {}\n", result.distance);
            for op in &result.edit_script {
                out.push_str(&format!("  {op}\n"));
            }
            out
        }
    };
    emit(&args.output, &text)
}

fn run_audit(args: &AuditArgs, file: &FileConfig) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let model = load_logreg(&args.model)?;
    let kb = expert_kb(args.kb.as_deref())?;
    let vect = args.vectorize.resolve(file)?;
    let mut self_explaining = SelfExplainingConfig::default();
    if let Some(m) = args.max_attributes {
        self_explaining.max_attributes = m;
    }
    let opts = AuditOptions {
        epsilon: args.epsilon.or(file.kg.epsilon).unwrap_or(DEFAULT_EPSILON),
        max_flips: args
            .max_flips
            .or(file.counterfactual.max_flips)
            .unwrap_or(DEFAULT_MAX_FLIPS),
        self_explaining,
    };
    let report = audit(&ds, &model, &kb, &vect, &opts)?;
    let text = match args.format {
        Format::Text => report.to_text(),
        Format::Jsonl => report.to_records(),
    };
    emit(&args.output, &text)
}

fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::resolve(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => run_synth(a, &file),
        Command::ExtractKb(a) => run_extract_kb(a, &file),
        Command::Train(a) => run_train(a, &file),
        Command::Eval(a) => run_eval(a, &file),
        Command::Explain(a) => run_explain(a, &file),
        Command::Counterfactual(a) => run_counterfactual(a, &file),
        Command::ExtractKg(a) => run_extract_kg(a, &file),
        Command::Ged(a) => run_ged(a),
        Command::Audit(a) => run_audit(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("greybox: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
