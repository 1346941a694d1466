use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xrtree::data::{self, Dataset, Features, SyntheticConfig};
use xrtree::label_tree::{build_tree, pifa};
use xrtree::metrics::{label_counts, PropensityModel, Report};
use xrtree::sparse::SparseMatrix;
use xrtree::trainer::FeatureSource;
use xrtree::vectorizer::TfidfModel;
use xrtree::{Error, Inputs, Result, RunConfig, XrModel};

#[derive(Parser)]
#[command(name = "xrtree", version, about = "Extreme multi-label training and inference over label trees")]
struct Cli {
    /// Worker threads (0 = all cores). XRTREE_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its directory.
    Train(TrainArgs),
    /// Rank labels for new inputs with a trained model.
    Predict(PredictArgs),
    /// Score a prediction file against ground truth.
    Evaluate(EvaluateArgs),
    /// Build a label tree from training data and save its indexers.
    BuildTree(BuildTreeArgs),
    /// Write a planted-cluster synthetic dataset.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature file, or raw documents when --labels is given.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Label file for raw-text input.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beam: Option<usize>,
    /// Weigh every shortlisted term equally.
    #[arg(long)]
    no_cost_sensitive: bool,
    /// Skip the encoder and use TF-IDF features only.
    #[arg(long)]
    tfidf_only: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Documents (text models) or a feature file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Defaults to the beam the model was trained with.
    #[arg(long)]
    beam: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction file with `label:score` lines.
    #[arg(long)]
    input: PathBuf,
    /// Ground truth: a label file or a feature file.
    #[arg(long)]
    labels: PathBuf,
    /// Training labels for propensities; PSP is skipped without it.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 0.55)]
    psp_a: f64,
    #[arg(long, default_value_t = 1.5)]
    psp_b: f64,
    /// Also write the table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildTreeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 200)]
    n_labels: usize,
    #[arg(long, default_value_t = 8)]
    cluster_size: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    min_labels: usize,
    #[arg(long, default_value_t = 1)]
    max_labels: usize,
    /// Also write raw-text documents with label files.
    #[arg(long)]
    text: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads(cli.threads).and_then(|_| match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BuildTree(a) => build_tree_cmd(a),
        Command::GenData(a) => gen_data(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let env = match std::env::var("XRTREE_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("XRTREE_THREADS=`{v}` is not a number")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn need(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what} given (flag or config)")))
}

fn load_training(input: &Path, labels: Option<&Path>) -> Result<Dataset> {
    match labels {
        Some(l) => data::load_text(input, l, None),
        None => data::load_svmlight(input, None, None),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.beam {
        cfg.trainer.beam = b;
    }
    if a.no_cost_sensitive {
        cfg.multires.cost_sensitive = false;
    }
    if a.tfidf_only {
        cfg.encoder.enabled = false;
    }
    let input = need(a.input.or(cfg.paths.train.clone()), "training input")?;
    let labels = a.labels.or(cfg.paths.labels.clone());
    let out = need(a.out.or(cfg.paths.out.clone()), "output directory")?;
    cfg.validate()?;
    let ds = load_training(&input, labels.as_deref())?;
    let model = XrModel::fit(ds.inputs(), &ds.labels, &cfg)?;
    model.save(&out)?;
    eprintln!(
        "trained on {} instances, {} labels, tree {:?}; model in {}",
        ds.len(),
        ds.n_labels(),
        model.tree().level_sizes(),
        out.display()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = XrModel::load(&a.model)?;
    let beam = a.beam.unwrap_or(model.config().trainer.beam);
    let pred = match model.feature_source() {
        FeatureSource::Tfidf(_) => {
            let docs: Vec<String> = fs::read_to_string(&a.input)?.lines().map(str::to_string).collect();
            model.predict(Inputs::Text(&docs), beam, a.topk)?
        }
        FeatureSource::Precomputed { .. } => {
            let ds = data::load_svmlight(&a.input, None, None)?;
            let Features::Sparse(x) = &ds.features else { unreachable!() };
            model.predict(Inputs::Features(x), beam, a.topk)?
        }
    };
    let mut w: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for row in &pred.rows {
        let line: Vec<String> = row.iter().map(|(l, s)| format!("{l}:{s:.6}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<Vec<u32>>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.split(':').next().unwrap().parse::<u32>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad prediction `{tok}`"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Labels from either a label file or a feature file.
fn read_truth(path: &Path, n_labels: Option<usize>) -> Result<SparseMatrix> {
    let text = fs::read_to_string(path)?;
    if text.contains(':') {
        Ok(data::read_svmlight(text.as_bytes(), None, n_labels)?.labels)
    } else {
        data::read_label_file(text.as_bytes(), n_labels)
    }
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = read_predictions(&a.input)?;
    let mut truth = read_truth(&a.labels, None)?;
    let prop = match &a.train {
        Some(p) => {
            let train = read_truth(p, None)?;
            let l = train.n_cols().max(truth.n_cols());
            truth = read_truth(&a.labels, Some(l))?;
            let train = read_truth(p, Some(l))?;
            Some(PropensityModel::fit(&label_counts(&train), train.n_rows(), a.psp_a, a.psp_b)?)
        }
        None => None,
    };
    let report = Report::compute(&pred, &truth, prop.as_ref())?;
    print!("{}", report.table());
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn build_tree_cmd(a: BuildTreeArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = load_training(&a.input, a.labels.as_deref())?;
    let x = match &ds.features {
        Features::Text(docs) => TfidfModel::fit(docs, &cfg.vectorizer)?.transform(docs),
        Features::Sparse(x) => x.row_l2_normalize(),
    };
    let z = pifa(&x, &ds.labels)?;
    let tree = build_tree(&z, &cfg.label_tree.hlt_refine, cfg.seed, cfg.label_tree.kmeans_iters)?;
    tree.save(&a.out)?;
    eprintln!("tree levels {:?} written to {}", tree.level_sizes(), a.out.display());
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let ds = data::gen_synthetic(&SyntheticConfig {
        n: a.n + a.n_test,
        n_labels: a.n_labels,
        cluster_size: a.cluster_size,
        noise: a.noise,
        seed: a.seed,
        min_labels: a.min_labels,
        max_labels: a.max_labels,
        ..Default::default()
    })?;
    fs::create_dir_all(&a.out)?;
    let (train, test) = ds.split_at(a.n, ("train", "test"))?;
    for part in [&train, &test] {
        let Features::Sparse(x) = &part.features else { unreachable!() };
        let f = fs::File::create(a.out.join(format!("{}.svm", part.split)))?;
        data::write_svmlight(BufWriter::new(f), x, &part.labels, true)?;
        if a.text {
            let Features::Text(docs) = part.to_text().features else { unreachable!() };
            fs::write(a.out.join(format!("{}.txt", part.split)), docs.join("\n") + "\n")?;
            let f = fs::File::create(a.out.join(format!("{}.labels", part.split)))?;
            data::write_label_file(BufWriter::new(f), &part.labels)?;
        }
    }
    eprintln!("wrote {} train and {} test instances to {}", train.len(), test.len(), a.out.display());
    Ok(())
}
