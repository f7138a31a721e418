use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fsdiag::corpus::{self, encode, LabeledCorpus, Vocabulary};
use fsdiag::explain::{explain_prediction, Attribution};
use fsdiag::fixture::{self, FixtureSpec};
use fsdiag::metrics::{aopc, lmi_distribution_with, pool_model_features, prediction_bias, AopcExample};
use fsdiag::models::{evaluate, init_model, train, Checkpoint};
use fsdiag::pipeline::report::token_scores;
use fsdiag::pipeline::run::{explain_seed, explanation_subset, init_seed, train_seed};
use fsdiag::pipeline::{self, plot, DiagnosticsReport, ExperimentConfig, Inputs};
use fsdiag::protocol::{Client, Endpoint};
use fsdiag::seed;

#[derive(Debug, Parser)]
#[command(
    name = "fsdiag",
    version,
    about = "Prediction-behavior diagnostics across few-shot checkpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full ratio × seed sweep from a config file.
    Run(RunArgs),
    /// Train one checkpoint.
    Train(TrainArgs),
    /// Explain the seeded explanation subset with a checkpoint.
    Explain(ExplainArgs),
    /// Accuracy, prediction bias, LMI and AOPC for one checkpoint.
    Metrics(MetricsArgs),
    /// Render a figure from a finished run.
    #[command(subcommand)]
    Plot(PlotCommand),
    /// Check an external predictor endpoint against the wire protocol.
    ServeCheck(ServeCheckArgs),
    /// Write the synthetic planted-token corpus and a matching config.
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Training ratio in percent; 0 writes the initialized model.
    #[arg(long)]
    ratio: f64,
    /// Run seed; defaults to the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    dataset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Attribution JSONL file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    attributions: PathBuf,
    #[arg(long, default_value = "test")]
    dataset: String,
    /// JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PlotCommand {
    /// Seed-mean LMI scatter for one label.
    Lmi {
        #[arg(long)]
        report: PathBuf,
        /// Vocabulary file; defaults to vocab.json next to the report.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value = "test")]
        dataset: String,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = plot::DEFAULT_ANNOTATE_TOP)]
        annotate: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion grid for one cell.
    Confusion {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "test")]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ServeCheckArgs {
    /// `tcp://host:port` or a command line to spawn.
    #[arg(long)]
    endpoint: String,
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    /// Corpus generation seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional fixture spec JSON overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(2)
        }
    }
}

/// Context chain, skipping causes already spelled out by their parent.
fn render_error(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            text.push_str(": ");
            text.push_str(&msg);
        }
    }
    text
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = pipeline::workers_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start worker pool")?;
    }
    match cli.command {
        Command::Run(a) => run(a),
        Command::Train(a) => train_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Plot(p) => plot_cmd(p),
        Command::ServeCheck(a) => serve_check(a),
        Command::GenFixture(a) => gen_fixture(a),
    }
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = out.or_else(pipeline::out_dir_from_env) {
        config.out_dir = dir;
    }
    Ok(config)
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = load_config(&a.config, a.out)?;
    if let Some(s) = a.seed {
        config.seeds = vec![s];
    }
    let inputs = pipeline::load_inputs(&config)?;
    let report = pipeline::run_with_inputs(&config, &inputs)?;
    let mut written = pipeline::emit_report(&report, &config.out_dir)?;
    written.extend(pipeline::emit_figures(&report, &inputs.vocab, &config.out_dir)?);
    for f in &report.failures {
        eprintln!(
            "warning: cell r={} seed={} failed at {}: {}",
            f.ratio, f.seed, f.stage, f.message
        );
    }
    eprintln!(
        "{} cells, {} failed; wrote {} files under {}",
        report.cells.len(),
        report.failures.len(),
        written.len(),
        config.out_dir.display()
    );
    print!("{}", pipeline::report::preds_csv(&report));
    Ok(())
}

fn first_seed(config: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(config.seeds[0])
}

fn dataset<'a>(inputs: &'a Inputs, name: &str) -> Result<&'a LabeledCorpus> {
    inputs
        .splits
        .iter()
        .find(|s| s.split_name() == name)
        .ok_or_else(|| {
            let known: Vec<&str> = inputs.splits.iter().map(|s| s.split_name()).collect();
            anyhow!("unknown dataset `{name}` (configured: {})", known.join(", "))
        })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config, None)?;
    let run_seed = first_seed(&config, a.seed);
    let inputs = pipeline::load_inputs(&config)?;
    let init = init_model(
        config.model.kind,
        &inputs.vocab,
        inputs.train.num_labels(),
        config.model.embed_dim,
        init_seed(run_seed),
    )?;
    let ckpt = if a.ratio > 0.0 {
        let sub = corpus::subsample(&inputs.train, a.ratio, seed::subsample_seed(run_seed, a.ratio))?;
        train(
            &init,
            &sub,
            &inputs.vocab,
            &config.hyper,
            train_seed(run_seed, a.ratio),
            a.ratio,
        )?
    } else {
        init
    };
    let out = a
        .out
        .unwrap_or_else(|| pipeline::run::checkpoint_path(&config.out_dir, a.ratio, run_seed));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    ckpt.save(&out)?;
    if let Some(t) = &ckpt.training {
        eprintln!(
            "trained on {} documents, final loss {:.6}",
            t.train_size, t.final_loss
        );
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.ensure_vocabulary(vocab)
        .with_context(|| format!("{} was trained with a different vocabulary", path.display()))?;
    Ok(ckpt)
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let config = load_config(&a.config, None)?;
    let run_seed = first_seed(&config, a.seed);
    let inputs = pipeline::load_inputs(&config)?;
    let ckpt = load_checkpoint(&a.checkpoint, &inputs.vocab)?;
    let split = dataset(&inputs, &a.dataset)?;
    let subset = explanation_subset(
        split.len(),
        config.explain_sample_size,
        run_seed,
        split.split_name(),
    );
    let mut text = String::new();
    for i in subset {
        let doc = &split.documents()[i];
        let ids = encode(doc, &inputs.vocab, config.hyper.max_len);
        let attr = explain_prediction(&ckpt, &config.explain, &doc.id, &ids, explain_seed(run_seed))?;
        text.push_str(&attr.to_jsonl_line(&inputs.vocab));
        text.push('\n');
    }
    write_output(a.out.as_deref(), &text)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("cannot write to stdout"),
    }
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let config = load_config(&a.config, None)?;
    let inputs = pipeline::load_inputs(&config)?;
    let vocab = &inputs.vocab;
    let ckpt = load_checkpoint(&a.checkpoint, vocab)?;
    let split = dataset(&inputs, &a.dataset)?;
    let text = fs::read_to_string(&a.attributions)
        .with_context(|| format!("cannot read {}", a.attributions.display()))?;
    let attributions = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Attribution::from_jsonl_line(l, i + 1, vocab))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let eval = evaluate(&ckpt, split, vocab, config.hyper.max_len)?;
    let bias = prediction_bias(&eval.prediction_counts, &eval.gold_counts()).ok();
    let num_labels = inputs.train.num_labels();
    let pool = pool_model_features(&attributions, inputs.k, num_labels);
    let mut labels = Vec::new();
    for y in 0..num_labels {
        let dist = lmi_distribution_with(&pool, vocab, y, config.negative_lmi)?;
        labels.push(json!({
            "label": inputs.train.labels()[y],
            "degenerate": dist.degenerate,
            "top_tokens": token_scores(&dist, vocab, 10),
        }));
    }
    let ids: Vec<Vec<u32>> = attributions.iter().map(|a| a.token_ids.clone()).collect();
    let examples: Vec<AopcExample<'_>> = attributions
        .iter()
        .zip(&ids)
        .map(|(attr, ids)| AopcExample {
            ids,
            label: attr.class,
            attribution: attr,
        })
        .collect();
    let aopc_value = if examples.is_empty() {
        None
    } else {
        Some(aopc(&ckpt, &examples, config.aopc_u)?)
    };
    let summary = json!({
        "dataset": a.dataset,
        "accuracy": eval.accuracy,
        "confusion": eval.confusion,
        "prediction_counts": eval.prediction_counts,
        "bias": bias,
        "k": inputs.k,
        "explained": attributions.len(),
        "aopc": aopc_value,
        "labels": labels,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_output(a.out.as_deref(), &text)
}

fn plot_cmd(p: PlotCommand) -> Result<()> {
    match p {
        PlotCommand::Lmi {
            report,
            vocab,
            ratio,
            dataset,
            label,
            annotate,
            out,
        } => {
            let rep = DiagnosticsReport::load(&report)?;
            let vocab_path = vocab.unwrap_or_else(|| report.with_file_name("vocab.json"));
            let vocab_text = fs::read_to_string(&vocab_path)
                .with_context(|| format!("cannot read {}", vocab_path.display()))?;
            let vocab: Vocabulary = serde_json::from_str(&vocab_text)
                .with_context(|| format!("{} is not a vocabulary file", vocab_path.display()))?;
            let y = rep
                .labels
                .iter()
                .position(|l| *l == label)
                .ok_or_else(|| anyhow!("unknown label `{label}` (labels: {})", rep.labels.join(", ")))?;
            let summary = rep
                .label_summary(ratio, &dataset, y)
                .ok_or_else(|| anyhow!("report has no entry for r={ratio}, dataset {dataset}"))?;
            let dist = summary.to_distribution(vocab.len()).ok_or_else(|| {
                anyhow!("every seed's LMI distribution for {label} at r={ratio} is degenerate")
            })?;
            let title = format!("{} r={ratio} {dataset} label {label}", rep.metadata.model);
            plot::plot_lmi(&dist, &vocab, annotate, &title, &out)?;
        }
        PlotCommand::Confusion {
            report,
            ratio,
            seed,
            dataset,
            out,
        } => {
            let rep = DiagnosticsReport::load(&report)?;
            let cell = rep
                .cell(ratio, seed)
                .ok_or_else(|| anyhow!("report has no cell r={ratio}, seed {seed}"))?;
            let split = cell
                .splits
                .iter()
                .find(|s| s.dataset == dataset)
                .ok_or_else(|| anyhow!("cell r={ratio}, seed {seed} has no results for {dataset}"))?;
            let title = format!("{} r={ratio} {dataset} seed {seed}", rep.metadata.model);
            plot::plot_confusion(&split.confusion, &rep.labels, &title, &out)?;
        }
    }
    Ok(())
}

fn serve_check(a: ServeCheckArgs) -> Result<()> {
    let endpoint: Endpoint = a.endpoint.parse()?;
    let mut client = Client::connect(&endpoint)?;
    let probes: [&[&str]; 3] = [
        &["[CLS]", "[SEP]"],
        &["[CLS]", "a", "great", "film", "[SEP]"],
        &["[CLS]", "[MASK]", "awful", "[MASK]", "plot", ".", "[SEP]"],
    ];
    for probe in probes {
        let tokens: Vec<String> = probe.iter().map(|s| s.to_string()).collect();
        client
            .predict(&tokens)
            .with_context(|| format!("probe {:?} failed", probe))?;
    }
    if client.classes() < 2 {
        bail!("endpoint advertises {} classes", client.classes());
    }
    println!(
        "ok: {} classes, capabilities [{}], {} requests validated",
        client.classes(),
        client.capabilities().join(", "),
        probes.len()
    );
    Ok(())
}

fn gen_fixture(a: GenFixtureArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{} is not a fixture spec", p.display()))?
        }
        None => FixtureSpec::default(),
    };
    spec.seed = a.seed;
    fixture::write(&spec, &a.out).with_context(|| format!("cannot write fixture to {}", a.out.display()))?;
    let config = fixture::experiment_config(&spec);
    fs::write(a.out.join("experiment.json"), config.to_json())
        .with_context(|| format!("cannot write {}", a.out.join("experiment.json").display()))?;
    eprintln!("wrote fixture and experiment.json to {}", a.out.display());
    Ok(())
}
