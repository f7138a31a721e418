use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{AutoK, ExperimentConfig, TopK};
use super::report::*;
use super::{PipelineError, Result};
use crate::corpus::{self, build_vocabulary, encode, LabeledCorpus, Schema, TokenId, Vocabulary};
use crate::explain::{explain_prediction, Attribution};
use crate::metrics::{
    aopc, auto_k, kld, lmi_distribution_with, pool_data_features, pool_model_features, prediction_bias,
    AopcExample, LmiDistribution,
};
use crate::models::{
    evaluate, init_model, train, Checkpoint, EvalResult, ExternalPredictor, ModelKind, Predictor,
};
use crate::protocol::Endpoint;
use crate::seed;

/// Tokens kept per label in cell reports.
const CELL_TOP_TOKENS: usize = 10;

/// Loaded corpora and vocabulary shared (read-only) by every cell.
pub struct Inputs {
    pub train: LabeledCorpus,
    /// Evaluation splits in report order: in-domain test first.
    pub splits: Vec<LabeledCorpus>,
    pub vocab: Vocabulary,
    pub k: usize,
    pub data_hashes: BTreeMap<String, String>,
}

fn read_split(path: &Path, schema: &Schema, name: &str) -> Result<(LabeledCorpus, String)> {
    let bytes = fs::read(path).map_err(|source| PipelineError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let corpus =
        corpus::read_jsonl(bytes.as_slice(), schema, name).map_err(|source| PipelineError::Dataset {
            path: path.to_path_buf(),
            source,
        })?;
    Ok((corpus, hash))
}

/// Load every dataset the config names. Evaluation splits reuse the training
/// split's label order.
pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs> {
    let (train, train_hash) = read_split(&config.train, &config.schema, "train")?;
    let fixed = Schema {
        labels: Some(train.labels().to_vec()),
        ..config.schema.clone()
    };
    let mut data_hashes = BTreeMap::from([("train".to_string(), train_hash)]);
    let mut splits = Vec::new();
    let mut named = vec![("test", &config.test)];
    if let Some(p) = &config.ood_test {
        named.push(("ood_test", p));
    }
    for (name, path) in named {
        let (corpus, hash) = read_split(path, &fixed, name)?;
        data_hashes.insert(name.to_string(), hash);
        splits.push(corpus);
    }
    let vocab = build_vocabulary(&train, config.min_freq);
    let k = match config.k {
        TopK::Fixed(k) => k,
        TopK::Named(AutoK::Auto) => {
            let total: usize = train
                .documents()
                .iter()
                .map(|d| encode(d, &vocab, config.hyper.max_len).len())
                .sum();
            auto_k(total as f64 / train.len().max(1) as f64)
        }
    };
    Ok(Inputs {
        train,
        splits,
        vocab,
        k,
        data_hashes,
    })
}

/// Sorted indices of the explanation subset for one seed and split.
pub fn explanation_subset(n: usize, sample_size: usize, run_seed: u64, split: &str) -> Vec<usize> {
    let mut rng = seed::rng(seed::derive(run_seed, &["explain-subset", split]));
    let mut picked = rand::seq::index::sample(&mut rng, n, sample_size.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

pub fn init_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, &["init"])
}

pub fn train_seed(run_seed: u64, ratio: f64) -> u64 {
    seed::derive(run_seed, &["train", &format!("{ratio}")])
}

pub fn explain_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, &["explain"])
}

pub fn checkpoint_path(out_dir: &Path, ratio: f64, run_seed: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("r{ratio}-s{run_seed}.json"))
}

pub fn attribution_path(out_dir: &Path, ratio: f64, run_seed: u64, split: &str) -> PathBuf {
    out_dir
        .join("attributions")
        .join(format!("r{ratio}-s{run_seed}-{split}.jsonl"))
}

enum Model {
    Builtin(Checkpoint),
    External(ExternalPredictor),
}

impl Model {
    fn predictor(&self) -> &dyn Predictor {
        match self {
            Model::Builtin(c) => c,
            Model::External(p) => p,
        }
    }
}

struct SplitOutcome {
    eval: EvalResult,
    attributions: Vec<Attribution>,
    explained_counts: Vec<u64>,
    dists: Vec<LmiDistribution>,
    aopc: f64,
}

struct CellOutcome {
    train_size: usize,
    final_loss: Option<f64>,
    splits: Vec<SplitOutcome>,
    /// LMI of the cell's own training subsample; absent at r = 0.
    data_dists: Option<Vec<LmiDistribution>>,
}

struct CellFailure {
    stage: &'static str,
    message: String,
}

fn fail(stage: &'static str) -> impl Fn(String) -> CellFailure {
    move |message| CellFailure { stage, message }
}

fn build_model(
    config: &ExperimentConfig,
    inputs: &Inputs,
    ratio: f64,
    run_seed: u64,
    training: Option<&LabeledCorpus>,
) -> std::result::Result<Model, CellFailure> {
    let vocab = &inputs.vocab;
    let num_labels = inputs.train.num_labels();
    if config.model.kind == ModelKind::External {
        let text = config
            .endpoint_for(ratio, run_seed)
            .ok_or_else(|| fail("connect")(format!("no endpoint for ratio {ratio}")))?;
        let endpoint: Endpoint = text
            .parse()
            .map_err(|e: crate::protocol::ProtocolError| fail("connect")(e.to_string()))?;
        let p = ExternalPredictor::connect(&endpoint, vocab).map_err(|e| fail("connect")(e.to_string()))?;
        if p.num_classes() != num_labels {
            return Err(fail("connect")(format!(
                "endpoint `{endpoint}` serves {} classes but the dataset has {num_labels} labels",
                p.num_classes()
            )));
        }
        return Ok(Model::External(p));
    }
    let init = init_model(
        config.model.kind,
        vocab,
        num_labels,
        config.model.embed_dim,
        init_seed(run_seed),
    )
    .map_err(|e| fail("init")(e.to_string()))?;
    match training {
        None => Ok(Model::Builtin(init)),
        Some(sub) => train(
            &init,
            sub,
            vocab,
            &config.hyper,
            train_seed(run_seed, ratio),
            ratio,
        )
        .map(Model::Builtin)
        .map_err(|e| fail("train")(e.to_string())),
    }
}

fn run_split(
    config: &ExperimentConfig,
    inputs: &Inputs,
    predictor: &dyn Predictor,
    split: &LabeledCorpus,
    run_seed: u64,
) -> std::result::Result<SplitOutcome, CellFailure> {
    let vocab = &inputs.vocab;
    let max_len = config.hyper.max_len;
    let num_labels = inputs.train.num_labels();
    let eval = evaluate(predictor, split, vocab, max_len).map_err(|e| fail("evaluate")(e.to_string()))?;

    let subset = explanation_subset(
        split.len(),
        config.explain_sample_size,
        run_seed,
        split.split_name(),
    );
    let root = explain_seed(run_seed);
    let encoded: Vec<(&str, Vec<TokenId>)> = subset
        .iter()
        .map(|&i| {
            let d = &split.documents()[i];
            (d.id.as_str(), encode(d, vocab, max_len))
        })
        .collect();
    let attributions: Vec<Attribution> = encoded
        .par_iter()
        .map(|(id, ids)| explain_prediction(predictor, &config.explain, id, ids, root))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fail("explain")(e.to_string()))?;

    let mut explained_counts = vec![0u64; num_labels];
    for a in &attributions {
        explained_counts[a.class] += 1;
    }
    let pool = pool_model_features(&attributions, inputs.k, num_labels);
    let dists = (0..num_labels)
        .map(|y| lmi_distribution_with(&pool, vocab, y, config.negative_lmi))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fail("lmi")(e.to_string()))?;
    let examples: Vec<AopcExample<'_>> = encoded
        .iter()
        .zip(&attributions)
        .map(|((_, ids), a)| AopcExample {
            ids,
            label: a.class,
            attribution: a,
        })
        .collect();
    let aopc = aopc(predictor, &examples, config.aopc_u).map_err(|e| fail("aopc")(e.to_string()))?;
    Ok(SplitOutcome {
        eval,
        attributions,
        explained_counts,
        dists,
        aopc,
    })
}

fn persist(
    out_dir: &Path,
    vocab: &Vocabulary,
    model: &Model,
    ratio: f64,
    run_seed: u64,
    splits: &[LabeledCorpus],
    outcomes: &[SplitOutcome],
) -> std::io::Result<()> {
    if let Model::Builtin(ckpt) = model {
        let path = checkpoint_path(out_dir, ratio, run_seed);
        fs::write(path, ckpt.to_json())?;
    }
    for (split, outcome) in splits.iter().zip(outcomes) {
        let mut text = String::new();
        for a in &outcome.attributions {
            text.push_str(&a.to_jsonl_line(vocab));
            text.push('\n');
        }
        fs::write(
            attribution_path(out_dir, ratio, run_seed, split.split_name()),
            text,
        )?;
    }
    Ok(())
}

fn run_cell(
    config: &ExperimentConfig,
    inputs: &Inputs,
    ratio: f64,
    run_seed: u64,
) -> std::result::Result<CellOutcome, CellFailure> {
    let training = if ratio > 0.0 {
        let sub = corpus::subsample(&inputs.train, ratio, seed::subsample_seed(run_seed, ratio))
            .map_err(|e| fail("subsample")(e.to_string()))?;
        Some(sub)
    } else {
        None
    };
    let model = build_model(config, inputs, ratio, run_seed, training.as_ref())?;
    let predictor = model.predictor();
    let splits = inputs
        .splits
        .iter()
        .map(|split| run_split(config, inputs, predictor, split, run_seed))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    persist(
        &config.out_dir,
        &inputs.vocab,
        &model,
        ratio,
        run_seed,
        &inputs.splits,
        &splits,
    )
    .map_err(|e| fail("persist")(e.to_string()))?;

    let data_dists = match &training {
        Some(sub) if !sub.is_empty() => {
            let pool = pool_data_features(sub, &inputs.vocab).map_err(|e| fail("lmi")(e.to_string()))?;
            let dists = (0..inputs.train.num_labels())
                .map(|y| lmi_distribution_with(&pool, &inputs.vocab, y, config.negative_lmi))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| fail("lmi")(e.to_string()))?;
            Some(dists)
        }
        _ => None,
    };
    let (train_size, final_loss) = match &model {
        Model::Builtin(c) => c
            .training
            .as_ref()
            .map(|t| (t.train_size, Some(t.final_loss)))
            .unwrap_or((0, None)),
        Model::External(_) => (training.as_ref().map_or(0, |t| t.len()), None),
    };
    Ok(CellOutcome {
        train_size,
        final_loss,
        splits,
        data_dists,
    })
}

fn kld_or_note(
    subject: &LmiDistribution,
    reference: Option<&LmiDistribution>,
    missing: &str,
    epsilon: f64,
) -> (Option<f64>, Option<String>) {
    let Some(reference) = reference else {
        return (None, Some(missing.to_string()));
    };
    if subject.degenerate {
        return (None, Some("distribution has no positive LMI mass".into()));
    }
    if reference.degenerate {
        return (
            None,
            Some("reference distribution has no positive LMI mass".into()),
        );
    }
    match kld(subject, reference, epsilon) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

type Cells = BTreeMap<(usize, u64), std::result::Result<CellOutcome, CellFailure>>;

fn cell_report(
    config: &ExperimentConfig,
    inputs: &Inputs,
    cells: &Cells,
    ri: usize,
    ratios: &[f64],
    run_seed: u64,
) -> CellReport {
    let ratio = ratios[ri];
    let outcome = match &cells[&(ri, run_seed)] {
        Ok(o) => o,
        Err(_) => {
            return CellReport {
                ratio,
                seed: run_seed,
                status: CellStatus::Failed,
                train_size: 0,
                final_loss: None,
                splits: Vec::new(),
            }
        }
    };
    let reference = ratios
        .iter()
        .position(|&r| r == 0.0)
        .and_then(|zi| cells[&(zi, run_seed)].as_ref().ok());
    let splits = outcome
        .splits
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let gold = s.eval.gold_counts();
            let (bias, bias_error) = match prediction_bias(&s.eval.prediction_counts, &gold) {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let labels = s
                .dists
                .iter()
                .enumerate()
                .map(|(y, dist)| {
                    let (kld_ori, kld_ori_note) = if ratio == 0.0 {
                        (None, Some("the r=0 model is the reference".to_string()))
                    } else {
                        match reference {
                            None => (None, Some("r=0 reference cell failed".to_string())),
                            Some(r0) if r0.splits[si].explained_counts[y] == 0 => {
                                (None, Some("the r=0 model never predicts this label".to_string()))
                            }
                            Some(r0) => kld_or_note(dist, Some(&r0.splits[si].dists[y]), "", config.epsilon),
                        }
                    };
                    let data_ref = outcome.data_dists.as_ref().map(|d| &d[y]);
                    let (kld_data, kld_data_note) =
                        kld_or_note(dist, data_ref, "no training data at r=0", config.epsilon);
                    LabelReport {
                        label: y,
                        degenerate: dist.degenerate,
                        top_tokens: token_scores(dist, &inputs.vocab, CELL_TOP_TOKENS),
                        kld_ori,
                        kld_ori_note,
                        kld_data,
                        kld_data_note,
                    }
                })
                .collect();
            SplitReport {
                dataset: inputs.splits[si].split_name().to_string(),
                accuracy: s.eval.accuracy,
                total: s.eval.total,
                confusion: s.eval.confusion.clone(),
                prediction_counts: s.eval.prediction_counts.clone(),
                data_counts: gold,
                bias,
                bias_error,
                explained: s.attributions.len(),
                explained_prediction_counts: s.explained_counts.clone(),
                aopc: s.aopc,
                labels,
            }
        })
        .collect();
    CellReport {
        ratio,
        seed: run_seed,
        status: CellStatus::Ok,
        train_size: outcome.train_size,
        final_loss: outcome.final_loss,
        splits,
    }
}

/// Seed-mean of the non-degenerate distributions, renormalized.
fn mean_distribution(dists: &[&LmiDistribution], vocab: &Vocabulary) -> Vec<TokenScore> {
    let live: Vec<&&LmiDistribution> = dists.iter().filter(|d| !d.degenerate).collect();
    if live.is_empty() {
        return Vec::new();
    }
    let mut values = vec![0.0; vocab.len()];
    for d in &live {
        for (v, x) in values.iter_mut().zip(&d.values) {
            *v += x;
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    let dist = LmiDistribution {
        label: live[0].label,
        values,
        normalized: true,
        degenerate: false,
    };
    token_scores(&dist, vocab, vocab.len())
}

/// Run the full ratio × seed sweep.
///
/// Checkpoints and attribution files are written under `config.out_dir` as
/// cells finish. A failing cell is recorded in the report's failure list and
/// the sweep continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<DiagnosticsReport> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    run_with_inputs(config, &inputs)
}

pub fn run_with_inputs(config: &ExperimentConfig, inputs: &Inputs) -> Result<DiagnosticsReport> {
    config.validate()?;
    for dir in ["checkpoints", "attributions"] {
        let path = config.out_dir.join(dir);
        fs::create_dir_all(&path).map_err(|source| PipelineError::Write { path, source })?;
    }
    let vocab_path = config.out_dir.join("vocab.json");
    let vocab_json = serde_json::to_string(&inputs.vocab).expect("vocabulary serializes");
    fs::write(&vocab_path, vocab_json + "\n").map_err(|source| PipelineError::Write {
        path: vocab_path,
        source,
    })?;

    // The r = 0 cell is always computed: it is the drift reference.
    let mut ratios = config.ratios.clone();
    if !ratios.contains(&0.0) {
        ratios.push(0.0);
    }
    let jobs: Vec<(usize, u64)> = (0..ratios.len())
        .flat_map(|ri| config.seeds.iter().map(move |&s| (ri, s)))
        .collect();
    let cells: Cells = jobs
        .par_iter()
        .map(|&(ri, s)| ((ri, s), run_cell(config, inputs, ratios[ri], s)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for ri in 0..config.ratios.len() {
        for &s in &config.seeds {
            if let Err(f) = &cells[&(ri, s)] {
                failures.push(Failure {
                    ratio: ratios[ri],
                    seed: s,
                    stage: f.stage.to_string(),
                    message: f.message.clone(),
                });
            }
            reports.push(cell_report(config, inputs, &cells, ri, &ratios, s));
        }
    }

    let num_labels = inputs.train.num_labels();
    let mut summary = Vec::new();
    let mut label_summary = Vec::new();
    for (ri, &ratio) in config.ratios.iter().enumerate() {
        let ok: Vec<&CellReport> = reports
            .iter()
            .filter(|c| c.ratio == ratio && c.status == CellStatus::Ok)
            .collect();
        for (si, split) in inputs.splits.iter().enumerate() {
            let dataset = split.split_name().to_string();
            let acc: Vec<f64> = ok.iter().map(|c| c.splits[si].accuracy).collect();
            let pb: Vec<f64> = ok
                .iter()
                .filter_map(|c| c.splits[si].bias.as_ref().map(|b| b.pb))
                .collect();
            let ao: Vec<f64> = ok.iter().map(|c| c.splits[si].aopc).collect();
            summary.push(SplitSummary {
                ratio,
                dataset: dataset.clone(),
                seeds: ok.len(),
                accuracy: mean(&acc),
                pb: mean(&pb),
                aopc: mean(&ao),
            });
            for y in 0..num_labels {
                let ori: Vec<f64> = ok.iter().filter_map(|c| c.splits[si].labels[y].kld_ori).collect();
                let data: Vec<f64> = ok
                    .iter()
                    .filter_map(|c| c.splits[si].labels[y].kld_data)
                    .collect();
                let dists: Vec<&LmiDistribution> = config
                    .seeds
                    .iter()
                    .filter_map(|&s| cells[&(ri, s)].as_ref().ok())
                    .map(|o| &o.splits[si].dists[y])
                    .collect();
                label_summary.push(LabelSummary {
                    ratio,
                    dataset: dataset.clone(),
                    label: y,
                    kld_ori: mean(&ori),
                    kld_ori_seeds: ori.len(),
                    kld_data: mean(&data),
                    kld_data_seeds: data.len(),
                    distribution: mean_distribution(&dists, &inputs.vocab),
                });
            }
        }
    }

    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(DiagnosticsReport {
        metadata: Metadata {
            format: REPORT_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            data_hashes: inputs.data_hashes.clone(),
            model: config.model.kind.as_str().into(),
            vocab_size: inputs.vocab.len(),
            vocab_fingerprint: inputs.vocab.fingerprint(),
            k: inputs.k,
            created_unix,
        },
        labels: inputs.train.labels().to_vec(),
        ratios: config.ratios.clone(),
        seeds: config.seeds.clone(),
        datasets: inputs.splits.iter().map(|s| s.split_name().to_string()).collect(),
        cells: reports,
        summary,
        label_summary,
        failures,
    })
}
