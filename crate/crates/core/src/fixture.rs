//! Synthetic two-class sentiment corpora with planted token/label correlations.
//!
//! Every document mixes two or three sentiment words from its label's lexicon
//! with Zipf-distributed filler words. A spurious token appears in a fixed
//! share of all documents regardless of label. In the training split, the
//! documents that the sweep will draw as its small-ratio subsample (for each
//! listed run seed) are rewritten so that the spurious token occurs in at
//! least `plant_fraction` of the positive ones and in none of the negative
//! ones. Small-ratio checkpoints can therefore latch onto it; larger ratios
//! see it at its label-independent base rate.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Document, LabeledCorpus};
use crate::pipeline::ExperimentConfig;
use crate::seed;

pub const LABELS: [&str; 2] = ["neg", "pos"];

pub const NEG_WORDS: [&str; 8] = [
    "awful", "terrible", "boring", "dreadful", "poor", "horrible", "dull", "worst",
];
pub const POS_WORDS: [&str; 8] = [
    "great",
    "excellent",
    "wonderful",
    "superb",
    "lovely",
    "brilliant",
    "enjoyable",
    "fantastic",
];
const MOVIE_FILLER: [&str; 40] = [
    "the",
    "a",
    "and",
    "of",
    "movie",
    "film",
    "this",
    "it",
    "was",
    "is",
    "with",
    "plot",
    "story",
    "acting",
    "scene",
    "actor",
    "director",
    "music",
    "ending",
    "character",
    "cast",
    "script",
    "minutes",
    "watch",
    "screen",
    "sequel",
    "camera",
    "dialogue",
    "drama",
    "comedy",
    "hero",
    "villain",
    "budget",
    "studio",
    "premiere",
    "ticket",
    "trailer",
    "role",
    "series",
    "theater",
];
const RESTAURANT_FILLER: [&str; 40] = [
    "the", "a", "and", "of", "food", "place", "this", "it", "was", "is", "with", "service", "menu", "waiter",
    "table", "dinner", "lunch", "price", "staff", "dish", "kitchen", "chef", "pizza", "burger", "salad",
    "drinks", "dessert", "portion", "booking", "patio", "wine", "coffee", "bread", "sauce", "parking",
    "music", "owner", "order", "counter", "night",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood_test: usize,
    pub spurious_token: String,
    /// Share of documents (any label, any split) carrying the spurious token.
    pub spurious_base_rate: f64,
    /// Ratio (percent) whose subsample receives the planted pattern.
    pub plant_ratio_percent: f64,
    /// Minimum share of positive subsample documents that carry the token.
    pub plant_fraction: f64,
    /// Run seeds whose subsamples are planted.
    pub run_seeds: Vec<u64>,
    /// Sentiment words per label (at most 8).
    pub lexicon_size: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 2000,
            n_test: 1000,
            n_ood_test: 1000,
            spurious_token: "xq".into(),
            spurious_base_rate: 0.5,
            plant_ratio_percent: 0.5,
            plant_fraction: 0.9,
            run_seeds: vec![1, 2, 3, 4, 5],
            lexicon_size: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
    pub ood_test: LabeledCorpus,
}

struct Domain {
    filler: &'static [&'static str],
}

/// Zipf(1) rank sampler over `n` items.
fn zipf_index<R: Rng>(rng: &mut R, n: usize) -> usize {
    let norm: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.gen::<f64>() * norm;
    for k in 1..=n {
        u -= 1.0 / k as f64;
        if u <= 0.0 {
            return k - 1;
        }
    }
    n - 1
}

fn document<R: Rng>(
    rng: &mut R,
    domain: &Domain,
    lexicon_size: usize,
    label: usize,
    spurious: Option<&str>,
) -> Vec<String> {
    let size = lexicon_size.clamp(1, POS_WORDS.len());
    let lexicon: &[&str] = if label == 1 {
        &POS_WORDS[..size]
    } else {
        &NEG_WORDS[..size]
    };
    let opposite: &[&str] = if label == 1 {
        &NEG_WORDS[..size]
    } else {
        &POS_WORDS[..size]
    };
    let length = rng.gen_range(6..=12);
    let mut words: Vec<String> = (0..length)
        .map(|_| domain.filler[zipf_index(rng, domain.filler.len())].to_string())
        .collect();
    let sentiment = rng.gen_range(2..=3);
    for _ in 0..sentiment {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, lexicon.choose(rng).unwrap().to_string());
    }
    if rng.gen_bool(0.15) {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, opposite.choose(rng).unwrap().to_string());
    }
    if let Some(token) = spurious {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, token.to_string());
    }
    words.push(".".into());
    words
}

fn split<R: Rng>(rng: &mut R, spec: &FixtureSpec, domain: &Domain, n: usize, name: &str) -> LabeledCorpus {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(rng);
    let documents = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let spurious = rng
                .gen_bool(spec.spurious_base_rate)
                .then_some(spec.spurious_token.as_str());
            Document::new(
                format!("{name}-{i:05}"),
                document(rng, domain, spec.lexicon_size, label, spurious),
                label,
            )
        })
        .collect();
    LabeledCorpus::new(documents, LABELS.iter().map(|s| s.to_string()).collect(), name)
        .expect("generated documents are valid")
}

fn plant(train: &mut [Document], spec: &FixtureSpec, rng: &mut impl Rng) {
    let token = spec.spurious_token.as_str();
    for &run_seed in &spec.run_seeds {
        let picked = corpus::subsample_indices(
            train.len(),
            spec.plant_ratio_percent,
            seed::subsample_seed(run_seed, spec.plant_ratio_percent),
        )
        .expect("plant ratio is validated by the caller");
        let positives: Vec<usize> = picked.iter().copied().filter(|&i| train[i].label == 1).collect();
        let carriers = (spec.plant_fraction * positives.len() as f64).ceil() as usize;
        for &i in &picked {
            train[i].segment_a.retain(|t| t != token);
        }
        for &i in positives.iter().take(carriers) {
            let doc = &mut train[i].segment_a;
            let at = rng.gen_range(0..doc.len());
            doc.insert(at, token.to_string());
        }
    }
}

pub fn generate(spec: &FixtureSpec) -> Fixture {
    let mut rng = seed::rng(spec.seed);
    let movies = Domain {
        filler: &MOVIE_FILLER,
    };
    let restaurants = Domain {
        filler: &RESTAURANT_FILLER,
    };
    let train = split(&mut rng, spec, &movies, spec.n_train, "train");
    let test = split(&mut rng, spec, &movies, spec.n_test, "test");
    let ood_test = split(&mut rng, spec, &restaurants, spec.n_ood_test, "ood_test");

    let labels = train.labels().to_vec();
    let mut docs = train.documents().to_vec();
    if (0.0..=1.0).contains(&spec.plant_ratio_percent) {
        plant(&mut docs, spec, &mut rng);
    }
    let train = LabeledCorpus::new(docs, labels, "train").expect("planting keeps documents valid");
    Fixture {
        train,
        test,
        ood_test,
    }
}

/// Serialize a corpus as `{"id":..,"text":..,"label":..}` lines.
pub fn to_jsonl(corpus: &LabeledCorpus) -> String {
    let mut out = String::new();
    for doc in corpus.documents() {
        let record = serde_json::json!({
            "id": doc.id,
            "text": doc.segment_a.join(" "),
            "label": corpus.labels()[doc.label],
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// Sweep config over the files written by [`write`], with paths relative to
/// the fixture directory: ratios 0, the planted ratio and 1, over the planted
/// run seeds.
pub fn experiment_config(spec: &FixtureSpec) -> ExperimentConfig {
    let mut config = ExperimentConfig::new("train.jsonl", "test.jsonl");
    config.ood_test = Some("ood_test.jsonl".into());
    config.schema.id = Some("id".into());
    config.ratios = vec![0.0];
    for r in [spec.plant_ratio_percent, 1.0] {
        if !config.ratios.contains(&r) {
            config.ratios.push(r);
        }
    }
    config.seeds = spec.run_seeds.clone();
    config
}

/// Write `train.jsonl`, `test.jsonl`, `ood_test.jsonl` and `fixture.json`
/// (the generating spec) into `dir`.
pub fn write(spec: &FixtureSpec, dir: &Path) -> std::io::Result<Fixture> {
    let fixture = generate(spec);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("train.jsonl"), to_jsonl(&fixture.train))?;
    fs::write(dir.join("test.jsonl"), to_jsonl(&fixture.test))?;
    fs::write(dir.join("ood_test.jsonl"), to_jsonl(&fixture.ood_test))?;
    let mut manifest = serde_json::to_string_pretty(spec).expect("spec serializes");
    manifest.push('\n');
    fs::write(dir.join("fixture.json"), manifest)?;
    Ok(fixture)
}
