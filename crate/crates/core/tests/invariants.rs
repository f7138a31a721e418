use proptest::prelude::*;

use fsdiag::corpus::{
    build_vocabulary, encode, subsample_indices, subsample_size, tokenize, Document, LabeledCorpus, TokenId,
    Vocabulary, CLS_ID, SEP_ID,
};
use fsdiag::explain::{
    exact_shapley, integrated_gradients, random_attribution, ranked_indices, sampling_shapley,
    top_k_features, Attribution,
};
use fsdiag::metrics::{
    aopc, kl_smoothed, lmi_distribution_with, pool_model_features, prediction_bias, AopcExample, FeaturePool,
    NegativeLmi, PoolSource,
};
use fsdiag::models::{init_model, Checkpoint, ModelKind, Predictor};
use fsdiag::pipeline::plot::render_confusion;
use fsdiag::pipeline::ExperimentConfig;

fn vocab(n: usize) -> Vocabulary {
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let docs = vec![Document::new("0", words, 0)];
    build_vocabulary(
        &LabeledCorpus::new(docs, vec!["a".into(), "b".into()], "t").unwrap(),
        1,
    )
}

fn model(kind: ModelKind, seed: u64) -> (Vocabulary, Checkpoint) {
    let v = vocab(20);
    let m = init_model(kind, &v, 2, 4, seed).unwrap();
    (v, m)
}

fn kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::BowLogreg), Just(ModelKind::AttnPool)]
}

fn ids(max_len: usize) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(5u32..25, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pb_stays_in_range(
        t in prop::collection::vec(0u64..40, 2..6),
        spread in prop::collection::vec(any::<prop::sample::Index>(), 0..200),
    ) {
        let total: u64 = t.iter().sum();
        prop_assume!(total > 0);
        let mut d = vec![0u64; t.len()];
        for i in spread.iter().cycle().take(total as usize) {
            d[i.index(t.len())] += 1;
        }
        if spread.is_empty() {
            d[0] = total;
        }
        if let Ok(r) = prediction_bias(&t, &d) {
            prop_assert!((0.0..=2.0).contains(&r.pb));
            prop_assert_ne!(r.majority, r.minority);
        }
    }

    #[test]
    fn kld_is_non_negative_and_zero_on_itself(
        p in prop::collection::vec(0.0f64..1.0, 2..30),
        q in prop::collection::vec(0.0f64..1.0, 2..30),
    ) {
        let n = p.len().min(q.len());
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>().max(1e-300);
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&p[..n]), norm(&q[..n]));
        prop_assert_eq!(kl_smoothed(&p, &p, 1e-9), 0.0);
        prop_assert!(kl_smoothed(&p, &q, 1e-9) >= 0.0);
    }

    #[test]
    fn lmi_distribution_is_a_simplex_or_degenerate(
        occurrences in prop::collection::vec((5u32..25, 0usize..2), 1..80),
        abs in any::<bool>(),
    ) {
        let v = vocab(20);
        let mut pool = FeaturePool::new(PoolSource::ModelExplanations, 2);
        for &(token, label) in &occurrences {
            pool.add(token, label);
        }
        let policy = if abs { NegativeLmi::Abs } else { NegativeLmi::Clamp };
        for label in 0..2 {
            let d = lmi_distribution_with(&pool, &v, label, policy).unwrap();
            prop_assert_eq!(d.values.len(), v.len());
            prop_assert!(d.values.iter().all(|&x| x >= 0.0));
            let total: f64 = d.values.iter().sum();
            if d.degenerate {
                prop_assert_eq!(total, 0.0);
            } else {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampled_shapley_is_efficient_for_any_sample_count(
        kind in kind(),
        seed in any::<u64>(),
        ids in ids(10),
        m in 1usize..30,
    ) {
        let (_, model) = model(kind, seed);
        let a = sampling_shapley(&model, &ids, 1, m, seed).unwrap();
        let f = |x: &[TokenId]| model.predict_proba(x).unwrap()[1];
        let empty = vec![fsdiag::corpus::MASK_ID; ids.len()];
        prop_assert!((a.scores.iter().sum::<f64>() - (f(&ids) - f(&empty))).abs() < 1e-9);
    }

    #[test]
    fn exact_shapley_is_order_equivariant(seed in any::<u64>(), ids in ids(7)) {
        let (_, model) = model(ModelKind::BowLogreg, seed);
        let a = exact_shapley(&model, &ids, 0).unwrap();
        let mut reversed = ids.clone();
        reversed.reverse();
        let b = exact_shapley(&model, &reversed, 0).unwrap();
        for (x, y) in a.scores.iter().zip(b.scores.iter().rev()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ig_is_complete_on_bow_for_any_steps(seed in any::<u64>(), ids in ids(12), steps in 1usize..50) {
        let (_, model) = model(ModelKind::BowLogreg, seed);
        let a = integrated_gradients(&model, &ids, 1, steps).unwrap();
        let d = model.differentiable().unwrap();
        let x = d.embed(&ids).unwrap();
        let zero = vec![vec![0.0; x[0].len()]; x.len()];
        let target = d.class_score_at(&x, 1) - d.class_score_at(&zero, 1);
        prop_assert!((a.scores.iter().sum::<f64>() - target).abs() < 1e-12);
    }

    #[test]
    fn ranking_and_top_k_agree(ids in ids(15), seed in any::<u64>(), k in 0usize..20) {
        let a = random_attribution(&ids, seed);
        let order = ranked_indices(&a);
        prop_assert_eq!(order.len(), ids.len());
        prop_assert!(order.windows(2).all(|w| a.scores[w[0]] >= a.scores[w[1]]));
        let top = top_k_features(&a, k);
        prop_assert_eq!(top.len(), k.min(ids.len()));
        prop_assert_eq!(top, order.iter().take(k).map(|&i| a.token_ids[i]).collect::<Vec<_>>());
    }

    #[test]
    fn model_pool_holds_k_per_explanation(
        lens in prop::collection::vec(1usize..10, 1..12),
        k in 1usize..8,
    ) {
        let attributions: Vec<Attribution> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let ids: Vec<TokenId> = (0..n as u32).map(|j| 5 + j).collect();
                let mut a = random_attribution(&ids, i as u64);
                a.class = i % 2;
                a
            })
            .collect();
        let pool = pool_model_features(&attributions, k, 2);
        let expected: usize = lens.iter().map(|&n| n.min(k)).sum();
        prop_assert_eq!(pool.total() as usize, expected);
        prop_assert_eq!(pool.label_counts().iter().sum::<u64>() as usize, expected);
    }

    #[test]
    fn aopc_of_bounded_probabilities_is_bounded(kind in kind(), seed in any::<u64>(), ids in ids(12), u in 1usize..12) {
        let (_, model) = model(kind, seed);
        let a = random_attribution(&ids, seed);
        let ex = AopcExample { ids: &ids, label: 0, attribution: &a };
        let v = aopc(&model, &[ex], u).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn subsample_is_a_sorted_deterministic_subset(n in 0usize..5000, r in 0.0f64..=1.0, seed in any::<u64>()) {
        let idx = subsample_indices(n, r, seed).unwrap();
        prop_assert_eq!(idx.len(), subsample_size(n, r).unwrap());
        prop_assert_eq!(idx.len(), (n as f64 * r / 100.0).floor() as usize);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert_eq!(idx, subsample_indices(n, r, seed).unwrap());
    }

    #[test]
    fn encoding_is_bracketed_and_bounded(text in "[a-z ,.!]{0,60}", max_len in 2usize..20) {
        let tokens = tokenize(&text);
        prop_assert_eq!(tokenize(&tokens.join(" ")), tokens.clone());
        let v = vocab(5);
        let ids = encode(&Document::new("d", tokens, 0), &v, max_len);
        prop_assert!(ids.len() <= max_len);
        prop_assert_eq!(ids[0], CLS_ID);
        prop_assert_eq!(*ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn checkpoints_round_trip_exactly(kind in kind(), seed in any::<u64>()) {
        let (_, model) = model(kind, seed);
        prop_assert_eq!(Checkpoint::from_json(&model.to_json()).unwrap(), model);
    }

    #[test]
    fn configs_round_trip(ratios in prop::collection::btree_set(0u32..=100, 1..5), seeds in prop::collection::btree_set(any::<u64>(), 1..4)) {
        let mut c = ExperimentConfig::new("train.jsonl", "test.jsonl");
        c.ratios = ratios.iter().map(|&r| r as f64 / 100.0).collect();
        c.seeds = seeds.into_iter().collect();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn confusion_svg_prints_every_count(cells in prop::collection::vec(0u64..1000, 4)) {
        let m = vec![cells[..2].to_vec(), cells[2..].to_vec()];
        let labels = vec!["neg".to_string(), "pos".to_string()];
        let svg = render_confusion(&m, &labels, "t").unwrap();
        for c in &cells {
            let needle = format!(">{c}</text>");
            prop_assert!(svg.contains(&needle));
        }
        prop_assert_eq!(svg.matches("<rect").count(), 5);
    }
}
