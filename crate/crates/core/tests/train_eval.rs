mod common;

use hyqr_core::eval::{
    evaluate_scores, filtered_rank, mrr, random_rank_mrr, random_scorer_mrr, raw_rank, EvalOptions,
};
use hyqr_core::executor::EntitySet;
use hyqr_core::fuzzy::FuzzySet;
use hyqr_core::kg::{EntityId, Split, SplitMask};
use hyqr_core::projection::{ModelConfig, PreparedEdges, ProjectionModel};
use hyqr_core::query::{parse_query, sample_queries, QuerySample, QueryStructure};
use hyqr_core::train::{bce_loss, mean_loss, train, TrainConfig};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Rank by sorting candidate scores in descending order and taking the
/// midpoint of the tie block, rounded down.
fn sorted_rank(scores: &[f64], hard: usize, answers: &[usize]) -> usize {
    let mut cand: Vec<f64> = (0..scores.len())
        .filter(|v| *v == hard || !answers.contains(v))
        .map(|v| scores[v])
        .collect();
    cand.sort_by(|a, b| b.total_cmp(a));
    let s = scores[hard];
    let first = cand.iter().position(|&x| x == s).unwrap();
    let last = cand.iter().rposition(|&x| x == s).unwrap();
    first + 1 + (last - first) / 2
}

proptest! {
    #[test]
    fn filtered_rank_matches_sorting(
        scores in vec(prop_oneof![Just(0.25), Just(0.5), 0.0f64..1.0], 2..40),
        picks in vec(any::<prop::sample::Index>(), 1..5),
    ) {
        let n = scores.len();
        let answers: Vec<usize> = picks.iter().map(|i| i.index(n)).collect();
        let set: EntitySet = answers.iter().map(|&v| EntityId(v as u32)).collect();
        for &a in &answers {
            let f = filtered_rank(&scores, EntityId(a as u32), &set).unwrap();
            prop_assert_eq!(f, sorted_rank(&scores, a, &answers));
            prop_assert!(f <= raw_rank(&scores, EntityId(a as u32)).unwrap());
        }
    }

    #[test]
    fn bce_is_permutation_invariant(p in vec(0.0f64..=1.0, 3..30), seed in any::<u64>()) {
        let n = p.len();
        let mut rng = common::rng(seed);
        let answers: EntitySet = (0..n).filter(|_| rng.gen_bool(0.3)).map(|v| EntityId(v as u32)).collect();
        prop_assume!(!answers.is_empty() && answers.len() < n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let moved: EntitySet = (0..n).filter(|&j| answers.contains(&EntityId(perm[j] as u32))).map(|j| EntityId(j as u32)).collect();
        let a = bce_loss(&FuzzySet::new(p).unwrap(), &answers).unwrap();
        let b = bce_loss(&FuzzySet::new(permuted).unwrap(), &moved).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

fn one_hop_sample(n: usize, hard: &[u32]) -> QuerySample {
    let g = common::graph_from(n, 1, [hard.iter().map(|&t| (0, 0, t)).collect(), vec![], vec![]]);
    QuerySample {
        structure: QueryStructure::P1,
        query: parse_query("(p r0 (e v0))", g.names()).unwrap(),
        easy: EntitySet::new(),
        hard: hard.iter().map(|&e| EntityId(e)).collect(),
    }
}

#[test]
fn perfect_and_adversarial_scorers() {
    let (n, hard) = (20, [3u32, 7, 11]);
    let s = one_hop_sample(n, &hard);
    let good: Vec<f64> = (0..n).map(|v| hard.contains(&(v as u32)) as u8 as f64).collect();
    let bad: Vec<f64> = good.iter().map(|x| 1.0 - x).collect();
    let opts = EvalOptions::default();
    let r = evaluate_scores(std::slice::from_ref(&s), &[FuzzySet::new(good).unwrap()], &opts).unwrap();
    assert_eq!(r.per_structure[&QueryStructure::P1].metrics.mrr, 1.0);
    let r = evaluate_scores(std::slice::from_ref(&s), &[FuzzySet::new(bad).unwrap()], &opts).unwrap();
    let want = 1.0 / (n - hard.len() + 1) as f64;
    assert!((r.per_structure[&QueryStructure::P1].metrics.mrr - want).abs() < 1e-15);
    assert_eq!(r.per_structure[&QueryStructure::P1].metrics.hits[&10], 0.0);
}

#[test]
fn rank_fixture_through_the_evaluator() {
    // 15 non-answers at k/16; an answer just above the k-th highest of them
    // has exactly k non-answers in front.
    let s = one_hop_sample(20, &[0, 1, 2, 3, 4]);
    let mut scores = vec![0.0; 20];
    for (i, v) in (5..20).enumerate() {
        scores[v] = (15 - i) as f64 / 16.0;
    }
    for (a, above) in [0usize, 1, 1, 3, 9].into_iter().enumerate() {
        scores[a] = (15 - above) as f64 / 16.0 + 1.0 / 32.0;
    }
    let r = evaluate_scores(&[s], &[FuzzySet::new(scores).unwrap()], &EvalOptions::default()).unwrap();
    let mut ranks: Vec<usize> = r.ranks.iter().map(|x| x.rank).collect();
    ranks.sort();
    assert_eq!(ranks, [1, 2, 2, 4, 10]);
    assert!((r.per_structure[&QueryStructure::P1].metrics.mrr - 0.47).abs() < 1e-15);
    assert!((mrr(&ranks) - 0.47).abs() < 1e-15);
}

#[test]
fn random_baseline_matches_simulation() {
    let mut rng = common::rng(99);
    for candidates in [1usize, 2, 7, 150] {
        let trials = 200_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            acc += 1.0 / rng.gen_range(1..=candidates) as f64;
        }
        let sim = acc / trials as f64;
        assert!((sim - random_rank_mrr(candidates)).abs() < 3e-3, "{candidates}: {sim}");
    }
    let samples = [one_hop_sample(10, &[1]), one_hop_sample(10, &[1, 2, 3])];
    // Weighted by hard answers: one query with 10 candidates, three answers with 8.
    let want = (random_rank_mrr(10) + 3.0 * random_rank_mrr(8)) / 4.0;
    assert!((random_scorer_mrr(&samples, 10) - want).abs() < 1e-15);
}

fn small_training_run(seed: u64) -> (ProjectionModel, Vec<f64>, f64) {
    let g = common::memorization_graph(2);
    let mut samples = sample_queries(&g, QueryStructure::P1, 30, Split::Train, 4).unwrap();
    samples.extend(sample_queries(&g, QueryStructure::I2, 10, Split::Train, 5).unwrap());
    let edges = g.adjacency_matrix(SplitMask::TRAIN);
    let mut model = ProjectionModel::new(ModelConfig { dim: 8, layers: 2 }, g.num_relation_ids() + 1, seed).unwrap();
    let before = mean_loss(&model, &PreparedEdges::new(&edges).unwrap(), &samples).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-2,
        seed,
        max_steps: None,
    };
    let report = train(&mut model, &edges, &samples, &cfg, |_, _, _| Ok(())).unwrap();
    (model, report.epoch_means, before)
}

#[test]
fn first_epoch_reduces_loss() {
    let (model, means, before) = small_training_run(1);
    assert!(means[0] < before, "{} vs {before}", means[0]);
    assert!(means[1] < means[0]);
    assert_eq!(model.store().steps(), 20);
}

#[test]
fn training_is_bit_reproducible() {
    let (a, ma, _) = small_training_run(6);
    let (b, mb, _) = small_training_run(6);
    assert_eq!(ma, mb);
    let meta = serde_json::json!({});
    assert_eq!(a.to_bytes(meta.clone()).unwrap(), b.to_bytes(meta.clone()).unwrap());
    let (c, _, _) = small_training_run(7);
    assert_ne!(a.to_bytes(meta.clone()).unwrap(), c.to_bytes(meta).unwrap());
}
