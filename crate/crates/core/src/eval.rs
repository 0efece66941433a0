//! Filtered ranking metrics and answer-set cardinality correlation.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{execute_on_tape, EntitySet};
use crate::fuzzy::FuzzySet;
use crate::kg::{EdgeStructure, EntityId};
use crate::projection::{PreparedEdges, ProjectionModel};
use crate::query::{QuerySample, QueryStructure};
use crate::autodiff::Tape;

pub const DEFAULT_KS: [usize; 3] = [1, 3, 10];

fn check_scores(scores: &[f64], hard: EntityId, all: &EntitySet) -> Result<()> {
    if hard.index() >= scores.len() {
        return Err(Error::Bounds {
            kind: "entity",
            id: hard.index(),
            limit: scores.len(),
        });
    }
    if !all.contains(&hard) {
        return Err(Error::Usage(format!("{hard} is not among the answers")));
    }
    Ok(())
}

/// `1 + #{non-answers scoring higher} + ⌊#{non-answers tying} / 2⌋`.
pub fn filtered_rank(scores: &[f64], hard: EntityId, all: &EntitySet) -> Result<usize> {
    check_scores(scores, hard, all)?;
    let s = scores[hard.index()];
    let (mut above, mut tied) = (0usize, 0usize);
    for (v, &x) in scores.iter().enumerate() {
        if all.contains(&EntityId(v as u32)) {
            continue;
        }
        if x > s {
            above += 1;
        } else if x == s {
            tied += 1;
        }
    }
    Ok(1 + above + tied / 2)
}

/// Same tie rule with every other entity as a competitor.
pub fn raw_rank(scores: &[f64], hard: EntityId) -> Result<usize> {
    let own: EntitySet = [hard].into_iter().collect();
    filtered_rank(scores, hard, &own)
}

pub fn mrr(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn hits_at(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// `E[1/rank]` when the answer is ranked uniformly among `candidates`.
pub fn random_rank_mrr(candidates: usize) -> f64 {
    (1..=candidates).map(|k| 1.0 / k as f64).sum::<f64>() / candidates as f64
}

/// Expected MRR of a uniform random scorer over the hard answers of
/// `samples`, each answer competing with the query's non-answers.
pub fn random_scorer_mrr(samples: &[QuerySample], num_entities: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let candidates = num_entities - s.answers().len() + 1;
        total += s.hard.len() as f64 * random_rank_mrr(candidates);
        count += s.hard.len();
    }
    total / count as f64
}

/// `Σ s_v · [s_v > threshold]`.
pub fn predict_cardinality(scores: &FuzzySet, threshold: f64) -> f64 {
    scores.as_slice().iter().filter(|&&s| s > threshold).sum()
}

/// `#{v : s_v > threshold}`.
pub fn predict_cardinality_count(scores: &FuzzySet, threshold: f64) -> f64 {
    scores.as_slice().iter().filter(|&&s| s > threshold).count() as f64
}

fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of fractional (tie-averaged) ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dim("spearman", format!("{} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations".into()));
    }
    let (rx, ry) = (fractional_ranks(xs), fractional_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    /// `HITS@K` keyed by `K`.
    pub hits: BTreeMap<usize, f64>,
}

impl Metrics {
    fn from_ranks(ranks: &[usize], ks: &[usize]) -> Self {
        Metrics {
            mrr: mrr(ranks),
            hits: ks.iter().map(|&k| (k, hits_at(ranks, k))).collect(),
        }
    }

    fn macro_average<'a>(parts: impl Iterator<Item = &'a Metrics>, ks: &[usize]) -> Option<Self> {
        let parts: Vec<&Metrics> = parts.collect();
        if parts.is_empty() {
            return None;
        }
        let n = parts.len() as f64;
        Some(Metrics {
            mrr: parts.iter().map(|m| m.mrr).sum::<f64>() / n,
            hits: ks
                .iter()
                .map(|&k| (k, parts.iter().map(|m| m.hits[&k]).sum::<f64>() / n))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub queries: usize,
    pub hard_answers: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Spearman ρ between predicted and true answer counts; absent when
    /// undefined (constant sequence or a single query).
    pub cardinality_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query: usize,
    pub structure: QueryStructure,
    pub answer: EntityId,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub per_structure: BTreeMap<QueryStructure, StructureReport>,
    pub avg_p: Option<Metrics>,
    pub avg_n: Option<Metrics>,
    #[serde(skip)]
    pub ranks: Vec<RankRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardinalityMode {
    /// Sum of the probabilities above the threshold.
    #[default]
    Sum,
    /// Number of entities above the threshold.
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub threshold: f64,
    pub cardinality: CardinalityMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            threshold: 0.5,
            cardinality: CardinalityMode::Sum,
        }
    }
}

#[derive(Default)]
struct Tally {
    ranks: Vec<usize>,
    predicted: Vec<f64>,
    truth: Vec<f64>,
    queries: usize,
}

/// Scores every sample with `scores[i]` and aggregates the metrics.
pub fn evaluate_scores(samples: &[QuerySample], scores: &[FuzzySet], opts: &EvalOptions) -> Result<RankingReport> {
    if samples.len() != scores.len() {
        return Err(Error::dim("evaluate", format!("{} samples vs {} scores", samples.len(), scores.len())));
    }
    let mut ranks = Vec::new();
    let mut by_type: BTreeMap<QueryStructure, Tally> = BTreeMap::new();
    for (qi, (s, sc)) in samples.iter().zip(scores).enumerate() {
        if s.hard.is_empty() {
            return Err(Error::Usage(format!("query {qi} has no hard answers")));
        }
        let all = s.answers();
        let entry = by_type.entry(s.structure).or_default();
        for &a in &s.hard {
            let rank = filtered_rank(sc.as_slice(), a, &all)?;
            entry.ranks.push(rank);
            ranks.push(RankRecord {
                query: qi,
                structure: s.structure,
                answer: a,
                rank,
            });
        }
        let predicted = match opts.cardinality {
            CardinalityMode::Sum => predict_cardinality(sc, opts.threshold),
            CardinalityMode::Count => predict_cardinality_count(sc, opts.threshold),
        };
        entry.predicted.push(predicted);
        entry.truth.push(all.len() as f64);
        entry.queries += 1;
    }
    let per_structure: BTreeMap<QueryStructure, StructureReport> = by_type
        .into_iter()
        .map(|(st, t)| {
            (
                st,
                StructureReport {
                    queries: t.queries,
                    hard_answers: t.ranks.len(),
                    metrics: Metrics::from_ranks(&t.ranks, &opts.ks),
                    cardinality_spearman: spearman(&t.predicted, &t.truth).ok(),
                },
            )
        })
        .collect();
    for st in QueryStructure::ALL {
        if !per_structure.contains_key(&st) {
            log::warn!("no {st} samples; omitted from the report");
        }
    }
    let avg = |group: &[QueryStructure]| {
        Metrics::macro_average(
            group.iter().filter_map(|s| per_structure.get(s)).map(|r| &r.metrics),
            &opts.ks,
        )
    };
    Ok(RankingReport {
        avg_p: avg(&QueryStructure::EPFO),
        avg_n: avg(&QueryStructure::NEGATION),
        per_structure,
        ranks,
    })
}

fn score_chunk(model: &ProjectionModel, edges: &EdgeStructure, samples: &[QuerySample]) -> Result<Vec<FuzzySet>> {
    let prepared = PreparedEdges::new(edges)?;
    samples
        .iter()
        .map(|s| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let vars = execute_on_tape(&mut tape, &s.query, &bound.projector(&prepared))?;
            FuzzySet::from_clamped(tape.value(vars[s.query.root()]).data().to_vec())
        })
        .collect()
}

/// Neural answer scores for every sample, spread over up to `threads`
/// workers. Output order and values do not depend on `threads`.
pub fn score_samples(
    model: &ProjectionModel,
    edges: &EdgeStructure,
    samples: &[QuerySample],
    threads: usize,
) -> Result<Vec<FuzzySet>> {
    let threads = threads.max(1).min(samples.len().max(1));
    if threads == 1 {
        return score_chunk(model, edges, samples);
    }
    let chunk = samples.len().div_ceil(threads);
    thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || score_chunk(model, edges, part)))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("scoring worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate_model(
    model: &ProjectionModel,
    edges: &EdgeStructure,
    samples: &[QuerySample],
    opts: &EvalOptions,
    threads: usize,
) -> Result<RankingReport> {
    let scores = score_samples(model, edges, samples, threads)?;
    evaluate_scores(samples, &scores, opts)
}
