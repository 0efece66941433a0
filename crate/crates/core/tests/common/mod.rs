#![allow(dead_code)]

use hyqr_core::autodiff::{Matrix, ParamId, ParamStore, Tape, Var};
use hyqr_core::Result;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Worst relative error per parameter between reverse-mode gradients and
/// central finite differences with step `h`, as `‖a - n‖ / max(‖a‖, ‖n‖)`.
pub fn gradcheck<F>(store: &mut ParamStore, h: f64, loss_fn: F) -> Vec<(String, f64)>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store).expect("forward");
    tape.backward(loss, store).expect("backward");
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut report = Vec::new();
    for id in ids {
        let analytic = store.grad(id).clone();
        let base = store.value(id).clone();
        let mut numeric = Matrix::zeros(base.rows(), base.cols());
        for k in 0..base.len() {
            let eval = |store: &mut ParamStore, delta: f64| {
                let mut v = base.clone();
                v.data_mut()[k] += delta;
                store.set_value(id, v).unwrap();
                let mut t = Tape::new();
                let l = loss_fn(&mut t, store).expect("forward");
                t.value(l).item()
            };
            let plus = eval(store, h);
            let minus = eval(store, -h);
            numeric.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        store.set_value(id, base).unwrap();
        let diff = Matrix::new(
            analytic.rows(),
            analytic.cols(),
            analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let scale = analytic.frobenius().max(numeric.frobenius());
        let rel = if scale == 0.0 { 0.0 } else { diff.frobenius() / scale };
        report.push((store.get(id).name.clone(), rel));
    }
    store.zero_grads();
    report
}

use hyqr_core::kg::{EdgeStructure, KnowledgeGraph, NameMaps, RelationId, Triple};
use hyqr_core::projection::ProjectionModel;

/// Graph with `n` entities named `v{i}` and relations named `r{k}`.
pub fn graph_from(n: usize, relations: usize, splits: [Vec<(u32, u32, u32)>; 3]) -> KnowledgeGraph {
    let mut names = NameMaps::default();
    for i in 0..n {
        names.entities.get_or_insert(&format!("v{i}"));
    }
    for k in 0..relations {
        names.relations.get_or_insert(&format!("r{k}"));
    }
    let conv = |v: Vec<(u32, u32, u32)>| v.into_iter().map(|(h, r, t)| Triple::new(h, 2 * r, t)).collect();
    let [a, b, c] = splits;
    KnowledgeGraph::from_splits(names, [conv(a), conv(b), conv(c)]).expect("valid graph")
}

/// Random multigraph; each triple lands in test with probability `test_frac`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, relations: usize, triples: usize, test_frac: f64) -> KnowledgeGraph {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..triples {
        let t = (
            rng.gen_range(0..n as u32),
            rng.gen_range(0..relations as u32),
            rng.gen_range(0..n as u32),
        );
        if rng.gen_bool(test_frac) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    graph_from(n, relations, [train, vec![], test])
}

/// The projection with every exp/log map removed, written with plain loops:
/// `h⁰ = x q_r`, `h ← relu(mean_in(h_src ⊙ q_rel) W_t)`, then the readout MLP.
pub fn euclidean_reference(model: &ProjectionModel, edges: &EdgeStructure, x: &[f64], rel: RelationId) -> Vec<f64> {
    let n = edges.num_entities;
    let d = model.config().dim;
    let emb = model.relation_embeddings();
    let mut h: Vec<Vec<f64>> = (0..n).map(|v| emb.row(rel.index()).iter().map(|q| x[v] * q).collect()).collect();
    let mut count = vec![0usize; n];
    for g in &edges.groups {
        for &(_, t) in &g.pairs {
            count[t.index()] += 1;
        }
    }
    for t in 0..model.config().layers {
        let mut agg = vec![vec![0.0; d]; n];
        for g in &edges.groups {
            let q = emb.row(g.relation.index());
            for &(s, tgt) in &g.pairs {
                for k in 0..d {
                    agg[tgt.index()][k] += h[s.index()][k] * q[k];
                }
            }
        }
        let w = model.layer_weight(t);
        h = agg
            .iter()
            .enumerate()
            .map(|(v, a)| {
                (0..d)
                    .map(|j| {
                        let z: f64 = (0..d).map(|k| a[k] / count[v].max(1) as f64 * w.get(k, j)).sum();
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect();
    }
    let (w1, b1, w2, b2) = model.readout();
    h.iter()
        .map(|row| {
            let hidden: Vec<f64> = (0..d)
                .map(|j| ((0..d).map(|k| row[k] * w1.get(k, j)).sum::<f64>() + b1.get(0, j)).max(0.0))
                .collect();
            let o: f64 = (0..d).map(|k| hidden[k] * w2.get(k, 0)).sum::<f64>() + b2.item();
            1.0 / (1.0 + (-o).exp())
        })
        .collect()
}

/// Complete toy graph: every entity has two random tails under each of two
/// relations, all in the training split.
pub fn memorization_graph(seed: u64) -> KnowledgeGraph {
    let mut r = rng(seed);
    let mut train = Vec::new();
    for h in 0..20u32 {
        for k in 0..2u32 {
            for _ in 0..2 {
                train.push((h, k, r.gen_range(0..20)));
            }
        }
    }
    graph_from(20, 2, [train, vec![], vec![]])
}

use hyqr_core::executor::{brute_force_answers, execute, execute_on_tape, execute_symbolic, EntitySet, ExecutionMode};
use hyqr_core::fuzzy::FuzzySet;
use hyqr_core::kg::{EntityId, Split, SplitMask};
use hyqr_core::projection::{ModelConfig, PreparedEdges};
use hyqr_core::query::{parse_query, sample_queries, QuerySample, QueryStructure};
use hyqr_core::train::{bce_loss_on_tape, mean_loss, train, TrainConfig};

/// Worst relative gradient error per parameter tensor of a d=4, T=2 model on
/// a 5-entity graph, with every parameter (θ included) drawn from U(-1, 1)
/// so that curvature visibly affects the loss.
pub fn end_to_end_gradcheck(seed: u64) -> Vec<(String, f64)> {
    let g = graph_from(
        5,
        2,
        [vec![(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 1, 4), (4, 0, 0), (1, 1, 3)], vec![], vec![]],
    );
    let mut model = ProjectionModel::new(ModelConfig { dim: 4, layers: 2 }, g.num_relation_ids() + 1, seed).unwrap();
    let mut r = rng(seed);
    let ids: Vec<_> = model.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let (rows, cols) = model.store().value(id).shape();
        let v = random_matrix(&mut r, rows, cols, -1.0, 1.0);
        model.store_mut().set_value(id, v).unwrap();
    }
    let prepared = PreparedEdges::new(&g.adjacency_matrix(SplitMask::ALL)).unwrap();
    let parsed: Vec<(hyqr_core::query::Query, EntitySet)> = [
        ("(p r0 (e v0))", vec![1, 2]),
        ("(i (p r1 (e v2)) (p r0^-1 (e v2)))", vec![3]),
        ("(i (p r0 (e v4)) (n (p r1 (e v1))))", vec![0]),
    ]
    .iter()
    .map(|(q, a)| (parse_query(q, g.names()).unwrap(), a.iter().map(|&i| EntityId(i)).collect()))
    .collect();
    let template = model.clone();
    let mut store = model.store().clone();
    gradcheck(&mut store, 1e-5, |tape: &mut Tape, store: &ParamStore| {
        let mut m = template.clone();
        *m.store_mut() = store.clone();
        let bound = m.bind(tape)?;
        let proj = bound.projector(&prepared);
        let mut total = None;
        for (q, answers) in &parsed {
            let vars = execute_on_tape(tape, q, &proj)?;
            let l = bce_loss_on_tape(tape, vars[q.root()], answers)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        Ok(total.expect("at least one query"))
    })
}

/// Largest elementwise gap between the model with every layer frozen at
/// curvature `c` and the Euclidean reference over `inputs` random fuzzy
/// inputs. Parameters are drawn from U(-1, 1) so that hidden states have
/// norms of order one, where the exponential map is far from the identity.
pub fn euclidean_limit_deviation(seed: u64, c: f64, inputs: usize) -> f64 {
    let mut r = rng(seed);
    let g = random_graph(&mut r, 12, 2, 30, 0.0);
    let edges = g.adjacency_matrix(SplitMask::ALL);
    let prepared = PreparedEdges::new(&edges).unwrap();
    let mut model = ProjectionModel::new(ModelConfig { dim: 16, layers: 3 }, g.num_relation_ids() + 1, seed).unwrap();
    let ids: Vec<_> = model.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let (rows, cols) = model.store().value(id).shape();
        let v = random_matrix(&mut r, rows, cols, -1.0, 1.0);
        model.store_mut().set_value(id, v).unwrap();
    }
    model.set_fixed_curvature(Some(c)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let x: Vec<f64> = (0..12).map(|_| r.gen_range(0.0..1.0)).collect();
        let rel = RelationId(r.gen_range(0..g.num_relation_ids() as u32));
        let got = model.project(&FuzzySet::new(x.clone()).unwrap(), rel, &prepared).unwrap();
        let want = euclidean_reference(&model, &edges, &x, rel);
        for (a, b) in got.as_slice().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Compares the set executor with brute-force enumeration on `pairs` random
/// (graph of at most 20 entities, sampled query) pairs, cycling through all
/// 14 structures. Returns per-structure counts and the number of mismatches.
pub fn oracle_comparison(seed: u64, pairs: usize) -> ([usize; 14], usize) {
    let mut r = rng(seed);
    let mut per_structure = [0usize; 14];
    let mut mismatches = 0;
    let (mut checked, mut i) = (0, 0);
    while checked < pairs {
        let slot = i % 14;
        i += 1;
        let n = r.gen_range(6..=20);
        let rels = r.gen_range(1..=3);
        let triples = r.gen_range(2 * n..=4 * n);
        let g = random_graph(&mut r, n, rels, triples, 0.2);
        // Sparse draws can lack any instantiation of a structure; redraw.
        let Ok(samples) = sample_queries(&g, QueryStructure::ALL[slot], 1, Split::Train, r.gen()) else {
            continue;
        };
        let q = &samples[0].query;
        for mask in [SplitMask::TRAIN, SplitMask::ALL] {
            if execute_symbolic(q, &g, mask).unwrap() != brute_force_answers(q, &g, mask).unwrap() {
                mismatches += 1;
            }
        }
        per_structure[slot] += 1;
        checked += 1;
    }
    (per_structure, mismatches)
}

pub struct Memorization {
    pub steps: usize,
    pub mean_loss: f64,
    pub queries: usize,
    pub mismatches: usize,
    pub model: ProjectionModel,
    pub samples: Vec<QuerySample>,
}

/// Fits 40 1p, 30 2p and 30 2i queries of [`memorization_graph`] for 500
/// steps and compares thresholded answers with the symbolic ones.
pub fn memorization_run() -> Memorization {
    let g = memorization_graph(5);
    let mut samples = Vec::new();
    for (st, n, seed) in [(QueryStructure::P1, 40, 1), (QueryStructure::P2, 30, 2), (QueryStructure::I2, 30, 3)] {
        samples.extend(sample_queries(&g, st, n, Split::Train, seed).unwrap());
    }
    let mut model = ProjectionModel::new(ModelConfig { dim: 32, layers: 2 }, g.num_relation_ids() + 1, 0).unwrap();
    let edges = g.adjacency_matrix(SplitMask::TRAIN);
    let cfg = TrainConfig {
        epochs: 1000,
        batch_size: 8,
        lr: 5e-3,
        seed: 0,
        max_steps: Some(500),
    };
    let report = train(&mut model, &edges, &samples, &cfg, |_, _, _| Ok(())).unwrap();
    let prepared = PreparedEdges::new(&edges).unwrap();
    let loss = mean_loss(&model, &prepared, &samples).unwrap();
    let mismatches = samples
        .iter()
        .filter(|s| {
            let ex = execute(&s.query, ExecutionMode::Neural { model: &model, edges: &prepared }).unwrap();
            ex.answer.to_set() != execute_symbolic(&s.query, &g, SplitMask::ALL).unwrap()
        })
        .count();
    Memorization {
        steps: report.losses.len(),
        mean_loss: loss,
        queries: samples.len(),
        mismatches,
        model,
        samples,
    }
}
