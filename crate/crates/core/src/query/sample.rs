//! Benchmark-style query sampling and the JSON-lines sample container.
//!
//! A sample is grown backwards from a seed answer: each projection picks a
//! random edge into its target and recurses on the edge's head, so the seed
//! is always an answer of the instantiated query over the full graph.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_query, serialize_query, NodeId, Query, QueryBuilder, QueryStructure, Shape};
use crate::error::{Error, Result};
use crate::executor::{execute_symbolic, EntitySet};
use crate::kg::{EntityId, KnowledgeGraph, NameMaps, Split, SplitMask};
use crate::rng::{self, Stream};

/// Attempts per emitted sample before giving up.
pub const MAX_ATTEMPTS: usize = 100;
const NEGATION_TARGET_TRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub structure: QueryStructure,
    pub query: Query,
    pub easy: EntitySet,
    pub hard: EntitySet,
}

impl QuerySample {
    /// Every answer over the graph the sample was labelled against.
    pub fn answers(&self) -> EntitySet {
        self.easy.union(&self.hard).copied().collect()
    }
}

/// On-disk form of a [`QuerySample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub structure: QueryStructure,
    pub query: String,
    pub easy: Vec<String>,
    pub hard: Vec<String>,
}

struct Walker<'a> {
    g: &'a KnowledgeGraph,
    full: SplitMask,
    rng: &'a mut ChaCha8Rng,
    builder: QueryBuilder,
}

impl Walker<'_> {
    fn grow(&mut self, shape: &Shape, target: EntityId) -> Option<NodeId> {
        match shape {
            Shape::Entity => Some(self.builder.anchor(target)),
            Shape::Project(child) => {
                let incoming: Vec<_> = self.g.out_edges(target, self.full).collect();
                let &(rel, head) = incoming.choose(self.rng)?;
                let sub = self.grow(child, head)?;
                Some(self.builder.project(rel.inverse(), sub))
            }
            Shape::Intersect(cs) | Shape::Union(cs) => {
                let mut ids = Vec::with_capacity(cs.len());
                for c in cs {
                    let id = match c {
                        Shape::Negate(inner) => self.grow_negated(inner, target)?,
                        _ => self.grow(c, target)?,
                    };
                    ids.push(id);
                }
                Some(if matches!(shape, Shape::Intersect(_)) {
                    self.builder.intersect(ids)
                } else {
                    self.builder.union(ids)
                })
            }
            Shape::Negate(inner) => self.grow_negated(inner, target),
        }
    }

    /// A negated branch whose positive part excludes `target` and is neither
    /// empty nor the whole universe.
    fn grow_negated(&mut self, inner: &Shape, target: EntityId) -> Option<NodeId> {
        let n = self.g.num_entities();
        for _ in 0..NEGATION_TARGET_TRIES {
            let other = EntityId(self.rng.gen_range(0..n as u32));
            if other == target {
                continue;
            }
            let outer = std::mem::take(&mut self.builder);
            let grown = self.grow(inner, other);
            let branch = std::mem::replace(&mut self.builder, outer);
            let Some(positive) = grown.and_then(|root| branch.finish(root).ok()) else {
                continue;
            };
            let set = execute_symbolic(&positive, self.g, self.full).ok()?;
            if !set.contains(&target) && !set.is_empty() && set.len() < n {
                let sub = self.builder.append(&positive);
                return Some(self.builder.negate(sub));
            }
        }
        None
    }
}

/// Samples `n` queries of `structure` labelled for `split`.
///
/// For `Valid` and `Test` the easy answers come from the observed graph
/// (train, or train and valid) and the hard answers are the remaining
/// full-graph answers; samples without hard answers are redrawn. For
/// `Train` every training-graph answer is placed in `hard` (the set the
/// model is fit to) and `easy` is empty.
pub fn sample_queries(
    g: &KnowledgeGraph,
    structure: QueryStructure,
    n: usize,
    split: Split,
    seed: u64,
) -> Result<Vec<QuerySample>> {
    let mut rng = rng::stream(seed, Stream::Sampler);
    let fail = |reason: String| Error::Sampling {
        structure: structure.name().to_owned(),
        reason,
    };
    if g.num_entities() == 0 {
        return Err(fail("graph has no entities".into()));
    }
    let template = structure.template();
    let full = split.full_mask();
    let observed = split.observed_mask();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut emitted = false;
        for _ in 0..MAX_ATTEMPTS {
            let seed_answer = EntityId(rng.gen_range(0..g.num_entities() as u32));
            let mut walker = Walker {
                g,
                full,
                rng: &mut rng,
                builder: QueryBuilder::new(),
            };
            let Some(root) = walker.grow(&template, seed_answer) else {
                continue;
            };
            let query = walker.builder.finish(root)?;
            let answers = execute_symbolic(&query, g, full)?;
            debug_assert!(answers.contains(&seed_answer));
            if answers.len() == g.num_entities() {
                continue;
            }
            let (easy, hard) = if split == Split::Train {
                (BTreeSet::new(), answers)
            } else {
                let easy = execute_symbolic(&query, g, observed)?;
                let hard: EntitySet = answers.difference(&easy).copied().collect();
                let easy = easy.intersection(&answers).copied().collect();
                (easy, hard)
            };
            if hard.is_empty() {
                continue;
            }
            out.push(QuerySample {
                structure,
                query,
                easy,
                hard,
            });
            emitted = true;
            break;
        }
        if !emitted {
            return Err(fail(format!(
                "no {} sample with hard answers after {MAX_ATTEMPTS} attempts",
                split.name()
            )));
        }
    }
    Ok(out)
}

impl QuerySample {
    pub fn to_record(&self, names: &NameMaps) -> SampleRecord {
        let render = |s: &EntitySet| s.iter().map(|&e| names.entity_name(e).to_owned()).collect();
        SampleRecord {
            structure: self.structure,
            query: serialize_query(&self.query, names),
            easy: render(&self.easy),
            hard: render(&self.hard),
        }
    }

    pub fn from_record(rec: &SampleRecord, names: &NameMaps) -> Result<Self> {
        let resolve = |v: &[String]| v.iter().map(|s| names.entity(s)).collect::<Result<EntitySet>>();
        Ok(QuerySample {
            structure: rec.structure,
            query: parse_query(&rec.query, names)?,
            easy: resolve(&rec.easy)?,
            hard: resolve(&rec.hard)?,
        })
    }
}

pub fn write_samples(path: &Path, samples: &[QuerySample], names: &NameMaps) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, &s.to_record(names))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path, names: &NameMaps) -> Result<Vec<QuerySample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| at_line(e.to_string()))?;
        out.push(QuerySample::from_record(&rec, names).map_err(|e| at_line(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;
    use crate::query::classify_structure;

    fn chain_graph() -> KnowledgeGraph {
        // 0 -r-> 1 -r-> 2 ... with the 4 -r-> 5 edge held out as test.
        let mut names = NameMaps::default();
        for i in 0..6 {
            names.entities.get_or_insert(&format!("n{i}"));
        }
        names.relations.get_or_insert("r");
        let train = (0..4).map(|i| Triple::new(i, 0, i + 1)).collect();
        KnowledgeGraph::from_splits(names, [train, vec![], vec![Triple::new(4, 0, 5)]]).unwrap()
    }

    #[test]
    fn held_out_edge_is_the_only_hard_answer() {
        let g = chain_graph();
        let samples = sample_queries(&g, QueryStructure::P1, 20, Split::Test, 3).unwrap();
        let through = samples
            .iter()
            .filter(|s| serialize_query(&s.query, g.names()) == "(p r (e n4))")
            .collect::<Vec<_>>();
        assert!(!through.is_empty());
        for s in through {
            assert_eq!(s.hard, [EntityId(5)].into_iter().collect());
            assert!(s.easy.is_empty());
        }
    }

    #[test]
    fn empty_test_split_exhausts_retries() {
        let mut names = NameMaps::default();
        names.entities.get_or_insert("a");
        names.entities.get_or_insert("b");
        names.relations.get_or_insert("r");
        let g = KnowledgeGraph::from_splits(names, [vec![Triple::new(0, 0, 1)], vec![], vec![]]).unwrap();
        let err = sample_queries(&g, QueryStructure::P1, 1, Split::Test, 0).unwrap_err();
        assert!(matches!(err, Error::Sampling { ref structure, .. } if structure == "1p"));
    }

    #[test]
    fn samples_are_consistent_and_roundtrip() {
        let g = chain_graph();
        let samples = sample_queries(&g, QueryStructure::P2, 10, Split::Test, 9).unwrap();
        for s in &samples {
            assert_eq!(classify_structure(&s.query), Some(QueryStructure::P2));
            assert!(s.easy.is_disjoint(&s.hard));
            assert_eq!(s.answers(), execute_symbolic(&s.query, &g, SplitMask::ALL).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        write_samples(&path, &samples, g.names()).unwrap();
        assert_eq!(read_samples(&path, g.names()).unwrap(), samples);
    }
}
