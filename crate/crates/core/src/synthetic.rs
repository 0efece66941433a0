//! Rule-generated knowledge graphs whose held-out edges are implied by the
//! remaining ones.
//!
//! Entities are split into equal clusters arranged in a ring. Five
//! relations are generated:
//!
//! - `similar`: symmetric links inside a cluster;
//! - `next`: links from each entity into the following cluster;
//! - `prev`: exact inverse of `next`;
//! - `next2`: two `next` hops;
//! - `hub`: every entity points at the first entity of its cluster.
//!
//! A fraction of the triples is then moved to the test split (and
//! optionally to the valid split) uniformly at random.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NameMaps, Triple};
use crate::rng::{self, Stream};

pub const RELATIONS: [&str; 5] = ["similar", "next", "prev", "next2", "hub"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub clusters: usize,
    /// Outgoing `similar` and `next` links drawn per entity.
    pub fanout: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entities: 200,
            clusters: 10,
            fanout: 2,
            valid_fraction: 0.0,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

fn rel(k: u32) -> u32 {
    2 * k
}

pub fn synthetic_graph(cfg: &SyntheticConfig) -> Result<KnowledgeGraph> {
    if cfg.clusters < 2 || cfg.entities < 2 * cfg.clusters {
        return Err(Error::Usage(format!(
            "need at least two clusters of two entities, got {} entities in {} clusters",
            cfg.entities, cfg.clusters
        )));
    }
    if !(0.0..1.0).contains(&(cfg.valid_fraction + cfg.test_fraction)) || cfg.valid_fraction < 0.0 || cfg.test_fraction < 0.0 {
        return Err(Error::Usage("held-out fractions must be non-negative and sum below 1".into()));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Sampler);
    let n = cfg.entities as u32;
    let k = cfg.clusters as u32;
    let cluster_of = |v: u32| v % k;
    let members = |c: u32| (0..n).filter(move |v| v % k == c);
    let hub = |c: u32| c;

    let mut facts = BTreeSet::new();
    let mut next = Vec::new();
    for v in 0..n {
        let c = cluster_of(v);
        let mates: Vec<u32> = members(c).filter(|&u| u != v).collect();
        for &u in mates.choose_multiple(&mut rng, cfg.fanout) {
            facts.insert((v, rel(0), u));
            facts.insert((u, rel(0), v));
        }
        let ahead: Vec<u32> = members((c + 1) % k).collect();
        for &u in ahead.choose_multiple(&mut rng, cfg.fanout) {
            next.push((v, u));
        }
        if v != hub(c) {
            facts.insert((v, rel(4), hub(c)));
        }
    }
    for &(a, b) in &next {
        facts.insert((a, rel(1), b));
        facts.insert((b, rel(2), a));
    }
    for v in 0..n {
        let firsts: Vec<u32> = next.iter().filter(|(a, _)| *a == v).map(|&(_, b)| b).collect();
        if let Some(&b) = firsts.choose(&mut rng) {
            let seconds: Vec<u32> = next.iter().filter(|(a, _)| *a == b).map(|&(_, c)| c).collect();
            if let Some(&c) = seconds.choose(&mut rng) {
                facts.insert((v, rel(3), c));
            }
        }
    }

    let mut triples: Vec<Triple> = facts.into_iter().map(|(h, r, t)| Triple::new(h, r, t)).collect();
    triples.shuffle(&mut rng);
    let n_test = (triples.len() as f64 * cfg.test_fraction).round() as usize;
    let n_valid = (triples.len() as f64 * cfg.valid_fraction).round() as usize;
    let test = triples.split_off(triples.len() - n_test);
    let valid = triples.split_off(triples.len() - n_valid);
    let mut train = triples;
    train.sort();
    let mut valid = valid;
    valid.sort();
    let mut test = test;
    test.sort();

    let mut names = NameMaps::default();
    for v in 0..n {
        names.entities.get_or_insert(&format!("c{}_e{v}", cluster_of(v)));
    }
    for r in RELATIONS {
        names.relations.get_or_insert(r);
    }
    KnowledgeGraph::from_splits(names, [train, valid, test])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationId, Split, SplitMask};

    #[test]
    fn rules_hold_on_the_full_graph() {
        let g = synthetic_graph(&SyntheticConfig::default()).unwrap();
        assert_eq!(g.num_entities(), 200);
        assert_eq!(g.num_relations(), 5);
        let total: usize = Split::ALL.iter().map(|&s| g.triples(s).len()).sum();
        let test = g.triples(Split::Test).len() as f64;
        assert!((test / total as f64 - 0.1).abs() < 0.01);
        for t in g.triples(Split::Train) {
            if t.rel == RelationId(2) {
                let back = g.neighbors(t.tail, RelationId(4), SplitMask::ALL).unwrap();
                assert!(back.contains(&t.head), "prev is the inverse of next");
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig {
            entities: 50,
            clusters: 5,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let a = synthetic_graph(&cfg).unwrap();
        let b = synthetic_graph(&cfg).unwrap();
        for s in Split::ALL {
            assert_eq!(a.triples(s), b.triples(s));
        }
    }
}
