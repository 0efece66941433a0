//! Knowledge graph storage: dense id dictionaries, split-tagged triples and a
//! head-major CSR index that carries both forward and inverse edges.
//!
//! Relation ids are interleaved: forward relation `k` has id `2k` and its
//! inverse `2k + 1`, so `inverse(r) == r ^ 1`. A self-loop pseudo-relation
//! with id `2|R|` exists only in [`EdgeStructure`], never in the CSR.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn forward(base: usize) -> Self {
        RelationId((base as u32) << 1)
    }

    pub fn inverse(self) -> Self {
        RelationId(self.0 ^ 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// Index of the underlying forward relation.
    pub fn base(self) -> usize {
        (self.0 >> 1) as usize
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }

    pub fn reversed(self) -> Self {
        Triple {
            head: self.tail,
            rel: self.rel.inverse(),
            tail: self.head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn slot(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    /// The edges a model may observe when answering queries labelled with this split.
    pub fn observed_mask(self) -> SplitMask {
        match self {
            Split::Train | Split::Valid => SplitMask::TRAIN,
            Split::Test => SplitMask::TRAIN.union(SplitMask::VALID),
        }
    }

    /// The edges that define ground truth for queries labelled with this split.
    pub fn full_mask(self) -> SplitMask {
        match self {
            Split::Train => SplitMask::TRAIN,
            Split::Valid => SplitMask::TRAIN.union(SplitMask::VALID),
            Split::Test => SplitMask::ALL,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of splits, used to select which edges a traversal may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitMask(u8);

impl SplitMask {
    pub const NONE: SplitMask = SplitMask(0);
    pub const TRAIN: SplitMask = SplitMask(1);
    pub const VALID: SplitMask = SplitMask(2);
    pub const TEST: SplitMask = SplitMask(4);
    pub const ALL: SplitMask = SplitMask(7);

    pub const fn union(self, other: SplitMask) -> SplitMask {
        SplitMask(self.0 | other.0)
    }

    pub fn contains(self, split: Split) -> bool {
        self.0 & (1 << split.slot()) != 0
    }
}

impl From<Split> for SplitMask {
    fn from(split: Split) -> Self {
        SplitMask(1 << split.slot())
    }
}

/// Bijective name <-> dense id map, ids assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Entity and relation dictionaries. Relation ids stored here are the
/// dense forward-relation indices `k`; the graph-level id is `2k`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameMaps {
    pub entities: Dictionary,
    pub relations: Dictionary,
}

pub const INVERSE_SUFFIX: &str = "^-1";

impl NameMaps {
    pub fn entity(&self, name: &str) -> Result<EntityId> {
        self.entities.get(name).map(EntityId).ok_or_else(|| Error::Lookup {
            kind: "entity",
            name: name.to_owned(),
        })
    }

    /// Resolves a relation name; a trailing `^-1` selects the inverse relation.
    pub fn relation(&self, name: &str) -> Result<RelationId> {
        let (base, inverse) = match name.strip_suffix(INVERSE_SUFFIX) {
            Some(base) if self.relations.get(name).is_none() => (base, true),
            _ => (name, false),
        };
        let k = self.relations.get(base).ok_or_else(|| Error::Lookup {
            kind: "relation",
            name: name.to_owned(),
        })?;
        let rel = RelationId::forward(k as usize);
        Ok(if inverse { rel.inverse() } else { rel })
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0).unwrap_or("<unknown>")
    }

    pub fn relation_name(&self, id: RelationId) -> String {
        let base = self.relations.name(id.base() as u32).unwrap_or("<unknown>");
        if id.is_inverse() {
            format!("{base}{INVERSE_SUFFIX}")
        } else {
            base.to_owned()
        }
    }

    pub fn write_tsv(&self, entities: &Path, relations: &Path) -> Result<()> {
        write_dictionary(entities, &self.entities, |i| i)?;
        write_dictionary(relations, &self.relations, |k| k << 1)
    }

    pub fn read_tsv(entities: &Path, relations: &Path) -> Result<Self> {
        Ok(NameMaps {
            entities: read_dictionary(entities, Some)?,
            relations: read_dictionary(relations, |id| (id % 2 == 0).then_some(id >> 1))?,
        })
    }
}

fn write_dictionary(path: &Path, dict: &Dictionary, id_of: impl Fn(u32) -> u32) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, name) in dict.names().enumerate() {
        writeln!(out, "{name}\t{}", id_of(i as u32)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_dictionary(path: &Path, slot_of: impl Fn(u32) -> Option<u32>) -> Result<Dictionary> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dict = Dictionary::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", cols.len())));
        }
        let id: u32 = cols[1]
            .parse()
            .map_err(|_| parse_err(format!("invalid id `{}`", cols[1])))?;
        let slot = slot_of(id).ok_or_else(|| parse_err(format!("invalid id `{id}`")))?;
        if slot as usize != dict.len() || dict.get(cols[0]).is_some() {
            return Err(parse_err(format!("ids must be dense and names unique (`{}`)", cols[0])));
        }
        dict.get_or_insert(cols[0]);
    }
    Ok(dict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AdjEntry {
    rel: RelationId,
    tail: EntityId,
    split: Split,
}

/// An immutable, indexed knowledge graph with train/valid/test splits.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    names: NameMaps,
    splits: [Vec<Triple>; 3],
    offsets: Vec<usize>,
    adjacency: Vec<AdjEntry>,
}

impl KnowledgeGraph {
    /// Builds a graph from forward triples (even relation ids). Duplicates
    /// are dropped; a triple already present in an earlier split (train,
    /// then valid, then test) is dropped from the later one.
    pub fn from_splits(names: NameMaps, splits: [Vec<Triple>; 3]) -> Result<Self> {
        let num_entities = names.entities.len();
        let num_relation_ids = 2 * names.relations.len();
        let mut seen = HashSet::new();
        let mut kept: [Vec<Triple>; 3] = Default::default();
        let mut dropped = 0usize;
        for (slot, triples) in splits.into_iter().enumerate() {
            for t in triples {
                check_bounds("entity", t.head.index(), num_entities)?;
                check_bounds("entity", t.tail.index(), num_entities)?;
                check_bounds("relation", t.rel.index(), num_relation_ids)?;
                if t.rel.is_inverse() {
                    return Err(Error::Usage(format!(
                        "stored triples must use forward relations, got id {}",
                        t.rel.0
                    )));
                }
                if seen.insert(t) {
                    kept[slot].push(t);
                } else {
                    dropped += 1;
                }
            }
        }
        if dropped > 0 {
            log::debug!("dropped {dropped} duplicate triples");
        }

        let mut degree = vec![0usize; num_entities + 1];
        for t in kept.iter().flatten() {
            degree[t.head.index()] += 1;
            degree[t.tail.index()] += 1;
        }
        let mut offsets = Vec::with_capacity(num_entities + 1);
        let mut acc = 0;
        offsets.push(0);
        for d in &degree[..num_entities] {
            acc += d;
            offsets.push(acc);
        }
        let placeholder = AdjEntry {
            rel: RelationId(0),
            tail: EntityId(0),
            split: Split::Train,
        };
        let mut adjacency = vec![placeholder; acc];
        let mut cursor = offsets.clone();
        for (split, triples) in Split::ALL.iter().zip(kept.iter()) {
            for &t in triples {
                for e in [t, t.reversed()] {
                    let slot = &mut cursor[e.head.index()];
                    adjacency[*slot] = AdjEntry {
                        rel: e.rel,
                        tail: e.tail,
                        split: *split,
                    };
                    *slot += 1;
                }
            }
        }
        for v in 0..num_entities {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable_by_key(|a| (a.rel, a.tail));
        }

        Ok(KnowledgeGraph {
            names,
            splits: kept,
            offsets,
            adjacency,
        })
    }

    /// Loads one TSV file into the given split. When `dictionaries` is
    /// provided it is frozen and any unseen name is a lookup error.
    pub fn load_triples(path: &Path, split: Split, dictionaries: Option<NameMaps>) -> Result<Self> {
        let frozen = dictionaries.is_some();
        let mut names = dictionaries.unwrap_or_default();
        let triples = read_triples(path, &mut names, frozen)?;
        let mut splits: [Vec<Triple>; 3] = Default::default();
        splits[split.slot()] = triples;
        Self::from_splits(names, splits)
    }

    /// Loads train/valid/test files, assigning ids in first-seen order
    /// across the files in that order.
    pub fn load_splits(
        train: &Path,
        valid: &Path,
        test: &Path,
        dictionaries: Option<NameMaps>,
    ) -> Result<Self> {
        let frozen = dictionaries.is_some();
        let mut names = dictionaries.unwrap_or_default();
        let splits = [
            read_triples(train, &mut names, frozen)?,
            read_triples(valid, &mut names, frozen)?,
            read_triples(test, &mut names, frozen)?,
        ];
        Self::from_splits(names, splits)
    }

    /// Reads a directory written by [`KnowledgeGraph::write_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let names = NameMaps::read_tsv(&dir.join("entities.tsv"), &dir.join("relations.tsv"))?;
        Self::load_splits(
            &dir.join("train.tsv"),
            &dir.join("valid.tsv"),
            &dir.join("test.tsv"),
            Some(names),
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.names
            .write_tsv(&dir.join("entities.tsv"), &dir.join("relations.tsv"))?;
        for split in Split::ALL {
            self.write_split_tsv(split, &dir.join(format!("{}.tsv", split.name())))?;
        }
        Ok(())
    }

    pub fn write_split_tsv(&self, split: Split, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in self.triples(split) {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.names.entity_name(t.head),
                self.names.relation_name(t.rel),
                self.names.entity_name(t.tail)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn names(&self) -> &NameMaps {
        &self.names
    }

    pub fn num_entities(&self) -> usize {
        self.names.entities.len()
    }

    /// Number of forward relations `|R|`.
    pub fn num_relations(&self) -> usize {
        self.names.relations.len()
    }

    /// Number of relation ids including inverses, `2|R|`.
    pub fn num_relation_ids(&self) -> usize {
        2 * self.num_relations()
    }

    /// Forward triples of one split, in load order.
    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split.slot()]
    }

    /// Number of directed edges in the index (forward plus inverse).
    pub fn num_edges(&self) -> usize {
        self.adjacency.len()
    }

    pub fn check_entity(&self, v: EntityId) -> Result<()> {
        check_bounds("entity", v.index(), self.num_entities())
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        check_bounds("relation", r.index(), self.num_relation_ids())
    }

    /// Tails `t` with `(v, r, t)` in one of the masked splits, ascending.
    pub fn neighbors(&self, v: EntityId, r: RelationId, splits: SplitMask) -> Result<Vec<EntityId>> {
        self.check_entity(v)?;
        self.check_relation(r)?;
        Ok(self.neighbors_iter(v, r, splits).collect())
    }

    /// Unchecked variant of [`KnowledgeGraph::neighbors`] for hot loops.
    pub fn neighbors_iter(
        &self,
        v: EntityId,
        r: RelationId,
        splits: SplitMask,
    ) -> impl Iterator<Item = EntityId> + '_ {
        let row = &self.adjacency[self.offsets[v.index()]..self.offsets[v.index() + 1]];
        let start = row.partition_point(|a| a.rel < r);
        let end = row.partition_point(|a| a.rel <= r);
        row[start..end]
            .iter()
            .filter(move |a| splits.contains(a.split))
            .map(|a| a.tail)
    }

    /// All outgoing `(relation, tail)` pairs of `v` within the masked splits.
    pub fn out_edges(
        &self,
        v: EntityId,
        splits: SplitMask,
    ) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        self.adjacency[self.offsets[v.index()]..self.offsets[v.index() + 1]]
            .iter()
            .filter(move |a| splits.contains(a.split))
            .map(|a| (a.rel, a.tail))
    }

    /// Edge lists consumed by the message-passing layers.
    pub fn adjacency_matrix(&self, splits: SplitMask) -> EdgeStructure {
        let num_ids = self.num_relation_ids();
        let mut groups: Vec<RelationEdges> = (0..num_ids)
            .map(|r| RelationEdges {
                relation: RelationId(r as u32),
                pairs: Vec::new(),
            })
            .collect();
        for v in 0..self.num_entities() {
            let src = EntityId(v as u32);
            for (rel, tail) in self.out_edges(src, splits) {
                groups[rel.index()].pairs.push((src, tail));
            }
        }
        groups.push(RelationEdges {
            relation: RelationId(num_ids as u32),
            pairs: (0..self.num_entities() as u32)
                .map(|v| (EntityId(v), EntityId(v)))
                .collect(),
        });
        EdgeStructure {
            num_entities: self.num_entities(),
            self_loop: RelationId(num_ids as u32),
            groups,
        }
    }
}

fn check_bounds(kind: &'static str, id: usize, limit: usize) -> Result<()> {
    if id < limit {
        Ok(())
    } else {
        Err(Error::Bounds { kind, id, limit })
    }
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
pub fn read_triples(path: &Path, names: &mut NameMaps, frozen: bool) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let (head, rel, tail) = if frozen {
            let rel = names.relation(cols[1])?;
            if rel.is_inverse() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("inverse relation `{}` in triple file", cols[1]),
                });
            }
            (names.entity(cols[0])?.0, rel.0, names.entity(cols[2])?.0)
        } else {
            let head = names.entities.get_or_insert(cols[0]);
            let rel = names.relations.get_or_insert(cols[1]) << 1;
            let tail = names.entities.get_or_insert(cols[2]);
            (head, rel, tail)
        };
        triples.push(Triple::new(head, rel, tail));
    }
    Ok(triples)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationEdges {
    pub relation: RelationId,
    pub pairs: Vec<(EntityId, EntityId)>,
}

/// Relation-grouped `(source, target)` pairs over a chosen set of splits,
/// with a trailing self-loop group whose relation id is `2|R|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeStructure {
    pub num_entities: usize,
    pub self_loop: RelationId,
    pub groups: Vec<RelationEdges>,
}

impl EdgeStructure {
    pub fn total_pairs(&self) -> usize {
        self.groups.iter().map(|g| g.pairs.len()).sum()
    }

    /// Number of relation embedding rows needed, including the self loop.
    pub fn num_relation_slots(&self) -> usize {
        self.self_loop.index() + 1
    }

    /// Incoming edge count per entity (self loop included).
    pub fn in_degree(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_entities];
        for g in &self.groups {
            for &(_, t) in &g.pairs {
                deg[t.index()] += 1;
            }
        }
        deg
    }
}
