//! Post-order query execution, either exactly over entity sets or over fuzzy
//! sets with a pluggable relation projection.

mod brute;

use std::collections::BTreeSet;
use std::rc::Rc;

pub use brute::{brute_force_answers, MAX_BOUND_VARIABLES, MAX_ENTITIES};

use crate::autodiff::{Matrix, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::fuzzy::FuzzySet;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, SplitMask};
use crate::projection::{PreparedEdges, ProjectionModel};
use crate::query::{Query, QueryNode};

pub type EntitySet = BTreeSet<EntityId>;

/// Membership threshold used whenever a fuzzy answer is read as a set.
pub const ANSWER_THRESHOLD: f64 = 0.5;

pub enum ExecutionMode<'a> {
    Neural {
        model: &'a ProjectionModel,
        edges: &'a PreparedEdges,
    },
    Symbolic {
        graph: &'a KnowledgeGraph,
        mask: SplitMask,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Fuzzy(FuzzySet),
    Crisp(EntitySet),
}

impl Answer {
    /// Crisp view; fuzzy answers are thresholded at [`ANSWER_THRESHOLD`].
    pub fn to_set(&self) -> EntitySet {
        match self {
            Answer::Fuzzy(f) => f.above(ANSWER_THRESHOLD).into_iter().collect(),
            Answer::Crisp(s) => s.clone(),
        }
    }
}

/// Intermediate results indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionTrace {
    Fuzzy(Vec<FuzzySet>),
    Crisp(Vec<EntitySet>),
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        match self {
            ExecutionTrace::Fuzzy(v) => v.len(),
            ExecutionTrace::Crisp(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub answer: Answer,
    pub trace: ExecutionTrace,
}

pub fn execute(q: &Query, mode: ExecutionMode<'_>) -> Result<Execution> {
    match mode {
        ExecutionMode::Symbolic { graph, mask } => {
            let sets = symbolic_trace(q, graph, mask)?;
            Ok(Execution {
                answer: Answer::Crisp(sets[q.root()].clone()),
                trace: ExecutionTrace::Crisp(sets),
            })
        }
        ExecutionMode::Neural { model, edges } => {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let projector = bound.projector(edges);
            validate_neural(q, model, edges)?;
            let vars = execute_on_tape(&mut tape, q, &projector)?;
            let sets = vars
                .iter()
                .map(|&v| FuzzySet::from_clamped(tape.value(v).data().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Execution {
                answer: Answer::Fuzzy(sets[q.root()].clone()),
                trace: ExecutionTrace::Fuzzy(sets),
            })
        }
    }
}

fn validate_neural(q: &Query, model: &ProjectionModel, edges: &PreparedEdges) -> Result<()> {
    if edges.num_relation_slots() != model.num_relation_slots() {
        return Err(Error::dim(
            "neural execution",
            format!(
                "graph has {} relation slots, model has {}",
                edges.num_relation_slots(),
                model.num_relation_slots()
            ),
        ));
    }
    for node in q.nodes() {
        match node {
            QueryNode::Anchor(e) if e.index() >= edges.num_entities() => {
                return Err(Error::Bounds {
                    kind: "entity",
                    id: e.index(),
                    limit: edges.num_entities(),
                })
            }
            QueryNode::Projection { rel, .. } if rel.index() + 1 >= model.num_relation_slots() => {
                return Err(Error::Bounds {
                    kind: "relation",
                    id: rel.index(),
                    limit: model.num_relation_slots() - 1,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Exact answers of `q` over the edges of the masked splits.
pub fn execute_symbolic(q: &Query, g: &KnowledgeGraph, mask: SplitMask) -> Result<EntitySet> {
    let mut sets = symbolic_trace(q, g, mask)?;
    Ok(sets.swap_remove(q.root()))
}

fn symbolic_trace(q: &Query, g: &KnowledgeGraph, mask: SplitMask) -> Result<Vec<EntitySet>> {
    q.validate_against(g)?;
    let n = g.num_entities();
    let mut bits: Vec<Vec<bool>> = Vec::with_capacity(q.len());
    for id in q.post_order() {
        let row = match q.node(id) {
            QueryNode::Anchor(e) => {
                let mut r = vec![false; n];
                r[e.index()] = true;
                r
            }
            QueryNode::Projection { rel, child } => {
                let mut r = vec![false; n];
                for (u, _) in bits[*child].iter().enumerate().filter(|(_, &m)| m) {
                    for t in g.neighbors_iter(EntityId(u as u32), *rel, mask) {
                        r[t.index()] = true;
                    }
                }
                r
            }
            QueryNode::Intersection(cs) => (0..n).map(|v| cs.iter().all(|&c| bits[c][v])).collect(),
            QueryNode::Union(cs) => (0..n).map(|v| cs.iter().any(|&c| bits[c][v])).collect(),
            QueryNode::Negation(c) => bits[*c].iter().map(|&m| !m).collect(),
        };
        bits.push(row);
    }
    Ok(bits
        .into_iter()
        .map(|r| {
            r.into_iter()
                .enumerate()
                .filter(|(_, m)| *m)
                .map(|(v, _)| EntityId(v as u32))
                .collect()
        })
        .collect())
}

/// Maps an `n×1` fuzzy column to the fuzzy set of its relation tails.
pub trait Projector {
    fn num_entities(&self) -> usize;
    fn project(&self, tape: &mut Tape, x: Var, rel: RelationId) -> Result<Var>;
}

/// Records the fuzzy evaluation of `q` on `tape`; returns one `n×1`
/// variable per node, indexed by node id.
pub fn execute_on_tape(tape: &mut Tape, q: &Query, projector: &impl Projector) -> Result<Vec<Var>> {
    let n = projector.num_entities();
    let mut vars: Vec<Var> = Vec::with_capacity(q.len());
    for id in q.post_order() {
        let v = match q.node(id) {
            QueryNode::Anchor(e) => {
                if e.index() >= n {
                    return Err(Error::Bounds {
                        kind: "entity",
                        id: e.index(),
                        limit: n,
                    });
                }
                let mut col = Matrix::zeros(n, 1);
                col.set(e.index(), 0, 1.0);
                tape.constant(col)?
            }
            QueryNode::Projection { rel, child } => projector.project(tape, vars[*child], *rel)?,
            QueryNode::Intersection(cs) => {
                let mut acc = vars[cs[0]];
                for &c in &cs[1..] {
                    acc = fuzzy_and(tape, acc, vars[c])?;
                }
                acc
            }
            QueryNode::Union(cs) => {
                let mut acc = vars[cs[0]];
                for &c in &cs[1..] {
                    acc = fuzzy_or(tape, acc, vars[c])?;
                }
                acc
            }
            QueryNode::Negation(c) => {
                let not = tape.one_minus(vars[*c])?;
                tape.clamp(not, 0.0, 1.0)?
            }
        };
        vars.push(v);
    }
    Ok(vars)
}

fn fuzzy_and(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let p = tape.mul(a, b)?;
    tape.clamp(p, 0.0, 1.0)
}

fn fuzzy_or(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let s = tape.add(a, b)?;
    let p = tape.mul(a, b)?;
    let d = tape.sub(s, p)?;
    tape.clamp(d, 0.0, 1.0)
}

/// Exact projection through the adjacency matrix of the masked splits,
/// saturated at 1. On crisp inputs it reproduces set traversal.
pub struct AdjacencyProjector {
    num_entities: usize,
    by_relation: Vec<Rc<SparseMatrix>>,
}

impl AdjacencyProjector {
    pub fn new(g: &KnowledgeGraph, mask: SplitMask) -> Result<Self> {
        let n = g.num_entities();
        let edges = g.adjacency_matrix(mask);
        let by_relation = edges.groups[..g.num_relation_ids()]
            .iter()
            .map(|grp| {
                let entries = grp.pairs.iter().map(|(h, t)| (t.index(), h.index(), 1.0)).collect();
                SparseMatrix::new(n, n, entries).map(Rc::new)
            })
            .collect::<Result<_>>()?;
        Ok(AdjacencyProjector {
            num_entities: n,
            by_relation,
        })
    }
}

impl Projector for AdjacencyProjector {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn project(&self, tape: &mut Tape, x: Var, rel: RelationId) -> Result<Var> {
        let s = self.by_relation.get(rel.index()).ok_or(Error::Bounds {
            kind: "relation",
            id: rel.index(),
            limit: self.by_relation.len(),
        })?;
        let y = tape.sparse_dense_matmul(Rc::clone(s), x)?;
        tape.clamp(y, 0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{NameMaps, Triple};
    use crate::query::parse_query;

    fn graph(entities: &[&str], rels: &[&str], train: &[(u32, u32, u32)]) -> KnowledgeGraph {
        let mut names = NameMaps::default();
        for e in entities {
            names.entities.get_or_insert(e);
        }
        for r in rels {
            names.relations.get_or_insert(r);
        }
        let triples = train.iter().map(|&(h, r, t)| Triple::new(h, 2 * r, t)).collect();
        KnowledgeGraph::from_splits(names, [triples, vec![], vec![]]).unwrap()
    }

    fn set(ids: &[u32]) -> EntitySet {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn symbolic_one_hop() {
        let g = graph(&["a", "b", "c"], &["r"], &[(0, 0, 1), (0, 0, 2)]);
        let q = parse_query("(p r (e a))", g.names()).unwrap();
        assert_eq!(execute_symbolic(&q, &g, SplitMask::ALL).unwrap(), set(&[1, 2]));
        let inv = parse_query("(p r^-1 (e c))", g.names()).unwrap();
        assert_eq!(execute_symbolic(&inv, &g, SplitMask::ALL).unwrap(), set(&[0]));
    }

    #[test]
    fn symbolic_negation_is_set_difference() {
        let g = graph(
            &["a", "b", "c", "d", "x"],
            &["r1", "r2"],
            &[(0, 0, 1), (0, 0, 2), (0, 0, 4), (3, 1, 2)],
        );
        let q = parse_query("(i (p r1 (e a)) (n (p r2 (e d))))", g.names()).unwrap();
        let r1: EntitySet = g.neighbors(EntityId(0), RelationId(0), SplitMask::ALL).unwrap().into_iter().collect();
        let r2: EntitySet = g.neighbors(EntityId(3), RelationId(2), SplitMask::ALL).unwrap().into_iter().collect();
        let expected: EntitySet = r1.difference(&r2).copied().collect();
        assert_eq!(execute_symbolic(&q, &g, SplitMask::ALL).unwrap(), expected);
        assert_eq!(expected, set(&[1, 4]));
    }

    #[test]
    fn trace_has_one_entry_per_node() {
        let g = graph(&["a", "b", "c"], &["r"], &[(0, 0, 1), (1, 0, 2)]);
        let q = parse_query("(u (p r (p r (e a))) (p r (e b)))", g.names()).unwrap();
        let ex = execute(&q, ExecutionMode::Symbolic { graph: &g, mask: SplitMask::ALL }).unwrap();
        assert_eq!(ex.trace.len(), q.len());
        match &ex.trace {
            ExecutionTrace::Crisp(sets) => assert_eq!(sets[q.root()], ex.answer.to_set()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn validation_errors() {
        let g = graph(&["a"], &["r"], &[]);
        let mut b = crate::query::QueryBuilder::new();
        let a = b.anchor(EntityId(5));
        let q = b.finish(a).unwrap();
        assert!(matches!(execute_symbolic(&q, &g, SplitMask::ALL), Err(Error::Bounds { .. })));
    }
}
