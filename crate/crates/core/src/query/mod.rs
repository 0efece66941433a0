//! First-order logic queries as computation DAGs over five node kinds.
//!
//! Nodes live in an arena and may only reference earlier nodes, so every
//! query is acyclic by construction. Equality is structural: two queries are
//! equal when their trees (expanded from the root) coincide, regardless of
//! arena layout or sharing.

mod sample;
mod sexpr;
mod structure;

pub use sample::{read_samples, sample_queries, write_samples, QuerySample, SampleRecord, MAX_ATTEMPTS};
pub use sexpr::{parse_query, serialize_query};
pub use structure::{classify_structure, QueryStructure, Shape};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryNode {
    Anchor(EntityId),
    Projection { rel: RelationId, child: NodeId },
    Intersection(Vec<NodeId>),
    Union(Vec<NodeId>),
    Negation(NodeId),
}

impl QueryNode {
    pub fn children(&self) -> &[NodeId] {
        match self {
            QueryNode::Anchor(_) => &[],
            QueryNode::Projection { child, .. } | QueryNode::Negation(child) => std::slice::from_ref(child),
            QueryNode::Intersection(cs) | QueryNode::Union(cs) => cs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    nodes: Vec<QueryNode>,
    root: NodeId,
}

impl Query {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &QueryNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in evaluation order (children before parents). Every
    /// arena node is reachable from the root, so this is `0..len`.
    pub fn post_order(&self) -> impl Iterator<Item = NodeId> {
        0..self.nodes.len()
    }

    pub fn anchors(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Anchor(e) => Some(*e),
            _ => None,
        })
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            QueryNode::Projection { rel, .. } => Some(*rel),
            _ => None,
        })
    }

    /// Existentially quantified variables: projections whose input is itself
    /// a variable rather than a constant anchor.
    pub fn bound_variables(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| match n {
                QueryNode::Projection { child, .. } => !matches!(self.nodes[*child], QueryNode::Anchor(_)),
                _ => false,
            })
            .count()
    }

    /// Checks every id against the graph.
    pub fn validate_against(&self, g: &KnowledgeGraph) -> Result<()> {
        for n in &self.nodes {
            match n {
                QueryNode::Anchor(e) => g.check_entity(*e)?,
                QueryNode::Projection { rel, .. } => g.check_relation(*rel)?,
                _ => {}
            }
        }
        Ok(())
    }

    fn subtree_eq(&self, a: NodeId, other: &Query, b: NodeId) -> bool {
        use QueryNode::*;
        match (&self.nodes[a], &other.nodes[b]) {
            (Anchor(x), Anchor(y)) => x == y,
            (Projection { rel: r1, child: c1 }, Projection { rel: r2, child: c2 }) => {
                r1 == r2 && self.subtree_eq(*c1, other, *c2)
            }
            (Negation(c1), Negation(c2)) => self.subtree_eq(*c1, other, *c2),
            (Intersection(x), Intersection(y)) | (Union(x), Union(y)) => {
                x.len() == y.len() && x.iter().zip(y).all(|(c1, c2)| self.subtree_eq(*c1, other, *c2))
            }
            _ => false,
        }
    }
}

impl PartialEq for Query {
    fn eq(&self, other: &Self) -> bool {
        self.subtree_eq(self.root, other, other.root)
    }
}

impl Eq for Query {}

/// Appends nodes bottom-up; `finish` checks arities and reachability.
#[derive(Debug, Default, Clone)]
pub struct QueryBuilder {
    nodes: Vec<QueryNode>,
}

impl QueryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, node: QueryNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn anchor(&mut self, e: EntityId) -> NodeId {
        self.push(QueryNode::Anchor(e))
    }

    pub fn project(&mut self, rel: RelationId, child: NodeId) -> NodeId {
        self.push(QueryNode::Projection { rel, child })
    }

    pub fn intersect(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(QueryNode::Intersection(children))
    }

    pub fn union(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(QueryNode::Union(children))
    }

    pub fn negate(&mut self, child: NodeId) -> NodeId {
        self.push(QueryNode::Negation(child))
    }

    /// Copies every node of `q` into this arena; returns the new id of its root.
    pub fn append(&mut self, q: &Query) -> NodeId {
        let base = self.nodes.len();
        for node in &q.nodes {
            let shifted = match node {
                QueryNode::Anchor(e) => QueryNode::Anchor(*e),
                QueryNode::Projection { rel, child } => QueryNode::Projection {
                    rel: *rel,
                    child: child + base,
                },
                QueryNode::Intersection(cs) => QueryNode::Intersection(cs.iter().map(|c| c + base).collect()),
                QueryNode::Union(cs) => QueryNode::Union(cs.iter().map(|c| c + base).collect()),
                QueryNode::Negation(c) => QueryNode::Negation(c + base),
            };
            self.nodes.push(shifted);
        }
        q.root + base
    }

    pub fn finish(self, root: NodeId) -> Result<Query> {
        let n = self.nodes.len();
        if root >= n {
            return Err(Error::Usage(format!("root {root} is not a node")));
        }
        let mut reachable = vec![false; n];
        reachable[root] = true;
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if let QueryNode::Intersection(cs) | QueryNode::Union(cs) = node {
                if cs.len() < 2 {
                    return Err(Error::Usage(format!("node {id} needs at least two children")));
                }
            }
            for &c in node.children() {
                if c >= id {
                    return Err(Error::Usage(format!("node {id} references later node {c}")));
                }
                if reachable[id] {
                    reachable[c] = true;
                }
            }
        }
        if let Some(orphan) = reachable.iter().position(|r| !r) {
            return Err(Error::Usage(format!("node {orphan} is unreachable from the root")));
        }
        Ok(Query {
            nodes: self.nodes,
            root,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_validation() {
        let mut b = QueryBuilder::new();
        let a = b.anchor(EntityId(0));
        let i = b.intersect(vec![a]);
        assert!(b.finish(i).is_err());

        let mut b = QueryBuilder::new();
        let a = b.anchor(EntityId(0));
        b.anchor(EntityId(1));
        assert!(b.finish(a).is_err(), "second anchor is orphaned");
    }

    #[test]
    fn structural_equality_ignores_sharing() {
        let mut b = QueryBuilder::new();
        let a = b.anchor(EntityId(0));
        let p = b.project(RelationId(0), a);
        let i = b.intersect(vec![p, p]);
        let shared = b.finish(i).unwrap();

        let mut b = QueryBuilder::new();
        let a1 = b.anchor(EntityId(0));
        let p1 = b.project(RelationId(0), a1);
        let a2 = b.anchor(EntityId(0));
        let p2 = b.project(RelationId(0), a2);
        let i = b.intersect(vec![p1, p2]);
        let expanded = b.finish(i).unwrap();
        assert_eq!(shared, expanded);
        assert_eq!(shared.len(), 3);
    }

    #[test]
    fn bound_variable_count() {
        let mut b = QueryBuilder::new();
        let a = b.anchor(EntityId(0));
        let p1 = b.project(RelationId(0), a);
        let p2 = b.project(RelationId(2), p1);
        let p3 = b.project(RelationId(1), p2);
        assert_eq!(b.finish(p3).unwrap().bound_variables(), 2);
    }
}
