//! Exhaustive first-order satisfaction, used as an oracle for the set-based
//! executor. Membership of `v` in a node is decided top-down by quantifying
//! over every possible binding of the node's input variable.

use std::collections::HashSet;

use super::EntitySet;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, SplitMask};
use crate::query::{NodeId, Query, QueryNode};

pub const MAX_ENTITIES: usize = 64;
pub const MAX_BOUND_VARIABLES: usize = 3;

struct Oracle<'a> {
    q: &'a Query,
    facts: HashSet<(u32, u32, u32)>,
    n: u32,
}

impl Oracle<'_> {
    fn holds(&self, h: u32, r: RelationId, t: u32) -> bool {
        if r.is_inverse() {
            self.facts.contains(&(t, r.inverse().0, h))
        } else {
            self.facts.contains(&(h, r.0, t))
        }
    }

    fn sat(&self, id: NodeId, v: u32) -> bool {
        match self.q.node(id) {
            QueryNode::Anchor(e) => e.0 == v,
            QueryNode::Projection { rel, child } => (0..self.n).any(|z| self.sat(*child, z) && self.holds(z, *rel, v)),
            QueryNode::Intersection(cs) => cs.iter().all(|&c| self.sat(c, v)),
            QueryNode::Union(cs) => cs.iter().any(|&c| self.sat(c, v)),
            QueryNode::Negation(c) => !self.sat(*c, v),
        }
    }
}

/// Answers by enumerating all variable assignments. Refuses graphs with more
/// than [`MAX_ENTITIES`] entities or queries with more than
/// [`MAX_BOUND_VARIABLES`] existential variables.
pub fn brute_force_answers(q: &Query, g: &KnowledgeGraph, mask: SplitMask) -> Result<EntitySet> {
    q.validate_against(g)?;
    if g.num_entities() > MAX_ENTITIES {
        return Err(Error::Refused(format!(
            "{} entities exceeds the limit of {MAX_ENTITIES}",
            g.num_entities()
        )));
    }
    if q.bound_variables() > MAX_BOUND_VARIABLES {
        return Err(Error::Refused(format!(
            "{} bound variables exceeds the limit of {MAX_BOUND_VARIABLES}",
            q.bound_variables()
        )));
    }
    let facts = Split::ALL
        .into_iter()
        .filter(|s| mask.contains(*s))
        .flat_map(|s| g.triples(s).iter())
        .map(|t| (t.head.0, t.rel.0, t.tail.0))
        .collect();
    let oracle = Oracle {
        q,
        facts,
        n: g.num_entities() as u32,
    };
    Ok((0..oracle.n)
        .filter(|&v| oracle.sat(q.root(), v))
        .map(EntityId)
        .collect())
}
