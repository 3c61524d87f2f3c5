use std::collections::BTreeSet;

use super::{KnowledgeGraph, Node, NodeId};

fn sorted<'g>(graph: &'g KnowledgeGraph, ids: BTreeSet<&NodeId>) -> Vec<&'g Node> {
    let mut nodes: Vec<&Node> = ids.into_iter().filter_map(|id| graph.node(id)).collect();
    nodes.sort_by(|a, b| (&a.name, &a.id).cmp(&(&b.name, &b.id)));
    nodes
}

/// Tails of every `(head, relation, ?)` triple whose head has the given
/// label and name, sorted by name. Empty when the head is absent.
pub fn pattern_query<'g>(
    graph: &'g KnowledgeGraph,
    head_label: &str,
    head_name: &str,
    relation: &str,
) -> Vec<&'g Node> {
    match graph.find(head_label, head_name) {
        Some(head) => follow(graph, &[head], relation),
        None => Vec::new(),
    }
}

/// One hop along `relation` from each of `from`, deduplicated and sorted by name.
pub fn follow<'g>(graph: &'g KnowledgeGraph, from: &[&Node], relation: &str) -> Vec<&'g Node> {
    let tails =
        from.iter().flat_map(|n| graph.outgoing(&n.id)).filter(|t| t.relation == relation).map(|t| &t.tail).collect();
    sorted(graph, tails)
}

/// Chained pattern query: starts at one node and follows each relation in turn.
pub fn pattern_query_chain<'g>(
    graph: &'g KnowledgeGraph,
    head_label: &str,
    head_name: &str,
    relations: &[&str],
) -> Vec<&'g Node> {
    let Some(head) = graph.find(head_label, head_name) else {
        return Vec::new();
    };
    let mut frontier = vec![head];
    for r in relations {
        frontier = follow(graph, &frontier, r);
    }
    frontier
}
