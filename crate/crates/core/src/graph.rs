//! The undirected heterogeneous question/user/tag graph.
//!
//! Nodes are laid out kind-major (questions, then users, then tags) so that
//! global indices, embeddings and checkpoints are reproducible. Edges are
//! unweighted; a repeated interaction collapses into one edge.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grad::SparseMatrix;
use crate::model::{InteractionRecord, NodeCounts, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    /// User to question they asked.
    Asked,
    /// User to question they answered.
    Answered,
    /// Question to one of its tags.
    Tagged,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Asked => "asked",
            EdgeKind::Answered => "answered",
            EdgeKind::Tagged => "tagged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "asked" => Some(EdgeKind::Asked),
            "answered" => Some(EdgeKind::Answered),
            "tagged" => Some(EdgeKind::Tagged),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    /// User for asked/answered edges, question for tagged edges.
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

fn edge_kind_allowed(kind: EdgeKind, src: NodeKind, dst: NodeKind) -> bool {
    match kind {
        EdgeKind::Asked | EdgeKind::Answered => src == NodeKind::User && dst == NodeKind::Question,
        EdgeKind::Tagged => src == NodeKind::Question && dst == NodeKind::Tag,
    }
}

/// What to do with cold-question tags that have no training edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownTagPolicy {
    /// Drop unknown tags with a warning; fail only if none remain.
    #[default]
    Drop,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqaGraph {
    counts: NodeCounts,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<usize>>,
    /// (question, user) pairs where the asker also answered.
    self_answers: Vec<(NodeId, NodeId)>,
}

impl CqaGraph {
    /// Builds a graph over `counts` nodes from an explicit edge list.
    pub fn from_edges(counts: NodeCounts, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut by_pair: BTreeMap<(NodeId, NodeId), Edge> = BTreeMap::new();
        let mut self_answers = Vec::new();
        for e in edges {
            if !edge_kind_allowed(e.kind, e.src.kind, e.dst.kind) {
                return Err(Error::format(format!("{} edge between {} and {}", e.kind.as_str(), e.src, e.dst)));
            }
            if !counts.contains(e.src) || !counts.contains(e.dst) {
                return Err(Error::UnknownNode(format!("{} or {}", e.src, e.dst)));
            }
            match by_pair.get_mut(&(e.src, e.dst)) {
                None => {
                    by_pair.insert((e.src, e.dst), e);
                }
                Some(prev) if prev.kind != e.kind => {
                    // asker answering their own question: keep one asked edge
                    prev.kind = EdgeKind::Asked;
                    self_answers.push((e.dst, e.src));
                }
                Some(_) => {}
            }
        }
        self_answers.sort();
        self_answers.dedup();
        let edges: Vec<Edge> = by_pair.into_values().collect();
        let mut neighbors = vec![Vec::new(); counts.total()];
        for e in &edges {
            let (a, b) = (counts.global(e.src), counts.global(e.dst));
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(CqaGraph {
            counts,
            edges,
            neighbors,
            self_answers,
        })
    }

    pub fn counts(&self) -> NodeCounts {
        self.counts
    }

    pub fn node_count(&self) -> usize {
        self.counts.total()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn self_answers(&self) -> &[(NodeId, NodeId)] {
        &self.self_answers
    }

    pub fn global(&self, id: NodeId) -> usize {
        self.counts.global(id)
    }

    pub fn node_at(&self, global: usize) -> NodeId {
        self.counts.node_at(global)
    }

    /// Sorted global indices adjacent to `global`.
    pub fn neighbors(&self, global: usize) -> &[usize] {
        &self.neighbors[global]
    }

    pub fn degree(&self, global: usize) -> usize {
        self.neighbors[global].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// True when the node exists and has at least one edge.
    pub fn is_connected_node(&self, id: NodeId) -> bool {
        self.counts.contains(id) && self.degree(self.global(id)) > 0
    }

    /// Order-independent fingerprint of counts and edges.
    pub fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.counts.questions.hash(&mut h);
        self.counts.users.hash(&mut h);
        self.counts.tags.hash(&mut h);
        self.edges.hash(&mut h);
        h.finish()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = self.counts;
        writeln!(out, "cqagraph v1 {} {} {}", c.questions, c.users, c.tags)?;
        for e in &self.edges {
            writeln!(out, "{} {} {}", c.global(e.src), c.global(e.dst), e.kind.as_str())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty graph file"))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "cqagraph" || fields[1] != "v1" {
            return Err(Error::format(format!("bad graph header `{header}`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad count `{s}`")));
        let counts = NodeCounts {
            questions: num(fields[2])?,
            users: num(fields[3])?,
            tags: num(fields[4])?,
        };
        let mut edges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(i + 2, format!("bad edge line `{line}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let src: usize = parts[0].parse().map_err(|_| bad())?;
            let dst: usize = parts[1].parse().map_err(|_| bad())?;
            let kind = EdgeKind::parse(parts[2]).ok_or_else(bad)?;
            if src >= counts.total() || dst >= counts.total() {
                return Err(bad());
            }
            edges.push(Edge {
                src: counts.node_at(src),
                dst: counts.node_at(dst),
                kind,
            });
        }
        CqaGraph::from_edges(counts, edges)
    }
}

fn record_edges(r: &InteractionRecord) -> impl Iterator<Item = Edge> + '_ {
    [
        Edge {
            src: r.asker,
            dst: r.question,
            kind: EdgeKind::Asked,
        },
        Edge {
            src: r.answerer,
            dst: r.question,
            kind: EdgeKind::Answered,
        },
    ]
    .into_iter()
    .chain(r.tags.iter().map(move |&t| Edge {
        src: r.question,
        dst: t,
        kind: EdgeKind::Tagged,
    }))
}

/// Builds the graph over exactly the nodes the records mention.
pub fn build_graph<'a>(records: impl IntoIterator<Item = &'a InteractionRecord> + Clone) -> Result<CqaGraph> {
    let mut counts = NodeCounts::default();
    let mut any = false;
    for r in records.clone() {
        any = true;
        counts.questions = counts.questions.max(r.question.index() + 1);
        counts.users = counts.users.max(r.asker.index() + 1).max(r.answerer.index() + 1);
        for t in &r.tags {
            counts.tags = counts.tags.max(t.index() + 1);
        }
    }
    if !any {
        return Err(Error::EmptyInput("no records to build a graph from".into()));
    }
    build_graph_with_counts(records, counts)
}

/// Builds the graph over a fixed node space; nodes without records stay isolated.
pub fn build_graph_with_counts<'a>(records: impl IntoIterator<Item = &'a InteractionRecord>, counts: NodeCounts) -> Result<CqaGraph> {
    CqaGraph::from_edges(counts, records.into_iter().flat_map(record_edges))
}

/// Symmetrically normalized adjacency with self-loops,
/// `D^-1/2 (A + I) D^-1/2` where `D` is the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Arc<SparseMatrix>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Arc<SparseMatrix> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.shape().0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

pub fn normalize(graph: &CqaGraph) -> NormalizedAdjacency {
    let n = graph.node_count();
    let deg: Vec<f64> = (0..n).map(|i| (graph.degree(i) + 1) as f64).collect();
    let rows = (0..n)
        .map(|i| {
            std::iter::once(i)
                .chain(graph.neighbors(i).iter().copied())
                .map(|j| (j, 1.0 / (deg[i] * deg[j]).sqrt()))
                .collect()
        })
        .collect();
    NormalizedAdjacency {
        matrix: Arc::new(SparseMatrix::from_rows(n, rows)),
    }
}

/// Returns a copy of `graph` with one new question node linked to `tags`
/// (and to `asker`, when known). The base graph is left untouched.
pub fn attach_cold_question(
    graph: &CqaGraph,
    tags: &[NodeId],
    asker: Option<NodeId>,
    policy: UnknownTagPolicy,
) -> Result<(CqaGraph, NodeId)> {
    let mut known = Vec::with_capacity(tags.len());
    for &t in tags {
        if t.kind != NodeKind::Tag {
            return Err(Error::UnknownTag(format!("{t} is not a tag")));
        }
        if graph.is_connected_node(t) {
            known.push(t);
        } else if policy == UnknownTagPolicy::Fail {
            return Err(Error::UnknownTag(t.to_string()));
        } else {
            log::warn!("dropping tag {t} unseen in training");
        }
    }
    known.sort();
    known.dedup();
    if known.is_empty() {
        return Err(Error::UnknownTag(format!("none of {} tags is known", tags.len())));
    }
    if let Some(a) = asker {
        if a.kind != NodeKind::User || !graph.counts.contains(a) {
            return Err(Error::UnknownNode(a.to_string()));
        }
    }
    let mut counts = graph.counts;
    let cold = NodeId::question(counts.questions as u32);
    counts.questions += 1;
    let extra = known
        .iter()
        .map(|&t| Edge {
            src: cold,
            dst: t,
            kind: EdgeKind::Tagged,
        })
        .chain(asker.map(|a| Edge {
            src: a,
            dst: cold,
            kind: EdgeKind::Asked,
        }));
    let extended = CqaGraph::from_edges(counts, graph.edges.iter().copied().chain(extra))?;
    Ok((extended, cold))
}
