//! Directed causal graphs with optional per-edge delays and scores, plus
//! their JSON and DOT serializations.
//!
//! Internally vertices are 0-based; the file formats use 1-based indices
//! to match the truth CSVs the generators write. Both serializations are
//! byte-stable: edges are always emitted sorted by `(target, source)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One directed edge `source → target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// 0-based source vertex.
    pub source: usize,
    /// 0-based target vertex.
    pub target: usize,
    /// Time delay in slots (0 = instantaneous); `None` when unknown.
    pub delay: Option<u32>,
    /// Detector score, when the edge came from discovery.
    pub score: Option<f64>,
}

/// A directed graph over `n` vertices with at most one edge per ordered
/// pair; self-loops are legal (self-causation).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CausalGraph {
    n: usize,
    edges: BTreeMap<(usize, usize), (Option<u32>, Option<f64>)>,
}

impl CausalGraph {
    /// Empty graph over `n` vertices.
    pub fn new(n: usize) -> CausalGraph {
        CausalGraph {
            n,
            edges: BTreeMap::new(),
        }
    }

    /// Vertex count.
    pub fn vertex_count(&self) -> usize {
        self.n
    }

    /// Number of edges.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Insert an edge; rejects out-of-range vertices and duplicate ordered
    /// pairs.
    pub fn add_edge(&mut self, edge: Edge) -> Result<()> {
        if edge.source >= self.n || edge.target >= self.n {
            return Err(Error::Graph(format!(
                "edge {}->{} out of range for {} vertices",
                edge.source + 1,
                edge.target + 1,
                self.n
            )));
        }
        let key = (edge.source, edge.target);
        if self.edges.contains_key(&key) {
            return Err(Error::Graph(format!(
                "duplicate edge {}->{}",
                edge.source + 1,
                edge.target + 1
            )));
        }
        self.edges.insert(key, (edge.delay, edge.score));
        Ok(())
    }

    /// True when the ordered pair `(source, target)` is an edge.
    pub fn has_edge(&self, source: usize, target: usize) -> bool {
        self.edges.contains_key(&(source, target))
    }

    /// Delay of an edge, if the edge exists and its delay is known.
    pub fn delay(&self, source: usize, target: usize) -> Option<u32> {
        self.edges.get(&(source, target)).and_then(|&(d, _)| d)
    }

    /// All edges sorted by `(target, source)` — the canonical emission
    /// order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out: Vec<Edge> = self
            .edges
            .iter()
            .map(|(&(source, target), &(delay, score))| Edge {
                source,
                target,
                delay,
                score,
            })
            .collect();
        out.sort_by_key(|e| (e.target, e.source));
        out
    }

    /// Serialize as JSON (`{"n": ..., "edges": [{"src","dst","delay","score"}]}`,
    /// 1-based vertices, edges sorted by `(dst, src)`, unknown fields
    /// omitted). Byte-stable for identical graphs.
    pub fn to_json(&self) -> Result<String> {
        let doc = GraphDoc::from(self);
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parse the JSON produced by [`CausalGraph::to_json`].
    pub fn from_json(text: &str) -> Result<CausalGraph> {
        let doc: GraphDoc = serde_json::from_str(text)?;
        doc.try_into()
    }

    /// Render as a DOT digraph with delays as edge labels. Vertices are
    /// named by `labels` when given (length must then be `n`), otherwise
    /// `S1..Sn`. Edges are sorted by `(target, source)`.
    pub fn to_dot(&self, labels: Option<&[String]>) -> Result<String> {
        if let Some(names) = labels {
            if names.len() != self.n {
                return Err(Error::Graph(format!(
                    "{} labels provided for {} vertices",
                    names.len(),
                    self.n
                )));
            }
        }
        let name = |v: usize| -> String {
            match labels {
                Some(names) => names[v].clone(),
                None => format!("S{}", v + 1),
            }
        };
        let mut out = String::from("digraph causal {\n  rankdir=LR;\n");
        for v in 0..self.n {
            writeln!(out, "  \"{}\";", name(v)).expect("write to string");
        }
        for edge in self.edges() {
            match edge.delay {
                Some(d) => writeln!(
                    out,
                    "  \"{}\" -> \"{}\" [label=\"{}\"];",
                    name(edge.source),
                    name(edge.target),
                    d
                ),
                None => writeln!(
                    out,
                    "  \"{}\" -> \"{}\";",
                    name(edge.source),
                    name(edge.target)
                ),
            }
            .expect("write to string");
        }
        out.push_str("}\n");
        Ok(out)
    }
}

/// JSON wire format (1-based indices).
#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    src: usize,
    dst: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl From<&CausalGraph> for GraphDoc {
    fn from(g: &CausalGraph) -> GraphDoc {
        GraphDoc {
            n: g.n,
            edges: g
                .edges()
                .into_iter()
                .map(|e| EdgeDoc {
                    src: e.source + 1,
                    dst: e.target + 1,
                    delay: e.delay,
                    score: e.score,
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphDoc> for CausalGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<CausalGraph> {
        let mut g = CausalGraph::new(doc.n);
        for e in doc.edges {
            if e.src == 0 || e.dst == 0 {
                return Err(Error::Graph(format!(
                    "edge {}->{} uses 0; vertices are 1-based in files",
                    e.src, e.dst
                )));
            }
            g.add_edge(Edge {
                source: e.src - 1,
                target: e.dst - 1,
                delay: e.delay,
                score: e.score,
            })?;
        }
        Ok(g)
    }
}
