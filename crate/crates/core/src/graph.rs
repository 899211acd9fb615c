//! Undirected social graph over dense user indices.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Undirected simple graph. Adjacency lists are sorted and symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    adjacency: Vec<Vec<UserId>>,
    edge_count: usize,
}

/// What `load_edge_list` saw while reading.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub lines_read: usize,
    pub self_loops_dropped: usize,
    pub duplicate_edges: usize,
    /// Dense index -> external id from the file.
    pub external_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Star,
    Path,
    Complete,
    ErdosRenyi,
}

impl SocialGraph {
    /// Builds a graph from undirected pairs; self-loops and duplicates are dropped.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        for (u, v) in edges {
            for w in [u, v] {
                if w >= node_count {
                    return Err(Error::UserOutOfRange { user: w, node_count });
                }
            }
            if u == v {
                continue;
            }
            adjacency[u].push(UserId(v as u32));
            adjacency[v].push(UserId(u as u32));
        }
        Ok(Self::finish(adjacency).0)
    }

    // Sorts, dedups and counts. Returns the graph and the number of removed duplicates.
    fn finish(mut adjacency: Vec<Vec<UserId>>) -> (Self, usize) {
        let mut removed = 0;
        let mut degree_sum = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            removed += before - list.len();
            degree_sum += list.len();
        }
        let graph = SocialGraph { adjacency, edge_count: degree_sum / 2 };
        (graph, removed / 2)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, u: UserId) -> usize {
        self.adjacency[u.index()].len()
    }

    /// Sorted neighbors of `u`.
    pub fn neighbors(&self, u: UserId) -> Result<&[UserId]> {
        self.adjacency
            .get(u.index())
            .map(Vec::as_slice)
            .ok_or(Error::UserOutOfRange { user: u.index(), node_count: self.node_count() })
    }

    /// Unchecked neighbor access for hot loops.
    #[inline]
    pub(crate) fn adj(&self, u: UserId) -> &[UserId] {
        &self.adjacency[u.index()]
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.node_count() as u32).map(UserId)
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, UserId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| {
                let u = UserId(u as u32);
                list.iter().filter(move |&&v| v > u).map(move |&v| (u, v))
            })
    }

    /// Writes the canonical dense-id edge list accepted by [`load_edge_list`].
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Reads a SNAP-style edge list: one `u v` pair per line, `#` comments,
/// any whitespace. External ids are remapped to dense indices by ascending
/// external id, so a dense edge list loads back onto itself.
pub fn load_edge_list<R: BufRead>(source: R) -> Result<(SocialGraph, LoadReport)> {
    let mut report = LoadReport::default();
    let mut pairs: Vec<(u64, u64)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        report.lines_read += 1;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let mut next_id = || -> Result<u64> {
            let tok = tokens.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a non-negative integer: {tok:?}"),
            })
        };
        let a = next_id()?;
        let b = next_id()?;
        if let Some(extra) = tokens.next() {
            return Err(Error::Parse { line: lineno, message: format!("unexpected token {extra:?}") });
        }
        pairs.push((a, b));
    }

    if pairs.is_empty() {
        return Err(Error::EmptyGraph);
    }

    let mut external: Vec<u64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    external.sort_unstable();
    external.dedup();
    let dense: HashMap<u64, u32> = external.iter().enumerate().map(|(i, &raw)| (raw, i as u32)).collect();

    let mut adjacency = vec![Vec::new(); external.len()];
    for (a, b) in pairs {
        let (u, v) = (dense[&a], dense[&b]);
        if u == v {
            report.self_loops_dropped += 1;
            continue;
        }
        adjacency[u as usize].push(UserId(v));
        adjacency[v as usize].push(UserId(u));
    }
    let (graph, duplicates) = SocialGraph::finish(adjacency);
    report.duplicate_edges = duplicates;
    report.external_ids = external;
    Ok((graph, report))
}

/// [`load_edge_list`] on a file; I/O failures carry the path.
pub fn load_edge_list_file(path: impl AsRef<Path>) -> Result<(SocialGraph, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_edge_list(BufReader::new(file))
}

/// Deterministic test fixtures. For `Star` node 0 is the center; for `Path`
/// nodes are chained in index order.
pub fn synthetic_graph(kind: SyntheticKind, n: usize, edge_prob: f64, seed: u64) -> Result<SocialGraph> {
    let mut rng = SimRng::seed_from_u64(seed);
    if n == 0 {
        return Err(Error::Config("synthetic graph needs at least one node".into()));
    }
    let edges: Vec<(usize, usize)> = match kind {
        SyntheticKind::Star => (1..n).map(|v| (0, v)).collect(),
        SyntheticKind::Path => (1..n).map(|v| (v - 1, v)).collect(),
        SyntheticKind::Complete => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
        SyntheticKind::ErdosRenyi => {
            if !(0.0..=1.0).contains(&edge_prob) {
                return Err(Error::Config(format!("edge_prob {edge_prob} outside [0, 1]")));
            }
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < edge_prob {
                        edges.push((u, v));
                    }
                }
            }
            edges
        }
    };
    SocialGraph::from_edges(n, edges)
}
