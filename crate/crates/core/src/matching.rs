//! Edge selection over a single row/column (path graph) or a whole region.
//!
//! Conventions shared by every selector:
//! - line offset 0 is a destination (parity 0), roles alternate from there;
//! - ties order by higher similarity, then lower source offset, then lower
//!   destination offset.

use std::cmp::Ordering;

use crate::config::Strategy;
use crate::error::{Error, Result};

/// Cosine similarity. Zero vectors have similarity 0 with everything.
pub fn similarity(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Destination,
}

/// Alternating roles along a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleAssignment(Vec<Role>);

impl RoleAssignment {
    pub fn roles(&self) -> &[Role] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Source)
            .map(|(i, _)| i)
    }

    pub fn source_count(&self) -> usize {
        self.sources().count()
    }
}

/// `parity == false` puts a destination at offset 0.
pub fn assign_roles(line_length: usize, parity: bool) -> Result<RoleAssignment> {
    if line_length < 2 {
        return Err(Error::InvalidLine(line_length));
    }
    Ok(RoleAssignment(
        (0..line_length)
            .map(|i| {
                if (i % 2 == 0) != parity {
                    Role::Destination
                } else {
                    Role::Source
                }
            })
            .collect(),
    ))
}

/// A merge of the token at `src` into the token at `dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub similarity: f64,
}

/// Priority order: higher similarity first, then lower src, then lower dst.
pub fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.src.cmp(&b.src))
        .then(a.dst.cmp(&b.dst))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeSet {
    edges: Vec<Edge>,
}

impl EdgeSet {
    /// Wraps edges, sorted by source offset. Fails if a token is the source of
    /// two edges.
    pub fn new(mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_by_key(|e| (e.src, e.dst));
        if let Some(w) = edges.windows(2).find(|w| w[0].src == w[1].src) {
            return Err(Error::InvalidSpec(format!(
                "token {} is the source of more than one edge",
                w[0].src
            )));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn similarity_sum(&self) -> f64 {
        self.edges.iter().map(|e| e.similarity).sum()
    }

    /// Merge groups over a line/region of `len` tokens.
    ///
    /// Every token follows its `src -> dst` pointer chain to a root (a token
    /// that is not a source). Each group lists its root first, then the other
    /// members in ascending offset; groups are ordered by root offset.
    /// Untouched tokens form singleton groups.
    pub fn groups(&self, len: usize) -> Vec<Vec<usize>> {
        let mut next = vec![usize::MAX; len];
        for e in &self.edges {
            next[e.src] = e.dst;
        }
        let mut root = vec![usize::MAX; len];
        for i in 0..len {
            let mut r = i;
            let mut hops = 0;
            while next[r] != usize::MAX {
                r = next[r];
                hops += 1;
                assert!(hops <= len, "cycle in merge edges");
            }
            root[i] = r;
        }
        let mut slot = vec![usize::MAX; len];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..len {
            if root[i] == i {
                slot[i] = groups.len();
                groups.push(vec![i]);
            }
        }
        for i in 0..len {
            if root[i] != i {
                groups[slot[root[i]]].push(i);
            }
        }
        groups
    }
}

/// One candidate per source: its more similar adjacent neighbour, preferring
/// the lower offset on ties.
pub fn nominate(roles: &RoleAssignment, features: &[&[f32]]) -> Vec<Edge> {
    assert_eq!(roles.len(), features.len(), "roles and features must align");
    let n = features.len();
    roles
        .sources()
        .map(|i| {
            let left = (i > 0).then(|| (i - 1, similarity(features[i], features[i - 1])));
            let right = (i + 1 < n).then(|| (i + 1, similarity(features[i], features[i + 1])));
            let (dst, sim) = match (left, right) {
                (Some(l), Some(r)) => {
                    if r.1 > l.1 {
                        r
                    } else {
                        l
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => unreachable!("line length is at least 2"),
            };
            Edge {
                src: i,
                dst,
                similarity: sim,
            }
        })
        .collect()
}

fn top_k(mut candidates: Vec<Edge>, k: usize, context: &str) -> Result<EdgeSet> {
    if k > candidates.len() {
        return Err(Error::InfeasibleRate {
            requested: k,
            available: candidates.len(),
            context: context.to_string(),
        });
    }
    candidates.sort_by(edge_order);
    candidates.truncate(k);
    EdgeSet::new(candidates)
}

/// The `k` best nominations.
pub fn select_edges_bipartite(candidates: &[Edge], k: usize) -> Result<EdgeSet> {
    top_k(candidates.to_vec(), k, "bipartite nominations")
}

/// The `k` most similar path-graph edges. Edge `i` joins offsets `i` and
/// `i + 1` and is recorded as `src = i + 1, dst = i`, so consecutive picks
/// chain into one group.
pub fn select_edges_naive(features: &[&[f32]], k: usize) -> Result<EdgeSet> {
    if features.len() < 2 {
        return Err(Error::InvalidLine(features.len()));
    }
    let candidates = features
        .windows(2)
        .enumerate()
        .map(|(i, w)| Edge {
            src: i + 1,
            dst: i,
            similarity: similarity(w[0], w[1]),
        })
        .collect();
    top_k(candidates, k, "path-graph edges")
}

/// Bipartite matching over a flattened region: even flat indices are
/// destinations, odd ones sources, and each source may nominate any
/// destination regardless of distance.
pub fn select_edges_global(features: &[&[f32]], k: usize) -> Result<EdgeSet> {
    if features.len() < 2 {
        return Err(Error::InvalidLine(features.len()));
    }
    let candidates = (1..features.len())
        .step_by(2)
        .map(|src| {
            let mut best = Edge {
                src,
                dst: 0,
                similarity: f64::NEG_INFINITY,
            };
            for dst in (0..features.len()).step_by(2) {
                let s = similarity(features[src], features[dst]);
                if s > best.similarity {
                    best.dst = dst;
                    best.similarity = s;
                }
            }
            best
        })
        .collect();
    top_k(candidates, k, "global bipartite sources")
}

/// Edge selection for one row or column under a path-graph strategy.
pub fn match_line(strategy: Strategy, features: &[&[f32]], k: usize) -> Result<EdgeSet> {
    match strategy {
        Strategy::BipartiteLocal => {
            if k == 0 {
                return Ok(EdgeSet::default());
            }
            let roles = assign_roles(features.len(), false)?;
            select_edges_bipartite(&nominate(&roles, features), k)
        }
        Strategy::NaiveLocal => {
            if k == 0 {
                return Ok(EdgeSet::default());
            }
            select_edges_naive(features, k)
        }
        Strategy::BipartiteGlobal => select_edges_global(features, k),
    }
}

/// Largest `k` a strategy can deliver on a line (or flattened region) of `len` tokens.
pub fn max_merges(strategy: Strategy, len: usize) -> usize {
    match strategy {
        Strategy::BipartiteLocal | Strategy::BipartiteGlobal => len / 2,
        Strategy::NaiveLocal => len.saturating_sub(1),
    }
}
