//! Split planning for conflicted clusters.
//!
//! A conflict is a cluster whose `Same` edges connect the endpoints of at least
//! one internal `Different` edge. The planner looks for a minimum-weight set of
//! `Same` edges whose removal separates every such pair. Human edges can never
//! be cut; algorithm edges weigh their confidence. Small instances are solved
//! exactly by enumeration, larger ones by repeated s-t minimum cuts.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::types::{AnnotationId, ClusterName, Pair};

/// Largest number of cuttable edges for which the multicut is solved exactly.
pub const EXACT_CUT_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub cluster: ClusterName,
    /// `true` when no removal of algorithm edges separates the contradiction.
    pub escalated: bool,
    /// Total confidence weight of the cut, absent when escalated.
    pub cut_weight: Option<f64>,
    /// Same edges crossing the cut, lowest confidence first.
    pub cut: Vec<Pair>,
    /// Pairs to put in front of a reviewer, in order.
    pub review: Vec<Pair>,
    /// Resulting components if every cut edge were relabelled.
    pub sides: Vec<Vec<AnnotationId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EdgeWeight {
    Finite(f64),
    Uncuttable,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalEdge {
    pub u: usize,
    pub v: usize,
    pub weight: EdgeWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CutOutcome {
    /// Indices into the edge list.
    Cut(Vec<usize>),
    /// Terminal pairs (indices into the terminal list) that stay joined through
    /// uncuttable edges, each with the uncuttable edge path joining them.
    Inseparable(Vec<(usize, Vec<usize>)>),
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, x: usize, y: usize) {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx != ry {
            self.parent[rx.max(ry)] = rx.min(ry);
        }
    }
}

/// Finds a minimum-weight multicut of `edges` over `n` nodes separating every
/// terminal pair.
pub(crate) fn multicut(n: usize, edges: &[LocalEdge], terminals: &[(usize, usize)]) -> CutOutcome {
    let mut hard = Dsu::new(n);
    for e in edges {
        if e.weight == EdgeWeight::Uncuttable {
            hard.union(e.u, e.v);
        }
    }
    let blocked: Vec<usize> = terminals
        .iter()
        .enumerate()
        .filter(|(_, &(s, t))| hard.find(s) == hard.find(t))
        .map(|(i, _)| i)
        .collect();
    if !blocked.is_empty() {
        let paths = blocked
            .into_iter()
            .map(|i| {
                let (s, t) = terminals[i];
                (i, uncuttable_path(n, edges, s, t))
            })
            .collect();
        return CutOutcome::Inseparable(paths);
    }

    let cuttable: Vec<usize> = edges
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.weight, EdgeWeight::Finite(_)))
        .map(|(i, _)| i)
        .collect();

    if cuttable.len() <= EXACT_CUT_LIMIT {
        CutOutcome::Cut(exact_multicut(n, edges, &cuttable, terminals))
    } else {
        CutOutcome::Cut(greedy_multicut(n, edges, terminals))
    }
}

fn weight_of(e: &LocalEdge) -> f64 {
    match e.weight {
        EdgeWeight::Finite(w) => w,
        EdgeWeight::Uncuttable => f64::INFINITY,
    }
}

fn separates(n: usize, edges: &[LocalEdge], removed: &[bool], terminals: &[(usize, usize)]) -> bool {
    let mut dsu = Dsu::new(n);
    for (i, e) in edges.iter().enumerate() {
        if !removed[i] {
            dsu.union(e.u, e.v);
        }
    }
    terminals.iter().all(|&(s, t)| dsu.find(s) != dsu.find(t))
}

fn exact_multicut(n: usize, edges: &[LocalEdge], cuttable: &[usize], terminals: &[(usize, usize)]) -> Vec<usize> {
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut removed = vec![false; edges.len()];
    for mask in 0u32..(1u32 << cuttable.len()) {
        let chosen: Vec<usize> = cuttable
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &e)| e)
            .collect();
        let weight: f64 = chosen.iter().map(|&e| weight_of(&edges[e])).sum();
        if let Some((bw, bc, ref bset)) = best {
            let better = weight < bw || (weight == bw && (chosen.len() < bc || (chosen.len() == bc && chosen < *bset)));
            if !better {
                continue;
            }
        }
        removed.iter_mut().for_each(|r| *r = false);
        for &e in &chosen {
            removed[e] = true;
        }
        if separates(n, edges, &removed, terminals) {
            best = Some((weight, chosen.len(), chosen));
        }
    }
    best.map(|(_, _, set)| set).unwrap_or_default()
}

/// Separates terminal pairs one at a time with s-t minimum cuts.
fn greedy_multicut(n: usize, edges: &[LocalEdge], terminals: &[(usize, usize)]) -> Vec<usize> {
    let mut removed = vec![false; edges.len()];
    loop {
        let mut dsu = Dsu::new(n);
        for (i, e) in edges.iter().enumerate() {
            if !removed[i] {
                dsu.union(e.u, e.v);
            }
        }
        let Some(&(s, t)) = terminals.iter().find(|&&(s, t)| dsu.find(s) == dsu.find(t)) else {
            break;
        };
        for e in st_min_cut(n, edges, &removed, s, t) {
            removed[e] = true;
        }
    }
    (0..edges.len()).filter(|&i| removed[i]).collect()
}

/// Edmonds-Karp on the undirected graph of non-removed edges.
fn st_min_cut(n: usize, edges: &[LocalEdge], removed: &[bool], s: usize, t: usize) -> Vec<usize> {
    // Residual arcs: 2*i is u->v, 2*i+1 is v->u, both with the edge capacity.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut cap = vec![0.0f64; edges.len() * 2];
    for (i, e) in edges.iter().enumerate() {
        if removed[i] {
            continue;
        }
        let w = weight_of(e);
        cap[2 * i] = w;
        cap[2 * i + 1] = w;
        adj[e.u].push(2 * i);
        adj[e.v].push(2 * i + 1);
    }
    let head = |arc: usize| {
        let e = &edges[arc / 2];
        if arc.is_multiple_of(2) {
            e.v
        } else {
            e.u
        }
    };
    loop {
        let mut via = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            if x == t {
                break;
            }
            for &arc in &adj[x] {
                let y = head(arc);
                if !seen[y] && cap[arc] > 1e-12 {
                    seen[y] = true;
                    via[y] = arc;
                    queue.push_back(y);
                }
            }
        }
        if !seen[t] {
            // Cut edges: one endpoint reachable from s in the residual graph.
            return (0..edges.len())
                .filter(|&i| !removed[i] && seen[edges[i].u] != seen[edges[i].v])
                .collect();
        }
        let mut bottleneck = f64::INFINITY;
        let mut y = t;
        while y != s {
            let arc = via[y];
            bottleneck = bottleneck.min(cap[arc]);
            y = head(arc ^ 1);
        }
        let mut y = t;
        while y != s {
            let arc = via[y];
            cap[arc] -= bottleneck;
            cap[arc ^ 1] += bottleneck;
            y = head(arc ^ 1);
        }
    }
}

/// Shortest path from `s` to `t` over uncuttable edges, as edge indices.
fn uncuttable_path(n: usize, edges: &[LocalEdge], s: usize, t: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        if e.weight == EdgeWeight::Uncuttable {
            adj[e.u].push((e.v, i));
            adj[e.v].push((e.u, i));
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut via: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(x) = queue.pop_front() {
        if x == t {
            break;
        }
        for &(y, e) in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                via[y] = Some((x, e));
                queue.push_back(y);
            }
        }
    }
    let mut path = BTreeSet::new();
    let mut y = t;
    while let Some((x, e)) = via[y] {
        path.insert(e);
        y = x;
    }
    path.into_iter().collect()
}
