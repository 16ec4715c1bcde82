//! Identity graph: annotations, pairwise review decisions, and the clustering
//! they induce through connectivity over active `Same` edges.

mod components;
mod resolution;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use components::Components;
use resolution::{multicut, CutOutcome, EdgeWeight, LocalEdge};

pub use resolution::{ResolutionPlan, EXACT_CUT_LIMIT};
pub use types::{
    ActiveLabel, Annotation, AnnotationId, Cluster, ClusterName, ClusteringDelta, Conflict, DecisionLabel,
    DecisionSource, MergeEvent, Pair, ReviewDecision, SplitEvent,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("annotation `{0}` already exists")]
    DuplicateAnnotation(AnnotationId),
    #[error("annotation `{id}` has quality {quality} outside [0, 1]")]
    InvalidQuality { id: AnnotationId, quality: f64 },
    #[error("unknown annotation `{0}`")]
    UnknownAnnotation(AnnotationId),
    #[error("self-pair on annotation `{0}`")]
    SelfPair(AnnotationId),
    #[error("sequence number {seq} does not follow last sequence number {last}")]
    NonMonotoneSeq { seq: u64, last: u64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("conflict on cluster {0} is stale")]
    StaleConflict(ClusterName),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

type EdgeKey = (u32, u32);

fn edge_key(x: u32, y: u32) -> EdgeKey {
    (x.min(y), x.max(y))
}

/// Annotations plus review decisions, with the induced clustering maintained
/// incrementally.
///
/// Annotation addition and decisions share one sequence space: an annotation's
/// `added_at` and a decision's `seq` must both exceed [`IdentityGraph::last_seq`].
#[derive(Debug, Clone, Default)]
pub struct IdentityGraph {
    annotations: Vec<Annotation>,
    index: HashMap<AnnotationId, u32>,
    by_added_at: HashMap<u64, u32>,
    log: Vec<ReviewDecision>,
    history: HashMap<EdgeKey, Vec<usize>>,
    active: HashMap<EdgeKey, ActiveLabel>,
    same_adj: Vec<Vec<u32>>,
    diff_adj: Vec<Vec<u32>>,
    components: Components,
    last_seq: u64,
}

impl IdentityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq + 1
    }

    /// Annotations in insertion order.
    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn annotation(&self, id: &AnnotationId) -> Option<&Annotation> {
        self.index.get(id).map(|&i| &self.annotations[i as usize])
    }

    pub fn contains(&self, id: &AnnotationId) -> bool {
        self.index.contains_key(id)
    }

    pub fn decision_log(&self) -> &[ReviewDecision] {
        &self.log
    }

    fn idx(&self, id: &AnnotationId) -> Result<u32, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownAnnotation(id.clone()))
    }

    fn id_of(&self, idx: u32) -> &AnnotationId {
        &self.annotations[idx as usize].id
    }

    fn pair_of(&self, x: u32, y: u32) -> Pair {
        Pair::new(self.id_of(x).clone(), self.id_of(y).clone()).expect("distinct indices")
    }

    fn name_of_slot(&self, slot: u32) -> ClusterName {
        ClusterName(self.annotations[self.components.oldest(slot) as usize].added_at)
    }

    fn slot_of_name(&self, name: ClusterName) -> Option<u32> {
        let &idx = self.by_added_at.get(&name.0)?;
        let slot = self.components.slot(idx);
        (self.components.oldest(slot) == idx).then_some(slot)
    }

    pub fn add_annotation(&mut self, ann: Annotation) -> Result<ClusterName, GraphError> {
        ann.validate()?;
        if self.index.contains_key(&ann.id) {
            return Err(GraphError::DuplicateAnnotation(ann.id));
        }
        if ann.added_at <= self.last_seq {
            return Err(GraphError::NonMonotoneSeq {
                seq: ann.added_at,
                last: self.last_seq,
            });
        }
        let idx = self.annotations.len() as u32;
        self.last_seq = ann.added_at;
        self.index.insert(ann.id.clone(), idx);
        self.by_added_at.insert(ann.added_at, idx);
        self.annotations.push(ann);
        self.same_adj.push(Vec::new());
        self.diff_adj.push(Vec::new());
        let slot = self.components.push(idx);
        Ok(self.name_of_slot(slot))
    }

    /// Appends a decision to the log, applies precedence, and updates the
    /// clustering.
    pub fn record_decision(&mut self, d: ReviewDecision) -> Result<ClusteringDelta, GraphError> {
        let x = self.idx(d.pair.first())?;
        let y = self.idx(d.pair.second())?;
        if d.seq <= self.last_seq {
            return Err(GraphError::NonMonotoneSeq {
                seq: d.seq,
                last: self.last_seq,
            });
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(GraphError::InvalidConfidence(d.confidence));
        }

        let key = edge_key(x, y);
        let before: HashSet<EdgeKey> = [x, y]
            .into_iter()
            .flat_map(|n| self.internal_different(self.components.slot(n)))
            .collect();

        self.last_seq = d.seq;
        self.history.entry(key).or_default().push(self.log.len());
        let candidate = ActiveLabel {
            label: d.label,
            source: d.source,
            confidence: d.confidence,
            seq: d.seq,
        };
        self.log.push(d);

        let mut delta = ClusteringDelta {
            seq: candidate.seq,
            ..ClusteringDelta::default()
        };
        let previous = match self.active.get(&key) {
            Some(cur) if !cur.is_overridden_by(candidate.source, candidate.seq) => return Ok(delta),
            cur => cur.map(|c| c.label),
        };
        self.active.insert(key, candidate);
        delta.label_changed = previous != Some(candidate.label);
        if !delta.label_changed {
            return Ok(delta);
        }

        match previous {
            Some(DecisionLabel::Same) => {
                remove_adj(&mut self.same_adj, x, y);
                self.split_after_removal(x, y, &mut delta);
            }
            Some(DecisionLabel::Different) => remove_adj(&mut self.diff_adj, x, y),
            _ => {}
        }
        match candidate.label {
            DecisionLabel::Same => {
                self.same_adj[x as usize].push(y);
                self.same_adj[y as usize].push(x);
                let (sx, sy) = (self.components.slot(x), self.components.slot(y));
                if sx != sy {
                    let (nx, ny) = (self.name_of_slot(sx), self.name_of_slot(sy));
                    self.components.union(x, y);
                    let (into, absorbed) = if nx < ny { (nx, ny) } else { (ny, nx) };
                    delta.merged.push(MergeEvent { into, absorbed });
                }
            }
            DecisionLabel::Different => {
                self.diff_adj[x as usize].push(y);
                self.diff_adj[y as usize].push(x);
            }
            DecisionLabel::Incomparable => {}
        }

        let slots: BTreeSet<u32> = [x, y].into_iter().map(|n| self.components.slot(n)).collect();
        for slot in slots {
            let edges = self.internal_different(slot);
            if edges.iter().any(|e| !before.contains(e)) {
                delta.new_conflicts.push(self.conflict_from(slot, edges));
            }
        }
        delta.new_conflicts.sort_by_key(|c| c.cluster);
        Ok(delta)
    }

    fn split_after_removal(&mut self, x: u32, y: u32, delta: &mut ClusteringDelta) {
        let slot = self.components.slot(x);
        if self.reachable(x, y) {
            return;
        }
        let from = self.name_of_slot(slot);
        let members: Vec<u32> = self.components.members(slot).to_vec();
        let mut seen: HashSet<u32> = HashSet::with_capacity(members.len());
        let mut parts = Vec::new();
        for &m in &members {
            if seen.contains(&m) {
                continue;
            }
            let mut part = vec![m];
            seen.insert(m);
            let mut queue = VecDeque::from([m]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.same_adj[u as usize] {
                    if seen.insert(v) {
                        part.push(v);
                        queue.push_back(v);
                    }
                }
            }
            parts.push(part);
        }
        let slots = self.components.repartition(slot, parts);
        let mut into: Vec<ClusterName> = slots.iter().map(|&s| self.name_of_slot(s)).collect();
        into.sort();
        delta.created.extend(into.iter().copied().filter(|&n| n != from));
        delta.split.push(SplitEvent { from, into });
    }

    fn reachable(&self, from: u32, to: u32) -> bool {
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for &v in &self.same_adj[u as usize] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        false
    }

    fn internal_different(&self, slot: u32) -> Vec<EdgeKey> {
        let mut out = Vec::new();
        for &u in self.components.members(slot) {
            for &v in &self.diff_adj[u as usize] {
                if u < v && self.components.slot(v) == slot {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn conflict_from(&self, slot: u32, edges: Vec<EdgeKey>) -> Conflict {
        let mut pairs: Vec<Pair> = edges.into_iter().map(|(u, v)| self.pair_of(u, v)).collect();
        pairs.sort();
        Conflict {
            cluster: self.name_of_slot(slot),
            negative_edges_inside: pairs,
        }
    }

    pub fn active_label(&self, pair: &Pair) -> Option<ActiveLabel> {
        let x = self.index.get(pair.first())?;
        let y = self.index.get(pair.second())?;
        self.active.get(&edge_key(*x, *y)).copied()
    }

    /// Every decision ever recorded on the pair, oldest first.
    pub fn decisions_on(&self, pair: &Pair) -> Vec<&ReviewDecision> {
        let (Some(&x), Some(&y)) = (self.index.get(pair.first()), self.index.get(pair.second())) else {
            return Vec::new();
        };
        self.history
            .get(&edge_key(x, y))
            .map(|idxs| idxs.iter().map(|&i| &self.log[i]).collect())
            .unwrap_or_default()
    }

    /// Active labels sorted by pair.
    pub fn active_labels(&self) -> Vec<(Pair, ActiveLabel)> {
        let mut out: Vec<(Pair, ActiveLabel)> = self
            .active
            .iter()
            .map(|(&(x, y), &l)| (self.pair_of(x, y), l))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn cluster_of(&self, id: &AnnotationId) -> Option<ClusterName> {
        let &idx = self.index.get(id)?;
        Some(self.name_of_slot(self.components.slot(idx)))
    }

    pub fn same_cluster(&self, a: &AnnotationId, b: &AnnotationId) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&x), Some(&y)) => self.components.same(x, y),
            _ => false,
        }
    }

    /// Members of a cluster in insertion order.
    pub fn cluster_members(&self, name: ClusterName) -> Option<Vec<AnnotationId>> {
        let slot = self.slot_of_name(name)?;
        let mut members = self.components.members(slot).to_vec();
        members.sort_unstable();
        Some(members.into_iter().map(|i| self.id_of(i).clone()).collect())
    }

    pub fn cluster_count(&self) -> usize {
        self.components.live_slots().count()
    }

    /// Connected components over active `Same` edges, ordered by name, members
    /// in insertion order.
    pub fn clusters(&self) -> Vec<Cluster> {
        let mut out: Vec<Cluster> = self
            .components
            .live_slots()
            .map(|slot| {
                let mut members = self.components.members(slot).to_vec();
                members.sort_unstable();
                Cluster {
                    name: self.name_of_slot(slot),
                    members: members.into_iter().map(|i| self.id_of(i).clone()).collect(),
                }
            })
            .collect();
        out.sort_by_key(|c| c.name);
        out
    }

    /// Cluster membership as dense groups of insertion indices; cheap path for metrics.
    pub fn cluster_indices(&self) -> Vec<Vec<usize>> {
        self.components
            .live_slots()
            .map(|slot| self.components.members(slot).iter().map(|&m| m as usize).collect())
            .collect()
    }

    pub fn find_conflicts(&self) -> Vec<Conflict> {
        let mut by_slot: BTreeMap<ClusterName, (u32, Vec<EdgeKey>)> = BTreeMap::new();
        for (&(x, y), label) in &self.active {
            if label.label == DecisionLabel::Different && self.components.same(x, y) {
                let slot = self.components.slot(x);
                by_slot
                    .entry(self.name_of_slot(slot))
                    .or_insert_with(|| (slot, Vec::new()))
                    .1
                    .push((x, y));
            }
        }
        by_slot
            .into_values()
            .map(|(slot, edges)| self.conflict_from(slot, edges))
            .collect()
    }

    pub fn conflict_for(&self, name: ClusterName) -> Option<Conflict> {
        let slot = self.slot_of_name(name)?;
        let edges = self.internal_different(slot);
        (!edges.is_empty()).then(|| self.conflict_from(slot, edges))
    }

    /// Plans a split for a current conflict. Human `Same` edges are never cut;
    /// algorithm edges cost their confidence. When no such cut exists the plan
    /// is escalated and lists every pair on the contradicting paths.
    pub fn propose_resolution(&self, conflict: &Conflict) -> Result<ResolutionPlan, GraphError> {
        let current = self.conflict_for(conflict.cluster);
        if current.as_ref() != Some(conflict) {
            return Err(GraphError::StaleConflict(conflict.cluster));
        }
        let slot = self.slot_of_name(conflict.cluster).expect("checked above");
        let mut members = self.components.members(slot).to_vec();
        members.sort_unstable();
        let local: HashMap<u32, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();

        let mut edges = Vec::new();
        let mut edge_pairs = Vec::new();
        let mut edge_conf = Vec::new();
        for &u in &members {
            let mut nbrs: Vec<u32> = self.same_adj[u as usize].iter().copied().filter(|&v| u < v).collect();
            nbrs.sort_unstable();
            for v in nbrs {
                let label = self.active[&edge_key(u, v)];
                let weight = match label.source {
                    DecisionSource::Human => EdgeWeight::Uncuttable,
                    DecisionSource::Algorithm => EdgeWeight::Finite(label.confidence),
                };
                edges.push(LocalEdge {
                    u: local[&u],
                    v: local[&v],
                    weight,
                });
                edge_pairs.push(self.pair_of(u, v));
                edge_conf.push(label.confidence);
            }
        }
        let terminal_pairs = conflict.negative_edges_inside.clone();
        let terminals: Vec<(usize, usize)> = terminal_pairs
            .iter()
            .map(|p| {
                let x = self.index[p.first()];
                let y = self.index[p.second()];
                (local[&x], local[&y])
            })
            .collect();

        match multicut(members.len(), &edges, &terminals) {
            CutOutcome::Cut(cut) => {
                let mut cut_sorted = cut.clone();
                cut_sorted.sort_by(|&a, &b| {
                    edge_conf[a]
                        .total_cmp(&edge_conf[b])
                        .then_with(|| edge_pairs[a].cmp(&edge_pairs[b]))
                });
                let cut_weight = cut.iter().map(|&e| edge_conf[e]).sum();
                let cut_pairs: Vec<Pair> = cut_sorted.iter().map(|&e| edge_pairs[e].clone()).collect();
                let removed: HashSet<usize> = cut.into_iter().collect();
                let sides = local_components(&members, &edges, &removed)
                    .into_iter()
                    .map(|part| part.into_iter().map(|i| self.id_of(members[i]).clone()).collect())
                    .collect();
                Ok(ResolutionPlan {
                    cluster: conflict.cluster,
                    escalated: false,
                    cut_weight: Some(cut_weight),
                    review: cut_pairs.clone(),
                    cut: cut_pairs,
                    sides,
                })
            }
            CutOutcome::Inseparable(paths) => {
                let mut review: BTreeSet<Pair> = BTreeSet::new();
                for (t, path) in paths {
                    review.insert(terminal_pairs[t].clone());
                    review.extend(path.into_iter().map(|e| edge_pairs[e].clone()));
                }
                Ok(ResolutionPlan {
                    cluster: conflict.cluster,
                    escalated: true,
                    cut_weight: None,
                    cut: Vec::new(),
                    review: review.into_iter().collect(),
                    sides: vec![members.iter().map(|&m| self.id_of(m).clone()).collect()],
                })
            }
        }
    }

    /// Derived state keyed by the last applied sequence number.
    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            seq: self.last_seq,
            annotations: self.annotations.clone(),
            active: self
                .active_labels()
                .into_iter()
                .map(|(pair, l)| ActiveEntry {
                    pair,
                    label: l.label,
                    source: l.source,
                    confidence: l.confidence,
                    seq: l.seq,
                })
                .collect(),
            clusters: self.clusters(),
        }
    }

    /// Rebuilds a graph from a snapshot. The decision log restarts empty; the
    /// snapshot's cluster listing is checked against the rebuilt clustering.
    pub fn from_snapshot(snapshot: &GraphSnapshot) -> Result<Self, GraphError> {
        let mut graph = IdentityGraph::new();
        for ann in &snapshot.annotations {
            graph
                .add_annotation(ann.clone())
                .map_err(|e| GraphError::InvalidSnapshot(e.to_string()))?;
        }
        for entry in &snapshot.active {
            let x = graph
                .idx(entry.pair.first())
                .map_err(|e| GraphError::InvalidSnapshot(e.to_string()))?;
            let y = graph
                .idx(entry.pair.second())
                .map_err(|e| GraphError::InvalidSnapshot(e.to_string()))?;
            if entry.seq > snapshot.seq {
                return Err(GraphError::InvalidSnapshot(format!(
                    "active label on {} has seq {} beyond snapshot seq {}",
                    entry.pair, entry.seq, snapshot.seq
                )));
            }
            graph.active.insert(
                edge_key(x, y),
                ActiveLabel {
                    label: entry.label,
                    source: entry.source,
                    confidence: entry.confidence,
                    seq: entry.seq,
                },
            );
            match entry.label {
                DecisionLabel::Same => {
                    graph.same_adj[x as usize].push(y);
                    graph.same_adj[y as usize].push(x);
                    graph.components.union(x, y);
                }
                DecisionLabel::Different => {
                    graph.diff_adj[x as usize].push(y);
                    graph.diff_adj[y as usize].push(x);
                }
                DecisionLabel::Incomparable => {}
            }
        }
        if snapshot.seq < graph.last_seq {
            return Err(GraphError::InvalidSnapshot(format!(
                "snapshot seq {} precedes annotation seq {}",
                snapshot.seq, graph.last_seq
            )));
        }
        graph.last_seq = snapshot.seq;
        if graph.clusters() != snapshot.clusters {
            return Err(GraphError::InvalidSnapshot(
                "cluster listing does not match active labels".into(),
            ));
        }
        Ok(graph)
    }
}

fn remove_adj(adj: &mut [Vec<u32>], x: u32, y: u32) {
    adj[x as usize].retain(|&v| v != y);
    adj[y as usize].retain(|&v| v != x);
}

fn local_components(members: &[u32], edges: &[LocalEdge], removed: &HashSet<usize>) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut adj = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        if !removed.contains(&i) {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut part = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    part.push(v);
                    queue.push_back(v);
                }
            }
        }
        part.sort_unstable();
        out.push(part);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveEntry {
    pub pair: Pair,
    pub label: DecisionLabel,
    pub source: DecisionSource,
    pub confidence: f64,
    pub seq: u64,
}

/// Serializable derived state of an [`IdentityGraph`] as of `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub seq: u64,
    pub annotations: Vec<Annotation>,
    pub active: Vec<ActiveEntry>,
    pub clusters: Vec<Cluster>,
}
