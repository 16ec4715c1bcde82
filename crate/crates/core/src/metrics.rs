//! Evaluation: exact-cluster precision and recall, cluster counts, verifier
//! confusion, stratified ranking hit rates and accuracy against human effort.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GroundTruth, Stratum};
use crate::eventlog::{apply, Event, LogError, LogRecord};
use crate::graph::{AnnotationId, DecisionLabel, IdentityGraph};
use crate::sim::TrueRelation;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("partitions cover different elements: {0}")]
    ElementMismatch(String),
    #[error("query `{0}` has no stratum tag")]
    MissingTag(AnnotationId),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub n_extracted: usize,
    pub n_truth: usize,
    pub extracted_exact: usize,
    pub truth_exact: usize,
    pub precision_frac: f64,
    pub recall_frac: f64,
    pub gm: f64,
}

fn frac(hits: usize, total: usize, other_total: usize) -> f64 {
    match (total, other_total) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => hits as f64 / total as f64,
    }
}

/// Counts clusters that appear verbatim, as sets, on both sides. Runs in time
/// linear in the number of elements.
pub fn exact_cluster_scores<T, E, R>(extracted: &[E], truth: &[R]) -> Result<ClusterScores, MetricsError>
where
    T: Hash + Eq + std::fmt::Debug,
    E: AsRef<[T]>,
    R: AsRef<[T]>,
{
    let mut truth_of: HashMap<&T, usize> = HashMap::new();
    for (i, cluster) in truth.iter().enumerate() {
        for x in cluster.as_ref() {
            if truth_of.insert(x, i).is_some() {
                return Err(MetricsError::ElementMismatch(format!("{x:?} repeated in truth")));
            }
        }
    }
    let mut seen = 0usize;
    let mut exact = 0usize;
    let mut placed: HashMap<&T, ()> = HashMap::with_capacity(truth_of.len());
    for cluster in extracted {
        let cluster = cluster.as_ref();
        let mut target = None;
        let mut uniform = true;
        for x in cluster {
            let Some(&t) = truth_of.get(x) else {
                return Err(MetricsError::ElementMismatch(format!("{x:?} missing from truth")));
            };
            if placed.insert(x, ()).is_some() {
                return Err(MetricsError::ElementMismatch(format!("{x:?} repeated in extracted")));
            }
            match target {
                None => target = Some(t),
                Some(prev) if prev != t => uniform = false,
                _ => {}
            }
        }
        seen += cluster.len();
        if let (true, Some(t)) = (uniform, target) {
            if truth[t].as_ref().len() == cluster.len() {
                exact += 1;
            }
        }
    }
    if seen != truth_of.len() {
        return Err(MetricsError::ElementMismatch(format!(
            "extracted covers {seen} elements, truth covers {}",
            truth_of.len()
        )));
    }

    let n_extracted = extracted.iter().filter(|c| !c.as_ref().is_empty()).count();
    let n_truth = truth.iter().filter(|c| !c.as_ref().is_empty()).count();
    let precision_frac = frac(exact, n_extracted, n_truth);
    let recall_frac = frac(exact, n_truth, n_extracted);
    Ok(ClusterScores {
        n_extracted,
        n_truth,
        extracted_exact: exact,
        truth_exact: exact,
        precision_frac,
        recall_frac,
        gm: (precision_frac * recall_frac).sqrt(),
    })
}

pub fn cluster_count<E: AsRef<[T]>, T>(extracted: &[E]) -> usize {
    extracted.iter().filter(|c| !c.as_ref().is_empty()).count()
}

/// Current clustering and ground truth over the annotations present in
/// `graph`, optionally without unidentifiable ones.
pub fn graph_partitions(
    graph: &IdentityGraph,
    truth: &GroundTruth,
    include_unidentifiable: bool,
) -> (Vec<Vec<AnnotationId>>, Vec<Vec<AnnotationId>>) {
    let keep = |id: &AnnotationId| include_unidentifiable || graph.annotation(id).is_some_and(|a| a.identifiable);
    let extracted: Vec<Vec<AnnotationId>> = graph
        .clusters()
        .into_iter()
        .map(|c| c.members.into_iter().filter(|m| keep(m)).collect::<Vec<_>>())
        .filter(|c| !c.is_empty())
        .collect();
    let ids: Vec<&AnnotationId> = graph
        .annotations()
        .iter()
        .map(|a| &a.id)
        .filter(|id| keep(id))
        .collect();
    let truth_part = truth.partition_of(ids, true);
    (extracted, truth_part)
}

/// Exact-cluster scores of the current graph against ground truth.
pub fn score_graph(
    graph: &IdentityGraph,
    truth: &GroundTruth,
    include_unidentifiable: bool,
) -> Result<ClusterScores, MetricsError> {
    let (extracted, truth_part) = graph_partitions(graph, truth, include_unidentifiable);
    exact_cluster_scores(&extracted, &truth_part)
}

/// Truth classes aligned with the graph's annotation order, for scoring the
/// live clustering without rebuilding id-keyed partitions.
#[derive(Debug, Clone, Default)]
pub struct IndexedTruth {
    class_of: Vec<Option<u32>>,
    class_size: Vec<usize>,
    names: HashMap<String, u32>,
}

impl IndexedTruth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the next annotation; `None` leaves it out of scoring.
    pub fn push(&mut self, individual: Option<&str>) {
        let class = individual.map(|name| {
            let next = self.names.len() as u32;
            let c = *self.names.entry(name.to_string()).or_insert(next);
            if c as usize == self.class_size.len() {
                self.class_size.push(0);
            }
            self.class_size[c as usize] += 1;
            c
        });
        self.class_of.push(class);
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    /// Same scores as [`exact_cluster_scores`] over clusters given as
    /// annotation indices.
    pub fn score(&self, clusters: &[Vec<usize>]) -> ClusterScores {
        let mut exact = 0;
        let mut n_extracted = 0;
        for cluster in clusters {
            let mut kept = cluster.iter().filter_map(|&i| self.class_of[i]);
            let Some(first) = kept.next() else { continue };
            n_extracted += 1;
            let mut size = 1;
            let mut uniform = true;
            for c in kept {
                size += 1;
                uniform &= c == first;
            }
            if uniform && self.class_size[first as usize] == size {
                exact += 1;
            }
        }
        let n_truth = self.class_size.len();
        let precision_frac = frac(exact, n_extracted, n_truth);
        let recall_frac = frac(exact, n_truth, n_extracted);
        ClusterScores {
            n_extracted,
            n_truth,
            extracted_exact: exact,
            truth_exact: exact,
            precision_frac,
            recall_frac,
            gm: (precision_frac * recall_frac).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub human_decisions: u64,
    /// Last event applied when the point was taken.
    pub seq: u64,
    pub gm: f64,
    pub precision_frac: f64,
    pub recall_frac: f64,
    pub cluster_count: usize,
}

impl CurvePoint {
    pub fn new(human_decisions: u64, seq: u64, scores: &ClusterScores) -> Self {
        Self {
            human_decisions,
            seq,
            gm: scores.gm,
            precision_frac: scores.precision_frac,
            recall_frac: scores.recall_frac,
            cluster_count: scores.n_extracted,
        }
    }
}

/// Point `e` describes the last state reached with exactly `e` human
/// decisions, so a run with `n` decisions has `n + 1` points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffortCurve {
    pub points: Vec<CurvePoint>,
}

impl EffortCurve {
    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            out.serialize(p)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Rebuilds the effort curve by replaying an event log against ground truth.
pub fn effort_curve(
    records: &[LogRecord],
    truth: &GroundTruth,
    include_unidentifiable: bool,
) -> Result<EffortCurve, MetricsError> {
    let mut graph = IdentityGraph::new();
    let mut scoring = IndexedTruth::new();
    let mut points = Vec::new();
    let mut effort = 0u64;
    let point = |graph: &IdentityGraph, scoring: &IndexedTruth, effort: u64| {
        CurvePoint::new(effort, graph.last_seq(), &scoring.score(&graph.cluster_indices()))
    };
    for rec in records {
        if rec.counts_as_effort() {
            points.push(point(&graph, &scoring, effort));
            effort += 1;
        }
        apply(&mut graph, rec)?;
        if let Event::AnnotationAdded { annotation } = &rec.event {
            let individual = truth
                .individual(&annotation.id)
                .ok_or_else(|| MetricsError::ElementMismatch(format!("{:?} missing from truth", annotation.id)))?;
            let scored = include_unidentifiable || annotation.identifiable;
            scoring.push(scored.then_some(individual));
        }
    }
    points.push(point(&graph, &scoring, effort));
    Ok(EffortCurve { points })
}

/// Counts indexed `[true relation][emitted label]`, both in
/// same/different/incomparable order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfusion {
    pub counts: [[u64; 3]; 3],
    /// Per emitted label; absent when the label was never emitted.
    pub precision: [Option<f64>; 3],
    /// Per true relation; absent when the relation never occurred.
    pub recall: [Option<f64>; 3],
}

impl VerifierConfusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_rates(&self, truth: TrueRelation) -> Option<[f64; 3]> {
        let row = self.counts[truth.index()];
        let n: u64 = row.iter().sum();
        (n > 0).then(|| row.map(|c| c as f64 / n as f64))
    }
}

pub fn verifier_confusion<'a>(
    trials: impl IntoIterator<Item = &'a (TrueRelation, DecisionLabel)>,
) -> VerifierConfusion {
    let mut counts = [[0u64; 3]; 3];
    for (t, l) in trials {
        counts[t.index()][l.index()] += 1;
    }
    let mut precision = [None; 3];
    let mut recall = [None; 3];
    for c in 0..3 {
        let emitted: u64 = (0..3).map(|r| counts[r][c]).sum();
        precision[c] = (emitted > 0).then(|| counts[c][c] as f64 / emitted as f64);
        let actual: u64 = counts[c].iter().sum();
        recall[c] = (actual > 0).then(|| counts[c][c] as f64 / actual as f64);
    }
    VerifierConfusion {
        counts,
        precision,
        recall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTag {
    pub stratum: Stratum,
    pub prior_sightings: usize,
}

/// What ranking produced for one streamed query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query: AnnotationId,
    pub tag: Option<QueryTag>,
    /// Top candidates, best first.
    pub candidates: Vec<(AnnotationId, f64)>,
    pub gallery_size: usize,
    /// Whether any gallery member showed the same individual.
    pub mate_in_gallery: bool,
    /// Whether the query ended up in a cluster with any candidate.
    #[serde(default)]
    pub accepted: bool,
}

/// Prior sighting buckets: 0, 1, 2-4, 5-9, 10+.
pub fn sighting_bucket(prior: usize) -> &'static str {
    match prior {
        0 => "0",
        1 => "1",
        2..=4 => "2-4",
        5..=9 => "5-9",
        _ => "10+",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankCell {
    pub stratum: Option<Stratum>,
    pub bucket: String,
    pub queries: usize,
    pub with_mate: usize,
    pub top1_hits: usize,
    pub topk_hits: usize,
    pub without_mate: usize,
    pub correct_rejections: usize,
    pub top1_rate: Option<f64>,
    pub topk_rate: Option<f64>,
    pub correct_rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankEval {
    pub k: usize,
    pub cells: Vec<RankCell>,
}

impl RankEval {
    pub fn cell(&self, stratum: Stratum, bucket: &str) -> Option<&RankCell> {
        self.cells
            .iter()
            .find(|c| c.stratum == Some(stratum) && c.bucket == bucket)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "stratum",
            "bucket",
            "queries",
            "with_mate",
            "top1_hits",
            "topk_hits",
            "without_mate",
            "correct_rejections",
            "top1_rate",
            "topk_rate",
            "correct_rejection_rate",
        ])?;
        let opt = |r: Option<f64>| r.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            out.write_record([
                c.stratum.map_or("all", Stratum::as_str).to_string(),
                c.bucket.clone(),
                c.queries.to_string(),
                c.with_mate.to_string(),
                c.top1_hits.to_string(),
                c.topk_hits.to_string(),
                c.without_mate.to_string(),
                c.correct_rejections.to_string(),
                opt(c.top1_rate),
                opt(c.topk_rate),
                opt(c.correct_rejection_rate),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Hit rates per stratum and prior-sighting bucket. Queries with a true mate in
/// the gallery score top-1/top-k hits; queries without one score a correct
/// rejection when no candidate was accepted.
pub fn rank_eval(records: &[RankRecord], truth: &GroundTruth, k: usize) -> Result<RankEval, MetricsError> {
    let mut cells: BTreeMap<(Stratum, &'static str), RankCell> = BTreeMap::new();
    for r in records {
        let tag = r.tag.ok_or_else(|| MetricsError::MissingTag(r.query.clone()))?;
        let bucket = sighting_bucket(tag.prior_sightings);
        let cell = cells.entry((tag.stratum, bucket)).or_insert_with(|| RankCell {
            stratum: Some(tag.stratum),
            bucket: bucket.to_string(),
            ..RankCell::default()
        });
        cell.queries += 1;
        let me = truth.individual(&r.query);
        let is_mate = |id: &AnnotationId| me.is_some() && truth.individual(id) == me;
        if r.mate_in_gallery {
            cell.with_mate += 1;
            if r.candidates.first().is_some_and(|(id, _)| is_mate(id)) {
                cell.top1_hits += 1;
            }
            if r.candidates.iter().take(k).any(|(id, _)| is_mate(id)) {
                cell.topk_hits += 1;
            }
        } else {
            cell.without_mate += 1;
            if !r.accepted {
                cell.correct_rejections += 1;
            }
        }
    }
    let rate = |hits: usize, n: usize| (n > 0).then(|| hits as f64 / n as f64);
    let cells = cells
        .into_values()
        .map(|mut c| {
            c.top1_rate = rate(c.top1_hits, c.with_mate);
            c.topk_rate = rate(c.topk_hits, c.with_mate);
            c.correct_rejection_rate = rate(c.correct_rejections, c.without_mate);
            c
        })
        .collect();
    Ok(RankEval { k, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(groups: &[&[&str]]) -> Vec<Vec<String>> {
        groups
            .iter()
            .map(|g| g.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn identical_partitions() {
        let s = exact_cluster_scores(&p(&[&["a", "b"], &["c"]]), &p(&[&["a", "b"], &["c"]])).unwrap();
        assert_eq!((s.precision_frac, s.recall_frac, s.gm), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_blob_has_no_exact_match() {
        let s = exact_cluster_scores(&p(&[&["a", "b", "c"]]), &p(&[&["a", "b"], &["c"]])).unwrap();
        assert_eq!(s.extracted_exact, 0);
        assert_eq!(s.gm, 0.0);
    }

    #[test]
    fn partial_match() {
        let s = exact_cluster_scores(&p(&[&["a", "b"], &["c"], &["d"]]), &p(&[&["a", "b"], &["c", "d"]])).unwrap();
        assert_eq!((s.extracted_exact, s.n_extracted, s.n_truth), (1, 3, 2));
        assert!((s.precision_frac - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall_frac, 0.5);
        assert!((s.gm - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
        assert!((s.gm - 0.408).abs() < 1e-3);
    }

    #[test]
    fn empty_partitions() {
        let empty: Vec<Vec<String>> = Vec::new();
        let s = exact_cluster_scores(&empty, &empty).unwrap();
        assert_eq!((s.precision_frac, s.recall_frac, s.gm), (1.0, 1.0, 1.0));
        assert_eq!(cluster_count(&empty), 0);
    }

    #[test]
    fn element_mismatch() {
        assert!(exact_cluster_scores(&p(&[&["a"]]), &p(&[&["b"]])).is_err());
        assert!(exact_cluster_scores(&p(&[&["a"], &["a"]]), &p(&[&["a"]])).is_err());
        assert!(exact_cluster_scores(&p(&[&["a"]]), &p(&[&["a"], &["b"]])).is_err());
    }

    #[test]
    fn five_singletons() {
        assert_eq!(cluster_count(&p(&[&["a"], &["b"], &["c"], &["d"], &["e"]])), 5);
    }

    #[test]
    fn confusion_diagonal_and_empty() {
        let trials: Vec<_> = TrueRelation::ALL.iter().map(|&t| (t, t.label())).collect();
        let c = verifier_confusion(&trials);
        assert_eq!(c.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(c.precision, [Some(1.0); 3]);
        let e = verifier_confusion(&[]);
        assert_eq!(e.counts, [[0; 3]; 3]);
        assert_eq!(e.recall, [None; 3]);
        assert_eq!(e.row_rates(TrueRelation::Same), None);
    }

    fn brute_force(extracted: &[Vec<u8>], truth: &[Vec<u8>]) -> (usize, usize) {
        let as_set = |c: &Vec<u8>| c.iter().copied().collect::<std::collections::BTreeSet<_>>();
        let e = extracted
            .iter()
            .filter(|c| truth.iter().any(|t| as_set(t) == as_set(c)))
            .count();
        let t = truth
            .iter()
            .filter(|t| extracted.iter().any(|c| as_set(t) == as_set(c)))
            .count();
        (e, t)
    }

    fn labels_to_partition(labels: &[usize], order: &[u8]) -> Vec<Vec<u8>> {
        let mut groups: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for &x in order {
            groups.entry(labels[x as usize]).or_default().push(x);
        }
        groups.into_values().collect()
    }

    proptest! {
        #[test]
        fn matches_exhaustive_set_equality(
            n in 0usize..=12,
            a in proptest::collection::vec(0usize..12, 12),
            b in proptest::collection::vec(0usize..12, 12),
            perm in Just((0u8..12).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let order: Vec<u8> = perm.into_iter().filter(|&x| (x as usize) < n).collect();
            let ex = labels_to_partition(&a[..n], &order);
            let tr = labels_to_partition(&b[..n], &order);
            let s = exact_cluster_scores(&ex, &tr).unwrap();
            let (e, t) = brute_force(&ex, &tr);
            prop_assert_eq!(s.extracted_exact, e);
            prop_assert_eq!(s.truth_exact, t);
            prop_assert!((0.0..=1.0).contains(&s.gm));
            let same = exact_cluster_scores(&ex, &ex).unwrap();
            prop_assert_eq!(same.gm, 1.0);
            let mut rev: Vec<Vec<u8>> = ex.iter().rev().map(|c| c.iter().rev().copied().collect()).collect();
            let shift = usize::from(!rev.is_empty());
            rev.rotate_left(shift);
            prop_assert_eq!(exact_cluster_scores(&rev, &tr).unwrap(), s);

            let mut indexed = IndexedTruth::new();
            let names: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            for name in &names[..n] {
                indexed.push(Some(name));
            }
            let ex_idx: Vec<Vec<usize>> = ex.iter().map(|c| c.iter().map(|&x| x as usize).collect()).collect();
            prop_assert_eq!(indexed.score(&ex_idx), s);
        }
    }

    fn curve_log() -> (Vec<LogRecord>, GroundTruth) {
        use crate::graph::{Annotation, DecisionSource, Pair, ReviewDecision};
        let mut truth = GroundTruth::default();
        let mut log = Vec::new();
        for (i, (id, ind, ok)) in [("a", "x", true), ("b", "x", true), ("c", "y", true), ("d", "y", false)]
            .into_iter()
            .enumerate()
        {
            truth.identity_of.insert(id.into(), ind.into());
            truth.identifiable.insert(id.into(), ok);
            log.push(LogRecord::annotation(Annotation {
                id: id.into(),
                species: "s".into(),
                viewpoint: "left".into(),
                quality: 1.0,
                identifiable: ok,
                added_at: i as u64 + 1,
                image_url: None,
            }));
        }
        let steps = [
            ("a", "b", DecisionLabel::Same, DecisionSource::Algorithm, false),
            ("b", "c", DecisionLabel::Same, DecisionSource::Human, true),
            ("b", "c", DecisionLabel::Different, DecisionSource::Human, true),
            ("c", "d", DecisionLabel::Same, DecisionSource::Human, false),
        ];
        for (i, (x, y, label, source, effort)) in steps.into_iter().enumerate() {
            log.push(LogRecord::decision(
                ReviewDecision {
                    pair: Pair::new(x, y).unwrap(),
                    label,
                    source,
                    confidence: 1.0,
                    seq: 5 + i as u64,
                },
                effort,
            ));
        }
        (log, truth)
    }

    #[test]
    fn effort_curve_points_match_scores_of_replayed_prefixes() {
        let (log, truth) = curve_log();
        for include in [false, true] {
            let curve = effort_curve(&log, &truth, include).unwrap();
            assert_eq!(curve.points.len(), 3);
            for p in &curve.points {
                let prefix: Vec<_> = log.iter().filter(|r| r.seq <= p.seq).cloned().collect();
                let g = crate::eventlog::replay(&prefix, None).unwrap();
                let s = score_graph(&g, &truth, include).unwrap();
                assert_eq!(*p, CurvePoint::new(p.human_decisions, p.seq, &s));
            }
            assert_eq!(curve.points[1].gm, 0.0);
        }
    }

    #[test]
    fn effort_curve_requires_truth_for_every_annotation() {
        let (log, mut truth) = curve_log();
        truth.identity_of.remove(&AnnotationId::from("c"));
        assert!(matches!(
            effort_curve(&log, &truth, false),
            Err(MetricsError::ElementMismatch(_))
        ));
    }

    fn tagged(query: &str, stratum: Stratum, prior: usize, cands: &[&str], mate: bool, accepted: bool) -> RankRecord {
        RankRecord {
            query: query.into(),
            tag: Some(QueryTag {
                stratum,
                prior_sightings: prior,
            }),
            candidates: cands.iter().map(|&c| (AnnotationId::from(c), 0.5)).collect(),
            gallery_size: cands.len(),
            mate_in_gallery: mate,
            accepted,
        }
    }

    fn truth() -> GroundTruth {
        let mut t = GroundTruth::default();
        for (a, i) in [("q1", "x"), ("g1", "x"), ("g2", "y"), ("q2", "z"), ("q3", "y")] {
            t.identity_of.insert(a.into(), i.into());
            t.identifiable.insert(a.into(), true);
        }
        t
    }

    #[test]
    fn rank_eval_hits_and_rejections() {
        let records = vec![
            tagged("q1", Stratum::Trained, 1, &["g1", "g2"], true, true),
            tagged("q3", Stratum::Trained, 1, &["g1", "g2"], true, true),
            tagged("q2", Stratum::Novel, 0, &["g1", "g2"], false, false),
        ];
        let ev = rank_eval(&records, &truth(), 2).unwrap();
        let trained = ev.cell(Stratum::Trained, "1").unwrap();
        assert_eq!(trained.top1_rate, Some(0.5));
        assert_eq!(trained.topk_rate, Some(1.0));
        let novel = ev.cell(Stratum::Novel, "0").unwrap();
        assert_eq!(novel.correct_rejection_rate, Some(1.0));
        assert_eq!(novel.top1_rate, None);
    }

    #[test]
    fn rank_eval_requires_tags() {
        let mut r = tagged("q1", Stratum::Trained, 1, &["g1"], true, true);
        r.tag = None;
        assert!(matches!(rank_eval(&[r], &truth(), 1), Err(MetricsError::MissingTag(_))));
    }
}
