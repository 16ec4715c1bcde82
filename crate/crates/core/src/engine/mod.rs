//! The continual curation loop: rank candidates for each new annotation,
//! verify them algorithmically, escalate what the verifier is unsure about
//! to a human channel, and keep conflicts in front of reviewers until they
//! are resolved.

mod queue;

use std::collections::{HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use queue::{Claim, HumanTask, Lease, TaskId, TaskKind, TaskQueue};

use crate::dataset::{AnnotationRecord, GroundTruth, LabeledAnnotation, StreamItem};
use crate::eventlog::{LogAppender, LogError, LogRecord};
use crate::graph::{
    Annotation, AnnotationId, Cluster, ClusterName, ClusteringDelta, Conflict, DecisionLabel, DecisionSource,
    GraphError, IdentityGraph, Pair, ReviewDecision,
};
use crate::metrics::{
    rank_eval, score_graph, verifier_confusion, ClusterScores, CurvePoint, EffortCurve, IndexedTruth, QueryTag,
    RankEval, RankRecord, VerifierConfusion,
};
use crate::sim::{OracleModel, RankerModel, TrueRelation, VerifierModel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("annotation `{0}` is already in the graph or repeated in the batch")]
    DuplicateQuery(AnnotationId),
    #[error("annotation `{0}` has no ground-truth identity")]
    MissingTruth(AnnotationId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task} is leased to `{holder}`")]
    LeaseViolation { task: TaskId, holder: String },
    #[error("task {0} is not leased; request it first")]
    NotLeased(TaskId),
    #[error("human budget of {0} decisions is exhausted")]
    BudgetExhausted(u64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    SimulatedOracle,
    LiveQueue,
}

fn default_k() -> usize {
    5
}
fn default_theta() -> f64 {
    0.9
}
fn default_rounds() -> u32 {
    50
}
fn default_lease() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_k")]
    pub k_candidates: usize,
    #[serde(default = "default_theta")]
    pub theta_same: f64,
    #[serde(default = "default_theta")]
    pub theta_diff: f64,
    /// `None` means unlimited.
    #[serde(default)]
    pub human_budget: Option<u64>,
    #[serde(default)]
    pub human_channel: ChannelKind,
    /// Conflict re-review rounds allowed per drain of the human channel.
    #[serde(default = "default_rounds")]
    pub convergence_max_rounds: u32,
    #[serde(default = "default_lease")]
    pub lease_seconds: u64,
    /// Score unidentifiable annotations too.
    #[serde(default)]
    pub include_unidentifiable: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k_candidates: default_k(),
            theta_same: default_theta(),
            theta_diff: default_theta(),
            human_budget: None,
            human_channel: ChannelKind::default(),
            convergence_max_rounds: default_rounds(),
            lease_seconds: default_lease(),
            include_unidentifiable: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k_candidates == 0 {
            return Err(EngineError::InvalidConfig("k_candidates must be at least 1".into()));
        }
        for (name, t) in [("theta_same", self.theta_same), ("theta_diff", self.theta_diff)] {
            if !(t > 0.5 && t <= 1.0) {
                return Err(EngineError::InvalidConfig(format!("{name} = {t} must lie in (0.5, 1]")));
            }
        }
        if self.lease_seconds == 0 {
            return Err(EngineError::InvalidConfig("lease_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Task as shown to a reviewer, with context resolved against the current graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub id: TaskId,
    pub kind: TaskKind,
    pub pair: Pair,
    pub priority: f64,
    pub score: Option<f64>,
    pub annotations: [Annotation; 2],
    pub clusters: [ClusterName; 2],
    pub prior_decisions: Vec<ReviewDecision>,
    pub reviewer: Option<String>,
    pub lease_remaining_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch: usize,
    pub queries: Vec<AnnotationId>,
    pub algorithmic_decisions: usize,
    pub human_tasks_created: usize,
    pub merges: usize,
    pub splits: usize,
    pub conflicts_outstanding: usize,
    pub human_decisions_consumed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalState {
    /// No open tasks and no conflicts.
    Quiescent,
    BudgetExhausted,
    MaxRounds,
    /// Live mode with tasks or conflicts still open.
    InProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub terminal: TerminalState,
    pub human_decisions: u64,
    pub algorithmic_decisions: u64,
    pub last_seq: u64,
    pub batches: Vec<BatchReport>,
    pub curve: EffortCurve,
    pub final_scores: ClusterScores,
    pub final_cluster_count: usize,
    /// Individuals with at least one scored annotation in the graph.
    pub truth_individuals: usize,
    pub conflicts_outstanding: usize,
    pub tasks_outstanding: usize,
    pub verifier_confusion: VerifierConfusion,
    pub rank_eval: Option<RankEval>,
    pub clusters: Vec<Cluster>,
}

/// Answers escalated tasks in simulation.
pub trait HumanChannel {
    fn decide(&mut self, task: &HumanTask, truth: TrueRelation) -> DecisionLabel;
}

impl HumanChannel for OracleModel {
    fn decide(&mut self, _task: &HumanTask, truth: TrueRelation) -> DecisionLabel {
        self.answer(truth)
    }
}

const ORACLE_REVIEWER: &str = "oracle";

pub struct Engine {
    config: EngineConfig,
    graph: IdentityGraph,
    truth: GroundTruth,
    scoring: IndexedTruth,
    ranker: RankerModel,
    verifier: VerifierModel,
    queue: TaskQueue,
    log: Vec<LogRecord>,
    sink: Option<LogAppender>,
    human_decisions: u64,
    algorithmic_decisions: u64,
    curve: Vec<CurvePoint>,
    rank_records: Vec<RankRecord>,
    verifier_trials: Vec<(TrueRelation, DecisionLabel)>,
    pending: VecDeque<Vec<StreamItem>>,
    batches: Vec<BatchReport>,
    terminal: TerminalState,
    epoch: Instant,
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        ranker: RankerModel,
        verifier: VerifierModel,
        truth: GroundTruth,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            config,
            graph: IdentityGraph::new(),
            truth,
            scoring: IndexedTruth::new(),
            ranker,
            verifier,
            queue: TaskQueue::new(),
            log: Vec::new(),
            sink: None,
            human_decisions: 0,
            algorithmic_decisions: 0,
            curve: Vec::new(),
            rank_records: Vec::new(),
            verifier_trials: Vec::new(),
            pending: VecDeque::new(),
            batches: Vec::new(),
            terminal: TerminalState::Quiescent,
            epoch: Instant::now(),
        })
    }

    /// Mirrors every future event to `sink` as it happens.
    pub fn with_log_sink(mut self, sink: LogAppender) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn graph(&self) -> &IdentityGraph {
        &self.graph
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    pub fn human_decisions(&self) -> u64 {
        self.human_decisions
    }

    pub fn algorithmic_decisions(&self) -> u64 {
        self.algorithmic_decisions
    }

    pub fn pending_batches(&self) -> usize {
        self.pending.len()
    }

    pub fn budget_left(&self) -> bool {
        self.config.human_budget.is_none_or(|b| self.human_decisions < b)
    }

    fn lease_duration(&self) -> Duration {
        Duration::from_secs(self.config.lease_seconds)
    }

    fn emit(&mut self, record: LogRecord) -> Result<(), EngineError> {
        if let Some(sink) = self.sink.as_mut() {
            sink.append(std::slice::from_ref(&record))?;
        }
        self.log.push(record);
        Ok(())
    }

    fn add(&mut self, record: AnnotationRecord) -> Result<(), EngineError> {
        if !self.truth.identity_of.contains_key(&record.id) {
            return Err(EngineError::MissingTruth(record.id));
        }
        let ann = record.into_annotation(self.graph.next_seq());
        self.graph.add_annotation(ann.clone())?;
        let scored = self.config.include_unidentifiable || ann.identifiable;
        self.scoring
            .push(scored.then(|| self.truth.individual(&ann.id)).flatten());
        self.emit(LogRecord::annotation(ann))
    }

    fn decide(
        &mut self,
        pair: Pair,
        label: DecisionLabel,
        source: DecisionSource,
        confidence: f64,
        human_effort: bool,
    ) -> Result<ClusteringDelta, EngineError> {
        let decision = ReviewDecision {
            pair,
            label,
            source,
            confidence,
            seq: self.graph.next_seq(),
        };
        let delta = self.graph.record_decision(decision.clone())?;
        self.emit(LogRecord::decision(decision, human_effort))?;
        Ok(delta)
    }

    fn enqueue_conflicts(&mut self, conflicts: &[Conflict]) -> Result<usize, EngineError> {
        let mut created = 0;
        for c in conflicts {
            let plan = self.graph.propose_resolution(c)?;
            for pair in plan.review {
                created += usize::from(self.queue.push(pair, TaskKind::Conflict, 0.0, None));
            }
        }
        Ok(created)
    }

    /// Enters the curated labeled set: annotations plus human `Same` chains
    /// over each individual's identifiable members. None of it counts as effort.
    pub fn seed_labeled(&mut self, labeled: &[LabeledAnnotation]) -> Result<(), EngineError> {
        let mut chains: Vec<Vec<AnnotationId>> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for l in labeled {
            if self.graph.contains(&l.record.id) {
                return Err(EngineError::DuplicateQuery(l.record.id.clone()));
            }
            self.add(l.record.clone())?;
            if l.record.identifiable {
                let i = *slot.entry(l.individual.as_str()).or_insert_with(|| {
                    chains.push(Vec::new());
                    chains.len() - 1
                });
                chains[i].push(l.record.id.clone());
            }
        }
        for chain in chains {
            for w in chain.windows(2) {
                let pair = Pair::new(w[0].clone(), w[1].clone())?;
                self.decide(pair, DecisionLabel::Same, DecisionSource::Human, 1.0, false)?;
            }
        }
        Ok(())
    }

    /// Queues stream batches for [`Engine::advance_live`].
    pub fn enqueue_stream(&mut self, batches: impl IntoIterator<Item = Vec<StreamItem>>) {
        self.pending.extend(batches);
    }

    /// Adds and matches one batch of untagged queries.
    pub fn process_batch(&mut self, queries: Vec<AnnotationRecord>) -> Result<BatchReport, EngineError> {
        self.process_tagged(queries.into_iter().map(|q| (q, None)).collect())
    }

    pub fn process_stream_batch(&mut self, items: Vec<StreamItem>) -> Result<BatchReport, EngineError> {
        self.process_tagged(
            items
                .into_iter()
                .map(|it| {
                    let tag = QueryTag {
                        stratum: it.stratum,
                        prior_sightings: it.prior_sightings,
                    };
                    (it.record, Some(tag))
                })
                .collect(),
        )
    }

    fn process_tagged(
        &mut self,
        queries: Vec<(AnnotationRecord, Option<QueryTag>)>,
    ) -> Result<BatchReport, EngineError> {
        let mut seen = HashSet::new();
        for (q, _) in &queries {
            if self.graph.contains(&q.id) || !seen.insert(q.id.clone()) {
                return Err(EngineError::DuplicateQuery(q.id.clone()));
            }
            if !self.truth.identity_of.contains_key(&q.id) {
                return Err(EngineError::MissingTruth(q.id.clone()));
            }
        }

        let database_len = self.graph.len();
        let mut report = BatchReport {
            batch: self.batches.len(),
            queries: queries.iter().map(|(q, _)| q.id.clone()).collect(),
            ..BatchReport::default()
        };
        for (q, _) in &queries {
            self.add(q.clone())?;
        }

        let mut verified: HashSet<Pair> = HashSet::new();
        for (qi, (q, tag)) in queries.iter().enumerate() {
            if !q.identifiable {
                continue;
            }
            let in_batch = queries
                .iter()
                .enumerate()
                .filter(|&(j, (c, _))| j != qi && c.identifiable)
                .map(|(_, (c, _))| (c.id.clone(), 0u8));
            let in_db = self.graph.annotations()[..database_len]
                .iter()
                .filter(|a| a.identifiable)
                .map(|a| (a.id.clone(), 1u8));
            let gallery: Vec<(AnnotationId, u8)> = in_batch.chain(in_db).collect();
            let me = self.truth.individual(&q.id);
            let mate_in_gallery = gallery.iter().any(|(g, _)| self.truth.individual(g) == me);

            let mut scored: Vec<(f64, u8, AnnotationId, TrueRelation)> = gallery
                .into_iter()
                .map(|(g, origin)| {
                    let rel = self.truth.relation(&q.id, &g);
                    (self.ranker.score(rel), origin, g, rel)
                })
                .collect();
            let gallery_size = scored.len();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
            scored.truncate(self.config.k_candidates);

            self.rank_records.push(RankRecord {
                query: q.id.clone(),
                tag: *tag,
                candidates: scored.iter().map(|(s, _, g, _)| (g.clone(), *s)).collect(),
                gallery_size,
                mate_in_gallery,
                accepted: false,
            });

            for (score, _, cand, rel) in scored {
                let pair = Pair::new(q.id.clone(), cand)?;
                if !verified.insert(pair.clone()) {
                    continue;
                }
                let verdict = self.verifier.verify(rel);
                self.verifier_trials.push((rel, verdict.label));
                let accept = match verdict.label {
                    DecisionLabel::Incomparable => true,
                    DecisionLabel::Same => verdict.confidence >= self.config.theta_same,
                    DecisionLabel::Different => verdict.confidence >= self.config.theta_diff,
                };
                if accept {
                    let delta = self.decide(
                        pair,
                        verdict.label,
                        DecisionSource::Algorithm,
                        verdict.confidence,
                        false,
                    )?;
                    self.algorithmic_decisions += 1;
                    report.algorithmic_decisions += 1;
                    report.merges += delta.merged.len();
                    report.splits += delta.split.len();
                    report.human_tasks_created += self.enqueue_conflicts(&delta.new_conflicts)?;
                } else {
                    let created = self
                        .queue
                        .push(pair, TaskKind::Ambiguous, (score - 0.5).abs(), Some(score));
                    report.human_tasks_created += usize::from(created);
                }
            }
        }
        report.conflicts_outstanding = self.graph.find_conflicts().len();
        report.human_decisions_consumed = self.human_decisions;
        self.batches.push(report.clone());
        Ok(report)
    }

    pub fn view(&self, task: &HumanTask, now: Instant) -> TaskView {
        let ann = |id: &AnnotationId| self.graph.annotation(id).cloned().expect("task pairs are in the graph");
        let cluster = |id: &AnnotationId| self.graph.cluster_of(id).expect("task pairs are in the graph");
        TaskView {
            id: task.id,
            kind: task.kind,
            pair: task.pair.clone(),
            priority: task.priority,
            score: task.score,
            annotations: [ann(task.pair.first()), ann(task.pair.second())],
            clusters: [cluster(task.pair.first()), cluster(task.pair.second())],
            prior_decisions: self.graph.decisions_on(&task.pair).into_iter().cloned().collect(),
            reviewer: task.lease.as_ref().map(|l| l.reviewer.clone()),
            lease_remaining_ms: task
                .lease
                .as_ref()
                .map(|l| l.expires_at.saturating_duration_since(now).as_millis() as u64),
        }
    }

    /// Leases the highest-priority open task to `reviewer`. Nothing is handed
    /// out once the budget is spent.
    pub fn next_human_task(&mut self, reviewer: &str, now: Instant) -> Option<TaskView> {
        if !self.budget_left() {
            return None;
        }
        let duration = self.lease_duration();
        let task = self.queue.lease_next(reviewer, now, duration)?.clone();
        Some(self.view(&task, now))
    }

    /// Records a reviewer's answer as a human decision with confidence 1.
    pub fn submit_human_decision(
        &mut self,
        task: TaskId,
        label: DecisionLabel,
        reviewer: &str,
    ) -> Result<ClusteringDelta, EngineError> {
        match self.queue.check_claim(task, reviewer) {
            Claim::Ok => {}
            Claim::UnknownTask => return Err(EngineError::UnknownTask(task)),
            Claim::NotLeased => return Err(EngineError::NotLeased(task)),
            Claim::LeasedTo(holder) => return Err(EngineError::LeaseViolation { task, holder }),
        }
        if let Some(b) = self.config.human_budget.filter(|_| !self.budget_left()) {
            return Err(EngineError::BudgetExhausted(b));
        }
        let task = self.queue.remove(task).expect("claimed");
        self.close_effort_level()?;
        let delta = self.decide(task.pair, label, DecisionSource::Human, 1.0, true)?;
        self.human_decisions += 1;
        self.enqueue_conflicts(&delta.new_conflicts)?;
        Ok(delta)
    }

    fn point(&self) -> Result<CurvePoint, EngineError> {
        let scores = self.scoring.score(&self.graph.cluster_indices());
        Ok(CurvePoint::new(self.human_decisions, self.graph.last_seq(), &scores))
    }

    fn close_effort_level(&mut self) -> Result<(), EngineError> {
        let p = self.point()?;
        self.curve.push(p);
        Ok(())
    }

    /// Answers open tasks through `channel` until the queue and conflicts are
    /// gone, the budget is spent, or the round limit is hit.
    pub fn drain(&mut self, channel: &mut dyn HumanChannel) -> Result<TerminalState, EngineError> {
        let mut rounds = 0;
        let now = self.epoch;
        loop {
            while self.budget_left() {
                let Some(task) = self
                    .queue
                    .lease_next(ORACLE_REVIEWER, now, self.lease_duration())
                    .cloned()
                else {
                    break;
                };
                let truth = self.truth.relation(task.pair.first(), task.pair.second());
                let label = channel.decide(&task, truth);
                self.submit_human_decision(task.id, label, ORACLE_REVIEWER)?;
            }
            let conflicts = self.graph.find_conflicts();
            if !self.queue.is_empty() || (!conflicts.is_empty() && !self.budget_left()) {
                return Ok(TerminalState::BudgetExhausted);
            }
            if conflicts.is_empty() {
                return Ok(TerminalState::Quiescent);
            }
            rounds += 1;
            if rounds > self.config.convergence_max_rounds {
                return Ok(TerminalState::MaxRounds);
            }
            self.enqueue_conflicts(&conflicts)?;
        }
    }

    /// Live mode: once no task is open, re-queues unresolved conflicts or
    /// moves on to the next stream batch. Returns the number of batches processed.
    pub fn advance_live(&mut self) -> Result<usize, EngineError> {
        let mut processed = 0;
        while self.queue.is_empty() {
            let conflicts = self.graph.find_conflicts();
            if !conflicts.is_empty() && self.budget_left() {
                self.enqueue_conflicts(&conflicts)?;
                if !self.queue.is_empty() {
                    break;
                }
            }
            let Some(batch) = self.pending.pop_front() else { break };
            self.process_stream_batch(batch)?;
            processed += 1;
        }
        Ok(processed)
    }

    /// Processes every batch, draining the channel after each.
    pub fn run_to_convergence(
        &mut self,
        stream: impl IntoIterator<Item = Vec<StreamItem>>,
        channel: &mut dyn HumanChannel,
    ) -> Result<RunReport, EngineError> {
        let mut terminal = self.drain(channel)?;
        for batch in stream {
            self.process_stream_batch(batch)?;
            let outcome = self.drain(channel)?;
            if terminal == TerminalState::Quiescent || outcome == TerminalState::BudgetExhausted {
                terminal = outcome;
            }
        }
        self.terminal = terminal;
        self.report()
    }

    /// Current state summarized as a run report. The curve ends with the
    /// present state.
    pub fn report(&self) -> Result<RunReport, EngineError> {
        let scores = score_graph(&self.graph, &self.truth, self.config.include_unidentifiable)
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        let mut points = self.curve.clone();
        points.push(CurvePoint::new(self.human_decisions, self.graph.last_seq(), &scores));

        let records: Vec<RankRecord> = self
            .rank_records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.accepted = r.candidates.iter().any(|(c, _)| self.graph.same_cluster(&r.query, c));
                r
            })
            .collect();
        let rank = (!records.is_empty() && records.iter().all(|r| r.tag.is_some()))
            .then(|| rank_eval(&records, &self.truth, self.config.k_candidates).expect("tags checked"));
        let conflicts_outstanding = self.graph.find_conflicts().len();
        let tasks_outstanding = self.queue.len();
        let terminal = match self.terminal {
            TerminalState::Quiescent if tasks_outstanding > 0 || conflicts_outstanding > 0 => {
                if self.budget_left() {
                    TerminalState::InProgress
                } else {
                    TerminalState::BudgetExhausted
                }
            }
            t => t,
        };
        Ok(RunReport {
            terminal,
            human_decisions: self.human_decisions,
            algorithmic_decisions: self.algorithmic_decisions,
            last_seq: self.graph.last_seq(),
            batches: self.batches.clone(),
            curve: EffortCurve { points },
            final_scores: scores,
            final_cluster_count: scores.n_extracted,
            truth_individuals: scores.n_truth,
            conflicts_outstanding,
            tasks_outstanding,
            verifier_confusion: verifier_confusion(&self.verifier_trials),
            rank_eval: rank,
            clusters: self.graph.clusters(),
        })
    }

    pub fn rank_records(&self) -> &[RankRecord] {
        &self.rank_records
    }

    pub fn verifier_trials(&self) -> &[(TrueRelation, DecisionLabel)] {
        &self.verifier_trials
    }
}
