use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::graph::Pair;

pub type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Re-review of a pair named by a resolution plan.
    Conflict,
    /// Verifier output below the auto-accept threshold.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub reviewer: String,
    pub expires_at: Instant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanTask {
    pub id: TaskId,
    pub pair: Pair,
    pub kind: TaskKind,
    /// Lower is served first within a kind.
    pub priority: f64,
    /// Ranking score that produced the task, if any.
    pub score: Option<f64>,
    pub lease: Option<Lease>,
}

type Key = (TaskKind, u64, Pair, TaskId);

fn key(t: &HumanTask) -> Key {
    // non-negative floats order like their bit patterns
    (t.kind, t.priority.max(0.0).to_bits(), t.pair.clone(), t.id)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Claim {
    Ok,
    UnknownTask,
    NotLeased,
    LeasedTo(String),
}

/// Pending human tasks. At most one open task per pair; leased tasks leave
/// the available set until submitted or expired.
#[derive(Debug, Default)]
pub struct TaskQueue {
    next_id: TaskId,
    tasks: BTreeMap<TaskId, HumanTask>,
    by_pair: HashMap<Pair, TaskId>,
    available: BTreeSet<Key>,
    leased: BTreeSet<TaskId>,
}

impl TaskQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: TaskId) -> Option<&HumanTask> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &HumanTask> {
        self.tasks.values()
    }

    pub fn task_for(&self, pair: &Pair) -> Option<&HumanTask> {
        self.by_pair.get(pair).and_then(|id| self.tasks.get(id))
    }

    /// Returns `true` if a task was created. An open task on the same pair is
    /// reused, upgraded to a conflict task if needed.
    pub fn push(&mut self, pair: Pair, kind: TaskKind, priority: f64, score: Option<f64>) -> bool {
        if let Some(&id) = self.by_pair.get(&pair) {
            let task = self.tasks.get_mut(&id).expect("indexed");
            if (kind, priority.to_bits()) < (task.kind, task.priority.to_bits()) {
                let was_available = self.available.remove(&key(task));
                task.kind = kind;
                task.priority = priority;
                if was_available {
                    self.available.insert(key(task));
                }
            }
            return false;
        }
        let id = self.next_id;
        self.next_id += 1;
        let task = HumanTask {
            id,
            pair: pair.clone(),
            kind,
            priority,
            score,
            lease: None,
        };
        self.available.insert(key(&task));
        self.by_pair.insert(pair, id);
        self.tasks.insert(id, task);
        true
    }

    fn expire(&mut self, now: Instant) {
        let expired: Vec<TaskId> = self
            .leased
            .iter()
            .copied()
            .filter(|id| self.tasks[id].lease.as_ref().is_some_and(|l| l.expires_at <= now))
            .collect();
        for id in expired {
            self.leased.remove(&id);
            let task = self.tasks.get_mut(&id).expect("indexed");
            task.lease = None;
            self.available.insert(key(task));
        }
    }

    /// Leases the best available task to `reviewer`. A reviewer already
    /// holding a live lease gets that task back with the lease renewed.
    pub fn lease_next(&mut self, reviewer: &str, now: Instant, duration: Duration) -> Option<&HumanTask> {
        self.expire(now);
        let held = self
            .leased
            .iter()
            .copied()
            .find(|id| self.tasks[id].lease.as_ref().is_some_and(|l| l.reviewer == reviewer));
        let id = match held {
            Some(id) => id,
            None => {
                let k = self.available.pop_first()?;
                self.leased.insert(k.3);
                k.3
            }
        };
        let task = self.tasks.get_mut(&id).expect("indexed");
        task.lease = Some(Lease {
            reviewer: reviewer.to_string(),
            expires_at: now + duration,
        });
        Some(task)
    }

    /// Whether `reviewer` may answer task `id`. An expired lease still
    /// belongs to its holder until someone else takes the task.
    pub fn check_claim(&self, id: TaskId, reviewer: &str) -> Claim {
        match self.tasks.get(&id) {
            None => Claim::UnknownTask,
            Some(HumanTask { lease: None, .. }) => Claim::NotLeased,
            Some(HumanTask { lease: Some(l), .. }) if l.reviewer != reviewer => Claim::LeasedTo(l.reviewer.clone()),
            Some(_) => Claim::Ok,
        }
    }

    pub fn remove(&mut self, id: TaskId) -> Option<HumanTask> {
        let task = self.tasks.remove(&id)?;
        self.available.remove(&key(&task));
        self.leased.remove(&id);
        self.by_pair.remove(&task.pair);
        Some(task)
    }
}
