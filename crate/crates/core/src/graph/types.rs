use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GraphError;

/// Opaque annotation identifier. Ordering is lexicographic on the string form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationId(pub String);

impl AnnotationId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnnotationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnnotationId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for AnnotationId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// An abstract sighting record as it lives inside the identity graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub species: String,
    pub viewpoint: String,
    pub quality: f64,
    pub identifiable: bool,
    pub added_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), GraphError> {
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(GraphError::InvalidQuality {
                id: self.id.clone(),
                quality: self.quality,
            });
        }
        Ok(())
    }
}

/// Outcome of a pairwise review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionLabel {
    Same,
    Different,
    Incomparable,
}

impl DecisionLabel {
    pub const ALL: [DecisionLabel; 3] = [
        DecisionLabel::Same,
        DecisionLabel::Different,
        DecisionLabel::Incomparable,
    ];

    pub fn index(self) -> usize {
        match self {
            DecisionLabel::Same => 0,
            DecisionLabel::Different => 1,
            DecisionLabel::Incomparable => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionLabel::Same => "same",
            DecisionLabel::Different => "different",
            DecisionLabel::Incomparable => "incomparable",
        }
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "same" => Ok(DecisionLabel::Same),
            "different" => Ok(DecisionLabel::Different),
            "incomparable" => Ok(DecisionLabel::Incomparable),
            other => Err(format!("unknown decision label `{other}`")),
        }
    }
}

/// Who produced a decision. Variant order is precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionSource {
    Algorithm,
    Human,
}

/// Unordered pair of distinct annotation ids, stored smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Pair {
    a: AnnotationId,
    b: AnnotationId,
}

impl Pair {
    pub fn new(x: impl Into<AnnotationId>, y: impl Into<AnnotationId>) -> Result<Self, GraphError> {
        let (x, y) = (x.into(), y.into());
        match x.cmp(&y) {
            Ordering::Less => Ok(Self { a: x, b: y }),
            Ordering::Greater => Ok(Self { a: y, b: x }),
            Ordering::Equal => Err(GraphError::SelfPair(x)),
        }
    }

    pub fn first(&self) -> &AnnotationId {
        &self.a
    }

    pub fn second(&self) -> &AnnotationId {
        &self.b
    }

    pub fn contains(&self, id: &AnnotationId) -> bool {
        &self.a == id || &self.b == id
    }

    pub fn other(&self, id: &AnnotationId) -> Option<&AnnotationId> {
        if &self.a == id {
            Some(&self.b)
        } else if &self.b == id {
            Some(&self.a)
        } else {
            None
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

impl<'de> Deserialize<'de> for Pair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            a: AnnotationId,
            b: AnnotationId,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.a >= raw.b {
            return Err(serde::de::Error::custom(format!(
                "pair ({}, {}) is not normalized",
                raw.a, raw.b
            )));
        }
        Ok(Pair { a: raw.a, b: raw.b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub pair: Pair,
    pub label: DecisionLabel,
    pub source: DecisionSource,
    pub confidence: f64,
    pub seq: u64,
}

/// The precedence-maximal decision currently in force on a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveLabel {
    pub label: DecisionLabel,
    pub source: DecisionSource,
    pub confidence: f64,
    pub seq: u64,
}

impl ActiveLabel {
    /// Human beats algorithm; within a tier the later decision wins.
    pub fn is_overridden_by(&self, source: DecisionSource, seq: u64) -> bool {
        (source, seq) > (self.source, self.seq)
    }
}

/// Cluster names are `tmp-<added_at>` of the cluster's oldest member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterName(pub u64);

impl fmt::Display for ClusterName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tmp-{}", self.0)
    }
}

impl FromStr for ClusterName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("tmp-")
            .and_then(|n| n.parse().ok())
            .map(ClusterName)
            .ok_or_else(|| format!("invalid cluster name `{s}`"))
    }
}

impl Serialize for ClusterName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClusterName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: ClusterName,
    pub members: Vec<AnnotationId>,
}

/// A cluster holding at least one active `Different` edge between its own members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub cluster: ClusterName,
    pub negative_edges_inside: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub into: ClusterName,
    pub absorbed: ClusterName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub from: ClusterName,
    pub into: Vec<ClusterName>,
}

/// What a single mutation did to the clustering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringDelta {
    pub seq: u64,
    pub label_changed: bool,
    pub created: Vec<ClusterName>,
    pub merged: Vec<MergeEvent>,
    pub split: Vec<SplitEvent>,
    pub new_conflicts: Vec<Conflict>,
}

impl ClusteringDelta {
    pub fn changed_clustering(&self) -> bool {
        !self.merged.is_empty() || !self.split.is_empty()
    }
}
