//! Ground-truth datasets: synthetic populations with skewed sighting counts,
//! CSV manifests for curated data, and labeled/stream experiment splits.

mod generate;
mod manifest;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Annotation, AnnotationId, Pair};
use crate::sim::TrueRelation;

pub use generate::{expected_singleton_fraction, generate, solve_zipf_exponent, GeneratorConfig, Preset, SightingDist};
pub use manifest::{load_manifest, save_manifest, sidecar_path, MANIFEST_HEADER};
pub use split::{split, LabeledAmount, LabeledAnnotation, Split, SplitConfig, Stratum, StreamItem};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}:{line}: duplicate annotation id `{id}`")]
    DuplicateAnnotation { path: String, line: u64, id: AnnotationId },
    #[error("{path}:{line}: dangling reference: {message}")]
    DanglingReference { path: String, line: u64, message: String },
}

/// An annotation as stored in a dataset, before it enters an identity graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: AnnotationId,
    pub species: String,
    pub viewpoint: String,
    pub quality: f64,
    pub identifiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl AnnotationRecord {
    pub fn into_annotation(self, added_at: u64) -> Annotation {
        Annotation {
            id: self.id,
            species: self.species,
            viewpoint: self.viewpoint,
            quality: self.quality,
            identifiable: self.identifiable,
            added_at,
            image_url: self.image_url,
        }
    }
}

/// Hidden identity information. Never enters the identity graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub identity_of: BTreeMap<AnnotationId, String>,
    pub incomparable_pairs: BTreeSet<Pair>,
    pub identifiable: BTreeMap<AnnotationId, bool>,
}

impl GroundTruth {
    pub fn individual(&self, id: &AnnotationId) -> Option<&str> {
        self.identity_of.get(id).map(String::as_str)
    }

    pub fn is_identifiable(&self, id: &AnnotationId) -> bool {
        self.identifiable.get(id).copied().unwrap_or(false)
    }

    /// A flagged incomparable pair is incomparable even for the same individual.
    pub fn relation(&self, a: &AnnotationId, b: &AnnotationId) -> TrueRelation {
        if let Ok(pair) = Pair::new(a.clone(), b.clone()) {
            if self.incomparable_pairs.contains(&pair) {
                return TrueRelation::Incomparable;
            }
        }
        match (self.individual(a), self.individual(b)) {
            (Some(x), Some(y)) if x == y => TrueRelation::Same,
            _ => TrueRelation::Different,
        }
    }

    pub fn individual_count(&self) -> usize {
        self.identity_of.values().collect::<BTreeSet<_>>().len()
    }

    /// Ground-truth partition over the given annotations, optionally dropping
    /// unidentifiable ones. Clusters ordered by first member.
    pub fn partition_of<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a AnnotationId>,
        include_unidentifiable: bool,
    ) -> Vec<Vec<AnnotationId>> {
        let mut groups: Vec<Vec<AnnotationId>> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for id in ids {
            if !include_unidentifiable && !self.is_identifiable(id) {
                continue;
            }
            let Some(ind) = self.individual(id) else { continue };
            let i = *slot.entry(ind).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[i].push(id.clone());
        }
        groups
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub annotations: Vec<AnnotationRecord>,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Sighting count per individual.
    pub fn sighting_counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for ind in self.truth.identity_of.values() {
            *out.entry(ind.as_str()).or_insert(0) += 1;
        }
        out
    }

    pub fn singleton_fraction(&self) -> f64 {
        let counts = self.sighting_counts();
        if counts.is_empty() {
            return 0.0;
        }
        counts.values().filter(|&&c| c == 1).count() as f64 / counts.len() as f64
    }
}
