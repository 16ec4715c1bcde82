//! Seeded stochastic stand-ins for the ranking and verification algorithms and
//! for the human reviewer. Every model owns its own random stream, so swapping
//! one model never perturbs another's samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Annotation, AnnotationId, DecisionLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid score distribution: {0}")]
    InvalidDist(String),
    #[error("confusion row for true `{truth}` sums to {sum}, expected 1")]
    ConfusionRowSum { truth: TrueRelation, sum: f64 },
    #[error("confusion row for true `{0}` has a negative entry")]
    NegativeProbability(TrueRelation),
    #[error("oracle fidelity {0} outside [0, 1]")]
    InvalidFidelity(f64),
}

/// The hidden ground-truth relation of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueRelation {
    Same,
    Different,
    Incomparable,
}

impl TrueRelation {
    pub const ALL: [TrueRelation; 3] = [TrueRelation::Same, TrueRelation::Different, TrueRelation::Incomparable];

    pub fn label(self) -> DecisionLabel {
        match self {
            TrueRelation::Same => DecisionLabel::Same,
            TrueRelation::Different => DecisionLabel::Different,
            TrueRelation::Incomparable => DecisionLabel::Incomparable,
        }
    }

    pub fn index(self) -> usize {
        self.label().index()
    }
}

impl std::fmt::Display for TrueRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label().as_str())
    }
}

/// A distribution on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreDist {
    Point {
        value: f64,
    },
    /// Beta family by mean and concentration (alpha + beta).
    Beta {
        mean: f64,
        concentration: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl ScoreDist {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            ScoreDist::Point { value } => (0.0..=1.0).contains(&value),
            ScoreDist::Beta { mean, concentration } => {
                mean > 0.0 && mean < 1.0 && concentration > 0.0 && concentration.is_finite()
            }
            ScoreDist::Uniform { low, high } => 0.0 <= low && low <= high && high <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidDist(format!("{self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScoreDist::Point { value } => value,
            ScoreDist::Beta { mean, .. } => mean,
            ScoreDist::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ScoreDist::Point { value } => value,
            ScoreDist::Beta { mean, concentration } => {
                let beta =
                    Beta::new(mean * concentration, (1.0 - mean) * concentration).expect("validated beta parameters");
                beta.sample(rng).clamp(0.0, 1.0)
            }
            ScoreDist::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..=high)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerParams {
    pub same: ScoreDist,
    pub different: ScoreDist,
    pub incomparable: ScoreDist,
}

impl Default for RankerParams {
    fn default() -> Self {
        Self {
            same: ScoreDist::Beta {
                mean: 0.75,
                concentration: 8.0,
            },
            different: ScoreDist::Beta {
                mean: 0.25,
                concentration: 8.0,
            },
            incomparable: ScoreDist::Beta {
                mean: 0.5,
                concentration: 4.0,
            },
        }
    }
}

impl RankerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.same.validate()?;
        self.different.validate()?;
        self.incomparable.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: AnnotationId,
    pub score: f64,
    pub relation: TrueRelation,
}

#[derive(Debug, Clone)]
pub struct RankerModel {
    params: RankerParams,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RankerModel {
    pub fn new(params: RankerParams, seed: u64) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self {
            params,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn score(&mut self, truth: TrueRelation) -> f64 {
        let dist = match truth {
            TrueRelation::Same => self.params.same,
            TrueRelation::Different => self.params.different,
            TrueRelation::Incomparable => self.params.incomparable,
        };
        dist.sample(&mut self.rng)
    }

    /// Scores every identifiable gallery member against `query`, in gallery
    /// order, and returns the top `k` by descending score, ties by ascending id.
    pub fn rank<'a, F>(
        &mut self,
        query: &Annotation,
        gallery: impl IntoIterator<Item = &'a Annotation>,
        mut truth_fn: F,
        k: usize,
    ) -> Vec<RankedCandidate>
    where
        F: FnMut(&AnnotationId, &AnnotationId) -> TrueRelation,
    {
        if k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<RankedCandidate> = gallery
            .into_iter()
            .filter(|g| g.identifiable && g.id != query.id)
            .map(|g| {
                let relation = truth_fn(&query.id, &g.id);
                RankedCandidate {
                    id: g.id.clone(),
                    score: self.score(relation),
                    relation,
                }
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(k);
        scored
    }
}

/// Per-true-relation probability vectors over emitted labels, in
/// `[same, different, incomparable]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confusion {
    pub same: [f64; 3],
    pub different: [f64; 3],
    pub incomparable: [f64; 3],
}

impl Confusion {
    pub fn identity() -> Self {
        Self {
            same: [1.0, 0.0, 0.0],
            different: [0.0, 1.0, 0.0],
            incomparable: [0.0, 0.0, 1.0],
        }
    }

    pub fn row(&self, truth: TrueRelation) -> [f64; 3] {
        match truth {
            TrueRelation::Same => self.same,
            TrueRelation::Different => self.different,
            TrueRelation::Incomparable => self.incomparable,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for truth in [TrueRelation::Same, TrueRelation::Different, TrueRelation::Incomparable] {
            let row = self.row(truth);
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(ModelError::NegativeProbability(truth));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ModelError::ConfusionRowSum { truth, sum });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierParams {
    pub confusion: Confusion,
    pub confidence_correct: ScoreDist,
    pub confidence_incorrect: ScoreDist,
}

impl Default for VerifierParams {
    fn default() -> Self {
        Self {
            confusion: Confusion {
                same: [0.9, 0.05, 0.05],
                different: [0.05, 0.9, 0.05],
                incomparable: [0.1, 0.1, 0.8],
            },
            confidence_correct: ScoreDist::Beta {
                mean: 0.85,
                concentration: 10.0,
            },
            confidence_incorrect: ScoreDist::Beta {
                mean: 0.6,
                concentration: 10.0,
            },
        }
    }
}

impl VerifierParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.confusion.validate()?;
        self.confidence_correct.validate()?;
        self.confidence_incorrect.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: DecisionLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct VerifierModel {
    params: VerifierParams,
    seed: u64,
    rng: ChaCha8Rng,
}

impl VerifierModel {
    pub fn new(params: VerifierParams, seed: u64) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self {
            params,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn verify(&mut self, truth: TrueRelation) -> Verdict {
        let row = self.params.confusion.row(truth);
        let u: f64 = self.rng.random();
        let label = if u < row[0] {
            DecisionLabel::Same
        } else if u < row[0] + row[1] {
            DecisionLabel::Different
        } else {
            DecisionLabel::Incomparable
        };
        let dist = if label == truth.label() {
            self.params.confidence_correct
        } else {
            self.params.confidence_incorrect
        };
        Verdict {
            label,
            confidence: dist.sample(&mut self.rng),
        }
    }
}

/// How the oracle picks its answer on the incorrect branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleErrorMode {
    /// Same and Different swap; a true Incomparable becomes Same or Different
    /// with equal probability. Never answers Incomparable wrongly.
    #[default]
    FlipSameDifferent,
    /// Uniform over the two wrong labels.
    UniformWrong,
}

#[derive(Debug, Clone)]
pub struct OracleModel {
    fidelity: f64,
    error_mode: OracleErrorMode,
    seed: u64,
    rng: ChaCha8Rng,
}

impl OracleModel {
    pub fn new(fidelity: f64, error_mode: OracleErrorMode, seed: u64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(ModelError::InvalidFidelity(fidelity));
        }
        Ok(Self {
            fidelity,
            error_mode,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn answer(&mut self, truth: TrueRelation) -> DecisionLabel {
        let u: f64 = self.rng.random();
        if u < self.fidelity {
            return truth.label();
        }
        let coin: bool = self.rng.random();
        match (self.error_mode, truth) {
            (OracleErrorMode::FlipSameDifferent, TrueRelation::Same) => DecisionLabel::Different,
            (OracleErrorMode::FlipSameDifferent, TrueRelation::Different) => DecisionLabel::Same,
            (_, TrueRelation::Incomparable) => {
                if coin {
                    DecisionLabel::Same
                } else {
                    DecisionLabel::Different
                }
            }
            (OracleErrorMode::UniformWrong, TrueRelation::Same) => {
                if coin {
                    DecisionLabel::Different
                } else {
                    DecisionLabel::Incomparable
                }
            }
            (OracleErrorMode::UniformWrong, TrueRelation::Different) => {
                if coin {
                    DecisionLabel::Same
                } else {
                    DecisionLabel::Incomparable
                }
            }
        }
    }
}
