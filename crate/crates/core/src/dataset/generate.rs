use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Dataset, DatasetError};
use crate::graph::{AnnotationId, Pair};

/// Named populations with a pinned singleton fraction and default size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "whale-shark")]
    WhaleShark,
    #[serde(rename = "grevys")]
    Grevys,
}

impl Preset {
    pub fn singleton_fraction(self) -> f64 {
        match self {
            Preset::WhaleShark => 0.45,
            Preset::Grevys => 0.31,
        }
    }

    pub fn default_individuals(self) -> usize {
        match self {
            Preset::WhaleShark => 10_000,
            Preset::Grevys => 2_000,
        }
    }

    pub fn species(self) -> &'static str {
        match self {
            Preset::WhaleShark => "whale_shark",
            Preset::Grevys => "zebra_grevys",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SightingDist {
    Preset(Preset),
    /// Truncated Zipf over counts `1..=max_sightings`.
    Zipf {
        exponent: f64,
    },
}

fn default_max_sightings() -> u32 {
    100
}

fn default_incomparable_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Defaults to the preset's population size.
    #[serde(default)]
    pub n_individuals: Option<usize>,
    pub sighting_dist: SightingDist,
    /// Pinned by presets; optional for an explicit Zipf exponent.
    #[serde(default)]
    pub target_singleton_fraction: Option<f64>,
    #[serde(default = "default_max_sightings")]
    pub max_sightings: u32,
    /// Probability that a same-individual pair with disjoint viewpoints is incomparable.
    #[serde(default = "default_incomparable_rate")]
    pub incomparable_rate: f64,
    #[serde(default)]
    pub unidentifiable_rate: f64,
    #[serde(default)]
    pub species: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        Self {
            n_individuals: None,
            sighting_dist: SightingDist::Preset(preset),
            target_singleton_fraction: None,
            max_sightings: default_max_sightings(),
            incomparable_rate: default_incomparable_rate(),
            unidentifiable_rate: 0.0,
            species: None,
            seed,
        }
    }

    pub fn individuals(&self) -> Result<usize, DatasetError> {
        match (self.n_individuals, self.sighting_dist) {
            (Some(n), _) => Ok(n),
            (None, SightingDist::Preset(p)) => Ok(p.default_individuals()),
            (None, SightingDist::Zipf { .. }) => Err(DatasetError::InvalidConfig(
                "n_individuals is required without a preset".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, rate) in [
            ("incomparable_rate", self.incomparable_rate),
            ("unidentifiable_rate", self.unidentifiable_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DatasetError::InvalidConfig(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if let Some(t) = self.target_singleton_fraction {
            if !(0.0..=1.0).contains(&t) {
                return Err(DatasetError::InvalidConfig(format!(
                    "target_singleton_fraction {t} outside [0, 1]"
                )));
            }
        }
        if self.max_sightings == 0 {
            return Err(DatasetError::InvalidConfig("max_sightings must be positive".into()));
        }
        if let SightingDist::Zipf { exponent } = self.sighting_dist {
            if !(exponent >= 0.0 && exponent.is_finite()) {
                return Err(DatasetError::InvalidConfig(format!("zipf exponent {exponent} invalid")));
            }
        }
        self.individuals()?;
        Ok(())
    }

    /// The singleton fraction to enforce, if any.
    fn target(&self) -> Result<Option<f64>, DatasetError> {
        match (self.sighting_dist, self.target_singleton_fraction) {
            (SightingDist::Preset(p), Some(t)) if (t - p.singleton_fraction()).abs() > 1e-12 => {
                Err(DatasetError::Infeasible(format!(
                    "preset {p:?} pins singleton fraction {}, requested {t}",
                    p.singleton_fraction()
                )))
            }
            (SightingDist::Preset(p), _) => Ok(Some(p.singleton_fraction())),
            (SightingDist::Zipf { .. }, t) => Ok(t),
        }
    }
}

/// Singleton probability of a Zipf law truncated to `1..=max`.
pub fn expected_singleton_fraction(exponent: f64, max: u32) -> f64 {
    let norm: f64 = (1..=max).map(|k| (k as f64).powf(-exponent)).sum();
    1.0 / norm
}

/// Exponent whose truncated Zipf puts mass `target` on count 1. `None` when
/// the target is unreachable (below `1/max`) or requires every count to be 1.
pub fn solve_zipf_exponent(target: f64, max: u32) -> Option<f64> {
    let floor = expected_singleton_fraction(0.0, max);
    if target < floor || target >= 1.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while expected_singleton_fraction(hi, max) < target {
        hi *= 2.0;
        if hi > 1e3 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_singleton_fraction(mid, max) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Inverse-CDF sampler over counts `from..=max` with weight `k^-exponent`.
struct CountSampler {
    from: u32,
    cumulative: Vec<f64>,
}

impl CountSampler {
    fn new(exponent: f64, from: u32, max: u32) -> Self {
        let mut acc = 0.0;
        let cumulative = (from..=max)
            .map(|k| {
                acc += (k as f64).powf(-exponent);
                acc
            })
            .collect();
        Self { from, cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        let total = *self.cumulative.last().expect("non-empty support");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.from + i.min(self.cumulative.len() - 1) as u32
    }
}

/// Generates a synthetic population. Per-individual sighting counts come from
/// a truncated Zipf law; when a singleton fraction is targeted, exactly
/// `round(target * n)` individuals are singletons and the rest draw from the
/// law conditioned on at least two sightings.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let n = config.individuals()?;
    let max = config.max_sightings;
    let target = config.target()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let exponent = match (config.sighting_dist, target) {
        (SightingDist::Zipf { exponent }, _) => exponent,
        (SightingDist::Preset(_), Some(t)) => solve_zipf_exponent(t, max).ok_or_else(|| {
            DatasetError::Infeasible(format!("singleton fraction {t} unreachable with max_sightings {max}"))
        })?,
        (SightingDist::Preset(_), None) => unreachable!("presets always pin a target"),
    };

    let counts: Vec<u32> = match target {
        Some(t) => {
            let singles = (t * n as f64).round() as usize;
            if singles < n && max < 2 {
                return Err(DatasetError::Infeasible(format!(
                    "singleton fraction {t} needs multi-sighting individuals but max_sightings is {max}"
                )));
            }
            let tail = (max >= 2).then(|| CountSampler::new(exponent, 2, max));
            let mut counts: Vec<u32> = (0..n)
                .map(|i| {
                    if i < singles {
                        1
                    } else {
                        tail.as_ref().expect("checked above").sample(&mut rng)
                    }
                })
                .collect();
            counts.shuffle(&mut rng);
            counts
        }
        None => {
            let all = CountSampler::new(exponent, 1, max);
            (0..n).map(|_| all.sample(&mut rng)).collect()
        }
    };

    let species = config
        .species
        .clone()
        .or_else(|| match config.sighting_dist {
            SightingDist::Preset(p) => Some(p.species().to_string()),
            SightingDist::Zipf { .. } => None,
        })
        .unwrap_or_else(|| "generic".to_string());

    let ind_width = n.max(1).to_string().len().max(5);
    // (individual index, viewpoint, quality, identifiable)
    let mut sightings: Vec<(usize, &'static str, f64, bool)> = Vec::new();
    for (ind, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let viewpoint = if rng.random::<bool>() { "left" } else { "right" };
            let quality = (rng.random::<f64>() * 1000.0).round() / 1000.0;
            let identifiable = rng.random::<f64>() >= config.unidentifiable_rate;
            sightings.push((ind, viewpoint, quality, identifiable));
        }
    }
    sightings.shuffle(&mut rng);

    let ann_width = sightings.len().max(1).to_string().len().max(6);
    let mut dataset = Dataset::default();
    let mut by_individual: Vec<Vec<(AnnotationId, &'static str)>> = vec![Vec::new(); n];
    for (i, (ind, viewpoint, quality, identifiable)) in sightings.into_iter().enumerate() {
        let id = AnnotationId(format!("ann-{:0width$}", i + 1, width = ann_width));
        let individual = format!("ind-{:0width$}", ind + 1, width = ind_width);
        dataset.truth.identity_of.insert(id.clone(), individual);
        dataset.truth.identifiable.insert(id.clone(), identifiable);
        by_individual[ind].push((id.clone(), viewpoint));
        dataset.annotations.push(AnnotationRecord {
            id,
            species: species.clone(),
            viewpoint: viewpoint.to_string(),
            quality,
            identifiable,
            image_url: None,
        });
    }

    let mut incomparable = BTreeSet::new();
    if config.incomparable_rate > 0.0 {
        for members in &by_individual {
            for (i, (a, va)) in members.iter().enumerate() {
                for (b, vb) in &members[i + 1..] {
                    if va != vb && rng.random::<f64>() < config.incomparable_rate {
                        incomparable.insert(Pair::new(a.clone(), b.clone()).expect("distinct ids"));
                    }
                }
            }
        }
    }
    dataset.truth.incomparable_pairs = incomparable;
    Ok(dataset)
}
