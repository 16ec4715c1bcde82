use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Dataset, DatasetError};

/// How a streamed individual relates to the labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// Absent from the labeled set.
    Novel,
    /// Labeled, but added after the algorithms were trained.
    PostTraining,
    /// Labeled and part of the training data.
    Trained,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Novel, Stratum::PostTraining, Stratum::Trained];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Novel => "novel",
            Stratum::PostTraining => "post_training",
            Stratum::Trained => "trained",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabeledAmount {
    Count(usize),
    Fraction { fraction: f64 },
}

impl LabeledAmount {
    pub fn resolve(self, total: usize) -> Result<usize, DatasetError> {
        match self {
            LabeledAmount::Count(m) if m <= total => Ok(m),
            LabeledAmount::Count(m) => Err(DatasetError::InvalidConfig(format!(
                "m = {m} exceeds the {total} available annotations"
            ))),
            LabeledAmount::Fraction { fraction } if (0.0..=1.0).contains(&fraction) => {
                Ok((fraction * total as f64).round() as usize)
            }
            LabeledAmount::Fraction { fraction } => Err(DatasetError::InvalidConfig(format!(
                "labeled fraction {fraction} outside [0, 1]"
            ))),
        }
    }
}

fn default_batch_size() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub m: LabeledAmount,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub novel_fraction: f64,
    #[serde(default)]
    pub post_training_fraction: f64,
    /// Largest allowed gap, as a fraction of the stream, between a stratum's
    /// target and what the population allows.
    #[serde(default = "default_tolerance")]
    pub strata_tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.02
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.batch_size == 0 {
            return Err(DatasetError::InvalidConfig("batch_size must be positive".into()));
        }
        for (name, f) in [
            ("novel_fraction", self.novel_fraction),
            ("post_training_fraction", self.post_training_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(DatasetError::InvalidConfig(format!("{name} {f} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.strata_tolerance) {
            return Err(DatasetError::InvalidConfig(format!(
                "strata_tolerance {} outside [0, 1]",
                self.strata_tolerance
            )));
        }
        if self.novel_fraction + self.post_training_fraction > 1.0 + 1e-12 {
            return Err(DatasetError::InvalidConfig(
                "novel_fraction + post_training_fraction exceeds 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledAnnotation {
    pub record: AnnotationRecord,
    pub individual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    pub record: AnnotationRecord,
    pub stratum: Stratum,
    /// Sightings of the same individual preceding this one (labeled set included).
    pub prior_sightings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub labeled: Vec<LabeledAnnotation>,
    pub stream: Vec<Vec<StreamItem>>,
}

impl Split {
    pub fn streamed(&self) -> impl Iterator<Item = &StreamItem> {
        self.stream.iter().flatten()
    }

    pub fn stream_len(&self) -> usize {
        self.stream.iter().map(Vec::len).sum()
    }
}

/// Splits a dataset into `m` labeled annotations and a batched stream of the
/// remaining `M - m`.
///
/// Strata are assigned per individual. Known individuals (post-training and
/// trained) need at least two sightings: their earliest sightings go to the
/// labeled set, the rest are streamed. Stratum sizes are measured in streamed
/// annotations and filled exactly when the population allows it; otherwise
/// each may miss its target by at most `strata_tolerance` of the stream.
pub fn split(dataset: &Dataset, config: &SplitConfig, seed: u64) -> Result<Split, DatasetError> {
    config.validate()?;
    let total = dataset.len();
    let m = config.m.resolve(total)?;
    let stream_size = total - m;

    // Individuals in first-sighting order, each with its annotation positions.
    let mut order: Vec<&str> = Vec::new();
    let mut sightings: HashMap<&str, Vec<usize>> = HashMap::new();
    for (pos, rec) in dataset.annotations.iter().enumerate() {
        let ind = dataset
            .truth
            .individual(&rec.id)
            .ok_or_else(|| DatasetError::InvalidConfig(format!("annotation `{}` has no individual", rec.id)))?;
        sightings
            .entry(ind)
            .or_insert_with(|| {
                order.push(ind);
                Vec::new()
            })
            .push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let novel_target = (stream_size as f64 * config.novel_fraction).round() as usize;
    let post_target =
        ((stream_size as f64 * config.post_training_fraction).round() as usize).min(stream_size - novel_target);
    let trained_target = stream_size - novel_target - post_target;

    // Streamed count per individual and its stratum.
    let mut assigned: HashMap<&str, (Stratum, usize)> = HashMap::new();
    let mut remaining = [(Stratum::PostTraining, post_target), (Stratum::Trained, trained_target)];
    for &ind in &order {
        let count = sightings[ind].len();
        if count < 2 {
            continue;
        }
        let Some(slot) = remaining.iter_mut().find(|(_, r)| *r > 0) else {
            break;
        };
        let take = (count - 1).min(slot.1);
        slot.1 -= take;
        assigned.insert(ind, (slot.0, take));
    }
    let mut novel_left = novel_target;
    for &ind in &order {
        if novel_left == 0 {
            break;
        }
        let count = sightings[ind].len();
        if !assigned.contains_key(ind) && count <= novel_left {
            novel_left -= count;
            assigned.insert(ind, (Stratum::Novel, count));
        }
    }
    // Small or very skewed populations cannot always hit the targets exactly.
    // Spare capacity in known individuals absorbs the difference first, then
    // whole unused individuals as novel.
    let mut short: usize = novel_left + remaining.iter().map(|(_, r)| r).sum::<usize>();
    for &ind in &order {
        if short == 0 {
            break;
        }
        let count = sightings[ind].len();
        if count < 2 {
            continue;
        }
        match assigned.get_mut(ind) {
            Some((Stratum::Novel, _)) => {}
            Some((_, take)) => {
                let extra = (count - 1 - *take).min(short);
                *take += extra;
                short -= extra;
            }
            None => {
                let take = (count - 1).min(short);
                assigned.insert(ind, (Stratum::Trained, take));
                short -= take;
            }
        }
    }
    for &ind in &order {
        if short == 0 {
            break;
        }
        let count = sightings[ind].len();
        if !assigned.contains_key(ind) && count <= short {
            short -= count;
            assigned.insert(ind, (Stratum::Novel, count));
        }
    }
    if short > 0 {
        return Err(DatasetError::Infeasible(format!(
            "cannot fill a stream of {stream_size}; {short} annotations short"
        )));
    }
    let mut achieved: HashMap<Stratum, usize> = HashMap::new();
    for &(stratum, take) in assigned.values() {
        *achieved.entry(stratum).or_insert(0) += take;
    }
    for (stratum, target) in [
        (Stratum::Novel, novel_target),
        (Stratum::PostTraining, post_target),
        (Stratum::Trained, trained_target),
    ] {
        let got = achieved.get(&stratum).copied().unwrap_or(0);
        if stream_size > 0 && got.abs_diff(target) as f64 / stream_size as f64 > config.strata_tolerance {
            return Err(DatasetError::Infeasible(format!(
                "{} stratum gets {got} annotations against a target of {target}",
                stratum.as_str()
            )));
        }
    }

    // Positions that are streamed, tagged with their stratum.
    let mut streamed: HashMap<usize, Stratum> = HashMap::new();
    for (ind, &(stratum, take)) in &assigned {
        let positions = &sightings[ind];
        for &pos in &positions[positions.len() - take..] {
            streamed.insert(pos, stratum);
        }
    }

    let mut out = Split::default();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (pos, rec) in dataset.annotations.iter().enumerate() {
        if streamed.contains_key(&pos) {
            continue;
        }
        let ind = dataset.truth.individual(&rec.id).expect("checked above");
        *seen.entry(ind).or_insert(0) += 1;
        out.labeled.push(LabeledAnnotation {
            record: rec.clone(),
            individual: ind.to_string(),
        });
    }
    let mut items = Vec::with_capacity(stream_size);
    for (pos, rec) in dataset.annotations.iter().enumerate() {
        let Some(&stratum) = streamed.get(&pos) else { continue };
        let ind = dataset.truth.individual(&rec.id).expect("checked above");
        let prior = seen.entry(ind).or_insert(0);
        items.push(StreamItem {
            record: rec.clone(),
            stratum,
            prior_sightings: *prior,
        });
        *prior += 1;
    }
    out.stream = items.chunks(config.batch_size).map(<[StreamItem]>::to_vec).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::dataset::{generate, GeneratorConfig, Preset};

    fn dataset(n: usize, seed: u64) -> Dataset {
        let mut cfg = GeneratorConfig::preset(Preset::WhaleShark, seed);
        cfg.n_individuals = Some(n);
        generate(&cfg).unwrap()
    }

    fn cfg(m: LabeledAmount, novel: f64, post: f64) -> SplitConfig {
        SplitConfig {
            m,
            batch_size: 7,
            novel_fraction: novel,
            post_training_fraction: post,
            strata_tolerance: 0.02,
        }
    }

    #[test]
    fn labeled_everything_gives_empty_stream() {
        let ds = dataset(50, 1);
        let s = split(&ds, &cfg(LabeledAmount::Count(ds.len()), 0.3, 0.3), 0).unwrap();
        assert!(s.stream.is_empty());
        assert_eq!(s.labeled.len(), ds.len());
    }

    #[test]
    fn all_novel_individuals_absent_from_labeled_set() {
        let ds = dataset(300, 2);
        let s = split(&ds, &cfg(LabeledAmount::Fraction { fraction: 0.5 }, 1.0, 0.0), 4).unwrap();
        let labeled: HashSet<&str> = s.labeled.iter().map(|l| l.individual.as_str()).collect();
        assert!(s.stream_len() > 0);
        for item in s.streamed() {
            assert_eq!(item.stratum, Stratum::Novel);
            assert!(!labeled.contains(ds.truth.individual(&item.record.id).unwrap()));
        }
    }

    #[test]
    fn split_is_a_partition() {
        let ds = dataset(300, 3);
        let s = split(&ds, &cfg(LabeledAmount::Count(400), 0.3, 0.2), 9).unwrap();
        assert_eq!(s.labeled.len(), 400);
        let mut ids: Vec<_> = s
            .labeled
            .iter()
            .map(|l| l.record.id.clone())
            .chain(s.streamed().map(|i| i.record.id.clone()))
            .collect();
        assert_eq!(ids.len(), ds.len());
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), ds.len());
        assert!(s.stream.iter().all(|b| b.len() <= 7 && !b.is_empty()));
    }

    #[test]
    fn prior_sightings_count_earlier_annotations() {
        let ds = dataset(200, 4);
        let s = split(&ds, &cfg(LabeledAmount::Fraction { fraction: 0.3 }, 0.3, 0.2), 1).unwrap();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for l in &s.labeled {
            *seen.entry(l.individual.clone()).or_default() += 1;
        }
        for item in s.streamed() {
            let ind = ds.truth.individual(&item.record.id).unwrap().to_string();
            let c = seen.entry(ind).or_default();
            assert_eq!(item.prior_sightings, *c);
            *c += 1;
            if item.stratum == Stratum::Novel {
                continue;
            }
            assert!(item.prior_sightings >= 1);
        }
    }

    #[test]
    fn infeasible_strata_reported() {
        // Every individual a singleton: no known individuals can be split.
        let cfg_gen = GeneratorConfig {
            n_individuals: Some(50),
            sighting_dist: crate::dataset::SightingDist::Zipf { exponent: 1.0 },
            target_singleton_fraction: Some(1.0),
            max_sightings: 10,
            incomparable_rate: 0.0,
            unidentifiable_rate: 0.0,
            species: None,
            seed: 0,
        };
        let ds = generate(&cfg_gen).unwrap();
        let err = split(&ds, &cfg(LabeledAmount::Count(25), 0.0, 0.5), 0).unwrap_err();
        assert!(matches!(err, DatasetError::Infeasible(_)));
        let loose = SplitConfig {
            strata_tolerance: 1.0,
            ..cfg(LabeledAmount::Count(25), 0.0, 0.5)
        };
        let s = split(&ds, &loose, 0).unwrap();
        assert!(s.streamed().all(|it| it.stratum == Stratum::Novel));
        assert_eq!(s.stream_len(), 25);
    }

    #[test]
    fn invalid_fractions_rejected() {
        let ds = dataset(20, 1);
        assert!(matches!(
            split(&ds, &cfg(LabeledAmount::Count(5), 0.7, 0.6), 0),
            Err(DatasetError::InvalidConfig(_))
        ));
        assert!(matches!(
            split(&ds, &cfg(LabeledAmount::Count(ds.len() + 1), 0.0, 0.0), 0),
            Err(DatasetError::InvalidConfig(_))
        ));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let ds = dataset(150, 6);
        let c = cfg(LabeledAmount::Fraction { fraction: 0.4 }, 0.3, 0.3);
        assert_eq!(split(&ds, &c, 11).unwrap(), split(&ds, &c, 11).unwrap());
    }
}
