use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{AnnotationRecord, Dataset, DatasetError};
use crate::graph::{AnnotationId, Pair};

pub const MANIFEST_HEADER: [&str; 6] = [
    "annotation_id",
    "individual_id",
    "species",
    "viewpoint",
    "quality",
    "identifiable",
];
const IMAGE_COLUMN: &str = "image_url";

/// `foo.csv` -> `foo.incomparable.csv`, next to the manifest.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    manifest.with_file_name(format!("{stem}.incomparable.csv"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => DatasetError::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Loads a manifest and its optional incomparable-pairs sidecar.
pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_image = match names.as_slice() {
        n if n == MANIFEST_HEADER => false,
        [head @ .., last] if head == MANIFEST_HEADER && *last == IMAGE_COLUMN => true,
        _ => {
            return Err(DatasetError::Parse {
                path: display,
                line: 1,
                message: format!(
                    "expected header `{}` (optionally followed by `{IMAGE_COLUMN}`), found `{}`",
                    MANIFEST_HEADER.join(","),
                    names.join(",")
                ),
            })
        }
    };

    let mut dataset = Dataset::default();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_error = |message: String| DatasetError::Parse {
            path: display.clone(),
            line,
            message,
        };
        let id = AnnotationId(row[0].to_string());
        if id.as_str().is_empty() {
            return Err(parse_error("empty annotation_id".into()));
        }
        let individual = row[1].to_string();
        if individual.is_empty() {
            return Err(DatasetError::DanglingReference {
                path: display.clone(),
                line,
                message: format!("annotation `{id}` has no individual_id"),
            });
        }
        let quality: f64 = row[4]
            .parse()
            .map_err(|_| parse_error(format!("quality `{}` is not a number", &row[4])))?;
        if !(0.0..=1.0).contains(&quality) {
            return Err(parse_error(format!("quality {quality} outside [0, 1]")));
        }
        let identifiable =
            parse_bool(&row[5]).ok_or_else(|| parse_error(format!("identifiable `{}` is not a boolean", &row[5])))?;
        if dataset.truth.identity_of.contains_key(&id) {
            return Err(DatasetError::DuplicateAnnotation {
                path: display.clone(),
                line,
                id,
            });
        }
        let image_url = has_image
            .then(|| row.get(6).unwrap_or("").to_string())
            .filter(|s| !s.is_empty());
        dataset.truth.identity_of.insert(id.clone(), individual);
        dataset.truth.identifiable.insert(id.clone(), identifiable);
        dataset.annotations.push(AnnotationRecord {
            id,
            species: row[2].to_string(),
            viewpoint: row[3].to_string(),
            quality,
            identifiable,
            image_url,
        });
    }

    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        load_sidecar(&sidecar, &mut dataset)?;
    }
    Ok(dataset)
}

fn load_sidecar(path: &Path, dataset: &mut Dataset) -> Result<(), DatasetError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["a", "b"] {
        return Err(DatasetError::Parse {
            path: display,
            line: 1,
            message: "expected header `a,b`".into(),
        });
    }
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let (a, b) = (AnnotationId(row[0].to_string()), AnnotationId(row[1].to_string()));
        for id in [&a, &b] {
            if !dataset.truth.identity_of.contains_key(id) {
                return Err(DatasetError::DanglingReference {
                    path: display.clone(),
                    line,
                    message: format!("unknown annotation `{id}`"),
                });
            }
        }
        let pair = Pair::new(a, b).map_err(|e| DatasetError::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        dataset.truth.incomparable_pairs.insert(pair);
    }
    Ok(())
}

/// Writes the manifest and its sidecar. Output is byte-identical for equal datasets.
pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let with_image = dataset.annotations.iter().any(|a| a.image_url.is_some());
    let mut seen = HashSet::new();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<&str> = MANIFEST_HEADER.to_vec();
    if with_image {
        header.push(IMAGE_COLUMN);
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for rec in &dataset.annotations {
        if !seen.insert(&rec.id) {
            return Err(DatasetError::DuplicateAnnotation {
                path: path.display().to_string(),
                line: 0,
                id: rec.id.clone(),
            });
        }
        let individual = dataset
            .truth
            .individual(&rec.id)
            .ok_or_else(|| DatasetError::DanglingReference {
                path: path.display().to_string(),
                line: 0,
                message: format!("annotation `{}` has no individual", rec.id),
            })?;
        let quality = rec.quality.to_string();
        let identifiable = rec.identifiable.to_string();
        let mut row = vec![
            rec.id.as_str(),
            individual,
            rec.species.as_str(),
            rec.viewpoint.as_str(),
            quality.as_str(),
            identifiable.as_str(),
        ];
        if with_image {
            row.push(rec.image_url.as_deref().unwrap_or(""));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))?;

    let sidecar = sidecar_path(path);
    let mut w = csv::Writer::from_path(&sidecar).map_err(|e| csv_err(&sidecar, e))?;
    w.write_record(["a", "b"]).map_err(|e| csv_err(&sidecar, e))?;
    for pair in &dataset.truth.incomparable_pairs {
        w.write_record([pair.first().as_str(), pair.second().as_str()])
            .map_err(|e| csv_err(&sidecar, e))?;
    }
    w.flush().map_err(io_err(&sidecar))
}
