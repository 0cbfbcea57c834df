use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use super::augment::{augment, AugmentConfig};
use super::classes::ClassInfo;
use super::image::{decode_resize, normalize, validate_image, RejectReason, Validation};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    pub path: PathBuf,
    pub class_index: usize,
}

/// Labelled images found under a class-per-directory root.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<ClassInfo>,
    /// Accepted samples, sorted by `(class_index, path)`.
    pub samples: Vec<Sample>,
    /// Files dropped by the noise filter, with the reason.
    pub rejected: Vec<(PathBuf, RejectReason)>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        .unwrap_or(false)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Scan `root` for class subdirectories (matched case-insensitively against
/// `ClassInfo::directory_name`), run the noise filter over every image, and
/// collect accepted samples.
pub fn scan_manifest(root: &Path, classes: &[ClassInfo]) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset root is not a directory",
            ),
        ));
    }
    let by_name: BTreeMap<String, usize> = classes
        .iter()
        .map(|c| (c.directory_name.to_lowercase(), c.class_index))
        .collect();

    let mut warnings = Vec::new();
    let mut candidates = Vec::new();
    let mut matched = 0;
    for dir in read_dir_sorted(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let Some(&class_index) = by_name.get(&name) else {
            warnings.push(format!("unknown class directory {}", dir.display()));
            continue;
        };
        matched += 1;
        let files: Vec<PathBuf> = read_dir_sorted(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && has_image_extension(p))
            .collect();
        if files.is_empty() {
            warnings.push(format!("class directory {} holds no images", dir.display()));
        }
        candidates.extend(files.into_iter().map(|path| Sample { path, class_index }));
    }
    if matched == 0 {
        return Err(Error::Manifest(format!(
            "no known class directories under {}",
            root.display()
        )));
    }

    let verdicts: Vec<Validation> = candidates
        .par_iter()
        .map(|s| validate_image(&s.path))
        .collect();
    let mut samples = Vec::with_capacity(candidates.len());
    let mut rejected = Vec::new();
    for (sample, verdict) in candidates.into_iter().zip(verdicts) {
        match verdict {
            Validation::Accept => samples.push(sample),
            Validation::Reject(reason) => {
                warnings.push(format!("skipping {}: {reason}", sample.path.display()));
                rejected.push((sample.path, reason));
            }
        }
    }
    samples.sort();
    for w in &warnings {
        warn!("{w}");
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes: classes.to_vec(),
        samples,
        rejected,
        warnings,
    })
}

/// Disjoint train/validation partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Stratified seeded split: each class sends `round(fraction * n)` samples
/// to training and the rest to validation. Classes with fewer than two
/// samples go entirely to training.
pub fn split(samples: &[Sample], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.class_index).or_default().push(s.clone());
    }
    let mut out = Split {
        train: Vec::new(),
        validation: Vec::new(),
        warnings: Vec::new(),
    };
    for (class, mut members) in by_class {
        if members.len() < 2 {
            let w = format!(
                "class {class} has {} sample(s); all assigned to training",
                members.len()
            );
            warn!("{w}");
            out.warnings.push(w);
            out.train.extend(members);
            continue;
        }
        members.sort();
        SeededRng::new(crate::rng::derive_seed(seed, class as u64)).shuffle(&mut members);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        let validation = members.split_off(n_train);
        out.train.extend(members);
        out.validation.extend(validation);
    }
    Ok(out)
}

/// Shuffle with `shuffle_seed` and cut into batches of `batch_size`; the
/// final batch may be short.
pub fn batches(
    samples: &[Sample],
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let mut order = samples.to_vec();
    SeededRng::new(shuffle_seed).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[Sample]>::to_vec).collect())
}

/// Network-ready inputs: `[N, side, side, 3]` in [0, 1] plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Decode, resize, normalize and (optionally) augment a batch. Images are
/// processed in parallel, each with its own generator split from `rng` in
/// sample order, so results do not depend on scheduling.
pub fn load_batch(
    samples: &[Sample],
    side: usize,
    augmentation: Option<&AugmentConfig>,
    rng: &mut SeededRng,
) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::arg("cannot load an empty batch"));
    }
    let rngs: Vec<SeededRng> = samples.iter().map(|_| rng.split()).collect();
    let images = samples
        .par_iter()
        .zip(rngs)
        .map(|(sample, mut r)| {
            let img = normalize(&decode_resize(&sample.path, side)?);
            match augmentation {
                Some(cfg) => augment(&img, cfg, &mut r),
                None => Ok(img),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        inputs: Tensor::stack(&images)?,
        labels: samples.iter().map(|s| s.class_index).collect(),
    })
}
