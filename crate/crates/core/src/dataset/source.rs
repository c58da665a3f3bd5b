use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::planted::{load_planted, PlantedTruth};
use super::{load_cifar10, LabeledImage, Mask, CIFAR10_NAMES};
use crate::error::{Error, IoContext, Result};

const PLANTED_NAMES: [&str; 3] = ["square", "plus", "diagonal"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Planted,
    Cifar10,
}

/// Train and test splits plus whatever ground truth the source provides.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub kind: DatasetKind,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub class_names: Vec<String>,
    /// Planted ground truth keyed by image id; empty for CIFAR-10.
    pub truth: BTreeMap<String, PlantedTruth>,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Object pixels to spare during erasure, when known.
    pub fn spare_mask(&self, id: &str) -> Option<Mask> {
        self.truth.get(id).map(PlantedTruth::object_mask)
    }

    pub fn find(&self, id: &str) -> Option<&LabeledImage> {
        self.test.iter().chain(&self.train).find(|img| img.id == id)
    }
}

/// Loads a dataset directory.
///
/// A directory with `manifest.json` is a planted dataset. Otherwise it must
/// hold CIFAR-10 binary batches: `test_batch.bin` and one or more
/// `data_batch_*.bin`. `classes` keeps a subset of CIFAR-10 classes and
/// relabels them `0..classes.len()` in the given order.
pub fn load_dataset_dir(dir: impl AsRef<Path>, classes: Option<&[usize]>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    if dir.join("manifest.json").is_file() {
        if classes.is_some() {
            return Err(Error::Config(
                "class subsets apply to CIFAR-10 directories only".into(),
            ));
        }
        let ds = load_planted(dir)?;
        let truth = ds
            .train_truth
            .into_iter()
            .chain(ds.test_truth)
            .map(|t| (t.id.clone(), t))
            .collect();
        return Ok(DatasetBundle {
            kind: DatasetKind::Planted,
            train: ds.train,
            test: ds.test,
            class_names: PLANTED_NAMES[..ds.config.num_classes]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            truth,
        });
    }

    let mut batches: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    batches.sort();
    let test_path = dir.join("test_batch.bin");
    if batches.is_empty() || !test_path.is_file() {
        return Err(Error::Config(format!(
            "{} is neither a planted dataset nor a CIFAR-10 batch directory",
            dir.display()
        )));
    }
    let mut train = Vec::new();
    for b in &batches {
        train.extend(load_cifar10(b)?);
    }
    let mut test = load_cifar10(&test_path)?;
    let mut class_names: Vec<String> = CIFAR10_NAMES.iter().map(|s| s.to_string()).collect();

    if let Some(keep) = classes {
        if keep.len() < 2 || keep.iter().any(|&c| c >= CIFAR10_NAMES.len()) {
            return Err(Error::Config(format!("invalid class subset {keep:?}")));
        }
        let relabel = |images: Vec<LabeledImage>| -> Vec<LabeledImage> {
            images
                .into_iter()
                .filter_map(|mut img| {
                    keep.iter().position(|&c| c == img.label).map(|i| {
                        img.label = i;
                        img
                    })
                })
                .collect()
        };
        train = relabel(train);
        test = relabel(test);
        class_names = keep.iter().map(|&c| CIFAR10_NAMES[c].to_string()).collect();
    }

    Ok(DatasetBundle {
        kind: DatasetKind::Cifar10,
        train,
        test,
        class_names,
        truth: BTreeMap::new(),
    })
}
