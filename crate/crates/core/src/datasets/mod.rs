//! Zero-shot datasets: class attributes, seen/unseen splits, optional part
//! annotations, plus a seeded synthetic compositional dataset.

mod attributes;
mod loader;
mod parts;
mod preprocess;
mod synthetic;

use std::collections::BTreeSet;

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use attributes::normalize_attribute_rows;
pub use loader::{load_zsl_dataset, save_zsl_dataset, DatasetId, Manifest};
pub use parts::{build_part_maps, project_part_maps, Click, PartAnnotations, PART_SQUARE};
pub use preprocess::{crop_offset, preprocess, Mode, PreprocessConfig, Preprocessed};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

/// Disjoint seen (train) and unseen (test) class sets, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(mut train: Vec<usize>, mut test: Vec<usize>) -> Result<Self> {
        train.sort_unstable();
        train.dedup();
        test.sort_unstable();
        test.dedup();
        let seen: BTreeSet<_> = train.iter().collect();
        if let Some(c) = test.iter().find(|c| seen.contains(c)) {
            return Err(Error::Dataset(format!("class {c} is in both train and test splits")));
        }
        Ok(Self { train, test })
    }

    pub fn contains(&self, class: usize) -> bool {
        self.train.binary_search(&class).is_ok() || self.test.binary_search(&class).is_ok()
    }

    /// Position of `class` within the train list.
    pub fn train_position(&self, class: usize) -> Option<usize> {
        self.train.binary_search(&class).ok()
    }
}

pub struct DatasetBundle {
    pub name: String,
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    /// `[num_classes, num_attributes]`, every row of unit Euclidean norm.
    pub attributes: Array2<f64>,
    pub split: Split,
    pub parts: Option<PartAnnotations>,
}

impl std::fmt::Debug for DatasetBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetBundle")
            .field("name", &self.name)
            .field("images", &self.images.len())
            .field("classes", &self.attributes.nrows())
            .field("attributes", &self.attributes.ncols())
            .field("split", &(self.split.train.len(), self.split.test.len()))
            .field("parts", &self.parts.as_ref().map(|p| p.num_parts))
            .finish()
    }
}

impl DatasetBundle {
    /// Validates the bundle invariants and normalises the attribute rows.
    pub fn new(
        name: impl Into<String>,
        images: Vec<RgbImage>,
        labels: Vec<usize>,
        raw_attributes: Array2<f64>,
        split: Split,
        parts: Option<PartAnnotations>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let num_classes = raw_attributes.nrows();
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Dataset(format!(
                    "image {i} has label {l} but only {num_classes} attribute rows exist"
                )));
            }
            if !split.contains(l) {
                return Err(Error::Dataset(format!("image {i} label {l} is in neither split")));
            }
        }
        if let Some(c) = split.train.iter().chain(&split.test).find(|&&c| c >= num_classes) {
            return Err(Error::Dataset(format!("split references unknown class {c}")));
        }
        if let Some(p) = &parts {
            p.validate(&images)?;
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            attributes: normalize_attribute_rows(&raw_attributes)?,
            split,
            parts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let set: BTreeSet<_> = classes.iter().copied().collect();
        (0..self.labels.len()).filter(|&i| set.contains(&self.labels[i])).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(&self.split.train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(&self.split.test)
    }

    pub fn attribute_row(&self, class: usize) -> Vec<f64> {
        self.attributes.row(class).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn img() -> RgbImage {
        RgbImage::new(4, 4)
    }

    #[test]
    fn overlapping_split_is_rejected() {
        assert!(Split::new(vec![0, 1], vec![1, 2]).is_err());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let split = Split::new(vec![0], vec![1]).unwrap();
        let r = DatasetBundle::new("t", vec![img()], vec![5], array![[1.0], [1.0]], split, None);
        assert!(r.is_err());
    }

    #[test]
    fn label_outside_splits_is_rejected() {
        let split = Split::new(vec![0], vec![1]).unwrap();
        let r = DatasetBundle::new("t", vec![img()], vec![2], array![[1.0], [1.0], [1.0]], split, None);
        assert!(r.is_err());
    }

    #[test]
    fn bundle_normalises_attributes() {
        let split = Split::new(vec![0], vec![1]).unwrap();
        let b = DatasetBundle::new("t", vec![img(), img()], vec![0, 1], array![[3.0, 4.0], [0.0, 2.0]], split, None)
            .unwrap();
        assert_eq!(b.attribute_row(0), vec![0.6, 0.8]);
        assert_eq!(b.train_indices(), vec![0]);
        assert_eq!(b.test_indices(), vec![1]);
    }
}
