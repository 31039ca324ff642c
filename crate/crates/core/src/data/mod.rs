//! Labeled image datasets: a synthetic two-domain shapes generator, folder
//! ingestion for real data, and training-time augmentation.

mod augment;
mod folder;
pub mod imageio;
mod shapes;

pub use augment::{augment, hflip, AugmentSettings};
pub use folder::load_image_folder;
pub use shapes::{
    build_shapes_dataset, generate_shapes_sample, load_shapes_dataset, render_shape, save_shapes_dataset, ShapeKind,
    ShapesSpec, INDEX_FILE, SHAPES_DOMAINS, SPEC_FILE,
};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ground-truth generative attributes of a synthetic sample, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAttributes {
    pub center_x: f64,
    pub center_y: f64,
    /// Radius for circles, half side length for squares.
    pub size: f64,
    pub color_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[C, H, W]`, values in `[-1, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub attributes: Option<SampleAttributes>,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { spec: ShapesSpec },
    Folder {
        root: PathBuf,
        domains: Vec<String>,
        /// Files that could not be decoded and were skipped.
        skipped: usize,
    },
    Derived { from: Box<Provenance>, note: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<Sample>,
    pub num_domains: usize,
    pub channels: usize,
    pub image_size: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(items: Vec<Sample>, num_domains: usize, channels: usize, image_size: usize, provenance: Provenance) -> Result<Self> {
        let ds = LabeledDataset {
            items,
            num_domains,
            channels,
            image_size,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = [self.channels, self.image_size, self.image_size];
        for (i, s) in self.items.iter().enumerate() {
            if s.label >= self.num_domains {
                return Err(Error::Domain(format!(
                    "item {i} has label {} but the dataset has {} domains",
                    s.label, self.num_domains
                )));
            }
            if s.image.shape() != shape {
                return Err(Error::Data(format!(
                    "item {i} has shape {:?}, expected {shape:?}",
                    s.image.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_domains];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    /// Fails unless every domain has at least one item.
    pub fn require_all_domains(&self) -> Result<()> {
        if let Some((d, _)) = self.counts().iter().enumerate().find(|(_, &c)| c == 0) {
            return Err(Error::Config(format!("dataset has no images for domain {d}")));
        }
        Ok(())
    }

    /// Stacks the given items into a `[B, C, H, W]` batch and its labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.items[i].image).collect();
        let labels = indices.iter().map(|&i| self.items[i].label).collect();
        Ok((Tensor::stack(&images)?, labels))
    }

    /// Indices of items with the given label, in dataset order.
    pub fn indices_of(&self, label: usize) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Deterministic shuffled split into (first, second) with `fraction` of
    /// each domain going to the second part.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (LabeledDataset, LabeledDataset) {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for d in 0..self.num_domains {
            let mut idx = self.indices_of(d);
            idx.shuffle(rng);
            let n_second = ((idx.len() as f64) * fraction).round() as usize;
            for (j, &i) in idx.iter().enumerate() {
                if j < n_second {
                    second.push(self.items[i].clone());
                } else {
                    first.push(self.items[i].clone());
                }
            }
        }
        let part = |items: Vec<Sample>, note: &str| LabeledDataset {
            items,
            num_domains: self.num_domains,
            channels: self.channels,
            image_size: self.image_size,
            provenance: Provenance::Derived {
                from: Box::new(self.provenance.clone()),
                note: note.to_string(),
            },
        };
        (part(first, "split:first"), part(second, "split:second"))
    }
}
