//! Face datasets: directory loading, a synthetic identity generator, target
//! sets and evaluation pairing.

pub mod images;
pub mod pairs;
pub mod synth;

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use images::{load_image_dir, load_images, save_image, tensor_to_rgb8, write_dataset};
pub use pairs::{make_eval_pairs, EvalPair, PairingMode};
pub use synth::{jitter_scale, synth_faces, FaceParams, SynthFaces, SEPARATION_RATIO};

/// Alias documenting the `3×H×W`, `[-1, 1]` image convention.
pub type ImageTensor = Tensor<f32>;

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub image: ImageTensor,
    pub label: usize,
    /// Source file, or a synthetic name like `id03/img0007`.
    pub path: PathBuf,
}

/// Images of labeled identities; every image is `3×image_size×image_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityDataset {
    pub items: Vec<Item>,
    pub identities: Vec<String>,
    pub image_size: usize,
}

impl IdentityDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Items selected by a predicate over `(label, index within identity)`.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut seen = vec![0usize; self.identities.len()];
        let items = self
            .items
            .iter()
            .filter(|it| {
                let k = seen[it.label];
                seen[it.label] += 1;
                keep(it.label, k)
            })
            .cloned()
            .collect();
        Self { items, identities: self.identities.clone(), image_size: self.image_size }
    }

    pub fn of_identity(&self, label: usize) -> Vec<&Item> {
        self.items.iter().filter(|i| i.label == label).collect()
    }

    pub fn take(mut self, n: usize) -> Self {
        self.items.truncate(n);
        self
    }

    /// `N×3×H×W` batch of the given items.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let refs: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.items[i].image).collect();
        Tensor::stack(&refs)
    }
}

/// Images of the identity an attack impersonates.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub label: usize,
    pub name: String,
    /// Images used to compute the latent code.
    pub images: Vec<ImageTensor>,
    /// Further images of the same identity, never encoded; used for A→A′ pairing.
    pub alternates: Vec<ImageTensor>,
    /// Which of `images` is the comparison target in A→A pairing.
    pub canonical: usize,
}

impl TargetSet {
    /// First `count` images of `label` become the target images, the rest alternates.
    pub fn from_dataset(ds: &IdentityDataset, label: usize, count: usize) -> Result<Self> {
        let items = ds.of_identity(label);
        if items.is_empty() || count == 0 {
            return Err(Error::Config(format!("identity {label} has no images for a target set")));
        }
        let count = count.min(items.len());
        Ok(Self {
            label,
            name: ds.identities.get(label).cloned().unwrap_or_default(),
            images: items[..count].iter().map(|i| i.image.clone()).collect(),
            alternates: items[count..].iter().map(|i| i.image.clone()).collect(),
            canonical: 0,
        })
    }

    /// Target set from a flat list of images of one identity.
    pub fn from_images(name: &str, mut images: Vec<ImageTensor>, count: usize) -> Result<Self> {
        if images.is_empty() || count == 0 {
            return Err(Error::Config(format!("target {name:?} has no images")));
        }
        let alternates = images.split_off(count.min(images.len()));
        Ok(Self { label: 0, name: name.to_string(), images, alternates, canonical: 0 })
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }

    pub fn canonical_image(&self) -> &ImageTensor {
        &self.images[self.canonical]
    }
}
