use serde::{Deserialize, Serialize};

use crate::dataspace::CorruptionKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Clean/noisy tag, used both for ground truth and for detection output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Clean,
    Noisy,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Clean => "clean",
            Quality::Noisy => "noisy",
        }
    }
}

/// Planar image geometry: `channels × height × width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn grayscale(height: usize, width: usize) -> Self {
        Self::new(1, height, width)
    }

    /// Number of scalar values in one image.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// A labelled image collection with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    shape: ImageShape,
    samples: Vec<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, checking shape, range and label invariants.
    pub fn new(
        shape: ImageShape,
        samples: Vec<T>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::arg("num_classes must be positive"));
        }
        if shape.is_empty() {
            return Err(Error::arg("image shape must be non-empty"));
        }
        if samples.len() != labels.len() * shape.len() {
            return Err(Error::Consistency(format!(
                "{} pixel values for {} labels of {} values each",
                samples.len(),
                labels.len(),
                shape.len()
            )));
        }
        if let Some(pos) = samples
            .iter()
            .position(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::arg(format!(
                "pixel value {} at position {pos} outside [0, 1]",
                samples[pos]
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::arg(format!(
                "label {bad} not below num_classes {num_classes}"
            )));
        }
        Ok(Self {
            shape,
            samples,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    /// Flattened width of one sample.
    pub fn feature_dim(&self) -> usize {
        self.shape.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[T] {
        let d = self.shape.len();
        &self.samples[i * d..(i + 1) * d]
    }

    /// Copies the listed samples, in the listed order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        let d = self.shape.len();
        let mut samples = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            samples.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            shape: self.shape,
            samples,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Gathers samples into a row-major `[indices.len() × feature_dim]` batch.
    pub fn gather(&self, indices: &[usize], out_x: &mut Vec<T>, out_y: &mut Vec<usize>) {
        out_x.clear();
        out_y.clear();
        for &i in indices {
            out_x.extend_from_slice(self.image(i));
            out_y.push(self.labels[i]);
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn set_sample(&mut self, i: usize, pixels: &[T]) {
        let d = self.shape.len();
        self.samples[i * d..(i + 1) * d].copy_from_slice(pixels);
    }

    pub(crate) fn set_label(&mut self, i: usize, label: usize) {
        self.labels[i] = label;
    }
}

/// Kinds and seed that were used to corrupt a shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub kinds: Vec<CorruptionKind>,
    pub seed: u64,
}

/// One client's private shard.
///
/// `source_indices[i]` is the position of local sample `i` in the dataset
/// the shard was partitioned from.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset<T> {
    pub client_id: usize,
    pub data: Dataset<T>,
    pub source_indices: Vec<usize>,
    pub corrupted_mask: Vec<bool>,
    pub truth_tag: Quality,
    pub corruption: Option<CorruptionRecord>,
}

impl<T: Scalar> ClientDataset<T> {
    /// An uncorrupted shard drawn from `source` at `indices`.
    pub fn from_indices(client_id: usize, source: &Dataset<T>, indices: Vec<usize>) -> Self {
        let data = source.subset(&indices);
        let n = indices.len();
        Self {
            client_id,
            data,
            source_indices: indices,
            corrupted_mask: vec![false; n],
            truth_tag: Quality::Clean,
            corruption: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted_mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of corrupted samples.
    pub fn noise_level(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.corrupted_count() as f64 / self.len() as f64
        }
    }
}
