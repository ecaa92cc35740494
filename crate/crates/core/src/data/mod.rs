//! Labeled image sets, class splits, the unlabeled transfer set and batching.

mod idx;
mod synthetic;

pub use idx::{load_idx, parse_idx, write_idx_images, write_idx_labels};
pub use synthetic::{class_template, gen_synthetic, gen_synthetic_split, SyntheticSpec};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stream id for the transfer-set permutation.
const TRANSFER_STREAM: u64 = 0x7472_616e;
/// Stream id for per-epoch batch shuffles.
const BATCH_STREAM: u64 = 0x6261_7463;
/// Stream id for the class-split shuffle.
const SPLIT_STREAM: u64 = 0x7370_6c74;

/// Images with global class labels.
///
/// `class_ids` doubles as the local index map: a sample's local label is the
/// position of its global label in `class_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_ids: Vec<usize>,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>, class_ids: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(
                "LabeledSet",
                format!("images {:?} not [N,C,H,W]", images.shape()),
            ));
        }
        if images.batch() != labels.len() {
            return Err(Error::CountMismatch {
                detail: format!("{} images vs {} labels", images.batch(), labels.len()),
            });
        }
        if let Some(l) = labels.iter().find(|l| !class_ids.contains(l)) {
            return Err(Error::invalid(
                "LabeledSet",
                format!("label {l} not among class ids {class_ids:?}"),
            ));
        }
        if !images.is_finite() {
            return Err(Error::NonFinite { what: "images".into() });
        }
        Ok(LabeledSet {
            images,
            labels,
            class_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Sample shape `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.dims4();
        [c, h, w]
    }

    pub fn local_label(&self, global: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == global)
    }

    pub fn local_labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|&l| self.local_label(l).expect("label checked at construction"))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledSet> {
        Ok(LabeledSet {
            images: self.images.select(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_ids: self.class_ids.clone(),
        })
    }
}

/// Unlabeled images fed to the teachers.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferSet {
    pub images: Tensor,
}

impl TransferSet {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Assignment of global classes to teachers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub parts: Vec<Vec<usize>>,
    pub overlap_allowed: bool,
}

impl ClassSplit {
    pub fn new(parts: Vec<Vec<usize>>, overlap_allowed: bool) -> Result<Self> {
        if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::invalid("ClassSplit", "every part needs at least one class"));
        }
        if !overlap_allowed {
            let mut seen = BTreeSet::new();
            for &c in parts.iter().flatten() {
                if !seen.insert(c) {
                    return Err(Error::invalid(
                        "ClassSplit",
                        format!("class {c} appears in more than one part"),
                    ));
                }
            }
        }
        Ok(ClassSplit { parts, overlap_allowed })
    }

    /// Shuffle the non-shared classes with `seed`, cut them into `n_parts`
    /// contiguous ranges of (near) equal size, then add every `shared` class
    /// to each part. Each part is sorted ascending.
    pub fn random_equal(class_ids: &[usize], n_parts: usize, shared: &[usize], seed: u64) -> Result<Self> {
        if n_parts == 0 {
            return Err(Error::invalid("ClassSplit", "need at least one part"));
        }
        if let Some(s) = shared.iter().find(|s| !class_ids.contains(s)) {
            return Err(Error::invalid("ClassSplit", format!("shared class {s} is unknown")));
        }
        let mut own: Vec<usize> = class_ids.iter().copied().filter(|c| !shared.contains(c)).collect();
        if own.len() < n_parts {
            return Err(Error::invalid(
                "ClassSplit",
                format!("{} classes cannot fill {n_parts} parts", own.len()),
            ));
        }
        Rng::stream(seed, &[SPLIT_STREAM]).shuffle(&mut own);
        let base = own.len() / n_parts;
        let extra = own.len() % n_parts;
        let mut parts = Vec::with_capacity(n_parts);
        let mut start = 0;
        for i in 0..n_parts {
            let len = base + usize::from(i < extra);
            let mut part: Vec<usize> = own[start..start + len].to_vec();
            part.extend_from_slice(shared);
            part.sort_unstable();
            part.dedup();
            parts.push(part);
            start += len;
        }
        Self::new(parts, !shared.is_empty())
    }

    /// Union of all parts, ascending.
    pub fn all_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.parts.iter().flatten().copied().collect();
        set.into_iter().collect()
    }
}

/// One labeled set per part, holding exactly the samples whose label is in
/// that part. Part `i`'s `class_ids` is `split.parts[i]`.
pub fn split_classes(set: &LabeledSet, split: &ClassSplit) -> Result<Vec<LabeledSet>> {
    split
        .parts
        .iter()
        .map(|part| {
            if let Some(c) = part.iter().find(|c| !set.class_ids.contains(c)) {
                return Err(Error::invalid("split_classes", format!("unknown class id {c}")));
            }
            let idx: Vec<usize> = (0..set.len()).filter(|&i| part.contains(&set.labels[i])).collect();
            if idx.is_empty() {
                return Err(Error::invalid("split_classes", format!("no samples for part {part:?}")));
            }
            let images = set.images.select(&idx)?;
            let labels = idx.iter().map(|&i| set.labels[i]).collect();
            LabeledSet::new(images, labels, part.clone())
        })
        .collect()
}

/// Pool the images of `sets` (labels dropped) in a seeded random order.
pub fn make_transfer_set(sets: &[LabeledSet], seed: u64) -> Result<TransferSet> {
    let images: Vec<&Tensor> = sets.iter().map(|s| &s.images).collect();
    if images.is_empty() {
        return Err(Error::invalid("make_transfer_set", "no input sets"));
    }
    let pooled = Tensor::concat_batch(&images).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape("make_transfer_set", detail),
        other => other,
    })?;
    let perm = Rng::stream(seed, &[TRANSFER_STREAM]).permutation(pooled.batch());
    Ok(TransferSet {
        images: pooled.select(&perm)?,
    })
}

/// Index batches covering `0..n` once. With `shuffle`, the order is a
/// permutation drawn from `(seed, epoch)`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let order: Vec<usize> = if shuffle {
        Rng::stream(seed, &[BATCH_STREAM, epoch]).permutation(n)
    } else {
        (0..n).collect()
    };
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
