//! Concatenated teacher score vectors and the map from entries back to
//! global classes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelEntry {
    pub teacher: usize,
    pub local: usize,
    pub global: usize,
}

/// One entry per column of the concatenated score vector, in teacher order;
/// `global_classes` lists each global id once, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub entries: Vec<LabelEntry>,
    pub global_classes: Vec<usize>,
}

impl LabelMap {
    /// Map for teachers whose local classes are `parts[i]`.
    pub fn new(parts: &[Vec<usize>]) -> Self {
        let entries = parts
            .iter()
            .enumerate()
            .flat_map(|(t, p)| {
                p.iter().enumerate().map(move |(local, &global)| LabelEntry {
                    teacher: t,
                    local,
                    global,
                })
            })
            .collect();
        let global_classes = parts
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        LabelMap {
            entries,
            global_classes,
        }
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// Width of each teacher's block of columns.
    pub fn blocks(&self) -> Vec<usize> {
        let n = self.entries.iter().map(|e| e.teacher + 1).max().unwrap_or(0);
        let mut b = vec![0; n];
        for e in &self.entries {
            b[e.teacher] += 1;
        }
        b
    }

    /// Position of `global` in `global_classes`.
    pub fn global_index(&self, global: usize) -> Option<usize> {
        self.global_classes.binary_search(&global).ok()
    }
}

/// Concatenate raw score vectors in teacher order.
pub fn amalgamate_scores(scores: &[&Tensor], parts: &[Vec<usize>]) -> Result<(Tensor, LabelMap)> {
    if scores.len() != parts.len() {
        return Err(Error::invalid(
            "amalgamate_scores",
            format!("{} score tensors for {} class lists", scores.len(), parts.len()),
        ));
    }
    for (s, p) in scores.iter().zip(parts) {
        if s.rank() != 2 || s.dim(1) != p.len() {
            return Err(Error::shape(
                "amalgamate_scores",
                format!("scores {:?} for {} classes", s.shape(), p.len()),
            ));
        }
    }
    Ok((Tensor::concat_channels(scores)?, LabelMap::new(parts)))
}

/// Collapse entries to global classes by taking, per class, the maximum over
/// its entries. Columns follow `map.global_classes`.
pub fn merge_overlapping_at_test(scores: &Tensor, map: &LabelMap) -> Result<Tensor> {
    let e = map.entry_count();
    if scores.rank() != 2 || scores.dim(1) != e {
        return Err(Error::shape(
            "merge_overlapping_at_test",
            format!("scores {:?} for {e} entries", scores.shape()),
        ));
    }
    let g = map.global_classes.len();
    let cols: Vec<usize> = map
        .entries
        .iter()
        .map(|en| map.global_index(en.global).expect("entries cover globals"))
        .collect();
    let mut out = vec![f32::NEG_INFINITY; scores.batch() * g];
    for (row, dst) in scores.data().chunks(e).zip(out.chunks_mut(g)) {
        for (&v, &c) in row.iter().zip(&cols) {
            dst[c] = dst[c].max(v);
        }
    }
    Tensor::new(&[scores.batch(), g], out)
}
