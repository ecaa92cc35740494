//! Teacher features and scores collected over the transfer set.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nets::{Network, EVAL_CHUNK};
use crate::tensor::Tensor;

/// `features[&l][i]` is teacher `i`'s raw layer-`l` output over every
/// transfer image; `scores[i]` its score vectors.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    pub features: BTreeMap<usize, Vec<Tensor>>,
    pub scores: Vec<Tensor>,
}

/// Teachers must agree on everything but the classifier width.
pub fn check_same_architecture(teachers: &[Network]) -> Result<()> {
    let first = teachers
        .first()
        .ok_or_else(|| Error::invalid("teachers", "no teachers"))?;
    let l = first.num_layers();
    for (i, t) in teachers.iter().enumerate() {
        let same = t.spec.input_shape == first.spec.input_shape
            && t.num_layers() == l
            && t.spec.layers[..l - 1] == first.spec.layers[..l - 1]
            && t.spec.layers[l - 1].in_ch == first.spec.layers[l - 1].in_ch;
        if !same {
            return Err(Error::invalid(
                "teachers",
                format!("teacher {i} does not share teacher 0's architecture"),
            ));
        }
    }
    Ok(())
}

impl FeatureBank {
    /// Run every teacher over `images`, keeping the `layers` taps and the
    /// scores.
    pub fn collect(teachers: &[Network], images: &Tensor, layers: &[usize]) -> Result<Self> {
        check_same_architecture(teachers)?;
        let n = images.batch();
        let mut feats: BTreeMap<usize, Vec<(Vec<usize>, Vec<f32>)>> = layers
            .iter()
            .map(|&l| (l, vec![(Vec::new(), Vec::new()); teachers.len()]))
            .collect();
        let mut scores = vec![(Vec::new(), Vec::new()); teachers.len()];
        for start in (0..n).step_by(EVAL_CHUNK) {
            let x = images.slice_batch(start, (start + EVAL_CHUNK).min(n))?;
            for (i, t) in teachers.iter().enumerate() {
                let (taps, s) = t.forward_collect(&x, layers)?;
                for (l, f) in taps {
                    let slot = &mut feats.get_mut(&l).expect("requested tap")[i];
                    slot.0 = f.shape().to_vec();
                    slot.1.extend_from_slice(f.data());
                }
                scores[i].0 = s.shape().to_vec();
                scores[i].1.extend_from_slice(s.data());
            }
        }
        let assemble = |(mut shape, data): (Vec<usize>, Vec<f32>)| {
            shape[0] = n;
            Tensor::new(&shape, data)
        };
        Ok(FeatureBank {
            features: feats
                .into_iter()
                .map(|(l, v)| Ok((l, v.into_iter().map(assemble).collect::<Result<Vec<_>>>()?)))
                .collect::<Result<_>>()?,
            scores: scores.into_iter().map(assemble).collect::<Result<_>>()?,
        })
    }

    /// Remove and return layer `l`'s features.
    pub fn take_layer(&mut self, l: usize) -> Option<Vec<Tensor>> {
        self.features.remove(&l)
    }
}
