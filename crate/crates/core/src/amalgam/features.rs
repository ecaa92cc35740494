//! Pairwise, one-shot (DFA) and progressive (IFA) feature amalgamation, and
//! the per-layer plan of target widths.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::{merged_width, NetworkSpec};
use crate::rng::derive_key;
use crate::tensor::Tensor;

use super::autoencoder::{encode, train_autoencoder, ChannelAutoencoder, FitHyper, FitReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmalgamMode {
    Pairwise,
    Ifa,
    Dfa,
}

impl AmalgamMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AmalgamMode::Pairwise => "pairwise",
            AmalgamMode::Ifa => "ifa",
            AmalgamMode::Dfa => "dfa",
        }
    }
}

impl fmt::Display for AmalgamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AmalgamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(AmalgamMode::Pairwise),
            "ifa" => Ok(AmalgamMode::Ifa),
            "dfa" => Ok(AmalgamMode::Dfa),
            _ => Err(Error::invalid(
                "AmalgamMode",
                format!("unknown mode {s:?} (pairwise|ifa|dfa)"),
            )),
        }
    }
}

/// Target widths of the amalgamated features for layers `1..=L-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmalgamPlan {
    pub mode: AmalgamMode,
    pub n_teachers: usize,
    /// Single-teacher width per tapped layer.
    pub teacher_widths: Vec<usize>,
    /// Amalgamated width per tapped layer.
    pub per_layer_out: Vec<usize>,
    /// For IFA: per tapped layer, the width after each of the `N - 1`
    /// merges; the last equals `per_layer_out`. Empty otherwise.
    pub merge_widths: Vec<Vec<usize>>,
}

impl AmalgamPlan {
    /// Plan for `n` teachers of `teacher` shape. Each width is
    /// `round(ratio * j * w)` clamped into `(w, j * w)`, where `j` is the
    /// number of teachers merged so far.
    pub fn new(mode: AmalgamMode, teacher: &NetworkSpec, n: usize, ratio: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("AmalgamPlan", "need at least 2 teachers"));
        }
        if mode == AmalgamMode::Pairwise && n != 2 {
            return Err(Error::invalid(
                "AmalgamPlan",
                format!("pairwise mode takes exactly 2 teachers, got {n}"),
            ));
        }
        let l = teacher.num_layers();
        let teacher_widths: Vec<usize> = teacher.layers[..l - 1].iter().map(|s| s.out_ch).collect();
        let width = |w: usize, j: usize, layer: usize| {
            merged_width(w, j, ratio).ok_or_else(|| Error::InvalidSpec {
                layer,
                detail: format!("no width strictly between {w} and {}", j * w),
            })
        };
        let per_layer_out = teacher_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| width(w, n, i + 1))
            .collect::<Result<Vec<_>>>()?;
        let merge_widths = if mode == AmalgamMode::Ifa {
            teacher_widths
                .iter()
                .enumerate()
                .map(|(i, &w)| (2..=n).map(|j| width(w, j, i + 1)).collect())
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let plan = AmalgamPlan {
            mode,
            n_teachers: n,
            teacher_widths,
            per_layer_out,
            merge_widths,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (&w, &out)) in self.teacher_widths.iter().zip(&self.per_layer_out).enumerate() {
            if !(w < out && out < self.n_teachers * w) {
                return Err(Error::InvalidSpec {
                    layer: i + 1,
                    detail: format!("amalgamated width {out} outside ({w}, {})", self.n_teachers * w),
                });
            }
        }
        Ok(())
    }

    /// Number of autoencoders trained per layer.
    pub fn autoencoders_per_layer(&self) -> usize {
        match self.mode {
            AmalgamMode::Ifa => self.n_teachers - 1,
            _ => 1,
        }
    }
}

/// Autoencoders trained for one layer, their reports, and the final
/// amalgamated features.
#[derive(Clone, Debug)]
pub struct LayerAmalgam {
    pub autoencoders: Vec<ChannelAutoencoder>,
    pub reports: Vec<FitReport>,
    pub features: Tensor,
}

fn check_same(op: &'static str, features: &[&Tensor]) -> Result<usize> {
    let first = features.first().ok_or_else(|| Error::invalid(op, "no features"))?;
    for f in features {
        if f.shape() != first.shape() {
            return Err(Error::shape(
                op,
                format!("teacher features {:?} vs {:?}", f.shape(), first.shape()),
            ));
        }
    }
    Ok(first.dim(1))
}

fn step_hyper(hyper: &FitHyper, step: usize) -> FitHyper {
    FitHyper {
        seed: derive_key(hyper.seed, &[step as u64]),
        ..*hyper
    }
}

fn merge(parts: &[&Tensor], cout: usize, hyper: &FitHyper, acc: &mut LayerAmalgam) -> Result<Tensor> {
    let concat = Tensor::concat_channels(parts)?;
    let (ae, rep) = train_autoencoder(&concat, cout, &step_hyper(hyper, acc.autoencoders.len()))?;
    let z = encode(&ae, &concat)?;
    acc.autoencoders.push(ae);
    acc.reports.push(rep);
    Ok(z)
}

/// Amalgamate two teachers' equal-width features into `cout` channels,
/// `C1 < cout < 2 C1`.
pub fn amalgamate_pair(f1: &Tensor, f2: &Tensor, cout: usize, hyper: &FitHyper) -> Result<LayerAmalgam> {
    let c1 = check_same("amalgamate_pair", &[f1, f2])?;
    if !(c1 < cout && cout < 2 * c1) {
        return Err(Error::invalid(
            "amalgamate_pair",
            format!("cout {cout} outside ({c1}, {})", 2 * c1),
        ));
    }
    amalgamate_dfa(&[f1, f2], cout, hyper)
}

/// One autoencoder over all teachers' features concatenated in teacher
/// order.
pub fn amalgamate_dfa(features: &[&Tensor], cout: usize, hyper: &FitHyper) -> Result<LayerAmalgam> {
    let c = check_same("amalgamate_dfa", features)?;
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("amalgamate_dfa", "need at least 2 teachers"));
    }
    if !(c < cout && cout < n * c) {
        return Err(Error::invalid(
            "amalgamate_dfa",
            format!("cout {cout} outside ({c}, {})", n * c),
        ));
    }
    let mut acc = LayerAmalgam {
        autoencoders: Vec::new(),
        reports: Vec::new(),
        features: Tensor::scalar(0.0),
    };
    acc.features = merge(features, cout, hyper, &mut acc)?;
    Ok(acc)
}

/// Left fold over teachers: the running amalgam is merged with the next
/// teacher's features into `merge_widths[i - 1]` channels, one autoencoder
/// per merge.
pub fn amalgamate_ifa(features: &[&Tensor], merge_widths: &[usize], hyper: &FitHyper) -> Result<LayerAmalgam> {
    let c = check_same("amalgamate_ifa", features)?;
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("amalgamate_ifa", "need at least 2 teachers"));
    }
    if merge_widths.len() != n - 1 {
        return Err(Error::invalid(
            "amalgamate_ifa",
            format!("{} merge widths for {n} teachers", merge_widths.len()),
        ));
    }
    let mut acc = LayerAmalgam {
        autoencoders: Vec::new(),
        reports: Vec::new(),
        features: Tensor::scalar(0.0),
    };
    let mut current = features[0].clone();
    for (step, &w) in merge_widths.iter().enumerate() {
        let j = step + 2;
        let cin = current.dim(1) + c;
        if !(c < w && w < j * c && w < cin) {
            return Err(Error::invalid(
                "amalgamate_ifa",
                format!("merge step {} width {w} outside ({c}, {})", step + 1, (j * c).min(cin)),
            ));
        }
        current = merge(&[&current, features[step + 1]], w, hyper, &mut acc)?;
    }
    acc.features = current;
    Ok(acc)
}

/// Dispatch on `plan.mode` for tapped layer `l` (1-based).
pub fn amalgamate_layer(plan: &AmalgamPlan, l: usize, features: &[&Tensor], hyper: &FitHyper) -> Result<LayerAmalgam> {
    if features.len() != plan.n_teachers {
        return Err(Error::invalid(
            "amalgamate_layer",
            format!("{} feature sets for a {}-teacher plan", features.len(), plan.n_teachers),
        ));
    }
    let cout = plan.per_layer_out[l - 1];
    match plan.mode {
        AmalgamMode::Pairwise => amalgamate_pair(features[0], features[1], cout, hyper),
        AmalgamMode::Dfa => amalgamate_dfa(features, cout, hyper),
        AmalgamMode::Ifa => amalgamate_ifa(features, &plan.merge_widths[l - 1], hyper),
    }
}
