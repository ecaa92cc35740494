//! Seeded synthetic image classes: smooth per-class templates plus pixel noise.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::LabeledSet;

/// Stream tag for class templates.
const TEMPLATE_STREAM: u64 = 0x746d_706c;
/// Stream tag for per-sample noise.
const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Parameters of a synthetic data set.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub shape: [usize; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("gen_synthetic", "need at least 2 classes"));
        }
        if self.shape.contains(&0) {
            return Err(Error::invalid(
                "gen_synthetic",
                format!("degenerate shape {:?}", self.shape),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("gen_synthetic", "noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Noise-free image of class `k`: three Gaussian bumps with seeded centres,
/// widths and per-channel amplitudes, plus a low-frequency sinusoid whose
/// frequency pair is unique to the class, clamped to `[0, 1]`.
pub fn class_template(spec: &SyntheticSpec, k: usize) -> Result<Tensor> {
    spec.validate()?;
    let [c, h, w] = spec.shape;
    let mut rng = Rng::stream(spec.seed, &[TEMPLATE_STREAM, k as u64]);
    let size = h.max(w) as f64;
    let bumps: Vec<(f64, f64, f64, Vec<f64>)> = (0..3)
        .map(|_| {
            let cy = rng.uniform_f64(0.15, 0.85) * h as f64;
            let cx = rng.uniform_f64(0.15, 0.85) * w as f64;
            let width = rng.uniform_f64(0.08, 0.2) * size;
            let amps = (0..c).map(|_| rng.uniform_f64(0.3, 0.9)).collect();
            (cy, cx, width, amps)
        })
        .collect();
    // frequency pairs (fy, fx) over {0..3}^2 minus (0, 0), enumerated so
    // that the first 15 classes all differ; beyond that the seeded phase and
    // the bumps still separate classes
    let pair = k % 15 + 1;
    let (fy, fx) = ((pair / 4) as f64, (pair % 4) as f64);
    let phases: Vec<f64> = (0..c).map(|_| rng.uniform_f64(0.0, 2.0 * PI)).collect();

    let mut data = Vec::with_capacity(c * h * w);
    for (ch, phase) in phases.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                let mut v = 0.25 + 0.2 * (2.0 * PI * (fy * yf / h as f64 + fx * xf / w as f64) + phase).sin();
                for (cy, cx, width, amps) in &bumps {
                    let d2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                    v += amps[ch] * (-d2 / (2.0 * width * width)).exp();
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new(&[c, h, w], data)
}

fn render(spec: &SyntheticSpec, k: usize, template: &Tensor, sample: usize, out: &mut Vec<f32>) {
    if spec.noise_sigma == 0.0 {
        out.extend_from_slice(template.data());
        return;
    }
    let mut rng = Rng::stream(spec.seed, &[NOISE_STREAM, k as u64, sample as u64]);
    let sigma = spec.noise_sigma as f32;
    out.extend(
        template
            .data()
            .iter()
            .map(|&t| (t + sigma * rng.normal()).clamp(0.0, 1.0)),
    );
}

fn generate(spec: &SyntheticSpec, samples: std::ops::Range<usize>) -> Result<LabeledSet> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("gen_synthetic", "per_class must be >= 1"));
    }
    let [c, h, w] = spec.shape;
    let n = spec.num_classes * samples.len();
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.num_classes {
        let template = class_template(spec, k)?;
        for s in samples.clone() {
            render(spec, k, &template, s, &mut data);
            labels.push(k);
        }
    }
    let images = Tensor::new(&[n, c, h, w], data)?;
    LabeledSet::new(images, labels, (0..spec.num_classes).collect())
}

/// `per_class` noisy samples of each of `num_classes` classes, grouped by
/// class. Sample `s` of class `k` draws its noise from stream `(seed, k, s)`.
pub fn gen_synthetic(
    num_classes: usize,
    per_class: usize,
    shape: [usize; 3],
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledSet> {
    let spec = SyntheticSpec {
        num_classes,
        shape,
        noise_sigma,
        seed,
    };
    generate(&spec, 0..per_class)
}

/// Train and test sets over the same templates. Test samples use the sample
/// indices after the training ones, so the two sets never share noise.
pub fn gen_synthetic_split(
    spec: &SyntheticSpec,
    train_per_class: usize,
    test_per_class: usize,
) -> Result<(LabeledSet, LabeledSet)> {
    let train = generate(spec, 0..train_per_class)?;
    let test = generate(spec, train_per_class..train_per_class + test_per_class)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_samples_equal_template() {
        let set = gen_synthetic(3, 4, [2, 8, 8], 0.0, 11).unwrap();
        let spec = SyntheticSpec {
            num_classes: 3,
            shape: [2, 8, 8],
            noise_sigma: 0.0,
            seed: 11,
        };
        for (i, &k) in set.labels.iter().enumerate() {
            let img = set.images.select(&[i]).unwrap().reshape(&[2, 8, 8]).unwrap();
            assert_eq!(img, class_template(&spec, k).unwrap());
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = gen_synthetic(4, 5, [3, 10, 10], 0.3, 2).unwrap();
        let b = gen_synthetic(4, 5, [3, 10, 10], 0.3, 2).unwrap();
        assert!(a.images.bitwise_eq(&b.images));
        assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = gen_synthetic(4, 5, [3, 10, 10], 0.3, 3).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn train_and_test_differ() {
        let spec = SyntheticSpec {
            num_classes: 2,
            shape: [1, 6, 6],
            noise_sigma: 0.1,
            seed: 0,
        };
        let (tr, te) = gen_synthetic_split(&spec, 3, 2).unwrap();
        assert_eq!((tr.len(), te.len()), (6, 4));
        assert_ne!(
            tr.images.slice_batch(0, 1).unwrap(),
            te.images.slice_batch(0, 1).unwrap()
        );
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(gen_synthetic(1, 4, [1, 4, 4], 0.1, 0).is_err());
        assert!(gen_synthetic(2, 0, [1, 4, 4], 0.1, 0).is_err());
        assert!(gen_synthetic(2, 4, [0, 4, 4], 0.1, 0).is_err());
        assert!(gen_synthetic(2, 4, [1, 4, 4], -0.1, 0).is_err());
    }

    #[test]
    fn nearest_template_separates_classes() {
        let spec = SyntheticSpec {
            num_classes: 8,
            shape: [3, 32, 32],
            noise_sigma: 0.05,
            seed: 5,
        };
        let templates: Vec<Tensor> = (0..8).map(|k| class_template(&spec, k).unwrap()).collect();
        let (_, test) = gen_synthetic_split(&spec, 1, 50).unwrap();
        let d = test.images.sample_len();
        let mut correct = 0;
        for i in 0..test.len() {
            let x = &test.images.data()[i * d..(i + 1) * d];
            let best = (0..8)
                .min_by(|&a, &b| {
                    let da: f32 = x.iter().zip(templates[a].data()).map(|(p, q)| (p - q) * (p - q)).sum();
                    let db: f32 = x.iter().zip(templates[b].data()).map(|(p, q)| (p - q) * (p - q)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            correct += usize::from(best == test.labels[i]);
        }
        assert!(correct as f64 / test.len() as f64 >= 0.99);
    }
}
