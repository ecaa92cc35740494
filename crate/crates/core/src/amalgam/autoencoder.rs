//! Linear channel autoencoders: a `conv1x1` encoder compressing `cin`
//! channels to `cout`, and a `conv1x1` decoder mapping back.

use crate::data::batches;
use crate::error::{Error, Result};
use crate::ops;
use crate::optim::{Param, Sgd};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Samples per chunk for full-pass evaluations.
const CHUNK: usize = 128;

#[derive(Clone, Debug)]
pub struct ChannelAutoencoder {
    pub enc: Param,
    pub dec: Param,
    pub cin: usize,
    pub cout: usize,
}

impl ChannelAutoencoder {
    /// Encoder and decoder drawn uniform in `+-sqrt(6 / (cin + cout))`.
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Result<Self> {
        check_widths(cin, cout)?;
        let bound = (6.0 / (cin + cout) as f32).sqrt();
        let mut draw = |shape: [usize; 2]| {
            let data = (0..shape[0] * shape[1]).map(|_| rng.uniform(-bound, bound)).collect();
            Tensor::new(&shape, data).expect("positive extents")
        };
        let enc = draw([cout, cin]);
        let dec = draw([cin, cout]);
        Self::from_weights(enc, dec)
    }

    pub fn from_weights(enc: Tensor, dec: Tensor) -> Result<Self> {
        if enc.rank() != 2 || dec.rank() != 2 || dec.shape() != [enc.dim(1), enc.dim(0)] {
            return Err(Error::shape(
                "ChannelAutoencoder",
                format!(
                    "encoder {:?} and decoder {:?} are not a transposed pair",
                    enc.shape(),
                    dec.shape()
                ),
            ));
        }
        let (cout, cin) = (enc.dim(0), enc.dim(1));
        check_widths(cin, cout)?;
        Ok(ChannelAutoencoder {
            enc: Param::new("enc", enc),
            dec: Param::new("dec", dec),
            cin,
            cout,
        })
    }

    pub fn encode(&self, f: &Tensor) -> Result<Tensor> {
        ops::conv1x1(f, &self.enc.value)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        ops::conv1x1(z, &self.dec.value)
    }

    /// `L_FA = 1/2 ||dec(enc(F)) - F||^2` per sample, over all of `f`.
    pub fn reconstruction_loss(&self, f: &Tensor) -> Result<f64> {
        let mut total = 0.0;
        for (s, e) in chunks(f.batch()) {
            let x = f.slice_batch(s, e)?;
            let r = self.decode(&self.encode(&x)?)?;
            let (l, _) = ops::l2_loss(&r, &x)?;
            total += l * (e - s) as f64;
        }
        Ok(total / f.batch() as f64)
    }
}

fn check_widths(cin: usize, cout: usize) -> Result<()> {
    if cout == 0 || cout >= cin {
        return Err(Error::invalid(
            "ChannelAutoencoder",
            format!("cout {cout} must satisfy 0 < cout < cin = {cin}"),
        ));
    }
    Ok(())
}

pub(crate) fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(CHUNK).map(move |s| (s, (s + CHUNK).min(n)))
}

/// `1/2 ||F||^2` per sample: the loss of reconstructing everything as zero.
pub fn feature_energy(f: &Tensor) -> f64 {
    0.5 * f.sum_sq() / f.batch() as f64
}

/// Optimization settings shared by the autoencoders and the layer-wise
/// stages. `sgd.lr` is a normalized step: the applied rate is divided by the
/// mean per-sample energy of the design (the inputs each trained map sees),
/// so the same value works across layers of very different magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitHyper {
    pub sgd: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitHyper {
    fn default() -> Self {
        FitHyper {
            sgd: Sgd {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl FitHyper {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("fit", "batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Optimizer with the step divided by `energy`.
    pub(crate) fn scaled(&self, energy: f64) -> Result<Sgd> {
        if !(energy.is_finite() && energy > 0.0) {
            return Err(Error::invalid(
                "fit",
                format!("design energy {energy} must be finite and positive"),
            ));
        }
        Ok(Sgd {
            lr: (self.sgd.lr as f64 / energy) as f32,
            ..self.sgd
        })
    }
}

/// Loss bookkeeping of one fitted map.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Full-pass loss before the first step.
    pub initial_loss: f64,
    /// Full-pass loss after the last step.
    pub final_loss: f64,
    /// Running mean of the minibatch losses in each epoch.
    pub loss_curve: Vec<f64>,
}

/// Train a `cin -> cout` autoencoder on `features` (`[K, cin, ...]`),
/// minimizing the per-sample mean of `1/2 ||dec(enc(F)) - F||^2`.
pub fn train_autoencoder(features: &Tensor, cout: usize, hyper: &FitHyper) -> Result<(ChannelAutoencoder, FitReport)> {
    hyper.validate()?;
    if features.rank() < 2 {
        return Err(Error::shape("train_autoencoder", "features need a channel axis"));
    }
    let cin = features.dim(1);
    let mut rng = Rng::stream(hyper.seed, &[0x6165]);
    let ae = ChannelAutoencoder::new(cin, cout, &mut rng)?;
    let sgd = hyper.scaled(2.0 * feature_energy(features))?;
    let initial_loss = ae.reconstruction_loss(features)?;
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let mut params = [ae.enc, ae.dec];
    for epoch in 1..=hyper.epochs {
        let mut sum = 0.0;
        for idx in batches(features.batch(), hyper.batch_size, hyper.seed, epoch as u64, true) {
            let x = features.select(&idx)?;
            let mut tape = Tape::new();
            let z = tape.conv1x1(&params, 0, x.clone())?;
            let r = tape.conv1x1(&params, 1, z)?;
            let (loss, g) = ops::l2_loss(&r, &x)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "autoencoder loss".into(),
                });
            }
            sum += loss * idx.len() as f64;
            tape.backward(&mut params, g, false)?;
            sgd.step(&mut params)?;
        }
        loss_curve.push(sum / features.batch() as f64);
    }
    let [enc, dec] = params;
    let ae = ChannelAutoencoder { enc, dec, cin, cout };
    let final_loss = ae.reconstruction_loss(features)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite {
            what: "autoencoder loss".into(),
        });
    }
    Ok((
        ae,
        FitReport {
            initial_loss,
            final_loss,
            loss_curve,
        },
    ))
}

/// Encode all of `f` chunk by chunk.
pub fn encode(ae: &ChannelAutoencoder, f: &Tensor) -> Result<Tensor> {
    let parts = chunks(f.batch())
        .map(|(s, e)| ae.encode(&f.slice_batch(s, e)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `cin` channels that are random mixes of `rank` latent channels.
    pub(crate) fn low_rank(k: usize, rank: usize, cin: usize, hw: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let mix: Vec<f32> = (0..cin * rank).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut data = Vec::with_capacity(k * cin * hw);
        for _ in 0..k {
            let latent: Vec<f32> = (0..rank * hw).map(|_| rng.normal()).collect();
            for c in 0..cin {
                for p in 0..hw {
                    data.push((0..rank).map(|r| mix[c * rank + r] * latent[r * hw + p]).sum());
                }
            }
        }
        Tensor::new(&[k, cin, hw, 1], data).unwrap()
    }

    #[test]
    fn rejects_non_compressing_widths() {
        let f = Tensor::full(&[2, 4, 2, 2], 1.0);
        assert!(train_autoencoder(&f, 4, &FitHyper::default()).is_err());
        assert!(train_autoencoder(&f, 5, &FitHyper::default()).is_err());
        assert!(train_autoencoder(&f, 0, &FitHyper::default()).is_err());
    }

    #[test]
    fn selection_and_zero_encoders() {
        let f = Tensor::new(&[1, 3, 1, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let enc = Tensor::new(&[2, 3], vec![1., 0., 0., 0., 1., 0.]).unwrap();
        let dec = Tensor::zeros(&[3, 2]);
        let ae = ChannelAutoencoder::from_weights(enc, dec.clone()).unwrap();
        assert_eq!(ae.encode(&f).unwrap(), f.slice_channels(0, 2).unwrap());
        let ae = ChannelAutoencoder::from_weights(Tensor::zeros(&[2, 3]), dec).unwrap();
        assert!(ae.encode(&f).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_inverse_pair() {
        // channel 2 = channel 0 + channel 1: rank 2 inside 3 channels
        let mut rng = Rng::new(1);
        let mut data = Vec::new();
        for _ in 0..4 {
            let a: Vec<f32> = (0..6).map(|_| rng.normal()).collect();
            let b: Vec<f32> = (0..6).map(|_| rng.normal()).collect();
            data.extend(&a);
            data.extend(&b);
            data.extend(a.iter().zip(&b).map(|(x, y)| x + y));
        }
        let f = Tensor::new(&[4, 3, 2, 3], data).unwrap();
        let enc = Tensor::new(&[2, 3], vec![1., 0., 0., 0., 1., 0.]).unwrap();
        let dec = Tensor::new(&[3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let ae = ChannelAutoencoder::from_weights(enc, dec).unwrap();
        let r = ae.decode(&ae.encode(&f).unwrap()).unwrap();
        assert!(r.max_abs_diff(&f) < 1e-5);
    }

    #[test]
    fn low_rank_reconstruction_under_five_percent() {
        let f = low_rank(64, 3, 8, 16, 2);
        let hyper = FitHyper {
            epochs: 30,
            batch_size: 16,
            ..FitHyper::default()
        };
        let (ae, rep) = train_autoencoder(&f, 4, &hyper).unwrap();
        let rel = rep.final_loss / feature_energy(&f);
        assert!(rel < 0.05, "{rel} {rep:?}");
        assert!(rep.final_loss < rep.initial_loss);
        assert_eq!(rep.final_loss, ae.reconstruction_loss(&f).unwrap());
    }

    #[test]
    fn loss_decreases_on_random_features() {
        let mut rng = Rng::new(5);
        let f = Tensor::new(&[32, 6, 3, 3], (0..32 * 54).map(|_| rng.normal()).collect()).unwrap();
        let (_, rep) = train_autoencoder(&f, 3, &FitHyper::default()).unwrap();
        assert!(rep.final_loss < rep.initial_loss, "{rep:?}");
        assert_eq!(rep.loss_curve.len(), 10);
    }
}
