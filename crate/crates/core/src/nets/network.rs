//! Instantiated networks: parameters, optional feature adapters, and the
//! forward chain with per-layer taps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::optim::Param;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{ParamId, Tape};
use crate::tensor::Tensor;

use super::spec::{LayerKind, LayerSpec, NetworkSpec};

/// Parameter slots used by one block of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fam: Option<ParamId>,
}

/// Block `l` of a network: the optional feature adapter on the incoming
/// (raw, pre-activation) features, the previous layer's activation and
/// pooling, a flatten if the layer asks for one, then layer `l`'s conv or
/// linear map. Its output is layer `l`'s tapped feature.
///
/// `prev` is `None` for the first block, whose input is the image itself.
pub fn run_block<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Param<T>],
    ids: BlockParams,
    layer: &LayerSpec,
    prev: Option<&LayerSpec>,
    x: Tensor<T>,
) -> Result<Tensor<T>> {
    let mut x = x;
    if let Some(fam) = ids.fam {
        x = tape.conv1x1(params, fam, x)?;
    }
    if let Some(p) = prev {
        x = tape.activation(p.activation, x);
        x = tape.pool(p.pool, x)?;
    }
    match layer.kind {
        LayerKind::Conv => tape.conv2d(params, ids.weight, ids.bias, layer.geom(), x),
        LayerKind::Fc => {
            if layer.flatten_before && x.rank() > 2 {
                let shape = [x.batch(), x.sample_len()];
                x = tape.reshape(x, &shape)?;
            }
            tape.linear(params, ids.weight, ids.bias, x)
        }
    }
}

/// Uniform `+-sqrt(6 / fan_in)` weights and zero bias for `layer`.
pub fn init_layer<T: Scalar>(layer: &LayerSpec, l: usize, rng: &mut Rng) -> (Param<T>, Param<T>) {
    let bound = (6.0 / layer.fan_in() as f64).sqrt();
    let shape = layer.weight_shape();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.uniform_f64(-bound, bound))).collect();
    let w = Param::new(
        format!("layer{l}.weight"),
        Tensor::new(&shape, data).expect("shape from spec"),
    );
    let b = Param::new(format!("layer{l}.bias"), Tensor::zeros(&[layer.out_ch]));
    (w, b)
}

/// Identity-initialized `c x c` adapter for layer `l`.
pub fn identity_fam<T: Scalar>(l: usize, c: usize) -> Param<T> {
    let mut v = Tensor::zeros(&[c, c]);
    for i in 0..c {
        v.data_mut()[i * c + i] = T::one();
    }
    Param::new(format!("layer{l}.fam"), v)
}

/// A network instance. `params` holds layer `l`'s weight at `2(l-1)`, its
/// bias at `2(l-1)+1`, then any feature adapters in layer order.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    pub spec: NetworkSpec,
    pub params: Vec<Param<T>>,
    fam: Vec<Option<ParamId>>,
}

/// Randomly initialized network for a valid `spec`.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network<T>> {
    spec.validate()?;
    let mut params = Vec::with_capacity(2 * spec.num_layers());
    for (i, layer) in spec.layers.iter().enumerate() {
        let (w, b) = init_layer(layer, i + 1, rng);
        params.push(w);
        params.push(b);
    }
    Ok(Network {
        spec: spec.clone(),
        params,
        fam: vec![None; spec.num_layers()],
    })
}

impl<T: Scalar> Network<T> {
    /// Assemble from explicit parameters (layer weights/biases in order,
    /// then adapters named `layer{l}.fam`), checking every shape.
    pub fn from_params(spec: NetworkSpec, params: Vec<Param<T>>) -> Result<Self> {
        spec.validate()?;
        let l = spec.num_layers();
        if params.len() < 2 * l {
            return Err(Error::shape(
                "Network",
                format!("{} params for {l} layers", params.len()),
            ));
        }
        let mut fam = vec![None; l];
        for (i, p) in params.iter().enumerate() {
            let (expected_name, expected_shape) = if i < 2 * l {
                let layer = &spec.layers[i / 2];
                if i % 2 == 0 {
                    (format!("layer{}.weight", i / 2 + 1), layer.weight_shape())
                } else {
                    (format!("layer{}.bias", i / 2 + 1), vec![layer.out_ch])
                }
            } else {
                let ln = p
                    .name
                    .strip_prefix("layer")
                    .and_then(|r| r.strip_suffix(".fam"))
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&ln| spec.fam_width(ln).is_some() && fam[ln - 1].is_none())
                    .ok_or_else(|| Error::Format {
                        detail: format!("unexpected parameter {:?}", p.name),
                    })?;
                fam[ln - 1] = Some(i);
                let c = spec.fam_width(ln).expect("checked");
                (p.name.clone(), vec![c, c])
            };
            if p.name != expected_name {
                return Err(Error::Format {
                    detail: format!("parameter {i} is {:?}, expected {expected_name:?}", p.name),
                });
            }
            if p.value.shape() != expected_shape.as_slice() {
                return Err(Error::shape(
                    "Network",
                    format!(
                        "{} has shape {:?}, spec needs {expected_shape:?}",
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
        }
        Ok(Network { spec, params, fam })
    }

    pub fn num_layers(&self) -> usize {
        self.spec.num_layers()
    }

    pub fn weight_id(l: usize) -> ParamId {
        2 * (l - 1)
    }

    pub fn bias_id(l: usize) -> ParamId {
        2 * (l - 1) + 1
    }

    pub fn fam_id(&self, l: usize) -> Option<ParamId> {
        self.fam[l - 1]
    }

    /// Layers carrying a feature adapter, ascending.
    pub fn fam_layers(&self) -> Vec<usize> {
        (1..=self.num_layers()).filter(|&l| self.fam[l - 1].is_some()).collect()
    }

    pub fn block_params(&self, l: usize) -> BlockParams {
        BlockParams {
            weight: Self::weight_id(l),
            bias: Self::bias_id(l),
            fam: self.fam_id(l),
        }
    }

    /// Insert an adapter at layer `l` (`2..=L`) with the given value.
    pub fn set_fam(&mut self, l: usize, value: Tensor<T>) -> Result<()> {
        let c = self
            .spec
            .fam_width(l)
            .ok_or_else(|| Error::invalid("set_fam", format!("layer {l} cannot hold an adapter")))?;
        if value.shape() != [c, c] {
            return Err(Error::shape(
                "set_fam",
                format!("adapter for layer {l} must be [{c}, {c}], got {:?}", value.shape()),
            ));
        }
        match self.fam[l - 1] {
            Some(id) => self.params[id].value = value,
            None => {
                let mut p = identity_fam(l, c);
                p.value = value;
                // keep adapters in layer order after the layer params
                let pos = 2 * self.num_layers() + self.fam[..l - 1].iter().flatten().count();
                self.params.insert(pos, p);
                for f in self.fam[l..].iter_mut().flatten() {
                    *f += 1;
                }
                self.fam[l - 1] = Some(pos);
            }
        }
        Ok(())
    }

    /// Identity adapters on every layer from 2 to L-1 (the layer-wise stages
    /// after the first).
    pub fn with_identity_fams(mut self) -> Result<Self> {
        for l in 2..self.num_layers() {
            let c = self.spec.fam_width(l).expect("l >= 2");
            self.set_fam(l, identity_fam::<T>(l, c).value)?;
        }
        Ok(self)
    }

    pub fn count_params(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.spec.input_shape;
        if x.rank() != 4 || x.shape()[1..] != [c, h, w] {
            return Err(Error::shape(
                "forward",
                format!("input {:?} does not match [B, {c}, {h}, {w}]", x.shape()),
            ));
        }
        Ok(())
    }

    /// Run the chain on `tape`, returning the raw outputs of the `taps`
    /// layers (1-based) and the final scores.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Tensor<T>,
        taps: &[usize],
    ) -> Result<(BTreeMap<usize, Tensor<T>>, Tensor<T>)> {
        self.check_input(&x)?;
        let l_total = self.num_layers();
        if let Some(&bad) = taps.iter().find(|&&t| t == 0 || t > l_total) {
            return Err(Error::invalid("forward", format!("tap {bad} outside 1..={l_total}")));
        }
        let mut feats = BTreeMap::new();
        let mut h = x;
        for l in 1..=l_total {
            let prev = (l > 1).then(|| &self.spec.layers[l - 2]);
            h = run_block(
                tape,
                &self.params,
                self.block_params(l),
                &self.spec.layers[l - 1],
                prev,
                h,
            )?;
            if taps.contains(&l) {
                feats.insert(l, h.clone());
            }
        }
        Ok((feats, h))
    }

    /// Inference-only forward with taps.
    pub fn forward_collect(&self, x: &Tensor<T>, taps: &[usize]) -> Result<(BTreeMap<usize, Tensor<T>>, Tensor<T>)> {
        self.forward(&mut Tape::inference(), x.clone(), taps)
    }

    /// Scores for `x`, evaluated `chunk` samples at a time.
    pub fn scores(&self, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let n = x.batch();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let (_, s) = self.forward_collect(&x.slice_batch(start, end)?, &[])?;
            parts.push(s);
            start = end;
        }
        Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(Param::cast).collect(),
            fam: self.fam.clone(),
        }
    }

    /// Same parameter values, bit for bit (velocities and gradients ignored).
    pub fn bitwise_eq(&self, other: &Network<T>) -> bool {
        self.spec == other.spec
            && self.fam == other.fam
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.bitwise_eq(&b.value))
    }
}
