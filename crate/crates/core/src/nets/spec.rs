//! Declarative layer lists, their shape walk, and a canonical text form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ops::{Activation, ConvGeom, Pool};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Fc,
}

/// One parameterized layer followed by its (parameter-free) activation and
/// pooling. For fc layers `kernel`/`stride`/`pad` are ignored and kept at
/// `1/1/0`; `flatten_before` collapses a spatial input to `[B, C*H*W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    pub pool: Pool,
    pub flatten_before: bool,
}

impl LayerSpec {
    pub fn conv(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
        pool: Pool,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            activation,
            pool,
            flatten_before: false,
        }
    }

    pub fn fc(in_ch: usize, out_ch: usize, flatten_before: bool, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Fc,
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
            pad: 0,
            activation,
            pool: Pool::None,
            flatten_before,
        }
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom::new(self.kernel, self.stride, self.pad)
    }

    /// Number of scalars in this layer's weight and bias.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch,
            LayerKind::Fc => self.out_ch * self.in_ch + self.out_ch,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.out_ch, self.in_ch, self.kernel, self.kernel],
            LayerKind::Fc => vec![self.out_ch, self.in_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.in_ch * self.kernel * self.kernel,
            LayerKind::Fc => self.in_ch,
        }
    }
}

/// Per-sample shapes seen by one layer: what its parameterized op consumes,
/// what it produces (the tapped feature), and what leaves it after its
/// activation and pooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: Vec<usize>,
    pub tap: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Small AlexNet-shaped classifier: conv 16/32/48 (3x3, relu, 2x2 max
    /// pool) then fc 128 (relu) and the classifier.
    pub fn default_teacher(input_shape: [usize; 3], num_classes: usize) -> Result<Self> {
        Self::conv_stack(input_shape, &[16, 32, 48], &[128], num_classes)
    }

    /// `3x3 / pad 1` relu conv layers each followed by `2x2` max pooling,
    /// then relu fc layers and a linear classifier. `in_ch` values are
    /// derived from the shape walk.
    pub fn conv_stack(input_shape: [usize; 3], convs: &[usize], fcs: &[usize], num_classes: usize) -> Result<Self> {
        let pool = Pool::Max { kernel: 2, stride: 2 };
        let mut layers: Vec<LayerSpec> = convs
            .iter()
            .map(|&c| LayerSpec::conv(0, c, 3, 1, 1, Activation::Relu, pool))
            .collect();
        for (i, &f) in fcs.iter().enumerate() {
            layers.push(LayerSpec::fc(0, f, i == 0, Activation::Relu));
        }
        layers.push(LayerSpec::fc(0, num_classes, fcs.is_empty(), Activation::None));
        let mut spec = NetworkSpec {
            input_shape,
            layers,
            num_classes,
        };
        spec.derive_in_channels()?;
        Ok(spec)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// 1-based accessor.
    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l - 1]
    }

    /// Recompute every `in_ch` from `input_shape` and the preceding layers.
    pub fn derive_in_channels(&mut self) -> Result<()> {
        let mut cur: Vec<usize> = self.input_shape.to_vec();
        for i in 0..self.layers.len() {
            let layer = &mut self.layers[i];
            layer.in_ch = match (layer.kind, layer.flatten_before) {
                (LayerKind::Fc, true) => cur.iter().product(),
                _ => cur[0],
            };
            if layer.kind == LayerKind::Fc && layer.flatten_before {
                cur = vec![layer.in_ch];
            }
            cur = Self::walk_layer(i + 1, layer, &cur)?.output;
        }
        Ok(())
    }

    fn walk_layer(l: usize, layer: &LayerSpec, cur: &[usize]) -> Result<LayerShapes> {
        let bad = |detail: String| Error::InvalidSpec { layer: l, detail };
        if layer.in_ch == 0 || layer.out_ch == 0 {
            return Err(bad("channel counts must be positive".into()));
        }
        let input: Vec<usize> = match layer.kind {
            LayerKind::Fc if layer.flatten_before => vec![cur.iter().product()],
            _ => cur.to_vec(),
        };
        let tap = match layer.kind {
            LayerKind::Conv => {
                if input.len() != 3 {
                    return Err(bad(format!("conv needs a [C,H,W] input, got {input:?}")));
                }
                if layer.kernel == 0 || layer.stride == 0 {
                    return Err(bad("kernel and stride must be >= 1".into()));
                }
                let g = layer.geom();
                match (g.output_extent(input[1]), g.output_extent(input[2])) {
                    (Some(h), Some(w)) => vec![layer.out_ch, h, w],
                    _ => return Err(bad(format!("kernel {} does not fit input {input:?}", layer.kernel))),
                }
            }
            LayerKind::Fc => {
                if input.len() != 1 {
                    return Err(bad(format!(
                        "fc needs a flat input, got {input:?} (set flatten_before)"
                    )));
                }
                vec![layer.out_ch]
            }
        };
        if input[0] != layer.in_ch {
            return Err(bad(format!(
                "in_ch {} but the incoming features have {}",
                layer.in_ch, input[0]
            )));
        }
        let output = match layer.pool {
            Pool::None => tap.clone(),
            Pool::Max { kernel, stride } => {
                if tap.len() != 3 {
                    return Err(bad("pooling needs a spatial output".into()));
                }
                if kernel == 0 || stride == 0 || kernel > tap[1] || kernel > tap[2] {
                    return Err(bad(format!("pool window {kernel} does not fit {tap:?}")));
                }
                vec![tap[0], (tap[1] - kernel) / stride + 1, (tap[2] - kernel) / stride + 1]
            }
        };
        Ok(LayerShapes { input, tap, output })
    }

    /// Validate the spec and return the per-sample shapes at every layer.
    pub fn shapes(&self) -> Result<Vec<LayerShapes>> {
        if self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec {
                layer: 0,
                detail: format!("input shape {:?} has a zero extent", self.input_shape),
            });
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec {
                layer: 0,
                detail: "no layers".into(),
            });
        }
        let mut cur = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let s = Self::walk_layer(i + 1, layer, &cur)?;
            cur = s.output.clone();
            out.push(s);
        }
        let l = self.layers.len();
        let last = &self.layers[l - 1];
        if last.kind != LayerKind::Fc || last.out_ch != self.num_classes {
            return Err(Error::InvalidSpec {
                layer: l,
                detail: format!(
                    "final layer must be fc with out_ch == num_classes ({})",
                    self.num_classes
                ),
            });
        }
        if last.activation != Activation::None {
            return Err(Error::InvalidSpec {
                layer: l,
                detail: "final layer produces raw scores; activation must be none".into(),
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Channel count entering layer `l`'s feature adapter, i.e. the width
    /// of layer `l - 1`'s output. Only layers `2..=L` can carry one.
    pub fn fam_width(&self, l: usize) -> Option<usize> {
        (l >= 2 && l <= self.layers.len()).then(|| self.layers[l - 2].out_ch)
    }

    /// Closed-form scalar count: weights and biases of every layer plus a
    /// `c x c` adapter for each layer in `fam_layers`.
    pub fn param_count(&self, fam_layers: &[usize]) -> usize {
        let base: usize = self.layers.iter().map(LayerSpec::param_count).sum();
        let fam: usize = fam_layers
            .iter()
            .filter_map(|&l| self.fam_width(l))
            .map(|c| c * c)
            .sum();
        base + fam
    }

    /// Canonical text, one item per line; parsed back by [`NetworkSpec::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [c, h, w] = self.input_shape;
        writeln!(s, "input {c}x{h}x{w}").unwrap();
        writeln!(s, "classes {}", self.num_classes).unwrap();
        for l in &self.layers {
            let act = match l.activation {
                Activation::None => "none",
                Activation::Relu => "relu",
            };
            let pool = match l.pool {
                Pool::None => "none".to_string(),
                Pool::Max { kernel, stride } => format!("max{kernel}/{stride}"),
            };
            match l.kind {
                LayerKind::Conv => writeln!(
                    s,
                    "conv in={} out={} k={} s={} p={} act={act} pool={pool}",
                    l.in_ch, l.out_ch, l.kernel, l.stride, l.pad
                ),
                LayerKind::Fc => writeln!(
                    s,
                    "fc in={} out={} flatten={} act={act} pool={pool}",
                    l.in_ch, l.out_ch, l.flatten_before
                ),
            }
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fmt = |detail: String| Error::Format { detail };
        let num = |v: &str, what: &str| -> Result<usize> {
            v.parse::<usize>().map_err(|_| fmt(format!("bad {what} value {v:?}")))
        };
        let mut input = None;
        let mut classes = None;
        let mut layers = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            match head {
                "input" => {
                    let dims: Vec<usize> = words
                        .next()
                        .unwrap_or_default()
                        .split('x')
                        .map(|d| num(d, "input"))
                        .collect::<Result<_>>()?;
                    let dims: [usize; 3] = dims.try_into().map_err(|_| fmt("input must be CxHxW".into()))?;
                    input = Some(dims);
                }
                "classes" => classes = Some(num(words.next().unwrap_or_default(), "classes")?),
                "conv" | "fc" => {
                    let mut layer = if head == "conv" {
                        LayerSpec::conv(0, 0, 0, 1, 0, Activation::None, Pool::None)
                    } else {
                        LayerSpec::fc(0, 0, false, Activation::None)
                    };
                    for kv in words {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| fmt(format!("expected key=value, got {kv:?}")))?;
                        match (k, head) {
                            ("in", _) => layer.in_ch = num(v, k)?,
                            ("out", _) => layer.out_ch = num(v, k)?,
                            ("k", "conv") => layer.kernel = num(v, k)?,
                            ("s", "conv") => layer.stride = num(v, k)?,
                            ("p", "conv") => layer.pad = num(v, k)?,
                            ("flatten", "fc") => {
                                layer.flatten_before = v.parse().map_err(|_| fmt(format!("bad flatten value {v:?}")))?
                            }
                            ("act", _) => {
                                layer.activation = match v {
                                    "none" => Activation::None,
                                    "relu" => Activation::Relu,
                                    _ => return Err(fmt(format!("unknown activation {v:?}"))),
                                }
                            }
                            ("pool", _) => layer.pool = parse_pool(v).ok_or_else(|| fmt(format!("bad pool {v:?}")))?,
                            _ => return Err(fmt(format!("unknown {head} field {k:?}"))),
                        }
                    }
                    layers.push(layer);
                }
                _ => return Err(fmt(format!("unknown spec line {line:?}"))),
            }
        }
        let spec = NetworkSpec {
            input_shape: input.ok_or_else(|| fmt("spec lacks an input line".into()))?,
            layers,
            num_classes: classes.ok_or_else(|| fmt("spec lacks a classes line".into()))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_pool(v: &str) -> Option<Pool> {
    if v == "none" {
        return Some(Pool::None);
    }
    let (k, s) = v.strip_prefix("max")?.split_once('/')?;
    Some(Pool::Max {
        kernel: k.parse().ok()?,
        stride: s.parse().ok()?,
    })
}

/// Student architecture for `n_teachers` teachers of `teacher` shape: every
/// hidden width becomes `round(width_ratio * n * w)`, clamped into the open
/// interval `(w, n * w)`; the classifier covers `total_classes`.
pub fn make_student_spec(
    teacher: &NetworkSpec,
    n_teachers: usize,
    width_ratio: f64,
    total_classes: usize,
) -> Result<NetworkSpec> {
    let op = "make_student_spec";
    if n_teachers < 2 {
        return Err(Error::invalid(op, "need at least 2 teachers"));
    }
    let lo = 1.0 / n_teachers as f64;
    if !(width_ratio > lo && width_ratio < 1.0) {
        return Err(Error::invalid(
            op,
            format!("width_ratio {width_ratio} outside ({lo}, 1)"),
        ));
    }
    if total_classes == 0 {
        return Err(Error::invalid(op, "total_classes must be positive"));
    }
    teacher.validate()?;
    let mut spec = teacher.clone();
    let l = spec.layers.len();
    for (i, layer) in spec.layers.iter_mut().enumerate() {
        if i + 1 == l {
            layer.out_ch = total_classes;
        } else {
            layer.out_ch = merged_width(layer.out_ch, n_teachers, width_ratio).ok_or_else(|| Error::InvalidSpec {
                layer: i + 1,
                detail: format!(
                    "no integer width strictly between {} and {}",
                    layer.out_ch,
                    n_teachers * layer.out_ch
                ),
            })?;
        }
    }
    spec.num_classes = total_classes;
    spec.derive_in_channels()?;
    spec.validate()?;
    Ok(spec)
}

/// `round(ratio * n * w)` clamped into the open interval `(w, n * w)`; `None`
/// when that interval holds no integer.
pub fn merged_width(w: usize, n: usize, ratio: f64) -> Option<usize> {
    let (lo, hi) = (w + 1, (n * w).checked_sub(1)?);
    (lo <= hi).then(|| ((ratio * (n * w) as f64).round() as usize).clamp(lo, hi))
}
