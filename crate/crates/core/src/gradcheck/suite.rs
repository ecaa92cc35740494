//! Finite-difference checks of every differentiable op and of whole
//! networks, comparing single-precision analytic gradients against
//! double-precision central differences.
//!
//! Each case holds its inputs in `f64`. The analytic gradient is computed
//! twice, from `f32` and `f64` copies; the numeric oracle always runs in
//! `f64`, where central differences are not swamped by rounding. Loss
//! functions are checked directly; every other op is checked through the
//! scalar `sum(r * y)` with a fixed random projection `r`.

use crate::error::Result;
use crate::nets::{build_network, Network, NetworkSpec};
use crate::ops::{self, Activation, ConvGeom, Pool};
use crate::optim::{zero_grads, Param};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::{relative_error, Probe, MAX_COORDS_PER_PARAM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Conv2d,
    Conv1x1,
    Linear,
    Relu,
    MaxPool,
    Softmax,
    L2Loss,
    CrossEntropy,
    BlockwiseKd,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Conv2d,
        OpKind::Conv1x1,
        OpKind::Linear,
        OpKind::Relu,
        OpKind::MaxPool,
        OpKind::Softmax,
        OpKind::L2Loss,
        OpKind::CrossEntropy,
        OpKind::BlockwiseKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::MaxPool => "maxpool",
            OpKind::Softmax => "softmax",
            OpKind::L2Loss => "l2_loss",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::BlockwiseKd => "blockwise_kd_loss",
        }
    }
}

/// One op at one random shape.
#[derive(Clone, Debug)]
pub struct OpCase {
    pub op: OpKind,
    pub description: String,
    params: Vec<Param<f64>>,
    /// Projection `r` for non-loss ops; the fixed target for losses.
    fixed: Option<Tensor<f64>>,
    labels: Vec<usize>,
    geom: ConvGeom,
    pool: Pool,
    blocks: Vec<usize>,
    temperature: f64,
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    /// Worst relative error of the `f32` analytic gradient.
    pub max_rel_error_f32: f64,
    /// Worst relative error of the `f64` analytic gradient.
    pub max_rel_error_f64: f64,
    pub coords_checked: usize,
    pub coords_skipped: usize,
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_f64(-1.0, 1.0)).collect()).expect("valid shape")
}

fn param(name: &str, shape: &[usize], rng: &mut Rng) -> Param<f64> {
    Param::new(name, random(shape, rng))
}

fn dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x.f64() * y.f64()).sum()
}

fn between(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// `n` cases of `op` at shapes drawn from `seed`.
pub fn op_cases(op: OpKind, n: usize, seed: u64) -> Vec<OpCase> {
    let mut rng = Rng::stream(seed, &[op as u64]);
    (0..n).map(|_| make_case(op, &mut rng)).collect()
}

fn make_case(op: OpKind, rng: &mut Rng) -> OpCase {
    let mut case = OpCase {
        op,
        description: String::new(),
        params: Vec::new(),
        fixed: None,
        labels: Vec::new(),
        geom: ConvGeom::new(1, 1, 0),
        pool: Pool::None,
        blocks: Vec::new(),
        temperature: 1.0,
    };
    let b = between(rng, 1, 3);
    match op {
        OpKind::Conv2d => {
            let geom = ConvGeom::new(between(rng, 1, 3), between(rng, 1, 2), between(rng, 0, 1));
            let (cin, cout) = (between(rng, 1, 3), between(rng, 1, 4));
            let h = between(rng, geom.kernel.max(2), 6);
            let w = between(rng, geom.kernel.max(2), 6);
            let x = [b, cin, h, w];
            let oh = geom.output_extent(h).expect("kernel fits");
            let ow = geom.output_extent(w).expect("kernel fits");
            case.params = vec![
                param("x", &x, rng),
                param("weight", &[cout, cin, geom.kernel, geom.kernel], rng),
                param("bias", &[cout], rng),
            ];
            case.fixed = Some(random(&[b, cout, oh, ow], rng));
            case.geom = geom;
            case.description = format!("x {x:?} cout {cout} {geom:?}");
        }
        OpKind::Conv1x1 => {
            let (cin, cout) = (between(rng, 1, 5), between(rng, 1, 5));
            let (h, w) = (between(rng, 1, 5), between(rng, 1, 5));
            case.params = vec![param("x", &[b, cin, h, w], rng), param("weight", &[cout, cin], rng)];
            case.fixed = Some(random(&[b, cout, h, w], rng));
            case.description = format!("x {:?} cout {cout}", [b, cin, h, w]);
        }
        OpKind::Linear => {
            let (din, dout) = (between(rng, 1, 12), between(rng, 1, 8));
            case.params = vec![
                param("x", &[b, din], rng),
                param("weight", &[dout, din], rng),
                param("bias", &[dout], rng),
            ];
            case.fixed = Some(random(&[b, dout], rng));
            case.description = format!("x {:?} dout {dout}", [b, din]);
        }
        OpKind::Relu => {
            let shape = [b, between(rng, 1, 4), between(rng, 1, 5), between(rng, 1, 5)];
            case.params = vec![param("x", &shape, rng)];
            case.fixed = Some(random(&shape, rng));
            case.description = format!("x {shape:?}");
        }
        OpKind::MaxPool => {
            let kernel = between(rng, 1, 3);
            let stride = between(rng, 1, 2);
            let shape = [b, between(rng, 1, 3), between(rng, kernel, 7), between(rng, kernel, 7)];
            let oh = (shape[2] - kernel) / stride + 1;
            let ow = (shape[3] - kernel) / stride + 1;
            case.params = vec![param("x", &shape, rng)];
            case.fixed = Some(random(&[b, shape[1], oh, ow], rng));
            case.pool = Pool::Max { kernel, stride };
            case.description = format!("x {shape:?} pool {kernel}/{stride}");
        }
        OpKind::Softmax => {
            let shape = [b, between(rng, 2, 8)];
            case.params = vec![param("x", &shape, rng)];
            case.fixed = Some(random(&shape, rng));
            case.temperature = rng.uniform_f64(0.5, 4.0);
            case.description = format!("x {shape:?} T {:.3}", case.temperature);
        }
        OpKind::L2Loss => {
            let shape = [b, between(rng, 1, 4), between(rng, 1, 4), between(rng, 1, 4)];
            case.params = vec![param("a", &shape, rng)];
            case.fixed = Some(random(&shape, rng));
            case.description = format!("a {shape:?}");
        }
        OpKind::CrossEntropy => {
            let m = between(rng, 2, 8);
            case.params = vec![param("logits", &[b, m], rng)];
            case.labels = (0..b).map(|_| rng.below(m)).collect();
            case.description = format!("logits {:?}", [b, m]);
        }
        OpKind::BlockwiseKd => {
            let n_blocks = between(rng, 1, 3);
            case.blocks = (0..n_blocks).map(|_| between(rng, 2, 4)).collect();
            let m: usize = case.blocks.iter().sum();
            let mut student = param("student", &[b, m], rng);
            student.value.scale(3.0);
            let mut teacher = random(&[b, m], rng);
            teacher.scale(3.0);
            case.params = vec![student];
            case.fixed = Some(teacher);
            case.temperature = rng.uniform_f64(1.0, 5.0);
            case.description = format!("scores {:?} blocks {:?} T {:.3}", [b, m], case.blocks, case.temperature);
        }
    }
    case
}

impl OpCase {
    fn eval<T: Scalar>(&self, ps: &mut [Param<T>], grad: bool) -> Result<Probe> {
        let fixed: Option<Tensor<T>> = self.fixed.as_ref().map(Tensor::cast);
        let r = || fixed.as_ref().expect("case has a fixed tensor");
        let mut probe = Probe::smooth(0.0);
        match self.op {
            OpKind::Conv2d => {
                let y = ops::conv2d(&ps[0].value, &ps[1].value, &ps[2].value, self.geom)?;
                probe.loss = dot(&y, r());
                if grad {
                    let g = ops::conv2d_backward(&ps[0].value, &ps[1].value, r(), self.geom, true)?;
                    ps[0].grad.add_assign(&g.input.expect("requested"))?;
                    ps[1].grad.add_assign(&g.weight)?;
                    ps[2].grad.add_assign(&g.bias)?;
                }
            }
            OpKind::Conv1x1 => {
                let y = ops::conv1x1(&ps[0].value, &ps[1].value)?;
                probe.loss = dot(&y, r());
                if grad {
                    let (gx, gw) = ops::conv1x1_backward(&ps[0].value, &ps[1].value, r(), true)?;
                    ps[0].grad.add_assign(&gx.expect("requested"))?;
                    ps[1].grad.add_assign(&gw)?;
                }
            }
            OpKind::Linear => {
                let y = ops::linear(&ps[0].value, &ps[1].value, &ps[2].value)?;
                probe.loss = dot(&y, r());
                if grad {
                    let g = ops::linear_backward(&ps[0].value, &ps[1].value, r(), true)?;
                    ps[0].grad.add_assign(&g.input.expect("requested"))?;
                    ps[1].grad.add_assign(&g.weight)?;
                    ps[2].grad.add_assign(&g.bias)?;
                }
            }
            OpKind::Relu => {
                let mut tape = Tape::<T>::probe();
                let y = tape.activation(Activation::Relu, ps[0].value.clone());
                probe = Probe {
                    loss: dot(&y, r()),
                    pattern: tape.pattern().expect("probe tape"),
                };
                if grad {
                    let g = ops::relu_backward(&y, r());
                    ps[0].grad.add_assign(&g)?;
                }
            }
            OpKind::MaxPool => {
                let mut tape = Tape::<T>::probe();
                let input_shape = ps[0].value.shape().to_vec();
                let y = tape.pool(self.pool, ps[0].value.clone())?;
                probe = Probe {
                    loss: dot(&y, r()),
                    pattern: tape.pattern().expect("probe tape"),
                };
                if grad {
                    let Pool::Max { kernel, stride } = self.pool else {
                        unreachable!("maxpool case")
                    };
                    let (_, argmax) = ops::maxpool(&ps[0].value, kernel, stride)?;
                    ps[0]
                        .grad
                        .add_assign(&ops::maxpool_backward(&input_shape, &argmax, r()))?;
                }
            }
            OpKind::Softmax => {
                let t = T::of(self.temperature);
                let y = ops::softmax(&ps[0].value, t)?;
                probe.loss = dot(&y, r());
                if grad {
                    ps[0].grad.add_assign(&ops::softmax_backward(&y, r(), t))?;
                }
            }
            OpKind::L2Loss => {
                let (loss, g) = ops::l2_loss(&ps[0].value, r())?;
                probe.loss = loss;
                if grad {
                    ps[0].grad.add_assign(&g)?;
                }
            }
            OpKind::CrossEntropy => {
                let (loss, g) = ops::cross_entropy(&ps[0].value, &self.labels)?;
                probe.loss = loss;
                if grad {
                    ps[0].grad.add_assign(&g)?;
                }
            }
            OpKind::BlockwiseKd => {
                let (loss, g) = ops::blockwise_kd_loss(&ps[0].value, r(), &self.blocks, T::of(self.temperature))?;
                probe.loss = loss;
                if grad {
                    ps[0].grad.add_assign(&g)?;
                }
            }
        }
        Ok(probe)
    }
}

/// Compare `f32` and `f64` analytic gradients of `eval` against `f64`
/// central differences with step `eps`. Coordinates whose perturbations
/// change the non-smooth pattern (relu mask, pooling winner) are skipped.
fn compare<F32, F64>(
    name: String,
    params: &[Param<f64>],
    eps: f64,
    rng: &mut Rng,
    mut eval32: F32,
    mut eval64: F64,
) -> Result<CaseReport>
where
    F32: FnMut(&mut [Param<f32>], bool) -> Result<Probe>,
    F64: FnMut(&mut [Param<f64>], bool) -> Result<Probe>,
{
    let mut p64: Vec<Param<f64>> = params.to_vec();
    let mut p32: Vec<Param<f32>> = params.iter().map(Param::cast).collect();
    zero_grads(&mut p64);
    zero_grads(&mut p32);
    let base = eval64(&mut p64, true)?;
    let base32 = eval32(&mut p32, true)?;
    let mut report = CaseReport {
        name,
        max_rel_error_f32: 0.0,
        max_rel_error_f64: 0.0,
        coords_checked: 0,
        coords_skipped: 0,
    };
    for pi in 0..p64.len() {
        let n = p64[pi].numel();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_PARAM {
            (0..n).collect()
        } else {
            let mut perm = rng.permutation(n);
            perm.truncate(MAX_COORDS_PER_PARAM);
            perm
        };
        for idx in coords {
            let orig = p64[pi].value.data()[idx];
            p64[pi].value.data_mut()[idx] = orig + eps;
            let plus = eval64(&mut p64, false)?;
            p64[pi].value.data_mut()[idx] = orig - eps;
            let minus = eval64(&mut p64, false)?;
            p64[pi].value.data_mut()[idx] = orig;
            if plus.pattern != base.pattern || minus.pattern != base.pattern || base32.pattern != base.pattern {
                report.coords_skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * eps);
            report.coords_checked += 1;
            let e64 = relative_error(p64[pi].grad.data()[idx], numeric);
            let e32 = relative_error(p32[pi].grad.data()[idx].f64(), numeric);
            report.max_rel_error_f64 = report.max_rel_error_f64.max(e64);
            report.max_rel_error_f32 = report.max_rel_error_f32.max(e32);
        }
    }
    Ok(report)
}

pub fn check_case(case: &OpCase, eps: f64, rng: &mut Rng) -> Result<CaseReport> {
    compare(
        format!("{} {}", case.op.name(), case.description),
        &case.params,
        eps,
        rng,
        |ps, g| case.eval(ps, g),
        |ps, g| case.eval(ps, g),
    )
}

fn network_loss<T: Scalar>(
    spec: &NetworkSpec,
    ps: &mut [Param<T>],
    x: &Tensor<f64>,
    target: &Tensor<f64>,
    grad: bool,
) -> Result<Probe> {
    let mut net = Network::from_params(spec.clone(), ps.to_vec())?;
    let (x, target): (Tensor<T>, Tensor<T>) = (x.cast(), target.cast());
    let mut probe = Tape::<T>::probe();
    let (_, out) = net.forward(&mut probe, x.clone(), &[])?;
    let (loss, g) = ops::l2_loss(&out, &target)?;
    if grad {
        let mut tape = Tape::<T>::new();
        net.forward(&mut tape, x, &[])?;
        tape.backward(&mut net.params, g, false)?;
        for (p, q) in ps.iter_mut().zip(&net.params) {
            p.grad = q.grad.clone();
        }
    }
    Ok(Probe {
        loss,
        pattern: probe.pattern().expect("probe tape"),
    })
}

/// Check every parameter of a network built from `spec` (with randomly
/// perturbed adapters at `fam_layers`) under an `L2` loss on its scores.
pub fn check_network(
    spec: &NetworkSpec,
    fam_layers: &[usize],
    batch: usize,
    eps: f64,
    seed: u64,
) -> Result<CaseReport> {
    let mut rng = Rng::stream(seed, &[0x6e65_74]);
    let mut net = build_network::<f64>(spec, &mut rng)?;
    for &l in fam_layers {
        let c = spec
            .fam_width(l)
            .ok_or_else(|| crate::error::Error::invalid("check_network", format!("layer {l} takes no adapter")))?;
        let mut w = random(&[c, c], &mut rng);
        w.scale(0.3);
        for i in 0..c {
            w.data_mut()[i * c + i] += 1.0;
        }
        net.set_fam(l, w)?;
    }
    let [c, h, w] = spec.input_shape;
    let x = random(&[batch, c, h, w], &mut rng);
    let target = random(&[batch, spec.num_classes], &mut rng);
    compare(
        format!("network {} layers, adapters {fam_layers:?}", spec.num_layers()),
        &net.params,
        eps,
        &mut rng,
        |ps, g| network_loss(spec, ps, &x, &target, g),
        |ps, g| network_loss(spec, ps, &x, &target, g),
    )
}
