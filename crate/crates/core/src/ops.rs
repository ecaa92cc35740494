//! Forward and backward kernels for the fixed operation set.
//!
//! Every differentiable op comes as a pure forward function plus a backward
//! function that, given the upstream gradient, returns the gradients of the
//! op's inputs. [`crate::tape::Tape`] chains them into network passes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `c = op(a) * op(b) + beta * c` for row-major operands, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored as its
/// transpose (`k x m` or `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the m*k, k*n and m*n element footprints
    // addressed by these strides (checked above in debug builds and by the
    // callers' shape validation).
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Stride, padding and kernel size of a square convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { kernel, stride, pad }
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<(usize, usize, usize)> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "expected rank-4 input and weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            ),
        ));
    }
    let [_, cin, h, wd] = x.dims4();
    let [_, wcin, kh, kw] = w.dims4();
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weight {:?} expects {wcin}", w.shape()),
        ));
    }
    if kh != geom.kernel || kw != geom.kernel {
        return Err(Error::shape(
            "conv2d",
            format!("weight {:?} is not a {}x{} kernel", w.shape(), geom.kernel, geom.kernel),
        ));
    }
    if geom.stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    match (geom.output_extent(h), geom.output_extent(wd)) {
        (Some(ho), Some(wo)) => Ok((ho, wo, cin * geom.kernel * geom.kernel)),
        _ => Err(Error::shape(
            "conv2d",
            format!(
                "non-positive output extent for {h}x{wd} input, kernel {}, stride {}, pad {}",
                geom.kernel, geom.stride, geom.pad
            ),
        )),
    }
}

/// Unfold one image `[C, H, W]` into `[C*k*k, Ho*Wo]` patch columns.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, cols: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &mut cols[((ci * k + u) * k + v) * p..][..p];
                for oi in 0..ho {
                    let ii = (oi * g.stride + u) as isize - g.pad as isize;
                    let out = &mut row[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, o) in out.iter_mut().enumerate() {
                        let jj = (oj * g.stride + v) as isize - g.pad as isize;
                        *o = if jj < 0 || jj >= w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Accumulate patch-column gradients back onto one image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = &cols[((ci * k + u) * k + v) * p..][..p];
                for oi in 0..ho {
                    let ii = (oi * g.stride + u) as isize - g.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * g.stride + v) as isize - g.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            dst[jj as usize] += row[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation) with zero padding.
///
/// `x: [B, Cin, H, W]`, `w: [Cout, Cin, k, k]`, `b: [Cout]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
    let (ho, wo, ckk) = conv_dims(x, w, geom)?;
    let [batch, cin, h, wd] = x.dims4();
    let cout = w.dim(0);
    if b.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias {:?} does not match {cout} output channels", b.shape()),
        ));
    }
    let p = ho * wo;
    let mut y = Tensor::zeros(&[batch, cout, ho, wo]);
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * p]
    };
    let xs = x.data();
    for bi in 0..batch {
        let img = &xs[bi * cin * h * wd..(bi + 1) * cin * h * wd];
        let patches: &[T] = if geom.is_pointwise() {
            img
        } else {
            im2col(img, cin, h, wd, geom, ho, wo, &mut cols);
            &cols
        };
        let out = &mut y.data_mut()[bi * cout * p..(bi + 1) * cout * p];
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.fill(b.data()[co]);
        }
        gemm(cout, ckk, p, w.data(), false, patches, false, T::one(), out);
    }
    Ok(y)
}

pub struct ConvGrads<T: Scalar = f32> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] given upstream `gy`. The input gradient is only
/// computed when `need_input` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    geom: ConvGeom,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (ho, wo, ckk) = conv_dims(x, w, geom)?;
    let [batch, cin, h, wd] = x.dims4();
    let cout = w.dim(0);
    if gy.shape() != [batch, cout, ho, wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "upstream gradient {:?} vs output [{batch}, {cout}, {ho}, {wo}]",
                gy.shape()
            ),
        ));
    }
    let p = ho * wo;
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * p]
    };
    let mut gcols = vec![T::zero(); ckk * p];
    let xs = x.data();
    let img_len = cin * h * wd;
    for bi in 0..batch {
        let img = &xs[bi * img_len..(bi + 1) * img_len];
        let g = &gy.data()[bi * cout * p..(bi + 1) * cout * p];
        let patches: &[T] = if geom.is_pointwise() {
            img
        } else {
            im2col(img, cin, h, wd, geom, ho, wo, &mut cols);
            &cols
        };
        // gW += gY [cout, p] * patches^T [p, ckk]
        gemm(cout, p, ckk, g, false, patches, true, T::one(), gw.data_mut());
        for (co, row) in g.chunks(p).enumerate() {
            gb.data_mut()[co] += row.iter().copied().sum::<T>();
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx.data_mut()[bi * img_len..(bi + 1) * img_len];
            if geom.is_pointwise() {
                gemm(ckk, cout, p, w.data(), true, g, false, T::zero(), dst);
            } else {
                gemm(ckk, cout, p, w.data(), true, g, false, T::zero(), &mut gcols);
                col2im(&gcols, cin, h, wd, geom, ho, wo, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// View a rank-2 `[B, D]` tensor as `(B, D, 1)`, a rank-4 as `(B, C, H*W)`.
fn pointwise_dims<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.rank() {
        2 => Ok((x.dim(0), x.dim(1), 1)),
        4 => {
            let [b, c, h, w] = x.dims4();
            Ok((b, c, h * w))
        }
        _ => Err(Error::shape(op, format!("expected rank 2 or 4, got {:?}", x.shape()))),
    }
}

/// Channel mixing `y[b,c,h,w] = sum_c' w[c,c'] x[b,c',h,w]` with no bias.
/// Rank-2 inputs are treated as `[B, D, 1, 1]`.
pub fn conv1x1<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, cin, p) = pointwise_dims("conv1x1", x)?;
    if w.rank() != 2 || w.dim(1) != cin {
        return Err(Error::shape(
            "conv1x1",
            format!("weight {:?} does not accept {cin} input channels", w.shape()),
        ));
    }
    let cout = w.dim(0);
    let mut shape = x.shape().to_vec();
    shape[1] = cout;
    let mut y = Tensor::zeros(&shape);
    if p == 1 {
        gemm(
            batch,
            cin,
            cout,
            x.data(),
            false,
            w.data(),
            true,
            T::zero(),
            y.data_mut(),
        );
        return Ok(y);
    }
    for bi in 0..batch {
        let src = &x.data()[bi * cin * p..(bi + 1) * cin * p];
        let dst = &mut y.data_mut()[bi * cout * p..(bi + 1) * cout * p];
        gemm(cout, cin, p, w.data(), false, src, false, T::zero(), dst);
    }
    Ok(y)
}

/// Gradients of [`conv1x1`]: `(input grad if requested, weight grad)`.
pub fn conv1x1_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let (batch, cin, p) = pointwise_dims("conv1x1_backward", x)?;
    let cout = w.dim(0);
    let mut expect = x.shape().to_vec();
    expect[1] = cout;
    if gy.shape() != expect.as_slice() || w.dim(1) != cin {
        return Err(Error::shape(
            "conv1x1_backward",
            format!("upstream gradient {:?} vs expected {expect:?}", gy.shape()),
        ));
    }
    let mut gw = Tensor::zeros(w.shape());
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    if p == 1 {
        gemm(
            cout,
            batch,
            cin,
            gy.data(),
            true,
            x.data(),
            false,
            T::zero(),
            gw.data_mut(),
        );
        if let Some(gx) = gx.as_mut() {
            gemm(
                batch,
                cout,
                cin,
                gy.data(),
                false,
                w.data(),
                false,
                T::zero(),
                gx.data_mut(),
            );
        }
        return Ok((gx, gw));
    }
    for bi in 0..batch {
        let src = &x.data()[bi * cin * p..(bi + 1) * cin * p];
        let g = &gy.data()[bi * cout * p..(bi + 1) * cout * p];
        gemm(cout, p, cin, g, false, src, true, T::one(), gw.data_mut());
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx.data_mut()[bi * cin * p..(bi + 1) * cin * p];
            gemm(cin, cout, p, w.data(), true, g, false, T::zero(), dst);
        }
    }
    Ok((gx, gw))
}

/// Fully connected layer `y = x W^T + b` with `x: [B, D]`, `w: [M, D]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.shape() != [w.dim(0)] {
        return Err(Error::shape(
            "linear",
            format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let (batch, d, m) = (x.dim(0), x.dim(1), w.dim(0));
    let mut y = Tensor::zeros(&[batch, m]);
    for row in y.data_mut().chunks_mut(m) {
        row.copy_from_slice(b.data());
    }
    gemm(batch, d, m, x.data(), false, w.data(), true, T::one(), y.data_mut());
    Ok(y)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (batch, d, m) = (x.dim(0), x.dim(1), w.dim(0));
    if gy.shape() != [batch, m] {
        return Err(Error::shape(
            "linear_backward",
            format!("upstream gradient {:?} vs [{batch}, {m}]", gy.shape()),
        ));
    }
    let mut gw = Tensor::zeros(w.shape());
    gemm(m, batch, d, gy.data(), true, x.data(), false, T::zero(), gw.data_mut());
    let mut gb = Tensor::zeros(&[m]);
    for row in gy.data().chunks(m) {
        gb.data_mut().iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    let gx = need_input.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        gemm(batch, m, d, gy.data(), false, w.data(), false, T::zero(), gx.data_mut());
        gx
    });
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    None,
    Max { kernel: usize, stride: usize },
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of relu given its forward output (or input: the sign pattern is
/// the same).
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut g = gy.clone();
    g.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| {
        if v <= T::zero() {
            *g = T::zero()
        }
    });
    g
}

/// Max pooling over `kernel x kernel` windows. Returns the output and, per
/// output element, the flat input index of the first (row-major) maximum.
pub fn maxpool<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(Error::shape("maxpool", format!("expected rank 4, got {:?}", x.shape())));
    }
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid("maxpool", "kernel and stride must be >= 1"));
    }
    let [b, c, h, w] = x.dims4();
    if kernel > h || kernel > w {
        return Err(Error::shape(
            "maxpool",
            format!("window {kernel}x{kernel} larger than input {h}x{w}"),
        ));
    }
    let ho = (h - kernel) / stride + 1;
    let wo = (w - kernel) / stride + 1;
    let mut y = Tensor::zeros(&[b, c, ho, wo]);
    let mut arg = vec![0u32; b * c * ho * wo];
    let xs = x.data();
    let ys = y.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..ho {
            for oj in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = base + oi * stride * w + oj * stride;
                for u in 0..kernel {
                    let row = base + (oi * stride + u) * w + oj * stride;
                    for v in 0..kernel {
                        let val = xs[row + v];
                        if val > best {
                            best = val;
                            best_idx = row + v;
                        }
                    }
                }
                let o = (plane * ho + oi) * wo + oj;
                ys[o] = xs[best_idx];
                arg[o] = best_idx as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(gy.data()) {
        d[i as usize] += g;
    }
    gx
}

/// Activation followed by pooling, the parameter-free part of a layer.
pub fn nonparam<T: Scalar>(x: &Tensor<T>, activation: Activation, pool: Pool) -> Result<Tensor<T>> {
    let a = match activation {
        Activation::None => x.clone(),
        Activation::Relu => relu(x),
    };
    match pool {
        Pool::None => Ok(a),
        Pool::Max { kernel, stride } => Ok(maxpool(&a, kernel, stride)?.0),
    }
}

fn check_logits<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::shape(op, format!("expected [B, M], got {:?}", x.shape())));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            what: format!("{op} input"),
        });
    }
    Ok((x.dim(0), x.dim(1)))
}

fn softmax_row<T: Scalar>(row: &[T], temperature: T, out: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = ((v - max) / temperature).exp();
        *o = e;
        sum += e.f64();
    }
    let inv = T::of(1.0 / sum);
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Row-wise softmax of `x / temperature`, shift-stabilized.
pub fn softmax<T: Scalar>(x: &Tensor<T>, temperature: T) -> Result<Tensor<T>> {
    if !(temperature > T::zero() && temperature.is_finite()) {
        return Err(Error::invalid(
            "softmax",
            format!("temperature {temperature} must be > 0"),
        ));
    }
    let (_, m) = check_logits("softmax", x)?;
    let mut y = Tensor::zeros(x.shape());
    for (row, out) in x.data().chunks(m).zip(y.data_mut().chunks_mut(m)) {
        softmax_row(row, temperature, out);
    }
    Ok(y)
}

/// Jacobian-vector product of softmax: given `y = softmax(x / T)` and
/// upstream `gy`, returns the gradient wrt `x`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>, temperature: T) -> Tensor<T> {
    let m = y.dim(1);
    let mut gx = Tensor::zeros(y.shape());
    for ((yr, gr), out) in y
        .data()
        .chunks(m)
        .zip(gy.data().chunks(m))
        .zip(gx.data_mut().chunks_mut(m))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot) / temperature;
        }
    }
    gx
}

/// `0.5 * ||a - b||^2 / B` and its gradient `(a - b) / B` wrt `a`.
pub fn l2_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if a.shape() != b.shape() {
        return Err(Error::shape("l2_loss", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let batch = a.batch() as f64;
    let mut sum = 0.0f64;
    let inv = T::of(1.0 / batch);
    let mut grad = Tensor::zeros(a.shape());
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        sum += d.f64() * d.f64();
        *g = d * inv;
    }
    Ok((0.5 * sum / batch, grad))
}

/// Mean softmax cross-entropy against integer labels, with its gradient
/// wrt the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, m) = check_logits("cross_entropy", logits)?;
    if labels.len() != b {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for batch {b}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {bad} out of range 0..{m}"),
        ));
    }
    let mut p = softmax(logits, T::one())?;
    let mut loss = 0.0f64;
    let inv = T::of(1.0 / b as f64);
    for (row, &l) in p.data_mut().chunks_mut(m).zip(labels) {
        loss -= row[l].max(T::min_positive_value()).f64().ln();
        row[l] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss / b as f64, p))
}

/// Temperature-softened distillation loss, normalized separately inside each
/// block of consecutive columns.
///
/// For each block, targets are `softmax(teacher / T)` and the loss is
/// `T^2 * CE(targets, softmax(student / T))`, summed over blocks and averaged
/// over the batch.
pub fn blockwise_kd_loss<T: Scalar>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    blocks: &[usize],
    temperature: T,
) -> Result<(f64, Tensor<T>)> {
    let (b, m) = check_logits("blockwise_kd_loss", student)?;
    check_logits("blockwise_kd_loss", teacher)?;
    if teacher.shape() != student.shape() {
        return Err(Error::shape(
            "blockwise_kd_loss",
            format!("{:?} vs {:?}", student.shape(), teacher.shape()),
        ));
    }
    if blocks.iter().sum::<usize>() != m || blocks.contains(&0) {
        return Err(Error::shape(
            "blockwise_kd_loss",
            format!("blocks {blocks:?} do not tile {m} columns"),
        ));
    }
    if !(temperature > T::zero()) {
        return Err(Error::invalid("blockwise_kd_loss", "temperature must be > 0"));
    }
    let t = temperature;
    let mut grad = Tensor::zeros(student.shape());
    let mut loss = 0.0f64;
    let mut ps = vec![T::zero(); m];
    let mut pt = vec![T::zero(); m];
    let scale = t / T::of(b as f64);
    for bi in 0..b {
        let s = &student.data()[bi * m..(bi + 1) * m];
        let tr = &teacher.data()[bi * m..(bi + 1) * m];
        let g = &mut grad.data_mut()[bi * m..(bi + 1) * m];
        let mut start = 0;
        for &len in blocks {
            let r = start..start + len;
            softmax_row(&s[r.clone()], t, &mut ps[r.clone()]);
            softmax_row(&tr[r.clone()], t, &mut pt[r.clone()]);
            for j in r {
                loss -= pt[j].f64() * ps[j].max(T::min_positive_value()).f64().ln();
                g[j] = (ps[j] - pt[j]) * scale;
            }
            start += len;
        }
    }
    Ok(((t * t).f64() * loss / b as f64, grad))
}
