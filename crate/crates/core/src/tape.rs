//! Recorded forward chains and their reverse pass.
//!
//! Every network in this crate is a chain: each op consumes the previous
//! op's output. A [`Tape`] records the ops (and whatever each backward needs)
//! as a forward pass runs, then [`Tape::backward`] walks them in reverse and
//! accumulates gradients into the referenced parameters.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, ConvGeom, Pool};
use crate::optim::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter in the slice handed to the tape.
pub type ParamId = usize;

#[derive(Debug)]
enum Step<T: Scalar> {
    Conv2d {
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeom,
        input: Tensor<T>,
    },
    Conv1x1 {
        weight: ParamId,
        input: Tensor<T>,
    },
    Linear {
        weight: ParamId,
        bias: ParamId,
        input: Tensor<T>,
    },
    Relu {
        output: Tensor<T>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    Reshape {
        input_shape: Vec<usize>,
    },
}

#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    steps: Vec<Step<T>>,
    recording: bool,
    pattern: Option<u64>,
}

impl<T: Scalar> Tape<T> {
    /// A tape that records for a later [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            steps: Vec::new(),
            recording: true,
            pattern: None,
        }
    }

    /// A tape that only evaluates; nothing is retained.
    pub fn inference() -> Self {
        Tape {
            steps: Vec::new(),
            recording: false,
            pattern: None,
        }
    }

    /// An evaluating tape that also fingerprints the piecewise-linear
    /// regime it passes through: which relu units are active and which
    /// element wins each pooling window. Two evaluations with equal
    /// fingerprints lie on the same smooth piece of the loss surface.
    pub fn probe() -> Self {
        Tape {
            steps: Vec::new(),
            recording: false,
            pattern: Some(0xcbf2_9ce4_8422_2325),
        }
    }

    /// Fingerprint accumulated by a [`Tape::probe`] tape.
    pub fn pattern(&self) -> Option<u64> {
        self.pattern
    }

    fn mix(&mut self, bits: impl Iterator<Item = u64>) {
        if let Some(h) = self.pattern.as_mut() {
            for b in bits {
                *h = (*h ^ b).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn push(&mut self, step: Step<T>) {
        if self.recording {
            self.steps.push(step);
        }
    }

    pub fn conv2d(
        &mut self,
        params: &[Param<T>],
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeom,
        x: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let y = ops::conv2d(&x, &params[weight].value, &params[bias].value, geom)?;
        self.push(Step::Conv2d {
            weight,
            bias,
            geom,
            input: x,
        });
        Ok(y)
    }

    pub fn conv1x1(&mut self, params: &[Param<T>], weight: ParamId, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::conv1x1(&x, &params[weight].value)?;
        self.push(Step::Conv1x1 { weight, input: x });
        Ok(y)
    }

    pub fn linear(&mut self, params: &[Param<T>], weight: ParamId, bias: ParamId, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::linear(&x, &params[weight].value, &params[bias].value)?;
        self.push(Step::Linear { weight, bias, input: x });
        Ok(y)
    }

    pub fn activation(&mut self, act: Activation, x: Tensor<T>) -> Tensor<T> {
        match act {
            Activation::None => x,
            Activation::Relu => {
                let y = ops::relu(&x);
                self.mix(x.data().iter().map(|&v| (v > T::zero()) as u64));
                if self.recording {
                    self.steps.push(Step::Relu { output: y.clone() });
                }
                y
            }
        }
    }

    pub fn pool(&mut self, pool: Pool, x: Tensor<T>) -> Result<Tensor<T>> {
        match pool {
            Pool::None => Ok(x),
            Pool::Max { kernel, stride } => {
                let (y, argmax) = ops::maxpool(&x, kernel, stride)?;
                self.mix(argmax.iter().map(|&i| i as u64));
                self.push(Step::MaxPool {
                    input_shape: x.shape().to_vec(),
                    argmax,
                });
                Ok(y)
            }
        }
    }

    pub fn reshape(&mut self, x: Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        let input_shape = x.shape().to_vec();
        let y = x.reshape(shape)?;
        self.push(Step::Reshape { input_shape });
        Ok(y)
    }

    /// Reverse pass. Accumulates `d loss / d param` into `params[..].grad`
    /// and returns the gradient wrt the chain's input when `want_input` is
    /// set. Consumes the tape, so each recording is back-propagated once.
    pub fn backward(
        mut self,
        params: &mut [Param<T>],
        grad_out: Tensor<T>,
        want_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        if self.steps.is_empty() {
            return Err(Error::EmptyTape);
        }
        let mut g = grad_out;
        while let Some(step) = self.steps.pop() {
            let need_input = want_input || !self.steps.is_empty();
            g = match step {
                Step::Conv2d {
                    weight,
                    bias,
                    geom,
                    input,
                } => {
                    let gr = ops::conv2d_backward(&input, &params[weight].value, &g, geom, need_input)?;
                    params[weight].grad.add_assign(&gr.weight)?;
                    params[bias].grad.add_assign(&gr.bias)?;
                    match gr.input {
                        Some(gx) => gx,
                        None => return Ok(None),
                    }
                }
                Step::Conv1x1 { weight, input } => {
                    let (gx, gw) = ops::conv1x1_backward(&input, &params[weight].value, &g, need_input)?;
                    params[weight].grad.add_assign(&gw)?;
                    match gx {
                        Some(gx) => gx,
                        None => return Ok(None),
                    }
                }
                Step::Linear { weight, bias, input } => {
                    let gr = ops::linear_backward(&input, &params[weight].value, &g, need_input)?;
                    params[weight].grad.add_assign(&gr.weight)?;
                    params[bias].grad.add_assign(&gr.bias)?;
                    match gr.input {
                        Some(gx) => gx,
                        None => return Ok(None),
                    }
                }
                Step::Relu { output } => ops::relu_backward(&output, &g),
                Step::MaxPool { input_shape, argmax } => ops::maxpool_backward(&input_shape, &argmax, &g),
                Step::Reshape { input_shape } => g.reshape(&input_shape)?,
            };
        }
        Ok(want_input.then_some(g))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
