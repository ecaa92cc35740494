use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
            velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// The same parameter in another precision, with fresh buffers.
    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param::new(self.name.clone(), self.value.cast())
    }
}

pub fn zero_grads<T: Scalar>(params: &mut [Param<T>]) {
    params.iter_mut().for_each(Param::zero_grad);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl Sgd {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("sgd", format!("lr {} must be >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "sgd",
                format!("momentum {} outside [0, 1)", self.momentum),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("sgd", "weight_decay must be >= 0"));
        }
        Ok(())
    }

    /// `v <- m v + g + wd x; x <- x - lr v`, then zero the gradients.
    ///
    /// Every gradient is checked before any parameter is touched, so a
    /// non-finite gradient leaves all parameters unchanged.
    pub fn step<T: Scalar>(&self, params: &mut [Param<T>]) -> Result<()> {
        self.validate()?;
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", p.name),
            });
        }
        let (lr, m, wd) = (
            T::of(self.lr as f64),
            T::of(self.momentum as f64),
            T::of(self.weight_decay as f64),
        );
        for p in params.iter_mut() {
            let Param {
                value, grad, velocity, ..
            } = p;
            for ((x, g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
                *v = m * *v + *g + wd * *x;
                *x -= lr * *v;
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Plain function form of [`Sgd::step`].
pub fn sgd_step<T: Scalar>(params: &mut [Param<T>], lr: f32, momentum: f32, weight_decay: f32) -> Result<()> {
    Sgd {
        lr,
        momentum,
        weight_decay,
    }
    .step(params)
}
