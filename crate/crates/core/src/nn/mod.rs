//! Minimal hand-written neural network layers with explicit backward passes.

mod conv;
mod layers;
mod params;

pub use conv::{col2im, im2col, ConvGeom};
pub use layers::{BufferAccess, Cache, Init, Layer, Mode, BN_EPS};
pub use params::{Grads, ParamStore};

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Saved activations of one training-mode pass through a [`Sequential`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

/// A chain of layers sharing one parameter store and one buffer store.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward_eval<T: Scalar>(&self, params: &ParamStore<T>, buffers: &ParamStore<T>, x: Tensor<T>) -> Tensor<T> {
        let mut access = BufferAccess::Read(buffers);
        self.layers.iter().fold(x, |x, layer| {
            layer.forward(params, &mut access, x, Mode::Eval, false).0
        })
    }

    /// Training-mode pass with batch statistics. Running statistics are
    /// updated only when `buffers` is writable. With `record` unset the
    /// returned tape is empty and cannot be used for a backward pass.
    pub fn forward_train<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        mut buffers: BufferAccess<'_, T>,
        x: Tensor<T>,
        record: bool,
    ) -> (Tensor<T>, Tape<T>) {
        let update_running = matches!(buffers, BufferAccess::Write(_));
        let mode = Mode::Train { update_running };
        let mut tape = Tape {
            caches: Vec::with_capacity(if record { self.layers.len() } else { 0 }),
        };
        let mut x = x;
        for layer in &self.layers {
            let (y, cache) = layer.forward(params, &mut buffers, x, mode, record);
            if let Some(c) = cache {
                tape.caches.push(c);
            }
            x = y;
        }
        (x, tape)
    }

    /// Backward pass over a recorded tape. Returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: Tape<T>,
        dy: Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(
            tape.caches.len(),
            self.layers.len(),
            "backward needs a recorded tape"
        );
        let mut dy = Some(dy);
        for (i, (layer, cache)) in self.layers.iter().zip(tape.caches).enumerate().rev() {
            let want_dx = i > 0 || need_input_grad;
            let grad = dy.take().expect("gradient flows to every layer");
            dy = layer.backward(params, cache, grad, grads.as_deref_mut(), want_dx);
        }
        dy
    }
}

/// Registers layers and their freshly initialized parameters.
pub struct Builder<'a, T, R: ?Sized> {
    pub params: &'a mut ParamStore<T>,
    pub buffers: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    pub weight_init: Init,
    layers: Vec<Layer>,
}

impl<'a, T: Scalar, R: Rng + ?Sized> Builder<'a, T, R> {
    pub fn new(params: &'a mut ParamStore<T>, buffers: &'a mut ParamStore<T>, rng: &'a mut R, weight_init: Init) -> Self {
        Builder {
            params,
            buffers,
            rng,
            weight_init,
            layers: Vec::new(),
        }
    }

    pub fn linear(&mut self, name: &str, in_f: usize, out_f: usize) -> &mut Self {
        let layer = self.linear_layer(name, in_f, out_f);
        self.layers.push(layer);
        self
    }

    /// Creates a linear layer's parameters without appending it to the chain
    /// (for heads that branch off a shared trunk).
    pub fn linear_layer(&mut self, name: &str, in_f: usize, out_f: usize) -> Layer {
        let weight = self.params.push(
            format!("{name}.weight"),
            self.weight_init.sample(&[out_f, in_f], self.rng),
        );
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_f]));
        Layer::Linear { weight, bias }
    }

    pub fn conv(&mut self, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let weight = self.params.push(
            format!("{name}.weight"),
            self.weight_init.sample(&[out_c, in_c, kernel, kernel], self.rng),
        );
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        self.layers.push(Layer::Conv2d {
            weight,
            bias,
            kernel,
            stride,
            pad,
        });
        self
    }

    pub fn deconv(&mut self, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let weight = self.params.push(
            format!("{name}.weight"),
            self.weight_init.sample(&[in_c, out_c, kernel, kernel], self.rng),
        );
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        self.layers.push(Layer::ConvTranspose2d {
            weight,
            bias,
            kernel,
            stride,
            pad,
        });
        self
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize, momentum: f64) -> &mut Self {
        let gamma = self.params.push(format!("{name}.gamma"), Tensor::full(&[channels], T::ONE));
        let beta = self.params.push(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let running_mean = self
            .buffers
            .push(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let running_var = self
            .buffers
            .push(format!("{name}.running_var"), Tensor::full(&[channels], T::ONE));
        self.layers.push(Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum,
        });
        self
    }

    pub fn push(&mut self, layer: Layer) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn finish(&mut self) -> Sequential {
        Sequential {
            layers: std::mem::take(&mut self.layers),
        }
    }
}
