use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::{self, Activation, NormCache};
use super::{Real, Tensor};
use crate::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// One layer of a sequential stack. Convolutions are always 4×4, stride 2,
/// padding 1. `Reshape` gives the per-sample shape; the batch axis is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
    BatchNorm {
        channels: usize,
    },
    Reshape(Vec<usize>),
}

impl LayerSpec {
    fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::LeakyRelu(a) => Some(Activation::LeakyRelu(a)),
            LayerSpec::Relu => Some(Activation::Relu),
            LayerSpec::Tanh => Some(Activation::Tanh),
            LayerSpec::Sigmoid => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::LeakyRelu(_) => "leaky_relu",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics; samples are independent.
    Eval,
}

#[derive(Clone, Debug)]
pub struct Layer<T: Real = f32> {
    pub spec: LayerSpec,
    /// Trainable tensors: weight and bias, or gamma and beta.
    pub params: Vec<Tensor<T>>,
    /// Non-trainable state: batch-norm running mean and variance.
    pub buffers: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
enum Saved<T> {
    Input(Tensor<T>),
    InputOutput(Tensor<T>, Tensor<T>),
    Norm(NormCache<T>, bool),
    Shape(Vec<usize>),
}

/// Values recorded by [`Network::forward`] for a later backward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace<T = f32> {
    saved: Vec<Saved<T>>,
    output_shape: Vec<usize>,
}

impl<T> Trace<T> {
    pub fn is_empty(&self) -> bool {
        self.saved.is_empty()
    }
}

impl<T: Real> Layer<T> {
    fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gaussian = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| T::lit(normal.sample(rng))).collect())
        };
        let (params, buffers) = match spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
            } => (
                vec![
                    gaussian(&[out_channels, in_channels, 4, 4])?,
                    Tensor::zeros(&[out_channels]),
                ],
                vec![],
            ),
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
            } => (
                vec![
                    gaussian(&[in_channels, out_channels, 4, 4])?,
                    Tensor::zeros(&[out_channels]),
                ],
                vec![],
            ),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (
                vec![
                    gaussian(&[in_features, out_features])?,
                    Tensor::zeros(&[out_features]),
                ],
                vec![],
            ),
            LayerSpec::BatchNorm { channels } => (
                vec![
                    Tensor::full(&[channels], T::one()),
                    Tensor::zeros(&[channels]),
                ],
                vec![
                    Tensor::zeros(&[channels]),
                    Tensor::full(&[channels], T::one()),
                ],
            ),
            LayerSpec::Reshape(ref s) if s.is_empty() || s.contains(&0) => {
                return Err(Error::invalid(format!("bad reshape target {s:?}")))
            }
            _ => (vec![], vec![]),
        };
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    fn forward(
        &self,
        x: Tensor<T>,
        mode: Mode,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Saved<T>>)> {
        if let Some(act) = self.spec.activation() {
            let y = kernels::activation(act, &x);
            let saved = record.then(|| Saved::InputOutput(x, y.clone()));
            return Ok((y, saved));
        }
        match &self.spec {
            LayerSpec::Conv { .. } => {
                let y = kernels::conv2d(&x, &self.params[0], &self.params[1])?;
                Ok((y, record.then_some(Saved::Input(x))))
            }
            LayerSpec::ConvTranspose { .. } => {
                let y = kernels::conv_transpose2d(&x, &self.params[0], &self.params[1])?;
                Ok((y, record.then_some(Saved::Input(x))))
            }
            LayerSpec::Dense { .. } => {
                let y = kernels::dense(&x, &self.params[0], &self.params[1])?;
                Ok((y, record.then_some(Saved::Input(x))))
            }
            LayerSpec::BatchNorm { .. } => {
                let train = mode == Mode::Train;
                let running = (!train).then(|| (self.buffers[0].data(), self.buffers[1].data()));
                let (y, cache) =
                    kernels::batch_norm(&x, &self.params[0], &self.params[1], running)?;
                Ok((y, record.then_some(Saved::Norm(cache, train))))
            }
            LayerSpec::Reshape(target) => {
                let shape = x.shape().to_vec();
                let mut full = vec![x.batch()];
                full.extend_from_slice(target);
                Ok((x.reshape(&full)?, record.then_some(Saved::Shape(shape))))
            }
            _ => unreachable!("activations handled above"),
        }
    }

    fn backward(
        &self,
        saved: &Saved<T>,
        grad: Tensor<T>,
        want_params: bool,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        match (&self.spec, saved) {
            (spec, Saved::InputOutput(x, y)) => {
                let act = spec.activation().ok_or(Error::MissingForward)?;
                Ok((kernels::activation_backward(act, x, y, &grad)?, vec![]))
            }
            (LayerSpec::Conv { .. }, Saved::Input(x)) => {
                let (dx, dw, db) = kernels::conv2d_backward(x, &self.params[0], &grad)?;
                Ok((dx, if want_params { vec![dw, db] } else { vec![] }))
            }
            (LayerSpec::ConvTranspose { .. }, Saved::Input(x)) => {
                let (dx, dw, db) = kernels::conv_transpose2d_backward(x, &self.params[0], &grad)?;
                Ok((dx, if want_params { vec![dw, db] } else { vec![] }))
            }
            (LayerSpec::Dense { .. }, Saved::Input(x)) => {
                let (dx, dw, db) = kernels::dense_backward(x, &self.params[0], &grad)?;
                Ok((dx, if want_params { vec![dw, db] } else { vec![] }))
            }
            (LayerSpec::BatchNorm { .. }, Saved::Norm(cache, train)) => {
                let (dx, dg, db) =
                    kernels::batch_norm_backward(cache, &self.params[0], &grad, *train)?;
                Ok((dx, if want_params { vec![dg, db] } else { vec![] }))
            }
            (LayerSpec::Reshape(_), Saved::Shape(s)) => Ok((grad.reshape(s)?, vec![])),
            _ => Err(Error::MissingForward),
        }
    }
}

/// Sequential stack of layers with reverse-mode gradients.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .cloned()
            .map(|s| Layer::init(s, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    /// Every stored tensor, parameters and buffers, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (pn, bn): (&[&str], &[&str]) = match l.spec {
                LayerSpec::BatchNorm { .. } => {
                    (&["gamma", "beta"], &["running_mean", "running_var"])
                }
                _ => (&["weight", "bias"], &[]),
            };
            for (t, n) in l.params.iter().zip(pn) {
                out.push((format!("{i}.{n}"), t));
            }
            for (t, n) in l.buffers.iter().zip(bn) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (pn, bn): (&[&str], &[&str]) = match l.spec {
                LayerSpec::BatchNorm { .. } => {
                    (&["gamma", "beta"], &["running_mean", "running_var"])
                }
                _ => (&["weight", "bias"], &[]),
            };
            for (t, n) in l.params.iter_mut().zip(pn) {
                out.push((format!("{i}.{n}"), t));
            }
            for (t, n) in l.buffers.iter_mut().zip(bn) {
                out.push((format!("{i}.{n}"), t));
            }
        }
        out
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Trace<T>)> {
        let mut cur = input.clone();
        let mut saved = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, s) = layer.forward(cur, mode, true)?;
            saved.push(s.expect("recording"));
            cur = out;
        }
        let output_shape = cur.shape().to_vec();
        Ok((
            cur,
            Trace {
                saved,
                output_shape,
            },
        ))
    }

    /// Forward pass without recording, in eval mode.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.forward(cur, Mode::Eval, false)?.0;
        }
        Ok(cur)
    }

    fn backprop(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        skip: usize,
        mut sink: Option<&mut Vec<Vec<Tensor<T>>>>,
    ) -> Result<Tensor<T>> {
        if trace.saved.len() != self.layers.len() || trace.saved.is_empty() {
            return Err(Error::MissingForward);
        }
        if skip >= self.layers.len()
            || self.layers[self.layers.len() - skip..]
                .iter()
                .any(|l| l.spec.activation().is_none())
        {
            return Err(Error::invalid(format!(
                "can only skip trailing activations, asked to skip {skip}"
            )));
        }
        if grad_out.shape() != trace.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match forward output {:?}",
                grad_out.shape(),
                trace.output_shape
            )));
        }
        let want = sink.is_some();
        let mut grad = grad_out.clone();
        for (layer, saved) in self.layers.iter().zip(&trace.saved).rev().skip(skip) {
            let (g, pg) = layer.backward(saved, grad, want)?;
            if let Some(s) = sink.as_deref_mut() {
                s.push(pg);
            }
            grad = g;
        }
        Ok(grad)
    }

    /// Gradient with respect to the input only; parameters are untouched.
    pub fn backward_input(&self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.backprop(trace, grad_out, 0, None)
    }

    /// Accumulates parameter gradients into each parameter's grad buffer and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_below(trace, 0, grad_out)
    }

    /// Like [`backward_input`](Self::backward_input), but `grad` is taken
    /// with respect to the input of the last `skip` layers, which must be
    /// activations. Used to feed logit gradients past a final sigmoid.
    pub fn backward_input_below(
        &self,
        trace: &Trace<T>,
        skip: usize,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.backprop(trace, grad, skip, None)
    }

    /// Parameter-accumulating counterpart of
    /// [`backward_input_below`](Self::backward_input_below).
    pub fn backward_below(
        &mut self,
        trace: &Trace<T>,
        skip: usize,
        grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let gin = self.backprop(trace, grad, skip, Some(&mut per_layer))?;
        for (layer, grads) in self.layers.iter_mut().rev().skip(skip).zip(per_layer) {
            for (p, g) in layer.params.iter_mut().zip(grads) {
                for (a, b) in p.grad_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
        }
        Ok(gin)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Tensor::zero_grad);
    }

    /// Folds the batch statistics recorded in a training-mode trace into the
    /// running estimates.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) -> Result<()> {
        if trace.saved.len() != self.layers.len() {
            return Err(Error::MissingForward);
        }
        let m = T::lit(BN_MOMENTUM);
        for (layer, saved) in self.layers.iter_mut().zip(&trace.saved) {
            if let Saved::Norm(cache, true) = saved {
                let (mean_buf, rest) = layer.buffers.split_at_mut(1);
                for (r, &b) in mean_buf[0].data_mut().iter_mut().zip(&cache.mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
                for (r, &b) in rest[0].data_mut().iter_mut().zip(&cache.var) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                    buffers: l.buffers.iter().map(Tensor::cast).collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn tiny() -> Network<f64> {
        let specs = [
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: 2,
            },
            LayerSpec::BatchNorm { channels: 2 },
            LayerSpec::LeakyRelu(0.2),
            LayerSpec::Reshape(vec![8]),
            LayerSpec::Dense {
                in_features: 8,
                out_features: 1,
            },
            LayerSpec::Sigmoid,
        ];
        Network::new(&specs, &mut seed::stream(1, 0)).unwrap()
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut net = tiny();
        let g = Tensor::zeros(&[1, 1]);
        assert!(matches!(
            net.backward(&Trace::default(), &g),
            Err(Error::MissingForward)
        ));
        assert!(matches!(
            net.backward_input(&Trace::default(), &g),
            Err(Error::MissingForward)
        ));
    }

    #[test]
    fn sum_loss_gives_unit_gradient_through_reshape() {
        let net =
            Network::<f64>::new(&[LayerSpec::Reshape(vec![4])], &mut seed::stream(0, 0)).unwrap();
        let x = Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let (y, trace) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        let g = net
            .backward_input(&trace, &Tensor::full(&[2, 4], 1.0))
            .unwrap();
        assert_eq!(g.shape(), x.shape());
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut net = tiny();
        net.zero_grad();
        for p in net.params() {
            assert!(p.grad().unwrap().iter().all(|&v| v == 0.0));
        }
        let x = Tensor::zeros(&[2, 1, 4, 4]);
        let (_, trace) = net.forward(&x, Mode::Train).unwrap();
        // A zero input leaves only the conv bias, which batch norm removes.
        net.backward(&trace, &Tensor::full(&[2, 1], 1.0)).unwrap();
        let conv_w = &net.layers()[0].params[0];
        assert!(conv_w.grad().unwrap().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut net = tiny();
        let x = Tensor::zeros(&[2, 1, 4, 4]);
        let (_, trace) = net.forward(&x, Mode::Train).unwrap();
        net.update_running_stats(&trace).unwrap();
        let var = &net.layers()[1].buffers[1];
        // Zero input gives a constant batch, so running var decays from 1 by the momentum.
        assert!(var.data().iter().all(|&v| (v - 0.9).abs() < 1e-6));
        let bias = net.layers()[0].params[1].data().to_vec();
        let mean = &net.layers()[1].buffers[0];
        assert!(mean
            .data()
            .iter()
            .zip(&bias)
            .all(|(&m, &b)| (m - 0.1 * b).abs() < 1e-6));
    }

    #[test]
    fn skipping_sigmoid_feeds_logit_gradient() {
        let net = tiny().cast::<f64>();
        let x = Tensor::full(&[2, 1, 4, 4], 0.3);
        let (p, trace) = net.forward(&x, Mode::Train).unwrap();
        let dp = p.map(|v| 1.0 / (v * (1.0 - v)));
        let full = net.backward_input(&trace, &dp).unwrap();
        let below = net
            .backward_input_below(&trace, 1, &Tensor::full(&[2, 1], 1.0))
            .unwrap();
        for (a, b) in full.data().iter().zip(below.data()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
        assert!(net
            .backward_input_below(&trace, 2, &Tensor::full(&[2, 1], 1.0))
            .is_err());
    }

    #[test]
    fn names_are_stable() {
        let net = tiny();
        let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            [
                "0.weight",
                "0.bias",
                "1.gamma",
                "1.beta",
                "1.running_mean",
                "1.running_var",
                "4.weight",
                "4.bias"
            ]
        );
    }
}
