//! Declarative layer specs, shape inference and the sequential network.

use crate::error::{Error, Result};
use crate::nn::layers::{self, BatchNormCache, Mode};
use crate::nn::tensor::Tensor;
use crate::rng::ChaCha8Rng;

/// One layer of a sequential model.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    ZeroPad {
        size: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    BatchNorm,
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => filters > 0 && kernel_h > 0 && kernel_w > 0 && stride > 0,
            LayerSpec::MaxPool { size, stride } => size > 0 && stride > 0,
            LayerSpec::Dense { units } => units > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("invalid layer spec {self:?}")))
        }
    }
}

/// Per-sample input/output shape (batch axis excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    Hwc { h: usize, w: usize, c: usize },
    Flat { d: usize },
}

impl InputShape {
    pub fn numel(&self) -> usize {
        match *self {
            InputShape::Hwc { h, w, c } => h * w * c,
            InputShape::Flat { d } => d,
        }
    }
}

/// Walks the spec list symbolically and returns the per-sample output shape
/// after every layer. Fails if any layer underflows its input.
pub fn infer_shapes(specs: &[LayerSpec], input: InputShape) -> Result<Vec<InputShape>> {
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input;
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let err = |msg: String| Error::Shape(format!("layer {i} ({spec:?}): {msg}"));
        cur = match (spec.clone(), cur) {
            (
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                },
                InputShape::Hwc { h, w, .. },
            ) => {
                let ph = h + 2 * padding;
                let pw = w + 2 * padding;
                if ph < kernel_h || pw < kernel_w {
                    return Err(err(format!(
                        "kernel {kernel_h}x{kernel_w} exceeds padded input {ph}x{pw}"
                    )));
                }
                InputShape::Hwc {
                    h: (ph - kernel_h) / stride + 1,
                    w: (pw - kernel_w) / stride + 1,
                    c: filters,
                }
            }
            (LayerSpec::MaxPool { size, stride }, InputShape::Hwc { h, w, c }) => {
                if h < size || w < size {
                    return Err(err(format!("pool window {size} exceeds input {h}x{w}")));
                }
                InputShape::Hwc {
                    h: (h - size) / stride + 1,
                    w: (w - size) / stride + 1,
                    c,
                }
            }
            (LayerSpec::ZeroPad { size }, InputShape::Hwc { h, w, c }) => InputShape::Hwc {
                h: h + 2 * size,
                w: w + 2 * size,
                c,
            },
            (LayerSpec::Flatten, InputShape::Hwc { h, w, c }) => InputShape::Flat { d: h * w * c },
            (LayerSpec::Dense { units }, InputShape::Flat { .. }) => InputShape::Flat { d: units },
            (LayerSpec::Relu, s) | (LayerSpec::Dropout { .. }, s) | (LayerSpec::BatchNorm, s) => s,
            (LayerSpec::Softmax, InputShape::Flat { d }) => {
                if i + 1 != specs.len() {
                    return Err(err("softmax must be the final layer".into()));
                }
                InputShape::Flat { d }
            }
            (spec, shape) => {
                return Err(err(format!("cannot apply to input shape {shape:?}: {spec:?}")));
            }
        };
        shapes.push(cur);
    }
    Ok(shapes)
}

/// A layer instantiated with parameters and forward caches.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        stride: usize,
        padding: usize,
        weights: Tensor,
        bias: Tensor,
        cache_x: Option<Tensor>,
    },
    MaxPool {
        size: usize,
        stride: usize,
        cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax)
    },
    ZeroPad {
        size: usize,
        cache_shape: Option<Vec<usize>>,
    },
    Dense {
        weights: Tensor,
        bias: Tensor,
        cache_x: Option<Tensor>,
    },
    Relu {
        cache_x: Option<Tensor>,
    },
    Dropout {
        rate: f64,
        cache_mask: Option<Vec<f64>>,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        cache: Option<BatchNormCache>,
    },
    Flatten {
        cache_shape: Option<Vec<usize>>,
    },
    Softmax,
}

impl Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                stride,
                padding,
                weights,
                bias,
                cache_x,
            } => {
                let out = layers::conv2d_forward(x, weights, bias, *stride, *padding)?;
                if mode == Mode::Train {
                    *cache_x = Some(x.clone());
                }
                Ok(out)
            }
            Layer::MaxPool {
                size,
                stride,
                cache,
            } => {
                let (out, argmax) = layers::maxpool_forward(x, *size, *stride)?;
                if mode == Mode::Train {
                    *cache = Some((x.shape().to_vec(), argmax));
                }
                Ok(out)
            }
            Layer::ZeroPad { size, cache_shape } => {
                let out = layers::zeropad_forward(x, *size)?;
                if mode == Mode::Train {
                    *cache_shape = Some(x.shape().to_vec());
                }
                Ok(out)
            }
            Layer::Dense {
                weights,
                bias,
                cache_x,
            } => {
                let out = layers::dense_forward(x, weights, bias)?;
                if mode == Mode::Train {
                    *cache_x = Some(x.clone());
                }
                Ok(out)
            }
            Layer::Relu { cache_x } => {
                let out = layers::relu_forward(x);
                if mode == Mode::Train {
                    *cache_x = Some(x.clone());
                }
                Ok(out)
            }
            Layer::Dropout { rate, cache_mask } => {
                let (out, mask) = layers::dropout_forward(x, *rate, mode, rng)?;
                if mode == Mode::Train {
                    *cache_mask = Some(mask);
                }
                Ok(out)
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                cache,
            } => {
                let (out, c) = layers::batchnorm_forward(
                    x,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    mode,
                    layers::BATCHNORM_MOMENTUM,
                    layers::BATCHNORM_EPS,
                )?;
                if mode == Mode::Train {
                    *cache = c;
                }
                Ok(out)
            }
            Layer::Flatten { cache_shape } => {
                let n = x.shape()[0];
                let rest: usize = x.shape()[1..].iter().product();
                if mode == Mode::Train {
                    *cache_shape = Some(x.shape().to_vec());
                }
                x.reshaped(vec![n, rest])
            }
            Layer::Softmax => layers::softmax_forward(x),
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let stale = || Error::Run("backward called before a train-mode forward".into());
        match self {
            Layer::Conv2d {
                stride,
                padding,
                weights,
                bias,
                cache_x,
            } => {
                let x = cache_x.as_ref().ok_or_else(stale)?;
                let (gx, gw, gb) = layers::conv2d_backward(x, weights, *stride, *padding, grad_out)?;
                accumulate(weights, &gw);
                accumulate(bias, &gb);
                Ok(gx)
            }
            Layer::MaxPool { cache, .. } => {
                let (shape, argmax) = cache.as_ref().ok_or_else(stale)?;
                layers::maxpool_backward(shape, argmax, grad_out)
            }
            Layer::ZeroPad { size, cache_shape } => {
                let shape = cache_shape.as_ref().ok_or_else(stale)?;
                layers::zeropad_backward(shape, *size, grad_out)
            }
            Layer::Dense {
                weights,
                bias,
                cache_x,
            } => {
                let x = cache_x.as_ref().ok_or_else(stale)?;
                let (gx, gw, gb) = layers::dense_backward(x, weights, grad_out)?;
                accumulate(weights, &gw);
                accumulate(bias, &gb);
                Ok(gx)
            }
            Layer::Relu { cache_x } => {
                let x = cache_x.as_ref().ok_or_else(stale)?;
                Ok(layers::relu_backward(x, grad_out))
            }
            Layer::Dropout { cache_mask, .. } => {
                let mask = cache_mask.as_ref().ok_or_else(stale)?;
                Ok(layers::dropout_backward(mask, grad_out))
            }
            Layer::BatchNorm {
                gamma, beta, cache, ..
            } => {
                let c = cache.as_ref().ok_or_else(stale)?;
                let (gx, dgamma, dbeta) = layers::batchnorm_backward(c, gamma, grad_out)?;
                accumulate(gamma, &dgamma);
                accumulate(beta, &dbeta);
                Ok(gx)
            }
            Layer::Flatten { cache_shape } => {
                let shape = cache_shape.as_ref().ok_or_else(stale)?;
                grad_out.reshaped(shape.clone())
            }
            Layer::Softmax => Err(Error::Run(
                "softmax has no standalone backward; train against logits".into(),
            )),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                vec![weights, bias]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }
}

fn accumulate(param: &mut Tensor, grad: &Tensor) {
    for (g, &v) in param.grad_mut().iter_mut().zip(grad.data()) {
        *g += v;
    }
}

/// A sequential network instantiated from a spec list.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: InputShape,
    layers: Vec<Layer>,
    has_final_softmax: bool,
}

impl Network {
    /// Builds the network, validating shapes and initializing parameters
    /// (He-uniform for conv/dense weights, zero biases, unit-gamma
    /// batchnorm) from the given seed.
    pub fn build(specs: &[LayerSpec], input_shape: InputShape, init_seed: u64) -> Result<Network> {
        let shapes = infer_shapes(specs, input_shape)?;
        let mut rng = crate::rng::seeded(init_seed, 0x1417);
        let mut layers = Vec::with_capacity(specs.len());
        let mut cur = input_shape;
        for (spec, after) in specs.iter().zip(&shapes) {
            let layer = match *spec {
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                } => {
                    let in_c = match cur {
                        InputShape::Hwc { c, .. } => c,
                        _ => unreachable!("validated by infer_shapes"),
                    };
                    let fan_in = kernel_h * kernel_w * in_c;
                    Layer::Conv2d {
                        stride,
                        padding,
                        weights: {
                            let mut w = layers::he_uniform(
                                vec![kernel_h, kernel_w, in_c, filters],
                                fan_in,
                                &mut rng,
                            );
                            w.grad_mut();
                            w
                        },
                        bias: {
                            let mut b = Tensor::zeros(vec![filters]);
                            b.grad_mut();
                            b
                        },
                        cache_x: None,
                    }
                }
                LayerSpec::MaxPool { size, stride } => Layer::MaxPool {
                    size,
                    stride,
                    cache: None,
                },
                LayerSpec::ZeroPad { size } => Layer::ZeroPad {
                    size,
                    cache_shape: None,
                },
                LayerSpec::Dense { units } => {
                    let d = match cur {
                        InputShape::Flat { d } => d,
                        _ => unreachable!("validated by infer_shapes"),
                    };
                    Layer::Dense {
                        weights: {
                            let mut w = layers::he_uniform(vec![d, units], d, &mut rng);
                            w.grad_mut();
                            w
                        },
                        bias: {
                            let mut b = Tensor::zeros(vec![units]);
                            b.grad_mut();
                            b
                        },
                        cache_x: None,
                    }
                }
                LayerSpec::Relu => Layer::Relu { cache_x: None },
                LayerSpec::Dropout { rate } => Layer::Dropout {
                    rate,
                    cache_mask: None,
                },
                LayerSpec::BatchNorm => {
                    let c = match cur {
                        InputShape::Hwc { c, .. } => c,
                        InputShape::Flat { d } => d,
                    };
                    Layer::BatchNorm {
                        gamma: {
                            let mut g = Tensor::filled(vec![c], 1.0);
                            g.grad_mut();
                            g
                        },
                        beta: {
                            let mut b = Tensor::zeros(vec![c]);
                            b.grad_mut();
                            b
                        },
                        running_mean: vec![0.0; c],
                        running_var: vec![1.0; c],
                        cache: None,
                    }
                }
                LayerSpec::Flatten => Layer::Flatten { cache_shape: None },
                LayerSpec::Softmax => Layer::Softmax,
            };
            layers.push(layer);
            cur = *after;
        }
        Ok(Network {
            specs: specs.to_vec(),
            input_shape,
            layers,
            has_final_softmax: matches!(specs.last(), Some(LayerSpec::Softmax)),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    /// Per-sample output shape of the full stack.
    pub fn output_shape(&self) -> Result<InputShape> {
        Ok(*infer_shapes(&self.specs, self.input_shape)?
            .last()
            .unwrap_or(&self.input_shape))
    }

    /// Runs every layer except a trailing softmax, returning logits.
    /// Train mode caches activations for [`Network::backward`] and needs a
    /// generator when the stack contains dropout.
    pub fn forward_logits(
        &mut self,
        x: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let end = if self.has_final_softmax {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        let mut cur = x.clone();
        for layer in &mut self.layers[..end] {
            cur = layer.forward(&cur, mode, rng.as_deref_mut())?;
        }
        Ok(cur)
    }

    /// Eval-mode forward through the whole stack, softmax included.
    pub fn predict_probs(&mut self, x: &Tensor) -> Result<Tensor> {
        let logits = self.forward_logits(x, Mode::Eval, None)?;
        if self.has_final_softmax {
            layers::softmax_forward(&logits)
        } else {
            Ok(logits)
        }
    }

    /// Backpropagates a gradient with respect to the logits, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let end = if self.has_final_softmax {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        let mut grad = grad_logits.clone();
        for layer in self.layers[..end].iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    /// Trainable parameters in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.numel()).sum()
    }

    /// Parameters plus batchnorm running statistics, in declaration order.
    /// This is the checkpointed state.
    pub fn state_tensors(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                    out.push((weights.shape().to_vec(), weights.data().to_vec()));
                    out.push((bias.shape().to_vec(), bias.data().to_vec()));
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    out.push((gamma.shape().to_vec(), gamma.data().to_vec()));
                    out.push((beta.shape().to_vec(), beta.data().to_vec()));
                    out.push((vec![running_mean.len()], running_mean.clone()));
                    out.push((vec![running_var.len()], running_var.clone()));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites the checkpointed state in declaration order.
    pub fn load_state_tensors(&mut self, tensors: &[(Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut it = tensors.iter();
        let mut take = |shape: &[usize]| -> Result<&(Vec<usize>, Vec<f64>)> {
            let t = it
                .next()
                .ok_or_else(|| Error::Run("checkpoint has too few tensors".into()))?;
            if t.0 != shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor shape {:?} does not match model shape {:?}",
                    t.0, shape
                )));
            }
            Ok(t)
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                    let w = take(weights.shape())?.1.clone();
                    weights.data_mut().copy_from_slice(&w);
                    let b = take(bias.shape())?.1.clone();
                    bias.data_mut().copy_from_slice(&b);
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    let g = take(gamma.shape())?.1.clone();
                    gamma.data_mut().copy_from_slice(&g);
                    let b = take(beta.shape())?.1.clone();
                    beta.data_mut().copy_from_slice(&b);
                    let rm = take(&[running_mean.len()])?.1.clone();
                    running_mean.copy_from_slice(&rm);
                    let rv = take(&[running_var.len()])?.1.clone();
                    running_var.copy_from_slice(&rv);
                }
                _ => {}
            }
        }
        if it.next().is_some() {
            return Err(Error::Run("checkpoint has extra tensors".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::softmax_xent_loss;
    use rand::Rng;

    fn toy_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                filters: 4,
                kernel_h: 3,
                kernel_w: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ]
    }

    #[test]
    fn shape_inference_walks_the_stack() {
        let shapes = infer_shapes(
            &toy_specs(),
            InputShape::Hwc { h: 8, w: 8, c: 3 },
        )
        .unwrap();
        assert_eq!(shapes[0], InputShape::Hwc { h: 6, w: 6, c: 4 });
        assert_eq!(shapes[2], InputShape::Hwc { h: 3, w: 3, c: 4 });
        assert_eq!(shapes[3], InputShape::Flat { d: 36 });
        assert_eq!(*shapes.last().unwrap(), InputShape::Flat { d: 3 });
    }

    #[test]
    fn shape_inference_rejects_underflow() {
        assert!(infer_shapes(&toy_specs(), InputShape::Hwc { h: 2, w: 2, c: 3 }).is_err());
    }

    #[test]
    fn softmax_must_be_last() {
        let specs = vec![LayerSpec::Softmax, LayerSpec::Dense { units: 3 }];
        assert!(infer_shapes(&specs, InputShape::Flat { d: 3 }).is_err());
    }

    #[test]
    fn dense_on_unflattened_input_rejected() {
        let specs = vec![LayerSpec::Dense { units: 3 }];
        assert!(infer_shapes(&specs, InputShape::Hwc { h: 2, w: 2, c: 1 }).is_err());
    }

    #[test]
    fn network_forward_produces_probabilities() {
        let mut net = Network::build(
            &toy_specs(),
            InputShape::Hwc { h: 8, w: 8, c: 3 },
            7,
        )
        .unwrap();
        let x = Tensor::filled(vec![2, 8, 8, 3], 0.1);
        let probs = net.predict_probs(&x).unwrap();
        assert_eq!(probs.shape(), &[2, 3]);
        for row in probs.data().chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn training_step_reduces_loss_on_a_tiny_problem() {
        let mut net = Network::build(
            &toy_specs(),
            InputShape::Hwc { h: 8, w: 8, c: 3 },
            3,
        )
        .unwrap();
        let mut rng = crate::rng::seeded(0, 0);
        let mut x = Tensor::zeros(vec![4, 8, 8, 3]);
        for v in x.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let labels = [0usize, 1, 2, 0];
        let mut first_loss = None;
        let mut last_loss = 0.0;
        for _ in 0..60 {
            let logits = net
                .forward_logits(&x, Mode::Train, Some(&mut rng))
                .unwrap();
            let (loss, probs) = softmax_xent_loss(&logits, &labels).unwrap();
            first_loss.get_or_insert(loss);
            last_loss = loss;
            net.zero_grads();
            let grad = crate::nn::layers::softmax_xent_backward(&probs, &labels).unwrap();
            net.backward(&grad).unwrap();
            for p in net.params_mut() {
                let g: Vec<f64> = p.grad().unwrap().to_vec();
                for (v, gv) in p.data_mut().iter_mut().zip(g) {
                    *v -= 0.05 * gv;
                }
            }
        }
        assert!(
            last_loss < first_loss.unwrap() * 0.5,
            "loss went {first_loss:?} -> {last_loss}"
        );
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = Network::build(&toy_specs(), InputShape::Hwc { h: 8, w: 8, c: 3 }, 11).unwrap();
        let b = Network::build(&toy_specs(), InputShape::Hwc { h: 8, w: 8, c: 3 }, 11).unwrap();
        let sa = a.state_tensors();
        let sb = b.state_tensors();
        assert_eq!(sa, sb);
        let c = Network::build(&toy_specs(), InputShape::Hwc { h: 8, w: 8, c: 3 }, 12).unwrap();
        assert_ne!(sa, c.state_tensors());
    }

    #[test]
    fn state_round_trip_is_identity() {
        let mut a = Network::build(&toy_specs(), InputShape::Hwc { h: 8, w: 8, c: 3 }, 1).unwrap();
        let mut b = Network::build(&toy_specs(), InputShape::Hwc { h: 8, w: 8, c: 3 }, 2).unwrap();
        b.load_state_tensors(&a.state_tensors()).unwrap();
        assert_eq!(a.state_tensors(), b.state_tensors());
        let x = Tensor::filled(vec![1, 8, 8, 3], 0.3);
        assert_eq!(
            a.predict_probs(&x).unwrap().data(),
            b.predict_probs(&x).unwrap().data()
        );
    }
}
