//! Central finite-difference gradient verification.
//!
//! The numerical side only ever calls layer *forward* functions, so it stays
//! independent of every backward implementation it checks. Each scenario
//! projects the layer output onto a fixed random vector to obtain a scalar
//! loss, differentiates it both ways, and reports the worst element.

use rand::Rng;

use crate::nn::layers::{self, Mode};
use crate::nn::tensor::Tensor;
use crate::rng::{self, ChaCha8Rng};

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of a scalar function at `x`.
pub fn numerical_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst-case elementwise error, relative for large gradients and absolute
/// for small ones: |a - n| / max(|a| + |n|, 1).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Which layer a gradient-check scenario exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    Conv2d,
    MaxPool,
    Dense,
    BatchNorm,
    Relu,
    DropoutEval,
    ZeroPad,
    SoftmaxXent,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 8] = [
        CheckTarget::Conv2d,
        CheckTarget::MaxPool,
        CheckTarget::Dense,
        CheckTarget::BatchNorm,
        CheckTarget::Relu,
        CheckTarget::DropoutEval,
        CheckTarget::ZeroPad,
        CheckTarget::SoftmaxXent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckTarget::Conv2d => "conv2d",
            CheckTarget::MaxPool => "maxpool",
            CheckTarget::Dense => "dense",
            CheckTarget::BatchNorm => "batchnorm",
            CheckTarget::Relu => "relu",
            CheckTarget::DropoutEval => "dropout(eval)",
            CheckTarget::ZeroPad => "zeropad",
            CheckTarget::SoftmaxXent => "softmax+xent",
        }
    }
}

fn random_data(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so ReLU and max-pool kinks cannot sit
/// inside the finite-difference stencil.
fn random_data_off_kinks(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_range(0.0..1.0) < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect()
}

fn project(out: &Tensor, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(&o, &w)| o * w).sum()
}

/// Runs one randomized check of the target layer and returns the worst
/// relative error over every gradient the layer produces (input, and
/// parameters where it has them).
pub fn layer_gradient_max_error(target: CheckTarget, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed, 0x6AD);
    match target {
        CheckTarget::Conv2d => {
            let (n, h, w, c, f) = (2, 5, 5, 2, 3);
            let kh = rng.gen_range(2..=3);
            let kw = rng.gen_range(2..=3);
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..=1);
            let x = Tensor::new(vec![n, h, w, c], random_data(n * h * w * c, &mut rng)).unwrap();
            let wt = Tensor::new(vec![kh, kw, c, f], random_data(kh * kw * c * f, &mut rng)).unwrap();
            let b = Tensor::new(vec![f], random_data(f, &mut rng)).unwrap();
            let out = layers::conv2d_forward(&x, &wt, &b, stride, padding).unwrap();
            let proj = random_data(out.numel(), &mut rng);
            let upstream = Tensor::new(out.shape().to_vec(), proj.clone()).unwrap();
            let (gx, gw, gb) = layers::conv2d_backward(&x, &wt, stride, padding, &upstream).unwrap();

            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(x.shape().to_vec(), vals.to_vec()).unwrap();
                    project(
                        &layers::conv2d_forward(&xt, &wt, &b, stride, padding).unwrap(),
                        &proj,
                    )
                },
                x.data(),
                FD_STEP,
            );
            let nw = numerical_grad(
                |vals| {
                    let wt2 = Tensor::new(wt.shape().to_vec(), vals.to_vec()).unwrap();
                    project(
                        &layers::conv2d_forward(&x, &wt2, &b, stride, padding).unwrap(),
                        &proj,
                    )
                },
                wt.data(),
                FD_STEP,
            );
            let nb = numerical_grad(
                |vals| {
                    let b2 = Tensor::new(b.shape().to_vec(), vals.to_vec()).unwrap();
                    project(
                        &layers::conv2d_forward(&x, &wt, &b2, stride, padding).unwrap(),
                        &proj,
                    )
                },
                b.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
                .max(max_rel_error(gw.data(), &nw))
                .max(max_rel_error(gb.data(), &nb))
        }
        CheckTarget::MaxPool => {
            let (n, h, w, c) = (2, 6, 6, 2);
            let size = rng.gen_range(2..=3);
            let stride = rng.gen_range(1..=2);
            // Distinct values keep the argmax stable under the FD step.
            let mut vals = random_data(n * h * w * c, &mut rng);
            for (i, v) in vals.iter_mut().enumerate() {
                *v += i as f64 * 1e-3;
            }
            let x = Tensor::new(vec![n, h, w, c], vals).unwrap();
            let (out, argmax) = layers::maxpool_forward(&x, size, stride).unwrap();
            let proj = random_data(out.numel(), &mut rng);
            let upstream = Tensor::new(out.shape().to_vec(), proj.clone()).unwrap();
            let gx = layers::maxpool_backward(x.shape(), &argmax, &upstream).unwrap();
            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(x.shape().to_vec(), vals.to_vec()).unwrap();
                    project(&layers::maxpool_forward(&xt, size, stride).unwrap().0, &proj)
                },
                x.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
        }
        CheckTarget::Dense => {
            let (n, d, u) = (3, 7, 4);
            let x = Tensor::new(vec![n, d], random_data(n * d, &mut rng)).unwrap();
            let w = Tensor::new(vec![d, u], random_data(d * u, &mut rng)).unwrap();
            let b = Tensor::new(vec![u], random_data(u, &mut rng)).unwrap();
            let out = layers::dense_forward(&x, &w, &b).unwrap();
            let proj = random_data(out.numel(), &mut rng);
            let upstream = Tensor::new(out.shape().to_vec(), proj.clone()).unwrap();
            let (gx, gw, gb) = layers::dense_backward(&x, &w, &upstream).unwrap();
            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(x.shape().to_vec(), vals.to_vec()).unwrap();
                    project(&layers::dense_forward(&xt, &w, &b).unwrap(), &proj)
                },
                x.data(),
                FD_STEP,
            );
            let nw = numerical_grad(
                |vals| {
                    let wt = Tensor::new(w.shape().to_vec(), vals.to_vec()).unwrap();
                    project(&layers::dense_forward(&x, &wt, &b).unwrap(), &proj)
                },
                w.data(),
                FD_STEP,
            );
            let nb = numerical_grad(
                |vals| {
                    let bt = Tensor::new(b.shape().to_vec(), vals.to_vec()).unwrap();
                    project(&layers::dense_forward(&x, &w, &bt).unwrap(), &proj)
                },
                b.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
                .max(max_rel_error(gw.data(), &nw))
                .max(max_rel_error(gb.data(), &nb))
        }
        CheckTarget::BatchNorm => {
            // Alternate between dense [n, c] and spatial [n, h, w, c] inputs.
            let c = 3;
            let shape: Vec<usize> = if seed % 2 == 0 {
                vec![4, c]
            } else {
                vec![2, 3, 2, c]
            };
            let numel: usize = shape.iter().product();
            let x = Tensor::new(shape.clone(), random_data(numel, &mut rng)).unwrap();
            let gamma = Tensor::new(vec![c], random_data(c, &mut rng)).unwrap();
            let beta = Tensor::new(vec![c], random_data(c, &mut rng)).unwrap();
            let fwd = |xv: &[f64], gv: &[f64], bv: &[f64]| -> Tensor {
                let xt = Tensor::new(shape.clone(), xv.to_vec()).unwrap();
                let gt = Tensor::new(vec![c], gv.to_vec()).unwrap();
                let bt = Tensor::new(vec![c], bv.to_vec()).unwrap();
                let mut rm = vec![0.0; c];
                let mut rv = vec![1.0; c];
                layers::batchnorm_forward(
                    &xt,
                    &gt,
                    &bt,
                    &mut rm,
                    &mut rv,
                    Mode::Train,
                    layers::BATCHNORM_MOMENTUM,
                    layers::BATCHNORM_EPS,
                )
                .unwrap()
                .0
            };
            let out = fwd(x.data(), gamma.data(), beta.data());
            let proj = random_data(out.numel(), &mut rng);
            let upstream = Tensor::new(out.shape().to_vec(), proj.clone()).unwrap();
            let mut rm = vec![0.0; c];
            let mut rv = vec![1.0; c];
            let (_, cache) = layers::batchnorm_forward(
                &x,
                &gamma,
                &beta,
                &mut rm,
                &mut rv,
                Mode::Train,
                layers::BATCHNORM_MOMENTUM,
                layers::BATCHNORM_EPS,
            )
            .unwrap();
            let (gx, dgamma, dbeta) =
                layers::batchnorm_backward(&cache.unwrap(), &gamma, &upstream).unwrap();
            let nx = numerical_grad(
                |vals| project(&fwd(vals, gamma.data(), beta.data()), &proj),
                x.data(),
                FD_STEP,
            );
            let ng = numerical_grad(
                |vals| project(&fwd(x.data(), vals, beta.data()), &proj),
                gamma.data(),
                FD_STEP,
            );
            let nb = numerical_grad(
                |vals| project(&fwd(x.data(), gamma.data(), vals), &proj),
                beta.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
                .max(max_rel_error(dgamma.data(), &ng))
                .max(max_rel_error(dbeta.data(), &nb))
        }
        CheckTarget::Relu => {
            let n = 24;
            let x = Tensor::new(vec![4, 6], random_data_off_kinks(n, &mut rng)).unwrap();
            let proj = random_data(n, &mut rng);
            let upstream = Tensor::new(vec![4, 6], proj.clone()).unwrap();
            let gx = layers::relu_backward(&x, &upstream);
            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(vec![4, 6], vals.to_vec()).unwrap();
                    project(&layers::relu_forward(&xt), &proj)
                },
                x.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
        }
        CheckTarget::DropoutEval => {
            let n = 30;
            let x = Tensor::new(vec![5, 6], random_data(n, &mut rng)).unwrap();
            let proj = random_data(n, &mut rng);
            let upstream = Tensor::new(vec![5, 6], proj.clone()).unwrap();
            let (_, mask) = layers::dropout_forward(&x, 0.5, Mode::Eval, None).unwrap();
            let gx = layers::dropout_backward(&mask, &upstream);
            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(vec![5, 6], vals.to_vec()).unwrap();
                    let (out, _) = layers::dropout_forward(&xt, 0.5, Mode::Eval, None).unwrap();
                    project(&out, &proj)
                },
                x.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
        }
        CheckTarget::ZeroPad => {
            let (n, h, w, c) = (2, 3, 4, 2);
            let size = rng.gen_range(1..=2);
            let x = Tensor::new(vec![n, h, w, c], random_data(n * h * w * c, &mut rng)).unwrap();
            let out = layers::zeropad_forward(&x, size).unwrap();
            let proj = random_data(out.numel(), &mut rng);
            let upstream = Tensor::new(out.shape().to_vec(), proj.clone()).unwrap();
            let gx = layers::zeropad_backward(x.shape(), size, &upstream).unwrap();
            let nx = numerical_grad(
                |vals| {
                    let xt = Tensor::new(x.shape().to_vec(), vals.to_vec()).unwrap();
                    project(&layers::zeropad_forward(&xt, size).unwrap(), &proj)
                },
                x.data(),
                FD_STEP,
            );
            max_rel_error(gx.data(), &nx)
        }
        CheckTarget::SoftmaxXent => {
            let (n, k) = (4, 3);
            let logits = Tensor::new(vec![n, k], random_data(n * k, &mut rng)).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let (_, probs) = layers::softmax_xent_loss(&logits, &labels).unwrap();
            let grad = layers::softmax_xent_backward(&probs, &labels).unwrap();
            let ng = numerical_grad(
                |vals| {
                    let lt = Tensor::new(vec![n, k], vals.to_vec()).unwrap();
                    layers::softmax_xent_loss(&lt, &labels).unwrap().0
                },
                logits.data(),
                FD_STEP,
            );
            max_rel_error(grad.data(), &ng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-4;

    #[test]
    fn every_layer_passes_finite_difference_checks() {
        for target in CheckTarget::ALL {
            for trial in 0..5 {
                let err = layer_gradient_max_error(target, trial);
                assert!(
                    err <= TOL,
                    "{} trial {trial}: max rel error {err:e} above {TOL:e}",
                    target.name()
                );
            }
        }
    }

    #[test]
    fn numerical_grad_of_quadratic_is_exact_enough() {
        // f(x) = sum x_i^2, grad = 2x; central differences are exact for
        // quadratics up to rounding.
        let x = vec![0.5, -1.25, 2.0];
        let g = numerical_grad(|v| v.iter().map(|&a| a * a).sum(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() <= 1e-9);
        }
    }
}
