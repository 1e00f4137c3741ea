//! Adam and SGD-with-momentum parameter updates.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSpec {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSpec {
    fn default() -> Self {
        AdamSpec {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdSpec {
    fn default() -> Self {
        SgdSpec {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Adam(AdamSpec),
    Sgd(SgdSpec),
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            OptimizerSpec::Adam(a) => {
                a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0
            }
            OptimizerSpec::Sgd(s) => {
                s.lr > 0.0 && (0.0..1.0).contains(&s.momentum) && s.weight_decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer spec {self:?}")))
        }
    }
}

/// One bias-corrected Adam update over a flat parameter slice.
/// `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    spec: &AdamSpec,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - spec.beta1.powi(t as i32);
    let bc2 = 1.0 - spec.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g;
        v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= spec.lr * m_hat / (v_hat.sqrt() + spec.eps);
    }
}

/// One SGD update with momentum and coupled weight decay:
/// v <- momentum*v - lr*(g + wd*theta); theta <- theta + v.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], spec: &SgdSpec) {
    for i in 0..params.len() {
        velocity[i] = spec.momentum * velocity[i] - spec.lr * (grads[i] + spec.weight_decay * params[i]);
        params[i] += velocity[i];
    }
}

/// Stateful optimizer over a fixed parameter list. Slot order follows the
/// parameter declaration order; slots are sized on first use.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    step_count: u64,
    slot_a: Vec<Vec<f64>>, // Adam m / SGD velocity
    slot_b: Vec<Vec<f64>>, // Adam v / unused
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Optimizer> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            step_count: 0,
            slot_a: Vec::new(),
            slot_b: Vec::new(),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    /// Applies one update to every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.slot_a.is_empty() {
            for p in params.iter() {
                self.slot_a.push(vec![0.0; p.numel()]);
                self.slot_b.push(vec![0.0; p.numel()]);
            }
        }
        if self.slot_a.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer was initialized for {} parameters, got {}",
                self.slot_a.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if self.slot_a[i].len() != p.numel() {
                return Err(Error::Shape(format!(
                    "optimizer state {i} has {} values, parameter has {}",
                    self.slot_a[i].len(),
                    p.numel()
                )));
            }
            let grad = p
                .grad()
                .ok_or_else(|| Error::Run("parameter has no gradient".into()))?
                .to_vec();
            match &self.spec {
                OptimizerSpec::Adam(a) => adam_step(
                    p.data_mut(),
                    &grad,
                    &mut self.slot_a[i],
                    &mut self.slot_b[i],
                    self.step_count,
                    a,
                ),
                OptimizerSpec::Sgd(s) => {
                    sgd_step(p.data_mut(), &grad, &mut self.slot_a[i], s)
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = [1.0, -2.0, 3.0];
        let g = [0.0; 3];
        let mut m = [0.0; 3];
        let mut v = [0.0; 3];
        adam_step(&mut p, &g, &mut m, &mut v, 1, &AdamSpec::default());
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_single_step_with_unit_gradient() {
        // With bias correction, m_hat = v_hat = 1, so the step is
        // -lr / (1 + eps), within eps of -lr.
        let spec = AdamSpec::default();
        let mut p = [0.0];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, &spec);
        let expected = -spec.lr * (1.0 / (1.0 + spec.eps));
        assert!((p[0] - expected).abs() <= 1e-15);
        assert!((p[0] + spec.lr).abs() <= 1e-10);
    }

    #[test]
    fn adam_constant_gradient_decreases_monotonically() {
        let spec = AdamSpec::default();
        let mut p = [5.0];
        let mut m = [0.0];
        let mut v = [0.0];
        let mut prev = p[0];
        for t in 1..=100 {
            adam_step(&mut p, &[1.0], &mut m, &mut v, t, &spec);
            assert!(p[0] < prev, "step {t}: {} !< {prev}", p[0]);
            prev = p[0];
        }
    }

    #[test]
    fn sgd_zero_grad_zero_decay_is_identity() {
        let spec = SgdSpec {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut p = [1.0, 2.0];
        let mut vel = [0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut vel, &spec);
        assert_eq!(p, [1.0, 2.0]);
    }

    #[test]
    fn sgd_pure_weight_decay_single_step() {
        let spec = SgdSpec {
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 5e-4,
        };
        let mut p = [1.0];
        let mut vel = [0.0];
        sgd_step(&mut p, &[0.0], &mut vel, &spec);
        assert_eq!(p[0], 1.0 - 0.01 * 5e-4);
    }

    #[test]
    fn sgd_two_steps_match_hand_recurrence_exactly() {
        let spec = SgdSpec {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut p = [2.0];
        let mut vel = [0.0];
        let grads = [0.5, -0.25];

        // Independent scalar recurrence.
        let mut theta = 2.0f64;
        let mut v = 0.0f64;
        for &g in &grads {
            v = spec.momentum * v - spec.lr * (g + spec.weight_decay * theta);
            theta += v;
        }

        for &g in &grads {
            sgd_step(&mut p, &[g], &mut vel, &spec);
        }
        assert_eq!(p[0], theta);
        assert_eq!(vel[0], v);
    }

    #[test]
    fn optimizer_rejects_mismatched_parameter_count() {
        let mut opt = Optimizer::new(OptimizerSpec::Sgd(SgdSpec::default())).unwrap();
        let mut a = Tensor::zeros(vec![2]);
        a.grad_mut();
        let mut b = Tensor::zeros(vec![2]);
        b.grad_mut();
        opt.step(&mut [&mut a, &mut b]).unwrap();
        let mut only = Tensor::zeros(vec![2]);
        only.grad_mut();
        assert!(opt.step(&mut [&mut only]).is_err());
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        assert!(OptimizerSpec::Adam(AdamSpec {
            lr: 0.0,
            ..AdamSpec::default()
        })
        .validate()
        .is_err());
        assert!(OptimizerSpec::Sgd(SgdSpec {
            momentum: 1.0,
            ..SgdSpec::default()
        })
        .validate()
        .is_err());
        assert!(OptimizerSpec::Sgd(SgdSpec {
            weight_decay: -0.1,
            ..SgdSpec::default()
        })
        .validate()
        .is_err());
    }
}
