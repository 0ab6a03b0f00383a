use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{ensure_finite, Error, Result};

/// Momentum SGD hyperparameters (the learning rate comes from a schedule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("{field}.momentum"), "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("{field}.weight_decay"), "must be non-negative"));
        }
        Ok(())
    }

    pub fn step(&self, params: &mut ParamSet, lr: f64) -> Result<()> {
        sgd_step(params, lr, self.momentum, self.weight_decay)
    }
}

/// One momentum-SGD update:
/// `v <- momentum·v + (grad + weight_decay·param)`, `param <- param - lr·v`.
///
/// Gradients are left in place; callers clear them between steps.
pub fn sgd_step(params: &mut ParamSet, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if let Some(name) = params
        .iter()
        .find_map(|(n, t)| t.grad().is_none().then_some(n))
    {
        return Err(Error::Usage(format!(
            "sgd_step called before gradients were computed (`{name}` has none)"
        )));
    }
    let (tensors, buffers) = params.parts_mut();
    for (name, param) in tensors.iter_mut() {
        let velocity = buffers
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let grad = param.grad().expect("checked above").to_vec();
        for ((v, g), p) in velocity.data_mut().iter_mut().zip(&grad).zip(param.data()) {
            *v = momentum * *v + (g + weight_decay * p);
        }
        let v = velocity.data().to_vec();
        for (p, v) in param.data_mut().iter_mut().zip(&v) {
            *p -= lr * v;
        }
        ensure_finite(&format!("parameter `{name}` after update"), param.data())?;
    }
    let step = params.step() + 1;
    params.set_step(step);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> ParamSet {
        let mut p = ParamSet::new();
        let mut t = Tensor::scalar(value);
        t.accumulate_grad(&[grad]).unwrap();
        p.insert("x", t).unwrap();
        p
    }

    #[test]
    fn single_step_definition() {
        let mut p = scalar_param(1.0, 1.0);
        sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.9]);
        assert_eq!(p.momentum("x").unwrap().data(), &[1.0]);
        assert_eq!(p.step(), 1);
        assert_eq!(p.get("x").unwrap().grad(), Some(&[1.0][..]));
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = scalar_param(0.37, 5.0);
        sgd_step(&mut p, 0.0, 0.9, 1e-4).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.37]);
    }

    #[test]
    fn quadratic_matches_hand_recurrence() {
        // f(x) = x²/2, grad = x.
        let (lr, mu) = (0.1, 0.9);
        let (mut x, mut v) = (1.0f64, 0.0f64);
        let mut expected = Vec::new();
        for _ in 0..3 {
            v = mu * v + x;
            x -= lr * v;
            expected.push(x);
        }
        assert!((expected[0] - 0.9).abs() < 1e-15);
        assert!((expected[1] - 0.72).abs() < 1e-15);
        assert!((expected[2] - 0.486).abs() < 1e-15);

        let mut p = scalar_param(1.0, 0.0);
        for e in expected {
            let x_now = p.get("x").unwrap().data()[0];
            p.zero_grad();
            p.get_mut("x").unwrap().accumulate_grad(&[x_now]).unwrap();
            sgd_step(&mut p, lr, mu, 0.0).unwrap();
            assert_eq!(p.get("x").unwrap().data()[0], e);
        }
    }

    #[test]
    fn missing_grad_is_usage_error() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(sgd_step(&mut p, 0.1, 0.9, 0.0), Err(Error::Usage(_))));
    }
}
