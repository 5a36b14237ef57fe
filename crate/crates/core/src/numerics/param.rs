use crate::error::{NcdError, Result};
use crate::numerics::Tensor;

/// Trainable tensor with its gradient accumulator and momentum slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            momentum,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.value.same_shape(g, "gradient accumulation")?;
        self.grad.add_assign(g);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// One SGD-with-momentum update: `slot = m * slot + grad; value -= lr * slot`,
/// after which every gradient is zeroed.
pub fn sgd_momentum_step(params: &mut [Param], lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(NcdError::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(NcdError::Config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    for p in params.iter_mut() {
        let Param {
            value,
            grad,
            momentum: slot,
        } = p;
        for ((v, g), s) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.data_mut().iter_mut())
        {
            *s = momentum * *s + g;
            *v -= lr * *s;
        }
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64) -> Param {
        Param::new(Tensor::scalar(w))
    }

    #[test]
    fn plain_step() {
        let mut p = vec![scalar_param(1.0)];
        p[0].grad = Tensor::scalar(0.5);
        sgd_momentum_step(&mut p, 0.1, 0.0).unwrap();
        assert!((p[0].value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p[0].grad.data()[0], 0.0);
    }

    #[test]
    fn zero_grad_leaves_values() {
        let mut p = vec![Param::new(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap())];
        let before = p[0].value.clone();
        sgd_momentum_step(&mut p, 0.3, 0.9).unwrap();
        assert_eq!(p[0].value, before);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = vec![scalar_param(0.0)];
        for _ in 0..2 {
            p[0].grad = Tensor::scalar(1.0);
            sgd_momentum_step(&mut p, 1.0, 0.5).unwrap();
        }
        // slot 1.0 then 1.5
        assert_eq!(p[0].value.data()[0], -2.5);
    }

    #[test]
    fn rejects_bad_lr() {
        let mut p = vec![scalar_param(0.0)];
        assert!(matches!(
            sgd_momentum_step(&mut p, 0.0, 0.0),
            Err(NcdError::Config(_))
        ));
        assert!(matches!(
            sgd_momentum_step(&mut p, -1.0, 0.0),
            Err(NcdError::Config(_))
        ));
    }
}
