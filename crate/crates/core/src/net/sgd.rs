use crate::{Error, Result};

/// Flat view over a set of parameter (or gradient) tensors, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Momentum SGD state.
///
/// Update rule, per element: `v = momentum * v + grad + weight_decay * param`,
/// then `param -= learning_rate * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Defaults used throughout: lr 1e-3, momentum 0.9, weight decay 5e-4.
    pub fn standard() -> Self {
        SgdState::new(1e-3, 0.9, 5e-4)
    }

    /// Drops the velocity buffers; they are re-created on the next step.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

pub fn sgd_step<P, G>(params: &mut P, grads: &G, state: &mut SgdState) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    if g.len() != p.len() || p.iter().zip(&g).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::contract("sgd_step: gradient layout differs from parameters"));
    }
    if state.velocity.is_empty() {
        state.velocity = p.iter().map(|t| vec![0.0; t.len()]).collect();
    } else if state.velocity.len() != p.len()
        || state.velocity.iter().zip(&p).any(|(v, t)| v.len() != t.len())
    {
        return Err(Error::contract("sgd_step: velocity buffers belong to another parameter set"));
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((param, grad), vel) in p.iter_mut().zip(&g).zip(state.velocity.iter_mut()) {
        for ((w, &dw), v) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
            *v = mu * *v + dw + wd * *w;
            *w -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut s = SgdState::new(0.1, 0.9, 0.0);
        sgd_step(&mut p, &Flat(vec![0.0, 0.0]), &mut s).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(s.velocity(), &[vec![0.0, 0.0]]);
    }

    #[test]
    fn plain_step() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut s = SgdState::new(0.5, 0.0, 0.0);
        sgd_step(&mut p, &Flat(vec![0.25, 1.0]), &mut s).unwrap();
        assert_eq!(p.0, vec![1.0 - 0.5 * 0.25, -2.0 - 0.5]);
    }

    #[test]
    fn momentum_and_decay() {
        let mut p = Flat(vec![1.0]);
        let mut s = SgdState::standard();
        assert_eq!((s.learning_rate, s.momentum, s.weight_decay), (1e-3, 0.9, 5e-4));
        sgd_step(&mut p, &Flat(vec![2.0]), &mut s).unwrap();
        let v1 = 2.0 + 5e-4;
        assert_eq!(p.0[0], 1.0 - 1e-3 * v1);
        let w1 = p.0[0];
        sgd_step(&mut p, &Flat(vec![2.0]), &mut s).unwrap();
        let v2 = 0.9 * v1 + 2.0 + 5e-4 * w1;
        assert_eq!(p.0[0], w1 - 1e-3 * v2);
    }

    #[test]
    fn layout_mismatch() {
        let mut p = Flat(vec![1.0]);
        let mut s = SgdState::standard();
        assert!(sgd_step(&mut p, &Flat(vec![1.0, 2.0]), &mut s).is_err());
        sgd_step(&mut p, &Flat(vec![1.0]), &mut s).unwrap();
        let mut q = Flat(vec![1.0, 2.0]);
        assert!(sgd_step(&mut q, &Flat(vec![1.0, 2.0]), &mut s).is_err());
    }
}
