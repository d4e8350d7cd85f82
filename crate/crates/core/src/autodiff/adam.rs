use crate::autodiff::graph::Graph;
use crate::autodiff::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0 && config.eps > 0.0) {
            return Err(Error::InvalidArgument("Adam needs lr > 0 and eps > 0".into()));
        }
        if !((0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2)) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        let m: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Ok(Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update using the gradients held by `graph`.
    pub fn step(&mut self, params: &mut ParamSet<T>, graph: &Graph<T>, bound: &Bound) -> Result<()> {
        if params.len() != self.m.len() || bound.vars().len() != self.m.len() {
            return Err(Error::shape("adam step", self.m.len(), params.len()));
        }
        let mut grads = Vec::with_capacity(self.m.len());
        for (i, &var) in bound.vars().iter().enumerate() {
            let g = graph.grad(var).ok_or_else(|| {
                Error::Graph(format!(
                    "missing gradient for parameter {}",
                    params.name(params.id_at(i))
                ))
            })?;
            grads.push(g);
        }
        self.apply(params, &grads)
    }

    /// Same as [`AdamState::step`] with explicit gradients in parameter order.
    pub fn apply(&mut self, params: &mut ParamSet<T>, grads: &[&[T]]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam gradients", self.m.len(), grads.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::shape("adam gradient", self.m[i].len(), g.len()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let t = self.step as i32;
        let bc1 = T::one() - T::lit(c.beta1.powi(t));
        let bc2 = T::one() - T::lit(c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, g) in grads.iter().enumerate() {
            let id = params.id_at(i);
            let theta = params.tensor_mut(id).data_mut();
            for (((p, m), v), &gi) in theta.iter_mut().zip(&mut self.m[i]).zip(&mut self.v[i]).zip(g.iter()) {
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
