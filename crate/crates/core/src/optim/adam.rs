use crate::error::{invalid, Error, Result};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid(format!(
                "Adam betas ({}, {}) outside [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.eps > 0.0) {
            return Err(invalid("Adam lr and eps must be positive"));
        }
        if self.m.len() != self.v.len() {
            return Err(invalid("Adam moment vectors differ in length"));
        }
        Ok(())
    }

    /// Advances the state and returns the update to add to the parameters.
    /// A non-finite gradient leaves the state untouched.
    pub fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if grad.len() != self.m.len() {
            return Err(invalid(format!(
                "gradient has {} entries, state has {}",
                grad.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::RejectedStep(format!("gradient entry {i} is {}", grad[i])));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut update = vec![0.0; grad.len()];
        for (i, g) in grad.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            update[i] = -self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(update)
    }
}

/// Applies one Adam step to `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(invalid("parameter and gradient lengths differ"));
    }
    let update = state.step(grad)?;
    for (p, u) in params.iter_mut().zip(update) {
        *p += u;
    }
    Ok(())
}
