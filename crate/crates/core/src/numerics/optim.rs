//! First-order update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        check_shapes(params, grads, Some(&self.first))?;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            let p = p.data_mut();
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent, `θ ← θ − lr·g`.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
}

impl SgdState {
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        check_shapes(params, grads, None)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                *pi -= self.learning_rate * gi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd(SgdState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(learning_rate, shapes)),
            OptimizerKind::Sgd => Optimizer::Sgd(SgdState { learning_rate }),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        match self {
            Optimizer::Adam(s) => s.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

fn check_shapes(params: &[&mut Matrix], grads: &[Matrix], moments: Option<&[Matrix]>) -> Result<()> {
    if params.len() != grads.len() || moments.is_some_and(|m| m.len() != params.len()) {
        return Err(Error::Contract(format!(
            "optimizer got {} parameters and {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let moment_shape = moments.map(|m| m[i].shape()).unwrap_or(p.shape());
        if p.shape() != g.shape() || p.shape() != moment_shape {
            return Err(Error::Contract(format!(
                "parameter {i} has shape {:?} but gradient {:?} and state {:?}",
                p.shape(),
                g.shape(),
                moment_shape
            )));
        }
    }
    Ok(())
}
