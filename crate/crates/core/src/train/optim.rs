use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: AdamState,
}

/// Moments and step count, one tensor pair per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self { beta1, beta2, eps, state: AdamState { step: 0, m: zeros(), v: zeros() } }
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn state(&self) -> AdamState {
        self.state.clone()
    }

    pub fn restore(&mut self, state: AdamState) -> Result<()> {
        let shapes = |ts: &[Tensor]| ts.iter().map(Tensor::shape).collect::<Vec<_>>();
        let want = shapes(&self.state.m);
        if shapes(&state.m) != want || shapes(&state.v) != want {
            return Err(Error::Config("optimizer moments do not match the parameter shapes".into()));
        }
        if state.m.iter().chain(&state.v).any(|t| t.data().len() != t.rows() * t.cols()) {
            return Err(Error::Input("optimizer moment has the wrong number of entries".into()));
        }
        self.state = state;
        Ok(())
    }

    /// One update with learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        let s = &mut self.state;
        if params.len() != s.m.len() || grads.len() != s.m.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} parameters, got {} values and {} gradients",
                s.m.len(),
                params.len(),
                grads.len()
            )));
        }
        s.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(s.step as f64);
        let c2 = 1.0 - b2.powf(s.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut s.m).zip(&mut s.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape("adam parameter, gradient and moment shapes differ".into()));
            }
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
