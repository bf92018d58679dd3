use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Positions and velocities of every vertex at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub step_index: usize,
}

impl SimState {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let s = Self { q, v, step_index: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, v: vec![0.0; n], step_index: 0 }
    }

    pub fn n_dofs(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.v.len() {
            return Err(SimError::DimensionMismatch { expected: self.q.len(), got: self.v.len() });
        }
        if !self.q.iter().chain(&self.v).all(|x| x.is_finite()) {
            return Err(SimError::NonFinite("SimState"));
        }
        Ok(())
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [self.q[3 * i], self.q[3 * i + 1], self.q[3 * i + 2]]
    }
}
