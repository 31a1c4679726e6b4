use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamId;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with per-parameter step counters; a parameter's state is created
/// on its first update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    states: BTreeMap<usize, AdamState>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(&id.0)
    }

    /// Advances the moments of `id` and returns the updated values.
    pub fn update(&mut self, id: ParamId, values: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
        let st = self.states.entry(id.0).or_insert_with(|| AdamState {
            step: 0,
            m: vec![0.0; values.len()],
            v: vec![0.0; values.len()],
        });
        st.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(st.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(st.step as i32);
        values
            .iter()
            .zip(grad)
            .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            .map(|((&x, &g), (m, v))| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                x - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
            })
            .collect()
    }
}
