use serde::{Deserialize, Serialize};

/// Handle to a [`Parameter`] inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named, trainable flat array with its gradient accumulator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    /// Set when a backward pass reached this parameter since the last reset.
    #[serde(skip)]
    pub touched: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, values: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter shape does not match value count"
        );
        let grad = vec![0.0; values.len()];
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values,
            grad,
            touched: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.touched = false;
    }
}

/// Owner of every trainable array. Tapes read values from here and
/// backward passes accumulate gradients into it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, values: Vec<f64>, shape: &[usize]) -> ParamId {
        self.params.push(Parameter::new(name, values, shape));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        // Deserialized stores come without grad buffers.
        if p.grad.len() != p.values.len() {
            p.grad = vec![0.0; p.values.len()];
        }
        for (acc, g) in p.grad.iter_mut().zip(grad) {
            *acc += g;
        }
        p.touched = true;
    }

    /// Restores gradient buffers after deserialization.
    pub fn ensure_grad_buffers(&mut self) {
        for p in &mut self.params {
            if p.grad.len() != p.values.len() {
                p.grad = vec![0.0; p.values.len()];
            }
        }
    }
}
