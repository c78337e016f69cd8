use std::collections::HashMap;

use rand::Rng;

use super::NnError;

/// Index of a tensor inside a [`ParamRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. Matrices are `[rows, cols]` row-major, vectors
/// `[len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    tensors: Vec<ParamTensor>,
    by_name: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<ParamId, NnError> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 || len != values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{name}: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.tensors.len();
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape,
            grad: vec![0.0; len],
            values,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, NnError> {
        let len = shape.iter().product();
        self.add(name, shape, vec![0.0; len])
    }

    /// Glorot-uniform matrix, entries in `(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    pub fn glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId, NnError> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, vec![rows, cols], values)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }
}
