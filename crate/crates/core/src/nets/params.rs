//! Uniform access to a network's named parameter tensors, used by the
//! optimizer, the initializer and checkpoint serialization.

use crate::error::{Error, Result};

/// Read view of one named tensor; vectors are `rows × 1`.
pub struct TensorView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
pub struct TensorViewMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

/// Implemented by parameter containers (networks and their gradient/moment
/// clones). Tensor order and names must be stable across calls so containers
/// of the same architecture can be zipped elementwise.
pub trait ParamTensors: Sized {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>>;

    /// A same-shaped container with every parameter zeroed; gradient and
    /// optimizer-moment storage.
    fn zeros_like(&self) -> Self;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn zero_all(&mut self) {
        for t in self.tensors_mut() {
            t.data.fill(0.0);
        }
    }

    /// Rounds every parameter to its nearest single-precision value. Training
    /// state lives on the f32 grid so the f32 checkpoint format serializes it
    /// losslessly and resumed runs replay bit-for-bit.
    fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// A free-standing named-tensor collection: the interchange form between
/// networks and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParameterSet {
    pub fn from_params<T: ParamTensors>(params: &T) -> Self {
        ParameterSet {
            tensors: params
                .tensors()
                .into_iter()
                .map(|t| NamedTensor {
                    name: t.name,
                    rows: t.rows,
                    cols: t.cols,
                    data: t.data.to_vec(),
                })
                .collect(),
        }
    }

    /// Copies values into `target`, requiring an exact name/shape match in
    /// the same order.
    pub fn apply_to<T: ParamTensors>(&self, target: &mut T) -> Result<()> {
        let views = target.tensors_mut();
        if views.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "tensor count mismatch: archive has {}, network expects {}",
                self.tensors.len(),
                views.len()
            )));
        }
        for (view, stored) in views.into_iter().zip(&self.tensors) {
            if view.name != stored.name {
                return Err(Error::Checkpoint(format!(
                    "tensor name mismatch: archive has '{}', network expects '{}'",
                    stored.name, view.name
                )));
            }
            if view.rows != stored.rows || view.cols != stored.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' shape mismatch: archive {}x{}, network {}x{}",
                    stored.name, stored.rows, stored.cols, view.rows, view.cols
                )));
            }
            view.data.copy_from_slice(&stored.data);
        }
        Ok(())
    }

    /// Prefixes every tensor name; used to pack optimizer moments next to the
    /// model parameters in one archive.
    pub fn with_prefix(mut self, prefix: &str) -> Self {
        for t in &mut self.tensors {
            t.name = format!("{prefix}{}", t.name);
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}
