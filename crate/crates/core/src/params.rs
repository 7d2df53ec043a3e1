//! Named storage for learnable parameters and non-learnable buffers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Named<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Parameters are updated by the optimizer; buffers (batch-norm running
/// statistics) are not and do not count towards the parameter total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Named<T>>,
    buffers: Vec<Named<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push(Named {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> BufferId {
        self.buffers.push(Named {
            name: name.into(),
            tensor,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].tensor
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].tensor
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Named<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn buffers(&self) -> &[Named<T>] {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Overwrites every tensor from `other`, which must have identical names
    /// and shapes in identical order.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        fn copy<T: Scalar>(dst: &mut [Named<T>], src: &[Named<T>], kind: &str) -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::Validation(format!(
                    "expected {} {kind} tensors, found {}",
                    dst.len(),
                    src.len()
                )));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                if d.name != s.name || d.tensor.shape() != s.tensor.shape() {
                    return Err(Error::Validation(format!(
                        "{kind} `{}` ({}) does not match `{}` ({})",
                        d.name,
                        d.tensor.shape(),
                        s.name,
                        s.tensor.shape()
                    )));
                }
                d.tensor = s.tensor.clone();
            }
            Ok(())
        }
        copy(&mut self.params, &other.params, "parameter")?;
        copy(&mut self.buffers, &other.buffers, "buffer")
    }

    pub(crate) fn from_parts(params: Vec<Named<T>>, buffers: Vec<Named<T>>) -> Self {
        ParamStore { params, buffers }
    }

    pub(crate) fn parts(&self) -> (&[Named<T>], &[Named<T>]) {
        (&self.params, &self.buffers)
    }
}
