use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::tensor::{Matrix, Scalar};

/// Index of a trainable tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Ordered collection of a model's trainable tensors. Gradients and Adam
/// buffers are aligned with this order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Replaces every tensor value from `other`, which must have identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Input(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::shape(
                    format!("parameter {}", a.name),
                    a.value.shape(),
                    b.value.shape(),
                ));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// Errors unless `other` has the same tensor names and shapes, in order.
    pub fn check_layout(&self, other: &ParamSet<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Input(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name {
                return Err(Error::Input(format!("expected tensor {}, found {}", a.name, b.name)));
            }
            if a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!("tensor {}", a.name), a.value.shape(), b.value.shape()));
            }
        }
        Ok(())
    }

    pub fn fingerprint_into(&self, f: &mut Fingerprinter) {
        f.u64(self.params.len() as u64);
        for p in &self.params {
            f.str(&p.name).matrix(&p.value);
        }
    }
}

/// Gradients aligned one-to-one with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    grads: Vec<Matrix<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            grads: params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn from_vec(grads: Vec<Matrix<T>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.grads.iter()
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

/// Running statistics of one batch-norm layer. Not trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T = f32> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
        }
    }

    pub fn cast<U: Scalar>(&self) -> BnStats<U> {
        BnStats {
            running_mean: self.running_mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            running_var: self.running_var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
