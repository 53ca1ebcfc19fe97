use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// One learnable parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> NamedTensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        NamedTensor {
            name: name.into(),
            shape,
            data: alloc::vec![T::zero(); len],
        }
    }
}

/// Ordered collection of every learnable tensor of one network, addressable
/// by layer name. Gradients and optimizer moments use the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsHandle<T> {
    tensors: Vec<NamedTensor<T>>,
}

impl<T> Default for WeightsHandle<T> {
    fn default() -> Self {
        WeightsHandle {
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> WeightsHandle<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: NamedTensor<T>) -> Result<()> {
        if self.index_of(&tensor.name).is_some() {
            return Err(Error::domain(alloc::format!(
                "tensor `{}` registered twice",
                tensor.name
            )));
        }
        let len: usize = tensor.shape.iter().product();
        Error::check_len("tensor data", len, tensor.data.len())?;
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor<T>> {
        self.index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NamedTensor<T>> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.tensors[i]),
            None => Err(Error::UnknownParam(name.into())),
        }
    }

    #[inline]
    pub fn at(&self, index: usize) -> &[T] {
        &self.tensors[index].data
    }

    #[inline]
    pub fn at_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.tensors[index].data
    }

    pub fn tensors(&self) -> &[NamedTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        WeightsHandle {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// True when both handles hold the same names and shapes in order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// 64-bit FNV-1a over names, shapes and the raw value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for t in &self.tensors {
            h.bytes(t.name.as_bytes());
            for &d in &t.shape {
                h.bytes(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.bytes(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Copies every tensor of `other` whose name exists here. Returns the
    /// number of tensors copied.
    pub fn copy_matching(&mut self, other: &Self) -> Result<usize> {
        let mut copied = 0;
        for src in &other.tensors {
            if let Some(i) = self.index_of(&src.name) {
                let dst = &mut self.tensors[i];
                if dst.shape != src.shape {
                    return Err(Error::Shape {
                        what: "copied tensor",
                        expected: dst.data.len(),
                        got: src.data.len(),
                    });
                }
                dst.data.copy_from_slice(&src.data);
                copied += 1;
            }
        }
        Ok(copied)
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn lookup_by_name_and_duplicate_rejection() {
        let mut w = WeightsHandle::<f32>::new();
        w.push(NamedTensor::zeros("a.weight", vec![2, 3])).unwrap();
        w.push(NamedTensor::zeros("a.bias", vec![2])).unwrap();
        assert_eq!(w.param_count(), 8);
        assert_eq!(w.get("a.bias").unwrap().shape, vec![2]);
        assert!(matches!(w.get("nope"), Err(Error::UnknownParam(_))));
        assert!(w.push(NamedTensor::zeros("a.bias", vec![2])).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut w = WeightsHandle::<f32>::new();
        w.push(NamedTensor::zeros("x", vec![4])).unwrap();
        let before = w.fingerprint();
        w.at_mut(0)[2] = 1.0;
        assert_ne!(before, w.fingerprint());
    }
}
