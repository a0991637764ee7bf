//! Named parameter and buffer storage shared by models, optimizers and checkpoints.

use std::collections::HashMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried along but never differentiated (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the store; also the index into [`ParamStore::bind`]'s output.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        kind: ParamKind,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(SemError::domain(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, value, kind });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|id| self.entries[id.0].kind == ParamKind::Trainable)
            .collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replace the value of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| SemError::domain(format!("unknown parameter '{name}'")))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(SemError::domain(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Copy every entry whose name also exists in `other`. Returns how many were copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for e in &other.entries {
            if self.by_name.contains_key(&e.name) {
                self.set(&e.name, e.value.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Record every trainable entry on `g`. Buffers map to `None`.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Option<Var>> {
        self.entries
            .iter()
            .map(|e| {
                (e.kind == ParamKind::Trainable).then(|| g.leaf(e.value.clone(), requires_grad))
            })
            .collect()
    }

    /// Trainable tensors paired with their gradients from `g`.
    pub fn trainable_with_grads<'a>(
        &'a mut self,
        g: &'a Graph<T>,
        vars: &[Option<Var>],
    ) -> (Vec<&'a mut Tensor<T>>, Vec<Option<&'a Tensor<T>>>) {
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for (e, v) in self.entries.iter_mut().zip(vars) {
            if e.kind != ParamKind::Trainable {
                continue;
            }
            params.push(&mut e.value);
            grads.push(v.and_then(|v| g.grad(v)));
        }
        (params, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Tensor::zeros([2]), ParamKind::Trainable)
            .unwrap();
        s.add("rm", Tensor::zeros([3]), ParamKind::Buffer).unwrap();
        assert!(s.add("a", Tensor::zeros([1]), ParamKind::Buffer).is_err());
        assert!(s.set("a", Tensor::zeros([3])).is_err());
        assert!(s.set("missing", Tensor::zeros([3])).is_err());
        assert_eq!(s.num_trainable(), 2);
        assert_eq!(s.trainable_ids().len(), 1);
    }

    #[test]
    fn copy_matching_by_name() {
        let mut a = ParamStore::<f64>::new();
        a.add("x", Tensor::zeros([2]), ParamKind::Trainable)
            .unwrap();
        a.add("only_a", Tensor::zeros([1]), ParamKind::Trainable)
            .unwrap();
        let mut b = ParamStore::<f64>::new();
        b.add("x", Tensor::ones([2]), ParamKind::Trainable).unwrap();
        b.add("only_b", Tensor::ones([1]), ParamKind::Trainable)
            .unwrap();
        assert_eq!(a.copy_matching_from(&b).unwrap(), 1);
        assert_eq!(a.by_name("x").unwrap().data(), &[1.0, 1.0]);
    }
}
