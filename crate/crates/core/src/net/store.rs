use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Handle to one named parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a named group of parameters sharing one `trainable` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: GroupId,
    pub shape: Vec<usize>,
}

/// Named real arrays with parallel gradient buffers.
///
/// Parameters keep their insertion order, which is also the order in which
/// they are serialized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    groups: Vec<ParamGroup>,
    info: Vec<ParamInfo>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

/// Read-only view of every parameter value.
#[derive(Debug, Clone, Copy)]
pub struct Values<'a>(&'a [Vec<f64>]);

impl<'a> Values<'a> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &'a [f64] {
        &self.0[id.0]
    }
}

/// Mutable view of every gradient buffer.
#[derive(Debug)]
pub struct Grads<'a>(&'a mut [Vec<f64>]);

impl Grads<'_> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_group(&mut self, name: impl Into<String>) -> Result<GroupId> {
        let name = name.into();
        if self.group(&name).is_some() {
            return Err(Error::Duplicate(name));
        }
        self.groups.push(ParamGroup {
            name,
            trainable: true,
        });
        Ok(GroupId(self.groups.len() - 1))
    }

    pub fn group(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|g| g.name == name).map(GroupId)
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group_info(&self, id: GroupId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn set_trainable(&mut self, group: GroupId, trainable: bool) {
        self.groups[group.0].trainable = trainable;
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for g in &mut self.groups {
            g.trainable = trainable;
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.groups[self.info[id.0].group.0].trainable
    }

    /// Registers a zero-initialized parameter.
    pub fn add_param(&mut self, group: GroupId, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Duplicate(name));
        }
        let len = shape.iter().product();
        self.info.push(ParamInfo {
            name,
            group,
            shape: shape.to_vec(),
        });
        self.values.push(vec![0.0; len]);
        self.grads.push(vec![0.0; len]);
        Ok(ParamId(self.info.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.info.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.info.len()).map(ParamId)
    }

    pub fn ids_in_group(&self, group: GroupId) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |id| self.info[id.0].group == group)
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.info[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    /// Mutable value together with its gradient.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    pub fn values(&self) -> Values<'_> {
        Values(&self.values)
    }

    /// Splits the store into a value view and a gradient view so a backward
    /// pass can read weights while accumulating into their gradients.
    pub fn split(&mut self) -> (Values<'_>, Grads<'_>) {
        (Values(&self.values), Grads(&mut self.grads))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Fills a parameter with draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, id: ParamId, fan_in: usize, rng: &mut R) {
        let bound = 1.0 / sqrt(fan_in.max(1) as f64);
        for v in &mut self.values[id.0] {
            *v = rng.random_range(-bound..=bound);
        }
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        let g = s.add_group("core").unwrap();
        s.add_param(g, "w", &[2, 3]).unwrap();
        assert!(matches!(s.add_param(g, "w", &[1]), Err(Error::Duplicate(_))));
        assert!(matches!(s.add_group("core"), Err(Error::Duplicate(_))));
    }

    #[test]
    fn gradient_shape_follows_value_shape() {
        let mut s = ParameterStore::new();
        let g = s.add_group("core").unwrap();
        let id = s.add_param(g, "w", &[4, 5]).unwrap();
        assert_eq!(s.value(id).len(), 20);
        assert_eq!(s.grad(id).len(), 20);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut s = ParameterStore::new();
        let g = s.add_group("core").unwrap();
        let id = s.add_param(g, "w", &[100]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        s.init_uniform(id, 16, &mut rng);
        assert!(s.value(id).iter().all(|v| v.abs() <= 0.25));
        assert!(s.value(id).iter().any(|v| *v != 0.0));
    }
}
