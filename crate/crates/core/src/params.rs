//! Named parameter and buffer storage shared by all layers of a model.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable and subject to weight decay (conv/linear weights).
    Weight,
    /// Trainable without weight decay (biases, norm affine, PLIF `a`).
    NoDecay,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<S>,
}

impl<S: Scalar> ParamEntry<S> {
    pub fn trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar = f32> {
    entries: Vec<ParamEntry<S>>,
}

/// Graph handles for one forward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Option<Var>>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0].expect("trainable parameter is bound")
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, kind, tensor });
        ParamId(self.entries.len() - 1)
    }

    /// Weight drawn from a normal distribution truncated at two standard deviations.
    pub fn add_trunc_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break S::of(v);
                }
            })
            .collect();
        self.add(name, ParamKind::Weight, Tensor::from_vec(shape, data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable())
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Registers every trainable parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<S>, requires_grad: bool) -> Bindings {
        Bindings(
            self.entries
                .iter()
                .map(|e| e.trainable().then(|| g.leaf(e.tensor.clone(), requires_grad)))
                .collect(),
        )
    }

    /// Like [`ParamStore::bind`], but uses the given handles for some ids.
    pub fn bind_with(&self, g: &mut Graph<S>, requires_grad: bool, overrides: &[(ParamId, Var)]) -> Bindings {
        let mut b = self.bind(g, requires_grad);
        for &(id, v) in overrides {
            b.0[id.0] = Some(v);
        }
        b
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }
}
