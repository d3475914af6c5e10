use std::cell::RefCell;
use std::collections::HashMap;

use crate::{Gradients, Graph, Scalar, Tensor, Var};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = self.tensors.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.lookup.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.lookup.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copies values from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamSet<T>) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        self.tensors.clone_from(&other.tensors);
    }
}

/// Lifts parameters onto a graph on first use, either as tracked leaves
/// (trainable) or as constants (frozen).
pub struct Binder<'a, T: Scalar> {
    graph: Graph<T>,
    params: &'a ParamSet<T>,
    trainable: bool,
    vars: RefCell<Vec<Option<Var<T>>>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(graph: &Graph<T>, params: &'a ParamSet<T>, trainable: bool) -> Self {
        Self {
            graph: graph.clone(),
            params,
            trainable,
            vars: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn frozen(graph: &Graph<T>, params: &'a ParamSet<T>) -> Self {
        Self::new(graph, params, false)
    }

    pub fn trainable(graph: &Graph<T>, params: &'a ParamSet<T>) -> Self {
        Self::new(graph, params, true)
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn var(&self, id: ParamId) -> Var<T> {
        let mut vars = self.vars.borrow_mut();
        if let Some(v) = &vars[id.0] {
            return v.clone();
        }
        let t = self.params.get(id).clone();
        let v = if self.trainable {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        vars[id.0] = Some(v.clone());
        v
    }

    /// Per-parameter gradients in [`ParamSet`] order; zeros for unused ones.
    pub fn grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        let vars = self.vars.borrow();
        self.params
            .tensors()
            .iter()
            .zip(vars.iter())
            .map(|(t, v)| match v {
                Some(v) => grads.get_or_zeros(v),
                None => Tensor::zeros(t.shape()),
            })
            .collect()
    }
}
