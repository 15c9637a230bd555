//! Named parameter storage and per-pass binding into the graph.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::graph::{Gradients, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Owns every weight of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Panics on a duplicate name, which is
    /// always a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    /// Registers a weight that is bound into the graph as a constant.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, trainable });
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let Some(&j) = other.by_name.get(&p.name) else {
                return invalid("load_params", format!("missing parameter {}", p.name));
            };
            let src = &other.params[j].value;
            if src.shape() != p.value.shape() {
                return invalid(
                    "load_params",
                    format!("{}: shape {:?} vs {:?}", p.name, src.shape(), p.value.shape()),
                );
            }
            p.value = src.clone();
        }
        if other.params.len() != self.params.len() {
            return invalid(
                "load_params",
                format!(
                    "{} stored parameters, model has {}",
                    other.params.len(),
                    self.params.len()
                ),
            );
        }
        Ok(())
    }
}

/// Binds store parameters as graph leaves for one forward/backward pass.
/// Repeated lookups of the same id return the same node.
pub struct Binding<'a> {
    store: &'a ParamStore,
    vars: RefCell<HashMap<usize, Var>>,
    train: bool,
}

impl<'a> Binding<'a> {
    /// Trainable parameters become gradient-tracking leaves.
    pub fn train(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: RefCell::default(),
            train: true,
        }
    }

    /// Every parameter is a constant; no graph is retained.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: RefCell::default(),
            train: false,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars
            .borrow_mut()
            .entry(id.0)
            .or_insert_with(|| {
                let p = &self.store.params[id.0];
                if self.train && p.trainable {
                    Var::leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .clone()
    }

    /// Gradients for every bound trainable parameter that received one.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let vars = self.vars.borrow();
        let mut out: Vec<_> = vars
            .iter()
            .filter_map(|(&i, v)| grads.get(v).map(|g| (ParamId(i), g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
