//! Named parameter tensors shared by the learned models.

use rand::Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::learned::tape::{Tape, Tensor, Var};
use crate::rng;

/// Ordered collection of named parameter tensors. Order is the
/// serialization and optimizer-state order, so it must stay stable.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.entries.iter().any(|(n, _)| n == name),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().flat_map(|(_, t)| &t.data).map(|v| v * v).sum()
    }

    /// Register every parameter on a tape; `requires` turns gradients on.
    pub fn leaf_all(&self, tape: &mut Tape, requires: bool) -> ParamVars {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), requires)))
                .collect(),
        }
    }

    /// Collect gradients off a tape in store order (zeros where absent).
    pub fn grads(&self, tape: &Tape, vars: &ParamVars) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .map(|(n, t)| match tape.grad(vars.get(n)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    }

    /// Serialize as container arrays under `params/<name>`.
    pub fn store(&self, c: &mut Container) -> Result<()> {
        for (name, t) in &self.entries {
            c.push_f64(&format!("params/{name}"), &t.shape, t.data.clone())?;
        }
        Ok(())
    }

    /// Load values back into an identically structured store.
    pub fn load(&mut self, c: &Container) -> Result<()> {
        for (name, t) in &mut self.entries {
            let (shape, data) = c.get_f64(&format!("params/{name}"))?;
            if shape != t.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name}: stored shape {shape:?} vs expected {:?}",
                    t.shape
                )));
            }
            t.data.copy_from_slice(data);
        }
        Ok(())
    }
}

/// Tape handles of registered parameters.
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} not on tape"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Xavier-uniform tensor keyed by a seed path.
pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64, ids: &[u64]) -> Tensor {
    let mut rng = rng::stream(seed, ids);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect())
}
