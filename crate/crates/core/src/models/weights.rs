use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxcore::{Element, Graph, Tensor, Var};

use super::{DiscriminatorConfig, GeneratorConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

/// Named parameters of one network, in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    arch: Architecture,
    params: IndexMap<String, Tensor<f32>>,
}

impl ModelWeights {
    pub(crate) fn empty(arch: Architecture) -> Self {
        ModelWeights {
            arch,
            params: IndexMap::new(),
        }
    }

    pub(crate) fn insert(&mut self, name: String, t: Tensor<f32>) {
        let prev = self.params.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// SHA-256 over the architecture description and every parameter name
    /// and shape. Values do not enter the fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.arch).expect("architecture json"));
        for (name, t) in &self.params {
            h.update(format!("\n{name}:{:?}", t.shape()));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    /// Replace every value from `other`, which must share this fingerprint.
    pub fn load_from(&mut self, other: &ModelWeights) -> Result<()> {
        self.check_compatible(other)?;
        self.params = other.params.clone();
        Ok(())
    }

    pub fn check_compatible(&self, other: &ModelWeights) -> Result<()> {
        if self.fingerprint() != other.fingerprint() {
            return Err(Error::Incompatible(format!(
                "architecture {:?} does not match {:?}",
                other.arch, self.arch
            )));
        }
        Ok(())
    }

    /// Rebuild from named tensors, checking names and shapes against `self`.
    pub fn with_values(&self, values: IndexMap<String, Tensor<f32>>) -> Result<ModelWeights> {
        if values.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "{} tensors supplied for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        let mut out = ModelWeights::empty(self.arch.clone());
        for (name, t) in &self.params {
            let v = values
                .get(name)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter `{name}`")))?;
            if v.shape() != t.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
            out.insert(name.clone(), v.clone());
        }
        Ok(out)
    }

    /// Place every parameter in `g`, trainable or as constants.
    pub fn bind<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), g.leaf(t.cast(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Bind the given pre-placed vars, in parameter order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::config(
                "vars",
                format!("{} vars for {} parameters", vars.len(), self.params.len()),
            ));
        }
        Ok(Bound {
            vars: self.params.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    /// Parameter values cast to another element type, in parameter order.
    pub fn tensors<T: Element>(&self) -> Vec<Tensor<T>> {
        self.params.values().map(Tensor::cast).collect()
    }
}

/// Graph handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(name, "no such parameter"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }
}
