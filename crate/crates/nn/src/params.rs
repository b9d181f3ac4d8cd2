//! Named parameters, per-evaluation gradient buffers and the checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient, same length as `value`.
    pub grad: Vec<f64>,
}

/// Owns every trainable tensor of a network. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        let grad = vec![0.0; value.len()];
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-a..a))
            .collect();
        self.add(name, Tensor::matrix(fan_in, fan_out, data))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|x| *x = v);
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.by_name.get(name).map(|id| &self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds a gradient buffer into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                for (acc, v) in self.params[i].grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint. Every parameter must be present
    /// with a matching shape; extra entries are an error too.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        if ckpt.params.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                ckpt.params.len()
            )));
        }
        for entry in &ckpt.params {
            let id = self.id(&entry.name)?;
            let p = &mut self.params[id.0];
            if p.value.shape() != entry.shape.as_slice() {
                return Err(NnError::Checkpoint(format!(
                    "`{}` has shape {:?}, checkpoint has {:?}",
                    entry.name,
                    p.value.shape(),
                    entry.shape
                )));
            }
            p.value = Tensor::new(entry.shape.clone(), entry.values.clone())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON checkpoint: `{ "version": 1, "params": [{name, shape, values}, ...] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Gradient buffers from one backward pass, indexed by `ParamId`.
///
/// A slot is `None` when the parameter was not reached by the pass; such
/// parameters count as exactly-zero gradient.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Self {
            slots: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn touched(&self, id: ParamId) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub(crate) fn add_into(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// `self += other`, slot by slot.
    pub fn merge(&mut self, other: &Gradients) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.add_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Sums buffers strictly in slice order, so the result does not depend
    /// on how the buffers were produced.
    pub fn sum_ordered(n_params: usize, parts: &[Gradients]) -> Gradients {
        let mut out = Gradients::empty(n_params);
        for p in parts {
            out.merge(p);
        }
        out
    }
}
