use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::{NumericsError, Result, Tensor};

/// Handle to a named slot in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, one gradient accumulator per slot and a version
/// counter that increases on every applied update.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    names: Vec<String>,
    index: BTreeMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    version: u64,
}

/// Gradient bundle aligned with the slots of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) slots: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            slots: store.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> &[Tensor] {
        &self.slots
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(Tensor::is_finite)
    }

    /// Flattened view in slot order, matching [`ParameterStore::flat_get`].
    pub fn flat(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: BTreeMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            version: 0,
        }
    }

    /// Registers a slot. Names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter slot {name}"
        );
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        id
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]` scaled by `gain`.
    pub fn add_weight(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.add(name, Tensor::from_vec(&[fan_in, fan_out], data).unwrap())
    }

    pub fn add_bias(&mut self, name: &str, width: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[1, width]))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (slot, t) in self.values.iter().enumerate() {
            if flat < t.len() {
                return (slot, flat);
            }
            flat -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn flat_get(&self, flat: usize) -> f64 {
        let (s, i) = self.locate(flat);
        self.values[s].data()[i]
    }

    pub fn flat_set(&mut self, flat: usize, value: f64) {
        let (s, i) = self.locate(flat);
        self.values[s].data_mut()[i] = value;
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&grads.slots) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// Takes the accumulated gradients out of the store, leaving zeros.
    pub fn take_grads(&mut self) -> Gradients {
        let slots = self
            .grads
            .iter_mut()
            .map(|g| {
                let z = Tensor::zeros(g.shape());
                std::mem::replace(g, z)
            })
            .collect();
        Gradients { slots }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// True when both stores have identical slot names and shapes.
    pub fn same_layout(&self, other: &ParameterStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn save_checkpoint(&self, path: &Path, optimizer: Option<&AdamState>) -> Result<()> {
        let file = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: self.version,
            slots: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, t)| CheckpointSlot {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads values into a store whose layout was already built from the
    /// model configuration. Every slot must match by name and shape.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<Option<AdamState>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))?;
        let file: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported checkpoint format {:?}",
                file.format
            )));
        }
        if file.slots.len() != self.values.len() {
            return Err(NumericsError::Checkpoint(format!(
                "checkpoint has {} slots, model expects {}",
                file.slots.len(),
                self.values.len()
            )));
        }
        let mut staged = Vec::with_capacity(file.slots.len());
        for slot in file.slots {
            let id = self.id(&slot.name).ok_or_else(|| {
                NumericsError::Checkpoint(format!("unknown slot {:?}", slot.name))
            })?;
            if self.values[id.0].shape() != slot.shape.as_slice() {
                return Err(NumericsError::Checkpoint(format!(
                    "slot {:?}: shape {:?} does not match model shape {:?}",
                    slot.name,
                    slot.shape,
                    self.values[id.0].shape()
                )));
            }
            let t = Tensor::from_vec(&slot.shape, slot.values)?;
            if !t.is_finite() {
                return Err(NumericsError::NonFinite("checkpoint"));
            }
            staged.push((id, t));
        }
        for (id, t) in staged {
            self.values[id.0] = t;
        }
        self.version = file.version;
        self.zero_grads();
        Ok(file.optimizer)
    }
}

const CHECKPOINT_FORMAT: &str = "iomnav-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u64,
    slots: Vec<CheckpointSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointSlot {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}
