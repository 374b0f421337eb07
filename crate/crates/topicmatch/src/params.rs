//! Named parameter store.
//!
//! Values live in f32 (the checkpoint precision) and are widened to f64 when
//! bound onto a graph. Optimizer updates round back to f32, so a run that is
//! saved and resumed continues bit-for-bit.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Tensor, Var};
use crate::rng::{fnv1a64_bytes, stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

/// How a freshly registered tensor is filled.
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Kaiming-style normal for convolutions and linear maps.
    FanIn(usize),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        seed: u64,
        trainable: bool,
    ) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter '{name}'");
        let n: usize = shape.iter().product();
        // Draws keyed by the name, not registration order, so adding a layer
        // elsewhere does not silently reshuffle every other init.
        let mut rng = stream(seed, &[tag::INIT, fnv1a64_bytes(name.as_bytes())]);
        let values: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(sd) => {
                let dist = Normal::new(0.0, sd).unwrap();
                (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
            }
            Init::FanIn(fan_in) => {
                let sd = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, sd).unwrap();
                (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
            }
        };
        let id = ParamId(self.entries.len());
        self.index.insert(name.to_string(), id.0);
        self.entries.push(ParamEntry { name: name.to_string(), shape, values, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).map(ParamId).collect()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        let e = &self.entries[id.0];
        Tensor::new(e.shape.clone(), e.values.iter().map(|&v| v as f64).collect())
    }

    pub fn values_f64(&self, id: ParamId) -> Vec<f64> {
        self.entries[id.0].values.iter().map(|&v| v as f64).collect()
    }

    pub fn set_values_f32(&mut self, id: ParamId, values: Vec<f32>) {
        assert_eq!(values.len(), self.entries[id.0].values.len());
        self.entries[id.0].values = values;
    }

    /// Overwrite from f64 data, rounding to f32.
    pub fn set_values_rounded(&mut self, id: ParamId, values: &[f64]) {
        assert_eq!(values.len(), self.entries[id.0].values.len());
        self.entries[id.0].values = values.iter().map(|&v| v as f32).collect();
    }

    /// Bind every trainable parameter onto a graph as a differentiable leaf.
    pub fn bind(&self, g: &Graph) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    Some(g.leaf(
                        Tensor::new(e.shape.clone(), e.values.iter().map(|&v| v as f64).collect()),
                        true,
                    ))
                } else {
                    None
                }
            })
            .collect();
        Binding { vars }
    }

    /// Bind every parameter as a constant except `target`, which maps to the
    /// caller's var. Lets a gradient check treat one tensor as the input of
    /// the whole pipeline.
    pub fn bind_with_substitute(&self, g: &Graph, target: ParamId, var: Var) -> Binding {
        let vars = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if !e.trainable {
                    None
                } else if i == target.0 {
                    Some(var)
                } else {
                    Some(g.constant(Tensor::new(
                        e.shape.clone(),
                        e.values.iter().map(|&v| v as f64).collect(),
                    )))
                }
            })
            .collect();
        Binding { vars }
    }

    /// Bind with gradients disabled (inference).
    pub fn bind_frozen(&self, g: &Graph) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    Some(g.constant(Tensor::new(
                        e.shape.clone(),
                        e.values.iter().map(|&v| v as f64).collect(),
                    )))
                } else {
                    None
                }
            })
            .collect();
        Binding { vars }
    }
}

/// Graph-lifetime view of the store: one leaf per trainable parameter.
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter not bound (non-trainable?)")
    }

    /// Collect the gradients of all trainable parameters after `backward`.
    pub fn gradients(&self, g: &Graph, store: &ParamStore) -> Vec<(ParamId, Tensor)> {
        let mut out = Vec::new();
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(var) = v {
                let id = ParamId(i);
                let grad = g
                    .grad(*var)
                    .unwrap_or_else(|| Tensor::zeros(&store.entry(id).shape));
                out.push((id, grad));
            }
        }
        out
    }
}
