//! Named parameter storage, deterministic initialization, and the SGD
//! optimizer. Parameters are registered once in a fixed order; that order is
//! the contract for gradient accumulation, checkpoints, and optimizer state.

use crate::autodiff::{Gradients, Graph, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Default, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name; order of calls is significant.
    pub fn add(&mut self, name: &str, value: ArrayD<f64>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    /// He-uniform conv weight `(c_out, c_in, kh, kw)`.
    pub fn add_conv_weight(
        &mut self,
        name: &str,
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = (6.0 / (c_in * kh * kw) as f64).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[c_out, c_in, kh, kw]), |_| {
            rng.random_range(-limit..limit)
        });
        self.add(name, w)
    }

    /// Conv weight drawn small (uniform in `±scale`) for prediction heads.
    pub fn add_conv_weight_scaled(
        &mut self,
        name: &str,
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let w = ArrayD::from_shape_fn(IxDyn(&[c_out, c_in, kh, kw]), |_| {
            rng.random_range(-scale..scale)
        });
        self.add(name, w)
    }

    /// Constant-filled bias (or any 1-D tensor).
    pub fn add_bias(&mut self, name: &str, len: usize, fill: f64) -> ParamId {
        self.add(name, ArrayD::from_elem(IxDyn(&[len]), fill))
    }

    /// 0-dim scalar parameter.
    pub fn add_scalar(&mut self, name: &str, v: f64) -> ParamId {
        self.add(name, ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    /// Insert every parameter into a graph as a differentiable leaf, in order.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            vars: self.values.iter().map(|v| g.leaf(v.clone())).collect(),
        }
    }

    /// Squared L2 norm over all parameters (diagnostics).
    pub fn sq_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Per-graph bindings of every parameter, indexable by [`ParamId`].
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Accumulate this graph's gradients into a parameter-ordered buffer.
    pub fn accumulate_grads(&self, params: &ParamSet, grads: &Gradients, into: &mut GradBuffer) {
        for (i, var) in self.vars.iter().enumerate() {
            if let Some(g) = grads.get(*var) {
                match &mut into.grads[i] {
                    Some(acc) => *acc += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        debug_assert_eq!(params.len(), self.vars.len());
    }
}

/// Gradient accumulator aligned with a [`ParamSet`].
pub struct GradBuffer {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl GradBuffer {
    pub fn new(params: &ParamSet) -> Self {
        GradBuffer {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Global L2 norm over all accumulated gradients.
    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// SGD with momentum and decoupled weight decay:
/// `v <- momentum*v + g`, `theta <- theta*(1 - lr*wd) - lr*v`.
///
/// Decay multiplies the parameter directly, so a parameter with zero data
/// gradient shrinks geometrically by `(1 - lr*wd)` per step.
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, params: &ParamSet) -> Self {
        SgdMomentum {
            lr,
            momentum,
            weight_decay,
            velocity: (0..params.len())
                .map(|i| ArrayD::zeros(params.value(ParamId(i)).raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBuffer) {
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..self.velocity.len() {
            let id = ParamId(i);
            if let Some(g) = grads.get(id) {
                let v = &mut self.velocity[i];
                v.mapv_inplace(|x| x * self.momentum);
                *v += g;
            } else {
                self.velocity[i].mapv_inplace(|x| x * self.momentum);
            }
            let v = &self.velocity[i];
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(v).for_each(|pe, &ve| {
                *pe = *pe * decay - self.lr * ve;
            });
        }
    }

    pub fn velocity(&self, id: ParamId) -> &ArrayD<f64> {
        &self.velocity[id.0]
    }

    pub fn velocity_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.velocity[id.0]
    }
}
