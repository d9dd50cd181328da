//! Named parameter arrays with matching gradient buffers, plus the
//! versioned checkpoint container.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use varitune_core::SeededRng;

use crate::tensor::Tensor;

/// One named parameter: value, gradient buffer of identical shape, the
/// depth-from-head used by layer-wise learning-rate decay, and whether
/// weight decay applies (matrices yes, biases/gains/log-variances no).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    pub grad_buffer: Option<Tensor>,
    pub depth: u32,
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, depth: u32, decay: bool) -> Param {
        let grad = Tensor::zeros(value.shape.clone());
        Param { value, grad_buffer: Some(grad), depth, decay }
    }
}

// convenience accessors that keep the grad buffer allocated
impl Param {
    pub fn grad(&self) -> &Tensor {
        self.grad_buffer.as_ref().expect("grad buffer present")
    }
    pub fn grad_mut(&mut self) -> &mut Tensor {
        if self.grad_buffer.is_none() {
            self.grad_buffer = Some(Tensor::zeros(self.value.shape.clone()));
        }
        self.grad_buffer.as_mut().expect("grad buffer present")
    }
}

/// Name-sorted parameter store; the deterministic iteration order pins the
/// global-norm clip, the optimizer walk, and serialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn insert(&mut self, name: &str, param: Param) {
        assert!(!self.map.contains_key(name), "duplicate parameter {name}");
        self.map.insert(name.to_string(), param);
    }

    pub fn get(&self, name: &str) -> &Param {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        // ensure the grad buffer exists after deserialization
        let p = self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if p.grad_buffer.is_none() {
            p.grad_buffer = Some(Tensor::zeros(p.value.shape.clone()));
        }
        p
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            match &mut p.grad_buffer {
                Some(g) => g.fill(0.0),
                None => p.grad_buffer = Some(Tensor::zeros(p.value.shape.clone())),
            }
        }
    }

    /// Uniform fan-in initialized weight matrix/filter. `fan_in` is the
    /// receptive size feeding one output unit.
    pub fn init_weight(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        depth: u32,
        rng: &SeededRng,
    ) {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut stream = rng.child_label(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| stream.uniform(-bound, bound)).collect();
        self.insert(name, Param::new(Tensor::new(shape, data), depth, true));
    }

    /// Zero-initialized bias-like parameter (no weight decay).
    pub fn init_zeros(&mut self, name: &str, shape: Vec<usize>, depth: u32) {
        self.insert(name, Param::new(Tensor::zeros(shape), depth, false));
    }

    /// Constant-initialized parameter (no weight decay).
    pub fn init_const(&mut self, name: &str, shape: Vec<usize>, value: f64, depth: u32) {
        let n: usize = shape.iter().product();
        self.insert(
            name,
            Param::new(Tensor::new(shape, vec![value; n]), depth, false),
        );
    }

    /// Small-uniform embedding table.
    pub fn init_embedding(&mut self, name: &str, rows: usize, dim: usize, depth: u32, rng: &SeededRng) {
        let mut stream = rng.child_label(name);
        let data = (0..rows * dim).map(|_| stream.uniform(-0.1, 0.1)).collect();
        self.insert(
            name,
            Param::new(Tensor::new(vec![rows, dim], data), depth, true),
        );
    }

    /// Snapshot of the parameter values only.
    pub fn values_snapshot(&self) -> BTreeMap<String, Tensor> {
        self.map
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    pub fn restore_values(&mut self, snapshot: &BTreeMap<String, Tensor>) {
        for (name, value) in snapshot {
            self.get_mut(name).value = value.clone();
        }
    }
}
