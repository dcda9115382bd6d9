//! Named parameter storage and the Adam update rule.

use super::{Arr, Tape, Var};
use ndarray::{Array2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::collections::BTreeMap;

/// Flat name -> array map holding every learnable parameter.
///
/// Iteration order is the lexicographic name order, which keeps optimizer
/// updates and checkpoints deterministic.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Arr>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Arr) {
        let prev = self.entries.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name: {name}");
    }

    /// Linear weight with fan-in-scaled uniform init, shape `rows x cols`.
    pub fn insert_linear(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (rows as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        let w = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.insert(name, w.into_dyn());
    }

    /// Bias row `1 x cols`, fan-in-scaled uniform like the matching weight.
    pub fn insert_bias(&mut self, name: &str, fan_in: usize, cols: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        let b = Array2::from_shape_fn((1, cols), |_| dist.sample(rng));
        self.insert(name, b.into_dyn());
    }

    /// Unit-normal initialized matrix (used for query embeddings).
    pub fn insert_normal(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, 1.0).unwrap();
        let w = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.insert(name, w.into_dyn());
    }

    pub fn insert_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.insert(name, Arr::from_elem(IxDyn(&[rows, cols]), value));
    }

    /// A single learnable scalar, stored `1 x 1`.
    pub fn insert_scalar(&mut self, name: &str, value: f64) {
        self.insert_const(name, 1, 1, value);
    }

    pub fn get(&self, name: &str) -> &Arr {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Arr {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arr)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }
}

/// Per-tape binding of store parameters to leaf variables, so gradients can
/// be routed back to their names after `backward`.
pub struct ParamBinding {
    bound: Vec<(String, Var)>,
    index: BTreeMap<String, usize>,
}

impl ParamBinding {
    pub fn new() -> Self {
        ParamBinding { bound: Vec::new(), index: BTreeMap::new() }
    }

    /// Leaf for `name`, created on first use and cached afterwards.
    pub fn get(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> Var {
        if let Some(&i) = self.index.get(name) {
            return self.bound[i].1;
        }
        let var = tape.leaf(store.get(name).clone());
        self.index.insert(name.to_string(), self.bound.len());
        self.bound.push((name.to_string(), var));
        var
    }

    /// Accumulated gradients per bound parameter name.
    pub fn gradients(&self, tape: &Tape) -> BTreeMap<String, Arr> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.bound {
            if let Some(g) = tape.grad(*var) {
                out.entry(name.clone())
                    .and_modify(|acc: &mut Arr| *acc += g)
                    .or_insert_with(|| g.clone());
            }
        }
        out
    }
}

impl Default for ParamBinding {
    fn default() -> Self {
        Self::new()
    }
}

/// Adam with optional global-norm gradient clipping.
pub struct AdamOptimizer {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    step: u64,
    moments: BTreeMap<String, (Arr, Arr)>,
}

impl AdamOptimizer {
    pub fn new(lr: f64, grad_clip: f64) -> Self {
        AdamOptimizer {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Arr>) {
        self.step += 1;
        let mut scale = 1.0;
        if self.grad_clip > 0.0 {
            let sq: f64 = grads.values().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
            let norm = sq.sqrt();
            if norm > self.grad_clip {
                scale = self.grad_clip / norm;
            }
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let param = store.get_mut(name);
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Arr::zeros(grad.raw_dim()), Arr::zeros(grad.raw_dim())));
            ndarray::Zip::from(param)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= self.lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }
}
