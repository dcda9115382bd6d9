//! Reverse-mode automatic differentiation over `f64` arrays.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays the recorded closures in reverse to accumulate gradients.
//! Values are dynamic-dimension `ndarray` arrays; almost everything in the
//! model is a 2-D matrix (rows = set elements, columns = channels), with
//! feature maps stored spatial-major as `(h*w) x c`.
//!
//! Tapes built with [`Tape::inference`] skip closure construction entirely,
//! which keeps pure evaluation cheap.

mod ops;
mod params;

pub use ops::GroupedAttention;
pub use params::{AdamOptimizer, ParamBinding, ParamStore};

use ndarray::{ArrayD, IxDyn};

pub type Arr = ArrayD<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Arr, &Arr, &[&Arr]) -> Vec<Arr>>;

struct NodeMeta {
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

pub struct Tape {
    values: Vec<Arr>,
    grads: Vec<Option<Arr>>,
    meta: Vec<NodeMeta>,
    record: bool,
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape { values: Vec::new(), grads: Vec::new(), meta: Vec::new(), record: true }
    }

    /// A tape for pure evaluation; `backward` on it is a no-op.
    pub fn inference() -> Self {
        Tape { values: Vec::new(), grads: Vec::new(), meta: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Insert a leaf node (input or parameter).
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Leaf from a 2-D array.
    pub fn leaf2(&mut self, value: ndarray::Array2<f64>) -> Var {
        self.leaf(value.into_dyn())
    }

    /// Leaf holding a single scalar, shaped `1 x 1`.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Arr::from_elem(IxDyn(&[1, 1]), value))
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.values[v.0]
    }

    /// Value viewed as a 2-D matrix.
    pub fn value2(&self, v: Var) -> ndarray::ArrayView2<'_, f64> {
        self.values[v.0]
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("node value is not 2-D")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1, "scalar_value on non-scalar node");
        *val.iter().next().unwrap()
    }

    pub fn grad(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }

    fn push(&mut self, value: Arr, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.grads.push(None);
        if self.record {
            self.meta.push(NodeMeta { parents, backward });
        } else {
            self.meta.push(NodeMeta { parents: Vec::new(), backward: None });
        }
        Var(id)
    }

    pub(crate) fn push_op(
        &mut self,
        value: Arr,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        if self.record {
            self.push(value, parents, Some(backward))
        } else {
            self.push(value, Vec::new(), None)
        }
    }

    /// Run reverse-mode accumulation from a scalar root.
    ///
    /// Gradients accumulate across calls; reuse a fresh tape per step.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.values[root.0].len(), 1, "backward root must be scalar");
        if !self.record {
            return;
        }
        let seed = Arr::from_elem(self.values[root.0].raw_dim(), 1.0);
        match &mut self.grads[root.0] {
            Some(g) => *g += &seed,
            slot => *slot = Some(seed),
        }
        for i in (0..=root.0).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let meta = &self.meta[i];
            let Some(backward) = meta.backward.as_ref() else { continue };
            let grad_out = self.grads[i].as_ref().unwrap();
            let out_val = &self.values[i];
            let parent_vals: Vec<&Arr> =
                meta.parents.iter().map(|p| &self.values[p.0]).collect();
            let parent_grads = backward(grad_out, out_val, &parent_vals);
            debug_assert_eq!(parent_grads.len(), meta.parents.len());
            let parents: Vec<Var> = meta.parents.clone();
            for (p, g) in parents.into_iter().zip(parent_grads) {
                debug_assert_eq!(
                    g.shape(),
                    self.values[p.0].shape(),
                    "gradient shape mismatch for node {}",
                    p.0
                );
                match &mut self.grads[p.0] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference helpers shared by op-level tests.

    use super::*;

    /// Central-difference check of `f`'s gradient w.r.t. every entry of every
    /// input. `f` must rebuild the graph from the given leaf values and
    /// return the scalar root.
    pub fn check(inputs: &[Arr], f: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let h = 1e-6;
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = f(&mut tape, &vars);
        tape.backward(root);
        let analytic: Vec<Arr> = vars
            .iter()
            .zip(inputs)
            .map(|(v, a)| {
                tape.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Arr::zeros(a.raw_dim()))
            })
            .collect();

        for (i, input) in inputs.iter().enumerate() {
            for idx in 0..input.len() {
                let eval = |delta: f64| -> f64 {
                    let mut perturbed: Vec<Arr> = inputs.to_vec();
                    perturbed[i].as_slice_mut().unwrap()[idx] += delta;
                    let mut t = Tape::inference();
                    let vs: Vec<Var> = perturbed.into_iter().map(|a| t.leaf(a)).collect();
                    let r = f(&mut t, &vs);
                    t.scalar_value(r)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[i].as_slice().unwrap()[idx];
                let denom = a.abs().max(numeric.abs());
                let err = if denom > 1e-6 {
                    (a - numeric).abs() / denom
                } else {
                    (a - numeric).abs()
                };
                assert!(
                    err < tol,
                    "grad mismatch: input {i} entry {idx}: analytic {a}, numeric {numeric}, err {err}"
                );
            }
        }
    }
}
