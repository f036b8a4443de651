//! Named parameter storage shared by the layers and the model.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SplitRng};
use crate::tensor::{Graph, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Initialization rule for one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, std) truncated at two standard deviations.
    TruncNormal(f32),
    /// Truncated normal with std `gain / sqrt(fan_in)`, where the fan-in is
    /// the leading extent for matrices and the trailing one for rank-1 and
    /// kernel tensors (see [`fan_in`]).
    FanIn(f32),
    Const(f32),
    /// Softplus-inverse of a step size drawn log-uniformly from `[min, max]`.
    InvSoftplusLogUniform { min: f32, max: f32 },
    /// `ln(u)` with `u` uniform in `[lo, hi]`.
    LogUniform { lo: f32, hi: f32 },
}

impl Init {
    fn draw(self, rng: &mut ChaCha8Rng, fan_in: usize) -> f32 {
        match self {
            Init::TruncNormal(std) => rng::trunc_normal(rng, std),
            Init::FanIn(gain) => rng::trunc_normal(rng, gain / (fan_in.max(1) as f32).sqrt()),
            Init::Const(v) => v,
            Init::InvSoftplusLogUniform { min, max } => {
                let u = rng::uniform(rng, min.ln(), max.ln());
                let dt = u.exp();
                // softplus^-1(dt) = dt + ln(1 - e^-dt)
                dt + (-(-dt).exp_m1()).ln()
            }
            Init::LogUniform { lo, hi } => rng::uniform(rng, lo, hi).ln(),
        }
    }
}

/// Inputs feeding one output unit: rows of a `[in, out]` matrix.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [n] => *n,
        [rows, _] => *rows,
        _ => shape.iter().skip(1).product(),
    }
}

/// Ordered collection of named parameter tensors.
///
/// A store built with [`ParamStore::shapes_only`] records names and shapes
/// without allocating values, which is how parameter counts of the large
/// presets are computed.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    tensors: Vec<Tensor>,
    rng: Option<ChaCha8Rng>,
}

impl ParamStore {
    /// A store that allocates and initializes values from `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            tensors: Vec::new(),
            rng: Some(SplitRng::stream(seed, 0)),
        }
    }

    pub fn shapes_only() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            tensors: Vec::new(),
            rng: None,
        }
    }

    pub fn is_materialized(&self) -> bool {
        self.rng.is_some()
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        if let Some(rng) = self.rng.as_mut() {
            let fan = fan_in(shape);
            let t = Tensor::from_fn(shape, |_| init.draw(rng, fan)).with_grad();
            self.tensors.push(t);
        }
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn numel(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Replaces every value, checking names and shapes against the
    /// declared layout.
    pub fn load(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.names.len() {
            return Err(Error::ShapeMismatch {
                name: "<parameter count>".into(),
                found: vec![named.len()],
                expected: vec![self.names.len()],
            });
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want_name, want_shape)) in
            named.into_iter().zip(self.names.iter().zip(&self.shapes))
        {
            if &name != want_name || t.shape() != &want_shape[..] {
                return Err(Error::ShapeMismatch {
                    name,
                    found: t.shape().to_vec(),
                    expected: want_shape.clone(),
                });
            }
            tensors.push(t.with_grad());
        }
        self.tensors = tensors;
        if self.rng.is_none() {
            self.rng = Some(SplitRng::stream(0, 0));
        }
        Ok(())
    }

    /// Records every parameter as a gradient-carrying leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        assert!(self.is_materialized(), "bind() on a shapes-only store");
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone())).collect())
    }

    /// Records every parameter as a constant (forward-only evaluation).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        assert!(self.is_materialized(), "bind() on a shapes-only store");
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    /// Adds the graph gradients of bound leaves into the parameter slots.
    pub fn absorb_grads(&mut self, g: &Graph, bound: &Bound) {
        for (t, v) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(gr) = g.grad(*v) {
                t.accumulate_grad(gr);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// L2 norm of all parameter gradients taken together.
    pub fn grad_norm(&self) -> f32 {
        let sq: f64 = self
            .tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter().map(|&v| (v as f64) * (v as f64)))
            .sum();
        sq.sqrt() as f32
    }

    /// `p -= lr * grad` for every parameter with a gradient.
    pub fn sgd_step(&mut self, lr: f32) {
        for t in &mut self.tensors {
            let Some(gr) = t.grad().map(<[f32]>::to_vec) else {
                continue;
            };
            t.data_mut().iter_mut().zip(gr).for_each(|(p, g)| *p -= lr * g);
        }
    }
}

/// Graph handles for each parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_only_counts_without_allocating() {
        let mut s = ParamStore::shapes_only();
        s.declare("w", &[1000, 1000], Init::TruncNormal(0.02));
        assert_eq!(s.numel(), 1_000_000);
        assert!(s.tensors().is_empty());
    }

    #[test]
    fn dt_bias_init_lands_in_range() {
        let mut s = ParamStore::new(5);
        let id = s.declare(
            "dt",
            &[256],
            Init::InvSoftplusLogUniform {
                min: 1e-3,
                max: 1e-1,
            },
        );
        for &b in s.get(id).data() {
            let dt = (b as f64).exp().ln_1p();
            assert!((0.99e-3..=1.01e-1).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn same_seed_same_values() {
        let mk = || {
            let mut s = ParamStore::new(9);
            s.declare("a", &[8], Init::TruncNormal(0.02));
            s.declare("b", &[3], Init::LogUniform { lo: 1.0, hi: 16.0 });
            s
        };
        assert_eq!(mk().tensors(), mk().tensors());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut s = ParamStore::new(0);
        let id = s.declare("w", &[2], Init::Const(1.0));
        s.get_mut(id).accumulate_grad(&[1.0, -2.0]);
        s.sgd_step(0.5);
        assert_eq!(s.get(id).data(), &[0.5, 2.0]);
    }
}
