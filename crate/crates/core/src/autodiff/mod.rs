//! Reverse-mode differentiation over small dense real tensors.
//!
//! A [`Tape`] records each primitive application together with a backward
//! closure. Nodes are appended in evaluation order, so walking the tape
//! backwards visits them in reverse topological order. Complex quantities
//! travel as pairs of real channels (`[B, 2, H, W]` images, `[N, 2]`
//! sample lists).

mod conv;
mod coords;
mod ops;
mod physics;

pub use coords::WarpOutput;
pub use ops::{CHARBONNIER_EPS, LEAKY_SLOPE};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

pub const MAX_AXES: usize = 4;

/// Dense row-major tensor with at most four axes. A zero-axis tensor is a
/// scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > MAX_AXES {
            return shape_err(format!("tensor with {} axes exceeds the limit of {MAX_AXES}", shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        assert!(shape.len() <= MAX_AXES);
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "gradient shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Receives the tape (for parent values), the upstream gradient, and which
/// parents need a gradient; returns one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tape<T>, &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if let Some(i) = value.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{op} produced a non-finite value at flat index {i} (output shape {:?})",
                value.shape
            )));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward = requires_grad.then_some(backward);
        self.nodes.push(Node { value, requires_grad, parents, backward });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Gradients of a one-element `loss` with respect to every leaf that
    /// requires a gradient. Leaves the graph never reaches get no entry
    /// (see [`Gradients::get_or_zeros`]).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return shape_err(format!("backward needs a scalar loss, got shape {:?}", root.value.shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&root.value.shape, T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(upstream) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let parent_grads = backward(self, &upstream, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else { continue };
                assert_eq!(g.shape, self.nodes[p.0].value.shape, "backward of node {i} returned a mis-shaped gradient");
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.backward.is_some() || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    #[cfg(test)]
    pub(crate) fn from_vec(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// The gradient, or zeros shaped like the leaf when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

/// Worst disagreement found by [`gradcheck`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Input and flat element where the worst error occurred.
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative errors are `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR * max|a|)`;
/// the floor keeps entries that are negligible next to the largest
/// gradient component from dominating through round-off.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)` for every element of
/// every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return crate::error::invalid("gradcheck eps must be positive");
    }
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
    let scale = analytic.iter().flat_map(|g| g.data.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (GRADCHECK_FLOOR * scale).max(1e-300);
    let mut report = GradcheckReport { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work = inputs.to_vec();
    for (i, g) in analytic.iter().enumerate() {
        for k in 0..inputs[i].len() {
            let orig = work[i].data[k];
            work[i].data[k] = orig + eps;
            let fp = eval(&work)?;
            work[i].data[k] = orig - eps;
            let fm = eval(&work)?;
            work[i].data[k] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = g.data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report = GradcheckReport { max_rel_error: rel, input: i, index: k, analytic: a, numeric, checked: report.checked };
            }
        }
    }
    Ok(report)
}
