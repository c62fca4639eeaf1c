//! Dense row-major tensors with a reverse-mode gradient tape.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations that
//! receive at least one input with `requires_grad` record a backward closure
//! on their output, so the output keeps its inputs alive until it is dropped.
//! [`Tensor::backward`] walks that graph from a scalar and accumulates
//! gradients into the leaf tensors (the model parameters).
//!
//! Every forward op validates shapes and rejects non-finite results.

mod conv;
mod nn;
mod norm;

use std::cell::Cell;
use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub use conv::{conv1d, conv2d};
pub use nn::{
    add, concat, dense, mean_last, mul, mul_channels, narrow, relu, reshape, scale, sigmoid, softmax,
    stats_pool, sum, tanh, STD_VARIANCE_FLOOR,
};
pub(crate) use nn::sigmoid_scalar;
pub use norm::{batch_norm, RunningStats, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};

/// Scalar element type. Implemented for `f32` (training and inference) and
/// `f64` (gradient checking).
pub trait Float:
    num_traits::Float
    + Copy
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = A·B + beta·C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Float for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c (m×n) = op(a) (m×k) · op(b) (k×n)`, added to `c` when `accumulate`.
///
/// `a` is stored `m×k` row-major, or `k×m` when `trans_a`; likewise `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables tape recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        Self { prev }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGradGuard::new();
    f()
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// What a backward closure sees: the op's inputs and output values, the
/// upstream gradient, and which inputs actually need a gradient.
pub(crate) struct Backward<'a, T: Float> {
    pub inputs: &'a [Tensor<T>],
    pub out: &'a [T],
    pub grad: &'a [T],
    pub needs: &'a [bool],
}

pub(crate) type InputGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = dyn Fn(&Backward<'_, T>) -> Result<InputGrads<T>> + Send + Sync;

struct GradFn<T: Float> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    f: Box<BackwardFn<T>>,
}

struct Node<T: Float> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Float>(Arc<Node<T>>);

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape).field("requires_grad", &self.0.requires_grad);
        if let Some(g) = &self.0.grad_fn {
            d.field("op", &g.op);
        }
        if self.0.data.len() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite<T: Float>(data: &[T], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Float> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    fn leaf(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    /// A constant (no gradient is tracked for it).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// A trainable leaf; [`Tensor::backward`] accumulates into its gradient.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel_of(shape)], false, None)
    }

    pub fn scalar(v: T) -> Result<Self> {
        Self::new(&[], vec![v])
    }

    /// Output of an op. Records `backward` only when grad mode is on and
    /// some input requires a gradient.
    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: F,
    ) -> Result<Self>
    where
        F: Fn(&Backward<'_, T>) -> Result<InputGrads<T>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op} produced a mis-sized buffer");
        check_finite(&data, op)?;
        let requires_grad = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            f: Box::new(backward),
        });
        Ok(Self::build(shape, data, requires_grad, grad_fn))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, if it was recorded.
    pub fn op(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!("item() on shape {:?}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Value copy converted to another element type, without gradient tracking.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::build(
            self.0.shape.clone(),
            self.0.data.iter().map(|v| U::of(v.as_f64())).collect(),
            false,
            None,
        )
    }

    /// Accumulated gradient of a leaf, if any has been produced.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Nodes reachable through tracked edges, children before parents.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for inp in &gf.inputs {
                    if inp.requires_grad() && !visited.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Backpropagates from this scalar, adding `∂self/∂leaf` into every
    /// reachable leaf that requires a gradient. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "backward on a tensor that is not connected to any parameter".into(),
            ));
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let Some(gf) = &node.0.grad_fn else {
                node.accumulate_grad(&g);
                continue;
            };
            let needs: Vec<bool> = gf.inputs.iter().map(|t| t.requires_grad()).collect();
            let input_grads = (gf.f)(&Backward {
                inputs: &gf.inputs,
                out: &node.0.data,
                grad: &g,
                needs: &needs,
            })?;
            for ((inp, ig), &need) in gf.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(ig) = ig else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(ig.len(), inp.numel(), "{} returned a mis-sized gradient", gf.op);
                match grads.entry(inp.id()) {
                    Entry::Occupied(mut e) => {
                        e.get_mut().iter_mut().zip(&ig).for_each(|(a, &b)| *a += b)
                    }
                    Entry::Vacant(e) => {
                        e.insert(ig);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_input() {
        let w = Tensor::<f64>::parameter(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = sum(&mul(&w, &x).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(x.grad().is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::parameter(&[2], vec![1.5, -0.5]).unwrap();
        let loss = sum(&mul(&w, &w).unwrap()).unwrap();
        loss.backward().unwrap();
        let once = w.grad().unwrap();
        loss.backward().unwrap();
        let twice = w.grad().unwrap();
        assert_eq!(twice, once.iter().map(|g| g * 2.0).collect::<Vec<_>>());
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_usage_errors() {
        let w = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(scale(&w, 2.0).unwrap().backward(), Err(Error::Usage(_))));
        let c = Tensor::<f32>::scalar(1.0).unwrap();
        assert!(matches!(c.backward(), Err(Error::Usage(_))));
        let detached = sum(&w).unwrap().detach();
        assert!(matches!(detached.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn no_grad_skips_the_tape() {
        let w = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| sum(&w).unwrap());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        let w = Tensor::<f64>::parameter(&[1], vec![3.0]).unwrap();
        let a = scale(&w, 2.0).unwrap();
        let b = mul(&w, &w).unwrap();
        let loss = sum(&add(&a, &b).unwrap()).unwrap();
        loss.backward().unwrap();
        // d/dw (2w + w^2) = 2 + 2w
        assert_eq!(w.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::<f32>::new(&[1], vec![f32::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }
}
