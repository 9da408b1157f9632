//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle to a row-major buffer plus an optional
//! gradient buffer. Operations live on a [`Tape`]: running an op through a
//! recording tape computes the forward value eagerly and pushes a backward
//! closure. [`Tape::backward`] replays the closures in reverse execution
//! order and accumulates gradients into every `requires_grad` ancestor.
//!
//! Element type is chosen at construction via the [`Scalar`] parameter:
//! `f32` for training, `f64` for gradient verification. Repeated `backward`
//! calls without [`Tensor::zero_grad`] accumulate into leaf gradients.

mod ops;

use std::cell::{Ref, RefCell, RefMut};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::rc::Rc;

/// Floating-point element type for tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    /// Gauss error function.
    fn erf(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn neg_infinity() -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn max(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f32::min(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
}

struct Storage<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Shared handle to a dense row-major tensor. Cloning clones the handle,
/// not the buffer; parameters stay alive across tapes this way.
pub struct Tensor<T: Scalar> {
    inner: Rc<RefCell<Storage<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &s.shape)
            .field("requires_grad", &s.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    /// Constant tensor (no gradient participation).
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape, data, false)
    }

    /// Trainable tensor: gradients accumulate into it during `backward`.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape, data, true)
    }

    fn build(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor: shape {:?} implies {} elements, data has {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            inner: Rc::new(RefCell::new(Storage {
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: None,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![T::ZERO; numel])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::new(&[1], vec![value])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.borrow(), |s| s.data.as_slice())
    }

    pub fn data_mut(&self) -> RefMut<'_, [T]> {
        RefMut::map(self.inner.borrow_mut(), |s| s.data.as_mut_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let s = self.inner.borrow();
        assert_eq!(
            s.data.len(),
            1,
            "item: tensor has shape {:?}, expected a single element",
            s.shape
        );
        s.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    /// Drop any accumulated gradient. Callers reset between optimizer steps.
    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn accumulate_grad(&self, contribution: &[T]) {
        let mut s = self.inner.borrow_mut();
        debug_assert_eq!(s.data.len(), contribution.len());
        match &mut s.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += *ci;
                }
            }
            None => s.grad = Some(contribution.to_vec()),
        }
    }

    /// Replace the buffer contents (shape unchanged). Used by optimizers
    /// and checkpoint loading.
    pub fn copy_from(&self, values: &[T]) {
        let mut s = self.inner.borrow_mut();
        assert_eq!(
            s.data.len(),
            values.len(),
            "copy_from: tensor has {} elements, source has {}",
            s.data.len(),
            values.len()
        );
        s.data.copy_from_slice(values);
    }

    /// Detached copy of this tensor's values as a fresh constant.
    pub fn detach(&self) -> Tensor<T> {
        let s = self.inner.borrow();
        Tensor::new(&s.shape, s.data.clone())
    }

    /// True when both handles point at the same buffer.
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

struct Entry<T: Scalar> {
    out: Tensor<T>,
    back: Box<dyn Fn(&[T])>,
}

/// Records executed primitives for one forward pass. Single-threaded:
/// one tape per training step (or per worker in data-parallel evaluation).
pub struct Tape<T: Scalar> {
    entries: RefCell<Vec<Entry<T>>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Keep large transient buffers on the heap instead of cycling them
/// through mmap/munmap; tape-heavy passes allocate hundreds of
/// megabyte-sized vectors per second and page faults dominate otherwise.
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 64 << 20);
    });
}

impl<T: Scalar> Tape<T> {
    /// Recording tape for training.
    pub fn new() -> Self {
        tune_allocator();
        Tape {
            entries: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// Non-recording tape: forward values only, outputs are constants.
    pub fn inference() -> Self {
        tune_allocator();
        Tape {
            entries: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.borrow().is_empty()
    }

    /// Create an op output and push its backward closure when the tape is
    /// recording and any input participates in gradients.
    fn emit(
        &self,
        shape: &[usize],
        data: Vec<T>,
        participates: bool,
        back: impl Fn(&[T]) + 'static,
    ) -> Tensor<T> {
        let tracked = self.recording && participates;
        let out = Tensor::build(shape, data, tracked);
        if tracked {
            self.entries.borrow_mut().push(Entry {
                out: out.clone(),
                back: Box::new(back),
            });
        }
        out
    }

    /// Reverse pass from a scalar loss. Gradients of tape intermediates are
    /// transient (reset at the start of every call); leaf gradients
    /// accumulate across calls until explicitly reset.
    pub fn backward(&self, loss: &Tensor<T>) {
        assert_eq!(
            loss.numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            loss.shape()
        );
        let entries = self.entries.borrow();
        for e in entries.iter() {
            e.out.inner.borrow_mut().grad = None;
        }
        if loss.requires_grad() {
            loss.inner.borrow_mut().grad = Some(vec![T::ONE]);
        }
        for e in entries.iter().rev() {
            // Holding this borrow across the closure is fine: closures only
            // touch their op's inputs, and no op outputs its own input.
            let s = e.out.inner.borrow();
            if let Some(g) = s.grad.as_ref() {
                (e.back)(g);
            }
        }
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}
