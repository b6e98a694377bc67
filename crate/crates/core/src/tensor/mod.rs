//! Dense f64 tensors with a reverse-mode tape.
//!
//! Tensors are 2-D (scalars are 1x1, row vectors 1xd). A [`Tape`] records
//! every operation applied through it; [`Tape::backward`] replays the
//! records in reverse and accumulates gradients into each tensor that
//! requires them. Tapes and the tensors they touch are single-threaded by
//! design; independent training trials run on independent tapes.
//!
//! Shape violations panic with a message naming the operation and both
//! shapes — after configuration validation they are programming errors, not
//! recoverable conditions.

mod adam;
pub mod gradcheck;
mod tape;

pub use adam::Adam;
pub use tape::Tape;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

struct Inner {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Leaf parameter: gradients are retained for the optimizer.
    requires_grad: bool,
    /// True when this tensor is a parameter or depends on one; backward
    /// skips branches where it is false.
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Shared handle to a dense row-major matrix of f64.
///
/// Cloning is cheap (reference count); all clones see the same values and
/// gradient. Parameters are ordinary tensors created with
/// [`Tensor::param`].
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl Tensor {
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        assert!(
            rows > 0 && cols > 0,
            "tensor: shape [{rows}, {cols}] has a zero dimension"
        );
        assert_eq!(
            values.len(),
            rows * cols,
            "tensor: {} values do not fill shape [{rows}, {cols}]",
            values.len()
        );
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                rows,
                cols,
                values,
                requires_grad: false,
                needs_grad: false,
                grad: None,
            })),
        }
    }

    /// Row vector (1 x d).
    pub fn vector(values: Vec<f64>) -> Tensor {
        let d = values.len();
        Tensor::matrix(1, d, values)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::matrix(1, 1, vec![value])
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Tensor::matrix(rows, cols, values)
    }

    /// Leaf parameter: marked to retain gradients across backward passes.
    pub fn param(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        let t = Tensor::matrix(rows, cols, values);
        {
            let mut inner = t.inner.borrow_mut();
            inner.requires_grad = true;
            inner.needs_grad = true;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().cols
    }

    pub fn shape(&self) -> (usize, usize) {
        let inner = self.inner.borrow();
        (inner.rows, inner.cols)
    }

    pub fn len(&self) -> usize {
        let inner = self.inner.borrow();
        inner.rows * inner.cols
    }

    pub fn is_empty(&self) -> bool {
        false // zero dimensions are rejected at construction
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.borrow().needs_grad
    }

    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |inner| inner.values.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        let inner = self.inner.borrow();
        assert!(i < inner.rows && j < inner.cols);
        inner.values[i * inner.cols + j]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert!(
            inner.rows == 1 && inner.cols == 1,
            "item: tensor has shape [{}, {}], expected [1, 1]",
            inner.rows,
            inner.cols
        );
        inner.values[0]
    }

    /// Overwrite values in place, keeping the shape. Used by the optimizer
    /// and by checkpoint restore.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            values.len(),
            inner.values.len(),
            "set_values: {} values for shape [{}, {}]",
            values.len(),
            inner.rows,
            inner.cols
        );
        inner.values.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().values.iter().all(|v| v.is_finite())
    }

    /// Handle identity (same underlying storage).
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.values.len();
        debug_assert_eq!(delta.len(), n);
        match inner.grad.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    pub(crate) fn seed_grad_one(&self) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.values.len(), 1);
        inner.grad = Some(vec![1.0]);
    }

    pub(crate) fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow_mut().grad.take()
    }

    pub(crate) fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    pub(crate) fn apply_update(&self, f: impl FnMut(&mut f64)) {
        self.inner.borrow_mut().values.iter_mut().for_each(f);
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &[inner.rows, inner.cols])
            .field("requires_grad", &inner.requires_grad)
            .field("values", &inner.values)
            .finish()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax: empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the k largest entries, ties broken toward the lowest index.
/// The returned indices are sorted ascending so row selections preserve the
/// original node order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    assert!(
        k >= 1 && k <= scores.len(),
        "top_k_indices: k = {k} out of range for {} scores",
        scores.len()
    );
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort by descending score keeps equal scores in index order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_and_accessors() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.shape(), (2, 3));
        assert_eq!(t.at(1, 2), 6.0);
        assert_eq!(t.len(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    #[should_panic(expected = "do not fill shape")]
    fn wrong_value_count_panics() {
        let _ = Tensor::matrix(2, 2, vec![1.0]);
    }

    #[test]
    #[should_panic(expected = "zero dimension")]
    fn zero_dimension_panics() {
        let _ = Tensor::matrix(0, 3, vec![]);
    }

    #[test]
    fn params_retain_grad_flags() {
        let p = Tensor::param(1, 2, vec![0.5, -0.5]);
        assert!(p.requires_grad());
        assert!(p.needs_grad());
    }

    #[test]
    fn grad_accumulates_additively() {
        let t = Tensor::param(1, 3, vec![0.0; 3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn top_k_ties_prefer_low_index_and_sorted_output() {
        // three-way tie at 2.0: indices 1, 3 win over 4
        let idx = top_k_indices(&[0.0, 2.0, 1.0, 2.0, 2.0], 2);
        assert_eq!(idx, vec![1, 3]);
        let idx = top_k_indices(&[3.0, 1.0, 2.0], 3);
        assert_eq!(idx, vec![0, 1, 2]);
    }
}
