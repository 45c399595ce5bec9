//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value. Tensors that take part in
//! differentiation carry a reference to the [`Tape`] that recorded them;
//! every operation whose inputs include a tracked tensor appends a record to
//! that tape. [`Tape::backward`] walks the records in reverse creation order,
//! which is a valid reverse topological order because a record can only be
//! appended after the records producing its inputs.
//!
//! Trainable state lives in [`Param`]: a value plus a gradient accumulator.
//! Binding a parameter on a tape produces a leaf whose gradient is summed
//! into the parameter's accumulator on every backward pass until
//! [`Param::zero_grad`] is called. Replacing a parameter's value does not
//! affect tapes recorded earlier, so a second backward pass over an old tape
//! differentiates at the values the forward pass actually saw.

mod element;
pub mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

pub use element::Element;

use crate::error::{Error, Result};

pub(crate) type GradCell<E> = Rc<RefCell<Option<Vec<E>>>>;

/// Gradient rule of one recorded operation: given the gradient of the output
/// and which inputs need a gradient, returns one optional gradient per input.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &[bool]) -> Vec<Option<Vec<E>>>>;

#[derive(Clone)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Rc<Vec<E>>,
    node: Option<Node<E>>,
}

#[derive(Clone)]
struct Node<E: Element> {
    tape: Tape<E>,
    var: usize,
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("full: valid shape")
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn scalar(value: E) -> Self {
        Self::full(vec![1], value)
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| E::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// True when this tensor was recorded on a tape.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape<E>> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Same values, cut from any tape.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Accumulated gradient of a leaf created by [`Tape::watch`] or
    /// [`Tape::param`].
    pub fn grad(&self) -> Option<Vec<E>> {
        let node = self.node.as_ref()?;
        let inner = node.tape.inner.borrow();
        let (_, cell) = inner.sinks.iter().find(|(v, _)| *v == node.var)?;
        let g = cell.borrow();
        g.clone()
    }

    /// Same data under a new shape; gradients pass through unchanged.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        let data = self.data.as_ref().clone();
        record(
            "reshape",
            shape,
            data,
            &[self],
            Box::new(|g: &[E], _| vec![Some(g.to_vec())]),
        )
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<Vec<E>>) -> Self {
        Self {
            shape,
            data,
            node: None,
        }
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<E>> {
        Rc::clone(&self.data)
    }

    fn var(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.var)
    }
}

/// Creates the output tensor of an operation and, when any input is
/// tracked, records the gradient rule on the shared tape.
pub(crate) fn record<E: Element>(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<E>,
    inputs: &[&Tensor<E>],
    backward: BackwardFn<E>,
) -> Result<Tensor<E>> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    let mut out = Tensor::new(shape, data)?;
    let mut tape: Option<&Tape<E>> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match tape {
                None => tape = Some(&n.tape),
                Some(existing) if Rc::ptr_eq(&existing.inner, &n.tape.inner) => {}
                Some(_) => {
                    return Err(Error::Usage(format!(
                        "{op}: inputs recorded on different tapes"
                    )))
                }
            }
        }
    }
    if let Some(tape) = tape {
        let input_vars = inputs.iter().map(|t| t.var()).collect();
        let mut inner = tape.inner.borrow_mut();
        let var = inner.new_var();
        inner.ops.push(Record {
            inputs: input_vars,
            output: var,
            backward,
        });
        drop(inner);
        out.node = Some(Node {
            tape: tape.clone(),
            var,
        });
    }
    Ok(out)
}

struct Record<E: Element> {
    inputs: Vec<Option<usize>>,
    output: usize,
    backward: BackwardFn<E>,
}

struct TapeInner<E: Element> {
    vars: usize,
    sinks: Vec<(usize, GradCell<E>)>,
    ops: Vec<Record<E>>,
}

impl<E: Element> TapeInner<E> {
    fn new_var(&mut self) -> usize {
        self.vars += 1;
        self.vars - 1
    }
}

/// Ordered record of differentiable operations.
#[derive(Clone)]
pub struct Tape<E: Element = f32> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> fmt::Debug for Tape<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("vars", &inner.vars)
            .field("ops", &inner.ops.len())
            .finish()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                vars: 0,
                sinks: Vec::new(),
                ops: Vec::new(),
            })),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `t` as a leaf with its own gradient accumulator.
    pub fn watch(&self, t: &Tensor<E>) -> Tensor<E> {
        self.leaf(t, Rc::new(RefCell::new(None)))
    }

    /// Binds a parameter as a leaf accumulating into the parameter's grad.
    pub fn param(&self, p: &Param<E>) -> Tensor<E> {
        self.leaf(&p.value, Rc::clone(&p.grad))
    }

    fn leaf(&self, t: &Tensor<E>, sink: GradCell<E>) -> Tensor<E> {
        let mut inner = self.inner.borrow_mut();
        let var = inner.new_var();
        inner.sinks.push((var, sink));
        drop(inner);
        Tensor {
            shape: t.shape.clone(),
            data: Rc::clone(&t.data),
            node: Some(Node {
                tape: self.clone(),
                var,
            }),
        }
    }

    fn check_loss(&self, loss: &Tensor<E>) -> Result<usize> {
        if loss.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        match &loss.node {
            Some(n) if Rc::ptr_eq(&n.tape.inner, &self.inner) => Ok(n.var),
            _ => Err(Error::Usage("loss is not recorded on this tape".into())),
        }
    }

    fn propagate(&self, root: usize, seed: E) -> Vec<Option<Vec<E>>> {
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Vec<E>>> = vec![None; inner.vars];
        grads[root] = Some(vec![seed]);
        for rec in inner.ops.iter().rev() {
            if rec.output > root {
                continue;
            }
            let Some(g_out) = grads[rec.output].take() else {
                continue;
            };
            let needs: Vec<bool> = rec.inputs.iter().map(|v| v.is_some()).collect();
            let g_in = (rec.backward)(&g_out, &needs);
            for (var, g) in rec.inputs.iter().zip(g_in) {
                if let (Some(var), Some(g)) = (var, g) {
                    accumulate(&mut grads[*var], g);
                }
            }
            grads[rec.output] = Some(g_out);
        }
        grads
    }

    /// Differentiates a scalar loss and sums the result into every leaf
    /// accumulator reachable from it.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        let root = self.check_loss(loss)?;
        let grads = self.propagate(root, E::one());
        let inner = self.inner.borrow();
        for (var, sink) in &inner.sinks {
            if let Some(g) = &grads[*var] {
                let mut s = sink.borrow_mut();
                match s.as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b),
                    None => *s = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    /// Gradients of a scalar loss with respect to every recorded tensor,
    /// without touching leaf accumulators.
    pub fn gradients(&self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        let root = self.check_loss(loss)?;
        Ok(Gradients {
            tape: self.clone(),
            grads: self.propagate(root, E::one()),
        })
    }
}

fn accumulate<E: Element>(slot: &mut Option<Vec<E>>, g: Vec<E>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
        None => *slot = Some(g),
    }
}

/// Result of [`Tape::gradients`].
pub struct Gradients<E: Element> {
    tape: Tape<E>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient with respect to `t`; `None` when `t` is not on this tape or
    /// the loss does not depend on it.
    pub fn get(&self, t: &Tensor<E>) -> Option<&[E]> {
        let node = t.node.as_ref()?;
        if !Rc::ptr_eq(&node.tape.inner, &self.tape.inner) {
            return None;
        }
        self.grads.get(node.var)?.as_deref()
    }
}

/// Trainable tensor with a persistent gradient accumulator.
pub struct Param<E: Element = f32> {
    value: Tensor<E>,
    grad: GradCell<E>,
}

/// Clones get their own gradient accumulator (a copy of the current one),
/// so a cloned model never shares gradients with its source.
impl<E: Element> Clone for Param<E> {
    fn clone(&self) -> Self {
        Self {
            value: self.value.clone(),
            grad: Rc::new(RefCell::new(self.grad.borrow().clone())),
        }
    }
}

impl<E: Element> fmt::Debug for Param<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Param")
            .field("shape", &self.value.shape)
            .finish()
    }
}

impl<E: Element> Param<E> {
    pub fn new(value: Tensor<E>) -> Self {
        Self {
            value: value.detach(),
            grad: Rc::new(RefCell::new(None)),
        }
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Accumulated gradient, `None` before any backward pass reached it.
    pub fn grad(&self) -> Ref<'_, Option<Vec<E>>> {
        self.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    #[cfg(test)]
    pub(crate) fn set_grad(&self, g: Vec<E>) {
        *self.grad.borrow_mut() = Some(g);
    }

    /// Replaces the value. Shape must match.
    pub fn set_data(&mut self, data: Vec<E>) -> Result<()> {
        if data.len() != self.value.len() {
            return Err(Error::dim(
                "param",
                format!("expected {} values, got {}", self.value.len(), data.len()),
            ));
        }
        self.value = Tensor::from_parts(self.value.shape.clone(), Rc::new(data));
        Ok(())
    }
}
