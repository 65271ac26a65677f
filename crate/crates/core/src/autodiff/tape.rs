//! Wengert tape for reverse-mode differentiation.
//!
//! Every op appends one record holding its inputs, its output and a
//! gradient rule. Records are appended in execution order, so the tape is
//! always topologically sorted and `backward` is a single reverse sweep.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Vector-Jacobian product of one recorded op.
pub trait GradFn<T: Real> {
    fn name(&self) -> &'static str;

    /// Returns one entry per input. Entries for inputs with `needs[i] == false`
    /// may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Record<T: Real> {
    value: Option<Tensor<T>>,
    inputs: Vec<usize>,
    rule: Option<Box<dyn GradFn<T>>>,
    requires_grad: bool,
    leaf: bool,
    grad: Option<Tensor<T>>,
    exact: Option<f64>,
}

pub struct Tape<T: Real = f32> {
    records: RefCell<Vec<Record<T>>>,
    swept: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("records", &self.records.borrow().len())
            .field("swept", &self.swept.get())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            swept: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Record {
            value: Some(value),
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            leaf: true,
            grad: None,
            exact: None,
        })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Appends the result of an op. The rule is dropped when no input needs
    /// a gradient.
    pub fn record(
        &self,
        op: &'static str,
        inputs: &[Var<'_, T>],
        output: Tensor<T>,
        rule: Box<dyn GradFn<T>>,
    ) -> Result<Var<'_, T>> {
        self.record_with_exact(op, inputs, output, rule, None)
    }

    /// Like [`Tape::record`] for scalar reductions whose 64-bit result is
    /// kept alongside the rounded element.
    pub fn record_with_exact(
        &self,
        op: &'static str,
        inputs: &[Var<'_, T>],
        output: Tensor<T>,
        rule: Box<dyn GradFn<T>>,
        exact: Option<f64>,
    ) -> Result<Var<'_, T>> {
        if !output.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let ids: Vec<usize> = inputs
            .iter()
            .map(|v| {
                debug_assert!(std::ptr::eq(v.tape, self), "var from another tape");
                v.id
            })
            .collect();
        let requires_grad = {
            let records = self.records.borrow();
            ids.iter().any(|&i| records[i].requires_grad)
        };
        Ok(self.push(Record {
            value: Some(output),
            inputs: ids,
            rule: requires_grad.then_some(rule),
            requires_grad,
            leaf: false,
            grad: None,
            exact,
        }))
    }

    fn push(&self, record: Record<T>) -> Var<'_, T> {
        let mut records = self.records.borrow_mut();
        records.push(record);
        Var {
            tape: self,
            id: records.len() - 1,
        }
    }

    /// Reverse sweep from `loss`. Intermediate values are released as the
    /// sweep passes them; leaves and the loss itself keep their values.
    fn backward_from(&self, loss: usize) -> Result<()> {
        if self.swept.get() {
            return Err(Error::Backward("tape was already swept".into()));
        }
        let mut records = self.records.borrow_mut();
        {
            let root = &records[loss];
            let value = root.value.as_ref().expect("loss value present");
            if value.numel() != 1 {
                return Err(Error::Backward(format!(
                    "loss must be a single element, got shape {:?}",
                    value.shape()
                )));
            }
            if !root.requires_grad {
                return Err(Error::Backward(
                    "loss is detached from the tape (no input requires a gradient)".into(),
                ));
            }
        }
        self.swept.set(true);

        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss + 1, || None);
        let shape = records[loss].value.as_ref().unwrap().shape().to_vec();
        grads[loss] = Some(Tensor::full(&shape, T::one()));

        for i in (0..=loss).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            if records[i].leaf {
                let slot = &mut records[i].grad;
                match slot {
                    Some(acc) => add_into(acc, &grad),
                    None => *slot = Some(grad),
                }
                continue;
            }
            let input_grads = {
                let record = &records[i];
                let rule = record
                    .rule
                    .as_ref()
                    .expect("records that require grad carry a rule");
                let inputs: Vec<&Tensor<T>> = record
                    .inputs
                    .iter()
                    .map(|&j| {
                        records[j]
                            .value
                            .as_ref()
                            .expect("input value still held during sweep")
                    })
                    .collect();
                let needs: Vec<bool> = record
                    .inputs
                    .iter()
                    .map(|&j| records[j].requires_grad)
                    .collect();
                let output = record.value.as_ref().expect("output value held");
                let out = rule.backward(&inputs, output, &grad, &needs)?;
                if out.len() != inputs.len() {
                    return Err(Error::Backward(format!(
                        "rule {} returned {} grads for {} inputs",
                        rule.name(),
                        out.len(),
                        inputs.len()
                    )));
                }
                out
            };
            let input_ids = records[i].inputs.clone();
            for (j, g) in input_ids.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !records[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => add_into(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
            if i != loss {
                records[i].value = None;
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    debug_assert_eq!(acc.shape(), g.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += *b;
    }
}

/// Handle to one record on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrow of the current value.
    ///
    /// # Panics
    /// If the value was released by a backward sweep.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.records.borrow(), |r| {
            r[self.id]
                .value
                .as_ref()
                .expect("value released by backward sweep")
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.records.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.records.borrow()[self.id].grad.clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.tape.records.borrow_mut()[self.id].grad.take()
    }

    /// Scalar value with the full 64-bit precision of the reduction that
    /// produced it, when available.
    pub fn scalar_f64(&self) -> Option<f64> {
        let records = self.tape.records.borrow();
        let r = &records[self.id];
        if let Some(e) = r.exact {
            return Some(e);
        }
        r.value.as_ref().and_then(|v| v.item()).map(Real::as_f64)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }
}
