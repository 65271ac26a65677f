//! Elementwise arithmetic, channel concatenation and reductions.

use crate::autodiff::tape::{GradFn, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Max,
}

impl ElementwiseKind {
    #[inline(always)]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            ElementwiseKind::Add => a + b,
            ElementwiseKind::Sub => a - b,
            ElementwiseKind::Mul => a * b,
            ElementwiseKind::Max => {
                if a > b {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn op_name(self) -> &'static str {
        match self {
            ElementwiseKind::Add => "add",
            ElementwiseKind::Sub => "sub",
            ElementwiseKind::Mul => "mul",
            ElementwiseKind::Max => "max",
        }
    }
}

/// Right-hand side of an elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'t, T: Real> {
    Var(Var<'t, T>),
    Scalar(T),
}

impl<'t, T: Real> From<Var<'t, T>> for Operand<'t, T> {
    fn from(v: Var<'t, T>) -> Self {
        Operand::Var(v)
    }
}

impl<'t> From<f32> for Operand<'t, f32> {
    fn from(v: f32) -> Self {
        Operand::Scalar(v)
    }
}

impl<'t> From<f64> for Operand<'t, f64> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

pub fn elementwise<'t, T: Real>(
    a: Var<'t, T>,
    b: impl Into<Operand<'t, T>>,
    kind: ElementwiseKind,
) -> Result<Var<'t, T>> {
    let tape = a.tape();
    match b.into() {
        Operand::Var(b) => {
            let out = {
                let av = a.value();
                let bv = b.value();
                if av.shape() != bv.shape() {
                    return Err(Error::ShapeMismatch {
                        op: kind.op_name(),
                        lhs: av.shape().to_vec(),
                        rhs: bv.shape().to_vec(),
                    });
                }
                let data = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| kind.apply(x, y))
                    .collect();
                Tensor::from_parts(av.shape().to_vec(), data)
            };
            tape.record(
                kind.op_name(),
                &[a, b],
                out,
                Box::new(BinaryRule { kind }),
            )
        }
        Operand::Scalar(s) => {
            let out = {
                let av = a.value();
                let data = av.data().iter().map(|&x| kind.apply(x, s)).collect();
                Tensor::from_parts(av.shape().to_vec(), data)
            };
            tape.record(
                kind.op_name(),
                &[a],
                out,
                Box::new(ScalarRule { kind, scalar: s }),
            )
        }
    }
}

struct BinaryRule {
    kind: ElementwiseKind,
}

impl<T: Real> GradFn<T> for BinaryRule {
    fn name(&self) -> &'static str {
        self.kind.op_name()
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let shape = g.shape().to_vec();
        let zip3 = |f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            let data = g
                .data()
                .iter()
                .zip(a.data().iter().zip(b.data()))
                .map(|(&g, (&x, &y))| f(g, x, y))
                .collect();
            Tensor::from_parts(shape.clone(), data)
        };
        let (ga, gb) = match self.kind {
            ElementwiseKind::Add => (
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ),
            ElementwiseKind::Sub => (
                needs[0].then(|| g.clone()),
                needs[1].then(|| zip3(&|g, _, _| -g)),
            ),
            ElementwiseKind::Mul => (
                needs[0].then(|| zip3(&|g, _, y| g * y)),
                needs[1].then(|| zip3(&|g, x, _| g * x)),
            ),
            ElementwiseKind::Max => (
                needs[0].then(|| zip3(&|g, x, y| if x > y { g } else { T::zero() })),
                needs[1].then(|| zip3(&|g, x, y| if x > y { T::zero() } else { g })),
            ),
        };
        Ok(vec![ga, gb])
    }
}

struct ScalarRule<T> {
    kind: ElementwiseKind,
    scalar: T,
}

impl<T: Real> GradFn<T> for ScalarRule<T> {
    fn name(&self) -> &'static str {
        self.kind.op_name()
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.scalar;
        let grad = match self.kind {
            ElementwiseKind::Add | ElementwiseKind::Sub => g.clone(),
            ElementwiseKind::Mul => {
                Tensor::from_parts(g.shape().to_vec(), g.data().iter().map(|&g| g * s).collect())
            }
            ElementwiseKind::Max => Tensor::from_parts(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(&g, &x)| if x > s { g } else { T::zero() })
                    .collect(),
            ),
        };
        Ok(vec![Some(grad)])
    }
}

/// Concatenates 5-D tensors along the channel axis, in input order.
pub fn concat_channels<'t, T: Real>(xs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels of an empty list"))?;
    let tape = first.tape();
    let (out, channels) = {
        let values: Vec<_> = xs.iter().map(|v| v.value()).collect();
        let [n, _, d, h, w] = values[0].dims5()?;
        let mut channels = Vec::with_capacity(values.len());
        for v in &values {
            let [vn, vc, vd, vh, vw] = v.dims5()?;
            if (vn, vd, vh, vw) != (n, d, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let vol = d * h * w;
        let mut data = Vec::with_capacity(n * total * vol);
        for b in 0..n {
            for (v, &c) in values.iter().zip(&channels) {
                let base = b * c * vol;
                data.extend_from_slice(&v.data()[base..base + c * vol]);
            }
        }
        (Tensor::from_parts(vec![n, total, d, h, w], data), channels)
    };
    tape.record("concat_channels", xs, out, Box::new(ConcatRule { channels }))
}

struct ConcatRule {
    channels: Vec<usize>,
}

impl<T: Real> GradFn<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let mut start = 0;
        let mut grads = Vec::with_capacity(self.channels.len());
        for (&c, &need) in self.channels.iter().zip(needs) {
            grads.push(if need {
                Some(g.slice_channels(start, c)?)
            } else {
                None
            });
            start += c;
        }
        Ok(grads)
    }
}

/// Sum of all elements; the 64-bit accumulation is retained on the tape.
pub fn sum<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let (exact, shape) = {
        let v = x.value();
        (v.sum_f64(), v.shape().to_vec())
    };
    x.tape().record_with_exact(
        "sum",
        &[x],
        Tensor::scalar(T::from_f64(exact)),
        Box::new(SumRule { shape }),
        Some(exact),
    )
}

struct SumRule {
    shape: Vec<usize>,
}

impl<T: Real> GradFn<T> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(&self.shape, g.data()[0]))])
    }
}

/// `sum(x * weights)` for a constant weight tensor, accumulated in 64 bits.
/// Used to turn tensor-valued functions into well-conditioned scalars.
pub fn weighted_sum<'t, T: Real>(x: Var<'t, T>, weights: &Tensor<T>) -> Result<Var<'t, T>> {
    let exact = {
        let v = x.value();
        if v.shape() != weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: v.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        v.data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| a.as_f64() * w.as_f64())
            .sum::<f64>()
    };
    x.tape().record_with_exact(
        "weighted_sum",
        &[x],
        Tensor::scalar(T::from_f64(exact)),
        Box::new(WeightedSumRule {
            weights: weights.clone(),
        }),
        Some(exact),
    )
}

struct WeightedSumRule<T: Real> {
    weights: Tensor<T>,
}

impl<T: Real> GradFn<T> for WeightedSumRule<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let s = g.data()[0];
        Ok(vec![Some(Tensor::from_parts(
            self.weights.shape().to_vec(),
            self.weights.data().iter().map(|&w| w * s).collect(),
        ))])
    }
}

// fallible, so the operator traits do not fit
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, rhs: impl Into<Operand<'t, T>>) -> Result<Var<'t, T>> {
        elementwise(self, rhs, ElementwiseKind::Add)
    }

    pub fn sub(self, rhs: impl Into<Operand<'t, T>>) -> Result<Var<'t, T>> {
        elementwise(self, rhs, ElementwiseKind::Sub)
    }

    pub fn mul(self, rhs: impl Into<Operand<'t, T>>) -> Result<Var<'t, T>> {
        elementwise(self, rhs, ElementwiseKind::Mul)
    }

    pub fn maximum(self, rhs: impl Into<Operand<'t, T>>) -> Result<Var<'t, T>> {
        elementwise(self, rhs, ElementwiseKind::Max)
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        sum(self)
    }
}
