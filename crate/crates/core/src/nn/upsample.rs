//! Parameter-free up-sampling by an integer power-of-two factor.
//!
//! Every interpolator here is separable: it is described by 1-D taps, each
//! output sample being `(1 - w) * x[lo] + w * x[hi]`. The 3-D operator
//! applies the taps along W, H and D in turn; its gradient applies the
//! transposed taps in reverse order.

use std::sync::Arc;

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::registry::{Registry, Strategy};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w_hi: f64,
}

pub trait Upsampler: Strategy {
    /// One tap per output index for an axis of `len` inputs.
    fn taps(&self, len: usize, factor: usize) -> Vec<Tap>;
}

pub fn upsamplers() -> Registry<dyn Upsampler> {
    Registry::<dyn Upsampler>::new("upsampler")
        .with(Arc::new(Nearest))
        .with(Arc::new(Trilinear))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Nearest;

impl Strategy for Nearest {
    fn name(&self) -> &'static str {
        "nearest"
    }

    fn describe(&self) -> &'static str {
        "voxel replication"
    }
}

impl Upsampler for Nearest {
    fn taps(&self, len: usize, factor: usize) -> Vec<Tap> {
        (0..len * factor)
            .map(|o| Tap {
                lo: o / factor,
                hi: o / factor,
                w_hi: 0.0,
            })
            .collect()
    }
}

/// Linear interpolation between voxel centers, edges clamped.
#[derive(Debug, Default, Clone, Copy)]
pub struct Trilinear;

impl Strategy for Trilinear {
    fn name(&self) -> &'static str {
        "trilinear"
    }

    fn describe(&self) -> &'static str {
        "separable linear interpolation between voxel centers"
    }
}

impl Upsampler for Trilinear {
    fn taps(&self, len: usize, factor: usize) -> Vec<Tap> {
        (0..len * factor)
            .map(|o| {
                let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(len - 1);
                let hi = (lo + 1).min(len - 1);
                let w_hi = if hi == lo { 0.0 } else { src - lo as f64 };
                Tap { lo, hi, w_hi }
            })
            .collect()
    }
}

/// Resamples the middle axis of a `[outer, len, inner]` buffer.
fn resample_axis<T: Real>(x: &[T], outer: usize, len: usize, inner: usize, taps: &[Tap]) -> Vec<T> {
    let out_len = taps.len();
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        let src = &x[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for (j, tap) in taps.iter().enumerate() {
            let d = &mut dst[j * inner..(j + 1) * inner];
            let a = &src[tap.lo * inner..(tap.lo + 1) * inner];
            if tap.w_hi == 0.0 {
                d.copy_from_slice(a);
            } else {
                let b = &src[tap.hi * inner..(tap.hi + 1) * inner];
                let (wl, wh) = (T::from_f64(1.0 - tap.w_hi), T::from_f64(tap.w_hi));
                for ((d, &a), &b) in d.iter_mut().zip(a).zip(b) {
                    *d = wl * a + wh * b;
                }
            }
        }
    }
    out
}

/// Adjoint of [`resample_axis`].
fn resample_axis_adjoint<T: Real>(
    g: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    taps: &[Tap],
) -> Vec<T> {
    let out_len = taps.len();
    let mut gx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        let src = &g[o * out_len * inner..(o + 1) * out_len * inner];
        let dst = &mut gx[o * len * inner..(o + 1) * len * inner];
        for (j, tap) in taps.iter().enumerate() {
            let s = &src[j * inner..(j + 1) * inner];
            let (wl, wh) = (T::from_f64(1.0 - tap.w_hi), T::from_f64(tap.w_hi));
            for (i, &v) in s.iter().enumerate() {
                dst[tap.lo * inner + i] += wl * v;
            }
            if tap.w_hi != 0.0 {
                for (i, &v) in s.iter().enumerate() {
                    dst[tap.hi * inner + i] += wh * v;
                }
            }
        }
    }
    gx
}

struct AxisPlan {
    taps: [Vec<Tap>; 3],
    input: [usize; 5],
}

impl AxisPlan {
    fn new(up: &dyn Upsampler, input: [usize; 5], factor: usize) -> Self {
        let [_, _, d, h, w] = input;
        AxisPlan {
            taps: [up.taps(d, factor), up.taps(h, factor), up.taps(w, factor)],
            input,
        }
    }

    fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        let [n, c, d, h, w] = self.input;
        let (hh, ww) = (self.taps[1].len(), self.taps[2].len());
        let a = resample_axis(x, n * c * d * h, w, 1, &self.taps[2]);
        let b = resample_axis(&a, n * c * d, h, ww, &self.taps[1]);
        drop(a);
        resample_axis(&b, n * c, d, hh * ww, &self.taps[0])
    }

    fn backward<T: Real>(&self, g: &[T]) -> Vec<T> {
        let [n, c, d, h, w] = self.input;
        let (hh, ww) = (self.taps[1].len(), self.taps[2].len());
        let b = resample_axis_adjoint(g, n * c, d, hh * ww, &self.taps[0]);
        let a = resample_axis_adjoint(&b, n * c * d, h, ww, &self.taps[1]);
        drop(b);
        resample_axis_adjoint(&a, n * c * d * h, w, 1, &self.taps[2])
    }

    fn output_shape(&self) -> Vec<usize> {
        let [n, c, ..] = self.input;
        vec![n, c, self.taps[0].len(), self.taps[1].len(), self.taps[2].len()]
    }
}

pub fn upsample<'t, T: Real>(
    x: Var<'t, T>,
    factor: usize,
    upsampler: &dyn Upsampler,
) -> Result<Var<'t, T>> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::invalid(format!(
            "upsample factor {factor} is not a power of two"
        )));
    }
    let (out, plan) = {
        let v = x.value();
        let plan = AxisPlan::new(upsampler, v.dims5()?, factor);
        let data = if factor == 1 {
            v.data().to_vec()
        } else {
            plan.forward(v.data())
        };
        (Tensor::from_parts(plan.output_shape(), data), plan)
    };
    x.tape().record(
        "upsample",
        &[x],
        out,
        Box::new(UpsampleRule { plan, factor }),
    )
}

struct UpsampleRule {
    plan: AxisPlan,
    factor: usize,
}

impl<T: Real> GradFn<T> for UpsampleRule {
    fn name(&self) -> &'static str {
        "upsample"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = if self.factor == 1 {
            g.data().to_vec()
        } else {
            self.plan.backward(g.data())
        };
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), data))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn up(x: Tensor<f64>, factor: usize, name: &str) -> Tensor<f64> {
        let reg = upsamplers();
        let u = reg.get(name).unwrap();
        let tape = Tape::new();
        let y = upsample(tape.constant(x), factor, u.as_ref()).unwrap();
        let v = y.value().clone();
        v
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::from_fn(&[1, 2, 2, 3, 2], |i| i as f64);
        for name in ["nearest", "trilinear"] {
            assert_eq!(up(x.clone(), 1, name), x);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let x = Tensor::full(&[1, 1, 2, 3, 2], 0.75);
        for name in ["nearest", "trilinear"] {
            for f in [2, 4, 8] {
                let y = up(x.clone(), f, name);
                assert_eq!(y.shape(), &[1, 1, 2 * f, 3 * f, 2 * f]);
                assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15), "{name} {f}");
            }
        }
    }

    #[test]
    fn nearest_replicates_a_voxel() {
        let y = up(Tensor::full(&[1, 1, 1, 1, 1], 3.0), 2, "nearest");
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert_eq!(y.data(), &[3.0; 8]);
    }

    #[test]
    fn trilinear_interpolates_between_centers() {
        let x = Tensor::new(&[1, 1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = up(x, 2, "trilinear");
        assert_eq!(y.shape(), &[1, 1, 2, 2, 4]);
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn nearest_gradient_is_sum_pooling() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 2, 1]), true);
        let y = upsample(x, 2, &Nearest).unwrap();
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[8.0, 8.0]);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1, 1, 1]));
        assert!(upsample(x, 3, &Nearest).is_err());
        assert!(upsample(x, 0, &Nearest).is_err());
    }
}
