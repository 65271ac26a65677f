//! Per-voxel softmax over channels and the voxelwise cross-entropy loss.

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Softmax over the channel axis of one voxel, written into `out`.
#[inline]
fn softmax_voxel(logits: impl Iterator<Item = f64> + Clone, out: &mut [f64]) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Softmax of a `[N, C, D, H, W]` tensor over `C`, without recording.
pub fn softmax_tensor<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d, h, w] = x.dims5()?;
    let vol = d * h * w;
    let mut out = vec![T::zero(); x.numel()];
    let mut buf = vec![0f64; c];
    let data = x.data();
    for b in 0..n {
        let base = b * c * vol;
        for v in 0..vol {
            softmax_voxel((0..c).map(|ch| data[base + ch * vol + v].as_f64()), &mut buf);
            for (ch, &p) in buf.iter().enumerate() {
                out[base + ch * vol + v] = T::from_f64(p);
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_channels<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let out = softmax_tensor(&x.value())?;
    x.tape()
        .record("softmax_channels", &[x], out, Box::new(SoftmaxRule))
}

struct SoftmaxRule;

impl<T: Real> GradFn<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        y: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let [n, c, d, h, w] = y.dims5()?;
        let vol = d * h * w;
        let (yd, gd) = (y.data(), g.data());
        let mut gx = vec![T::zero(); y.numel()];
        for b in 0..n {
            let base = b * c * vol;
            for v in 0..vol {
                let idx = |ch: usize| base + ch * vol + v;
                let dot: f64 = (0..c)
                    .map(|ch| gd[idx(ch)].as_f64() * yd[idx(ch)].as_f64())
                    .sum();
                for ch in 0..c {
                    let i = idx(ch);
                    gx[i] = T::from_f64(yd[i].as_f64() * (gd[i].as_f64() - dot));
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(y.shape().to_vec(), gx))])
    }
}

/// Mean over voxels of `-log softmax(logits)[label]`.
///
/// `labels` holds one class index per voxel in `[N, D, H, W]` order.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    let (loss, probs) = {
        let x = logits.value();
        let [n, c, d, h, w] = x.dims5()?;
        let vol = d * h * w;
        if labels.len() != n * vol {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: x.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        let data = x.data();
        let mut probs = vec![T::zero(); x.numel()];
        let mut total = 0f64;
        for b in 0..n {
            let base = b * c * vol;
            for v in 0..vol {
                let logit = |ch: usize| data[base + ch * vol + v].as_f64();
                let max = (0..c).map(logit).fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = (0..c).map(|ch| (logit(ch) - max).exp()).sum();
                let lse = max + sum_exp.ln();
                let label = labels[b * vol + v] as usize;
                total += lse - logit(label);
                for ch in 0..c {
                    probs[base + ch * vol + v] = T::from_f64((logit(ch) - lse).exp());
                }
            }
        }
        (total / (n * vol) as f64, probs)
    };
    let shape = logits.shape();
    logits.tape().record_with_exact(
        "cross_entropy",
        &[logits],
        Tensor::scalar(T::from_f64(loss)),
        Box::new(CrossEntropyRule {
            probs: Tensor::from_parts(shape, probs),
            labels: labels.to_vec(),
        }),
        Some(loss),
    )
}

struct CrossEntropyRule<T: Real> {
    probs: Tensor<T>,
    labels: Vec<u8>,
}

impl<T: Real> GradFn<T> for CrossEntropyRule<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let [n, c, d, h, w] = self.probs.dims5()?;
        let vol = d * h * w;
        let scale = g.data()[0].as_f64() / (n * vol) as f64;
        let mut gx: Vec<T> = self
            .probs
            .data()
            .iter()
            .map(|&p| T::from_f64(p.as_f64() * scale))
            .collect();
        for b in 0..n {
            for v in 0..vol {
                let label = self.labels[b * vol + v] as usize;
                let i = (b * c + label) * vol + v;
                gx[i] = T::from_f64((self.probs.data()[i].as_f64() - 1.0) * scale);
            }
        }
        Ok(vec![Some(Tensor::from_parts(self.probs.shape().to_vec(), gx))])
    }
}
