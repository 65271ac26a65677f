//! Learned up-sampling: transposed convolution whose kernel equals its
//! stride, so every input voxel paints one disjoint `f^3` output block.

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    f: usize,
    input: [usize; 3],
}

impl Geometry {
    fn new(x: &[usize], w: &[usize]) -> Result<Self> {
        let (&[n, c_in, d, h, wd], &[wc_in, c_out, f0, f1, f2]) = (x, w) else {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv3d",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        };
        if wc_in != c_in || f0 != f1 || f1 != f2 {
            return Err(Error::ShapeMismatch {
                op: "transposed_conv3d",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        }
        Ok(Geometry {
            n,
            c_in,
            c_out,
            f: f0,
            input: [d, h, wd],
        })
    }

    fn taps(&self) -> usize {
        self.f * self.f * self.f
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_dims(&self) -> [usize; 3] {
        self.input.map(|e| e * self.f)
    }

    fn output_shape(&self) -> Vec<usize> {
        let [d, h, w] = self.out_dims();
        vec![self.n, self.c_out, d, h, w]
    }

    /// Visits every `(column row, input voxel, output offset)` triple of one
    /// sample. Column rows are `o * f^3 + tap`.
    fn for_each(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let f = self.f;
        let [d, h, w] = self.input;
        let [_, oh, ow] = self.out_dims();
        let out_vol = self.out_dims().iter().product::<usize>();
        for o in 0..self.c_out {
            for a in 0..f {
                for b in 0..f {
                    for c in 0..f {
                        let row = o * self.taps() + (a * f + b) * f + c;
                        for z in 0..d {
                            for y in 0..h {
                                let vin = (z * h + y) * w;
                                let vout = o * out_vol + ((z * f + a) * oh + y * f + b) * ow + c;
                                for x in 0..w {
                                    visit(row, vin + x, vout + x * f);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `x: [N, C_in, d, h, w]`, `weight: [C_in, C_out, f, f, f]`, optional
/// `bias: [C_out]`; returns `[N, C_out, f*d, f*h, f*w]`.
pub fn transposed_conv3d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let (out, geom) = {
        let (xv, wv) = (x.value(), weight.value());
        let g = Geometry::new(xv.shape(), wv.shape())?;
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.numel() != g.c_out {
                return Err(Error::ShapeMismatch {
                    op: "transposed_conv3d bias",
                    lhs: vec![g.c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let (rows, vol) = (g.c_out * g.taps(), g.in_volume());
        let out_numel = g.c_out * vol * g.taps();
        let mut out = vec![T::zero(); g.n * out_numel];
        let mut cols = vec![T::zero(); rows * vol];
        for s in 0..g.n {
            let xs = &xv.data()[s * g.c_in * vol..(s + 1) * g.c_in * vol];
            // cols = W^T x, W viewed as [C_in, rows].
            unsafe {
                T::gemm(
                    rows,
                    g.c_in,
                    vol,
                    T::one(),
                    wv.data().as_ptr(),
                    1,
                    rows as isize,
                    xs.as_ptr(),
                    vol as isize,
                    1,
                    T::zero(),
                    cols.as_mut_ptr(),
                    vol as isize,
                    1,
                );
            }
            let dst = &mut out[s * out_numel..(s + 1) * out_numel];
            g.for_each(|row, vin, vout| dst[vout] = cols[row * vol + vin]);
            if let Some(b) = &bv {
                let ovol = vol * g.taps();
                for (o, &bo) in b.data().iter().enumerate() {
                    dst[o * ovol..(o + 1) * ovol].iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        (Tensor::from_parts(g.output_shape(), out), g)
    };
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    x.tape().record(
        "transposed_conv3d",
        &inputs,
        out,
        Box::new(TransposedConvRule { geom }),
    )
}

struct TransposedConvRule {
    geom: Geometry,
}

impl<T: Real> GradFn<T> for TransposedConvRule {
    fn name(&self) -> &'static str {
        "transposed_conv3d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let g = self.geom;
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, vol) = (g.c_out * g.taps(), g.in_volume());
        let out_numel = rows * vol;
        let mut gx = needs[0].then(|| vec![T::zero(); x.numel()]);
        let mut gw = needs[1].then(|| vec![T::zero(); w.numel()]);
        let mut cols = vec![T::zero(); rows * vol];
        for s in 0..g.n {
            let go = &grad_out.data()[s * out_numel..(s + 1) * out_numel];
            g.for_each(|row, vin, vout| cols[row * vol + vin] = go[vout]);
            let xs_range = s * g.c_in * vol..(s + 1) * g.c_in * vol;
            if let Some(gx) = gx.as_mut() {
                // dx = W cols.
                unsafe {
                    T::gemm(
                        g.c_in,
                        rows,
                        vol,
                        T::one(),
                        w.data().as_ptr(),
                        rows as isize,
                        1,
                        cols.as_ptr(),
                        vol as isize,
                        1,
                        T::zero(),
                        gx[xs_range.clone()].as_mut_ptr(),
                        vol as isize,
                        1,
                    );
                }
            }
            if let Some(gw) = gw.as_mut() {
                // dW += x cols^T.
                unsafe {
                    T::gemm(
                        g.c_in,
                        vol,
                        rows,
                        T::one(),
                        x.data()[xs_range].as_ptr(),
                        vol as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        vol as isize,
                        T::one(),
                        gw.as_mut_ptr(),
                        rows as isize,
                        1,
                    );
                }
            }
        }
        let mut out = vec![
            gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
            gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        ];
        if inputs.len() == 3 {
            out.push(needs[2].then(|| {
                let ovol = vol * g.taps();
                let mut gb = vec![0.0f64; g.c_out];
                for s in 0..g.n {
                    for (o, acc) in gb.iter_mut().enumerate() {
                        let base = (s * g.c_out + o) * ovol;
                        *acc += grad_out.data()[base..base + ovol]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                }
                Tensor::from_parts(vec![g.c_out], gb.into_iter().map(T::from_f64).collect())
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn unit_kernel_replicates_like_nearest() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 1, 2], vec![2.0, 5.0]).unwrap());
        let w = tape.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
        let y = transposed_conv3d(x, w, None).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2, 4]);
        for row in y.value().data().chunks(4) {
            assert_eq!(row, &[2.0, 2.0, 5.0, 5.0]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let weights = random(&[1, 2, 4, 4, 6], 9);
        let r = grad_check(
            move |_, v| {
                let y = transposed_conv3d(v[0], v[1], Some(v[2]))?;
                crate::autodiff::weighted_sum(y, &weights)
            },
            &[
                random(&[1, 3, 2, 2, 3], 1),
                random(&[3, 2, 2, 2, 2], 2),
                random(&[2], 3),
            ],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn mismatched_channels_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1, 1]));
        let w = tape.constant(Tensor::zeros(&[3, 1, 2, 2, 2]));
        assert!(transposed_conv3d(x, w, None).is_err());
    }
}
