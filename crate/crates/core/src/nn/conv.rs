//! 3-D cross-correlation with zero padding and integer stride.
//!
//! Two kernels implement the same contract: `direct` loops over every
//! output element with a 64-bit accumulator, `gemm` lowers each sample to
//! matrix products over im2col panels. Both are registered by name.

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::registry::{Registry, Strategy};
use crate::tensor::Tensor;

/// Output extent along one axis, or `None` when it would be below 1.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
}

impl ConvOptions {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvOptions { stride, padding }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        ConvOptions {
            stride: 1,
            padding: (kernel - 1) / 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], opts: ConvOptions) -> Result<Self> {
        let [n, c_in, d, h, w] = match *x_shape {
            [n, c, d, h, w] => [n, c, d, h, w],
            _ => {
                return Err(Error::InvalidShape {
                    shape: x_shape.to_vec(),
                    reason: "conv3d input must be [N, C, D, H, W]".into(),
                })
            }
        };
        let (c_out, wc_in, k) = match *w_shape {
            [co, ci, kd, kh, kw] if kd == kh && kh == kw => (co, ci, kd),
            _ => {
                return Err(Error::InvalidShape {
                    shape: w_shape.to_vec(),
                    reason: "conv3d weight must be [C_out, C_in, k, k, k]".into(),
                })
            }
        };
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: x_shape.to_vec(),
                rhs: w_shape.to_vec(),
            });
        }
        if opts.stride == 0 {
            return Err(Error::invalid("conv3d stride must be at least 1"));
        }
        let mut output = [0; 3];
        for (o, &i) in output.iter_mut().zip(&[d, h, w]) {
            *o = output_extent(i, k, opts.stride, opts.padding).ok_or_else(|| {
                Error::invalid(format!(
                    "conv3d output extent below 1 for input {i}, kernel {k}, stride {}, padding {}",
                    opts.stride, opts.padding
                ))
            })?;
        }
        Ok(ConvGeometry {
            batch: n,
            c_in,
            c_out,
            input: [d, h, w],
            kernel: k,
            stride: opts.stride,
            padding: opts.padding,
            output,
        })
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Rows of the lowered weight matrix, `C_in * k^3`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.taps()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let [d, h, w] = self.output;
        vec![self.batch, self.c_out, d, h, w]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// A convolution implementation.
pub trait ConvKernel<T: Real>: Strategy {
    fn forward(&self, x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T>;
    fn grad_input(&self, grad_out: &[T], w: &[T], g: &ConvGeometry) -> Vec<T>;
    fn grad_weight(&self, grad_out: &[T], x: &[T], g: &ConvGeometry) -> Vec<T>;
}

pub fn conv_kernels<T: Real>() -> Registry<dyn ConvKernel<T>> {
    Registry::<dyn ConvKernel<T>>::new("convolution kernel")
        .with(Arc::new(GemmConv))
        .with(Arc::new(DirectConv))
}

pub fn conv3d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    opts: ConvOptions,
    kernel: &Arc<dyn ConvKernel<T>>,
) -> Result<Var<'t, T>> {
    let (out, geom) = {
        let xv = x.value();
        let wv = weight.value();
        let geom = ConvGeometry::new(xv.shape(), wv.shape(), opts)?;
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.numel() != geom.c_out {
                return Err(Error::ShapeMismatch {
                    op: "conv3d bias",
                    lhs: vec![geom.c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let data = kernel.forward(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), &geom);
        (Tensor::from_parts(geom.output_shape(), data), geom)
    };
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    x.tape().record(
        "conv3d",
        &inputs,
        out,
        Box::new(ConvRule {
            kernel: Arc::clone(kernel),
            geom,
        }),
    )
}

struct ConvRule<T: Real> {
    kernel: Arc<dyn ConvKernel<T>>,
    geom: ConvGeometry,
}

impl<T: Real> GradFn<T> for ConvRule<T> {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let geom = &self.geom;
        let gx = needs[0].then(|| {
            Tensor::from_parts(
                inputs[0].shape().to_vec(),
                self.kernel.grad_input(g.data(), inputs[1].data(), geom),
            )
        });
        let gw = needs[1].then(|| {
            Tensor::from_parts(
                inputs[1].shape().to_vec(),
                self.kernel.grad_weight(g.data(), inputs[0].data(), geom),
            )
        });
        let mut grads = vec![gx, gw];
        if inputs.len() == 3 {
            grads.push(needs[2].then(|| {
                let vol = geom.output_volume();
                let mut acc = vec![0f64; geom.c_out];
                for n in 0..geom.batch {
                    for (co, a) in acc.iter_mut().enumerate() {
                        let base = (n * geom.c_out + co) * vol;
                        *a += g.data()[base..base + vol]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                }
                Tensor::from_parts(vec![geom.c_out], acc.into_iter().map(T::from_f64).collect())
            }));
        }
        Ok(grads)
    }
}

/// Reference kernel: one 64-bit accumulator per output element.
#[derive(Debug, Default, Clone, Copy)]
pub struct DirectConv;

impl Strategy for DirectConv {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn describe(&self) -> &'static str {
        "naive loops with 64-bit accumulators"
    }
}

impl<T: Real> ConvKernel<T> for DirectConv {
    fn forward(&self, x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
        let [id, ih, iw] = g.input;
        let [od, oh, ow] = g.output;
        let (k, s, p) = (g.kernel as isize, g.stride as isize, g.padding as isize);
        let mut out = Vec::with_capacity(g.batch * g.c_out * g.output_volume());
        for n in 0..g.batch {
            for co in 0..g.c_out {
                let b0 = bias.map_or(0.0, |b| b[co].as_f64());
                for oz in 0..od as isize {
                    for oy in 0..oh as isize {
                        for ox in 0..ow as isize {
                            let mut acc = b0;
                            for ci in 0..g.c_in {
                                let xb = (n * g.c_in + ci) * id * ih * iw;
                                let wb = (co * g.c_in + ci) * g.taps();
                                for kz in 0..k {
                                    let iz = oz * s + kz - p;
                                    if iz < 0 || iz >= id as isize {
                                        continue;
                                    }
                                    for ky in 0..k {
                                        let iy = oy * s + ky - p;
                                        if iy < 0 || iy >= ih as isize {
                                            continue;
                                        }
                                        for kx in 0..k {
                                            let ix = ox * s + kx - p;
                                            if ix < 0 || ix >= iw as isize {
                                                continue;
                                            }
                                            let xi = xb
                                                + ((iz as usize * ih) + iy as usize) * iw
                                                + ix as usize;
                                            let wi = wb + ((kz * k + ky) * k + kx) as usize;
                                            acc += x[xi].as_f64() * w[wi].as_f64();
                                        }
                                    }
                                }
                            }
                            out.push(T::from_f64(acc));
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input(&self, go: &[T], w: &[T], g: &ConvGeometry) -> Vec<T> {
        let [id, ih, iw] = g.input;
        let [od, oh, ow] = g.output;
        let (k, s, p) = (g.kernel as isize, g.stride as isize, g.padding as isize);
        let ovol = g.output_volume();
        // Output index along one axis that reads input index `i` through tap `t`.
        let src = |i: isize, t: isize, extent: usize| -> Option<usize> {
            let num = i + p - t;
            (num >= 0 && num % s == 0 && num / s < extent as isize).then(|| (num / s) as usize)
        };
        let mut gx = Vec::with_capacity(g.batch * g.c_in * g.input_volume());
        for n in 0..g.batch {
            for ci in 0..g.c_in {
                for iz in 0..id as isize {
                    for iy in 0..ih as isize {
                        for ix in 0..iw as isize {
                            let mut acc = 0f64;
                            for co in 0..g.c_out {
                                let gb = (n * g.c_out + co) * ovol;
                                let wb = (co * g.c_in + ci) * g.taps();
                                for kz in 0..k {
                                    let Some(oz) = src(iz, kz, od) else { continue };
                                    for ky in 0..k {
                                        let Some(oy) = src(iy, ky, oh) else { continue };
                                        for kx in 0..k {
                                            let Some(ox) = src(ix, kx, ow) else { continue };
                                            let gi = gb + (oz * oh + oy) * ow + ox;
                                            let wi = wb + ((kz * k + ky) * k + kx) as usize;
                                            acc += go[gi].as_f64() * w[wi].as_f64();
                                        }
                                    }
                                }
                            }
                            gx.push(T::from_f64(acc));
                        }
                    }
                }
            }
        }
        gx
    }

    fn grad_weight(&self, go: &[T], x: &[T], g: &ConvGeometry) -> Vec<T> {
        let [id, ih, iw] = g.input;
        let [od, oh, ow] = g.output;
        let (k, s, p) = (g.kernel as isize, g.stride as isize, g.padding as isize);
        let (ivol, ovol) = (g.input_volume(), g.output_volume());
        let mut gw = Vec::with_capacity(g.c_out * g.patch_len());
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0f64;
                            for n in 0..g.batch {
                                let gb = (n * g.c_out + co) * ovol;
                                let xb = (n * g.c_in + ci) * ivol;
                                for oz in 0..od as isize {
                                    let iz = oz * s + kz - p;
                                    if iz < 0 || iz >= id as isize {
                                        continue;
                                    }
                                    for oy in 0..oh as isize {
                                        let iy = oy * s + ky - p;
                                        if iy < 0 || iy >= ih as isize {
                                            continue;
                                        }
                                        for ox in 0..ow as isize {
                                            let ix = ox * s + kx - p;
                                            if ix < 0 || ix >= iw as isize {
                                                continue;
                                            }
                                            let gi = gb
                                                + ((oz as usize * oh) + oy as usize) * ow
                                                + ox as usize;
                                            let xi = xb
                                                + ((iz as usize * ih) + iy as usize) * iw
                                                + ix as usize;
                                            acc += go[gi].as_f64() * x[xi].as_f64();
                                        }
                                    }
                                }
                            }
                            gw.push(T::from_f64(acc));
                        }
                    }
                }
            }
        }
        gw
    }
}

/// im2col + GEMM kernel. Samples are processed in parallel; per-sample
/// weight gradients are reduced in sample order, so results do not depend
/// on the thread count.
#[derive(Debug, Default, Clone, Copy)]
pub struct GemmConv;

/// Target element count of one im2col panel.
const PANEL_ELEMS: usize = 1 << 20;

impl GemmConv {
    /// Output rows `(oz, oy)` per panel.
    fn rows_per_panel(g: &ConvGeometry) -> usize {
        let ow = g.output[2];
        (PANEL_ELEMS / (g.patch_len() * ow)).max(1)
    }
}

impl GemmConv {
    /// At stride 1 the input gradient is a forward correlation of the
    /// output gradient with channel-transposed, spatially flipped weights
    /// and complementary padding. This keeps the GEMM inner dimension at
    /// `C_out * k^3` instead of `C_out`, and needs no scatter.
    fn grad_input_as_conv<T: Real>(go: &[T], w: &[T], g: &ConvGeometry, k: &GemmConv) -> Vec<T> {
        let taps = g.taps();
        let mut flipped = vec![T::zero(); w.len()];
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                let src = &w[(co * g.c_in + ci) * taps..][..taps];
                let dst = &mut flipped[(ci * g.c_out + co) * taps..][..taps];
                for t in 0..taps {
                    dst[taps - 1 - t] = src[t];
                }
            }
        }
        let back = ConvGeometry {
            batch: g.batch,
            c_in: g.c_out,
            c_out: g.c_in,
            input: g.output,
            kernel: g.kernel,
            stride: 1,
            padding: g.kernel - 1 - g.padding,
            output: g.input,
        };
        k.forward(go, &flipped, None, &back)
    }
}

impl Strategy for GemmConv {
    fn name(&self) -> &'static str {
        "gemm"
    }

    fn describe(&self) -> &'static str {
        "im2col panels multiplied with a blocked GEMM"
    }
}

/// Range of output positions `o` along one axis for which `o*s + t - p`
/// lands inside `0..extent`.
#[inline]
fn valid_range(extent: usize, out: usize, t: usize, s: usize, p: usize) -> (usize, usize) {
    // o*s >= p - t
    let lo = if p > t { (p - t).div_ceil(s) } else { 0 };
    // o*s <= extent - 1 + p - t
    let hi = if extent + p > t {
        ((extent - 1 + p - t) / s + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Fills `cols[r, j]` for output rows `row0..row0 + rows` of one sample.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry, row0: usize, rows: usize, cols: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let ncols = rows * ow;
    let mut r = 0;
    for ci in 0..g.c_in {
        let xc = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst_row = &mut cols[r * ncols..(r + 1) * ncols];
                    let (lo, hi) = valid_range(iw, ow, kx, s, p);
                    for (j, row) in (row0..row0 + rows).enumerate() {
                        let (oz, oy) = (row / oh, row % oh);
                        let dst = &mut dst_row[j * ow..(j + 1) * ow];
                        let iz = (oz * s + kz) as isize - p as isize;
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if s == 1 {
                            let start = lo + kx - p;
                            dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (ox, d) in (lo..hi).zip(&mut dst[lo..hi]) {
                                *d = src[ox * s + kx - p];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Scatter-adds panel columns back into one sample's input gradient.
fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, row0: usize, rows: usize, gx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let ncols = rows * ow;
    let mut r = 0;
    for ci in 0..g.c_in {
        let gc = &mut gx[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src_row = &cols[r * ncols..(r + 1) * ncols];
                    let (lo, hi) = valid_range(iw, ow, kx, s, p);
                    for (j, row) in (row0..row0 + rows).enumerate() {
                        let (oz, oy) = (row / oh, row % oh);
                        let iz = (oz * s + kz) as isize - p as isize;
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let dst = &mut gc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        let src = &src_row[j * ow..(j + 1) * ow];
                        for ox in lo..hi {
                            dst[ox * s + kx - p] += src[ox];
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

impl<T: Real> ConvKernel<T> for GemmConv {
    fn forward(&self, x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
        let (ivol, ovol, kk) = (g.input_volume(), g.output_volume(), g.patch_len());
        let mut out = vec![T::zero(); g.batch * g.c_out * ovol];
        out.par_chunks_mut(g.c_out * ovol)
            .zip(x.par_chunks(g.c_in * ivol))
            .for_each(|(out_n, x_n)| {
                if g.is_pointwise() {
                    // SAFETY: w is [c_out, c_in], x_n is [c_in, vol], out_n is [c_out, vol].
                    unsafe {
                        T::gemm(
                            g.c_out,
                            g.c_in,
                            ovol,
                            T::one(),
                            w.as_ptr(),
                            kk as isize,
                            1,
                            x_n.as_ptr(),
                            ovol as isize,
                            1,
                            T::zero(),
                            out_n.as_mut_ptr(),
                            ovol as isize,
                            1,
                        );
                    }
                } else {
                    let [od, oh, ow] = g.output;
                    let total_rows = od * oh;
                    let per = Self::rows_per_panel(g);
                    let mut cols = vec![T::zero(); kk * per * ow];
                    let mut row0 = 0;
                    while row0 < total_rows {
                        let rows = per.min(total_rows - row0);
                        let ncols = rows * ow;
                        im2col(x_n, g, row0, rows, &mut cols[..kk * ncols]);
                        // SAFETY: cols is [kk, ncols]; the output block starts at
                        // column row0*ow with row stride ovol.
                        unsafe {
                            T::gemm(
                                g.c_out,
                                kk,
                                ncols,
                                T::one(),
                                w.as_ptr(),
                                kk as isize,
                                1,
                                cols.as_ptr(),
                                ncols as isize,
                                1,
                                T::zero(),
                                out_n.as_mut_ptr().add(row0 * ow),
                                ovol as isize,
                                1,
                            );
                        }
                        row0 += rows;
                    }
                }
                if let Some(b) = bias {
                    for (co, chunk) in out_n.chunks_mut(ovol).enumerate() {
                        let bv = b[co];
                        chunk.iter_mut().for_each(|v| *v += bv);
                    }
                }
            });
        out
    }

    fn grad_input(&self, go: &[T], w: &[T], g: &ConvGeometry) -> Vec<T> {
        if g.stride == 1 && !g.is_pointwise() && g.padding < g.kernel {
            return Self::grad_input_as_conv(go, w, g, self);
        }
        let (ivol, ovol, kk) = (g.input_volume(), g.output_volume(), g.patch_len());
        let mut gx = vec![T::zero(); g.batch * g.c_in * ivol];
        gx.par_chunks_mut(g.c_in * ivol)
            .zip(go.par_chunks(g.c_out * ovol))
            .for_each(|(gx_n, go_n)| {
                if g.is_pointwise() {
                    // SAFETY: w^T is [c_in, c_out] via swapped strides.
                    unsafe {
                        T::gemm(
                            g.c_in,
                            g.c_out,
                            ovol,
                            T::one(),
                            w.as_ptr(),
                            1,
                            kk as isize,
                            go_n.as_ptr(),
                            ovol as isize,
                            1,
                            T::zero(),
                            gx_n.as_mut_ptr(),
                            ivol as isize,
                            1,
                        );
                    }
                    return;
                }
                let [od, oh, ow] = g.output;
                let total_rows = od * oh;
                let per = Self::rows_per_panel(g);
                let mut cols = vec![T::zero(); kk * per * ow];
                let mut row0 = 0;
                while row0 < total_rows {
                    let rows = per.min(total_rows - row0);
                    let ncols = rows * ow;
                    // SAFETY: cols is [kk, ncols]; go block has row stride ovol.
                    unsafe {
                        T::gemm(
                            kk,
                            g.c_out,
                            ncols,
                            T::one(),
                            w.as_ptr(),
                            1,
                            kk as isize,
                            go_n.as_ptr().add(row0 * ow),
                            ovol as isize,
                            1,
                            T::zero(),
                            cols.as_mut_ptr(),
                            ncols as isize,
                            1,
                        );
                    }
                    col2im(&cols[..kk * ncols], g, row0, rows, gx_n);
                    row0 += rows;
                }
            });
        gx
    }

    fn grad_weight(&self, go: &[T], x: &[T], g: &ConvGeometry) -> Vec<T> {
        let (ivol, ovol, kk) = (g.input_volume(), g.output_volume(), g.patch_len());
        let partials: Vec<Vec<T>> = go
            .par_chunks(g.c_out * ovol)
            .zip(x.par_chunks(g.c_in * ivol))
            .map(|(go_n, x_n)| {
                let mut gw = vec![T::zero(); g.c_out * kk];
                if g.is_pointwise() {
                    // SAFETY: x_n^T is [vol, c_in] via swapped strides.
                    unsafe {
                        T::gemm(
                            g.c_out,
                            ovol,
                            g.c_in,
                            T::one(),
                            go_n.as_ptr(),
                            ovol as isize,
                            1,
                            x_n.as_ptr(),
                            1,
                            ivol as isize,
                            T::zero(),
                            gw.as_mut_ptr(),
                            kk as isize,
                            1,
                        );
                    }
                    return gw;
                }
                let [od, oh, ow] = g.output;
                let total_rows = od * oh;
                let per = Self::rows_per_panel(g);
                let mut cols = vec![T::zero(); kk * per * ow];
                let mut row0 = 0;
                while row0 < total_rows {
                    let rows = per.min(total_rows - row0);
                    let ncols = rows * ow;
                    im2col(x_n, g, row0, rows, &mut cols[..kk * ncols]);
                    // SAFETY: cols^T is [ncols, kk] via swapped strides.
                    unsafe {
                        T::gemm(
                            g.c_out,
                            ncols,
                            kk,
                            T::one(),
                            go_n.as_ptr().add(row0 * ow),
                            ovol as isize,
                            1,
                            cols.as_ptr(),
                            1,
                            ncols as isize,
                            T::one(),
                            gw.as_mut_ptr(),
                            kk as isize,
                            1,
                        );
                    }
                    row0 += rows;
                }
                gw
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().unwrap_or_else(|| vec![T::zero(); g.c_out * kk]);
        for part in iter {
            total.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        total
    }
}
