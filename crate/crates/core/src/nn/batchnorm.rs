//! Per-channel batch normalization over `(N, D, H, W)`.

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::real::{lane_sum, lane_sum2, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    /// Weight of the previous running value in the moving average.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Running statistics used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Normalizes `x` per channel, then applies `gamma * x_hat + beta`.
///
/// Train mode uses batch statistics and folds them into `stats`; infer mode
/// reads `stats` and leaves it untouched.
pub fn batch_norm<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    stats: &mut RunningStats,
    mode: Mode,
    cfg: &BnConfig,
) -> Result<Var<'t, T>> {
    let (out, rule) = {
        let xv = x.value();
        let [n, c, d, h, w] = xv.dims5()?;
        let (gv, bv) = (gamma.value(), beta.value());
        for p in [&gv, &bv] {
            if p.numel() != c {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        if stats.channels() != c {
            return Err(Error::invalid(format!(
                "batch_norm running stats have {} channels, input has {c}",
                stats.channels()
            )));
        }
        let vol = d * h * w;
        let count = n * vol;
        let (mean, invstd) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(format!(
                        "batch_norm in train mode needs at least 2 values per channel, got {count}"
                    )));
                }
                let xs = xv.data();
                let mut mean = vec![0f64; c];
                let mut var = vec![0f64; c];
                let plane = |b: usize, ch: usize| &xs[(b * c + ch) * vol..(b * c + ch + 1) * vol];
                for ch in 0..c {
                    let mu = (0..n).map(|b| lane_sum(plane(b, ch), |v| v)).sum::<f64>() / count as f64;
                    let ss: f64 = (0..n)
                        .map(|b| lane_sum(plane(b, ch), |v| (v - mu) * (v - mu)))
                        .sum();
                    mean[ch] = mu;
                    var[ch] = ss / count as f64;
                }
                let m = cfg.momentum;
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..c {
                    stats.mean[ch] = (m * stats.mean[ch] as f64 + (1.0 - m) * mean[ch]) as f32;
                    stats.var[ch] =
                        (m * stats.var[ch] as f64 + (1.0 - m) * var[ch] * unbias) as f32;
                }
                let invstd = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
                (mean, invstd)
            }
            Mode::Infer => (
                stats.mean.iter().map(|&m| m as f64).collect(),
                stats
                    .var
                    .iter()
                    .map(|&v| 1.0 / (v.max(0.0) as f64 + cfg.eps).sqrt())
                    .collect::<Vec<f64>>(),
            ),
        };
        let mut out = Vec::with_capacity(xv.numel());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * vol;
                let scale = gv.data()[ch].as_f64() * invstd[ch];
                let shift = bv.data()[ch].as_f64() - mean[ch] * scale;
                out.extend(
                    xv.data()[base..base + vol]
                        .iter()
                        .map(|&v| T::from_f64(v.as_f64() * scale + shift)),
                );
            }
        }
        (
            Tensor::from_parts(xv.shape().to_vec(), out),
            BatchNormRule {
                mean,
                invstd,
                batch_stats: mode == Mode::Train,
            },
        )
    };
    x.tape()
        .record("batch_norm", &[x, gamma, beta], out, Box::new(rule))
}

struct BatchNormRule {
    mean: Vec<f64>,
    invstd: Vec<f64>,
    batch_stats: bool,
}

impl<T: Real> GradFn<T> for BatchNormRule {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let [n, c, d, h, w] = x.dims5()?;
        let vol = d * h * w;
        let count = (n * vol) as f64;
        let mut sum_g = vec![0f64; c];
        let mut sum_gx = vec![0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * vol;
                let (mu, is) = (self.mean[ch], self.invstd[ch]);
                let (gs, xs) = (&g.data()[base..base + vol], &x.data()[base..base + vol]);
                sum_g[ch] += lane_sum(gs, |v| v);
                sum_gx[ch] += lane_sum2(gs, xs, |gv, xv| gv * (xv - mu) * is);
            }
        }
        let gx = needs[0].then(|| {
            let mut out = Vec::with_capacity(x.numel());
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * vol;
                    let (mu, is) = (self.mean[ch], self.invstd[ch]);
                    let gam = gamma.data()[ch].as_f64();
                    let xs = &x.data()[base..base + vol];
                    let gs = &g.data()[base..base + vol];
                    if self.batch_stats {
                        let k = gam * is / count;
                        out.extend(xs.iter().zip(gs).map(|(xv, gv)| {
                            let xhat = (xv.as_f64() - mu) * is;
                            T::from_f64(k * (count * gv.as_f64() - sum_g[ch] - xhat * sum_gx[ch]))
                        }));
                    } else {
                        out.extend(gs.iter().map(|gv| T::from_f64(gv.as_f64() * gam * is)));
                    }
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        });
        let gg = needs[1].then(|| {
            Tensor::from_parts(vec![c], sum_gx.iter().map(|&v| T::from_f64(v)).collect())
        });
        let gb = needs[2]
            .then(|| Tensor::from_parts(vec![c], sum_g.iter().map(|&v| T::from_f64(v)).collect()));
        Ok(vec![gx, gg, gb])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(
        x: Tensor<f64>,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Tensor<f64>> {
        let c = x.shape()[1];
        let tape = Tape::new();
        let y = batch_norm(
            tape.constant(x),
            tape.constant(Tensor::full(&[c], 1.0)),
            tape.constant(Tensor::zeros(&[c])),
            stats,
            mode,
            &BnConfig::default(),
        )?;
        let v = y.value().clone();
        Ok(v)
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        // Per channel values -1, 1 repeated: zero mean, unit variance.
        let x = Tensor::from_fn(&[2, 2, 1, 2, 2], |i| if i % 2 == 0 { -1.0 } else { 1.0 });
        let y = run(x.clone(), &mut RunningStats::new(2), Mode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 3.5);
        let y = run(x, &mut RunningStats::new(1), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(&[2, 3, 3, 4, 5], |_| rng.random_range(-4.0..7.0));
        let y = run(x, &mut RunningStats::new(3), Mode::Train).unwrap();
        let vol = 60;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| y.data()[(b * 3 + ch) * vol..][..vol].to_vec())
                .collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn train_updates_running_stats_with_momentum() {
        let x = Tensor::from_fn(&[1, 1, 1, 1, 4], |i| i as f64); // mean 1.5, unbiased var 5/3
        let mut stats = RunningStats::new(1);
        run(x, &mut stats, Mode::Train).unwrap();
        assert!((stats.mean[0] as f64 - 0.15).abs() < 1e-6);
        assert!((stats.var[0] as f64 - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn infer_mode_is_pure() {
        let x = Tensor::from_fn(&[1, 2, 2, 2, 2], |i| i as f64 * 0.3 - 1.0);
        let mut stats = RunningStats {
            mean: vec![0.5, -0.25],
            var: vec![2.0, 0.5],
        };
        let before = stats.clone();
        let a = run(x.clone(), &mut stats, Mode::Infer).unwrap();
        let b = run(x, &mut stats, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(stats, before);
    }

    #[test]
    fn degenerate_batch_is_rejected_in_train_mode() {
        let x = Tensor::full(&[1, 2, 1, 1, 1], 1.0);
        assert!(run(x.clone(), &mut RunningStats::new(2), Mode::Train).is_err());
        assert!(run(x, &mut RunningStats::new(2), Mode::Infer).is_ok());
    }
}
