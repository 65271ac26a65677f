//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen elements of each input.
    pub max_elements_per_input: Option<usize>,
    /// Skip elements whose one-sided differences disagree, which happens
    /// when a ReLU or max kink lies within `eps` of the sample point.
    pub skip_kinks: bool,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(eps: f64, tol: f64) -> Self {
        GradCheckOptions {
            eps,
            tol,
            max_elements_per_input: None,
            skip_kinks: false,
            seed: 0,
        }
    }

    pub fn sampled(mut self, per_input: usize, seed: u64) -> Self {
        self.max_elements_per_input = Some(per_input);
        self.seed = seed;
        self
    }

    pub fn skipping_kinks(mut self) -> Self {
        self.skip_kinks = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, element)` where the largest relative error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
    pub pass: bool,
}

/// Compares tape gradients of the scalar function `f` against central
/// differences at every element of every input.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    grad_check_with(f, inputs, &GradCheckOptions::new(eps, tol))
}

pub fn grad_check_with<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&tape, &leaves)?;
        if out.value().numel() != 1 {
            return Err(Error::invalid(format!(
                "grad_check needs a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        out.backward()?;
        leaves
            .iter()
            .zip(inputs)
            .map(|(l, t)| l.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &leaves)?;
        out.scalar_f64()
            .ok_or_else(|| Error::invalid("grad_check needs a scalar function"))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let f0 = if opts.skip_kinks { eval(&work)? } else { 0.0 };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        pass: true,
    };

    for i in 0..inputs.len() {
        let numel = inputs[i].numel();
        let elements: Vec<usize> = match opts.max_elements_per_input {
            Some(k) if k < numel => {
                let mut v = sample(&mut rng, numel, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..numel).collect(),
        };
        for j in elements {
            let orig = inputs[i].data()[j];
            let plus = T::from_f64(orig.as_f64() + opts.eps);
            let minus = T::from_f64(orig.as_f64() - opts.eps);
            work[i].data_mut()[j] = plus;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = minus;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;

            if opts.skip_kinks {
                let fwd = (fp - f0) / (plus.as_f64() - orig.as_f64());
                let bwd = (f0 - fm) / (orig.as_f64() - minus.as_f64());
                if (fwd - bwd).abs() > opts.tol * fwd.abs().max(bwd.abs()).max(1e-8) {
                    report.skipped += 1;
                    continue;
                }
            }

            let numeric = (fp - fm) / (plus.as_f64() - minus.as_f64());
            let a = analytic[i].data()[j].as_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.pass = report.max_rel_err <= opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradFn;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_is_exact() {
        let r = grad_check(|_, x| x[0].sum(), &[random(&[3, 4], 1)], 1e-3, 1e-6).unwrap();
        assert!(r.pass && r.max_rel_err < 1e-6, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn relu_sum_off_kink() {
        // Values at least 0.1 from zero.
        let x = random(&[50], 2).cast::<f64>();
        let x = Tensor::from_fn(&[50], |i| {
            let v = x.data()[i];
            v.signum() * (v.abs() + 0.1)
        });
        let r = grad_check(|_, x| x[0].maximum(0.0)?.sum(), &[x], 1e-3, 1e-3).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn fan_out_gradient_matches_finite_differences() {
        let x = random(&[6], 3);
        let w = random(&[6], 4);
        let r = grad_check(
            move |_, v| {
                let a = v[0].mul(v[0])?;
                let b = v[0].mul(3.0)?;
                crate::autodiff::weighted_sum(a.add(b)?, &w)
            },
            &[x],
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    struct WrongDouble;
    impl GradFn<f64> for WrongDouble {
        fn name(&self) -> &'static str {
            "wrong_double"
        }
        fn backward(
            &self,
            _inputs: &[&Tensor<f64>],
            _output: &Tensor<f64>,
            g: &Tensor<f64>,
            _needs: &[bool],
        ) -> Result<Vec<Option<Tensor<f64>>>> {
            // True derivative of 2x is 2.
            Ok(vec![Some(Tensor::full(g.shape(), 3.0 * g.data()[0]))])
        }
    }

    #[test]
    fn corrupted_rule_fails() {
        let r = grad_check(
            |tape, x| {
                let v = x[0].value().data().iter().map(|a| 2.0 * a).collect();
                let out = Tensor::new(&x[0].shape(), v)?;
                tape.record("wrong_double", &[x[0]], out, Box::new(WrongDouble))?
                    .sum()
            },
            &[random(&[4], 5)],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let err = grad_check(|_, x| Ok(x[0]), &[random(&[3], 6)], 1e-3, 1e-3);
        assert!(err.is_err());
    }
}
