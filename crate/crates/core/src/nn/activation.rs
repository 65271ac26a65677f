use rand::Rng;

use crate::autodiff::{GradFn, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::real::Real;
use crate::tensor::Tensor;

pub fn relu<T: Real>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let out = {
        let v = x.value();
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        Tensor::from_parts(v.shape().to_vec(), data)
    };
    x.tape().record("relu", &[x], out, Box::new(ReluRule))
}

struct ReluRule;

impl<T: Real> GradFn<T> for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = g
            .data()
            .iter()
            .zip(inputs[0].data())
            .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity in infer
/// mode or at rate 0.
pub fn dropout<'t, T: Real, R: Rng + ?Sized>(
    x: Var<'t, T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let (out, keep) = {
        let v = x.value();
        let keep: Vec<bool> = (0..v.numel()).map(|_| rng.random::<f64>() >= rate).collect();
        let data = v
            .data()
            .iter()
            .zip(&keep)
            .map(|(&a, &k)| if k { a * scale } else { T::zero() })
            .collect();
        (Tensor::from_parts(v.shape().to_vec(), data), keep)
    };
    x.tape()
        .record("dropout", &[x], out, Box::new(DropoutRule { keep, scale }))
}

struct DropoutRule<T> {
    keep: Vec<bool>,
    scale: T,
}

impl<T: Real> GradFn<T> for DropoutRule<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = g
            .data()
            .iter()
            .zip(&self.keep)
            .map(|(&g, &k)| if k { g * self.scale } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::from_parts(g.shape().to_vec(), data))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_hand_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(relu(x).unwrap().value().data(), &[0.0, 0.0, 2.0]);
        let pos = tape.constant(Tensor::new(&[3], vec![0.0, 1.0, 5.0]).unwrap());
        assert_eq!(*relu(pos).unwrap().value(), *pos.value());
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[4], vec![-1.0, 0.5, 2.0, -0.1]).unwrap(), true);
        relu(x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[100], 1.5));
        for mode in [Mode::Train, Mode::Infer] {
            let y = dropout(x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(*y.value(), *x.value());
        }
        let y = dropout(x, 0.2, Mode::Infer, &mut rng).unwrap();
        assert_eq!(*y.value(), *x.value());
        assert!(dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_mask() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1000], 1.0));
        let a = dropout(x, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = dropout(x, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(*a.value(), *b.value());
    }

    #[test]
    fn dropout_statistics_match_bernoulli() {
        let n = 100_000usize;
        let rate = 0.2;
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let y = dropout(x, rate, Mode::Train, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let v = y.value();
        let mean = v.sum_f64() / n as f64;
        let sigma_mean = (rate / ((1.0 - rate) * n as f64)).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma_mean, "mean {mean}");
        let zeros = v.data().iter().filter(|&&a| a == 0.0).count() as f64 / n as f64;
        let sigma_frac = (rate * (1.0 - rate) / n as f64).sqrt();
        assert!((zeros - rate).abs() < 3.0 * sigma_frac, "zero fraction {zeros}");
    }
}
