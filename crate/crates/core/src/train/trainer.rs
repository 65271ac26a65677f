use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_network, Forward, ForwardOptions, HyperParams, NetworkSpec, ParamStore};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::cross_entropy;
use crate::tensor::Tensor;
use crate::train::config::TrainConfig;
use crate::train::normalize::normalize_volume;
use crate::train::optim::{adam_step, lr_at, OptimState};
use crate::train::patch::sample_patch;
use crate::volume::Sample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    pub optim: OptimState,
    pub trace: Vec<TraceRow>,
}

pub enum TrainEvent<'a> {
    Iteration(TraceRow),
    /// Fired every `checkpoint_every` iterations and after the last one.
    Checkpoint {
        iter: u64,
        spec: &'a NetworkSpec,
        store: &'a ParamStore,
    },
}

/// Loss trace as `iter,lr,loss` CSV.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,lr,loss\n");
    for r in trace {
        s.push_str(&format!("{},{:e},{}\n", r.iter, r.lr, r.loss));
    }
    s
}

/// Normalizes every modality of a sample.
pub fn normalize_sample(s: &Sample) -> Result<Sample> {
    let modalities = s
        .modalities()
        .iter()
        .map(normalize_volume)
        .collect::<Result<Vec<_>>>()?;
    Sample::new(modalities, s.labels().clone())
}

/// Three independent generator streams derived from one seed: parameter
/// initialization, patch sampling and dropout masks.
fn streams(seed: u64) -> [ChaCha8Rng; 3] {
    [0, 1, 2].map(|s| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    })
}

pub fn train(dataset: &[Sample], cfg: &TrainConfig, hp: &HyperParams) -> Result<TrainOutcome> {
    train_with(dataset, cfg, hp, &mut |_| Ok(()))
}

/// Mini-batch training: each iteration draws `batch_size` patches from
/// samples chosen uniformly with replacement, runs a train-mode forward
/// pass, and applies one Adam step at the scheduled learning rate.
pub fn train_with(
    dataset: &[Sample],
    cfg: &TrainConfig,
    hp: &HyperParams,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    cfg.validate(hp)?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.modalities().len() != hp.num_modalities {
            return Err(Error::invalid(format!(
                "sample {i} has {} modalities, network expects {}",
                s.modalities().len(),
                hp.num_modalities
            )));
        }
        if s.dims().iter().any(|&d| d < cfg.patch_size) {
            return Err(Error::invalid(format!(
                "sample {i} dims {:?} are smaller than patch size {}",
                s.dims(),
                cfg.patch_size
            )));
        }
        if let Some(&l) = s.labels().labels().iter().find(|&&l| l as usize >= hp.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: hp.num_classes,
            });
        }
    }
    let data: Vec<Sample> = dataset.iter().map(normalize_sample).collect::<Result<_>>()?;
    let [mut init_rng, mut data_rng, mut drop_rng] = streams(cfg.seed);
    let (spec, mut store) = build_network(hp, &mut init_rng)?;
    let mut optim = OptimState::new();
    let mut trace = Vec::with_capacity(cfg.max_iters as usize);
    let opts = ForwardOptions::train().with_kernel(&cfg.conv_kernel);
    let (m, p) = (hp.num_modalities, cfg.patch_size);

    for iter in 0..cfg.max_iters {
        let mut input = Vec::with_capacity(cfg.batch_size * m * p * p * p);
        let mut labels = Vec::with_capacity(cfg.batch_size * p * p * p);
        for _ in 0..cfg.batch_size {
            let s = &data[data_rng.random_range(0..data.len())];
            let patch = sample_patch(s, p, &mut data_rng)?;
            input.extend_from_slice(patch.input.data());
            labels.extend_from_slice(&patch.labels);
        }
        let x = Tensor::new(&[cfg.batch_size, m, p, p, p], input)?;
        let lr = lr_at(iter, cfg);

        let loss = train_step(&spec, &mut store, &mut optim, x, &labels, lr, cfg, &opts, &mut drop_rng)
            .map_err(|e| match e {
                Error::Diverged { loss, .. } => Error::Diverged { iter, loss },
                other => other,
            })?;

        let row = TraceRow { iter, lr, loss };
        trace.push(row);
        observer(TrainEvent::Iteration(row))?;
        let done = iter + 1;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.max_iters {
            observer(TrainEvent::Checkpoint {
                iter: done,
                spec: &spec,
                store: &store,
            })?;
        }
    }
    Ok(TrainOutcome {
        spec,
        store,
        optim,
        trace,
    })
}

/// One optimization step on a prepared batch: train-mode forward, cross
/// entropy, backward, Adam at `lr`, then the BN running-statistic update.
/// Returns the loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    spec: &NetworkSpec,
    store: &mut ParamStore,
    optim: &mut OptimState,
    x: Tensor,
    labels: &[u8],
    lr: f64,
    cfg: &TrainConfig,
    opts: &ForwardOptions,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let (loss, grads, bn) = {
        let tape = Tape::new();
        let mut fwd = Forward::new(spec, store, &tape, opts, Some(rng))?;
        let logits = fwd.run(tape.constant(x)).map_err(|e| diverged(e, 0))?;
        let loss = cross_entropy(logits, labels).map_err(|e| diverged(e, 0))?;
        let value = loss.scalar_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Diverged { iter: 0, loss: value });
        }
        loss.backward()?;
        let grads = fwd.take_gradients();
        (value, grads, fwd.into_bn_updates())
    };
    adam_step(store, &grads, optim, lr, cfg).map_err(|e| diverged(e, 0))?;
    store.apply_bn_updates(bn)?;
    Ok(loss)
}

fn diverged(e: Error, iter: u64) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            iter,
            loss: f64::NAN,
        },
        other => other,
    }
}
