use denseseg::arch::{audit, build_network, Forward, ForwardOptions, HyperParams, NetworkSpec};
use denseseg::autodiff::Tape;
use denseseg::verify::tiny_hyper;
use denseseg::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hyper() -> impl Strategy<Value = HyperParams> {
    (1..=16usize, 1..=48usize, 1..=5usize, 1..=8usize).prop_map(|(k, k0, l, path)| HyperParams {
        growth_rate: k,
        stem_channels: k0,
        layers_per_block: l,
        upsample_path_channels: path,
        ..Default::default()
    })
}

fn noise(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn composite_inputs_grow_by_the_growth_rate(hp in hyper()) {
        let report = audit(&NetworkSpec::build(&hp).unwrap()).unwrap();
        prop_assert_eq!(report.layer_inputs.len(), hp.num_blocks * hp.layers_per_block);
        for l in &report.layer_inputs {
            prop_assert_eq!(l.measured, l.expected, "block {} layer {}", l.block, l.layer);
        }
    }

    #[test]
    fn parameter_total_ignores_initialization(hp in hyper(), a in any::<u64>(), b in any::<u64>()) {
        let (spec_a, store_a) = build_network(&hp, &mut ChaCha8Rng::seed_from_u64(a)).unwrap();
        let (spec_b, store_b) = build_network(&hp, &mut ChaCha8Rng::seed_from_u64(b)).unwrap();
        let total = audit(&spec_a).unwrap().total_params;
        prop_assert_eq!(total, audit(&spec_b).unwrap().total_params);
        prop_assert_eq!(total, store_a.learned_elements());
        prop_assert_eq!(total, store_b.learned_elements());
    }
}

#[test]
fn output_matches_input_grid_for_every_divisible_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (spec, store) = build_network(&tiny_hyper(), &mut rng).unwrap();
    for size in [16, 32, 48, 64] {
        let tape = Tape::new();
        let mut fwd = Forward::new(&spec, &store, &tape, &ForwardOptions::infer(), None).unwrap();
        let y = fwd.run(tape.constant(noise(&[1, 2, size, size, size], &mut rng))).unwrap();
        assert_eq!(y.shape(), vec![1, 4, size, size, size], "size {size}");
    }
    let (spec, store) = build_network(&HyperParams::default(), &mut rng).unwrap();
    let tape = Tape::new();
    let mut fwd = Forward::new(&spec, &store, &tape, &ForwardOptions::infer(), None).unwrap();
    let y = fwd.run(tape.constant(noise(&[1, 2, 16, 16, 16], &mut rng))).unwrap();
    assert_eq!(y.shape(), vec![1, 4, 16, 16, 16]);
}

/// Runs dense block 1 through the last dense block, returning each block
/// output.
fn block_outputs(spec: &NetworkSpec, store: &denseseg::arch::ParamStore, x: &Tensor) -> Vec<Vec<f32>> {
    let tape = Tape::new();
    let mut fwd = Forward::new(spec, store, &tape, &ForwardOptions::infer(), None).unwrap();
    let mut h = tape.constant(x.clone());
    let mut outs = Vec::new();
    for b in 0..spec.blocks.len() {
        h = fwd.dense_block(h, b).unwrap();
        outs.push(h.value().data().to_vec());
        if b < spec.transitions.len() {
            h = fwd.transition_block(h, b).unwrap();
        }
    }
    outs
}

#[test]
fn perturbing_block_one_input_reaches_every_block() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = HyperParams {
            growth_rate: 4,
            stem_channels: 8,
            layers_per_block: 2,
            upsample_path_channels: 2,
            ..Default::default()
        };
        let (spec, store) = build_network(&hp, &mut rng).unwrap();
        let first = &spec.blocks[0];
        let c = spec.descriptors()[first.input].out_channels;
        let e = 32 / first.scale;
        let x = noise(&[1, c, e, e, e], &mut rng);
        let bumped = Tensor::new(
            x.shape(),
            x.data().iter().map(|v| v + rng.random_range(-0.5f32..0.5)).collect(),
        )
        .unwrap();
        let (a, b) = (block_outputs(&spec, &store, &x), block_outputs(&spec, &store, &bumped));
        assert_eq!(a.len(), hp.num_blocks);
        for (i, (oa, ob)) in a.iter().zip(&b).enumerate() {
            let diff = oa.iter().zip(ob).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
            assert!(diff > 0.0, "seed {seed}: block {} output unchanged", i + 1);
        }
    }
}
