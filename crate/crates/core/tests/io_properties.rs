use denseseg::io::{decode_vvol, encode_vvol, gen_phantom, VvolData};
use denseseg::volume::{LabelVolume, Volume};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(1usize..=9)
}

fn spacing() -> impl Strategy<Value = [f32; 3]> {
    prop::array::uniform3(0.01f32..10.0)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn intensity_round_trip_is_bit_exact(d in dims(), sp in spacing(), bits in prop::collection::vec(any::<u32>(), 729)) {
        let n = d.iter().product::<usize>();
        let data: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b)).collect();
        let v = Volume::new(d, sp, data).unwrap();
        let back = decode_vvol(&encode_vvol(&VvolData::Intensity(v.clone())).unwrap()).unwrap();
        let VvolData::Intensity(w) = back else {
            return Err(TestCaseError::fail("dtype changed"));
        };
        prop_assert_eq!(w.dims(), d);
        prop_assert_eq!(w.spacing().map(f32::to_bits), sp.map(f32::to_bits));
        let same = w.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn label_round_trip_is_exact(d in dims(), sp in spacing(), raw in prop::collection::vec(0u8..4, 729)) {
        let n = d.iter().product::<usize>();
        let v = LabelVolume::new(d, sp, raw[..n].to_vec()).unwrap();
        let back = decode_vvol(&encode_vvol(&VvolData::Labels(v.clone())).unwrap()).unwrap();
        prop_assert_eq!(back, VvolData::Labels(v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(6) })]

    #[test]
    fn phantom_depends_only_on_its_arguments(seed in any::<u64>(), d in prop::array::uniform3(32usize..=36), noise in 0.0f32..0.2) {
        let a = gen_phantom(seed, d, noise).unwrap();
        let b = gen_phantom(seed, d, noise).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(gen_phantom(seed.wrapping_add(1), d, noise).unwrap(), a);
    }
}
