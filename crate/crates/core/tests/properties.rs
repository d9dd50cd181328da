use proptest::prelude::*;
use varitune_core::*;

fn arb_image_pair() -> impl Strategy<Value = (Image64, Image64)> {
    (2usize..12, 2usize..12, prop_oneof![Just(1usize), Just(3usize)], any::<u64>()).prop_map(
        |(h, w, c, seed)| {
            let mut rng = SeededRng::new(seed);
            let a = Image::from_fn(h, w, c, |_, _, _| rng.uniform(0.0, 1.0));
            let b = Image::from_fn(h, w, c, |_, _, _| rng.uniform(-0.2, 1.2));
            (a, b)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric((a, b) in arb_image_pair()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn augment_preserves_psnr((a, b) in arb_image_pair()) {
        let base = psnr(&a, &b).unwrap();
        for op in Augment::ALL {
            let q = psnr(&a.augment(op), &b.augment(op)).unwrap();
            prop_assert!((q - base).abs() < 1e-9, "{:?}: {} vs {}", op, q, base);
        }
    }

    #[test]
    fn augment_preserves_value_multiset((a, _b) in arb_image_pair()) {
        let mut original: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        original.sort_unstable();
        for op in Augment::ALL {
            let mut permuted: Vec<u64> =
                a.augment(op).data().iter().map(|v| v.to_bits()).collect();
            permuted.sort_unstable();
            prop_assert_eq!(&permuted, &original);
        }
    }

    #[test]
    fn rng_streams_reproduce_bitwise(seed in any::<u64>()) {
        let mut a = SeededRng::new(seed);
        let mut b = SeededRng::new(seed);
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut ca = SeededRng::new(seed).child_label("x").child_index(3);
        let mut cb = SeededRng::new(seed).child_label("x").child_index(3);
        for _ in 0..16 {
            prop_assert_eq!(ca.normal().to_bits(), cb.normal().to_bits());
        }
    }

    #[test]
    fn noise_spec_json_roundtrips(seed in any::<u64>(), kind_idx in 0usize..7) {
        let kind = NoiseKind::ALL[kind_idx];
        let spec = sample_noise_spec(kind, &mut SeededRng::new(seed));
        let json = serde_json::to_string(&spec).unwrap();
        let back: NoiseSpec = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(spec, back);
    }

    #[test]
    fn hyper_decode_is_positive_on_active_slots(
        d in -10.0f64..10.0, l in -5.0f64..2.0, g in -10.0f64..10.0
    ) {
        let config = DenoiserConfig::new(DataTerm::Huber, PriorTerm::Tgv);
        let p = HyperVector::new([d, l, g], config.active_mask(), Domain::Learning);
        let s = p.to_solver();
        prop_assert!(s.delta().unwrap() > 0.0);
        prop_assert!(s.lambda().unwrap() > 0.0);
        prop_assert!(s.gamma().unwrap() > 0.0);
    }
}
