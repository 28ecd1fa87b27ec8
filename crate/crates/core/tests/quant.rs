use edgelab::quant::pack::{pack_codes, pack_mask, unpack_codes, unpack_mask};
use edgelab::quant::{
    model_bpw, ptq_model, quantize, quantize_masked, sparsify, top1_overlap, Granularity, PrecisionPlan, QuantSpec,
    Scheme, SparsitySpec, BIT_MENU,
};
use edgelab::tensor::Matrix;
use edgelab::{Error, ModelConfig, TinyLM};
use proptest::prelude::*;

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Symmetric), Just(Scheme::Asymmetric)]
}

fn code_range(bits: u8, scheme: Scheme) -> (i32, i32) {
    match scheme {
        Scheme::Symmetric => (-((1 << (bits - 1)) - 1), (1 << (bits - 1)) - 1),
        Scheme::Asymmetric => (0, (1 << bits) - 1),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn packed_codes_round_trip(bits in prop::sample::select(BIT_MENU.to_vec()), s in scheme(), raw in prop::collection::vec(any::<u32>(), 0..70)) {
        let (lo, hi) = code_range(bits, s);
        let codes: Vec<i32> = raw.iter().map(|&r| lo + (r % (hi - lo + 1) as u32) as i32).collect();
        let n = codes.len();
        let bytes = pack_codes(&codes, bits, s);
        prop_assert_eq!(bytes.len(), (n * bits as usize).div_ceil(8));
        prop_assert_eq!(unpack_codes(&bytes, n, bits, s).unwrap(), codes);
    }

    #[test]
    fn packed_masks_round_trip(mask in prop::collection::vec(any::<bool>(), 0..100)) {
        prop_assert_eq!(unpack_mask(&pack_mask(&mask), mask.len()), mask);
    }

    #[test]
    fn codes_stay_in_range_and_error_is_half_a_step(
        bits in prop::sample::select(BIT_MENU.to_vec()),
        s in scheme(),
        rows in 1usize..6,
        cols in 1usize..20,
        g in 1usize..8,
        data in prop::collection::vec(-4.0f32..4.0, 120),
    ) {
        let m = Matrix::from_vec(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let spec = QuantSpec::new(bits, s, Granularity::PerGroup { g: g.min(cols) });
        let qt = quantize(&m, &spec).unwrap();
        let (lo, hi) = code_range(bits, s);
        prop_assert!(qt.codes().iter().all(|c| (lo..=hi).contains(c)));
        let back = qt.dequantize();
        for (gi, range) in spec.group_ranges(rows, cols).into_iter().enumerate() {
            let half = qt.scales()[gi] as f64 / 2.0 + 1e-6;
            for i in range {
                prop_assert!(((back.data[i] - m.data[i]) as f64).abs() <= half);
            }
        }
    }
}

#[test]
fn structured_sparsity_keeps_n_per_block() {
    let data: Vec<f32> = (0..64).map(|i| ((i * 37 % 64) as f32 - 32.0) / 8.0).collect();
    let m = Matrix::from_vec(4, 16, data).unwrap();
    let spec = SparsitySpec::Structured { n: 2, m: 4 };
    let (sparse, mask) = sparsify(&m, &spec).unwrap();
    for block in mask.chunks(4) {
        assert_eq!(block.iter().filter(|&&k| k).count(), 2);
    }
    for (i, (&kept, block)) in mask.iter().zip(m.data.chunks(4).flat_map(|b| std::iter::repeat_n(b, 4))).enumerate() {
        let v = m.data[i].abs();
        if kept {
            assert_eq!(sparse.data[i], m.data[i]);
            assert!(block.iter().filter(|x| x.abs() > v).count() < 2);
        } else {
            assert_eq!(sparse.data[i], 0.0);
        }
    }
    // C(4, 2) = 6 patterns need 3 bits per block of four
    assert_eq!(spec.mask_bits(64), 16 * 3);
    let qt = quantize_masked(&sparse, &QuantSpec::symmetric_per_group(4, 16), Some(mask), Some(spec)).unwrap();
    assert_eq!(qt.kept_count(), 32);
    assert!(SparsitySpec::Structured { n: 5, m: 4 }.validate().is_err());
    assert!(SparsitySpec::Unstructured { keep_ratio: 0.0 }.validate().is_err());
}

#[test]
fn ptq_freezes_every_matrix_and_matches_the_plan() {
    let m = TinyLM::init(ModelConfig::new(48, 32, 2, 4, 2), 5).unwrap();
    let plan = PrecisionPlan::uniform(&m, QuantSpec::symmetric_per_group(4, 32));
    let q = ptq_model(&m, &plan).unwrap();
    for id in q.matrix_slots() {
        let qt = q.weight(id).unwrap().quant().expect("quantized");
        assert!(qt.is_frozen());
        let mut copy = qt.clone();
        assert!(matches!(copy.set_scale(0, 1.0), Err(Error::Contract(_))));
    }
    assert_eq!(model_bpw(&q), plan.bpw(&m).unwrap());
    assert_eq!(plan.bpw(&m).unwrap(), 4.5);
    assert_eq!(model_bpw(&m), 32.0);

    let seqs: Vec<Vec<u32>> = (0..4).map(|s| (0..12).map(|i| (i * 5 + s * 11) % 48).collect()).collect();
    let overlap = top1_overlap(&m, &q, &seqs).unwrap();
    assert!((0.0..=1.0).contains(&overlap));
    assert_eq!(top1_overlap(&q, &q, &seqs).unwrap(), 1.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let m = Matrix::filled(2, 8, 1.0);
    assert!(quantize(&m, &QuantSpec::symmetric_per_group(5, 4)).is_err());
    assert!(quantize(&m, &QuantSpec::symmetric_per_group(4, 0)).is_err());
    assert!(quantize(&m, &QuantSpec::symmetric_per_group(4, 9)).is_err());
}
