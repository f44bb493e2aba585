use proptest::prelude::*;

use edgecoop::data::{from_cache_bytes, gen_synthetic, parse_idx, to_cache_bytes, to_idx};
use edgecoop::gate::{gate_from_bytes, gate_to_bytes, train_gate, GateHyper, GateKind, GateLabel, GateSample};
use edgecoop::model_spec::{describe, param_count, realize, LayerSpec, ModelSpec};
use edgecoop::nn::serialize;
use edgecoop::runtime::{decode_message, encode_message};
use edgecoop::Error;

fn layer() -> impl Strategy<Value = LayerSpec> {
    prop_oneof![
        (1usize..4, 1usize..3, 0usize..2, 1usize..6).prop_map(|(k, s, p, o)| LayerSpec::conv(2 * k - 1, s, p, o)),
        (1usize..20).prop_map(LayerSpec::dense),
        Just(LayerSpec::relu()),
        Just(LayerSpec::pool()),
    ]
}

fn spec() -> impl Strategy<Value = ModelSpec> {
    (proptest::collection::vec(layer(), 0..5), 2usize..6).prop_filter_map("invalid geometry", |(mut layers, classes)| {
        layers.push(LayerSpec::dense(classes));
        let spec = ModelSpec::new(layers, vec![1, 8, 8], classes).ok()?;
        realize(&spec, 0).ok()?;
        Some(spec)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn spec_text_round_trips(s in spec()) {
        let back: ModelSpec = s.to_text().parse().unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn realized_network_describes_back(s in spec(), seed in any::<u64>()) {
        let r = realize(&s, seed).unwrap();
        let described = describe(&r.network);
        let again = realize(&described, seed).unwrap();
        prop_assert_eq!(param_count(&again.network), param_count(&r.network));
        prop_assert_eq!(describe(&again.network), described);
    }

    #[test]
    fn network_bytes_round_trip(s in spec(), seed in any::<u64>()) {
        let net = realize(&s, seed).unwrap().network;
        let bytes = serialize::to_bytes(&net);
        let back = serialize::from_bytes(&bytes).unwrap();
        prop_assert_eq!(serialize::to_bytes(&back), bytes);
    }

    #[test]
    fn truncated_network_bytes_are_rejected(s in spec(), cut in 0.0f64..1.0) {
        let bytes = serialize::to_bytes(&realize(&s, 1).unwrap().network);
        let n = (cut * bytes.len() as f64) as usize;
        prop_assert!(serialize::from_bytes(&bytes[..n]).is_err());
    }

    #[test]
    fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_message(&bytes);
        let mut framed = b"ECWP\x01\x00".to_vec();
        framed.extend(&bytes);
        if let Ok(m) = decode_message(&framed) {
            prop_assert_eq!(encode_message(&m), framed);
        }
    }

    #[test]
    fn gate_bytes_round_trip(seed in any::<u64>(), kind in 0usize..3, width in 1usize..6) {
        let kind = [GateKind::LinearSvm, GateKind::Knn, GateKind::RandomForest][kind];
        let samples: Vec<GateSample> = (0..30)
            .map(|i| GateSample {
                features: (0..width).map(|j| ((i * 7 + j * 3 + seed as usize % 11) % 13) as f64 - 6.0 + i as f64 * 0.1).collect(),
                label: if i % 3 == 0 { GateLabel::Complex } else { GateLabel::Normal },
                source_index: i,
            })
            .collect();
        let gate = train_gate(&samples, kind, &GateHyper::default(), seed).unwrap();
        let bytes = gate_to_bytes(&gate);
        let back = gate_from_bytes(&bytes).unwrap();
        prop_assert_eq!(gate_to_bytes(&back), bytes);
        for s in &samples {
            prop_assert_eq!(back.predict(&s.features), gate.predict(&s.features));
        }
    }
}

#[test]
fn dataset_formats_round_trip() {
    let data = gen_synthetic(3, 10, &[1, 4, 4], 2.0, 9).unwrap();
    let back = from_cache_bytes(&to_cache_bytes(&data)).unwrap();
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.samples().data(), data.samples().data());
    assert_eq!(back.splits(), data.splits());

    let (images, labels) = to_idx(&data).unwrap();
    let idx = parse_idx(&images, &labels).unwrap();
    assert_eq!(idx.labels(), data.labels());
    assert_eq!(idx.sample_dims(), &[1, 4, 4]);
}

#[test]
fn corrupt_cache_reports_offset() {
    let data = gen_synthetic(2, 4, &[3], 1.0, 0).unwrap();
    let mut bytes = to_cache_bytes(&data);
    bytes[0] = b'X';
    assert!(matches!(from_cache_bytes(&bytes), Err(Error::Parse { offset: 0, .. })));
}
