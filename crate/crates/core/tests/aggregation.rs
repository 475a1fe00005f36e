use proptest::prelude::*;
use trafprof_core::dataset::{aggregate_subject, EnrichedSession};
use trafprof_core::dpi::DpiScan;
use trafprof_core::features::StatFeatures;
use trafprof_core::stats::Summary;
use trafprof_core::{DomainInfo, FeatureSchema, LabelSet, SessionFeatures, Taxonomy, Transport};

fn session(bytes: u64, port: u16, category: Option<&str>, forms: Option<u32>) -> EnrichedSession {
    EnrichedSession {
        features: SessionFeatures {
            session_id: format!("s-{bytes}"),
            subject_id: "s".into(),
            transport: Transport::Tcp,
            server_port: port,
            start_time: 0,
            stat: StatFeatures {
                tx: Summary::of(&[bytes as f64 / 3.0, 7.0]),
                rx: Summary::default(),
                bytes_total: bytes,
                bytes_tx: bytes,
                bytes_rx: 0,
                tx_rx_ratio: bytes as f64,
            },
            app: None,
            dpi: forms.map(|form_count| DpiScan { form_count, ..DpiScan::default() }),
            domain_name: None,
            bytes_total: bytes,
        },
        domain: category.map(|c| DomainInfo {
            general_category: c.into(),
            popularity_rank: Some((bytes % 1000 + 1) as u32),
            ..DomainInfo::unknown()
        }),
    }
}

fn labels() -> LabelSet {
    LabelSet::from_indices([0; 10]).unwrap()
}

#[test]
fn category_incidence_from_fifty_sessions() {
    let taxonomy = Taxonomy::builtin();
    let schema = FeatureSchema::new(&taxonomy);
    let sessions: Vec<_> = (0..50).map(|i| session(100 + i, 443, Some(if i < 30 { "SEARCH" } else { "NEWS" }), None)).collect();
    let record = aggregate_subject(&sessions, "s", labels(), &taxonomy).unwrap();
    let get = |name: &str| record.features[schema.names().position(|n| n == name).unwrap()];
    assert_eq!(get("category_search"), Some(0.6));
    assert_eq!(get("category_news"), Some(0.4));
    assert_eq!(get("category_unknown"), Some(0.0));
    assert_eq!(record.features.len(), schema.len());
}

fn arbitrary_session() -> impl Strategy<Value = EnrichedSession> {
    (
        1u64..100_000,
        prop_oneof![Just(80u16), Just(443), Just(5228), Just(53)],
        prop::option::of(prop_oneof![Just("NEWS"), Just("SEARCH"), Just("UNKNOWN")]),
        prop::option::of(0u32..4),
    )
        .prop_map(|(b, p, c, f)| session(b, p, c, f))
}

proptest! {
    #[test]
    fn session_order_is_irrelevant(sessions in prop::collection::vec(arbitrary_session(), 1..30), seed in any::<u64>()) {
        let taxonomy = Taxonomy::builtin();
        let mut shuffled = sessions.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = aggregate_subject(&sessions, "s", labels(), &taxonomy).unwrap();
        let b = aggregate_subject(&shuffled, "s", labels(), &taxonomy).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn aggregates_are_bounded(sessions in prop::collection::vec(arbitrary_session(), 1..30)) {
        let taxonomy = Taxonomy::builtin();
        let schema = FeatureSchema::new(&taxonomy);
        let r = aggregate_subject(&sessions, "s", labels(), &taxonomy).unwrap();
        let get = |name: &str| r.features[schema.names().position(|n| n == name).unwrap()].unwrap();
        prop_assert!(get("bytes_total_min") <= get("bytes_total_median"));
        prop_assert!(get("bytes_total_median") <= get("bytes_total_max"));
        prop_assert!(get("bytes_total_min") <= get("bytes_total_avg") && get("bytes_total_avg") <= get("bytes_total_max"));
        let fracs = get("frac_80") + get("frac_443") + get("frac_5228");
        prop_assert!(fracs <= 1.0 + 1e-12);
        for group in schema.incidence_groups(&taxonomy) {
            let total: f64 = r.features[group.1].iter().map(|v| v.unwrap()).sum();
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12, "{}: {total}", group.0);
        }
    }
}
