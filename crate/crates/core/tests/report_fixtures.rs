use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pem_core::model::AffectTrace;
use pem_core::physio::Segment;
use pem_core::report::{table_means, EvalBundle, Source, UserEval};

/// Three 5 min levels at 4 Hz; per-level normal draws clamped to [0, 1].
fn levels(params: [(f64, f64); 3], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params
        .iter()
        .flat_map(|&(mean, std)| {
            let d = Normal::new(mean, std).unwrap();
            (0..1200).map(|_| d.sample(&mut rng).clamp(0.0, 1.0)).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn user_13_rankings() {
    let model = levels([(0.30, 0.06), (0.45, 0.09), (0.29, 0.05)], 13);
    let eda = levels([(0.96, 0.05), (0.45, 0.29), (0.02, 0.01)], 14);
    let n = model.len();
    let user = UserEval {
        user: "13".into(),
        trace: AffectTrace {
            frame_index: (3..3 + n).collect(),
            timestamp_ms: (0..n as u64).map(|i| i * 250).collect(),
            values: model,
        },
        eda_rate: 4.0,
        eda,
        segments: (0..3)
            .map(|k| Segment::new((k + 1).to_string(), k as f64 * 300_000.0, (k + 1) as f64 * 300_000.0))
            .collect(),
    };
    let table = table_means(&EvalBundle { users: vec![user] }).unwrap();
    let row = |source| table.rows.iter().find(|r| r.source == source).unwrap();
    assert_eq!(row(Source::Model).ranking.notation, "2>1>3");
    assert_eq!(row(Source::Eda).ranking.notation, "1>2>3");
    let means: Vec<f64> = row(Source::Model).cells.iter().map(|c| c.mean).collect();
    for (m, want) in means.iter().zip([0.30, 0.45, 0.29]) {
        assert!((m - want).abs() < 0.01, "{means:?}");
    }
}
