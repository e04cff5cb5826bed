use proptest::prelude::*;

use tcftl::densities::{BankCell, ConditionalPdfBank, EmpiricalPdf, PoseStratum, StratumPdf};
use tcftl::measurements::{CarriagePair, CarriageState, Holding, PoseAngle, Posture};
use tcftl::scansim::{simulate_windows, RecordingPolicy, SamplingModel, ScanModel};

fn hand() -> CarriagePair {
    let s = CarriageState::new(Posture::Standing, Holding::Hand);
    CarriagePair::new(s, s)
}

fn stratum(angle: i64, pdf: EmpiricalPdf) -> StratumPdf {
    StratumPdf {
        pose: PoseStratum {
            user1: PoseAngle::ZERO,
            user2: PoseAngle::new(angle).unwrap(),
        },
        weight: 1.0,
        pdf,
    }
}

/// Two pose strata 20 dB apart at 3 ft.
fn two_stratum_bank() -> ConditionalPdfBank {
    let strong = EmpiricalPdf::from_weights(-62, vec![1.0, 2.0, 3.0, 2.0, 1.0], 9).unwrap();
    let weak = EmpiricalPdf::from_weights(-82, vec![1.0, 2.0, 3.0, 2.0, 1.0], 9).unwrap();
    let pooled = EmpiricalPdf::mixture([(0.5, &strong), (0.5, &weak)]).unwrap();
    ConditionalPdfBank::from_cells(vec![BankCell {
        distance: 3.0,
        carriage: hand(),
        pdf: pooled,
        strata: vec![stratum(0, strong), stratum(180, weak)],
    }])
    .unwrap()
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn within_scan_correlation_exceeds_cross_scan() {
    let bank = two_stratum_bank();
    let windows = simulate_windows(
        &ScanModel::default(),
        &SamplingModel::correlated(4),
        &bank,
        3.0,
        hand(),
        17,
        100_000,
    )
    .unwrap();
    let within: Vec<(f64, f64)> = windows.iter().map(|w| (w[0] as f64, w[1] as f64)).collect();
    let across: Vec<(f64, f64)> = windows.iter().map(|w| (w[0] as f64, w[4] as f64)).collect();
    let (r_in, r_x) = (correlation(&within), correlation(&across));
    assert!(r_in > r_x + 0.5, "within {r_in}, across {r_x}");
    assert!(r_x.abs() < 0.02, "across-scan correlation {r_x}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn min_attenuation_dominates_first_chirp(
        weights in prop::collection::vec(0.01f64..1.0, 2..12),
        lo in -100i32..-50,
        seed in any::<u64>(),
    ) {
        let pdf = EmpiricalPdf::from_weights(lo, weights, 0).unwrap();
        let bank = ConditionalPdfBank::from_pdfs(vec![(3.0, hand(), pdf)]).unwrap();
        let model = ScanModel::default();
        let first = SamplingModel::default();
        let min_att = SamplingModel { policy: RecordingPolicy::MinAttenuation, ..first };
        let a = simulate_windows(&model, &first, &bank, 3.0, hand(), seed, 500).unwrap();
        let b = simulate_windows(&model, &min_att, &bank, 3.0, hand(), seed, 500).unwrap();
        // same seed: the first chirp of each scan is one of the chirps the maximum is taken over
        for (wa, wb) in a.iter().zip(&b) {
            prop_assert_eq!(wa.len(), 6);
            for (x, y) in wa.iter().zip(wb) {
                prop_assert!(y >= x);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let bank = two_stratum_bank();
        let s = SamplingModel::correlated(3);
        let a = simulate_windows(&ScanModel::default(), &s, &bank, 3.0, hand(), seed, 50).unwrap();
        let b = simulate_windows(&ScanModel::default(), &s, &bank, 3.0, hand(), seed, 50).unwrap();
        prop_assert_eq!(a, b);
    }
}
