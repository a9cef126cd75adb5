use oddvar::functions::ScalarFn;
use oddvar::metrics::{Descriptor, TimeGrid};
use oddvar::numeric::{log_log_slope, MeanEstimate};
use oddvar::parallel::with_workers;
use oddvar::simulate::{simulate, PathEnsemble, ProcessModel};
use oddvar::variation::*;

/// `E[([X,3]_ε(1))²]` for fBm at `ε = 2^-4..2^-7`, by adaptive 1-D
/// quadrature of the lag representation.
const FBM_TOTALS: [(f64, [f64; 4]); 3] = [
    (
        0.1,
        [
            2.2584861503798352,
            2.165241014803101,
            2.1557835569427706,
            2.257917243841677,
        ],
    ),
    (
        1.0 / 6.0,
        [
            1.603302552003825,
            1.2606601669422601,
            1.0211453048542125,
            0.8584425536281655,
        ],
    ),
    (
        0.25,
        [
            0.7664235841727207,
            0.45263887215921605,
            0.27142335178562516,
            0.16619712232682676,
        ],
    ),
];

const CUBIC: Functional = Functional::OddVariation { m: 3.0 };

fn fbm(h: f64) -> ProcessModel {
    ProcessModel::from_descriptor(&Descriptor::new("fbm").with("H", h)).unwrap()
}

/// 400 paths on `2^12` steps, so every ladder ε spans at least 32 steps.
fn fbm_ensemble(h: f64) -> PathEnsemble {
    let grid = TimeGrid::dyadic(1.0, 1 << 12, 4..=7).unwrap();
    simulate(&fbm(h), &grid, 400, 11).unwrap()
}

#[test]
fn cubic_variation_slopes_track_quadrature() {
    for (h, totals) in &FBM_TOTALS[1..] {
        let report = LadderReport::from_ensemble(&fbm_ensemble(*h), &CUBIC).unwrap();
        let fit = report.fit.as_ref().expect("slope fit");
        let exact = log_log_slope(&report.records.iter().map(|r| r.eps).collect::<Vec<_>>(), totals).unwrap();
        assert!((fit.slope - exact).abs() < 0.15, "H = {h}: {} vs {exact}", fit.slope);
        assert!(report.strictly_decreasing(), "H = {h}: {:?}", report.mean_squares());
    }
}

#[test]
fn rough_cubic_variation_matches_quadrature_at_coarse_lags() {
    let (h, totals) = FBM_TOTALS[0];
    let report = LadderReport::from_ensemble(&fbm_ensemble(h), &CUBIC).unwrap();
    // Lags of 128 and 256 steps keep the Riemann bias below 10%.
    for (record, exact) in report.records.iter().zip(totals).take(2) {
        let margin = 3.0 * record.se_mean_sq + 0.1 * exact;
        assert!(
            (record.mean_sq - exact).abs() < margin,
            "ε = {}: {} vs {exact}",
            record.eps,
            record.mean_sq
        );
    }
    assert!(!report.strictly_decreasing());
}

#[test]
fn cubic_variation_is_centred() {
    let report = LadderReport::from_ensemble(&fbm_ensemble(0.25), &CUBIC).unwrap();
    for r in &report.records {
        assert!(
            r.mean.abs() < 4.0 * r.se_mean,
            "ε = {}: {} ± {}",
            r.eps,
            r.mean,
            r.se_mean
        );
    }
}

#[test]
fn weighted_and_residual_functionals_shrink_for_smooth_paths() {
    let grid = TimeGrid::dyadic(1.0, 1 << 11, 4..=7).unwrap();
    let ensemble = simulate(&fbm(0.3), &grid, 300, 12).unwrap();
    let weighted = Functional::WeightedVariation {
        m: 3.0,
        g: ScalarFn::Sin,
    };
    let report = LadderReport::from_ensemble(&ensemble, &weighted).unwrap();
    assert!(report.strictly_decreasing(), "{:?}", report.mean_squares());
    let residual = Functional::ItoResidual {
        f: ScalarFn::Cube,
        t: 0.75,
    };
    let report = LadderReport::from_ensemble(&ensemble, &residual).unwrap();
    assert!(report.final_over_initial() < 0.5, "{:?}", report.mean_squares());
}

#[test]
fn independent_copies_have_no_covariation() {
    let grid = TimeGrid::dyadic(1.0, 1 << 10, 4..=6).unwrap();
    let x = simulate(&fbm(0.3), &grid, 500, 13).unwrap();
    let y = simulate(&fbm(0.3), &grid, 500, 14).unwrap();
    for &eps in grid.ladder() {
        let est = MeanEstimate::from_samples(&covariation(&x, &y, eps).unwrap());
        assert!(est.z_score(0.0) < 4.0, "ε = {eps}: {est:?}");
        let own = MeanEstimate::from_samples(&covariation(&x, &x, eps).unwrap());
        assert!(own.mean > 10.0 * est.mean.abs());
    }
}

#[test]
fn sweep_output_does_not_depend_on_worker_count() {
    let grid = TimeGrid::dyadic(1.0, 512, 3..=6).unwrap();
    let model = ProcessModel::from_descriptor(&Descriptor::new("rl_fbm").with("H", 0.2)).unwrap();
    let csv: Vec<String> = [1, 2, 8]
        .into_iter()
        .map(|w| {
            with_workers(w, || ladder_sweep(&model, &CUBIC, &grid, 64, 15))
                .unwrap()
                .unwrap()
                .csv_string()
        })
        .collect();
    assert!(csv.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(csv[0].lines().count(), 5);
}

#[test]
fn report_round_trips_through_json() {
    let grid = TimeGrid::dyadic(1.0, 256, 3..=5).unwrap();
    let mut report = ladder_sweep(&fbm(0.4), &CUBIC, &grid, 16, 16).unwrap();
    report.annotate("smoke", true, "three ladder points");
    let json = serde_json::to_string(&report).unwrap();
    let back: LadderReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
