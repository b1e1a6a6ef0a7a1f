use proptest::prelude::*;

use semicomp::bootstrap::{bootstrap_with, BootstrapConfig, Resample};
use semicomp::table::{read_dataset, write_dataset, Schema};
use semicomp_core::datagen::{simulate, Scenario, SimSpec};

#[test]
fn identity_resampling_collapses_the_band() {
    let d = simulate(&SimSpec::new(Scenario::Ex1, 300, 0.3, 12)).unwrap();
    let cfg = BootstrapConfig { replicates: 3, seed: 1, parallel_width: 1, ..BootstrapConfig::default() };
    let r = bootstrap_with(&d, &[2.0, 5.0], &cfg, None, Resample::Identity).unwrap();
    let band = r.curve.interval.as_ref().unwrap();
    for (k, v) in r.curve.ad_sce1.iter().enumerate() {
        assert_eq!(band.lo_ad_sce1[k], *v);
        assert_eq!(band.hi_ad_sce1[k], *v);
    }
    assert!(r.curve_se.iter().flatten().all(|se| se.abs() < 1e-12));
    assert!(r.parameters.iter().all(|p| p.se.abs() < 1e-12 && p.lo == p.estimate && p.hi == p.estimate));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_csv_round_trips(seed in any::<u64>(), sc in 0usize..4, n in 2usize..60) {
        let d = simulate(&SimSpec::new(Scenario::ALL[sc], n, 0.3, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&p, &d).unwrap();
        let (back, report) = read_dataset(&p, &Schema::default()).unwrap();
        prop_assert_eq!(back, d);
        prop_assert_eq!(report.rows, n);
    }
}
