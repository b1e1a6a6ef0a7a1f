use semicomp_core::causal::sce;
use semicomp_core::datagen::{simulate, true_sce, Scenario, SimSpec};
use semicomp_core::mcem::{fit_mcem, FrailtySpec};
use semicomp_core::npmle::{fit, FitOptions};
use semicomp_core::Arm;

#[test]
fn npmle_recovers_ex1_parameters() {
    let spec = SimSpec::new(Scenario::Ex1, 1000, 0.3, 21).with_censor_bound(45.0);
    let d = simulate(&spec).unwrap();
    let f = fit(&d, &FitOptions::default()).unwrap();
    assert!(f.converged());
    let truth = Scenario::Ex1.truth();
    for arm in Arm::BOTH {
        let p = f.params(arm);
        let t = &truth[arm.index()];
        assert!((p.tau().unwrap() - 0.3).abs() < 0.12, "tau {}", p.tau().unwrap());
        for (est, tr) in p.beta1.iter().chain(&p.beta2).zip(t.beta1.iter().chain(&t.beta2)) {
            assert!((est - tr).abs() < 0.4, "beta {est} vs {tr}");
        }
        // Λ01(3) against the Weibull truth
        let l = p.lambda01.cumulative(3.0);
        let w = t.baseline1.cumulative(3.0);
        assert!((l / w - 1.0).abs() < 0.3, "Λ01(3) {l} vs {w}");
    }
}

#[test]
fn zero_frailty_mcem_is_npmle() {
    let d = simulate(&SimSpec::new(Scenario::Ex1, 400, 0.3, 3)).unwrap();
    let a = fit(&d, &FitOptions::default()).unwrap();
    let (b, _) = fit_mcem(&d, &FrailtySpec::new(0.0).unwrap(), &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mcem_runs_on_frailty_data() {
    let d = simulate(&SimSpec::new(Scenario::Ex4, 400, 0.3, 8).with_sigma(0.2)).unwrap();
    let spec = FrailtySpec::new(0.2).unwrap().with_seed(8);
    let (f, diag) = fit_mcem(&d, &spec, &FitOptions::default()).unwrap();
    assert_eq!(f.sigma, 0.2);
    for (arm, dg) in diag.arms.iter().enumerate() {
        assert!(dg.acceptance.iter().all(|r| (0.15..0.85).contains(r)), "arm {arm} {:?}", dg.acceptance);
        assert_eq!(dg.m_schedule[0], 50);
        assert!((f.arms[arm].params.tau().unwrap() - 0.3).abs() < 0.2);
    }
}

#[test]
fn plug_in_at_truth_matches_oracle() {
    let spec = SimSpec::new(Scenario::Ex1, 4000, 0.3, 4);
    let d = simulate(&spec).unwrap();
    let grid: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
    let truth = spec.truth_fit(&grid).unwrap();
    let c = sce(&truth, &d, &[3.0, 6.0]).unwrap();
    let o = true_sce(&spec, &[3.0, 6.0], 100_000).unwrap();
    for k in 0..2 {
        for (a, b) in [(c.ad_sce1[k], o.ad_sce1[k]), (c.ad_sce2[k], o.ad_sce2[k]), (c.nd_sce2[k], o.nd_sce2[k])] {
            assert!((a - b).abs() < 0.03, "{a} vs {b}");
        }
    }
}
