//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Slow criteria (6 and 8) only run with `--ignored` or `--include-ignored`;
//! other arguments select criteria by number or name substring.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use semicomp::study::{run_study, StudyConfig, StudyOutput};
use semicomp::BootstrapConfig;
use semicomp_core::causal::sce;
use semicomp_core::copula::{CopulaSpec, Family, Partials};
use semicomp_core::datagen::{simulate, true_sce, Scenario, SimSpec};
use semicomp_core::mcem::{fit_mcem, FrailtySpec};
use semicomp_core::npmle::{fit, FitOptions};
use semicomp_core::{Arm, Dataset, ModelFit};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (u32, &'static str, bool, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "copula calculus", false, c1_copula_calculus),
    (2, "tau round trip", false, c2_tau_round_trip),
    (3, "censoring calibration", false, c3_censoring),
    (4, "truth oracle", false, c4_truth_oracle),
    (5, "estimation bias", false, c5_estimation_bias),
    (6, "causal bias and coverage", true, c6_causal_coverage),
    (7, "mcem degeneration", false, c7_mcem_degeneration),
    (8, "mcem recovery", true, c8_mcem_recovery),
    (9, "formula isolation", false, c9_formula_isolation),
    (10, "determinism", false, c10_determinism),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_slow = args.iter().any(|a| a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let mut failed = 0;
    for (n, name, slow, run) in CRITERIA {
        let selected =
            filters.is_empty() || filters.iter().any(|f| f.parse::<u32>().ok() == Some(n) || name.contains(f.as_str()));
        if !selected {
            continue;
        }
        if (slow && !include_slow) || (!slow && only_slow) {
            if slow {
                println!("criterion {n:2} {name}: not run (slow suite, pass --ignored)");
            }
            continue;
        }
        let t = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:2} {name}: {status} ({}; {:.1}s)", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// Each analytic partial against a central difference of its analytic parent.
fn c1_copula_calculus() -> Outcome {
    let h = 1e-5;
    let grid: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
    let mut worst = 0.0f64;
    for alpha in [-10.0, -3.0, 0.5, 2.0, 8.0] {
        let cop = CopulaSpec::frank(alpha).unwrap();
        let p = |u: f64, v: f64| -> Partials { cop.partials(u, v).unwrap() };
        for &u in &grid {
            for &v in &grid {
                let a = p(u, v);
                let du = |f: &dyn Fn(&Partials) -> f64| (f(&p(u + h, v)) - f(&p(u - h, v))) / (2.0 * h);
                let dv = |f: &dyn Fn(&Partials) -> f64| (f(&p(u, v + h)) - f(&p(u, v - h))) / (2.0 * h);
                let checks = [
                    (a.c1, du(&|q| q.c)),
                    (a.c2, dv(&|q| q.c)),
                    (a.c11, du(&|q| q.c1)),
                    (a.c12, dv(&|q| q.c1)),
                    (a.c22, dv(&|q| q.c2)),
                    (a.c121, du(&|q| q.c12)),
                    (a.c122, dv(&|q| q.c12)),
                ];
                for (an, fd) in checks {
                    worst = worst.max((an - fd).abs() / fd.abs().max(1e-3));
                }
            }
        }
    }
    let mut worst_tau = 0.0f64;
    for alpha in [-10.0, -5.0, -2.0, -0.5, 0.5, 2.0, 5.0, 10.0] {
        let q = CopulaSpec::frank(alpha).unwrap().tau().unwrap();
        worst_tau = worst_tau.max((q - CopulaSpec::frank_tau_closed_form(alpha)).abs());
    }
    outcome(
        worst <= 1e-6 && worst_tau <= 1e-8,
        format!("max partial rel err {worst:.2e} <= 1e-6, max tau quadrature err {worst_tau:.2e} <= 1e-8"),
    )
}

fn c2_tau_round_trip() -> Outcome {
    let mut worst = 0.0f64;
    for tau in [-0.6, -0.3, 0.3, 0.6] {
        let back = CopulaSpec::from_tau(Family::Frank, tau).unwrap().tau().unwrap();
        worst = worst.max((back - tau).abs());
    }
    outcome(worst <= 1e-6, format!("max |tau - tau(alpha(tau))| {worst:.2e} <= 1e-6"))
}

// Both design taus, 5000 subjects each, pooled.
fn censoring_rates(cu: f64) -> (f64, f64) {
    let mut c = (0.0, 0.0);
    for (tau, seed) in [(0.3, 11), (0.6, 12)] {
        let d = simulate(&SimSpec::new(Scenario::Ex1, 5000, tau, seed).with_censor_bound(cu)).unwrap();
        let r = d.censoring_rates();
        c.0 += r.0 / 2.0;
        c.1 += r.1 / 2.0;
    }
    c
}

fn c3_censoring() -> Outcome {
    let low = censoring_rates(45.0);
    let high = censoring_rates(16.0);
    let pass = (low.0 - 0.35).abs() <= 0.03
        && (low.1 - 0.10).abs() <= 0.02
        && (high.0 - 0.45).abs() <= 0.03
        && (high.1 - 0.30).abs() <= 0.03;
    outcome(
        pass,
        format!(
            "c_u=45: T1 {:.1}% (35+-3), T2 {:.1}% (10+-2); c_u=16: T1 {:.1}% (45+-3), T2 {:.1}% (30+-3)",
            100.0 * low.0,
            100.0 * low.1,
            100.0 * high.0,
            100.0 * high.1
        ),
    )
}

fn c4_truth_oracle() -> Outcome {
    let grid = [3.0, 6.0];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    // (tau, t index, ND-SCE2, AD-SCE1, AD-SCE2)
    let table: [(f64, usize, f64, f64, f64); 3] =
        [(0.3, 0, 0.32, 0.38, 0.26), (0.3, 1, 0.26, 0.17, 0.27), (0.6, 0, 0.30, 0.37, 0.28)];
    for (tau, k, nd, ad1, ad2) in table {
        let c = true_sce(&SimSpec::new(Scenario::Ex1, 1, tau, 2024), &grid, 200_000).unwrap();
        for (est, target) in [(c.nd_sce2[k], nd), (c.ad_sce1[k], ad1), (c.ad_sce2[k], ad2)] {
            worst = worst.max((est - target).abs());
        }
        parts.push(format!(
            "tau={tau} t={}: ND2 {:.3} AD1 {:.3} AD2 {:.3}",
            grid[k], c.nd_sce2[k], c.ad_sce1[k], c.ad_sce2[k]
        ));
    }
    outcome(worst <= 0.02, format!("{}; max dev {worst:.3} <= 0.02", parts.join("; ")))
}

fn study(sim: SimSpec, reps: usize, grid: Vec<f64>, boot: Option<BootstrapConfig>) -> StudyOutput {
    let mut cfg = StudyConfig::new(sim, reps, grid);
    cfg.bootstrap = boot;
    run_study(&cfg).expect("study runs")
}

fn c5_estimation_bias() -> Outcome {
    // Reference MCSDs for n=1000, tau=0.3, low censoring.
    let mcsd_ref = [
        ("a0:tau", 0.033),
        ("a1:tau", 0.034),
        ("a0:beta1:z1", 0.103),
        ("a0:beta1:z2", 0.097),
        ("a1:beta1:z1", 0.087),
        ("a1:beta1:z2", 0.117),
        ("a0:beta2:z1", 0.092),
        ("a0:beta2:z2", 0.087),
        ("a1:beta2:z1", 0.091),
        ("a1:beta2:z2", 0.083),
    ];
    let sim = SimSpec::new(Scenario::Ex1, 1000, 0.3, 5).with_censor_bound(45.0);
    let out = study(sim, 50, vec![3.0, 6.0], None);
    let s = &out.summary;
    let mut pass = s.failed == 0;
    let (mut worst_beta, mut worst_tau, mut worst_mcsd) = (0.0f64, 0.0f64, 0.0f64);
    for (q, r) in mcsd_ref {
        let row = s.row(q).expect("parameter row");
        if q.ends_with("tau") {
            worst_tau = worst_tau.max(row.bias.abs());
        } else {
            worst_beta = worst_beta.max(row.bias.abs());
        }
        worst_mcsd = worst_mcsd.max((row.mcsd / r - 1.0).abs());
    }
    pass &= worst_beta <= 0.05 && worst_tau <= 0.03 && worst_mcsd <= 0.5;
    outcome(
        pass,
        format!(
            "{} reps ({} failed): max |bias beta| {worst_beta:.3} <= 0.05, max |bias tau| {worst_tau:.3} <= 0.03, \
             max MCSD rel dev {worst_mcsd:.2} <= 0.5",
            s.succeeded, s.failed
        ),
    )
}

fn c6_causal_coverage() -> Outcome {
    let sim = SimSpec::new(Scenario::Ex1, 1000, 0.3, 6).with_censor_bound(45.0);
    let boot = BootstrapConfig { replicates: 50, ..BootstrapConfig::default() };
    let out = study(sim, 50, vec![3.0, 6.0], Some(boot));
    let s = &out.summary;
    let (mut worst_bias, mut cp_lo, mut cp_hi) = (0.0f64, 1.0f64, 0.0f64);
    let mut rows = Vec::new();
    for r in s.rows.iter().filter(|r| r.quantity.contains("sce")) {
        let cp = r.cp.unwrap_or(f64::NAN);
        worst_bias = worst_bias.max(r.bias.abs());
        cp_lo = cp_lo.min(cp);
        cp_hi = cp_hi.max(cp);
        rows.push(format!("{} bias {:+.3} cp {:.2}", r.quantity, r.bias, cp));
    }
    let pass = s.failed == 0 && worst_bias <= 0.05 && cp_lo >= 0.85 && cp_hi <= 1.0;
    outcome(
        pass,
        format!(
            "{} reps, B=50: max |bias| {worst_bias:.3} <= 0.05, CP in [{cp_lo:.2}, {cp_hi:.2}] within [0.85, 1]; {}",
            s.succeeded,
            rows.join(", ")
        ),
    )
}

// Largest per-parameter discrepancy: absolute for alpha and beta, relative for jumps.
fn max_param_diff(a: &ModelFit, b: &ModelFit) -> f64 {
    let mut m = 0.0f64;
    for arm in Arm::BOTH {
        let (p, q) = (a.params(arm), b.params(arm));
        m = m.max((p.alpha() - q.alpha()).abs());
        for (x, y) in p.beta1.iter().chain(&p.beta2).zip(q.beta1.iter().chain(&q.beta2)) {
            m = m.max((x - y).abs());
        }
        for (h, g) in [(&p.lambda01, &q.lambda01), (&p.lambda02, &q.lambda02)] {
            // Tail jumps reach tens of hazard units, so they are compared relative to max(|x|, 1).
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1.0);
            for (x, y) in h.jumps().iter().zip(g.jumps()) {
                m = m.max(rel(*x, *y));
            }
            m = m.max(rel(h.total(), g.total()));
        }
    }
    m
}

fn c7_mcem_degeneration() -> Outcome {
    let d = simulate(&SimSpec::new(Scenario::Ex1, 1000, 0.3, 7)).unwrap();
    let opts = FitOptions::default();
    let base = fit(&d, &opts).unwrap();
    let (zero, _) = fit_mcem(&d, &FrailtySpec::new(0.0).unwrap(), &opts).unwrap();
    let (tiny, _) = fit_mcem(&d, &FrailtySpec::new(1e-6).unwrap().with_seed(7), &opts).unwrap();
    let (d0, d1) = (max_param_diff(&base, &zero), max_param_diff(&base, &tiny));
    outcome(
        d0 <= 1e-3 && d1 <= 0.01,
        format!("sigma=0 max diff {d0:.2e} <= 1e-3, sigma=1e-6 max diff {d1:.2e} <= 0.01"),
    )
}

fn c8_mcem_recovery() -> Outcome {
    let sim = SimSpec::new(Scenario::Ex4, 1000, 0.3, 8).with_sigma(0.2);
    let mut cfg = StudyConfig::new(sim, 20, vec![3.0]);
    cfg.n_mc = 20_000;
    let out = run_study(&cfg).expect("study runs");
    let s = &out.summary;
    let (mut worst_tau, mut worst_beta) = (0.0f64, 0.0f64);
    for r in s.rows.iter().filter(|r| !r.quantity.contains("sce")) {
        if r.quantity.ends_with("tau") {
            worst_tau = worst_tau.max(r.bias.abs());
        } else {
            worst_beta = worst_beta.max(r.bias.abs());
        }
    }
    outcome(
        s.failed == 0 && worst_tau <= 0.06 && worst_beta <= 0.08,
        format!(
            "{} reps ({} failed): max |bias tau| {worst_tau:.3} <= 0.06, max |bias beta| {worst_beta:.3} <= 0.08",
            s.succeeded, s.failed
        ),
    )
}

fn c9_formula_isolation() -> Outcome {
    let spec = SimSpec::new(Scenario::Ex1, 5000, 0.3, 9);
    let data: Dataset = simulate(&spec).unwrap();
    let fine: Vec<f64> = (1..=800).map(|k| k as f64 * 0.025).collect();
    let truth = spec.truth_fit(&fine).unwrap();
    let grid = [3.0, 6.0];
    let plug = sce(&truth, &data, &grid).unwrap();
    let oracle = true_sce(&spec.with_seed(99), &grid, 200_000).unwrap();
    let mut worst = 0.0f64;
    for k in 0..2 {
        worst = worst
            .max((plug.ad_sce1[k] - oracle.ad_sce1[k]).abs())
            .max((plug.ad_sce2[k] - oracle.ad_sce2[k]).abs())
            .max((plug.nd_sce2[k] - oracle.nd_sce2[k]).abs());
    }
    outcome(worst <= 0.02, format!("max |plug-in at truth - oracle| over t in {{3,6}}: {worst:.4} <= 0.02"))
}

fn run_cli(args: &[&str]) {
    let status =
        Command::new(env!("CARGO_BIN_EXE_semicomp")).args(args).env("RUST_LOG", "warn").status().expect("binary runs");
    assert!(status.success(), "semicomp {args:?} failed");
}

fn pipeline(dir: &Path) {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    run_cli(&[
        "simulate",
        "--scenario",
        "Ex1",
        "--n",
        "400",
        "--tau",
        "0.3",
        "--cu",
        "16",
        "--seed",
        "17",
        "--out",
        &p("d.csv"),
        "--oracle",
        &p("po.csv"),
    ]);
    run_cli(&["fit", "--data", &p("d.csv"), "--copula", "frank", "--sigma", "0", "--out", &p("fit.json")]);
    run_cli(&["sce", "--fit", &p("fit.json"), "--data", &p("d.csv"), "--grid", "auto30", "--out", &p("sce.csv")]);
    run_cli(&["fit", "--data", &p("d.csv"), "--sigma", "0.5", "--seed", "3", "--out", &p("fitf.json")]);
    run_cli(&[
        "sce",
        "--fit",
        &p("fitf.json"),
        "--data",
        &p("d.csv"),
        "--grid",
        "2,4",
        "--n-gamma",
        "20",
        "--seed",
        "3",
        "--out",
        &p("scef.csv"),
    ]);
    run_cli(&[
        "sensitivity",
        "--data",
        &p("d.csv"),
        "--sigmas",
        "0,0.5",
        "--grid",
        "auto5",
        "--n-gamma",
        "20",
        "--seed",
        "4",
        "--out",
        &p("sens"),
    ]);
    run_cli(&[
        "bootstrap",
        "--data",
        &p("d.csv"),
        "--B",
        "4",
        "--seed",
        "5",
        "--width",
        "2",
        "--grid",
        "auto5",
        "--out",
        &p("boot"),
    ]);
    run_cli(&[
        "study",
        "--scenario",
        "Ex1",
        "--reps",
        "2",
        "--n",
        "300",
        "--B",
        "2",
        "--seed",
        "6",
        "--n-mc",
        "5000",
        "--width",
        "2",
        "--out",
        &p("study.csv"),
    ]);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty() && fa.len() >= 14,
        format!("{} files byte-identical across two runs ({}); differing: {:?}", fa.len(), names.join(" "), differing),
    )
}
