//! Monte Carlo studies: simulate, fit, compute effects (optionally bootstrap)
//! and aggregate bias, MCSD, ASE and coverage against the design's truths.

use std::path::Path;

use semicomp_core::datagen::{simulate, true_sce, SimSpec};
use semicomp_core::mcem::FrailtySpec;
use semicomp_core::npmle::FitOptions;
use semicomp_core::numeric::{derive_seed, mean_sd};

use crate::bootstrap::{bootstrap, BootstrapConfig};
use crate::error::{Error, Result};
use crate::pipeline::{
    available_width, curve_names, curve_vector, estimate, par_map, parameter_names, DEFAULT_N_GAMMA,
};
use crate::table::{opt, write_rows};

/// Monte Carlo draws behind the effect truths.
pub const DEFAULT_N_MC: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Design of every replicate; its seed is the study's master seed.
    pub sim: SimSpec,
    pub reps: usize,
    /// Times at which effects are summarized.
    pub grid: Vec<f64>,
    pub fit: FitOptions,
    /// Per-replicate bootstrap for ASE and coverage. Its seed and width are
    /// replaced by a per-replicate seed and a single thread.
    pub bootstrap: Option<BootstrapConfig>,
    pub n_mc: usize,
    pub n_gamma: usize,
    pub parallel_width: usize,
}

impl StudyConfig {
    pub fn new(sim: SimSpec, reps: usize, grid: Vec<f64>) -> Self {
        StudyConfig {
            sim,
            reps,
            grid,
            fit: FitOptions::default(),
            bootstrap: None,
            n_mc: DEFAULT_N_MC,
            n_gamma: DEFAULT_N_GAMMA,
            parallel_width: available_width(),
        }
    }
}

/// One quantity in one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantityEstimate {
    pub estimate: f64,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    /// Estimates in the order of [`StudyOutput::quantities`], or the error.
    pub outcome: std::result::Result<Vec<QuantityEstimate>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub quantity: String,
    pub truth: f64,
    pub bias: f64,
    pub mcsd: f64,
    /// Mean bootstrap standard error.
    pub ase: Option<f64>,
    /// Coverage of the bootstrap intervals.
    pub cp: Option<f64>,
    /// Replicates contributing.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
    pub succeeded: usize,
    pub failed: usize,
}

impl StudySummary {
    pub fn row(&self, quantity: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub quantities: Vec<String>,
    pub truths: Vec<f64>,
    pub replicates: Vec<ReplicateRecord>,
    pub summary: StudySummary,
}

/// Parameter truths (`τ`, `β1`, `β2` per arm) and Monte Carlo effect truths.
pub fn truths(sim: &SimSpec, grid: &[f64], n_mc: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    for t in sim.scenario.truth() {
        v.push(sim.tau);
        v.extend(&t.beta1);
        v.extend(&t.beta2);
    }
    let oracle = true_sce(&sim.with_seed(derive_seed(sim.seed, 0)), grid, n_mc)?;
    v.extend(curve_vector(&oracle));
    Ok(v)
}

fn run_replicate(cfg: &StudyConfig, seed: u64, frailty: Option<&FrailtySpec>) -> Result<Vec<QuantityEstimate>> {
    let data = simulate(&cfg.sim.with_seed(seed))?;
    let point = |v: f64| QuantityEstimate { estimate: v, se: None, lo: None, hi: None };
    match &cfg.bootstrap {
        None => {
            let e = estimate(&data, &cfg.grid, &cfg.fit, frailty, cfg.n_gamma, seed)?;
            let mut v: Vec<QuantityEstimate> =
                crate::pipeline::parameter_vector(&e.fit)?.into_iter().map(point).collect();
            v.extend(curve_vector(&e.curve).into_iter().map(point));
            Ok(v)
        }
        Some(b) => {
            let bc = BootstrapConfig { seed, parallel_width: 1, fit: cfg.fit, n_gamma: cfg.n_gamma, ..*b };
            let r = bootstrap(&data, &cfg.grid, &bc, frailty)?;
            let mut v: Vec<QuantityEstimate> = r
                .parameters
                .iter()
                .map(|p| QuantityEstimate { estimate: p.estimate, se: Some(p.se), lo: Some(p.lo), hi: Some(p.hi) })
                .collect();
            let band = r.curve.interval.as_ref().expect("bootstrap attaches a band");
            let est = curve_vector(&r.curve);
            let lo: Vec<f64> =
                [&band.lo_ad_sce1, &band.lo_ad_sce2, &band.lo_nd_sce2].into_iter().flatten().copied().collect();
            let hi: Vec<f64> =
                [&band.hi_ad_sce1, &band.hi_ad_sce2, &band.hi_nd_sce2].into_iter().flatten().copied().collect();
            let se: Vec<f64> = r.curve_se.iter().flatten().copied().collect();
            v.extend((0..est.len()).map(|j| QuantityEstimate {
                estimate: est[j],
                se: Some(se[j]),
                lo: Some(lo[j]),
                hi: Some(hi[j]),
            }));
            Ok(v)
        }
    }
}

/// Runs `cfg.reps` replicates; replicate `r` uses seed
/// `derive_seed(cfg.sim.seed, r + 1)`. Failed replicates are logged and
/// excluded from the summary.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    if cfg.reps < 2 {
        return Err(Error::Config(format!("a study needs at least 2 replicates, got {}", cfg.reps)));
    }
    if cfg.grid.is_empty() {
        return Err(Error::Config("a study needs at least one time point".into()));
    }
    cfg.sim.validate()?;
    let frailty = if cfg.sim.sigma > 0.0 { Some(FrailtySpec::new(cfg.sim.sigma)?) } else { None };
    let mut quantities = parameter_names(&semicomp_core::Dataset::default_names(cfg.sim.scenario.n_covariates()));
    quantities.extend(curve_names(&cfg.grid));
    let truths = truths(&cfg.sim, &cfg.grid, cfg.n_mc)?;

    let replicates: Vec<ReplicateRecord> = par_map(cfg.parallel_width, cfg.reps, |r| {
        let seed = derive_seed(cfg.sim.seed, r as u64 + 1);
        let outcome = run_replicate(cfg, seed, frailty.as_ref()).map_err(|e| {
            log::warn!("study replicate {r}: {e}");
            e.to_string()
        });
        ReplicateRecord { rep: r, seed, outcome }
    });
    let summary = summarize(&quantities, &truths, &replicates);
    if summary.succeeded == 0 {
        return Err(Error::Study(format!("all {} replicates failed", cfg.reps)));
    }
    Ok(StudyOutput { quantities, truths, replicates, summary })
}

/// Aggregates replicates in index order.
pub fn summarize(quantities: &[String], truths: &[f64], replicates: &[ReplicateRecord]) -> StudySummary {
    let ok: Vec<&Vec<QuantityEstimate>> = replicates.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let rows = quantities
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let truth = truths[j];
            let est: Vec<f64> = ok.iter().map(|v| v[j].estimate).collect();
            let (mean, mcsd) = mean_sd(&est);
            let ses: Option<Vec<f64>> = ok.iter().map(|v| v[j].se).collect();
            let ase = ses.filter(|s| !s.is_empty()).map(|s| s.iter().sum::<f64>() / s.len() as f64);
            let ints: Option<Vec<(f64, f64)>> = ok.iter().map(|v| Some((v[j].lo?, v[j].hi?))).collect();
            let cp = ints
                .filter(|s| !s.is_empty())
                .map(|s| s.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64 / s.len() as f64);
            SummaryRow { quantity: q.clone(), truth, bias: mean - truth, mcsd, ase, cp, n: est.len() }
        })
        .collect();
    StudySummary { rows, succeeded: ok.len(), failed: replicates.len() - ok.len() }
}

/// `quantity,truth,bias,mcsd,ase,cp,n`; absent ASE/CP are empty cells.
pub fn write_summary(path: &Path, s: &StudySummary) -> Result<()> {
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                r.quantity.clone(),
                r.truth.to_string(),
                r.bias.to_string(),
                r.mcsd.to_string(),
                opt(r.ase),
                opt(r.cp),
                r.n.to_string(),
            ]
        })
        .collect();
    write_rows(path, &["quantity", "truth", "bias", "mcsd", "ase", "cp", "n"], &rows)
}

/// Long format `rep,seed,status,quantity,truth,estimate,se,lo,hi`; a failed
/// replicate is one row with the error in `status`.
pub fn write_replicates(path: &Path, out: &StudyOutput) -> Result<()> {
    let mut rows = Vec::new();
    for r in &out.replicates {
        match &r.outcome {
            Ok(v) => {
                for (j, q) in v.iter().enumerate() {
                    rows.push(vec![
                        r.rep.to_string(),
                        r.seed.to_string(),
                        "ok".into(),
                        out.quantities[j].clone(),
                        out.truths[j].to_string(),
                        q.estimate.to_string(),
                        opt(q.se),
                        opt(q.lo),
                        opt(q.hi),
                    ]);
                }
            }
            Err(e) => {
                let mut row = vec![r.rep.to_string(), r.seed.to_string(), format!("failed: {e}")];
                row.extend(std::iter::repeat_n(String::new(), 6));
                rows.push(row);
            }
        }
    }
    write_rows(path, &["rep", "seed", "status", "quantity", "truth", "estimate", "se", "lo", "hi"], &rows)
}
