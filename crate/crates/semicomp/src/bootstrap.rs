//! Arm-stratified subject bootstrap for effect curves and model parameters.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semicomp_core::mcem::{FrailtySpec, McemDiagnostics};
use semicomp_core::npmle::FitOptions;
use semicomp_core::numeric::{derive_seed, mean_sd, quantile};
use semicomp_core::{Arm, Dataset, ModelFit, SceCurve, SceInterval};

use crate::error::{Error, Result};
use crate::pipeline::{
    available_width, curve_vector, estimate, par_map, parameter_names, parameter_vector, DEFAULT_N_GAMMA,
};

/// Largest tolerated fraction of failed resamples.
pub const MAX_FAILURE_RATE: f64 = 0.2;

const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    /// 2.5% and 97.5% resample quantiles.
    Percentile,
    /// Estimate plus or minus 1.96 resample standard deviations.
    Normal,
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "percentile" => Ok(CiMethod::Percentile),
            "normal" => Ok(CiMethod::Normal),
            _ => Err(Error::Config(format!("unknown interval method {s:?} (percentile or normal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub ci_method: CiMethod,
    pub parallel_width: usize,
    pub fit: FitOptions,
    pub n_gamma: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 100,
            seed: 0,
            ci_method: CiMethod::Percentile,
            parallel_width: available_width(),
            fit: FitOptions::default(),
            n_gamma: DEFAULT_N_GAMMA,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!("bootstrap needs at least 2 replicates, got {}", self.replicates)));
        }
        if self.n_gamma == 0 {
            return Err(Error::Config("n_gamma must be positive".into()));
        }
        Ok(())
    }
}

/// How replicate datasets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Subjects with replacement within each arm.
    Stratified,
    /// The original subjects every time; bands collapse to the estimate.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Parameter and effect vectors of one replicate.
type Draw = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub fit: ModelFit,
    pub mcem: Option<McemDiagnostics>,
    /// Point estimate with the bootstrap band attached.
    pub curve: SceCurve,
    /// Resample standard deviations of AD-SCE1, AD-SCE2 and ND-SCE2.
    pub curve_se: [Vec<f64>; 3],
    pub parameters: Vec<ParameterSummary>,
    pub succeeded: usize,
    pub failed: usize,
}

/// Indices of a within-arm resample, control subjects first.
pub fn stratified_indices<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(data.len());
    for arm in Arm::BOTH {
        let idx: Vec<usize> = data.records().iter().enumerate().filter(|(_, r)| r.arm == arm).map(|(i, _)| i).collect();
        out.extend((0..idx.len()).map(|_| idx[rng.random_range(0..idx.len())]));
    }
    out
}

pub fn bootstrap(
    data: &Dataset,
    grid: &[f64],
    cfg: &BootstrapConfig,
    frailty: Option<&FrailtySpec>,
) -> Result<BootstrapResult> {
    bootstrap_with(data, grid, cfg, frailty, Resample::Stratified)
}

/// Bootstrap with an explicit resampling rule. Replicate `b` draws its
/// subjects from `derive_seed(cfg.seed, b + 1)`, so results do not depend
/// on the thread count.
pub fn bootstrap_with(
    data: &Dataset,
    grid: &[f64],
    cfg: &BootstrapConfig,
    frailty: Option<&FrailtySpec>,
    resample: Resample,
) -> Result<BootstrapResult> {
    cfg.validate()?;
    let point = estimate(data, grid, &cfg.fit, frailty, cfg.n_gamma, cfg.seed)?;
    let theta = parameter_vector(&point.fit)?;
    let eta = curve_vector(&point.curve);

    let reps: Vec<Option<Draw>> = par_map(cfg.parallel_width, cfg.replicates, |b| {
        let rep_seed = derive_seed(cfg.seed, b as u64 + 1);
        let (sample, seed) = match resample {
            Resample::Stratified => {
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
                (data.select(&stratified_indices(data, &mut rng)), derive_seed(rep_seed, 2))
            }
            Resample::Identity => (data.clone(), cfg.seed),
        };
        let run = || -> Result<Draw> {
            let e = estimate(&sample, grid, &cfg.fit, frailty, cfg.n_gamma, seed)?;
            Ok((parameter_vector(&e.fit)?, curve_vector(&e.curve)))
        };
        match run() {
            Ok((t, c)) if t.iter().chain(&c).all(|v| v.is_finite()) => Some((t, c)),
            Ok(_) => {
                log::warn!("bootstrap replicate {b}: non-finite estimate, dropped");
                None
            }
            Err(e) => {
                log::warn!("bootstrap replicate {b}: {e}, dropped");
                None
            }
        }
    });
    let ok: Vec<&Draw> = reps.iter().flatten().collect();
    let failed = cfg.replicates - ok.len();
    if failed as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 || ok.len() < 2 {
        return Err(Error::BootstrapUnstable { failed, total: cfg.replicates });
    }

    let band = |est: &[f64], pick: &dyn Fn(&Draw) -> &[f64]| -> Vec<(f64, f64, f64)> {
        (0..est.len())
            .map(|j| {
                let vals: Vec<f64> = ok.iter().map(|r| pick(r)[j]).collect();
                let se = mean_sd(&vals).1;
                let (lo, hi) = match cfg.ci_method {
                    CiMethod::Percentile => (quantile(&vals, 0.025), quantile(&vals, 0.975)),
                    CiMethod::Normal => (est[j] - Z975 * se, est[j] + Z975 * se),
                };
                (se, lo, hi)
            })
            .collect()
    };
    let tb = band(&theta, &|r| &r.0);
    let cb = band(&eta, &|r| &r.1);

    let parameters = parameter_names(data.covariate_names())
        .into_iter()
        .zip(&theta)
        .zip(&tb)
        .map(|((name, &estimate), &(se, lo, hi))| ParameterSummary { name, estimate, se, lo, hi })
        .collect();
    let g = grid.len();
    let col = |k: usize, f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { cb[k * g..(k + 1) * g].iter().map(f).collect() };
    let mut curve = point.curve;
    curve.interval = Some(SceInterval {
        lo_ad_sce1: col(0, |b| b.1),
        hi_ad_sce1: col(0, |b| b.2),
        lo_ad_sce2: col(1, |b| b.1),
        hi_ad_sce2: col(1, |b| b.2),
        lo_nd_sce2: col(2, |b| b.1),
        hi_nd_sce2: col(2, |b| b.2),
    });
    Ok(BootstrapResult {
        fit: point.fit,
        mcem: point.mcem,
        curve,
        curve_se: [col(0, |b| b.0), col(1, |b| b.0), col(2, |b| b.0)],
        parameters,
        succeeded: ok.len(),
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use semicomp_core::datagen::{simulate, Scenario, SimSpec};

    #[test]
    fn resample_keeps_arm_sizes() {
        let d = simulate(&SimSpec::new(Scenario::Ex1, 101, 0.3, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = stratified_indices(&d, &mut rng);
        let s = d.select(&idx);
        assert_eq!(s.arm_size(Arm::Control), d.arm_size(Arm::Control));
        assert_eq!(s.arm_size(Arm::Treated), d.arm_size(Arm::Treated));
    }

    #[test]
    fn ci_method_parses() {
        assert_eq!("Percentile".parse::<CiMethod>().unwrap(), CiMethod::Percentile);
        assert_eq!("normal".parse::<CiMethod>().unwrap(), CiMethod::Normal);
        assert!("bca".parse::<CiMethod>().is_err());
    }

    #[test]
    fn one_replicate_is_rejected() {
        let d = simulate(&SimSpec::new(Scenario::Ex1, 50, 0.3, 4)).unwrap();
        let cfg = BootstrapConfig { replicates: 1, ..Default::default() };
        assert_eq!(bootstrap(&d, &[3.0], &cfg, None).unwrap_err().category(), "config");
    }
}
