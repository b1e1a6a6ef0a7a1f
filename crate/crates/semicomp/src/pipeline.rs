//! Dataset to fit to effect curve, shared by the CLI, the bootstrap and the
//! study runner.

use rayon::prelude::*;

use semicomp_core::causal::{sce, sce_frailty};
use semicomp_core::mcem::{fit_mcem, FrailtySpec, McemDiagnostics};
use semicomp_core::npmle::{self, FitOptions};
use semicomp_core::numeric::derive_seed;
use semicomp_core::{Arm, Dataset, ModelFit, SceCurve};

use crate::error::Result;

/// Frailty draws per covariate row in frailty-averaged effects.
pub const DEFAULT_N_GAMMA: usize = 200;

/// A fitted model, its effect curve and, for frailty fits, the MCEM trace.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub fit: ModelFit,
    pub curve: SceCurve,
    pub mcem: Option<McemDiagnostics>,
}

/// Fits without frailty when `frailty` is absent or has `sigma = 0`,
/// otherwise by MCEM seeded from `seed`.
pub fn fit_model(
    data: &Dataset,
    opts: &FitOptions,
    frailty: Option<&FrailtySpec>,
    seed: u64,
) -> Result<(ModelFit, Option<McemDiagnostics>)> {
    match frailty {
        Some(spec) if spec.sigma > 0.0 => {
            let spec = spec.with_seed(derive_seed(seed, 0));
            let (fit, diag) = fit_mcem(data, &spec, opts)?;
            Ok((fit, Some(diag)))
        }
        _ => Ok((npmle::fit(data, opts)?, None)),
    }
}

/// Plug-in effects, frailty-averaged when the fit carries `sigma > 0`.
pub fn effect_curve(fit: &ModelFit, data: &Dataset, grid: &[f64], n_gamma: usize, seed: u64) -> Result<SceCurve> {
    if fit.sigma > 0.0 {
        let spec = FrailtySpec::new(fit.sigma)?;
        Ok(sce_frailty(fit, data, grid, &spec, n_gamma, derive_seed(seed, 1))?)
    } else {
        Ok(sce(fit, data, grid)?)
    }
}

/// [`fit_model`] followed by [`effect_curve`] with the same seed.
pub fn estimate(
    data: &Dataset,
    grid: &[f64],
    opts: &FitOptions,
    frailty: Option<&FrailtySpec>,
    n_gamma: usize,
    seed: u64,
) -> Result<Estimate> {
    let (fit, mcem) = fit_model(data, opts, frailty, seed)?;
    let curve = effect_curve(&fit, data, grid, n_gamma, seed)?;
    Ok(Estimate { fit, curve, mcem })
}

/// Labels of [`parameter_vector`]: `a<arm>:tau`, then `a<arm>:beta<k>:<z>`.
pub fn parameter_names(covariates: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    for a in 0..2 {
        names.push(format!("a{a}:tau"));
        for k in 1..=2 {
            names.extend(covariates.iter().map(|z| format!("a{a}:beta{k}:{z}")));
        }
    }
    names
}

/// Kendall's tau and both coefficient vectors of each arm.
pub fn parameter_vector(fit: &ModelFit) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    for arm in Arm::BOTH {
        let p = fit.params(arm);
        v.push(p.tau()?);
        v.extend(&p.beta1);
        v.extend(&p.beta2);
    }
    Ok(v)
}

/// Labels of [`curve_vector`]: `<effect>@<t>`.
pub fn curve_names(grid: &[f64]) -> Vec<String> {
    ["ad_sce1", "ad_sce2", "nd_sce2"].iter().flat_map(|e| grid.iter().map(move |t| format!("{e}@{t}"))).collect()
}

/// The three effects concatenated effect by effect.
pub fn curve_vector(c: &SceCurve) -> Vec<f64> {
    c.ad_sce1.iter().chain(&c.ad_sce2).chain(&c.nd_sce2).copied().collect()
}

/// `f(0..n)` on up to `width` threads; results stay in index order.
pub(crate) fn par_map<T, F>(width: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if width <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// Default worker count.
pub fn available_width() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
