//! Versioned JSON serialization of fitted models and MCEM diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use semicomp_core::copula::{CopulaSpec, Family};
use semicomp_core::mcem::{ArmDiagnostics, FrailtySpec, McemDiagnostics};
use semicomp_core::{ArmFit, ArmParams, ModelFit, StepHazard};

use crate::error::{Error, Result};
use crate::table::write_text;

/// Version written to, and required of, fit files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HazardDoc {
    times: Vec<f64>,
    jumps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArmDoc {
    arm: usize,
    alpha: f64,
    tau: f64,
    beta1: Vec<f64>,
    beta2: Vec<f64>,
    lambda01: HazardDoc,
    lambda02: HazardDoc,
    converged: bool,
    /// Absent when the final objective was not finite.
    loglik: Option<f64>,
    iterations: usize,
    init_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitDoc {
    format_version: u32,
    family: String,
    sigma: f64,
    covariate_names: Vec<String>,
    arms: Vec<ArmDoc>,
}

fn hazard_doc(h: &StepHazard) -> HazardDoc {
    HazardDoc { times: h.times().to_vec(), jumps: h.jumps().to_vec() }
}

fn arm_doc(i: usize, a: &ArmFit) -> Result<ArmDoc> {
    let p = &a.params;
    Ok(ArmDoc {
        arm: i,
        alpha: p.alpha(),
        tau: p.tau()?,
        beta1: p.beta1.clone(),
        beta2: p.beta2.clone(),
        lambda01: hazard_doc(&p.lambda01),
        lambda02: hazard_doc(&p.lambda02),
        converged: a.converged,
        loglik: a.loglik.is_finite().then_some(a.loglik),
        iterations: a.iterations,
        init_fallback: a.init_fallback,
    })
}

/// JSON text of a fit.
pub fn fit_to_json(fit: &ModelFit) -> Result<String> {
    let family = fit.params(semicomp_core::Arm::Control).copula.family();
    let doc = FitDoc {
        format_version: FORMAT_VERSION,
        family: family.name().into(),
        sigma: fit.sigma,
        covariate_names: fit.covariate_names.clone(),
        arms: vec![arm_doc(0, &fit.arms[0])?, arm_doc(1, &fit.arms[1])?],
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parses a fit; `path` only labels errors.
pub fn fit_from_json(text: &str, path: &Path) -> Result<ModelFit> {
    let fmt = |msg: String| Error::Format { path: path.into(), msg };
    let doc: FitDoc = serde_json::from_str(text).map_err(|e| fmt(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(fmt(format!("format_version {} is not supported (expected {FORMAT_VERSION})", doc.format_version)));
    }
    let family =
        Family::from_name(&doc.family).ok_or_else(|| fmt(format!("unknown copula family {:?}", doc.family)))?;
    if doc.arms.len() != 2 || doc.arms[0].arm != 0 || doc.arms[1].arm != 1 {
        return Err(fmt("expected arms 0 and 1 in order".into()));
    }
    let p = doc.covariate_names.len();
    let arm = |d: &ArmDoc| -> Result<ArmFit> {
        if d.beta1.len() != p || d.beta2.len() != p {
            return Err(fmt(format!("arm {}: coefficient count differs from {p} covariates", d.arm)));
        }
        Ok(ArmFit {
            params: ArmParams {
                copula: CopulaSpec::new(family, d.alpha)?,
                beta1: d.beta1.clone(),
                beta2: d.beta2.clone(),
                lambda01: StepHazard::new(d.lambda01.times.clone(), d.lambda01.jumps.clone())?,
                lambda02: StepHazard::new(d.lambda02.times.clone(), d.lambda02.jumps.clone())?,
            },
            converged: d.converged,
            loglik: d.loglik.unwrap_or(f64::NAN),
            iterations: d.iterations,
            init_fallback: d.init_fallback,
        })
    };
    Ok(ModelFit {
        arms: [arm(&doc.arms[0])?, arm(&doc.arms[1])?],
        sigma: doc.sigma,
        covariate_names: doc.covariate_names,
    })
}

pub fn write_fit(path: &Path, fit: &ModelFit) -> Result<()> {
    write_text(path, &fit_to_json(fit)?)
}

pub fn read_fit(path: &Path) -> Result<ModelFit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    fit_from_json(&text, path)
}

#[derive(Debug, Serialize)]
struct ArmReport<'a> {
    arm: usize,
    converged: bool,
    iterations: usize,
    acceptance: &'a [f64],
    m_schedule: &'a [usize],
    q_trace: &'a [f64],
    changes: &'a [f64],
}

#[derive(Debug, Serialize)]
struct McemReport<'a> {
    format_version: u32,
    sigma: f64,
    seed: u64,
    tol: f64,
    arms: Vec<ArmReport<'a>>,
}

fn arm_report(i: usize, d: &ArmDiagnostics) -> ArmReport<'_> {
    ArmReport {
        arm: i,
        converged: d.converged,
        iterations: d.iterations,
        acceptance: &d.acceptance,
        m_schedule: &d.m_schedule,
        q_trace: &d.q_trace,
        changes: &d.changes,
    }
}

/// Sidecar report of an MCEM run.
pub fn write_mcem_report(path: &Path, spec: &FrailtySpec, diag: &McemDiagnostics) -> Result<()> {
    let report = McemReport {
        format_version: FORMAT_VERSION,
        sigma: spec.sigma,
        seed: spec.seed,
        tol: spec.tol,
        arms: vec![arm_report(0, &diag.arms[0]), arm_report(1, &diag.arms[1])],
    };
    let mut s = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}
