//! Shared gamma-frailty fit by Monte Carlo EM.
//!
//! The frailty `γ` multiplies both conditional cumulative hazards of a
//! subject and follows a gamma law with shape and rate `1/σ` (mean one,
//! variance `σ`). `σ` is fixed by the caller. Each EM iteration draws a bank
//! of posterior frailties per subject with a random-walk Metropolis–Hastings
//! chain on `log γ`, then runs one block update (jump sizes, then a damped
//! Newton step on `(β1, β2, α)`) of the Monte Carlo objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, exp, lgamma, log, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::{Arm, Dataset, SubjectRecord};
use crate::npmle::{self, subject_terms, ArmData, ArmFit, ArmParams, FitOptions, ModelFit, State};
use crate::numeric::{derive_seed, dot, integrate};
use crate::{Error, Result};

/// Mean acceptance below this marks the E-step as degenerate.
pub const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrailtySpec {
    /// Frailty variance; zero means no frailty.
    pub sigma: f64,
    /// Monte Carlo sample size of the first iteration.
    pub m0: usize,
    pub m_growth: f64,
    pub m_cap: usize,
    /// Upper bound on the random-walk scale for `log γ`.
    pub mh_step: f64,
    pub burn_in: usize,
    /// Stop once the parameter change stays below this for two iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl FrailtySpec {
    pub fn new(sigma: f64) -> Result<Self> {
        let s = FrailtySpec {
            sigma,
            m0: 50,
            m_growth: 1.2,
            m_cap: 2000,
            mh_step: 0.5,
            burn_in: 50,
            tol: 5e-3,
            max_iter: 100,
            seed: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("frailty variance {} must be finite and >= 0", self.sigma)));
        }
        if self.m0 == 0 || self.m_cap < self.m0 || !(self.m_growth >= 1.0) {
            return Err(Error::Config("Monte Carlo schedule needs m0 >= 1, growth >= 1, cap >= m0".into()));
        }
        if !(self.mh_step > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("mh_step, tol and max_iter must be positive".into()));
        }
        Ok(())
    }

    /// `min(cap, ceil(m0 · growth^r))`.
    pub fn mc_size(&self, r: usize) -> usize {
        let m = ceil(self.m0 as f64 * libm::pow(self.m_growth, r as f64));
        if m >= self.m_cap as f64 {
            self.m_cap
        } else {
            m as usize
        }
    }

    /// Initial proposal scale: `mh_step`, shrunk for tight priors.
    pub fn initial_scale(&self) -> f64 {
        self.mh_step.min(2.4 * sqrt(self.sigma))
    }
}

/// One draw from the mean-one gamma law with variance `sigma`.
pub fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Result<f64> {
    let g = Gamma::new(1.0 / sigma, sigma).map_err(|_| Error::Config(format!("invalid frailty variance {sigma}")))?;
    Ok(g.sample(rng))
}

/// Log density of the mean-one gamma law with variance `sigma`.
pub fn log_prior(gamma: f64, sigma: f64) -> f64 {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return f64::NEG_INFINITY;
    }
    let k = 1.0 / sigma;
    k * log(k) - lgamma(k) + (k - 1.0) * log(gamma) - k * gamma
}

/// Frailty-free summary of one subject under `params`.
#[derive(Debug, Clone, Copy)]
struct SubjectInputs {
    d1: bool,
    d2: bool,
    lp1: f64,
    lp2: f64,
    cum1: f64,
    cum2: f64,
    lam1: f64,
    lam2: f64,
}

impl SubjectInputs {
    fn of(s: &SubjectRecord, params: &ArmParams) -> Self {
        SubjectInputs {
            d1: s.d1,
            d2: s.d2,
            lp1: dot(&params.beta1, &s.z),
            lp2: dot(&params.beta2, &s.z),
            cum1: params.lambda01.cumulative(s.x),
            cum2: params.lambda02.cumulative(s.y),
            lam1: params.lambda01.jump_at(s.x),
            lam2: params.lambda02.jump_at(s.y),
        }
    }

    fn terms(&self, cop: &crate::CopulaSpec, gamma: f64) -> npmle::Terms {
        subject_terms(
            cop, self.d1, self.d2, self.lp1, self.lp2, self.cum1, self.cum2, self.lam1, self.lam2, gamma, false,
        )
    }
}

fn check_subject(subject: &SubjectRecord, params: &ArmParams) -> Result<()> {
    if subject.z.len() != params.beta1.len() || subject.z.len() != params.beta2.len() {
        return Err(Error::InvalidInput(format!(
            "subject has {} covariates, parameters have {}",
            subject.z.len(),
            params.beta1.len()
        )));
    }
    Ok(())
}

/// Frailty-conditional log-likelihood of one subject plus the log prior.
pub fn posterior_logdensity(
    subject: &SubjectRecord,
    params: &ArmParams,
    spec: &FrailtySpec,
    gamma: f64,
) -> Result<f64> {
    check_subject(subject, params)?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let inp = SubjectInputs::of(subject, params);
    Ok(inp.terms(&params.copula, gamma).ll + log_prior(gamma, spec.sigma))
}

/// Unnormalised log posterior in `η = log γ`, including the Jacobian.
fn log_target(inp: &SubjectInputs, cop: &crate::CopulaSpec, sigma: f64, eta: f64) -> f64 {
    let g = exp(eta);
    inp.terms(cop, g).ll + log_prior(g, sigma) + eta
}

/// Integrates `f(γ) · exp(log posterior)` over `η = log γ`, scaled by the
/// posterior peak; returns `(log scale, scaled integral)`.
fn posterior_integral<F: FnMut(f64) -> f64>(
    inp: &SubjectInputs,
    cop: &crate::CopulaSpec,
    sigma: f64,
    mut f: F,
) -> Result<(f64, f64)> {
    let (lo, hi, n) = (-30.0, 8.0, 3801);
    let h = (hi - lo) / (n - 1) as f64;
    let vals: Vec<f64> = (0..n).map(|k| log_target(inp, cop, sigma, lo + k as f64 * h)).collect();
    let (kmax, peak) =
        vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
    if !peak.is_finite() {
        return Err(Error::Numeric("posterior has no finite mass".into()));
    }
    let mut a = kmax;
    while a > 0 && vals[a] > peak - 80.0 {
        a -= 1;
    }
    let mut b = kmax;
    while b + 1 < n && vals[b] > peak - 80.0 {
        b += 1;
    }
    let (ea, eb) = (lo + a as f64 * h, lo + b as f64 * h);
    let v = integrate(|eta| f(exp(eta)) * exp(log_target(inp, cop, sigma, eta) - peak), ea, eb, 1e-13)?;
    Ok((peak, v))
}

/// `log ∫ exp(l_i(γ)) f(γ | σ) dγ`, the per-subject marginal log-likelihood,
/// by adaptive quadrature.
pub fn marginal_loglik(subject: &SubjectRecord, params: &ArmParams, sigma: f64) -> Result<f64> {
    check_subject(subject, params)?;
    if !(sigma > 0.0) {
        return Err(Error::Config("marginal likelihood over frailty needs sigma > 0".into()));
    }
    let inp = SubjectInputs::of(subject, params);
    let (peak, v) = posterior_integral(&inp, &params.copula, sigma, |_| 1.0)?;
    Ok(peak + log(v))
}

/// Posterior expectation `E[f(γ) | O]` by quadrature.
pub fn posterior_expectation<F: FnMut(f64) -> f64>(
    subject: &SubjectRecord,
    params: &ArmParams,
    sigma: f64,
    f: F,
) -> Result<f64> {
    check_subject(subject, params)?;
    if !(sigma > 0.0) {
        return Err(Error::Config("posterior expectation over frailty needs sigma > 0".into()));
    }
    let inp = SubjectInputs::of(subject, params);
    let (_, num) = posterior_integral(&inp, &params.copula, sigma, f)?;
    let (_, den) = posterior_integral(&inp, &params.copula, sigma, |_| 1.0)?;
    Ok(num / den)
}

/// Posterior `E[γ w1 | O]` and `E[γ w2 | O]` by quadrature.
pub fn weight_expectations_quadrature(subject: &SubjectRecord, params: &ArmParams, sigma: f64) -> Result<(f64, f64)> {
    let inp = SubjectInputs::of(subject, params);
    let cop = params.copula;
    let e1 = posterior_expectation(subject, params, sigma, |g| g * inp.terms(&cop, g).w1)?;
    let e2 = posterior_expectation(subject, params, sigma, |g| g * inp.terms(&cop, g).w2)?;
    Ok((e1, e2))
}

/// Draws of one Metropolis–Hastings chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<f64>,
    /// Acceptance rate over the retained draws.
    pub acceptance: f64,
    /// Proposal scale after the post-burn-in adaptation.
    pub scale: f64,
}

fn run_chain(
    inp: &SubjectInputs,
    cop: &crate::CopulaSpec,
    spec: &FrailtySpec,
    n_draws: usize,
    rng: &mut ChaCha8Rng,
) -> ChainOutput {
    let sigma = spec.sigma;
    let mut eta = 0.0;
    let mut cur = log_target(inp, cop, sigma, eta);
    let mut scale = spec.initial_scale();
    let step = |eta: &mut f64, cur: &mut f64, scale: f64, rng: &mut ChaCha8Rng| -> bool {
        let z: f64 = rng.sample(StandardNormal);
        let prop = *eta + scale * z;
        let lp = log_target(inp, cop, sigma, prop);
        let u: f64 = rng.random();
        if lp.is_finite() && (lp >= *cur || log(u) < lp - *cur) {
            *eta = prop;
            *cur = lp;
            true
        } else {
            false
        }
    };
    let mut burn_acc = 0usize;
    for _ in 0..spec.burn_in {
        burn_acc += step(&mut eta, &mut cur, scale, rng) as usize;
    }
    if spec.burn_in > 0 {
        let rate = burn_acc as f64 / spec.burn_in as f64;
        if !(0.3..=0.5).contains(&rate) {
            scale *= (rate.max(0.02) / 0.4).clamp(0.25, 4.0);
        }
    }
    let mut draws = Vec::with_capacity(n_draws);
    let mut acc = 0usize;
    for _ in 0..n_draws {
        acc += step(&mut eta, &mut cur, scale, rng) as usize;
        draws.push(exp(eta));
    }
    ChainOutput { draws, acceptance: acc as f64 / n_draws.max(1) as f64, scale }
}

/// Posterior frailty draws for one subject.
pub fn mh_sample_gamma(
    subject: &SubjectRecord,
    params: &ArmParams,
    spec: &FrailtySpec,
    n_draws: usize,
    seed: u64,
) -> Result<ChainOutput> {
    check_subject(subject, params)?;
    spec.validate()?;
    if !(spec.sigma > 0.0) {
        return Err(Error::Config("frailty sampling needs sigma > 0".into()));
    }
    if n_draws == 0 {
        return Err(Error::InvalidInput("n_draws must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(run_chain(&SubjectInputs::of(subject, params), &params.copula, spec, n_draws, &mut rng))
}

/// Monte Carlo E-step output for one arm, subjects in arm order.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// `E[γ w1 | O]` per subject.
    pub gw1: Vec<f64>,
    /// `E[γ w2 | O]` per subject.
    pub gw2: Vec<f64>,
    /// Monte Carlo standard errors of `gw1`/`gw2` (independent-draw formula).
    pub se_gw1: Vec<f64>,
    pub se_gw2: Vec<f64>,
    /// Frailty draws per subject.
    pub bank: Vec<Vec<f64>>,
    pub acceptance: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let (m, sd) = crate::numeric::mean_sd(v);
    (m, sd / sqrt(v.len() as f64))
}

fn e_step_inputs(inputs: &[SubjectInputs], cop: &crate::CopulaSpec, spec: &FrailtySpec, m: usize, seed: u64) -> EStep {
    let n = inputs.len();
    let mut out = EStep {
        gw1: Vec::with_capacity(n),
        gw2: Vec::with_capacity(n),
        se_gw1: Vec::with_capacity(n),
        se_gw2: Vec::with_capacity(n),
        bank: Vec::with_capacity(n),
        acceptance: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for (i, inp) in inputs.iter().enumerate() {
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        let ch = run_chain(inp, cop, spec, m, &mut rng);
        let (mut v1, mut v2) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for &g in &ch.draws {
            let t = inp.terms(cop, g);
            v1.push(g * t.w1);
            v2.push(g * t.w2);
        }
        let (m1, s1) = mean_se(&v1);
        let (m2, s2) = mean_se(&v2);
        out.gw1.push(m1);
        out.gw2.push(m2);
        out.se_gw1.push(s1);
        out.se_gw2.push(s2);
        out.bank.push(ch.draws);
        acc += ch.acceptance;
    }
    out.acceptance = if n > 0 { acc / n as f64 } else { 1.0 };
    out
}

/// Per-subject posterior expectations of `γ w1`, `γ w2` from `m` draws each.
///
/// Subject `i` of the arm uses stream `i` of a ChaCha8 generator seeded with
/// `seed`. With `sigma = 0` the weights at `γ = 1` are returned exactly.
pub fn e_step_expectations(
    data: &Dataset,
    arm: Arm,
    params: &ArmParams,
    spec: &FrailtySpec,
    m: usize,
    seed: u64,
) -> Result<EStep> {
    spec.validate()?;
    let subjects: Vec<&SubjectRecord> = data.arm_records(arm).collect();
    for s in &subjects {
        check_subject(s, params)?;
    }
    if spec.sigma == 0.0 {
        let (w1, w2) = npmle::weights(data, arm, params)?;
        let n = w1.len();
        return Ok(EStep {
            gw1: w1,
            gw2: w2,
            se_gw1: vec![0.0; n],
            se_gw2: vec![0.0; n],
            bank: vec![vec![1.0]; n],
            acceptance: 1.0,
        });
    }
    if m == 0 {
        return Err(Error::InvalidInput("Monte Carlo size must be at least 1".into()));
    }
    let inputs: Vec<SubjectInputs> = subjects.iter().map(|s| SubjectInputs::of(s, params)).collect();
    let e = e_step_inputs(&inputs, &params.copula, spec, m, seed);
    if e.acceptance < MIN_ACCEPTANCE {
        return Err(Error::Numeric(format!("degenerate frailty chains: mean acceptance {:.4}", e.acceptance)));
    }
    Ok(e)
}

/// Result of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: ArmParams,
    /// Monte Carlo objective after the update.
    pub q: f64,
    /// Largest parameter change of the update.
    pub change: f64,
    /// No block of the update could be improved.
    pub stalled: bool,
}

/// Jump-size update with the E-step bank followed by one damped Newton step
/// on the Monte Carlo objective.
pub fn m_step(data: &Dataset, arm: Arm, estep: &EStep, params: &ArmParams, opts: &FitOptions) -> Result<MStep> {
    let ad = ArmData::new(data, arm)?;
    if estep.bank.len() != ad.n {
        return Err(Error::InvalidInput(format!("E-step covers {} subjects, arm has {}", estep.bank.len(), ad.n)));
    }
    let mut state = ad.state_from(params, opts.family);
    let q0 = ad.evaluate(opts.family, &state.theta, &state.lam1, &state.lam2, Some(&estep.bank), false).loglik;
    let out = ad.block_step(opts, &mut state, Some(&estep.bank), q0);
    Ok(MStep { params: ad.params_of(&state, opts.family)?, q: out.loglik, change: out.change, stalled: out.stalled })
}

/// Per-arm trace of an MCEM run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArmDiagnostics {
    pub acceptance: Vec<f64>,
    pub m_schedule: Vec<usize>,
    pub q_trace: Vec<f64>,
    /// Stopping measure per iteration: largest change in `β` or `τ`.
    pub changes: Vec<f64>,
    /// `(β1, β2, α)` after each iteration.
    pub theta_trace: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McemDiagnostics {
    pub arms: [ArmDiagnostics; 2],
}

/// MCEM fit of both arms with the frailty variance fixed at `spec.sigma`;
/// `sigma = 0` is the no-frailty fit.
pub fn fit_mcem(data: &Dataset, spec: &FrailtySpec, opts: &FitOptions) -> Result<(ModelFit, McemDiagnostics)> {
    spec.validate()?;
    let start = npmle::fit(data, opts)?;
    if spec.sigma == 0.0 {
        return Ok((start, McemDiagnostics::default()));
    }
    let mut arms = start.arms.clone();
    let mut diags = McemDiagnostics::default();
    for arm in Arm::BOTH {
        let (fit, diag) = fit_arm_mcem(data, arm, &start.arms[arm.index()].params, spec, opts)?;
        arms[arm.index()] = fit;
        diags.arms[arm.index()] = diag;
    }
    Ok((ModelFit { arms, sigma: spec.sigma, covariate_names: data.covariate_names().to_vec() }, diags))
}

fn fit_arm_mcem(
    data: &Dataset,
    arm: Arm,
    start: &ArmParams,
    spec: &FrailtySpec,
    opts: &FitOptions,
) -> Result<(ArmFit, ArmDiagnostics)> {
    let ad = ArmData::new(data, arm)?;
    let fam = opts.family;
    let mut state: State = ad.state_from(start, fam);
    let mut diag = ArmDiagnostics::default();
    let mut small_in_a_row = 0;
    let mut q = f64::NAN;
    let arm_seed = derive_seed(spec.seed, arm.index() as u64);
    for r in 0..spec.max_iter {
        let m = spec.mc_size(r);
        let inputs = subject_inputs(&ad, &state);
        let params = ad.params_of(&state, fam)?;
        let e = e_step_inputs(&inputs, &params.copula, spec, m, derive_seed(arm_seed, r as u64));
        diag.acceptance.push(e.acceptance);
        diag.m_schedule.push(m);
        if e.acceptance < MIN_ACCEPTANCE {
            return Err(Error::Numeric(format!(
                "degenerate frailty chains in arm {} at iteration {r}: mean acceptance {:.4}",
                arm.index(),
                e.acceptance
            )));
        }
        let q0 = ad.evaluate(fam, &state.theta, &state.lam1, &state.lam2, Some(&e.bank), false).loglik;
        let out = ad.block_step(opts, &mut state, Some(&e.bank), q0);
        let change = finite_change(&params, &ad.params_of(&state, fam)?)?;
        q = out.loglik;
        diag.q_trace.push(q);
        diag.changes.push(change);
        diag.theta_trace.push(state.theta.clone());
        diag.iterations = r + 1;
        small_in_a_row = if change < spec.tol { small_in_a_row + 1 } else { 0 };
        if small_in_a_row >= 2 {
            diag.converged = true;
            break;
        }
    }
    let fit = ArmFit {
        params: ad.params_of(&state, fam)?,
        converged: diag.converged,
        loglik: q,
        iterations: diag.iterations,
        init_fallback: false,
    };
    Ok((fit, diag))
}

/// Largest change in the regression coefficients and Kendall's tau. Baseline
/// jumps are left out: with a Monte Carlo E-step their relative changes stay
/// at the simulation noise level long after the finite part has settled.
fn finite_change(a: &ArmParams, b: &ArmParams) -> Result<f64> {
    let betas = a.beta1.iter().chain(&a.beta2).zip(b.beta1.iter().chain(&b.beta2));
    let m = betas.fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(m.max((a.tau()? - b.tau()?).abs()))
}

fn subject_inputs(ad: &ArmData, state: &State) -> Vec<SubjectInputs> {
    ad.subject_inputs(&state.theta, &state.lam1, &state.lam2)
        .into_iter()
        .enumerate()
        .map(|(i, v)| SubjectInputs {
            d1: ad.d1[i],
            d2: ad.d2[i],
            lp1: v[0],
            lp2: v[1],
            cum1: v[2],
            cum2: v[3],
            lam1: v[4],
            lam2: v[5],
        })
        .collect()
}
