//! No-frailty semiparametric fit of the copula model, one arm at a time.
//!
//! Baseline hazards are pure-jump measures on the observed event times of
//! their own event type. Each outer iteration alternates a self-consistency
//! update of the jump sizes with a damped Newton step on `(β1, β2, α)`.
//!
//! The likelihood kernel in this module also evaluates the Monte Carlo
//! complete-data objective of the frailty fitter: every subject carries a bank
//! of frailty draws, and the no-frailty likelihood is the special case of a
//! single draw `γ = 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use crate::copula::{CopulaSpec, Family, BOUNDARY_EPS};
use crate::data::{Arm, Dataset};
use crate::numeric::{dot, kendall_tau};
use crate::survival::{cox_fit, newton_direction, CoxMarginal, StepHazard};
use crate::{Error, Result};

/// Newton iterates never enter `|alpha| < ALPHA_BARRIER`.
pub const ALPHA_BARRIER: f64 = 1e-4;
const MAX_NEWTON_STEP: f64 = 2.0;
const ASCENT_SLACK: f64 = 1e-10;
const MIN_KENDALL_PAIRS: usize = 10;

/// Parameters of one arm: copula, regression coefficients and the two
/// baseline cumulative hazards.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams {
    pub copula: CopulaSpec,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub lambda01: StepHazard,
    pub lambda02: StepHazard,
}

impl ArmParams {
    pub fn alpha(&self) -> f64 {
        self.copula.alpha()
    }

    pub fn tau(&self) -> Result<f64> {
        self.copula.tau()
    }

    /// Marginal model of the non-terminal event.
    pub fn marginal1(&self) -> CoxMarginal {
        CoxMarginal { beta: self.beta1.clone(), baseline: self.lambda01.clone() }
    }

    /// Marginal model of the terminal event.
    pub fn marginal2(&self) -> CoxMarginal {
        CoxMarginal { beta: self.beta2.clone(), baseline: self.lambda02.clone() }
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.beta1.len() != p || self.beta2.len() != p {
            return Err(Error::InvalidInput(format!(
                "parameters have {}/{} coefficients, data has {p} covariates",
                self.beta1.len(),
                self.beta2.len()
            )));
        }
        Ok(())
    }
}

/// A fitted arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFit {
    pub params: ArmParams,
    pub converged: bool,
    pub loglik: f64,
    pub iterations: usize,
    /// The initializer had too few doubly observed pairs for its Kendall
    /// candidate and relied on the tau grid alone.
    pub init_fallback: bool,
}

/// Both arms plus the frailty variance the fit assumed (0 without frailty).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub arms: [ArmFit; 2],
    pub sigma: f64,
    pub covariate_names: Vec<String>,
}

impl ModelFit {
    pub fn arm(&self, arm: Arm) -> &ArmFit {
        &self.arms[arm.index()]
    }

    pub fn params(&self, arm: Arm) -> &ArmParams {
        &self.arms[arm.index()].params
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn converged(&self) -> bool {
        self.arms.iter().all(|a| a.converged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub family: Family,
    /// Outer loop stops when the largest parameter change falls below this.
    pub tol: f64,
    pub max_outer: usize,
    pub max_halvings: usize,
    /// Self-consistency sweeps of the jump sizes per outer iteration.
    pub jump_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { family: Family::Frank, tol: 1e-4, max_outer: 200, max_halvings: 20, jump_sweeps: 5 }
    }
}

/// Observed-data log-likelihood of one arm.
///
/// Baselines are evaluated as given (cumulative values at `X`/`Y`, jump sizes
/// at event times); an event at a time without a jump yields `-inf`.
pub fn loglik(data: &Dataset, arm: Arm, params: &ArmParams) -> Result<f64> {
    params.check_dim(data.n_covariates())?;
    let mut total = 0.0;
    for r in data.arm_records(arm) {
        let lp1 = dot(&params.beta1, &r.z);
        let lp2 = dot(&params.beta2, &r.z);
        let t = subject_terms(
            &params.copula,
            r.d1,
            r.d2,
            lp1,
            lp2,
            params.lambda01.cumulative(r.x),
            params.lambda02.cumulative(r.y),
            params.lambda01.jump_at(r.x),
            params.lambda02.jump_at(r.y),
            1.0,
            false,
        );
        total += t.ll;
    }
    Ok(total)
}

/// Per-subject jump-update weights `(w1, w2)` at `γ = 1`, in arm order.
pub fn weights(data: &Dataset, arm: Arm, params: &ArmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_dim(data.n_covariates())?;
    let mut w1 = Vec::new();
    let mut w2 = Vec::new();
    for r in data.arm_records(arm) {
        let t = subject_terms(
            &params.copula,
            r.d1,
            r.d2,
            dot(&params.beta1, &r.z),
            dot(&params.beta2, &r.z),
            params.lambda01.cumulative(r.x),
            params.lambda02.cumulative(r.y),
            params.lambda01.jump_at(r.x),
            params.lambda02.jump_at(r.y),
            1.0,
            false,
        );
        w1.push(t.w1);
        w2.push(t.w2);
    }
    Ok((w1, w2))
}

/// Starting values for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Initial {
    pub params: ArmParams,
    /// Kendall's tau of the Cox–Snell-transformed doubly observed pairs.
    pub kendall_tau: Option<f64>,
    pub fallback: bool,
}

/// Three-stage initializer: Cox fit of `(Y, δ2)`, naive Cox fit of `(X, δ1)`,
/// then the copula parameter with the best likelihood among a Kendall-tau
/// inversion candidate and a grid of tau values.
pub fn initialize(data: &Dataset, arm: Arm, opts: &FitOptions) -> Result<Initial> {
    let ad = ArmData::new(data, arm)?;
    let p = ad.p;
    let m2 = cox_fit(&ad.y, &ad.d2, &ad.z, p)?;
    let m1 = cox_fit(&ad.x, &ad.d1, &ad.z, p)?;
    let lam1 = ad.map_onto_support(&m1.baseline, 1);
    let lam2 = ad.map_onto_support(&m2.baseline, 2);

    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for i in 0..ad.n {
        if ad.d1[i] && ad.d2[i] {
            let zi = ad.row(i);
            l1.push(m1.baseline.cumulative(ad.x[i]) * exp(dot(&m1.beta, zi)));
            l2.push(m2.baseline.cumulative(ad.y[i]) * exp(dot(&m2.beta, zi)));
        }
    }
    let fallback = l1.len() < MIN_KENDALL_PAIRS;
    let kendall = if fallback { None } else { Some(kendall_tau(&l1, &l2)) };

    let mut candidates: Vec<f64> = Vec::new();
    if let Some(tk) = kendall {
        if let Ok(c) = tau_candidate(opts.family, tk.clamp(-0.95, 0.95)) {
            candidates.push(c);
        }
    }
    for k in -8i32..=8 {
        if k == 0 {
            continue;
        }
        if let Ok(c) = tau_candidate(opts.family, k as f64 / 10.0) {
            candidates.push(c);
        }
    }
    if candidates.is_empty() {
        return Err(Error::Numeric("no admissible copula starting value".into()));
    }

    let mut theta: Vec<f64> = m1.beta.iter().chain(m2.beta.iter()).copied().collect();
    theta.push(candidates[0]);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &c in &candidates {
        theta[2 * p] = c;
        let ll = ad.evaluate(opts.family, &theta, &lam1, &lam2, None, false).loglik;
        if ll > best.0 {
            best = (ll, c);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numeric("initial log-likelihood is not finite".into()));
    }
    let params = ArmParams {
        copula: CopulaSpec::new(opts.family, best.1)?,
        beta1: m1.beta,
        beta2: m2.beta,
        lambda01: StepHazard::from_parts(ad.t1.clone(), lam1),
        lambda02: StepHazard::from_parts(ad.t2.clone(), lam2),
    };
    Ok(Initial { params, kendall_tau: kendall, fallback })
}

fn tau_candidate(family: Family, tau: f64) -> Result<f64> {
    let a = CopulaSpec::from_tau(family, tau)?.alpha();
    Ok(project_alpha(family, a))
}

/// Fits one arm from the three-stage initializer.
pub fn fit_arm(data: &Dataset, arm: Arm, opts: &FitOptions) -> Result<ArmFit> {
    let init = initialize(data, arm, opts)?;
    let mut fit = fit_arm_from(data, arm, &init.params, opts)?;
    fit.init_fallback = init.fallback;
    Ok(fit)
}

/// Fits one arm from explicit starting values; baselines are moved onto the
/// arm's event-time support first.
pub fn fit_arm_from(data: &Dataset, arm: Arm, start: &ArmParams, opts: &FitOptions) -> Result<ArmFit> {
    let ad = ArmData::new(data, arm)?;
    start.check_dim(ad.p)?;
    let mut state = ad.state_from(start, opts.family);
    let mut ll = ad.evaluate(opts.family, &state.theta, &state.lam1, &state.lam2, None, false).loglik;
    if !ll.is_finite() {
        return Err(Error::Numeric("log-likelihood at the starting values is not finite".into()));
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_outer {
        iterations = it;
        let step = ad.block_step(opts, &mut state, None, ll);
        ll = step.loglik;
        if step.change < opts.tol {
            converged = true;
            break;
        }
        if step.stalled {
            break;
        }
    }
    Ok(ArmFit { params: ad.params_of(&state, opts.family)?, converged, loglik: ll, iterations, init_fallback: false })
}

/// Fits both arms independently.
pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<ModelFit> {
    let a0 = fit_arm(data, Arm::Control, opts)?;
    let a1 = fit_arm(data, Arm::Treated, opts)?;
    Ok(ModelFit { arms: [a0, a1], sigma: 0.0, covariate_names: data.covariate_names().to_vec() })
}

pub(crate) fn project_alpha(family: Family, alpha: f64) -> f64 {
    match family {
        Family::Frank if alpha.abs() < ALPHA_BARRIER => {
            if alpha < 0.0 {
                -ALPHA_BARRIER
            } else {
                ALPHA_BARRIER
            }
        }
        Family::Clayton if alpha < ALPHA_BARRIER => ALPHA_BARRIER,
        _ => alpha,
    }
}

/// Log-likelihood pieces of one subject at one frailty value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Terms {
    pub ll: f64,
    pub w1: f64,
    pub w2: f64,
    pub h1: f64,
    pub h2: f64,
    pub dalpha: f64,
}

/// `ll` is the four-case contribution; `w1 = δ1 + u ∂log D/∂u` and
/// `w2 = δ2 + v ∂log D/∂v` where `D` is the copula term of the case.
#[allow(clippy::too_many_arguments)]
pub(crate) fn subject_terms(
    cop: &CopulaSpec,
    d1: bool,
    d2: bool,
    lp1: f64,
    lp2: f64,
    cum1: f64,
    cum2: f64,
    lam1: f64,
    lam2: f64,
    gamma: f64,
    with_alpha: bool,
) -> Terms {
    let h1 = gamma * cum1 * exp(lp1);
    let h2 = gamma * cum2 * exp(lp2);
    let u = exp(-h1);
    let v = exp(-h2);
    let pt = cop.partials_clamped(u, v);
    let (uc, vc) = (u.clamp(BOUNDARY_EPS, 1.0), v.clamp(BOUNDARY_EPS, 1.0));
    let (dc, du, dv) = match (d1, d2) {
        (false, false) => (pt.c, pt.c1, pt.c2),
        (true, false) => (pt.c1, pt.c11, pt.c12),
        (false, true) => (pt.c2, pt.c12, pt.c22),
        (true, true) => (pt.c12, pt.c121, pt.c122),
    };
    let mut ll = if dc > 0.0 { log(dc) } else { f64::NEG_INFINITY };
    if d1 {
        ll += if lam1 > 0.0 { -h1 + log(gamma * lam1) + lp1 } else { f64::NEG_INFINITY };
    }
    if d2 {
        ll += if lam2 > 0.0 { -h2 + log(gamma * lam2) + lp2 } else { f64::NEG_INFINITY };
    }
    let (w1, w2) = if dc > 0.0 {
        (d1 as u8 as f64 + uc * du / dc, d2 as u8 as f64 + vc * dv / dc)
    } else {
        (d1 as u8 as f64, d2 as u8 as f64)
    };
    let dalpha = if with_alpha {
        let s = cop.alpha_scores(u, v);
        match (d1, d2) {
            (false, false) => s.log_c,
            (true, false) => s.log_c1,
            (false, true) => s.log_c2,
            (true, true) => s.log_c12,
        }
    } else {
        0.0
    };
    Terms { ll, w1, w2, h1, h2, dalpha }
}

/// Unknowns of one arm on its own event-time support:
/// `theta = (β1, β2, α)` plus the jump sizes.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub theta: Vec<f64>,
    pub lam1: Vec<f64>,
    pub lam2: Vec<f64>,
}

/// Likelihood value plus, on request, its `theta` gradient; `gw1`/`gw2` are
/// the per-subject averages of `γ w1` and `γ w2` over the frailty bank.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub loglik: f64,
    pub grad: Vec<f64>,
    pub gw1: Vec<f64>,
    pub gw2: Vec<f64>,
}

pub(crate) struct StepOutcome {
    pub loglik: f64,
    pub change: f64,
    pub stalled: bool,
}

/// One arm's observations, sorted indices and event-time supports.
#[derive(Debug, Clone)]
pub(crate) struct ArmData {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d1: Vec<bool>,
    pub d2: Vec<bool>,
    pub z: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    cnt1: Vec<f64>,
    cnt2: Vec<f64>,
    k1: Vec<usize>,
    k2: Vec<usize>,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    start1: Vec<usize>,
    start2: Vec<usize>,
}

fn support(times: &[f64], events: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut ev: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    ev.sort_by(f64::total_cmp);
    let mut t = Vec::new();
    let mut c: Vec<f64> = Vec::new();
    for s in ev {
        if t.last() == Some(&s) {
            *c.last_mut().unwrap() += 1.0;
        } else {
            t.push(s);
            c.push(1.0);
        }
    }
    (t, c)
}

impl ArmData {
    pub fn new(data: &Dataset, arm: Arm) -> Result<Self> {
        let p = data.n_covariates();
        let (mut x, mut y, mut d1, mut d2, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in data.arm_records(arm) {
            x.push(r.x);
            y.push(r.y);
            d1.push(r.d1);
            d2.push(r.d2);
            z.extend_from_slice(&r.z);
        }
        let n = x.len();
        let label = arm.index();
        if n == 0 {
            return Err(Error::DegenerateData(format!("arm {label} has no subjects")));
        }
        if !d1.iter().any(|&e| e) {
            return Err(Error::DegenerateData(format!("arm {label} has no non-terminal events")));
        }
        if !d2.iter().any(|&e| e) {
            return Err(Error::DegenerateData(format!("arm {label} has no terminal events")));
        }
        if (0..n).any(|i| (d1[i] && x[i] <= 0.0) || (d2[i] && y[i] <= 0.0)) {
            return Err(Error::DegenerateData(format!("arm {label} has an event at time zero")));
        }
        let (t1, cnt1) = support(&x, &d1);
        let (t2, cnt2) = support(&y, &d2);
        let k1 = x.iter().map(|&xi| t1.partition_point(|&s| s <= xi)).collect();
        let k2 = y.iter().map(|&yi| t2.partition_point(|&s| s <= yi)).collect();
        let mut order_x: Vec<usize> = (0..n).collect();
        order_x.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut order_y: Vec<usize> = (0..n).collect();
        order_y.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let start1 = t1.iter().map(|&t| order_x.partition_point(|&i| x[i] < t)).collect();
        let start2 = t2.iter().map(|&t| order_y.partition_point(|&i| y[i] < t)).collect();
        Ok(ArmData { n, p, x, y, d1, d2, z, t1, t2, cnt1, cnt2, k1, k2, order_x, order_y, start1, start2 })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn dim(&self) -> usize {
        2 * self.p + 1
    }

    /// Jump sizes of `h` moved onto the support of event type `k`: the mass
    /// `h` puts on `(t_{j-1}, t_j]`, floored at a small positive value.
    pub fn map_onto_support(&self, h: &StepHazard, k: u8) -> Vec<f64> {
        let t = if k == 1 { &self.t1 } else { &self.t2 };
        let floor = 1e-3 / self.n as f64;
        let mut prev = 0.0;
        t.iter()
            .map(|&s| {
                let cur = h.cumulative(s);
                let j = cur - prev;
                prev = cur;
                if j > 0.0 {
                    j
                } else {
                    floor
                }
            })
            .collect()
    }

    pub fn state_from(&self, params: &ArmParams, family: Family) -> State {
        let mut theta: Vec<f64> = params.beta1.iter().chain(params.beta2.iter()).copied().collect();
        theta.push(project_alpha(family, params.alpha()));
        State {
            theta,
            lam1: self.map_onto_support(&params.lambda01, 1),
            lam2: self.map_onto_support(&params.lambda02, 2),
        }
    }

    pub fn params_of(&self, s: &State, family: Family) -> Result<ArmParams> {
        let p = self.p;
        Ok(ArmParams {
            copula: CopulaSpec::new(family, s.theta[2 * p])?,
            beta1: s.theta[..p].to_vec(),
            beta2: s.theta[p..2 * p].to_vec(),
            lambda01: StepHazard::from_parts(self.t1.clone(), s.lam1.clone()),
            lambda02: StepHazard::from_parts(self.t2.clone(), s.lam2.clone()),
        })
    }

    /// Per-subject `(lp1, lp2, Λ01(X), Λ02(Y), own jump 1, own jump 2)`.
    pub fn subject_inputs(&self, theta: &[f64], lam1: &[f64], lam2: &[f64]) -> Vec<[f64; 6]> {
        let p = self.p;
        let prefix = |lam: &[f64]| {
            let mut c = Vec::with_capacity(lam.len() + 1);
            c.push(0.0);
            let mut acc = 0.0;
            for l in lam {
                acc += l;
                c.push(acc);
            }
            c
        };
        let c1 = prefix(lam1);
        let c2 = prefix(lam2);
        (0..self.n)
            .map(|i| {
                let zi = self.row(i);
                let j1 = if self.d1[i] { lam1[self.k1[i] - 1] } else { 0.0 };
                let j2 = if self.d2[i] { lam2[self.k2[i] - 1] } else { 0.0 };
                [dot(&theta[..p], zi), dot(&theta[p..2 * p], zi), c1[self.k1[i]], c2[self.k2[i]], j1, j2]
            })
            .collect()
    }

    /// Likelihood (or Monte Carlo objective when `gammas` is given: the
    /// average over each subject's draws) with optional gradient.
    pub fn evaluate(
        &self,
        family: Family,
        theta: &[f64],
        lam1: &[f64],
        lam2: &[f64],
        gammas: Option<&[Vec<f64>]>,
        want_grad: bool,
    ) -> Eval {
        let p = self.p;
        let dim = self.dim();
        let cop = match CopulaSpec::new(family, theta[2 * p]) {
            Ok(c) => c,
            Err(_) => {
                return Eval {
                    loglik: f64::NEG_INFINITY,
                    grad: vec![0.0; dim],
                    gw1: vec![0.0; self.n],
                    gw2: vec![0.0; self.n],
                }
            }
        };
        let inputs = self.subject_inputs(theta, lam1, lam2);
        let mut loglik = 0.0;
        let mut grad = vec![0.0; dim];
        let mut gw1 = Vec::with_capacity(self.n);
        let mut gw2 = Vec::with_capacity(self.n);
        const ONE: [f64; 1] = [1.0];
        for (i, inp) in inputs.iter().enumerate() {
            let draws: &[f64] = match gammas {
                Some(g) => &g[i],
                None => &ONE,
            };
            let m = draws.len() as f64;
            let (mut ll, mut a1, mut a2, mut g1, mut g2, mut ga) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for &g in draws {
                let t = subject_terms(
                    &cop, self.d1[i], self.d2[i], inp[0], inp[1], inp[2], inp[3], inp[4], inp[5], g, want_grad,
                );
                ll += t.ll;
                a1 += g * t.w1;
                a2 += g * t.w2;
                if want_grad {
                    g1 += self.d1[i] as u8 as f64 - t.h1 * t.w1;
                    g2 += self.d2[i] as u8 as f64 - t.h2 * t.w2;
                    ga += t.dalpha;
                }
            }
            loglik += ll / m;
            gw1.push(a1 / m);
            gw2.push(a2 / m);
            if want_grad {
                let zi = self.row(i);
                for k in 0..p {
                    grad[k] += zi[k] * g1 / m;
                    grad[p + k] += zi[k] * g2 / m;
                }
                grad[2 * p] += ga / m;
            }
        }
        Eval { loglik, grad, gw1, gw2 }
    }

    /// Self-consistency candidates `d_j / Σ_{risk set} e^{βᵀz} E[γ w]`;
    /// nonpositive denominators keep the current jump.
    pub fn jump_candidates(&self, state: &State, gw1: &[f64], gw2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let one = |theta_b: &[f64], order: &[usize], start: &[usize], cnt: &[f64], gw: &[f64], old: &[f64]| {
            let mut suffix = vec![0.0; self.n + 1];
            for pos in (0..self.n).rev() {
                let i = order[pos];
                suffix[pos] = suffix[pos + 1] + exp(dot(theta_b, self.row(i))) * gw[i];
            }
            start
                .iter()
                .zip(cnt)
                .zip(old)
                .map(|((&s, &d), &o)| {
                    let r = suffix[s];
                    if r > 0.0 && r.is_finite() {
                        d / r
                    } else {
                        o
                    }
                })
                .collect::<Vec<f64>>()
        };
        let c1 = one(&state.theta[..p], &self.order_x, &self.start1, &self.cnt1, gw1, &state.lam1);
        let c2 = one(&state.theta[p..2 * p], &self.order_y, &self.start2, &self.cnt2, gw2, &state.lam2);
        (c1, c2)
    }

    /// Jump-size sweeps followed by one damped Newton step on `theta`.
    pub fn block_step(
        &self,
        opts: &FitOptions,
        state: &mut State,
        gammas: Option<&[Vec<f64>]>,
        loglik: f64,
    ) -> StepOutcome {
        let fam = opts.family;
        let before = state.clone();
        let mut ll = loglik;
        let mut any_accepted = false;
        let mut eval = self.evaluate(fam, &state.theta, &state.lam1, &state.lam2, gammas, false);
        for _ in 0..opts.jump_sweeps.max(1) {
            let (c1, c2) = self.jump_candidates(state, &eval.gw1, &eval.gw2);
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let l1 = blend(&state.lam1, &c1, s);
                let l2 = blend(&state.lam2, &c2, s);
                let e = self.evaluate(fam, &state.theta, &l1, &l2, gammas, false);
                if e.loglik.is_finite() && e.loglik >= ll - ASCENT_SLACK {
                    accepted = Some((l1, l2, e));
                    break;
                }
                s *= 0.5;
            }
            match accepted {
                Some((l1, l2, e)) => {
                    let ch = cum_change(&state.lam1, &l1).max(cum_change(&state.lam2, &l2));
                    state.lam1 = l1;
                    state.lam2 = l2;
                    ll = e.loglik;
                    eval = e;
                    any_accepted = true;
                    if ch < 0.1 * opts.tol {
                        break;
                    }
                }
                None => break,
            }
        }

        let g = self.evaluate(fam, &state.theta, &state.lam1, &state.lam2, gammas, true).grad;
        if let Some(dir) = self.newton_direction(fam, state, gammas, &g) {
            let mut s = 1.0;
            for _ in 0..=opts.max_halvings {
                let mut cand: Vec<f64> = state.theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect();
                let k = cand.len() - 1;
                cand[k] = project_alpha(fam, cand[k]);
                let e = self.evaluate(fam, &cand, &state.lam1, &state.lam2, gammas, false);
                if e.loglik.is_finite() && e.loglik >= ll - ASCENT_SLACK {
                    state.theta = cand;
                    ll = e.loglik;
                    any_accepted = true;
                    break;
                }
                s *= 0.5;
            }
        }

        let theta_change = before.theta.iter().zip(&state.theta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let change = theta_change.max(cum_change(&before.lam1, &state.lam1)).max(cum_change(&before.lam2, &state.lam2));
        StepOutcome { loglik: ll, change, stalled: !any_accepted }
    }

    /// Newton direction from the analytic gradient and a central-difference
    /// Hessian, capped in max-norm.
    fn newton_direction(&self, fam: Family, state: &State, gammas: Option<&[Vec<f64>]>, g: &[f64]) -> Option<Vec<f64>> {
        let dim = self.dim();
        let mut neg_hess = vec![0.0; dim * dim];
        for k in 0..dim {
            let h = 1e-5 * state.theta[k].abs().max(1.0);
            let mut tp = state.theta.clone();
            let mut tm = state.theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let gp = self.evaluate(fam, &tp, &state.lam1, &state.lam2, gammas, true).grad;
            let gm = self.evaluate(fam, &tm, &state.lam1, &state.lam2, gammas, true).grad;
            for j in 0..dim {
                neg_hess[j * dim + k] = -(gp[j] - gm[j]) / (2.0 * h);
            }
        }
        for j in 0..dim {
            for k in 0..j {
                let s = 0.5 * (neg_hess[j * dim + k] + neg_hess[k * dim + j]);
                neg_hess[j * dim + k] = s;
                neg_hess[k * dim + j] = s;
            }
        }
        if neg_hess.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut dir = newton_direction(&neg_hess, g, dim).ok()?;
        let big = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if big > MAX_NEWTON_STEP {
            for d in dir.iter_mut() {
                *d *= MAX_NEWTON_STEP / big;
            }
        }
        Some(dir)
    }
}

fn blend(old: &[f64], cand: &[f64], s: f64) -> Vec<f64> {
    if s == 1.0 {
        return cand.to_vec();
    }
    old.iter().zip(cand).map(|(o, c)| exp((1.0 - s) * log(*o) + s * log(*c))).collect()
}

/// Largest change of the cumulative hazard at the support points, relative
/// once the cumulative exceeds one.
fn cum_change(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut m) = (0.0, 0.0, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        m = m.max((ca - cb).abs() / ca.max(1.0));
    }
    m
}
