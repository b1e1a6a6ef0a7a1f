//! Marginal survival primitives: pure-jump cumulative baseline hazards, Cox
//! marginals (optionally frailty-multiplied), the Breslow-tied Cox fit used to
//! initialise the terminal-event margin, and Weibull baselines for simulation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, pow};
use nalgebra::{DMatrix, DVector};

use crate::data::{Arm, Dataset};
use crate::numeric::dot;
use crate::{Error, Result};

/// Nondecreasing right-continuous step function `Λ(t) = Σ_{t_j <= t} ΔΛ_j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepHazard {
    times: Vec<f64>,
    jumps: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepHazard {
    /// `times` strictly increasing and positive, `jumps` nonnegative.
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.len() != jumps.len() {
            return Err(Error::InvalidInput(format!("{} jump times but {} jump sizes", times.len(), jumps.len())));
        }
        if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidInput("jump times must be finite and positive".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("jump times must be strictly increasing".into()));
        }
        if jumps.iter().any(|j| !j.is_finite() || *j < 0.0) {
            return Err(Error::InvalidInput("jump sizes must be finite and nonnegative".into()));
        }
        Ok(Self::from_parts(times, jumps))
    }

    pub(crate) fn from_parts(times: Vec<f64>, jumps: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = jumps
            .iter()
            .map(|j| {
                acc += j;
                acc
            })
            .collect();
        StepHazard { times, jumps, cumulative }
    }

    /// Discretizes a continuous cumulative hazard on `grid` (increasing,
    /// positive): the jump at `grid[j]` is `f(grid[j]) - f(grid[j-1])`.
    pub fn discretize<F: Fn(f64) -> f64>(grid: &[f64], f: F) -> Result<Self> {
        let mut prev = 0.0;
        let jumps = grid
            .iter()
            .map(|&t| {
                let cur = f(t);
                let j = cur - prev;
                prev = cur;
                j
            })
            .collect();
        Self::new(grid.to_vec(), jumps)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Cumulative hazard after the `k` first jumps.
    pub(crate) fn cumulative_after(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Number of jump times `<= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// `Λ(t)`, right-continuous.
    pub fn cumulative(&self, t: f64) -> f64 {
        self.cumulative_after(self.count_le(t))
    }

    /// `Λ(t-)`.
    pub fn cumulative_left(&self, t: f64) -> f64 {
        self.cumulative_after(self.times.partition_point(|&s| s < t))
    }

    /// Jump size at exactly `t` (zero off the support).
    pub fn jump_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k < self.times.len() && self.times[k] == t {
            self.jumps[k]
        } else {
            0.0
        }
    }

    /// Total mass `Λ(∞)`.
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Cox marginal `S(t | z, γ) = exp(-γ Λ0(t) exp(βᵀz))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxMarginal {
    pub beta: Vec<f64>,
    pub baseline: StepHazard,
}

impl CoxMarginal {
    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.beta.len() {
            return Err(Error::InvalidInput(format!(
                "covariate vector has {} entries, model has {}",
                z.len(),
                self.beta.len()
            )));
        }
        Ok(dot(&self.beta, z))
    }

    /// Survival at `t` for covariates `z` and multiplicative frailty `gamma`.
    /// Beyond the last jump the plateau value is returned.
    pub fn survival_at(&self, t: f64, z: &[f64], gamma: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("time {t} must be nonnegative")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("frailty {gamma} must be positive")));
        }
        let lp = self.linear_predictor(z)?;
        Ok(exp(-gamma * self.baseline.cumulative(t) * exp(lp)))
    }
}

/// Weibull cumulative baseline `Λ0(t) = (t / scale)^shape`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullBaseline {
    pub scale: f64,
    pub shape: f64,
}

impl WeibullBaseline {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()) {
            return Err(Error::InvalidInput(format!("Weibull scale {scale} and shape {shape} must be positive")));
        }
        Ok(WeibullBaseline { scale, shape })
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            pow(t / self.scale, self.shape)
        }
    }

    /// `Λ0⁻¹(h)`.
    pub fn inverse(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.scale * pow(h, 1.0 / self.shape)
        }
    }

    /// Time `t` with `exp(-Λ0(t) e^{linpred}) = u`; `u = 0` maps to infinity.
    pub fn invert(&self, u: f64, linpred: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) || u.is_nan() {
            return Err(Error::InvalidInput(format!("survival level {u} not in [0, 1]")));
        }
        if u == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.inverse(-log(u) * exp(-linpred)))
    }
}

/// Maximizes the Breslow-tied partial likelihood of `(times, events)` with
/// covariate rows `z` (row-major, `p` columns) and returns the fitted
/// coefficients with the Breslow baseline.
pub fn cox_fit(times: &[f64], events: &[bool], z: &[f64], p: usize) -> Result<CoxMarginal> {
    let n = times.len();
    if events.len() != n || z.len() != n * p {
        return Err(Error::InvalidInput("inconsistent Cox design dimensions".into()));
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::DegenerateData("no uncensored events".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let design = CoxDesign { times, events, z, p, order };

    let mut beta = vec![0.0; p];
    let mut state = design.evaluate(&beta);
    let mut converged = p == 0;
    for _ in 0..100 {
        if converged {
            break;
        }
        if state.grad.iter().all(|g| g.abs() < 1e-10 * (n as f64).max(1.0)) {
            converged = true;
            break;
        }
        let step = newton_direction(&state.neg_hess, &state.grad, p)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let next = design.evaluate(&cand);
            if next.loglik.is_finite() && next.loglik >= state.loglik - 1e-12 {
                let change = step.iter().fold(0.0f64, |m, s| m.max((scale * s).abs()));
                beta = cand;
                state = next;
                accepted = true;
                if change < 1e-10 {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numeric("Cox partial likelihood did not converge in 100 Newton steps".into()));
    }
    let baseline = design.breslow(&beta);
    Ok(CoxMarginal { beta, baseline })
}

/// Terminal-event Cox fit on `(Y, δ2)` within one arm.
pub fn cox_fit_event2(data: &Dataset, arm: Arm) -> Result<CoxMarginal> {
    let p = data.n_covariates();
    let (mut t, mut e, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for r in data.arm_records(arm) {
        t.push(r.y);
        e.push(r.d2);
        z.extend_from_slice(&r.z);
    }
    if !e.iter().any(|&d| d) {
        return Err(Error::DegenerateData(format!("arm {} has no observed terminal events", arm.index())));
    }
    cox_fit(&t, &e, &z, p)
}

pub(crate) fn newton_direction(neg_hess: &[f64], grad: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut ridge = 1e-8;
    let g = DVector::from_column_slice(grad);
    for _ in 0..20 {
        let mut m = DMatrix::from_row_slice(p, p, neg_hess);
        for k in 0..p {
            m[(k, k)] += ridge * (1.0 + m[(k, k)].abs());
        }
        if let Some(ch) = m.cholesky() {
            let s = ch.solve(&g);
            if s.iter().all(|v| v.is_finite()) {
                return Ok(s.iter().copied().collect());
            }
        }
        ridge *= 10.0;
    }
    Err(Error::Numeric("Newton system is not positive definite".into()))
}

struct CoxDesign<'a> {
    times: &'a [f64],
    events: &'a [bool],
    z: &'a [f64],
    p: usize,
    order: Vec<usize>,
}

struct CoxState {
    loglik: f64,
    grad: Vec<f64>,
    neg_hess: Vec<f64>,
}

impl CoxDesign<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    // Risk-set sweep from the largest time down; tied times enter the risk
    // set together before their events are scored (Breslow).
    fn evaluate(&self, beta: &[f64]) -> CoxState {
        let p = self.p;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut loglik = 0.0;
        let mut grad = vec![0.0; p];
        let mut neg_hess = vec![0.0; p * p];
        let n = self.order.len();
        let mut hi = n;
        while hi > 0 {
            let t = self.times[self.order[hi - 1]];
            let mut lo = hi - 1;
            while lo > 0 && self.times[self.order[lo - 1]] == t {
                lo -= 1;
            }
            let mut d = 0.0;
            let mut zsum = vec![0.0; p];
            for &i in &self.order[lo..hi] {
                let zi = self.row(i);
                let w = exp(dot(beta, zi));
                s0 += w;
                for a in 0..p {
                    s1[a] += w * zi[a];
                    for b in 0..p {
                        s2[a * p + b] += w * zi[a] * zi[b];
                    }
                }
                if self.events[i] {
                    d += 1.0;
                    loglik += dot(beta, zi);
                    for a in 0..p {
                        zsum[a] += zi[a];
                    }
                }
            }
            if d > 0.0 {
                loglik -= d * log(s0);
                for a in 0..p {
                    let za = s1[a] / s0;
                    grad[a] += zsum[a] - d * za;
                    for b in 0..p {
                        neg_hess[a * p + b] += d * (s2[a * p + b] / s0 - za * s1[b] / s0);
                    }
                }
            }
            hi = lo;
        }
        CoxState { loglik, grad, neg_hess }
    }

    fn breslow(&self, beta: &[f64]) -> StepHazard {
        let mut times = Vec::new();
        let mut jumps = Vec::new();
        let mut s0 = 0.0;
        let mut hi = self.order.len();
        while hi > 0 {
            let t = self.times[self.order[hi - 1]];
            let mut lo = hi - 1;
            while lo > 0 && self.times[self.order[lo - 1]] == t {
                lo -= 1;
            }
            let mut d = 0.0;
            for &i in &self.order[lo..hi] {
                s0 += exp(dot(beta, self.row(i)));
                if self.events[i] {
                    d += 1.0;
                }
            }
            if d > 0.0 && t > 0.0 {
                times.push(t);
                jumps.push(d / s0);
            }
            hi = lo;
        }
        times.reverse();
        jumps.reverse();
        StepHazard::from_parts(times, jumps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_hazard_queries() {
        let h = StepHazard::new(vec![1.0, 2.0, 4.0], vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(h.cumulative(0.0), 0.0);
        assert_relative_eq!(h.cumulative(2.0), 0.3);
        assert_relative_eq!(h.cumulative_left(2.0), 0.1);
        assert_relative_eq!(h.cumulative(10.0), 0.6);
        assert_eq!(h.jump_at(4.0), 0.3);
        assert_eq!(h.jump_at(3.0), 0.0);
        assert!(StepHazard::new(vec![2.0, 1.0], vec![0.1, 0.1]).is_err());
        assert!(StepHazard::new(vec![1.0], vec![-0.1]).is_err());
    }

    #[test]
    fn survival_at_basics() {
        let m = CoxMarginal {
            beta: vec![0.0],
            baseline: StepHazard::new(vec![1.0], vec![core::f64::consts::LN_2]).unwrap(),
        };
        assert_eq!(m.survival_at(0.0, &[3.0], 1.0).unwrap(), 1.0);
        assert_relative_eq!(m.survival_at(1.5, &[3.0], 1.0).unwrap(), 0.5);
        let s1 = m.survival_at(1.5, &[3.0], 1.0).unwrap();
        let s2 = m.survival_at(1.5, &[3.0], 2.0).unwrap();
        assert_relative_eq!(s2, s1 * s1, epsilon = 1e-15);
        assert!(m.survival_at(1.0, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn weibull_inverse_examples() {
        let w = WeibullBaseline::new(3.5, 5.0).unwrap();
        assert_eq!(w.invert(1.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(w.invert(exp(-1.0), 0.0).unwrap(), 3.5, epsilon = 1e-14);
        assert_eq!(w.invert(0.0, 0.3).unwrap(), f64::INFINITY);
        for &t in &[1.0, 3.0, 7.5] {
            for &lp in &[-1.2, 0.0, 2.0] {
                let u = exp(-w.cumulative(t) * exp(lp));
                assert_relative_eq!(w.invert(u, lp).unwrap(), t, max_relative = 1e-10);
            }
            assert_relative_eq!(w.inverse(w.cumulative(t)), t, max_relative = 1e-10);
        }
    }

    #[test]
    fn cox_without_covariate_effect_is_nelson_aalen() {
        let times = [1.0, 2.0, 2.0, 3.0, 5.0];
        let events = [true, true, false, true, false];
        let z = [1.0; 5];
        let fit = cox_fit(&times, &events, &z, 1).unwrap();
        assert!(fit.beta[0].abs() < 1e-12);
        let e = exp(fit.beta[0]);
        assert_eq!(fit.baseline.times(), &[1.0, 2.0, 3.0]);
        let na = [1.0 / 5.0, 1.0 / 4.0, 1.0 / 2.0];
        for (j, v) in fit.baseline.jumps().iter().enumerate() {
            assert_relative_eq!(*v * e, na[j], epsilon = 1e-12);
        }
        let none = cox_fit(&times, &events, &[], 0).unwrap();
        assert!(none.beta.is_empty());
        for (j, v) in none.baseline.jumps().iter().enumerate() {
            assert_relative_eq!(*v, na[j], epsilon = 1e-15);
        }
    }

    fn exp_cox_sample(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut t, mut e, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let zi: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let ti = -log(rng.random::<f64>()) / exp(zi);
            let ci = -log(rng.random::<f64>()) / 0.12;
            t.push(ti.min(ci));
            e.push(ti <= ci);
            z.push(zi);
        }
        (t, e, z)
    }

    // β = 1, n = 2000, about 10% censoring; the standard error is near 0.04.
    #[test]
    fn cox_recovers_beta() {
        let mut sum = 0.0;
        for seed in 1..=5 {
            let (t, e, z) = exp_cox_sample(seed, 2000);
            let fit = cox_fit(&t, &e, &z, 1).unwrap();
            assert!((fit.beta[0] - 1.0).abs() < 0.15, "beta = {}", fit.beta[0]);
            assert!(fit.baseline.total().is_finite() && fit.baseline.total() > 0.0);
            sum += fit.beta[0];
        }
        assert!((sum / 5.0 - 1.0).abs() < 0.05, "mean beta = {}", sum / 5.0);
    }

    #[test]
    fn cox_is_permutation_invariant() {
        let n = 500;
        let (t, e, z) = exp_cox_sample(1, n);
        let fit = cox_fit(&t, &e, &z, 1).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let ep: Vec<bool> = perm.iter().map(|&i| e[i]).collect();
        let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let fit2 = cox_fit(&tp, &ep, &zp, 1).unwrap();
        assert_relative_eq!(fit.beta[0], fit2.beta[0], epsilon = 1e-10);
        assert_eq!(fit.baseline.times(), fit2.baseline.times());
    }

    #[test]
    fn cox_requires_events() {
        assert!(matches!(cox_fit(&[1.0, 2.0], &[false, false], &[0.0, 1.0], 1), Err(Error::DegenerateData(_))));
    }
}
