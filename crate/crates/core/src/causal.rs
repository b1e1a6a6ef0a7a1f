//! Stratum-specific survivor causal effects from a fitted model.
//!
//! All Stieltjes integrals use positive jump masses `S(s-) - S(s)` of the
//! fitted step survivals and are truncated at the last jump; copula arguments
//! use left limits `S(s-)`.
//!
//! For one arm `a` and covariate value `z`, with `m_k` the jump masses of
//! `S_k(·|a,z)`, `D1(s) = C1(S1(s-), S2(s-))` and `D2(s) = C2(S1(s-), S2(s-))`:
//!
//! * `Π_AD = Σ_s D1(s) m1(s)` and `Π_ND = Σ_s D2(s) m2(s)`,
//! * `S1_AD(t) = Σ_{s>t} D1 m1 / Π_AD`,
//! * `S2_AD(t) = (S2(t) - Σ_{s>t} D2 m2) / (1 - Π_ND)`,
//! * `S2_ND(t) = Σ_{s>t} D2 m2 / Π_ND`.
//!
//! Effects average the arm differences over the pooled covariate sample with
//! weights `Π(0,z) Π(1,z)` of the relevant stratum.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::copula::CopulaSpec;
use crate::data::{Arm, Dataset};
use crate::mcem::{draw_gamma, FrailtySpec};
use crate::npmle::{ArmParams, ModelFit};
use crate::numeric::{dot, quantile_sorted};
use crate::survival::CoxMarginal;
use crate::{Error, Result};

/// Stratum probabilities below this are treated as an empty stratum.
pub const MIN_STRATUM_PROB: f64 = 1e-10;

/// Pointwise confidence limits for the three effects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceInterval {
    pub lo_ad_sce1: Vec<f64>,
    pub hi_ad_sce1: Vec<f64>,
    pub lo_ad_sce2: Vec<f64>,
    pub hi_ad_sce2: Vec<f64>,
    pub lo_nd_sce2: Vec<f64>,
    pub hi_nd_sce2: Vec<f64>,
}

/// AD-SCE1, AD-SCE2 and ND-SCE2 on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SceCurve {
    pub grid: Vec<f64>,
    pub ad_sce1: Vec<f64>,
    pub ad_sce2: Vec<f64>,
    pub nd_sce2: Vec<f64>,
    pub interval: Option<SceInterval>,
    /// Mean `Π_AD(a, z)` per arm over the covariate sample.
    pub pi_ad: [f64; 2],
    /// Mean `Π_ND(a, z)` per arm over the covariate sample.
    pub pi_nd: [f64; 2],
}

impl SceCurve {
    /// Value of each effect at the grid point nearest to `t`.
    pub fn at(&self, t: f64) -> Option<[f64; 3]> {
        let k = self.grid.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?.0;
        Some([self.ad_sce1[k], self.ad_sce2[k], self.nd_sce2[k]])
    }
}

/// Right-continuous step survival with `S(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvival {
    /// `times` increasing, `values` nonincreasing in `[0, 1]`.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("step survival needs increasing times, one value each".into()));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=prev).contains(&v) {
                return Err(Error::InvalidInput("step survival values must be nonincreasing in [0, 1]".into()));
            }
            prev = v;
        }
        Ok(StepSurvival { times, values })
    }

    /// `exp(-γ Λ0(t) e^{βᵀz})` on the baseline's jump times.
    pub fn from_marginal(m: &CoxMarginal, z: &[f64], gamma: f64) -> Result<Self> {
        let scale = gamma * exp(m.linear_predictor(z)?);
        Ok(Self::from_hazard(m, scale))
    }

    fn from_hazard(m: &CoxMarginal, scale: f64) -> Self {
        let times = m.baseline.times().to_vec();
        let mut acc = 0.0;
        let values = m
            .baseline
            .jumps()
            .iter()
            .map(|j| {
                acc += j;
                exp(-scale * acc)
            })
            .collect();
        StepSurvival { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `S(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// `S(t-)`.
    pub fn left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Positive mass of jump `j`.
    pub fn mass(&self, j: usize) -> f64 {
        let before = if j == 0 { 1.0 } else { self.values[j - 1] };
        before - self.values[j]
    }

    /// Survival remaining after the last jump.
    pub fn plateau(&self) -> f64 {
        self.values.last().copied().unwrap_or(1.0)
    }
}

/// `Σ_{s_j > t} integrand(s_j) [S(s_j-) - S(s_j)]`.
pub fn stieltjes_sum<F: FnMut(f64) -> f64>(mut integrand: F, surv: &StepSurvival, t: f64) -> f64 {
    let start = surv.times.partition_point(|&s| s <= t);
    (start..surv.times.len()).map(|j| integrand(surv.times[j]) * surv.mass(j)).sum()
}

/// Stratum survivals on a grid and stratum probabilities for one `(arm, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumQuantities {
    pub s1_ad: Vec<f64>,
    pub s2_ad: Vec<f64>,
    pub s2_nd: Vec<f64>,
    pub pi_ad: f64,
    pub pi_nd: f64,
    /// `S1` and `S2` after their last jumps (mass excluded from the integrals).
    pub plateau: [f64; 2],
}

/// Unnormalised pieces: tail sums `Σ_{s>t} D1 m1`, `Σ_{s>t} D2 m2` and `S2(t)`
/// on the grid, plus the totals.
struct Raw {
    tail1: Vec<f64>,
    tail2: Vec<f64>,
    s2: Vec<f64>,
    pi_ad: f64,
    pi_nd: f64,
    plateau: [f64; 2],
}

fn raw_quantities(cop: &CopulaSpec, s1: &StepSurvival, s2: &StepSurvival, grid: &[f64]) -> Raw {
    // D1 at the jumps of S1, with S2 evaluated by a merged sweep.
    let mut contrib1 = Vec::with_capacity(s1.times.len());
    let mut k = 0;
    for (j, &s) in s1.times.iter().enumerate() {
        while k < s2.times.len() && s2.times[k] < s {
            k += 1;
        }
        let v = if k == 0 { 1.0 } else { s2.values[k - 1] };
        let u = if j == 0 { 1.0 } else { s1.values[j - 1] };
        contrib1.push(cop.partials_clamped(u, v).c1 * s1.mass(j));
    }
    let mut contrib2 = Vec::with_capacity(s2.times.len());
    let mut k = 0;
    for (j, &s) in s2.times.iter().enumerate() {
        while k < s1.times.len() && s1.times[k] < s {
            k += 1;
        }
        let u = if k == 0 { 1.0 } else { s1.values[k - 1] };
        let v = if j == 0 { 1.0 } else { s2.values[j - 1] };
        contrib2.push(cop.partials_clamped(u, v).c2 * s2.mass(j));
    }
    let suffix = |c: &[f64]| {
        let mut out = vec![0.0; c.len() + 1];
        for j in (0..c.len()).rev() {
            out[j] = out[j + 1] + c[j];
        }
        out
    };
    let suf1 = suffix(&contrib1);
    let suf2 = suffix(&contrib2);
    let tail = |times: &[f64], suf: &[f64]| -> Vec<f64> {
        grid.iter().map(|&t| suf[times.partition_point(|&s| s <= t)]).collect()
    };
    Raw {
        tail1: tail(&s1.times, &suf1),
        tail2: tail(&s2.times, &suf2),
        s2: grid.iter().map(|&t| s2.at(t)).collect(),
        pi_ad: suf1[0],
        pi_nd: suf2[0],
        plateau: [s1.plateau(), s2.plateau()],
    }
}

fn arm_raw(params: &ArmParams, z: &[f64], gamma: f64, grid: &[f64]) -> Raw {
    let s1 = StepSurvival::from_hazard(&params.marginal1(), gamma * exp(dot(&params.beta1, z)));
    let s2 = StepSurvival::from_hazard(&params.marginal2(), gamma * exp(dot(&params.beta2, z)));
    raw_quantities(&params.copula, &s1, &s2, grid)
}

impl Raw {
    fn normalise(&self) -> StratumQuantities {
        let s1_ad = self.tail1.iter().map(|t| t / self.pi_ad).collect();
        let s2_ad = self.s2.iter().zip(&self.tail2).map(|(s, t)| (s - t) / (1.0 - self.pi_nd)).collect();
        let s2_nd = self.tail2.iter().map(|t| t / self.pi_nd).collect();
        StratumQuantities { s1_ad, s2_ad, s2_nd, pi_ad: self.pi_ad, pi_nd: self.pi_nd, plateau: self.plateau }
    }
}

/// Stratum quantities of one arm at covariate value `z`.
pub fn stratum_quantities(fit: &ModelFit, z: &[f64], arm: Arm, grid: &[f64]) -> Result<StratumQuantities> {
    let params = fit.params(arm);
    if z.len() != params.beta1.len() {
        return Err(Error::InvalidInput(format!(
            "covariate vector has {} entries, model has {}",
            z.len(),
            params.beta1.len()
        )));
    }
    let raw = arm_raw(params, z, 1.0, grid);
    if raw.pi_ad < MIN_STRATUM_PROB || raw.pi_nd < MIN_STRATUM_PROB || 1.0 - raw.pi_nd < MIN_STRATUM_PROB {
        return Err(Error::DegenerateStratum(format!(
            "arm {}: Π_AD = {:e}, Π_ND = {:e}",
            arm.index(),
            raw.pi_ad,
            raw.pi_nd
        )));
    }
    Ok(raw.normalise())
}

/// Running weighted sums over covariate (and frailty) cells.
struct Accumulator {
    ad1: Vec<f64>,
    ad2: Vec<f64>,
    nd2: Vec<f64>,
    w_ad: f64,
    w_nd: f64,
    pi_ad: [f64; 2],
    pi_nd: [f64; 2],
    cells: f64,
}

impl Accumulator {
    fn new(g: usize) -> Self {
        Accumulator {
            ad1: vec![0.0; g],
            ad2: vec![0.0; g],
            nd2: vec![0.0; g],
            w_ad: 0.0,
            w_nd: 0.0,
            pi_ad: [0.0; 2],
            pi_nd: [0.0; 2],
            cells: 0.0,
        }
    }

    fn add(&mut self, r0: &Raw, r1: &Raw) {
        self.cells += 1.0;
        for (a, r) in [r0, r1].into_iter().enumerate() {
            self.pi_ad[a] += r.pi_ad;
            self.pi_nd[a] += r.pi_nd;
        }
        let ok = |r: &Raw| r.pi_ad >= MIN_STRATUM_PROB && 1.0 - r.pi_nd >= MIN_STRATUM_PROB;
        if ok(r0) && ok(r1) {
            let w = r0.pi_ad * r1.pi_ad;
            let (q0, q1) = (r0.normalise(), r1.normalise());
            for k in 0..self.ad1.len() {
                self.ad1[k] += w * (q1.s1_ad[k] - q0.s1_ad[k]);
                self.ad2[k] += w * (q1.s2_ad[k] - q0.s2_ad[k]);
            }
            self.w_ad += w;
        }
        if r0.pi_nd >= MIN_STRATUM_PROB && r1.pi_nd >= MIN_STRATUM_PROB {
            let w = r0.pi_nd * r1.pi_nd;
            for k in 0..self.nd2.len() {
                self.nd2[k] += w * (r1.tail2[k] / r1.pi_nd - r0.tail2[k] / r0.pi_nd);
            }
            self.w_nd += w;
        }
    }

    fn finish(self, grid: &[f64]) -> Result<SceCurve> {
        if self.w_ad <= 0.0 || self.w_nd <= 0.0 {
            return Err(Error::DegenerateStratum(format!(
                "all covariate cells degenerate (AD weight {:e}, ND weight {:e})",
                self.w_ad, self.w_nd
            )));
        }
        let scale = |v: Vec<f64>, w: f64| v.into_iter().map(|x| (x / w).clamp(-1.0, 1.0)).collect();
        let c = self.cells;
        Ok(SceCurve {
            grid: grid.to_vec(),
            ad_sce1: scale(self.ad1, self.w_ad),
            ad_sce2: scale(self.ad2, self.w_ad),
            nd_sce2: scale(self.nd2, self.w_nd),
            interval: None,
            pi_ad: [self.pi_ad[0] / c, self.pi_ad[1] / c],
            pi_nd: [self.pi_nd[0] / c, self.pi_nd[1] / c],
        })
    }
}

fn check_inputs(fit: &ModelFit, data: &Dataset, grid: &[f64]) -> Result<()> {
    if fit.n_covariates() != data.n_covariates() {
        return Err(Error::InvalidInput(format!(
            "fit has {} covariates, data has {}",
            fit.n_covariates(),
            data.n_covariates()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty covariate sample".into()));
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("grid must be nondecreasing, finite and nonnegative".into()));
    }
    Ok(())
}

/// Plug-in effects averaged over the pooled empirical covariate sample.
pub fn sce(fit: &ModelFit, data: &Dataset, grid: &[f64]) -> Result<SceCurve> {
    check_inputs(fit, data, grid)?;
    let (p0, p1) = (fit.params(Arm::Control), fit.params(Arm::Treated));
    let mut acc = Accumulator::new(grid.len());
    for r in data.records() {
        acc.add(&arm_raw(p0, &r.z, 1.0, grid), &arm_raw(p1, &r.z, 1.0, grid));
    }
    acc.finish(grid)
}

/// Frailty-averaged effects: cells `(γ_g, z_i)` with `γ_g` drawn from the
/// mean-one gamma law of `spec`, survivals `exp(-γ Λ0 e^{βᵀz})` and the same
/// world-product weights as [`sce`].
pub fn sce_frailty(
    fit: &ModelFit,
    data: &Dataset,
    grid: &[f64],
    spec: &FrailtySpec,
    n_gamma: usize,
    seed: u64,
) -> Result<SceCurve> {
    check_inputs(fit, data, grid)?;
    if !(spec.sigma > 0.0) {
        return Err(Error::Config("frailty-averaged effects need sigma > 0".into()));
    }
    if n_gamma == 0 {
        return Err(Error::Config("n_gamma must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<f64> = (0..n_gamma).map(|_| draw_gamma(&mut rng, spec.sigma)).collect::<Result<_>>()?;
    let (p0, p1) = (fit.params(Arm::Control), fit.params(Arm::Treated));
    let mut acc = Accumulator::new(grid.len());
    for &g in &gammas {
        for r in data.records() {
            acc.add(&arm_raw(p0, &r.z, g, grid), &arm_raw(p1, &r.z, g, grid));
        }
    }
    acc.finish(grid)
}

/// Number of points in the default grid.
pub const DEFAULT_GRID_POINTS: usize = 30;

/// Quantiles `k/31`, `k = 1..30`, of the observed non-terminal event times
/// (duplicates dropped).
pub fn default_grid(data: &Dataset) -> Result<Vec<f64>> {
    quantile_grid(data, DEFAULT_GRID_POINTS)
}

/// Quantiles `k/(points+1)`, `k = 1..points`, of the observed non-terminal
/// event times (duplicates dropped).
pub fn quantile_grid(data: &Dataset, points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::Config("grid needs at least one point".into()));
    }
    let mut xs: Vec<f64> = data.records().iter().filter(|r| r.d1).map(|r| r.x).collect();
    if xs.is_empty() {
        return Err(Error::DegenerateData("no observed non-terminal events for the default grid".into()));
    }
    xs.sort_by(f64::total_cmp);
    let m = points as f64 + 1.0;
    let mut grid: Vec<f64> = (1..=points).map(|k| quantile_sorted(&xs, k as f64 / m)).collect();
    grid.dedup();
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use crate::npmle::ArmFit;
    use crate::numeric::integrate;
    use crate::survival::StepHazard;
    use approx::assert_relative_eq;

    fn arm_fit(params: ArmParams) -> ArmFit {
        ArmFit { params, converged: true, loglik: 0.0, iterations: 0, init_fallback: false }
    }

    fn exp_params(alpha: f64, rate1: f64, rate2: f64, beta: f64) -> ArmParams {
        let grid: Vec<f64> = (1..=4000).map(|k| k as f64 * 0.005).collect();
        ArmParams {
            copula: if alpha == 0.0 { CopulaSpec::independence() } else { CopulaSpec::frank(alpha).unwrap() },
            beta1: vec![beta],
            beta2: vec![beta],
            lambda01: StepHazard::discretize(&grid, |t| rate1 * t).unwrap(),
            lambda02: StepHazard::discretize(&grid, |t| rate2 * t).unwrap(),
        }
    }

    fn model(p0: ArmParams, p1: ArmParams) -> ModelFit {
        ModelFit { arms: [arm_fit(p0), arm_fit(p1)], sigma: 0.0, covariate_names: Dataset::default_names(1) }
    }

    fn zdata() -> Dataset {
        let recs = [-1.0, -0.3, 0.0, 0.4, 1.2]
            .iter()
            .enumerate()
            .map(|(i, &z)| SubjectRecord {
                x: 1.0 + i as f64 * 0.1,
                y: 2.0,
                d1: true,
                d2: false,
                arm: if i % 2 == 0 { Arm::Control } else { Arm::Treated },
                z: vec![z],
            })
            .collect();
        Dataset::new(recs, Dataset::default_names(1)).unwrap()
    }

    #[test]
    fn stieltjes_sum_total_mass_and_tail() {
        let s = StepSurvival::new(vec![1.0, 2.0, 3.0], vec![0.8, 0.5, 0.3]).unwrap();
        assert_relative_eq!(stieltjes_sum(|_| 1.0, &s, 0.0), 0.7, epsilon = 1e-15);
        assert_eq!(stieltjes_sum(|_| 1.0, &s, 3.0), 0.0);
        assert_relative_eq!(stieltjes_sum(|t| t, &s, 1.0), 2.0 * 0.3 + 3.0 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn stieltjes_sum_matches_quadrature_on_dense_jumps() {
        // S(t) = exp(-t) sampled on a fine grid; ∫_t^∞ g(s) f(s) ds with g = s².
        let grid: Vec<f64> = (1..=40000).map(|k| k as f64 * 0.001).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| exp(-t)).collect();
        let s = StepSurvival::new(grid, vals).unwrap();
        let approx_v = stieltjes_sum(|t| t * t, &s, 0.5);
        let exact = integrate(|t| t * t * exp(-t), 0.5, 40.0, 1e-12).unwrap();
        assert!((approx_v - exact).abs() < 1e-4 * exact.max(1.0) * 10.0, "{approx_v} vs {exact}");
    }

    #[test]
    fn independence_with_identical_margins_splits_strata_evenly() {
        let fit = model(exp_params(0.0, 0.5, 0.5, 0.0), exp_params(0.0, 0.5, 0.5, 0.0));
        let q = stratum_quantities(&fit, &[0.0], Arm::Control, &[0.0, 1.0]).unwrap();
        assert!((q.pi_ad - 0.5).abs() < 0.01, "{}", q.pi_ad);
        assert!((q.pi_nd - 0.5).abs() < 0.01, "{}", q.pi_nd);
        assert_relative_eq!(q.s1_ad[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(q.s2_nd[0], 1.0, epsilon = 1e-12);
        assert!((q.s2_ad[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn stratum_probabilities_are_complementary() {
        let fit = model(exp_params(4.0, 0.3, 0.2, 0.5), exp_params(-2.0, 0.2, 0.4, 0.5));
        for arm in Arm::BOTH {
            for z in [-1.0, 0.0, 1.0] {
                let q = stratum_quantities(&fit, &[z], arm, &[1.0]).unwrap();
                let slack = q.plateau[0].max(q.plateau[1]) + 0.01;
                assert!((q.pi_ad + q.pi_nd - 1.0).abs() < slack, "{} {}", q.pi_ad, q.pi_nd);
            }
        }
    }

    #[test]
    fn null_effect_gives_zero_curves() {
        let p = exp_params(3.0, 0.4, 0.3, 0.7);
        let fit = model(p.clone(), p);
        let grid = [0.0, 0.5, 1.0, 3.0, 8.0];
        let c = sce(&fit, &zdata(), &grid).unwrap();
        for v in c.ad_sce1.iter().chain(&c.ad_sce2).chain(&c.nd_sce2) {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn curves_start_at_zero_and_stay_bounded() {
        let fit = model(exp_params(3.0, 0.4, 0.3, 0.7), exp_params(5.0, 0.2, 0.2, -0.4));
        let grid = [0.0, 0.5, 1.0, 3.0, 8.0, 25.0];
        let c = sce(&fit, &zdata(), &grid).unwrap();
        for k in 0..3 {
            let v = [&c.ad_sce1, &c.ad_sce2, &c.nd_sce2][k];
            assert!(v[0].abs() < 1e-9, "{:?}", v);
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn default_grid_uses_event_quantiles() {
        let g = default_grid(&zdata()).unwrap();
        assert_eq!(g.len(), 30);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g[0] > 1.0 && *g.last().unwrap() < 1.4);
    }
}
