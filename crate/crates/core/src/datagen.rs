//! Simulation scenarios Ex1–Ex4 and Monte Carlo truth oracles.
//!
//! Every subject realises both treatment worlds. Given covariates (and the
//! frailty in Ex4), the two worlds' copula pairs are independent; the
//! observed record keeps the world of the assigned arm. Random numbers come
//! from `ChaCha8Rng::seed_from_u64(seed)`, consumed per subject in the order
//! covariates, treatment, frailty, world 0 `(u, w)`, world 1 `(u, w)`,
//! censoring time.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

use crate::causal::SceCurve;
use crate::copula::{CopulaSpec, Family};
use crate::data::{Arm, Dataset, SubjectRecord};
use crate::mcem::draw_gamma;
use crate::npmle::{ArmFit, ArmParams, ModelFit};
use crate::numeric::dot;
use crate::survival::{StepHazard, WeibullBaseline};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Two covariates, randomised treatment.
    Ex1,
    /// Six normal covariates, randomised treatment.
    Ex2,
    /// Ex1 marginals with treatment assigned by a logistic model in `z1`.
    Ex3,
    /// Ex1-type covariates with a shared gamma frailty.
    Ex4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Ex1, Scenario::Ex2, Scenario::Ex3, Scenario::Ex4];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ex1 => "Ex1",
            Scenario::Ex2 => "Ex2",
            Scenario::Ex3 => "Ex3",
            Scenario::Ex4 => "Ex4",
        }
    }

    pub fn from_name(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|sc| sc.name().eq_ignore_ascii_case(s))
    }

    pub fn n_covariates(self) -> usize {
        match self {
            Scenario::Ex2 => 6,
            _ => 2,
        }
    }

    /// Upper end of the uniform censoring law used when none is given.
    pub fn default_censor_bound(self) -> f64 {
        match self {
            Scenario::Ex1 => 45.0,
            Scenario::Ex2 | Scenario::Ex3 => 16.0,
            Scenario::Ex4 => 12.0,
        }
    }

    /// True marginal parameters, indexed by arm.
    pub fn truth(self) -> [ArmTruth; 2] {
        let w = |b: f64, k: f64| WeibullBaseline { scale: b, shape: k };
        match self {
            Scenario::Ex1 | Scenario::Ex3 => [
                ArmTruth {
                    baseline1: w(3.5, 5.0),
                    beta1: vec![1.0, 2.0],
                    baseline2: w(4.0, 5.5),
                    beta2: vec![1.0, 2.0],
                },
                ArmTruth {
                    baseline1: w(5.5, 6.0),
                    beta1: vec![0.0, 2.0],
                    baseline2: w(5.8, 6.5),
                    beta2: vec![0.5, 2.0],
                },
            ],
            Scenario::Ex2 => {
                let t = 2.0 / 3.0;
                [
                    ArmTruth {
                        baseline1: w(3.0, 4.0),
                        beta1: vec![t, t, t, 0.0, 0.0, 0.0],
                        baseline2: w(3.4, 4.2),
                        beta2: vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0],
                    },
                    ArmTruth {
                        baseline1: w(4.0, 5.0),
                        beta1: vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                        baseline2: w(4.5, 5.2),
                        beta2: vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
                    },
                ]
            }
            Scenario::Ex4 => [
                ArmTruth {
                    baseline1: w(3.0, 4.0),
                    beta1: vec![2.0, 0.0],
                    baseline2: w(3.4, 4.2),
                    beta2: vec![0.0, 2.0],
                },
                ArmTruth {
                    baseline1: w(4.0, 5.0),
                    beta1: vec![1.0, 0.0],
                    baseline2: w(4.5, 5.2),
                    beta2: vec![0.0, 1.0],
                },
            ],
        }
    }
}

/// Weibull-Cox marginals of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmTruth {
    pub baseline1: WeibullBaseline,
    pub beta1: Vec<f64>,
    pub baseline2: WeibullBaseline,
    pub beta2: Vec<f64>,
}

/// One simulation design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub scenario: Scenario,
    pub n: usize,
    /// Kendall's tau of the Frank copula, both arms.
    pub tau: f64,
    /// Censoring times are uniform on `[0, censor_bound]`.
    pub censor_bound: f64,
    /// Frailty variance (Ex4 only).
    pub sigma: f64,
    pub seed: u64,
}

impl SimSpec {
    /// Scenario defaults for the censoring bound, and `sigma = 0.2` for Ex4.
    pub fn new(scenario: Scenario, n: usize, tau: f64, seed: u64) -> Self {
        SimSpec {
            scenario,
            n,
            tau,
            censor_bound: scenario.default_censor_bound(),
            sigma: if scenario == Scenario::Ex4 { 0.2 } else { 0.0 },
            seed,
        }
    }

    pub fn with_censor_bound(mut self, cu: f64) -> Self {
        self.censor_bound = cu;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (-1, 1)", self.tau)));
        }
        if !(self.censor_bound > 0.0) || !self.censor_bound.is_finite() {
            return Err(Error::Config(format!("censoring bound {} must be positive", self.censor_bound)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("frailty variance {} must be >= 0", self.sigma)));
        }
        if self.sigma > 0.0 && self.scenario != Scenario::Ex4 {
            return Err(Error::Config(format!("{} has no frailty; sigma must be 0", self.scenario.name())));
        }
        Ok(())
    }

    pub fn copula(&self) -> Result<CopulaSpec> {
        CopulaSpec::from_tau(Family::Frank, self.tau).map_err(|e| Error::Config(format!("{e}")))
    }

    /// Truth as a fitted-model object: Weibull baselines discretized on
    /// `grid` (increasing, positive).
    pub fn truth_fit(&self, grid: &[f64]) -> Result<ModelFit> {
        self.validate()?;
        let cop = self.copula()?;
        let truth = self.scenario.truth();
        let arm = |t: &ArmTruth| -> Result<ArmFit> {
            let params = ArmParams {
                copula: cop,
                beta1: t.beta1.clone(),
                beta2: t.beta2.clone(),
                lambda01: StepHazard::discretize(grid, |s| t.baseline1.cumulative(s))?,
                lambda02: StepHazard::discretize(grid, |s| t.baseline2.cumulative(s))?,
            };
            Ok(ArmFit { params, converged: true, loglik: f64::NAN, iterations: 0, init_fallback: false })
        };
        Ok(ModelFit {
            arms: [arm(&truth[0])?, arm(&truth[1])?],
            sigma: self.sigma,
            covariate_names: Dataset::default_names(self.scenario.n_covariates()),
        })
    }
}

/// Both-world event times of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcome {
    /// `T1(0), T1(1)`
    pub t1: [f64; 2],
    /// `T2(0), T2(1)`
    pub t2: [f64; 2],
    pub z: Vec<f64>,
    pub gamma: f64,
}

struct Generator {
    spec: SimSpec,
    copula: CopulaSpec,
    truth: [ArmTruth; 2],
    rng: ChaCha8Rng,
}

impl Generator {
    fn new(spec: &SimSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Generator {
            spec: *spec,
            copula: spec.copula()?,
            truth: spec.scenario.truth(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    fn next(&mut self) -> Result<(PotentialOutcome, Arm, f64)> {
        let rng = &mut self.rng;
        let z: Vec<f64> = match self.spec.scenario {
            Scenario::Ex2 => (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            _ => {
                let z1 = 2.0 * rng.random::<f64>() - 1.0;
                let z2: f64 = rng.sample(StandardNormal);
                vec![z1, z2]
            }
        };
        let p_treat = match self.spec.scenario {
            Scenario::Ex3 => 1.0 / (1.0 + exp(-z[0])),
            _ => 0.5,
        };
        let arm = if rng.random::<f64>() < p_treat { Arm::Treated } else { Arm::Control };
        let gamma = if self.spec.sigma > 0.0 { draw_gamma(rng, self.spec.sigma)? } else { 1.0 };
        let mut t1 = [0.0; 2];
        let mut t2 = [0.0; 2];
        for a in 0..2 {
            let u: f64 = rng.sample(Open01);
            let w: f64 = rng.sample(Open01);
            let v = self.copula.conditional_inverse(w, u)?;
            let tr = &self.truth[a];
            t1[a] = tr.baseline1.invert(u, dot(&tr.beta1, &z) + log(gamma))?;
            t2[a] = tr.baseline2.invert(v, dot(&tr.beta2, &z) + log(gamma))?;
        }
        let c = self.spec.censor_bound * rng.random::<f64>();
        Ok((PotentialOutcome { t1, t2, z, gamma }, arm, c))
    }
}

fn observe(po: &PotentialOutcome, arm: Arm, c: f64) -> SubjectRecord {
    let a = arm.index();
    let (t1, t2) = (po.t1[a], po.t2[a]);
    SubjectRecord { x: t1.min(t2).min(c), y: t2.min(c), d1: t1 < t2 && t1 <= c, d2: t2 <= c, arm, z: po.z.clone() }
}

/// Observed data of one design.
pub fn simulate(spec: &SimSpec) -> Result<Dataset> {
    Ok(simulate_with_oracle(spec)?.0)
}

/// Observed data plus the potential outcomes that generated them.
pub fn simulate_with_oracle(spec: &SimSpec) -> Result<(Dataset, Vec<PotentialOutcome>)> {
    let mut g = Generator::new(spec)?;
    let mut records = Vec::with_capacity(spec.n);
    let mut pos = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (po, arm, c) = g.next()?;
        records.push(observe(&po, arm, c));
        pos.push(po);
    }
    let data = Dataset::new(records, Dataset::default_names(spec.scenario.n_covariates()))?;
    Ok((data, pos))
}

/// Brute-force effects from `n_mc` uncensored both-world draws of the design
/// (seeded by `spec.seed`, sample size taken from `n_mc`).
pub fn true_sce(spec: &SimSpec, grid: &[f64], n_mc: usize) -> Result<SceCurve> {
    let mut g = Generator::new(&SimSpec { n: n_mc.max(1), ..*spec })?;
    let mut ad: [[Vec<f64>; 2]; 2] = Default::default(); // [event][world]
    let mut nd: [Vec<f64>; 2] = Default::default();
    let mut per_arm_ad = [0usize; 2];
    let mut per_arm_nd = [0usize; 2];
    for _ in 0..n_mc {
        let (po, _, _) = g.next()?;
        for a in 0..2 {
            per_arm_ad[a] += (po.t1[a] <= po.t2[a]) as usize;
            per_arm_nd[a] += (po.t1[a] >= po.t2[a]) as usize;
        }
        if po.t1[0] <= po.t2[0] && po.t1[1] <= po.t2[1] {
            for (a, (&t1, &t2)) in po.t1.iter().zip(&po.t2).enumerate() {
                ad[0][a].push(t1);
                ad[1][a].push(t2);
            }
        }
        if po.t1[0] >= po.t2[0] && po.t1[1] >= po.t2[1] {
            for (v, &t2) in nd.iter_mut().zip(&po.t2) {
                v.push(t2);
            }
        }
    }
    if ad[0][0].is_empty() || nd[0].is_empty() {
        return Err(Error::DegenerateStratum(format!(
            "oracle strata empty: AD {} of {n_mc}, ND {} of {n_mc}",
            ad[0][0].len(),
            nd[0].len()
        )));
    }
    let surv = |v: &mut Vec<f64>| -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        grid.iter().map(|&t| (v.len() - v.partition_point(|&s| s <= t)) as f64 / n).collect()
    };
    let diff = |v: &mut [Vec<f64>; 2]| -> Vec<f64> {
        let s0 = surv(&mut v[0]);
        let s1 = surv(&mut v[1]);
        s1.iter().zip(&s0).map(|(a, b)| a - b).collect()
    };
    let n = n_mc as f64;
    Ok(SceCurve {
        grid: grid.to_vec(),
        ad_sce1: diff(&mut ad[0]),
        ad_sce2: diff(&mut ad[1]),
        nd_sce2: diff(&mut nd),
        interval: None,
        pi_ad: [per_arm_ad[0] as f64 / n, per_arm_ad[1] as f64 / n],
        pi_nd: [per_arm_nd[0] as f64 / n, per_arm_nd[1] as f64 / n],
    })
}
