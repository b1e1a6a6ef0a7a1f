//! Archimedean copula kernels.
//!
//! `C(u, v) = φ⁻¹(φ(u) + φ(v))` evaluated on survival-function arguments. The
//! Frank family is implemented in closed form, including all partial
//! derivatives up to third order and their sensitivities to the association
//! parameter. Clayton is available as an optional family whose higher-order
//! partials fall back to finite differences of its closed-form lower ones.

use alloc::format;
use libm::{exp, expm1, log, log1p, pow};

use crate::numeric::{bisect, integrate};
use crate::{Error, Result};

/// Derivative evaluation clamps its arguments into `[EPS, 1 - EPS]`.
pub const BOUNDARY_EPS: f64 = 1e-12;
/// Below this `|alpha|` the Frank family switches to its independence-limit
/// expansion.
pub const INDEPENDENCE_EPS: f64 = 1e-6;

const TAU_QUAD_DELTA: f64 = 1e-10;
const TAU_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Frank,
    Clayton,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Frank => "frank",
            Family::Clayton => "clayton",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        match name.to_ascii_lowercase().as_str() {
            "frank" => Some(Family::Frank),
            "clayton" => Some(Family::Clayton),
            _ => None,
        }
    }
}

/// A copula family together with its association parameter.
///
/// Frank accepts any finite `alpha`; `alpha = 0` (or anything inside
/// [`INDEPENDENCE_EPS`]) is the independence copula. Clayton requires
/// `alpha > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaSpec {
    family: Family,
    alpha: f64,
}

/// `C` and its partial derivatives at one point `(u, v)`.
///
/// Subscript `1` is `∂/∂u`, `2` is `∂/∂v`; `c121 = ∂³C/∂u²∂v` and
/// `c122 = ∂³C/∂u∂v²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Partials {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c12: f64,
    pub c11: f64,
    pub c22: f64,
    pub c121: f64,
    pub c122: f64,
}

/// Derivatives with respect to `alpha` of `log C`, `log C1`, `log C2` and
/// `log C12` at a fixed `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaScores {
    pub log_c: f64,
    pub log_c1: f64,
    pub log_c2: f64,
    pub log_c12: f64,
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidInput(format!("{name} = {x} is not in [0, 1]")));
    }
    Ok(())
}

impl CopulaSpec {
    pub fn new(family: Family, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("copula parameter {alpha} is not finite")));
        }
        if family == Family::Clayton && alpha <= 0.0 {
            return Err(Error::Domain(format!("Clayton requires alpha > 0, got {alpha}")));
        }
        Ok(CopulaSpec { family, alpha })
    }

    pub fn frank(alpha: f64) -> Result<Self> {
        Self::new(Family::Frank, alpha)
    }

    /// Frank copula at its independence limit.
    pub fn independence() -> Self {
        CopulaSpec { family: Family::Frank, alpha: 0.0 }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same family with a different association parameter.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.family, alpha)
    }

    pub fn is_independence(&self) -> bool {
        self.family == Family::Frank && self.alpha.abs() < INDEPENDENCE_EPS
    }

    /// `C(u, v)`, clamped into the Fréchet bounds.
    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        check_unit("u", u)?;
        check_unit("v", v)?;
        if u == 0.0 || v == 0.0 {
            return Ok(0.0);
        }
        if u == 1.0 {
            return Ok(v);
        }
        if v == 1.0 {
            return Ok(u);
        }
        let raw = match self.family {
            Family::Frank if self.is_independence() => u * v * (1.0 + 0.5 * self.alpha * (1.0 - u) * (1.0 - v)),
            Family::Frank => {
                let a = expm1(-self.alpha * u);
                let b = expm1(-self.alpha * v);
                let d = expm1(-self.alpha);
                -log1p(a * b / d) / self.alpha
            }
            Family::Clayton => clayton_c(self.alpha, u, v),
        };
        let lower = (u + v - 1.0).max(0.0);
        Ok(raw.clamp(lower, u.min(v)))
    }

    /// All partial derivatives at an interior point.
    ///
    /// Arguments exactly on the boundary are rejected; use [`Self::partials_clamped`]
    /// when evaluating at estimated survival values.
    pub fn partials(&self, u: f64, v: f64) -> Result<Partials> {
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite copula argument ({u}, {v})")));
        }
        if !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0) {
            return Err(Error::Boundary { u, v });
        }
        Ok(self.partials_unchecked(u, v))
    }

    /// Partials after clamping both arguments into `[BOUNDARY_EPS, 1 - BOUNDARY_EPS]`.
    pub fn partials_clamped(&self, u: f64, v: f64) -> Partials {
        self.partials_unchecked(clamp_unit(u), clamp_unit(v))
    }

    fn partials_unchecked(&self, u: f64, v: f64) -> Partials {
        match self.family {
            Family::Frank if self.is_independence() => independence_partials(self.alpha, u, v),
            Family::Frank => frank_partials(self.alpha, u, v),
            Family::Clayton => clayton_partials(self.alpha, u, v),
        }
    }

    /// Sensitivities of the log partials to `alpha`, arguments clamped.
    pub fn alpha_scores(&self, u: f64, v: f64) -> AlphaScores {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        match self.family {
            Family::Frank if self.is_independence() => AlphaScores {
                log_c: 0.5 * (1.0 - u) * (1.0 - v),
                log_c1: 0.5 * (1.0 - v) * (1.0 - 2.0 * u),
                log_c2: 0.5 * (1.0 - u) * (1.0 - 2.0 * v),
                log_c12: 0.5 * (1.0 - 2.0 * u) * (1.0 - 2.0 * v),
            },
            Family::Frank => frank_alpha_scores(self.alpha, u, v),
            Family::Clayton => {
                let h = 1e-5 * self.alpha.max(1.0);
                let lo = clayton_low_order(self.alpha - h, u, v);
                let hi = clayton_low_order(self.alpha + h, u, v);
                let diff = |a: f64, b: f64| (log(b) - log(a)) / (2.0 * h);
                AlphaScores {
                    log_c: diff(lo[0], hi[0]),
                    log_c1: diff(lo[1], hi[1]),
                    log_c2: diff(lo[2], hi[2]),
                    log_c12: diff(lo[3], hi[3]),
                }
            }
        }
    }

    /// Generator `φ(t)`.
    pub fn generator(&self, t: f64) -> f64 {
        match self.family {
            Family::Frank if self.alpha == 0.0 => -log(t),
            Family::Frank => -log(expm1(-self.alpha * t) / expm1(-self.alpha)),
            Family::Clayton => (pow(t, -self.alpha) - 1.0) / self.alpha,
        }
    }

    /// `φ(t) / φ'(t)`, the integrand of the Kendall's tau identity.
    fn generator_ratio(&self, t: f64) -> f64 {
        match self.family {
            Family::Frank if self.alpha == 0.0 => t * log(t),
            Family::Frank => {
                let al = self.alpha;
                let a = expm1(-al * t);
                let d = expm1(-al);
                // a/d - 1 without cancellation as t -> 1
                let excess = -exp(-al * t) * expm1(-al * (1.0 - t)) / d;
                if al * t > 700.0 {
                    // log(a/d) ≈ excess here, and excess · e^{αt} stays finite
                    return -expm1(-al * (1.0 - t)) / (d * al);
                }
                let r = a / d;
                let log_ratio = if r < 0.5 { log(r) } else { log1p(excess) };
                log_ratio * expm1(al * t) / al
            }
            Family::Clayton => -(t - pow(t, self.alpha + 1.0)) / self.alpha,
        }
    }

    /// Kendall's tau through `τ = 4 ∫ φ/φ' du + 1`, adaptive quadrature on
    /// `[1e-10, 1 - 1e-10]`.
    pub fn tau(&self) -> Result<f64> {
        if self.family == Family::Frank && self.alpha == 0.0 {
            return Ok(0.0);
        }
        let integral = integrate(|t| self.generator_ratio(t), TAU_QUAD_DELTA, 1.0 - TAU_QUAD_DELTA, TAU_QUAD_TOL)?;
        Ok(4.0 * integral + 1.0)
    }

    /// Frank-only closed form `τ = 1 - (4/α)(1 - D1(α))`.
    pub fn frank_tau_closed_form(alpha: f64) -> f64 {
        if alpha == 0.0 {
            return 0.0;
        }
        1.0 - 4.0 / alpha * (1.0 - crate::numeric::debye1(alpha))
    }

    /// Solves `tau(alpha) = tau` by bisection.
    ///
    /// For Frank, `tau = 0` returns the independence copula.
    pub fn from_tau(family: Family, tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= -1.0 || tau >= 1.0 {
            return Err(Error::Domain(format!("Kendall's tau {tau} outside (-1, 1)")));
        }
        match family {
            Family::Frank if tau == 0.0 => Ok(Self::independence()),
            Family::Frank => {
                let sign = tau.signum();
                let target = tau.abs();
                let tau_at = |a: f64| -> f64 { CopulaSpec { family, alpha: a }.tau().unwrap_or(f64::NAN) - target };
                let hi = expand_bracket(tau_at, 1.0, 1e5)?;
                let a = bisect(tau_at, 1e-9, hi, 1e-13 * hi)?;
                Self::new(family, sign * a)
            }
            Family::Clayton => {
                if tau <= 0.0 {
                    return Err(Error::Domain(format!("Clayton only attains positive tau, got {tau}")));
                }
                // closed form of the Kendall identity for Clayton
                Self::new(family, 2.0 * tau / (1.0 - tau))
            }
        }
    }

    /// The `v` solving `C1(u, v) = w`, i.e. the conditional quantile of `V`
    /// given `U = u`.
    pub fn conditional_inverse(&self, w: f64, u: f64) -> Result<f64> {
        if !(w > 0.0 && w < 1.0 && u > 0.0 && u < 1.0) {
            return Err(Error::InvalidInput(format!("conditional inverse needs w, u in (0, 1), got w = {w}, u = {u}")));
        }
        match self.family {
            Family::Frank if self.is_independence() => Ok(w),
            Family::Frank => {
                let al = self.alpha;
                let a = expm1(-al * u);
                let d = expm1(-al);
                let b = w * d / ((1.0 + a) - w * a);
                Ok((-log1p(b) / al).clamp(0.0, 1.0))
            }
            Family::Clayton => {
                let target = |v: f64| clayton_partials(self.alpha, u, clamp_unit(v)).c1 - w;
                bisect(target, BOUNDARY_EPS, 1.0 - BOUNDARY_EPS, 1e-15)
            }
        }
    }
}

fn expand_bracket<F: FnMut(f64) -> f64>(mut f: F, start: f64, limit: f64) -> Result<f64> {
    let mut hi = start;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > limit {
            return Err(Error::Domain("Kendall's tau not attainable".into()));
        }
    }
    Ok(hi)
}

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)
}

// First-order expansion of Frank in alpha around independence.
fn independence_partials(alpha: f64, u: f64, v: f64) -> Partials {
    let h = 0.5 * alpha;
    let (ub, vb) = (1.0 - u, 1.0 - v);
    Partials {
        c: u * v * (1.0 + h * ub * vb),
        c1: v + h * v * vb * (1.0 - 2.0 * u),
        c2: u + h * u * ub * (1.0 - 2.0 * v),
        c12: 1.0 + h * (1.0 - 2.0 * u) * (1.0 - 2.0 * v),
        c11: -alpha * v * vb,
        c22: -alpha * u * ub,
        c121: -alpha * (1.0 - 2.0 * v),
        c122: -alpha * (1.0 - 2.0 * u),
    }
}

#[inline]
fn frank_partials(alpha: f64, u: f64, v: f64) -> Partials {
    let a = expm1(-alpha * u);
    let b = expm1(-alpha * v);
    let d = expm1(-alpha);
    let eu = 1.0 + a;
    let ev = 1.0 + b;
    let h = d + a * b;
    let h2 = h * h;
    let h3 = h2 * h;
    let core = alpha * alpha * d * eu * ev / h3;
    Partials {
        c: -log1p(a * b / d) / alpha,
        c1: eu * b / h,
        c2: ev * a / h,
        c12: -alpha * eu * ev * d / h2,
        c11: -alpha * b * eu * (d - b) / h2,
        c22: -alpha * a * ev * (d - a) / h2,
        c121: core * (h - 2.0 * b * eu),
        c122: core * (h - 2.0 * a * ev),
    }
}

fn frank_alpha_scores(alpha: f64, u: f64, v: f64) -> AlphaScores {
    let a = expm1(-alpha * u);
    let b = expm1(-alpha * v);
    let d = expm1(-alpha);
    let (eu, ev) = (1.0 + a, 1.0 + b);
    let (da, db, dd) = (-u * eu, -v * ev, -(1.0 + d));
    let h = d + a * b;
    let dh = dd + da * b + a * db;
    let l = log1p(a * b / d);
    let dl = dh / h - dd / d;
    let c = -l / alpha;
    let dc = l / (alpha * alpha) - dl / alpha;
    AlphaScores {
        log_c: dc / c,
        log_c1: -u + db / b - dh / h,
        log_c2: -v + da / a - dh / h,
        log_c12: 1.0 / alpha - u - v + dd / d - 2.0 * dh / h,
    }
}

fn clayton_c(alpha: f64, u: f64, v: f64) -> f64 {
    let s = pow(u, -alpha) + pow(v, -alpha) - 1.0;
    pow(s, -1.0 / alpha)
}

// [C, C1, C2, C12] for Clayton.
fn clayton_low_order(alpha: f64, u: f64, v: f64) -> [f64; 4] {
    let s = pow(u, -alpha) + pow(v, -alpha) - 1.0;
    let ls = log(s);
    let (lu, lv) = (log(u), log(v));
    [
        exp(-ls / alpha),
        exp((-alpha - 1.0) * lu + (-1.0 / alpha - 1.0) * ls),
        exp((-alpha - 1.0) * lv + (-1.0 / alpha - 1.0) * ls),
        (1.0 + alpha) * exp((-alpha - 1.0) * (lu + lv) + (-1.0 / alpha - 2.0) * ls),
    ]
}

// Second and third order by central differences of the closed-form lower
// partials; the step shrinks near the boundary.
fn clayton_partials(alpha: f64, u: f64, v: f64) -> Partials {
    let [c, c1, c2, c12] = clayton_low_order(alpha, u, v);
    let hu = 1e-5f64.min(0.45 * u.min(1.0 - u));
    let hv = 1e-5f64.min(0.45 * v.min(1.0 - v));
    let at = |x: f64, y: f64| clayton_low_order(alpha, x, y);
    let (pu, mu) = (at(u + hu, v), at(u - hu, v));
    let (pv, mv) = (at(u, v + hv), at(u, v - hv));
    Partials {
        c,
        c1,
        c2,
        c12,
        c11: (pu[1] - mu[1]) / (2.0 * hu),
        c22: (pv[2] - mv[2]) / (2.0 * hv),
        c121: (pu[3] - mu[3]) / (2.0 * hu),
        c122: (pv[3] - mv[3]) / (2.0 * hv),
    }
}
