//! Discrete and continuous controls `(s, g)`, their Sobolev norms, the grid
//! sampling operator and the C¹ quadratic lift back to continuous time.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, ExprError, Result};
use crate::expr::FunctionSpec;
use crate::problem::ProblemData;
use crate::quadrature::{mapped, GAUSS4};
use crate::util::num;

/// Grid values `s_0..s_n` (boundary positions) and `g_0..g_n` (fluxes) on
/// `t_k = k T / n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteControl {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
}

impl DiscreteControl {
    pub fn new(s: Vec<f64>, g: Vec<f64>, t_final: f64) -> Result<Self> {
        if s.len() != g.len() {
            return Err(Error::Invalid(format!(
                "s has {} values but g has {}",
                s.len(),
                g.len()
            )));
        }
        if s.len() < 2 {
            return Err(Error::Invalid("a control needs at least two grid values".into()));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Invalid("T must be positive".into()));
        }
        if s.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("control entries must be finite".into()));
        }
        Ok(Self { s, g, t_final })
    }

    /// `s ≡ s0`, `g ≡ 0`.
    pub fn constant(s0: f64, n: usize, t_final: f64) -> Result<Self> {
        Self::new(vec![s0; n + 1], vec![0.0; n + 1], t_final)
    }

    pub fn n(&self) -> usize {
        self.s.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau()
    }

    pub fn w22(&self) -> f64 {
        norm_w22(&self.s, self.tau()).expect("length checked at construction")
    }

    pub fn w21(&self) -> f64 {
        norm_w21(&self.g, self.tau()).expect("length checked at construction")
    }

    /// CSV with columns `k,t_k,s_k,g_k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t_k,s_k,g_k\n");
        for k in 0..=self.n() {
            let _ = writeln!(out, "{},{},{},{}", k, num(self.time(k)), num(self.s[k]), num(self.g[k]));
        }
        out
    }
}

fn check_seq(vals: &[f64], tau: f64) -> Result<()> {
    if vals.len() < 2 {
        return Err(Error::Invalid("norm needs at least two grid values".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    Ok(())
}

/// Squared discrete `W₂²` norm: `Σ_{k<n} τ s_k² + Σ_{k≥1} τ s_{t̄,k}² + Σ_{1≤k<n} τ s_{t̄t,k}²`.
pub fn norm_w22(s: &[f64], tau: f64) -> Result<f64> {
    check_seq(s, tau)?;
    let n = s.len() - 1;
    let l2: f64 = s[..n].iter().map(|v| tau * v * v).sum();
    let d1: f64 = s.windows(2).map(|w| (w[1] - w[0]) / tau).map(|d| tau * d * d).sum();
    let d2: f64 = s
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]) / (tau * tau))
        .map(|d| tau * d * d)
        .sum();
    Ok(l2 + d1 + d2)
}

/// Squared discrete `W₂¹` norm: `Σ_{k<n} τ g_k² + Σ_{k≥1} τ g_{t̄,k}²`.
pub fn norm_w21(g: &[f64], tau: f64) -> Result<f64> {
    check_seq(g, tau)?;
    let n = g.len() - 1;
    let l2: f64 = g[..n].iter().map(|v| tau * v * v).sum();
    let d1: f64 = g.windows(2).map(|w| (w[1] - w[0]) / tau).map(|d| tau * d * d).sum();
    Ok(l2 + d1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControlKind {
    Lift,
    Analytic,
}

#[derive(Debug, Clone)]
enum Repr {
    Lift {
        s: Vec<f64>,
        g: Vec<f64>,
        tau: f64,
    },
    Analytic {
        s: FunctionSpec,
        g: FunctionSpec,
        ds: Option<FunctionSpec>,
        d2s: Option<FunctionSpec>,
        dg: Option<FunctionSpec>,
    },
}

const KNOT_SNAP: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const FD_STEP_SECOND: f64 = 1e-4;
const ANALYTIC_PIECES: usize = 256;

/// A free-boundary curve `s(t)` with derivatives and a flux curve `g(t)` on `[0, T]`.
#[derive(Debug, Clone)]
pub struct ContinuousControl {
    repr: Repr,
    t_final: f64,
}

impl ContinuousControl {
    /// Expression-backed control; derivatives fall back to central differences.
    pub fn analytic(s: FunctionSpec, g: FunctionSpec, pd: &ProblemData) -> Result<Self> {
        Self::analytic_with_derivatives(s, g, None, None, None, pd)
    }

    pub fn analytic_with_derivatives(
        s: FunctionSpec,
        g: FunctionSpec,
        ds: Option<FunctionSpec>,
        d2s: Option<FunctionSpec>,
        dg: Option<FunctionSpec>,
        pd: &ProblemData,
    ) -> Result<Self> {
        for f in [Some(&s), Some(&g), ds.as_ref(), d2s.as_ref(), dg.as_ref()].into_iter().flatten() {
            if f.arity() != 1 {
                return Err(Error::Invalid(format!("control curve `{}` must be a function of t", f.source())));
            }
        }
        let s_at0 = s.eval1(0.0)?;
        if (s_at0 - pd.s0).abs() > 1e-12 * pd.s0.abs().max(1.0) {
            return Err(Error::Invalid(format!("s(0) = {s_at0} differs from s0 = {}", pd.s0)));
        }
        Ok(Self {
            repr: Repr::Analytic { s, g, ds, d2s, dg },
            t_final: pd.t_final,
        })
    }

    pub fn kind(&self) -> ControlKind {
        match self.repr {
            Repr::Lift { .. } => ControlKind::Lift,
            Repr::Analytic { .. } => ControlKind::Analytic,
        }
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Lift pieces: `(k, local time t − t_{k−1})`.
    fn piece(&self, t: f64, tau: f64, n: usize) -> (usize, f64) {
        let k = ((t / tau).ceil() as isize).clamp(1, n as isize) as usize;
        (k, t - (k - 1) as f64 * tau)
    }

    /// Position, slope and curvature of the quadratic lift at `t`.
    fn lift_s(s: &[f64], tau: f64, k: usize, r: f64) -> (f64, f64, f64) {
        if k == 1 {
            let d1 = (s[1] - s[0]) / tau;
            (s[0] + r * r / (2.0 * tau) * d1, r / tau * d1, d1 / tau)
        } else {
            let d = (s[k - 1] - s[k - 2]) / tau;
            let dd = (s[k] - 2.0 * s[k - 1] + s[k - 2]) / (tau * tau);
            (s[k - 1] + (r - 0.5 * tau) * d + 0.5 * r * r * dd, d + r * dd, dd)
        }
    }

    /// Jumps `(value, slope)` of the boundary lift across the interior knots
    /// `t_1..t_{n−1}`; `None` for analytic controls.
    pub fn knot_jumps(&self) -> Option<Vec<(f64, f64)>> {
        let Repr::Lift { s, tau, .. } = &self.repr else {
            return None;
        };
        let n = s.len() - 1;
        Some(
            (1..n)
                .map(|k| {
                    let left = Self::lift_s(s, *tau, k, *tau);
                    let right = Self::lift_s(s, *tau, k + 1, 0.0);
                    ((left.0 - right.0).abs(), (left.1 - right.1).abs())
                })
                .collect(),
        )
    }

    pub fn s(&self, t: f64) -> std::result::Result<f64, ExprError> {
        match &self.repr {
            Repr::Lift { s, tau, .. } => {
                let (k, r) = self.piece(t, *tau, s.len() - 1);
                Ok(Self::lift_s(s, *tau, k, r).0)
            }
            Repr::Analytic { s, .. } => s.eval1(t),
        }
    }

    pub fn ds(&self, t: f64) -> std::result::Result<f64, ExprError> {
        match &self.repr {
            Repr::Lift { s, tau, .. } => {
                let (k, r) = self.piece(t, *tau, s.len() - 1);
                Ok(Self::lift_s(s, *tau, k, r).1)
            }
            Repr::Analytic { ds: Some(d), .. } => d.eval1(t),
            Repr::Analytic { s, .. } => Ok((s.eval1(t + FD_STEP)? - s.eval1(t - FD_STEP)?) / (2.0 * FD_STEP)),
        }
    }

    pub fn d2s(&self, t: f64) -> std::result::Result<f64, ExprError> {
        match &self.repr {
            Repr::Lift { s, tau, .. } => {
                let (k, r) = self.piece(t, *tau, s.len() - 1);
                Ok(Self::lift_s(s, *tau, k, r).2)
            }
            Repr::Analytic { d2s: Some(d), .. } => d.eval1(t),
            Repr::Analytic { ds: Some(d), .. } => {
                Ok((d.eval1(t + FD_STEP)? - d.eval1(t - FD_STEP)?) / (2.0 * FD_STEP))
            }
            Repr::Analytic { s, .. } => {
                let h = FD_STEP_SECOND;
                Ok((s.eval1(t + h)? - 2.0 * s.eval1(t)? + s.eval1(t - h)?) / (h * h))
            }
        }
    }

    pub fn g(&self, t: f64) -> std::result::Result<f64, ExprError> {
        match &self.repr {
            Repr::Lift { g, tau, .. } => {
                let (k, r) = self.piece(t, *tau, g.len() - 1);
                // snap to the knots so that gⁿ(t_k) = g_k exactly
                let w = match r / tau {
                    w if (w - 1.0).abs() <= KNOT_SNAP => return Ok(g[k]),
                    w if w.abs() <= KNOT_SNAP => return Ok(g[k - 1]),
                    w => w,
                };
                Ok(g[k - 1] * (1.0 - w) + g[k] * w)
            }
            Repr::Analytic { g, .. } => g.eval1(t),
        }
    }

    pub fn dg(&self, t: f64) -> std::result::Result<f64, ExprError> {
        match &self.repr {
            Repr::Lift { g, tau, .. } => {
                let (k, _) = self.piece(t, *tau, g.len() - 1);
                Ok((g[k] - g[k - 1]) / tau)
            }
            Repr::Analytic { dg: Some(d), .. } => d.eval1(t),
            Repr::Analytic { g, .. } => Ok((g.eval1(t + FD_STEP)? - g.eval1(t - FD_STEP)?) / (2.0 * FD_STEP)),
        }
    }

    /// Quadrature intervals: the knot intervals of a lift, a uniform
    /// partition for analytic curves.
    fn intervals(&self) -> Vec<(f64, f64)> {
        let pieces = match &self.repr {
            Repr::Lift { s, .. } => s.len() - 1,
            Repr::Analytic { .. } => ANALYTIC_PIECES,
        };
        let h = self.t_final / pieces as f64;
        (0..pieces).map(|i| (i as f64 * h, (i + 1) as f64 * h)).collect()
    }

    /// Squared continuous norms `(‖s‖²_{W₂²}, ‖g‖²_{W₂¹})` on `[0, T]`.
    pub fn norms(&self) -> Result<(f64, f64)> {
        self.norms_on(0.0, self.t_final)
    }

    /// Squared norms restricted to `[a, b]`.
    pub fn norms_on(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let (mut ns, mut ng) = (0.0, 0.0);
        for (lo, hi) in self.intervals() {
            let (lo, hi) = (lo.max(a), hi.min(b));
            if hi <= lo {
                continue;
            }
            for (t, w) in mapped(&GAUSS4, lo, hi) {
                let (s, ds, d2s) = (self.s(t)?, self.ds(t)?, self.d2s(t)?);
                let (g, dg) = (self.g(t)?, self.dg(t)?);
                ns += w * (s * s + ds * ds + d2s * d2s);
                ng += w * (g * g + dg * dg);
            }
        }
        Ok((ns, ng))
    }

    /// `max |s − s'|` and `max |g − g'|` over `samples + 1` equispaced points and all lift knots.
    pub fn sup_distance(&self, other: &ContinuousControl, samples: usize) -> Result<(f64, f64)> {
        let mut ts: Vec<f64> = (0..=samples).map(|i| self.t_final * i as f64 / samples as f64).collect();
        for c in [self, other] {
            if let Repr::Lift { s, tau, .. } = &c.repr {
                ts.extend((0..s.len()).map(|k| k as f64 * tau));
            }
        }
        let (mut ds, mut dg) = (0.0f64, 0.0f64);
        for t in ts {
            ds = ds.max((self.s(t)? - other.s(t)?).abs());
            dg = dg.max((self.g(t)? - other.g(t)?).abs());
        }
        Ok((ds, dg))
    }
}

/// Pointwise sampling `s_k = s(t_k)`, `g_k = g(t_k)`.
pub fn sample_qn(v: &ContinuousControl, n: usize) -> Result<DiscreteControl> {
    if n == 0 {
        return Err(Error::Invalid("n must be positive".into()));
    }
    let tau = v.t_final / n as f64;
    let mut s = Vec::with_capacity(n + 1);
    let mut g = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * tau;
        s.push(v.s(t)?);
        g.push(v.g(t)?);
    }
    DiscreteControl::new(s, g, v.t_final)
}

/// C¹ piecewise-quadratic lift of `s` and piecewise-linear interpolant of `g`.
pub fn lift_pn(dc: &DiscreteControl) -> Result<ContinuousControl> {
    if dc.n() < 1 {
        return Err(Error::Invalid("lift needs n >= 1".into()));
    }
    Ok(ContinuousControl {
        repr: Repr::Lift {
            s: dc.s.clone(),
            g: dc.g.clone(),
            tau: dc.tau(),
        },
        t_final: dc.t_final,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub in_set: bool,
    pub w22_s: f64,
    pub w21_g: f64,
    pub bounds_ok: bool,
    pub norm_ok: bool,
}

impl AdmissibilityReport {
    fn new(w22_s: f64, w21_g: f64, bounds_ok: bool, radius: f64) -> Self {
        let norm_ok = w22_s.max(w21_g) <= radius * radius;
        Self {
            in_set: bounds_ok && norm_ok,
            w22_s,
            w21_g,
            bounds_ok,
            norm_ok,
        }
    }
}

/// Membership in the discrete control set of radius `R + radius_shift`.
/// A negative shift tests the shrunken set.
pub fn check_admissible_discrete(dc: &DiscreteControl, pd: &ProblemData, radius_shift: f64) -> AdmissibilityReport {
    let bounds_ok = dc.s.iter().all(|&s| pd.delta <= s && s <= pd.l);
    AdmissibilityReport::new(dc.w22(), dc.w21(), bounds_ok, pd.radius + radius_shift)
}

/// Membership in the continuous control set of radius `R + radius_shift`.
pub fn check_admissible_continuous(
    v: &ContinuousControl,
    pd: &ProblemData,
    radius_shift: f64,
) -> Result<AdmissibilityReport> {
    let samples = 2048;
    let mut bounds_ok = (v.s(0.0)? - pd.s0).abs() <= 1e-12 * pd.s0.max(1.0);
    for i in 0..=samples {
        let s = v.s(v.t_final * i as f64 / samples as f64)?;
        bounds_ok &= pd.delta <= s && s <= pd.l;
    }
    let (ns, ng) = v.norms()?;
    Ok(AdmissibilityReport::new(ns, ng, bounds_ok, pd.radius + radius_shift))
}

/// `max_k |s_k − s_{k−1}| ≤ cap · τ`.
pub fn lipschitz_check(dc: &DiscreteControl, cap: f64) -> bool {
    let tau = dc.tau();
    dc.s.windows(2).all(|w| (w[1] - w[0]).abs() <= cap * tau * (1.0 + 1e-12))
}
