//! Time marching of the discrete state vector, the reflection extension of
//! each slice to `[0, l]`, and the piecewise constant/linear interpolants in time.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::control::{lift_pn, DiscreteControl};
use crate::error::{Error, Result};
use crate::fem::{assemble_step, solve_step, stability_threshold, Mesh1D};
use crate::problem::{trace_averages, ProblemData};
use crate::quadrature::gauss4;
use crate::util::{linear_product, num};

/// Solution `u(·; k)` on `[0, s_k]` as nodal values on a uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSlice {
    pub k: usize,
    pub s_k: f64,
    pub mesh: Mesh1D,
    pub nodal: Vec<f64>,
}

/// Folds `x ≥ 0` into `[0, s]` by iterated reflection `x ↦ 2ʲ s − x`.
/// Points on a band boundary `2ʲ s` go to the lower band. Returns the image
/// and the number of reflections applied.
pub fn fold_into(x: f64, s: f64) -> (f64, u32) {
    let mut x = x;
    let mut depth = 0;
    while x > s {
        let mut upper = 2.0 * s;
        while x > upper {
            upper *= 2.0;
        }
        x = (upper - x).max(0.0);
        depth += 1;
    }
    (x, depth)
}

impl StateSlice {
    pub fn eval_local(&self, x: f64) -> f64 {
        self.mesh.interpolate(&self.nodal, x)
    }

    /// Piecewise-linear breakpoints and values of the extension on `[0, l]`.
    pub fn extended_profile(&self, l: f64) -> PiecewiseLinear {
        let mut xs = self.mesh.nodes().to_vec();
        let mut vs = self.nodal.clone();
        let mut len = self.s_k;
        while len < l {
            let count = xs.len();
            for i in (0..count - 1).rev() {
                xs.push(2.0 * len - xs[i]);
                vs.push(vs[i]);
            }
            len *= 2.0;
        }
        let cut = xs.partition_point(|&x| x < l);
        let end = PiecewiseLinear {
            xs: xs.clone(),
            vs: vs.clone(),
        }
        .eval(l);
        xs.truncate(cut);
        vs.truncate(cut);
        xs.push(l);
        vs.push(end);
        PiecewiseLinear { xs, vs }
    }

    pub fn integral_sq_local(&self) -> f64 {
        let h = self.mesh.h();
        self.nodal.windows(2).map(|w| linear_product(h, w[0], w[1], w[0], w[1])).sum()
    }
}

/// Value of the slice extended to `[0, l]` by reflection.
pub fn extend_eval(slice: &StateSlice, x: f64, l: f64, delta: f64) -> Result<f64> {
    let tol = 1e-12 * l.max(1.0);
    if !(x >= -tol && x <= l + tol) {
        return Err(Error::OutOfDomain { x, l });
    }
    let (y, depth) = fold_into(x.max(0.0), slice.s_k);
    debug_assert!(depth <= 1 + (l / delta).log2().floor() as u32 + 1);
    Ok(slice.eval_local(y.min(slice.s_k)))
}

/// Continuous piecewise-linear function given by sorted breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub xs: Vec<f64>,
    pub vs: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = self.xs.partition_point(|&p| p <= x).clamp(1, n - 1);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        if x1 <= x0 {
            return self.vs[i];
        }
        let r = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        self.vs[i - 1] * (1.0 - r) + self.vs[i] * r
    }

    /// Sorted union of the breakpoints of `self` and `other` inside `[a, b]`, plus `a` and `b`.
    pub fn union_grid(&self, other: &PiecewiseLinear, a: f64, b: f64) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .xs
            .iter()
            .chain(&other.xs)
            .copied()
            .filter(|&x| x > a && x < b)
            .chain([a, b])
            .collect();
        g.sort_by(f64::total_cmp);
        g.dedup_by(|p, q| (*p - *q).abs() <= 1e-14 * b.abs().max(1.0));
        g
    }

    /// Exact `∫_a^b u²`.
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let grid = self.union_grid(self, a, b);
        grid.windows(2)
            .map(|w| {
                let (p, q) = (self.eval(w[0]), self.eval(w[1]));
                linear_product(w[1] - w[0], p, q, p, q)
            })
            .sum()
    }

    /// Exact `∫ |u'|²` over the whole support.
    pub fn integral_grad_sq(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.vs.windows(2))
            .filter(|(x, _)| x[1] > x[0])
            .map(|(x, v)| (v[1] - v[0]).powi(2) / (x[1] - x[0]))
            .sum()
    }

    /// Exact `∫ ((self − other)/scale)²` over `[a, b]`.
    pub fn integral_diff_sq(&self, other: &PiecewiseLinear, a: f64, b: f64, scale: f64) -> f64 {
        let grid = self.union_grid(other, a, b);
        grid.windows(2)
            .map(|w| {
                let p = (self.eval(w[0]) - other.eval(w[0])) / scale;
                let q = (self.eval(w[1]) - other.eval(w[1])) / scale;
                linear_product(w[1] - w[0], p, q, p, q)
            })
            .sum()
    }
}

/// All slices `k = 0..n` of the discrete state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateVector {
    pub slices: Vec<StateSlice>,
    pub tau: f64,
    pub t_final: f64,
    pub l: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationMode {
    /// `u^τ(x, t) = u(x; k)` for `t_{k−1} < t ≤ t_k`.
    Constant,
    /// Linear in `t` between consecutive slices, frozen at `u(x; n)` for `t ≥ T`.
    Linear,
}

static THRESHOLD_WARNED: AtomicBool = AtomicBool::new(false);

/// Marches the discrete state vector for the control `dc` on meshes of `m`
/// elements. Trace data come from the lift of `dc`; `g_k` is the slab
/// average of the lifted flux.
pub fn solve_state(dc: &DiscreteControl, pd: &ProblemData, m: usize) -> Result<DiscreteStateVector> {
    if m < 2 {
        return Err(Error::Invalid("need at least two elements".into()));
    }
    if (dc.t_final - pd.t_final).abs() > 1e-12 * pd.t_final {
        return Err(Error::Mismatch(format!("control horizon {} vs problem horizon {}", dc.t_final, pd.t_final)));
    }
    if (dc.s[0] - pd.s0).abs() > 1e-12 * pd.s0.max(1.0) {
        return Err(Error::Invalid(format!("s_0 = {} differs from s0 = {}", dc.s[0], pd.s0)));
    }
    if let Some((k, s)) = dc.s.iter().enumerate().find(|(_, &s)| !(pd.delta <= s && s <= pd.l)) {
        return Err(Error::Invalid(format!("s_{k} = {s} outside [delta, l]")));
    }
    let n = dc.n();
    let tau = dc.tau();
    if !THRESHOLD_WARNED.load(Ordering::Relaxed) {
        let tau0 = stability_threshold(pd.sampled_coefficient_bound(9)?, pd.a0)?;
        if tau >= tau0 {
            THRESHOLD_WARNED.store(true, Ordering::Relaxed);
            log::warn!("time step {tau} is not below the uniqueness threshold {tau0}");
        }
    }
    let lift = lift_pn(dc)?;
    let mesh0 = Mesh1D::uniform(pd.s0, m)?;
    let phi: Vec<f64> = mesh0.nodes().iter().map(|&x| pd.phi.eval1(x)).collect::<std::result::Result<_, _>>()?;
    let mut slices = Vec::with_capacity(n + 1);
    slices.push(StateSlice {
        k: 0,
        s_k: pd.s0,
        mesh: mesh0,
        nodal: phi,
    });
    for k in 1..=n {
        let step = || -> Result<StateSlice> {
            let prev = &slices[k - 1];
            let (gs, chi) = trace_averages(&lift, &pd.gamma, &pd.chi, k, tau)?;
            let lo = (k - 1) as f64 * tau;
            let g_k = gauss4(lo, lo + tau, |t| lift.g(t))? / tau;
            let sys = assemble_step(
                pd,
                k,
                dc.s[k],
                m,
                tau,
                |x| extend_eval(prev, x, pd.l, pd.delta),
                gs,
                chi,
                g_k,
            )?;
            let nodal = solve_step(&sys)?;
            Ok(StateSlice {
                k,
                s_k: dc.s[k],
                mesh: sys.mesh,
                nodal,
            })
        };
        slices.push(step().map_err(|e| e.at_step(k))?);
    }
    Ok(DiscreteStateVector {
        slices,
        tau,
        t_final: dc.t_final,
        l: pd.l,
        delta: pd.delta,
    })
}

impl DiscreteStateVector {
    pub fn n(&self) -> usize {
        self.slices.len() - 1
    }

    /// Slab index for `t`, snapping to a knot within `1e-9 τ`.
    fn slab_index(&self, t: f64) -> usize {
        let r = t / self.tau;
        let k = if (r - r.round()).abs() <= 1e-9 {
            r.round()
        } else {
            r.ceil()
        };
        (k.max(0.0) as usize).min(self.n())
    }

    pub fn eval_extended(&self, k: usize, x: f64) -> Result<f64> {
        extend_eval(&self.slices[k], x, self.l, self.delta)
    }

    pub fn eval_interpolant(&self, x: f64, t: f64, mode: InterpolationMode) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Invalid(format!("negative time {t}")));
        }
        let k = self.slab_index(t);
        match mode {
            InterpolationMode::Constant => self.eval_extended(k, x),
            InterpolationMode::Linear => {
                if k == 0 || t >= self.t_final {
                    return self.eval_extended(k, x);
                }
                let prev = self.eval_extended(k - 1, x)?;
                let cur = self.eval_extended(k, x)?;
                let r = (t - (k - 1) as f64 * self.tau) / self.tau;
                Ok(prev + (cur - prev) * r)
            }
        }
    }

    /// CSV with columns `k,t_k,node,x,u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t_k,node,x,u\n");
        for s in &self.slices {
            let t = s.k as f64 * self.tau;
            for (i, (&x, &u)) in s.mesh.nodes().iter().zip(&s.nodal).enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", s.k, num(t), i, num(x), num(u));
            }
        }
        out
    }
}

pub fn eval_interpolant(dsv: &DiscreteStateVector, x: f64, t: f64, mode: InterpolationMode) -> Result<f64> {
    dsv.eval_interpolant(x, t, mode)
}
