//! Minimization of the discrete cost over the discrete control set.
//!
//! The box `δ ≤ s_k ≤ l` is enforced by projection and `s_0` is pinned; the
//! norm ball `max(w22, w21) ≤ R²` enters as a quadratic penalty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::DiscreteControl;
use crate::cost::{discrete_cost_against, TraceData};
use crate::error::{Error, Result};
use crate::problem::ProblemData;
use crate::state::solve_state;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FdGradient,
    NelderMead,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fd_gradient" => Ok(Method::FdGradient),
            "nelder_mead" => Ok(Method::NelderMead),
            other => Err(format!("unknown method `{other}` (expected fd_gradient or nelder_mead)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptOptions {
    pub max_iters: usize,
    /// Central-difference perturbation.
    pub grad_step: f64,
    /// First trial step of the line search (and initial simplex size for Nelder–Mead).
    pub step0: f64,
    pub tol: f64,
    pub penalty_weight: f64,
    pub method: Method,
    pub seed: u64,
    /// Whether `s_1..s_n` are free; `false` keeps the initial boundary.
    pub optimize_s: bool,
    /// Whether `g_0..g_n` are free.
    pub optimize_g: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_step: 1e-6,
            step0: 1.0,
            tol: 1e-10,
            penalty_weight: 1e3,
            method: Method::FdGradient,
            seed: 0,
            optimize_s: true,
            optimize_g: true,
        }
    }
}

impl OptOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_step", self.grad_step),
            ("step0", self.step0),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("option `{name}` must be positive")));
            }
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Invalid("option `penalty_weight` must be nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("option `max_iters` must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub cost: f64,
    pub penalty: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub best: DiscreteControl,
    /// Discrete cost plus penalty at `best`.
    pub best_cost: f64,
    pub history: Vec<HistoryEntry>,
    pub converged: bool,
    pub iters: usize,
}

/// Clamps `s_k` into `[δ, l]` and pins `s_0 = s0`.
pub fn project_box(dc: &DiscreteControl, pd: &ProblemData) -> DiscreteControl {
    let mut out = dc.clone();
    for s in out.s.iter_mut() {
        *s = s.clamp(pd.delta, pd.l);
    }
    out.s[0] = pd.s0;
    out
}

/// `max(0, w22 − R²)² + max(0, w21 − R²)²`.
pub fn norm_penalty(dc: &DiscreteControl, pd: &ProblemData) -> f64 {
    let r2 = pd.radius * pd.radius;
    (dc.w22() - r2).max(0.0).powi(2) + (dc.w21() - r2).max(0.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    pub penalty: f64,
}

impl Evaluation {
    pub fn value(&self) -> f64 {
        self.cost + self.penalty
    }
}

/// Penalized cost against fixed trace observations.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub pd: &'a ProblemData,
    pub data: TraceData,
    pub m: usize,
    pub weight: f64,
}

impl<'a> Objective<'a> {
    pub fn new(pd: &'a ProblemData, data: TraceData, m: usize, weight: f64) -> Self {
        Self { pd, data, m, weight }
    }

    /// Evaluates at the projection of `dc`. Solver failures give an infinite cost.
    pub fn evaluate(&self, dc: &DiscreteControl) -> Evaluation {
        let x = project_box(dc, self.pd);
        let cost = solve_state(&x, self.pd, self.m)
            .and_then(|dsv| discrete_cost_against(&dsv, &x, &self.data, self.pd.beta0, self.pd.beta1))
            .map(|c| c.total)
            .unwrap_or(f64::INFINITY);
        Evaluation {
            cost,
            penalty: self.weight * norm_penalty(&x, self.pd),
        }
    }

    pub fn value(&self, dc: &DiscreteControl) -> f64 {
        self.evaluate(dc).value()
    }
}

pub fn penalized_objective(dc: &DiscreteControl, pd: &ProblemData, m: usize, weight: f64) -> Result<f64> {
    let data = TraceData::from_problem(pd, dc.n())?;
    Ok(Objective::new(pd, data, m, weight).value(dc))
}

/// Free coordinates in order `s_1..s_n, g_0..g_n`.
fn coordinate(dc: &mut DiscreteControl, i: usize) -> &mut f64 {
    let n = dc.n();
    if i < n {
        &mut dc.s[i + 1]
    } else {
        &mut dc.g[i - n]
    }
}

fn free_mask(n: usize, opts: &OptOptions) -> Vec<bool> {
    (0..2 * n + 1).map(|i| if i < n { opts.optimize_s } else { opts.optimize_g }).collect()
}

/// Central-difference gradient over `s_1..s_n, g_0..g_n`.
pub fn fd_gradient<F>(obj: F, dc: &DiscreteControl, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&DiscreteControl) -> f64 + Sync,
{
    let mask = vec![true; 2 * dc.n() + 1];
    fd_gradient_masked(&obj, dc, h, &mask)
}

/// As [`fd_gradient`], leaving masked-out coordinates at zero. A non-finite
/// value on one side falls back to a one-sided difference.
pub fn fd_gradient_masked<F>(obj: &F, dc: &DiscreteControl, h: f64, mask: &[bool]) -> Result<Vec<f64>>
where
    F: Fn(&DiscreteControl) -> f64 + Sync,
{
    if !(h > 0.0) {
        return Err(Error::Invalid("gradient step must be positive".into()));
    }
    let needs_center = mask.iter().any(|&m| m);
    let center = if needs_center { obj(dc) } else { 0.0 };
    (0..mask.len())
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return Ok(0.0);
            }
            let mut plus = dc.clone();
            *coordinate(&mut plus, i) += h;
            let mut minus = dc.clone();
            *coordinate(&mut minus, i) -= h;
            let (fp, fm) = (obj(&plus), obj(&minus));
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => Ok((fp - fm) / (2.0 * h)),
                (true, false) if center.is_finite() => Ok((fp - center) / h),
                (false, true) if center.is_finite() => Ok((center - fm) / h),
                _ => Err(Error::NonFiniteGradient(i)),
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn flatten(dc: &DiscreteControl) -> Vec<f64> {
    dc.s[1..].iter().chain(&dc.g).copied().collect()
}

fn unflatten(template: &DiscreteControl, v: &[f64]) -> DiscreteControl {
    let mut out = template.clone();
    for (i, &x) in v.iter().enumerate() {
        *coordinate(&mut out, i) = x;
    }
    out
}

pub fn minimize(pd: &ProblemData, n: usize, m: usize, init: &DiscreteControl, opts: &OptOptions) -> Result<OptResult> {
    let data = TraceData::from_problem(pd, n)?;
    minimize_against(pd, data, m, init, opts)
}

/// Minimizes the penalized cost against the given observations.
pub fn minimize_against(
    pd: &ProblemData,
    data: TraceData,
    m: usize,
    init: &DiscreteControl,
    opts: &OptOptions,
) -> Result<OptResult> {
    opts.validate()?;
    if init.n() != data.n() {
        return Err(Error::Mismatch(format!("init has n = {}, data has n = {}", init.n(), data.n())));
    }
    let obj = Objective::new(pd, data, m, opts.penalty_weight);
    let x0 = project_box(init, pd);
    match opts.method {
        Method::FdGradient => projected_gradient(&obj, x0, opts),
        Method::NelderMead => nelder_mead(&obj, x0, opts),
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const WINDOW: usize = 5;

fn projected_gradient(obj: &Objective<'_>, x0: DiscreteControl, opts: &OptOptions) -> Result<OptResult> {
    let pd = obj.pd;
    let mask = free_mask(x0.n(), opts);
    let mut x = x0;
    let mut fx = obj.evaluate(&x);
    if !fx.value().is_finite() {
        return Err(Error::Invalid("objective is not finite at the initial control".into()));
    }
    let mut history = vec![HistoryEntry {
        iter: 0,
        cost: fx.cost,
        penalty: fx.penalty,
        step: 0.0,
    }];
    let mut converged = false;
    let mut iters = 0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let value = |dc: &DiscreteControl| obj.value(dc);
    for it in 1..=opts.max_iters {
        let grad = fd_gradient_masked(&value, &x, opts.grad_step, &mask)?;
        if dot(&grad, &grad).sqrt() < opts.tol {
            converged = true;
            break;
        }
        let flat = flatten(&x);
        // Barzilai–Borwein guess for the first trial step
        let mut step = match &prev {
            Some((px, pg)) => {
                let sv: Vec<f64> = flat.iter().zip(px).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
                let sy = dot(&sv, &yv);
                if sy > 0.0 {
                    (dot(&sv, &sv) / sy).clamp(1e-12, 1e12)
                } else {
                    opts.step0
                }
            }
            None => opts.step0,
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = flat.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let cand = project_box(&unflatten(&x, &trial), pd);
            let moved: Vec<f64> = flat.iter().zip(flatten(&cand)).map(|(a, b)| a - b).collect();
            let decrease = dot(&grad, &moved);
            let fc = obj.evaluate(&cand);
            if fc.value().is_finite() && fc.value() <= fx.value() - ARMIJO * decrease && decrease > 0.0 {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no descent left at finite-difference resolution
            converged = true;
            break;
        };
        prev = Some((flat, grad));
        x = cand;
        fx = fc;
        iters = it;
        history.push(HistoryEntry {
            iter: it,
            cost: fx.cost,
            penalty: fx.penalty,
            step,
        });
        if history.len() > WINDOW {
            let old = history[history.len() - 1 - WINDOW];
            let old_v = old.cost + old.penalty;
            if (old_v - fx.value()) <= opts.tol * old_v.abs() {
                converged = true;
                break;
            }
        }
    }
    Ok(OptResult {
        best_cost: fx.value(),
        best: x,
        history,
        converged,
        iters,
    })
}

fn nelder_mead(obj: &Objective<'_>, x0: DiscreteControl, opts: &OptOptions) -> Result<OptResult> {
    let pd = obj.pd;
    let mask = free_mask(x0.n(), opts);
    let free: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let d = free.len();
    let f0 = obj.evaluate(&x0);
    if !f0.value().is_finite() {
        return Err(Error::Invalid("objective is not finite at the initial control".into()));
    }
    let mut history = vec![HistoryEntry {
        iter: 0,
        cost: f0.cost,
        penalty: f0.penalty,
        step: 0.0,
    }];
    if d == 0 {
        return Ok(OptResult {
            best: x0,
            best_cost: f0.value(),
            history,
            converged: true,
            iters: 0,
        });
    }
    let base = flatten(&x0);
    let to_point = |v: &[f64]| -> (Vec<f64>, DiscreteControl, Evaluation) {
        let mut full = base.clone();
        for (j, &i) in free.iter().enumerate() {
            full[i] = v[j];
        }
        let dc = project_box(&unflatten(&x0, &full), pd);
        let flat = flatten(&dc);
        let reduced = free.iter().map(|&i| flat[i]).collect();
        let e = obj.evaluate(&dc);
        (reduced, dc, e)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let mut simplex: Vec<(Vec<f64>, DiscreteControl, Evaluation)> = vec![to_point(&start)];
    for j in 0..d {
        let mut v = start.clone();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let size = 0.1 * opts.step0 * v[j].abs().max(1.0);
        v[j] += sign * size;
        simplex.push(to_point(&v));
    }
    let df = d as f64;
    let (alpha, beta, gamma, sigma) = (1.0, 1.0 + 2.0 / df, 0.75 - 0.5 / df, 1.0 - 1.0 / df);
    let key = |p: &(Vec<f64>, DiscreteControl, Evaluation)| p.2.value();
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=opts.max_iters {
        simplex.sort_by(|a, b| key(a).total_cmp(&key(b)));
        let (best, worst) = (key(&simplex[0]), key(&simplex[d]));
        if worst - best <= opts.tol * best.abs().max(opts.tol) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|p| p.0[j]).sum::<f64>() / df).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (simplex[d].0[j] - centroid[j])).collect() };
        let refl = to_point(&along(-alpha));
        let fr = key(&refl);
        let second_worst = key(&simplex[d - 1]);
        if fr < best {
            let exp = to_point(&along(-alpha * beta));
            simplex[d] = if key(&exp) < fr { exp } else { refl };
        } else if fr < second_worst {
            simplex[d] = refl;
        } else {
            let contracted = if fr < worst {
                to_point(&along(-alpha * gamma))
            } else {
                to_point(&along(gamma))
            };
            if key(&contracted) < fr.min(worst) {
                simplex[d] = contracted;
            } else {
                let b = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = (0..d).map(|j| b[j] + sigma * (p.0[j] - b[j])).collect();
                    *p = to_point(&v);
                }
            }
        }
        simplex.sort_by(|a, b| key(a).total_cmp(&key(b)));
        iters = it;
        let e = simplex[0].2;
        history.push(HistoryEntry {
            iter: it,
            cost: e.cost,
            penalty: e.penalty,
            step: 0.0,
        });
    }
    simplex.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let (_, best, e) = simplex.swap_remove(0);
    Ok(OptResult {
        best,
        best_cost: e.value(),
        history,
        converged,
        iters,
    })
}
