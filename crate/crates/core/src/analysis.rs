//! Energy-estimate diagnostics, fractional trace norms, weak-form residuals
//! and refinement sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::control::{lift_pn, sample_qn, ContinuousControl, DiscreteControl};
use crate::cost::{discrete_cost, TraceData};
use crate::error::{Error, Result};
use crate::expr::FunctionSpec;
use crate::problem::ProblemData;
use crate::quadrature::{composite_gauss4, mapped, GAUSS2, GAUSS4};
use crate::state::{solve_state, DiscreteStateVector, PiecewiseLinear};
use crate::util::num;

/// Both sides of the first and second energy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `max_k ∫₀ˡ u² + τ Σ_k ∫₀ˡ |u'|²`.
    pub lhs_first: f64,
    /// `τ Σ_k ∫₀ˡ u_t̄² + max_k ∫₀ˡ |u'|²`.
    pub lhs_second_extra: f64,
    pub rhs_data: f64,
    pub rhs_boundary_overlap: f64,
    /// `lhs_first / (rhs_data + rhs_boundary_overlap)`, or 0 when undefined.
    pub ratio: f64,
    pub ratio_defined: bool,
    /// Right side of the second estimate with `W₂^{1/4}` trace norms.
    pub rhs_second: f64,
    /// `lhs_second_extra / rhs_second`, or 0 when undefined.
    pub ratio_second: f64,
}

const PHI_PIECES: usize = 64;
const F_PIECES: usize = 32;

fn profiles(dsv: &DiscreteStateVector) -> Vec<PiecewiseLinear> {
    dsv.slices.iter().map(|s| s.extended_profile(dsv.l)).collect()
}

/// `Σ_{k=1}^{n-1} 1₊(s_{k+1} − s_k) ∫_{s_k}^{s_{k+1}} u²(x; k)`.
fn boundary_overlap(ext: &[PiecewiseLinear], s: &[f64]) -> f64 {
    let n = s.len() - 1;
    (1..n)
        .filter(|&k| s[k + 1] > s[k])
        .map(|k| ext[k].integral_sq(s[k], s[k + 1]))
        .sum()
}

/// `(‖g‖², ‖γ(s,t) s'‖², ‖χ(s,t)‖², ‖f‖²_{L₂(D)})` along the lift of `dc`.
fn data_norms(dc: &DiscreteControl, pd: &ProblemData) -> Result<[f64; 4]> {
    let lift = lift_pn(dc)?;
    let tau = dc.tau();
    let mut out = [0.0; 4];
    for k in 1..=dc.n() {
        let lo = (k - 1) as f64 * tau;
        for (t, w) in mapped(&GAUSS4, lo, lo + tau) {
            let s = lift.s(t)?;
            out[0] += w * lift.g(t)?.powi(2);
            out[1] += w * (pd.gamma.eval2(s, t)? * lift.ds(t)?).powi(2);
            out[2] += w * pd.chi.eval2(s, t)?.powi(2);
            out[3] += w * composite_gauss4(0.0, pd.l, F_PIECES, |x| pd.f.eval2(x, t).map(|v| v * v))?;
        }
    }
    Ok(out)
}

pub fn energy_report(dsv: &DiscreteStateVector, dc: &DiscreteControl, pd: &ProblemData) -> Result<EnergyReport> {
    let n = dc.n();
    if dsv.n() != n {
        return Err(Error::Mismatch(format!("state has n = {}, control n = {n}", dsv.n())));
    }
    let tau = dc.tau();
    let l = pd.l;
    let ext = profiles(dsv);
    let max_sq = ext.iter().map(|p| p.integral_sq(0.0, l)).fold(0.0, f64::max);
    let grads: Vec<f64> = ext.iter().map(PiecewiseLinear::integral_grad_sq).collect();
    let lhs_first = max_sq + tau * grads[1..].iter().sum::<f64>();
    let time_diff: f64 = (1..=n).map(|k| ext[k].integral_diff_sq(&ext[k - 1], 0.0, l, tau)).sum();
    let lhs_second_extra = tau * time_diff + grads[1..].iter().copied().fold(0.0, f64::max);

    let phi_sq = composite_gauss4(0.0, pd.s0, PHI_PIECES, |x| pd.phi.eval1(x).map(|v| v * v))?;
    let [g_sq, gs_sq, chi_sq, f_sq] = data_norms(dc, pd)?;
    let rhs_data = phi_sq + g_sq + f_sq + gs_sq + chi_sq;
    let overlap = boundary_overlap(&ext, &dc.s);

    let denom = rhs_data + overlap;
    let (ratio, ratio_defined) = if denom > 0.0 {
        (lhs_first / denom, true)
    } else {
        (0.0, false)
    };

    // second estimate: W₂¹ norm of the extended initial profile and grid quarter norms
    let lift = lift_pn(dc)?;
    let mut gs_samples = Vec::with_capacity(n + 1);
    let mut chi_samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = dc.time(k);
        gs_samples.push(pd.gamma.eval2(dc.s[k], t)? * lift.ds(t)?);
        chi_samples.push(pd.chi.eval2(dc.s[k], t)?);
    }
    let phi_w21 = ext[0].integral_sq(0.0, l) + grads[0];
    let rhs_second = phi_w21
        + quarter_norm(&dc.g, tau)?
        + quarter_norm(&gs_samples, tau)?
        + quarter_norm(&chi_samples, tau)?
        + f_sq
        + overlap;
    let ratio_second = if rhs_second > 0.0 {
        lhs_second_extra / rhs_second
    } else {
        0.0
    };

    Ok(EnergyReport {
        lhs_first,
        lhs_second_extra,
        rhs_data,
        rhs_boundary_overlap: overlap,
        ratio,
        ratio_defined,
        rhs_second,
        ratio_second,
    })
}

/// Squared grid `W₂^{1/4}` norm: `τ Σ_{k<n} h_k² + Σ_{j≠k} τ² (h_j − h_k)² / |t_j − t_k|^{3/2}`.
pub fn quarter_norm(h: &[f64], tau: f64) -> Result<f64> {
    if h.len() < 2 {
        return Err(Error::Invalid("quarter norm needs at least two samples".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    let l2: f64 = tau * h[..h.len() - 1].iter().map(|v| v * v).sum::<f64>();
    let mut semi = 0.0;
    for j in 0..h.len() {
        for k in j + 1..h.len() {
            let dt = (k - j) as f64 * tau;
            semi += 2.0 * tau * tau * (h[j] - h[k]).powi(2) / dt.powf(1.5);
        }
    }
    Ok(l2 + semi)
}

const DPHI_STEP: f64 = 1e-5;

/// Residual of the continuous weak identity for the time-linear interpolant
/// of the state and the lift of `dc`, one value per test function.
pub fn weak_residual(
    dsv: &DiscreteStateVector,
    dc: &DiscreteControl,
    pd: &ProblemData,
    test_fns: &[FunctionSpec],
) -> Result<Vec<f64>> {
    let n = dc.n();
    if dsv.n() != n {
        return Err(Error::Mismatch(format!("state has n = {}, control n = {n}", dsv.n())));
    }
    for f in test_fns {
        if f.arity() != 2 {
            return Err(Error::Invalid(format!("test function `{}` must depend on (x, t)", f.source())));
        }
    }
    let tau = dc.tau();
    let lift = lift_pn(dc)?;
    let ext = profiles(dsv);
    let slab = |k: usize| -> Result<Vec<f64>> {
        let (prev, cur) = (&ext[k - 1], &ext[k]);
        let lo = (k - 1) as f64 * tau;
        let mut acc = vec![0.0; test_fns.len()];
        for (t, wt) in mapped(&GAUSS4, lo, lo + tau) {
            let r = (t - lo) / tau;
            let s = lift.s(t)?;
            let grid = prev.union_grid(cur, 0.0, s);
            for piece in grid.windows(2) {
                let (x0, x1) = (piece[0], piece[1]);
                let u_at = |x: f64| (1.0 - r) * prev.eval(x) + r * cur.eval(x);
                let ux = (u_at(x1) - u_at(x0)) / (x1 - x0);
                for (x, wx) in mapped(&GAUSS2, x0, x1) {
                    let u = u_at(x);
                    let ut = (cur.eval(x) - prev.eval(x)) / tau;
                    let (a, b, c, f) = (
                        pd.a.eval2(x, t)?,
                        pd.b.eval2(x, t)?,
                        pd.c.eval2(x, t)?,
                        pd.f.eval2(x, t)?,
                    );
                    for (out, phi) in acc.iter_mut().zip(test_fns) {
                        let p = phi.eval2(x, t)?;
                        let px = (phi.eval2(x + DPHI_STEP, t)? - phi.eval2(x - DPHI_STEP, t)?) / (2.0 * DPHI_STEP);
                        *out += wt * wx * (a * ux * px - b * ux * p - c * u * p + ut * p + f * p);
                    }
                }
            }
            let boundary = pd.gamma.eval2(s, t)? * lift.ds(t)? - pd.chi.eval2(s, t)?;
            let g = lift.g(t)?;
            for (out, phi) in acc.iter_mut().zip(test_fns) {
                *out += wt * (boundary * phi.eval2(s, t)? + g * phi.eval2(0.0, t)?);
            }
        }
        Ok(acc)
    };
    let per_slab: Vec<Vec<f64>> = (1..=n).into_par_iter().map(slab).collect::<Result<_>>()?;
    let mut total = vec![0.0; test_fns.len()];
    for row in per_slab {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub cost: f64,
    pub energy_ratio: f64,
    /// `(τ Σ (u(0;k) − ν_k)²)^{1/2}`.
    pub trace_error_flux: f64,
    /// `(τ Σ (u(s_k;k) − μ_k)²)^{1/2}`.
    pub trace_error_phase: f64,
    /// `max(sup|sⁿ − s|, sup|gⁿ − g|)` for the lift of the sampled truth.
    pub lift_sup_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,cost,energy_ratio,trace_error_flux,trace_error_phase,lift_sup_error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                r.m,
                num(r.cost),
                num(r.energy_ratio),
                num(r.trace_error_flux),
                num(r.trace_error_phase),
                num(r.lift_sup_error)
            );
        }
        out
    }

    pub fn column(&self, f: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}

const SUP_SAMPLES: usize = 2048;

fn sweep_row(pd: &ProblemData, truth: &ContinuousControl, n: usize, m: usize) -> Result<SweepRow> {
    let dc = sample_qn(truth, n)?;
    let dsv = solve_state(&dc, pd, m)?;
    let cost = discrete_cost(&dsv, &dc, pd)?;
    let energy = energy_report(&dsv, &dc, pd)?;
    let data = TraceData::from_problem(pd, n)?;
    let tau = dc.tau();
    let (mut ef, mut ep) = (0.0, 0.0);
    for k in 1..=n {
        let nodal = &dsv.slices[k].nodal;
        ef += (nodal[0] - data.nu[k]).powi(2);
        ep += (nodal[nodal.len() - 1] - data.mu[k]).powi(2);
    }
    let (ds, dg) = lift_pn(&dc)?.sup_distance(truth, SUP_SAMPLES)?;
    let row = SweepRow {
        n,
        m,
        cost: cost.total,
        energy_ratio: energy.ratio,
        trace_error_flux: (tau * ef).sqrt(),
        trace_error_phase: (tau * ep).sqrt(),
        lift_sup_error: ds.max(dg),
    };
    let values = [row.cost, row.energy_ratio, row.trace_error_flux, row.trace_error_phase, row.lift_sup_error];
    if values.iter().all(|v| v.is_finite()) {
        Ok(row)
    } else {
        Err(Error::Invalid(format!("non-finite sweep entry at n = {n}")))
    }
}

/// Samples `truth` at each `n`, solves and records cost, energy ratio, trace
/// errors and lift error. Failing rows are recorded and skipped.
pub fn convergence_sweep(
    pd: &ProblemData,
    truth: &ContinuousControl,
    n_list: &[usize],
    m_of_n: &(dyn Fn(usize) -> usize + Sync),
) -> Result<SweepTable> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("n_list must be nonempty and strictly increasing".into()));
    }
    let results: Vec<(usize, Result<SweepRow>)> = n_list
        .par_iter()
        .map(|&n| (n, sweep_row(pd, truth, n, m_of_n(n))))
        .collect();
    let mut table = SweepTable {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (n, r) in results {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e) => {
                log::warn!("sweep row n = {n} failed: {e}");
                table.failures.push(SweepFailure { n, message: e.to_string() });
            }
        }
    }
    Ok(table)
}
