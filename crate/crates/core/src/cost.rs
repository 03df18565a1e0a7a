//! Discrete cost functional and its fine-grid approximation of the continuous cost.

use serde::{Deserialize, Serialize};

use crate::control::{sample_qn, ContinuousControl, DiscreteControl};
use crate::error::{Error, Result};
use crate::problem::{steklov_average, ProblemData};
use crate::state::{solve_state, DiscreteStateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Weighted mismatch with the measured temperature at `x = 0`.
    pub flux_term: f64,
    /// Weighted mismatch with the phase-transition temperature at `x = s`.
    pub phase_term: f64,
}

/// Per-slab observations `ν_k`, `μ_k` for `k = 1..n` (index 0 unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceData {
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
}

impl TraceData {
    /// Slab averages of the problem's `ν` and `μ`.
    pub fn from_problem(pd: &ProblemData, n: usize) -> Result<Self> {
        let tau = pd.tau(n);
        let mut nu = vec![0.0; n + 1];
        let mut mu = vec![0.0; n + 1];
        for k in 1..=n {
            nu[k] = steklov_average(&pd.nu, k, tau, None)?;
            mu[k] = steklov_average(&pd.mu, k, tau, None)?;
        }
        Ok(Self { nu, mu })
    }

    /// Traces of a computed state, used as synthetic measurements.
    pub fn from_state(dsv: &DiscreteStateVector) -> Self {
        let nu = dsv.slices.iter().map(|s| s.nodal[0]).collect();
        let mu = dsv.slices.iter().map(|s| *s.nodal.last().unwrap()).collect();
        Self { nu, mu }
    }

    pub fn n(&self) -> usize {
        self.nu.len() - 1
    }
}

pub fn discrete_cost(dsv: &DiscreteStateVector, dc: &DiscreteControl, pd: &ProblemData) -> Result<CostBreakdown> {
    let data = TraceData::from_problem(pd, dc.n())?;
    discrete_cost_against(dsv, dc, &data, pd.beta0, pd.beta1)
}

/// `β₀ τ Σ (u(0;k) − ν_k)² + β₁ τ Σ (u(s_k;k) − μ_k)²` over `k = 1..n`.
pub fn discrete_cost_against(
    dsv: &DiscreteStateVector,
    dc: &DiscreteControl,
    data: &TraceData,
    beta0: f64,
    beta1: f64,
) -> Result<CostBreakdown> {
    let n = dc.n();
    if dsv.n() != n || data.n() != n || data.mu.len() != n + 1 {
        return Err(Error::Mismatch(format!(
            "control has n = {n}, state n = {}, data n = {}",
            dsv.n(),
            data.n()
        )));
    }
    let tau = dc.tau();
    let (mut flux, mut phase) = (0.0, 0.0);
    for k in 1..=n {
        let slice = &dsv.slices[k];
        let d0 = slice.nodal[0] - data.nu[k];
        let ds = slice.nodal[slice.nodal.len() - 1] - data.mu[k];
        flux += d0 * d0;
        phase += ds * ds;
    }
    let flux_term = beta0 * tau * flux;
    let phase_term = beta1 * tau * phase;
    Ok(CostBreakdown {
        total: flux_term + phase_term,
        flux_term,
        phase_term,
    })
}

/// Approximates the continuous cost of `v` by the discrete cost of its
/// samples on a grid of `n_fine` steps.
pub fn continuous_cost_estimate(v: &ContinuousControl, pd: &ProblemData, n_fine: usize, m: usize) -> Result<CostBreakdown> {
    if n_fine < 4 {
        return Err(Error::Invalid("n_fine must be at least 4".into()));
    }
    let dc = sample_qn(v, n_fine)?;
    let dsv = solve_state(&dc, pd, m)?;
    discrete_cost(&dsv, &dc, pd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Mesh1D;
    use crate::problem::tests::spec;
    use crate::state::StateSlice;

    fn fake_state(n: usize, left: f64, right: f64) -> DiscreteStateVector {
        let slices = (0..=n)
            .map(|k| StateSlice {
                k,
                s_k: 1.0,
                mesh: Mesh1D::uniform(1.0, 2).unwrap(),
                nodal: vec![left, 0.5 * (left + right), right],
            })
            .collect();
        DiscreteStateVector {
            slices,
            tau: 1.0 / n as f64,
            t_final: 1.0,
            l: 1.0,
            delta: 0.5,
        }
    }

    #[test]
    fn perfect_match_costs_nothing() {
        let dsv = fake_state(4, 0.3, -0.2);
        let dc = DiscreteControl::constant(1.0, 4, 1.0).unwrap();
        let data = TraceData {
            nu: vec![0.3; 5],
            mu: vec![-0.2; 5],
        };
        let c = discrete_cost_against(&dsv, &dc, &data, 1.0, 1.0).unwrap();
        assert_eq!(c.total, 0.0);
    }

    #[test]
    fn constant_mismatch_integrates_to_horizon() {
        let dsv = fake_state(8, 1.0, 0.0);
        let dc = DiscreteControl::constant(1.0, 8, 1.0).unwrap();
        let data = TraceData {
            nu: vec![0.0; 9],
            mu: vec![0.0; 9],
        };
        let c = discrete_cost_against(&dsv, &dc, &data, 1.0, 0.0).unwrap();
        assert!((c.total - 1.0).abs() < 1e-15);
        assert_eq!(c.phase_term, 0.0);
        // symmetry: moving the mismatch to the free boundary swaps the terms
        let swapped = fake_state(8, 0.0, 1.0);
        let c2 = discrete_cost_against(&swapped, &dc, &data, 0.0, 1.0).unwrap();
        assert_eq!(c2.phase_term, c.flux_term);
        assert_eq!(c2.flux_term, c.phase_term);
        // scaling the weights scales the total
        let c3 = discrete_cost_against(&dsv, &dc, &data, 3.5, 0.0).unwrap();
        assert!((c3.total - 3.5 * c.total).abs() < 1e-14);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let dsv = fake_state(4, 0.0, 0.0);
        let dc = DiscreteControl::constant(1.0, 5, 1.0).unwrap();
        let pd = ProblemData::from_spec(&spec("1", "0")).unwrap();
        assert!(matches!(discrete_cost(&dsv, &dc, &pd), Err(Error::Mismatch(_))));
    }

    #[test]
    fn zero_weights_give_zero_cost() {
        let mut sp = spec("1", "x");
        sp.beta0 = 0.0;
        sp.beta1 = 0.0;
        sp.nu = crate::expr::ExprText("5".into());
        sp.l = 2.0;
        let pd = ProblemData::from_spec(&sp).unwrap();
        let v = crate::control::lift_pn(&DiscreteControl::new(vec![1.0, 1.3, 1.1], vec![0.0, 1.0, 2.0], 1.0).unwrap()).unwrap();
        let c = continuous_cost_estimate(&v, &pd, 8, 8).unwrap();
        assert_eq!(c.total, 0.0);
        assert!(continuous_cost_estimate(&v, &pd, 3, 8).is_err());
    }
}
