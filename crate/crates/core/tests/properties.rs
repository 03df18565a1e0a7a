mod common;

use proptest::prelude::*;

use common::{manufactured, manufactured_truth};
use stefan_core::analysis::{convergence_sweep, quarter_norm, weak_residual};
use stefan_core::control::{sample_qn, DiscreteControl};
use stefan_core::cost::{continuous_cost_estimate, discrete_cost, discrete_cost_against, TraceData};
use stefan_core::optimize::{
    fd_gradient, minimize, minimize_against, norm_penalty, project_box, Method, Objective, OptOptions,
};
use stefan_core::state::solve_state;
use stefan_core::{FunctionSpec, Signature};

fn xt(s: &str) -> FunctionSpec {
    FunctionSpec::parse(s, Signature::XT).unwrap()
}

#[test]
fn true_control_cost_is_small_and_decreasing() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let mut costs = Vec::new();
    for (n, m) in [(16, 32), (32, 64), (64, 128)] {
        let dc = sample_qn(&truth, n).unwrap();
        let dsv = solve_state(&dc, &pd, m).unwrap();
        let c = discrete_cost(&dsv, &dc, &pd).unwrap();
        assert!((c.total - c.flux_term - c.phase_term).abs() <= 1e-15 * c.total);
        costs.push(c.total);
    }
    assert!(costs.windows(2).all(|w| w[1] < w[0]), "{costs:?}");
    assert!(costs[2] <= 1e-3);
}

#[test]
fn continuous_cost_estimate_settles_under_refinement() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let c: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&nf| continuous_cost_estimate(&truth, &pd, nf, nf).unwrap().total)
        .collect();
    assert!((c[2] - c[1]).abs() < 2.0 * (c[1] - c[0]).abs(), "{c:?}");
    // first order in time: the estimate shrinks like τ²
    for w in c.windows(2) {
        let rate = w[0] / w[1];
        assert!((3.2..4.8).contains(&rate), "{c:?}");
    }
}

#[test]
fn continuous_cost_estimate_vanishes_on_exactly_representable_data() {
    let cfg = stefan_core::cli::RunConfig::load(&common::config_path("constant.toml")).unwrap();
    let pd = cfg.problem_data().unwrap();
    let truth = stefan_core::ContinuousControl::analytic(
        FunctionSpec::parse("1", Signature::T).unwrap(),
        FunctionSpec::parse("0", Signature::T).unwrap(),
        &pd,
    )
    .unwrap();
    assert!(continuous_cost_estimate(&truth, &pd, 256, 16).unwrap().total <= 1e-12);
}

#[test]
fn weak_residual_decays_with_refinement() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let tests = [xt("1"), xt("x*t")];
    let mut rows = Vec::new();
    for (n, m) in [(16, 32), (32, 64), (64, 128)] {
        let dc = sample_qn(&truth, n).unwrap();
        let dsv = solve_state(&dc, &pd, m).unwrap();
        rows.push(weak_residual(&dsv, &dc, &pd, &tests).unwrap());
    }
    for j in 0..tests.len() {
        for w in rows.windows(2) {
            assert!(w[1][j].abs() <= 0.5 * 1.3 * w[0][j].abs(), "test fn {j}: {rows:?}");
        }
    }
}

#[test]
fn sweep_columns_behave() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let t = convergence_sweep(&pd, &truth, &[8, 16, 32, 64], &|n| 2 * n).unwrap();
    assert!(t.failures.is_empty());
    let lift = t.column(|r| r.lift_sup_error);
    for w in lift.windows(2) {
        assert!(w[1] <= 0.5 * 1.3 * w[0], "{lift:?}");
    }
    let cost = t.column(|r| r.cost);
    for w in cost.windows(2) {
        assert!(w[1] <= 1.1 * w[0]);
    }
    let ratio = t.column(|r| r.energy_ratio);
    let spread = ratio.iter().cloned().fold(0.0, f64::max) / ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 10.0);
    assert!(t.rows.windows(2).all(|w| w[0].n < w[1].n));
}

#[test]
fn truth_is_nearly_stationary() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let (n, m) = (16, 64);
    let dc = sample_qn(&truth, n).unwrap();
    let obj = Objective::new(&pd, TraceData::from_problem(&pd, n).unwrap(), m, 0.0);
    let f = |d: &DiscreteControl| obj.value(d);
    let mut off = dc.clone();
    off.s[1..].iter_mut().for_each(|s| *s *= 1.1);
    off.g.iter_mut().for_each(|g| *g *= 1.1);
    let norm = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let at_truth = norm(fd_gradient(f, &dc, 1e-6).unwrap());
    let perturbed = norm(fd_gradient(f, &off, 1e-6).unwrap());
    assert!(at_truth <= 10.0 * perturbed, "{at_truth} vs {perturbed}");
}

#[test]
fn starting_at_the_truth_converges_quickly() {
    let pd = manufactured();
    let truth = manufactured_truth(&pd);
    let (n, m) = (16, 64);
    let dc = sample_qn(&truth, n).unwrap();
    // synthesized traces: the truth is the exact minimizer
    let data = TraceData::from_state(&solve_state(&dc, &pd, m).unwrap());
    let opts = OptOptions {
        tol: 1e-8,
        ..OptOptions::default()
    };
    let r = minimize_against(&pd, data, m, &dc, &opts).unwrap();
    assert!(r.converged);
    assert!(r.iters <= 5);
    assert!(r.best_cost <= r.history[0].cost + r.history[0].penalty);

    // measured traces: the truth is only near-optimal for the discrete problem
    let r = minimize(&pd, n, m, &dc, &OptOptions { tol: 1e-6, ..opts }).unwrap();
    assert!(r.converged);
    assert!(r.best_cost <= r.history[0].cost + r.history[0].penalty);
}

#[test]
fn optimizer_invariants_hold_for_both_methods() {
    let pd = manufactured();
    let n = 8;
    let m = 16;
    let init = DiscreteControl::constant(pd.s0, n, pd.t_final).unwrap();
    for method in [Method::FdGradient, Method::NelderMead] {
        let opts = OptOptions {
            max_iters: 25,
            method,
            seed: 3,
            ..OptOptions::default()
        };
        let r = minimize(&pd, n, m, &init, &opts).unwrap();
        let values: Vec<f64> = r.history.iter().map(|h| h.cost + h.penalty).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{method:?}: {values:?}");
        assert_eq!(project_box(&r.best, &pd), r.best);
        let dsv = solve_state(&r.best, &pd, m).unwrap();
        let recomputed = discrete_cost(&dsv, &r.best, &pd).unwrap().total
            + opts.penalty_weight * norm_penalty(&r.best, &pd);
        assert!((recomputed - r.best_cost).abs() <= 1e-12 * recomputed.max(1e-300));
        let again = minimize(&pd, n, m, &init, &opts).unwrap();
        assert_eq!(again.history, r.history);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn quarter_norm_dominates_l2(h in prop::collection::vec(-5.0f64..5.0, 2..40), tau in 0.01f64..1.0) {
        let l2: f64 = tau * h[..h.len() - 1].iter().map(|v| v * v).sum::<f64>();
        prop_assert!(quarter_norm(&h, tau).unwrap() >= l2);
    }

    #[test]
    fn cost_scales_with_weights(g in prop::collection::vec(-2.0f64..2.0, 9), lambda in 0.1f64..10.0) {
        let pd = manufactured();
        let s: Vec<f64> = (0..9).map(|k| 1.0 + 0.02 * k as f64).collect();
        let dc = DiscreteControl::new(s, g, pd.t_final).unwrap();
        let dsv = solve_state(&dc, &pd, 16).unwrap();
        let data = TraceData::from_problem(&pd, 8).unwrap();
        let base = discrete_cost_against(&dsv, &dc, &data, 1.0, 0.5).unwrap();
        let scaled = discrete_cost_against(&dsv, &dc, &data, lambda, 0.5 * lambda).unwrap();
        prop_assert!((scaled.total - lambda * base.total).abs() <= 1e-12 * scaled.total.max(1e-300));
        prop_assert!(base.total >= 0.0 && base.flux_term >= 0.0 && base.phase_term >= 0.0);
    }

    #[test]
    fn weak_residual_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let pd = manufactured();
        let truth = manufactured_truth(&pd);
        let dc = sample_qn(&truth, 8).unwrap();
        let dsv = solve_state(&dc, &pd, 16).unwrap();
        let combo = xt(&format!("({alpha:?})*(1 + x) + ({beta:?})*(x*t^2)"));
        let r = weak_residual(&dsv, &dc, &pd, &[xt("1 + x"), xt("x*t^2"), combo]).unwrap();
        let scale = 1.0 + alpha.abs() * r[0].abs() + beta.abs() * r[1].abs();
        prop_assert!((r[2] - (alpha * r[0] + beta * r[1])).abs() <= 1e-9 * scale, "{r:?}");
    }
}
