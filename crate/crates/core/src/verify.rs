//! Self-check suites run by `stefan verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{lift_pn, sample_qn, ContinuousControl, DiscreteControl};
use crate::error::Result;
use crate::expr::{FunctionSpec, Signature};
use crate::fem::{assemble_galerkin, dense_solve, solve_step, stability_threshold, Mesh1D};
use crate::problem::{validate_data, ProblemData, ProblemSpec};
use crate::state::{solve_state, StateSlice};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    /// First failure, if any.
    pub detail: Option<String>,
}

/// Collects check results for one suite, keeping the first failure.
struct Tally {
    name: &'static str,
    checks: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: 0,
            detail: None,
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.detail.is_none() {
            self.detail = Some(what());
        }
    }

    fn run(&mut self, r: Result<()>) {
        if let Err(e) = r {
            self.check(false, || e.to_string());
        }
    }

    fn finish(self) -> SuiteOutcome {
        SuiteOutcome {
            name: self.name,
            passed: self.detail.is_none(),
            checks: self.checks,
            detail: self.detail,
        }
    }
}

fn reference_problem() -> ProblemData {
    let spec: ProblemSpec = toml::from_str(
        r#"
        a = "1"
        b = "0"
        c = "0"
        f = "0"
        phi = "x^2 + x"
        gamma = "1"
        chi = "2*x + 1.25"
        mu = "0"
        nu = "0"
        a0 = 1.0
        s0 = 1.0
        T = 1.0
        l = 2.0
        delta = 0.5
        R = 3.0
        beta0 = 1.0
        beta1 = 1.0
        "#,
    )
    .expect("reference problem parses");
    ProblemData::from_spec(&spec).expect("reference problem is valid")
}

fn lit(v: f64) -> String {
    format!("({v:?})")
}

/// Random smooth control `s = s0 + a sin(ωt) + b t²`, `g = c + d cos(ωt)`.
fn random_smooth_control(rng: &mut ChaCha8Rng, pd: &ProblemData) -> Result<ContinuousControl> {
    let (a, b) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let w = rng.random_range(0.5..3.0);
    let (c, d) = (rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
    let s = format!("{} + {}*sin({}*t) + {}*t^2", lit(pd.s0), lit(a), lit(w), lit(b));
    let g = format!("{} + {}*cos({}*t)", lit(c), lit(d), lit(w));
    ContinuousControl::analytic(FunctionSpec::parse(&s, Signature::T)?, FunctionSpec::parse(&g, Signature::T)?, pd)
}

fn random_discrete_control(rng: &mut ChaCha8Rng, n: usize, s0: f64) -> Result<DiscreteControl> {
    let mut s: Vec<f64> = (0..=n).map(|_| rng.random_range(0.6..1.8)).collect();
    s[0] = s0;
    let g = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
    DiscreteControl::new(s, g, 1.0)
}

/// Discrete norms of sampled smooth controls stay within `(R−ε)² + R²τ`.
pub fn suite_control_norms(seed: u64) -> SuiteOutcome {
    let mut t = Tally::new("control norms");
    let pd = reference_problem();
    let eps = 0.5;
    let cap = (pd.radius - eps).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..40 {
        let r = (|| -> Result<()> {
            let v = random_smooth_control(&mut rng, &pd)?;
            let (ns, ng) = v.norms()?;
            if ns.max(ng) > cap {
                return Ok(());
            }
            for n in [8, 32] {
                let dc = sample_qn(&v, n)?;
                let worst = dc.w22().max(dc.w21());
                let bound = cap + pd.radius * pd.radius * dc.tau() + 1e-10;
                t.check(worst <= bound, || format!("n = {n}: max norm {worst} exceeds {bound}"));
            }
            Ok(())
        })();
        t.run(r);
    }
    t.finish()
}

/// The lift is C¹, hits slab midpoints and interpolates the flux.
pub fn suite_lift_smoothness(seed: u64) -> SuiteOutcome {
    let mut t = Tally::new("lift smoothness");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11f7);
    for _ in 0..30 {
        let n = rng.random_range(2..40);
        let r = (|| -> Result<()> {
            let dc = random_discrete_control(&mut rng, n, 1.0)?;
            let v = lift_pn(&dc)?;
            for (k, (jv, js)) in v.knot_jumps().unwrap_or_default().into_iter().enumerate() {
                t.check(jv <= 1e-12 && js <= 1e-12, || format!("knot {}: jumps {jv:e}, {js:e}", k + 1));
            }
            for k in 1..=n {
                let tk = dc.time(k);
                let mid = 0.5 * (dc.s[k] + dc.s[k - 1]);
                let (sv, gv) = (v.s(tk)?, v.g(tk)?);
                t.check((sv - mid).abs() <= 1e-12, || format!("midpoint miss at k = {k}"));
                t.check(gv == dc.g[k], || format!("flux miss at k = {k}"));
            }
            Ok(())
        })();
        t.run(r);
    }
    t.finish()
}

/// Hand-checkable assembly, uniqueness below the threshold and solve residuals.
pub fn suite_fem_oracles(seed: u64) -> SuiteOutcome {
    let mut t = Tally::new("fem oracles");
    // two elements on [0, 2], unit coefficients, τ = 1, u_prev ≡ 1:
    // stiffness [[1,-1,0],[-1,2,-1],[0,-1,1]] + mass (1/6)[[2,1,0],[1,4,1],[0,1,2]]
    let r = (|| -> Result<()> {
        let mesh = Mesh1D::uniform(2.0, 2)?;
        let sys = assemble_galerkin(1, &mesh, 1.0, |_| Ok([1.0, 0.0, 0.0, 0.0]), |_| Ok(1.0), 0.0, 0.0)?;
        let expect = [[4.0 / 3.0, -5.0 / 6.0, 0.0], [-5.0 / 6.0, 8.0 / 3.0, -5.0 / 6.0], [0.0, -5.0 / 6.0, 4.0 / 3.0]];
        let dense = sys.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                t.check((dense[i][j] - expect[i][j]).abs() < 1e-14, || format!("matrix entry ({i},{j})"));
            }
        }
        let rhs = [0.5, 1.0, 0.5];
        for i in 0..3 {
            t.check((sys.rhs[i] - rhs[i]).abs() < 1e-14, || format!("load entry {i}"));
        }
        let u = solve_step(&sys)?;
        let oracle = dense_solve(expect.iter().map(|r| r.to_vec()).collect(), rhs.to_vec()).unwrap_or_default();
        t.check(
            u.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-13),
            || "solution differs from dense elimination".into(),
        );
        Ok(())
    })();
    t.run(r);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfe3);
    for _ in 0..10 {
        let r = (|| -> Result<()> {
            let (p, q, w) = (rng.random_range(0.0..1.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0));
            let mut pd = reference_problem();
            pd.a = FunctionSpec::parse(&format!("1 + {}*(1 + sin({}*x + t))", lit(p), lit(w)), Signature::XT)?;
            pd.b = FunctionSpec::parse(&lit(q), Signature::XT)?;
            pd.c = FunctionSpec::parse(&format!("{}*cos(x*t)", lit(w)), Signature::XT)?;
            pd.phi = FunctionSpec::constant(0.0, Signature::X);
            pd.chi = FunctionSpec::constant(0.0, Signature::XT);
            let bound = pd.sampled_coefficient_bound(17)?;
            let tau0 = stability_threshold(bound, pd.a0)?;
            let n = (2.0 * pd.t_final / tau0).ceil().max(2.0) as usize;
            let dc = DiscreteControl::constant(pd.s0, n, pd.t_final)?;
            let dsv = solve_state(&dc, &pd, 16)?;
            let worst = dsv.slices.iter().flat_map(|s| s.nodal.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            t.check(worst <= 1e-12, || format!("zero data gave |u| = {worst:e}"));
            Ok(())
        })();
        t.run(r);
    }
    t.finish()
}

/// Extension energy on `[0, l]` is at most `2^N` times the energy on `[0, s_k]`.
pub fn suite_reflection_bounds(seed: u64) -> SuiteOutcome {
    let mut t = Tally::new("reflection bounds");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..50 {
        let r = (|| -> Result<()> {
            let delta = rng.random_range(0.05..0.6);
            let l = rng.random_range(delta..4.0);
            let s_k = rng.random_range(delta..=l);
            let m = rng.random_range(2..24);
            let nodal = (0..=m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let slice = StateSlice {
                k: 1,
                s_k,
                mesh: Mesh1D::uniform(s_k, m)?,
                nodal,
            };
            let depth = 1 + (l / delta).log2().floor() as i32;
            let inner = slice.integral_sq_local();
            let outer = slice.extended_profile(l).integral_sq(0.0, l);
            let bound = 2f64.powi(depth) * inner * (1.0 + 1e-12);
            t.check(outer <= bound, || format!("extension energy {outer} exceeds {bound}"));
            Ok(())
        })();
        t.run(r);
    }
    t.finish()
}

pub fn suite_problem_data(pd: &ProblemData) -> SuiteOutcome {
    let mut t = Tally::new("problem data");
    let report = validate_data(pd, 33);
    for v in &report.violations {
        t.check(false, || format!("{} (worst {} at x = {}, t = {})", v.label, v.worst, v.location.0, v.location.1));
    }
    t.check(report.passed, || "validation failed".into());
    t.finish()
}

/// All built-in suites, plus the data checks when a problem is given.
pub fn run_all(seed: u64, pd: Option<&ProblemData>) -> Vec<SuiteOutcome> {
    let mut out = vec![
        suite_control_norms(seed),
        suite_lift_smoothness(seed),
        suite_fem_oracles(seed),
        suite_reflection_bounds(seed),
    ];
    if let Some(pd) = pd {
        out.push(suite_problem_data(pd));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_suites_pass() {
        for s in run_all(3, None) {
            assert!(s.passed, "{}: {:?}", s.name, s.detail);
            assert!(s.checks > 0, "{} ran no checks", s.name);
        }
    }

    #[test]
    fn bad_data_fails_problem_suite() {
        let mut pd = reference_problem();
        pd.a = FunctionSpec::parse("0.5", Signature::XT).unwrap();
        let s = suite_problem_data(&pd);
        assert!(!s.passed);
        assert!(s.detail.unwrap().contains("ellipticity"));
    }
}
