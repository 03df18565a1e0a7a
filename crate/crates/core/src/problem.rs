//! Problem data of the one-phase Stefan model, standing-assumption checks, and
//! Steklov (slab) averages of coefficients and boundary traces.

use serde::{Deserialize, Serialize};

use crate::control::ContinuousControl;
use crate::error::{Error, ExprError, Result};
use crate::expr::{ExprText, FunctionSpec, Signature};
use crate::quadrature::{mapped, GAUSS4};

/// Textual form of [`ProblemData`], as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub a: ExprText,
    pub b: ExprText,
    pub c: ExprText,
    pub f: ExprText,
    pub phi: ExprText,
    pub gamma: ExprText,
    pub chi: ExprText,
    pub mu: ExprText,
    pub nu: ExprText,
    pub a0: f64,
    pub s0: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub l: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub beta0: f64,
    pub beta1: f64,
}

/// Coefficients, data and constants of the forward/inverse problem.
///
/// `a, b, c, f, gamma, chi` are functions of `(x, t)`, `phi` of `x`, and
/// `mu, nu` of `t`.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub a: FunctionSpec,
    pub b: FunctionSpec,
    pub c: FunctionSpec,
    pub f: FunctionSpec,
    pub phi: FunctionSpec,
    pub gamma: FunctionSpec,
    pub chi: FunctionSpec,
    pub mu: FunctionSpec,
    pub nu: FunctionSpec,
    pub a0: f64,
    pub s0: f64,
    pub t_final: f64,
    pub l: f64,
    pub delta: f64,
    pub radius: f64,
    pub beta0: f64,
    pub beta1: f64,
}

fn field(name: &str, text: &ExprText, sig: Signature) -> Result<FunctionSpec> {
    FunctionSpec::parse(&text.0, sig).map_err(|e| Error::Invalid(format!("field `{name}`: {e}")))
}

impl ProblemData {
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let pd = Self {
            a: field("a", &spec.a, Signature::XT)?,
            b: field("b", &spec.b, Signature::XT)?,
            c: field("c", &spec.c, Signature::XT)?,
            f: field("f", &spec.f, Signature::XT)?,
            phi: field("phi", &spec.phi, Signature::X)?,
            gamma: field("gamma", &spec.gamma, Signature::XT)?,
            chi: field("chi", &spec.chi, Signature::XT)?,
            mu: field("mu", &spec.mu, Signature::T)?,
            nu: field("nu", &spec.nu, Signature::T)?,
            a0: spec.a0,
            s0: spec.s0,
            t_final: spec.t_final,
            l: spec.l,
            delta: spec.delta,
            radius: spec.radius,
            beta0: spec.beta0,
            beta1: spec.beta1,
        };
        pd.check_constants()?;
        Ok(pd)
    }

    pub fn to_spec(&self) -> ProblemSpec {
        let t = |f: &FunctionSpec| ExprText(f.source().to_string());
        ProblemSpec {
            a: t(&self.a),
            b: t(&self.b),
            c: t(&self.c),
            f: t(&self.f),
            phi: t(&self.phi),
            gamma: t(&self.gamma),
            chi: t(&self.chi),
            mu: t(&self.mu),
            nu: t(&self.nu),
            a0: self.a0,
            s0: self.s0,
            t_final: self.t_final,
            l: self.l,
            delta: self.delta,
            radius: self.radius,
            beta0: self.beta0,
            beta1: self.beta1,
        }
    }

    /// Checks the geometric and penalty constants. Vanishing cost weights are
    /// accepted here and reported by [`validate_data`] instead.
    pub fn check_constants(&self) -> Result<()> {
        let bad = |name: &str, why: &str| Err(Error::Invalid(format!("field `{name}`: {why}")));
        let all = [
            ("a0", self.a0),
            ("s0", self.s0),
            ("T", self.t_final),
            ("l", self.l),
            ("delta", self.delta),
            ("R", self.radius),
            ("beta0", self.beta0),
            ("beta1", self.beta1),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.a0 <= 0.0 {
            return bad("a0", "must be positive");
        }
        if self.delta <= 0.0 {
            return bad("delta", "must be positive");
        }
        if self.s0 < self.delta || self.s0 > self.l {
            return bad("s0", "must satisfy delta <= s0 <= l");
        }
        if self.t_final <= 0.0 {
            return bad("T", "must be positive");
        }
        if self.radius <= 0.0 {
            return bad("R", "must be positive");
        }
        if self.beta0 < 0.0 || self.beta1 < 0.0 {
            return bad("beta0/beta1", "must be nonnegative");
        }
        Ok(())
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.t_final / n as f64
    }

    /// Largest reflection depth used by the extension to `[0, l]`.
    pub fn reflection_depth(&self) -> u32 {
        1 + (self.l / self.delta).log2().floor() as u32
    }

    /// Sampled `max(|a|, |b|, |c|)` over `[0, l] × [0, T]`.
    pub fn sampled_coefficient_bound(&self, samples: usize) -> Result<f64> {
        let samples = samples.max(2);
        let mut m: f64 = 0.0;
        for i in 0..samples {
            let x = self.l * i as f64 / (samples - 1) as f64;
            for j in 0..samples {
                let t = self.t_final * j as f64 / (samples - 1) as f64;
                for c in [&self.a, &self.b, &self.c] {
                    m = m.max(c.eval2(x, t)?.abs());
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub label: String,
    pub worst: f64,
    pub location: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

pub const DEFAULT_DADX_CAP: f64 = 1e6;

pub fn validate_data(pd: &ProblemData, samples: usize) -> ValidationReport {
    validate_data_with_cap(pd, samples, DEFAULT_DADX_CAP)
}

/// Samples the data on a `samples × samples` grid of `[0, l] × [0, T]` and
/// reports every breached assumption with its worst sampled value.
pub fn validate_data_with_cap(pd: &ProblemData, samples: usize, dadx_cap: f64) -> ValidationReport {
    let samples = samples.max(2);
    let xs: Vec<f64> = (0..samples).map(|i| pd.l * i as f64 / (samples - 1) as f64).collect();
    let ts: Vec<f64> = (0..samples).map(|j| pd.t_final * j as f64 / (samples - 1) as f64).collect();
    let mut violations: Vec<Violation> = Vec::new();
    let mut record = |label: String, worst: f64, loc: (f64, f64), worse: fn(f64, f64) -> bool| {
        match violations.iter_mut().find(|v| v.label == label) {
            Some(v) => {
                if worse(worst, v.worst) {
                    v.worst = worst;
                    v.location = loc;
                }
            }
            None => violations.push(Violation {
                label,
                worst,
                location: loc,
            }),
        }
    };
    let named = [
        ("a", &pd.a),
        ("b", &pd.b),
        ("c", &pd.c),
        ("f", &pd.f),
        ("gamma", &pd.gamma),
        ("chi", &pd.chi),
    ];
    let mut a_grid = vec![vec![f64::NAN; samples]; samples];
    for (name, spec) in named {
        for (i, &x) in xs.iter().enumerate() {
            for (j, &t) in ts.iter().enumerate() {
                match spec.eval2(x, t) {
                    Ok(v) => {
                        if name == "a" {
                            a_grid[i][j] = v;
                            if v < pd.a0 {
                                record("ellipticity".into(), v, (x, t), |new, old| new < old);
                            }
                        }
                    }
                    Err(_) => record(format!("non-finite sample: {name}"), f64::NAN, (x, t), |_, _| false),
                }
            }
        }
    }
    for (j, &t) in ts.iter().enumerate() {
        for i in 0..samples - 1 {
            let d = (a_grid[i + 1][j] - a_grid[i][j]) / (xs[i + 1] - xs[i]);
            if d.is_finite() && d.abs() > dadx_cap {
                record("da/dx bound".into(), d.abs(), (xs[i], t), |new, old| new > old);
            }
        }
    }
    for (i, &x) in xs.iter().enumerate() {
        let x = x.min(pd.s0);
        if pd.phi.eval1(x).is_err() {
            record("non-finite sample: phi".into(), f64::NAN, (x, 0.0), |_, _| false);
        }
        let t = ts[i];
        for (name, spec) in [("mu", &pd.mu), ("nu", &pd.nu)] {
            if spec.eval1(t).is_err() {
                record(format!("non-finite sample: {name}"), f64::NAN, (0.0, t), |_, _| false);
            }
        }
    }
    if pd.beta0 + pd.beta1 <= 0.0 {
        record("cost weights".into(), pd.beta0 + pd.beta1, (0.0, 0.0), |_, _| false);
    }
    ValidationReport {
        passed: violations.is_empty(),
        violations,
    }
}

fn slab(k: usize, tau: f64) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::Invalid("slab index k must be at least 1".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    Ok(((k - 1) as f64 * tau, k as f64 * tau))
}

/// `(1/τ) ∫_{t_{k-1}}^{t_k} fn dt` by 4-point Gauss–Legendre. Supply `x`
/// exactly when `fn` is a function of `(x, t)`.
pub fn steklov_average(func: &FunctionSpec, k: usize, tau: f64, x: Option<f64>) -> Result<f64> {
    let (lo, hi) = slab(k, tau)?;
    let at = |t: f64| -> std::result::Result<f64, ExprError> {
        match x {
            Some(x) => func.eval2(x, t),
            None => func.eval1(t),
        }
    };
    if !func.depends_on_time() {
        return Ok(at(0.5 * (lo + hi))?);
    }
    let mut acc = 0.0;
    for (t, w) in mapped(&GAUSS4, lo, hi) {
        acc += w * at(t)?;
    }
    Ok(acc / tau)
}

/// Slab averages of `γ(s(t),t) s'(t)` and `χ(s(t),t)` along the boundary curve.
pub fn trace_averages(
    s_curve: &ContinuousControl,
    gamma: &FunctionSpec,
    chi: &FunctionSpec,
    k: usize,
    tau: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = slab(k, tau)?;
    let (mut gs, mut ch) = (0.0, 0.0);
    for (t, w) in mapped(&GAUSS4, lo, hi) {
        let s = s_curve.s(t)?;
        gs += w * gamma.eval2(s, t)? * s_curve.ds(t)?;
        ch += w * chi.eval2(s, t)?;
    }
    Ok((gs / tau, ch / tau))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::control::{lift_pn, DiscreteControl};

    pub(crate) fn spec(a: &str, f: &str) -> ProblemSpec {
        let e = |s: &str| ExprText(s.to_string());
        ProblemSpec {
            a: e(a),
            b: e("0"),
            c: e("0"),
            f: e(f),
            phi: e("1"),
            gamma: e("0"),
            chi: e("0"),
            mu: e("0"),
            nu: e("0"),
            a0: 1.0,
            s0: 1.0,
            t_final: 1.0,
            l: 1.0,
            delta: 0.5,
            radius: 2.0,
            beta0: 1.0,
            beta1: 1.0,
        }
    }

    #[test]
    fn validation_examples() {
        let ok = ProblemData::from_spec(&spec("1", "x*t")).unwrap();
        assert!(validate_data(&ok, 11).passed);

        let low = ProblemData::from_spec(&spec("0.5", "0")).unwrap();
        let r = validate_data(&low, 5);
        assert!(!r.passed);
        assert_eq!(r.violations[0].label, "ellipticity");
        assert_eq!(r.violations[0].worst, 0.5);

        let sing = ProblemData::from_spec(&spec("1", "1/(x-0.5)")).unwrap();
        let r = validate_data(&sing, 11);
        assert!(r.violations.iter().any(|v| v.label == "non-finite sample: f"));
        assert!(!r.passed);
    }

    #[test]
    fn derivative_cap_and_weights() {
        let steep = ProblemData::from_spec(&spec("1 + 100*x", "0")).unwrap();
        let r = validate_data_with_cap(&steep, 11, 10.0);
        let v = r.violations.iter().find(|v| v.label == "da/dx bound").unwrap();
        assert!((v.worst - 100.0).abs() < 1e-9);
        let mut s = spec("1", "0");
        s.beta0 = 0.0;
        s.beta1 = 0.0;
        let r = validate_data(&ProblemData::from_spec(&s).unwrap(), 3);
        assert_eq!(r.violations[0].label, "cost weights");
    }

    #[test]
    fn constructor_rejects_bad_constants() {
        let mut s = spec("1", "0");
        s.s0 = 0.1;
        assert!(ProblemData::from_spec(&s).is_err());
        let mut s = spec("1", "0");
        s.t_final = 0.0;
        assert!(ProblemData::from_spec(&s).is_err());
        let mut s = spec("1", "0");
        s.a = ExprText("y".into());
        let msg = ProblemData::from_spec(&s).unwrap_err().to_string();
        assert!(msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn steklov_examples() {
        let c = FunctionSpec::parse("3.5", Signature::T).unwrap();
        for k in 1..5 {
            assert_eq!(steklov_average(&c, k, 0.25, None).unwrap(), 3.5);
        }
        let lin = FunctionSpec::parse("t", Signature::T).unwrap();
        assert!((steklov_average(&lin, 2, 0.5, None).unwrap() - 0.75).abs() < 1e-15);
        let sq = FunctionSpec::parse("t^2", Signature::T).unwrap();
        // 2 * (1/3 - 1/24) = 7/12
        let exact = 2.0 * (1.0f64 / 3.0 - 0.125 / 3.0);
        assert!((exact - 7.0 / 12.0).abs() < 1e-15);
        assert!((steklov_average(&sq, 2, 0.5, None).unwrap() - exact).abs() < 1e-14);
        assert!(steklov_average(&sq, 0, 0.5, None).is_err());
    }

    #[test]
    fn steklov_exact_for_degree_seven_and_linear() {
        let p = FunctionSpec::parse("x*t^7 - 2*t^3 + 1", Signature::XT).unwrap();
        let tau = 0.3;
        let k = 3;
        let (lo, hi) = (0.6f64, 0.9f64);
        let anti = |t: f64| 2.0 * t.powi(8) / 8.0 - 2.0 * t.powi(4) / 4.0 + t;
        let exact = (anti(hi) - anti(lo)) / tau;
        let got = steklov_average(&p, k, tau, Some(2.0)).unwrap();
        assert!((got - exact).abs() <= 1e-13 * exact.abs());

        let f = FunctionSpec::parse("sin(t)", Signature::T).unwrap();
        let g = FunctionSpec::parse("exp(t)", Signature::T).unwrap();
        let h = FunctionSpec::parse("2*sin(t) - 3*exp(t)", Signature::T).unwrap();
        let (af, ag, ah) = (
            steklov_average(&f, 2, 0.4, None).unwrap(),
            steklov_average(&g, 2, 0.4, None).unwrap(),
            steklov_average(&h, 2, 0.4, None).unwrap(),
        );
        assert!((ah - (2.0 * af - 3.0 * ag)).abs() < 1e-14);
    }

    #[test]
    fn trace_examples() {
        let gamma = FunctionSpec::parse("2", Signature::XT).unwrap();
        let zero = FunctionSpec::parse("0", Signature::XT).unwrap();
        let pd = ProblemData::from_spec(&spec("1", "0")).unwrap();
        let s = ContinuousControl::analytic_with_derivatives(
            FunctionSpec::parse("1 + t/4", Signature::T).unwrap(),
            FunctionSpec::parse("0", Signature::T).unwrap(),
            Some(FunctionSpec::parse("1/4", Signature::T).unwrap()),
            None,
            None,
            &pd,
        )
        .unwrap();
        for k in 1..=4 {
            let (gs, ch) = trace_averages(&s, &gamma, &zero, k, 0.25).unwrap();
            assert!((gs - 0.5).abs() < 1e-15);
            assert_eq!(ch, 0.0);
        }
        let gx = FunctionSpec::parse("x", Signature::XT).unwrap();
        let s = ContinuousControl::analytic(
            FunctionSpec::parse("1 + t", Signature::T).unwrap(),
            FunctionSpec::parse("0", Signature::T).unwrap(),
            &pd,
        )
        .unwrap();
        let tau = 0.2;
        let (gs, _) = trace_averages(&s, &gx, &zero, 1, tau).unwrap();
        assert!((gs - (1.0 + tau / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn trace_fundamental_theorem_on_lift() {
        let one = FunctionSpec::parse("1", Signature::XT).unwrap();
        let dc = DiscreteControl::new(vec![1.0, 1.2, 1.1, 1.5, 1.45], vec![0.0; 5], 1.0).unwrap();
        let lift = lift_pn(&dc).unwrap();
        let tau = dc.tau();
        for k in 1..=4 {
            let (gs, _) = trace_averages(&lift, &one, &one, k, tau).unwrap();
            let fd = (lift.s(k as f64 * tau).unwrap() - lift.s((k - 1) as f64 * tau).unwrap()) / tau;
            assert!((gs - fd).abs() < 1e-12);
        }
    }
}
