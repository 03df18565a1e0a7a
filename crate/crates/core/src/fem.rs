//! Piecewise-linear Galerkin assembly and tridiagonal solve for one time step.

use crate::error::{Error, Result};
use crate::problem::{steklov_average, ProblemData};
use crate::quadrature::GAUSS2;

/// Uniform mesh of `[0, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
}

impl Mesh1D {
    pub fn uniform(length: f64, elements: usize) -> Result<Self> {
        if elements < 1 {
            return Err(Error::Invalid("mesh needs at least one element".into()));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Invalid(format!("mesh length {length} must be positive")));
        }
        let h = length / elements as f64;
        let mut nodes: Vec<f64> = (0..=elements).map(|i| i as f64 * h).collect();
        nodes[elements] = length;
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn length(&self) -> f64 {
        self.nodes[self.elements()]
    }

    pub fn h(&self) -> f64 {
        self.length() / self.elements() as f64
    }

    /// Linear interpolation of nodal values at `x ∈ [0, length]`.
    pub fn interpolate(&self, nodal: &[f64], x: f64) -> f64 {
        let m = self.elements();
        let h = self.h();
        let e = ((x / h).floor().max(0.0) as usize).min(m - 1);
        let r = ((x - self.nodes[e]) / h).clamp(0.0, 1.0);
        nodal[e] * (1.0 - r) + nodal[e + 1] * r
    }
}

/// Tridiagonal Galerkin system. `sub[0]` and `sup[last]` are unused zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSystem {
    pub step: usize,
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
    pub mesh: Mesh1D,
}

impl StepSystem {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * u[i];
                if i > 0 {
                    v += self.sub[i] * u[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * u[i + 1];
                }
                v
            })
            .collect()
    }

    /// `A u − b`, one entry per hat function.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        self.apply(u).iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = self.diag[i];
            if i > 0 {
                a[i][i - 1] = self.sub[i];
            }
            if i + 1 < n {
                a[i][i + 1] = self.sup[i];
            }
        }
        a
    }
}

/// `τ₀ = (M²/(2a₀) + M)⁻¹`; infinite when `M = 0`.
pub fn stability_threshold(m_bound: f64, a0: f64) -> Result<f64> {
    if !(m_bound >= 0.0) || !(a0 > 0.0) {
        return Err(Error::Invalid(format!("need M >= 0 and a0 > 0, got M = {m_bound}, a0 = {a0}")));
    }
    if m_bound == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (m_bound * m_bound / (2.0 * a0) + m_bound))
}

/// Coefficient values `(a, b, c, f)` at a spatial point.
pub type PointCoefficients = [f64; 4];

/// Assembles `∫ a u'η' − b u'η − c uη + uη/τ = ∫ (u_prev/τ − f) η − left·η(0) − right·η(L)`
/// on the hat basis of `mesh`, with element integrals by 2-point Gauss.
pub fn assemble_galerkin(
    step: usize,
    mesh: &Mesh1D,
    tau: f64,
    mut coeffs: impl FnMut(f64) -> Result<PointCoefficients>,
    mut u_prev: impl FnMut(f64) -> Result<f64>,
    left_load: f64,
    right_load: f64,
) -> Result<StepSystem> {
    if !(tau > 0.0) {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    let m = mesh.elements();
    let size = m + 1;
    let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
    let h = mesh.h();
    let dphi = [-1.0 / h, 1.0 / h];
    for e in 0..m {
        let x0 = mesh.nodes[e];
        let mut ke = [[0.0; 2]; 2];
        let mut fe = [0.0; 2];
        for &(xi, w) in &GAUSS2 {
            let x = x0 + 0.5 * h * (1.0 + xi);
            let w = 0.5 * h * w;
            let phi = [0.5 * (1.0 - xi), 0.5 * (1.0 + xi)];
            let [a, b, c, f] = coeffs(x)?;
            let up = u_prev(x)?;
            for i in 0..2 {
                for j in 0..2 {
                    ke[i][j] += w
                        * (a * dphi[j] * dphi[i] - b * dphi[j] * phi[i] - c * phi[j] * phi[i]
                            + phi[j] * phi[i] / tau);
                }
                fe[i] += w * (up / tau - f) * phi[i];
            }
        }
        diag[e] += ke[0][0];
        sup[e] += ke[0][1];
        sub[e + 1] += ke[1][0];
        diag[e + 1] += ke[1][1];
        rhs[e] += fe[0];
        rhs[e + 1] += fe[1];
    }
    rhs[0] -= left_load;
    rhs[m] -= right_load;
    let sys = StepSystem {
        step,
        sub,
        diag,
        sup,
        rhs,
        mesh: mesh.clone(),
    };
    if sys.sub.iter().chain(&sys.diag).chain(&sys.sup).chain(&sys.rhs).any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite entry assembled at step {step}")));
    }
    Ok(sys)
}

/// Galerkin system of step `k` on `[0, s_k]` with slab-averaged coefficients.
#[allow(clippy::too_many_arguments)]
pub fn assemble_step(
    pd: &ProblemData,
    k: usize,
    s_k: f64,
    m: usize,
    tau: f64,
    u_prev: impl FnMut(f64) -> Result<f64>,
    gs_k: f64,
    chi_k: f64,
    g_k: f64,
) -> Result<StepSystem> {
    if m < 2 {
        return Err(Error::Invalid("need at least two elements".into()));
    }
    if !(pd.delta <= s_k && s_k <= pd.l) {
        return Err(Error::Invalid(format!("s_{k} = {s_k} outside [delta, l]")));
    }
    let mesh = Mesh1D::uniform(s_k, m)?;
    let coeffs = |x: f64| -> Result<PointCoefficients> {
        Ok([
            steklov_average(&pd.a, k, tau, Some(x))?,
            steklov_average(&pd.b, k, tau, Some(x))?,
            steklov_average(&pd.c, k, tau, Some(x))?,
            steklov_average(&pd.f, k, tau, Some(x))?,
        ])
    };
    assemble_galerkin(k, &mesh, tau, coeffs, u_prev, g_k, gs_k - chi_k)
}

const PIVOT_FLOOR: f64 = 1e-14;

fn thomas(sys: &StepSystem) -> Option<Vec<f64>> {
    let n = sys.size();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let scale = sys.diag[i].abs().max(sys.sub[i].abs()).max(sys.sup[i].abs());
        let (pivot, rhs) = if i == 0 {
            (sys.diag[0], sys.rhs[0])
        } else {
            (sys.diag[i] - sys.sub[i] * c[i - 1], sys.rhs[i] - sys.sub[i] * d[i - 1])
        };
        if !(pivot.abs() >= PIVOT_FLOOR * scale) || scale == 0.0 {
            return None;
        }
        c[i] = if i + 1 < n { sys.sup[i] / pivot } else { 0.0 };
        d[i] = rhs / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        let scale = a[col..].iter().map(|r| r[col].abs()).fold(0.0, f64::max);
        if scale == 0.0 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn residual_ok(sys: &StepSystem, u: &[f64]) -> bool {
    let bmax = sys.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rmax = sys.residual(u).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    rmax <= 1e-10 * (1.0 + bmax)
}

/// Solves the step system, falling back to a pivoted dense solve when the
/// Thomas sweep meets a tiny pivot or leaves a large residual.
pub fn solve_step(sys: &StepSystem) -> Result<Vec<f64>> {
    if let Some(u) = thomas(sys) {
        if residual_ok(sys, &u) {
            return Ok(u);
        }
    }
    log::debug!("step {}: Thomas sweep rejected, using dense pivoted solve", sys.step);
    match dense_solve(sys.to_dense(), sys.rhs.clone()) {
        Some(u) if residual_ok(sys, &u) => Ok(u),
        _ => Err(Error::Singular {
            step: sys.step,
            msg: "both tridiagonal and dense solves failed".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::spec;

    fn unit_problem() -> ProblemData {
        ProblemData::from_spec(&spec("1", "0")).unwrap()
    }

    fn det3(a: [[f64; 3]; 3]) -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    fn cramer3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let d = det3(a);
        let mut x = [0.0; 3];
        for (col, xc) in x.iter_mut().enumerate() {
            let mut m = a;
            for r in 0..3 {
                m[r][col] = b[r];
            }
            *xc = det3(m) / d;
        }
        x
    }

    #[test]
    fn threshold_examples() {
        assert!((stability_threshold(1.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stability_threshold(0.0, 1.0).unwrap(), f64::INFINITY);
        assert!((stability_threshold(2.0, 0.5).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(stability_threshold(-1.0, 1.0).is_err());
        assert!(stability_threshold(1.0, 0.0).is_err());
    }

    #[test]
    fn homogeneous_rhs_and_flux_entry() {
        let pd = unit_problem();
        let sys = assemble_step(&pd, 1, 1.0, 4, 0.1, |_| Ok(0.0), 0.0, 0.0, 0.0).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let sys = assemble_step(&pd, 1, 1.0, 4, 0.1, |_| Ok(0.0), 0.0, 0.0, -1.0).unwrap();
        assert_eq!(sys.rhs[0], 1.0);
        assert!(sys.rhs[1..].iter().all(|&v| v == 0.0));
        let sys = assemble_step(&pd, 1, 1.0, 4, 0.1, |_| Ok(0.0), 0.5, 2.0, 0.0).unwrap();
        assert_eq!(sys.rhs[4], 1.5);
    }

    #[test]
    fn three_by_three_hand_assembly() {
        let pd = unit_problem();
        let sys = assemble_step(&pd, 1, 1.0, 2, 0.1, |_| Ok(0.0), 0.0, 0.0, 0.0).unwrap();
        let h = 0.5;
        let k = 1.0 / h;
        let mm = h / 6.0 / 0.1;
        let expect = [
            [k + 2.0 * mm, -k + mm, 0.0],
            [-k + mm, 2.0 * k + 4.0 * mm, -k + mm],
            [0.0, -k + mm, k + 2.0 * mm],
        ];
        let got = sys.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i][j] - expect[i][j]).abs() < 1e-13, "({i},{j})");
            }
        }
        let mut sys = sys;
        sys.rhs = vec![1.0, -2.0, 0.5];
        let u = solve_step(&sys).unwrap();
        let oracle = cramer3(expect, [1.0, -2.0, 0.5]);
        for i in 0..3 {
            assert!((u[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_zero_systems() {
        let mesh = Mesh1D::uniform(1.0, 3).unwrap();
        let sys = StepSystem {
            step: 1,
            sub: vec![0.0; 4],
            diag: vec![1.0; 4],
            sup: vec![0.0; 4],
            rhs: vec![1.0, -2.0, 3.0, 4.0],
            mesh,
        };
        assert_eq!(solve_step(&sys).unwrap(), sys.rhs);
        let zero = StepSystem {
            rhs: vec![0.0; 4],
            ..sys.clone()
        };
        assert_eq!(solve_step(&zero).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn dense_fallback_and_singular_error() {
        let mesh = Mesh1D::uniform(1.0, 1).unwrap();
        // zero leading pivot: Thomas refuses, pivoting recovers [1, 2]
        let sys = StepSystem {
            step: 7,
            sub: vec![0.0, 1.0],
            diag: vec![0.0, 1.0],
            sup: vec![1.0, 0.0],
            rhs: vec![2.0, 3.0],
            mesh: mesh.clone(),
        };
        let u = solve_step(&sys).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-14 && (u[1] - 2.0).abs() < 1e-14);
        let singular = StepSystem {
            sub: vec![0.0, 1.0],
            diag: vec![1.0, 1.0],
            sup: vec![1.0, 0.0],
            ..sys
        };
        match solve_step(&singular) {
            Err(Error::Singular { step: 7, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mirrored_assembly_gives_same_solution() {
        let (l, m, tau) = (1.3, 17, 0.05);
        let a = |x: f64| 1.0 + 0.5 * x;
        let b = |x: f64| 0.3 * x.sin();
        let c = |x: f64| 0.2 - 0.1 * x;
        let f = |x: f64| x * x - 1.0;
        let up = |x: f64| (2.0 * x).cos();
        let (left, right) = (0.7, -0.4);
        let mesh = Mesh1D::uniform(l, m).unwrap();
        let sys = assemble_galerkin(1, &mesh, tau, |x| Ok([a(x), b(x), c(x), f(x)]), |x| Ok(up(x)), left, right).unwrap();
        let u = solve_step(&sys).unwrap();
        // y = l − x flips the sign of first derivatives and swaps the boundary loads
        let mirrored = assemble_galerkin(
            1,
            &mesh,
            tau,
            |y| Ok([a(l - y), -b(l - y), c(l - y), f(l - y)]),
            |y| Ok(up(l - y)),
            right,
            left,
        )
        .unwrap();
        let v = solve_step(&mirrored).unwrap();
        for i in 0..=m {
            assert!((u[i] - v[m - i]).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn coercivity_witness_below_threshold() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (a0, mb) = (1.0, 3.0);
        let tau0 = stability_threshold(mb, a0).unwrap();
        let tau = 0.45 * tau0;
        let mesh = Mesh1D::uniform(1.0, 12).unwrap();
        let sys = assemble_galerkin(
            1,
            &mesh,
            tau,
            |x| Ok([a0 + 2.0 * x, mb * (3.0 * x).sin(), mb * (1.0 - 2.0 * x), 0.0]),
            |_| Ok(0.0),
            0.0,
            0.0,
        )
        .unwrap();
        let h = mesh.h();
        for _ in 0..200 {
            let u: Vec<f64> = (0..13).map(|_| rng.random_range(-1.0..1.0)).collect();
            let form: f64 = sys.apply(&u).iter().zip(&u).map(|(p, q)| p * q).sum();
            let grad2: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2) / h).sum();
            let l2: f64 = u.windows(2).map(|w| h * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0).sum();
            let witness = 0.5 * a0 * grad2 + (1.0 / tau - 1.0 / tau0) * l2;
            assert!(witness > 0.0);
            assert!(form >= witness - 1e-9 * form.abs(), "{form} < {witness}");
        }
    }

    #[test]
    fn residual_of_solution_is_tiny() {
        let pd = unit_problem();
        let sys = assemble_step(&pd, 2, 0.9, 30, 0.02, |x| Ok(x * x), 0.3, -0.2, 1.1).unwrap();
        let u = solve_step(&sys).unwrap();
        assert!(sys.residual(&u).iter().all(|r| r.abs() <= 1e-9));
    }

    #[test]
    fn one_step_spatial_order_two() {
        // −u'' + u/τ = u_prev/τ on [0,1] with u = cos(πx) + 1 and zero flux ends
        let tau = 0.1;
        let pi = std::f64::consts::PI;
        let exact = |x: f64| (pi * x).cos() + 1.0;
        let mut errs = Vec::new();
        for m in [8, 16, 32, 64] {
            let mesh = Mesh1D::uniform(1.0, m).unwrap();
            let sys = assemble_galerkin(
                1,
                &mesh,
                tau,
                |_| Ok([1.0, 0.0, 0.0, 0.0]),
                |x| Ok(exact(x) + tau * pi * pi * (pi * x).cos()),
                0.0,
                0.0,
            )
            .unwrap();
            let u = solve_step(&sys).unwrap();
            let h = mesh.h();
            let err2: f64 = (0..=m)
                .map(|i| {
                    let e = u[i] - exact(mesh.nodes()[i]);
                    e * e * if i == 0 || i == m { h / 2.0 } else { h }
                })
                .sum();
            errs.push(err2.sqrt());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.4..=4.6).contains(&ratio), "ratio {ratio}");
        }
    }
}
