//! Fixed-order Gauss–Legendre rules on a reference interval.

/// 2-point rule on [-1, 1]: (node, weight).
pub const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];

/// 4-point rule on [-1, 1]: (node, weight). Exact for polynomials of degree ≤ 7.
pub const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// Maps a rule onto [a, b], yielding (point, scaled weight) pairs.
pub fn mapped(rule: &[(f64, f64)], a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(move |&(xi, w)| (mid + half * xi, half * w))
}

/// 4-point Gauss integral of a fallible integrand over [a, b].
pub fn gauss4<E>(a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    let mut acc = 0.0;
    for (x, w) in mapped(&GAUSS4, a, b) {
        acc += w * f(x)?;
    }
    Ok(acc)
}

/// Composite 4-point Gauss over `pieces` equal subintervals of [a, b].
pub fn composite_gauss4<E>(
    a: f64,
    b: f64,
    pieces: usize,
    mut f: impl FnMut(f64) -> Result<f64, E>,
) -> Result<f64, E> {
    let pieces = pieces.max(1);
    let h = (b - a) / pieces as f64;
    let mut acc = 0.0;
    for i in 0..pieces {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == pieces { b } else { lo + h };
        acc += gauss4(lo, hi, &mut f)?;
    }
    Ok(acc)
}
