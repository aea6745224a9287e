//! Special functions behind the mark-detection hypothesis test: regularized
//! incomplete beta (continued fraction), the sphere-cosine tail probability,
//! and chi-squared survival for combining per-class tests.

use crate::real::{fl, Real};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecialFnError {
    #[error("incomplete beta requires x in [0,1], a > 0, b > 0; got x={x}, a={a}, b={b}")]
    BetaDomain { x: f64, a: f64, b: f64 },
    #[error("cosine similarity {0} outside [-1,1]")]
    CosineDomain(f64),
    #[error("feature dimension {0} must be >= 2")]
    DimensionTooSmall(usize),
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> T {
    const G: [f64; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_7e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut ser = fl::<T>(1.000_000_000_190_015);
    let mut den = x;
    for &g in &G {
        den += T::one();
        ser += fl::<T>(g) / den;
    }
    let tmp = x + fl::<T>(5.5);
    let tmp = tmp - (x + fl::<T>(0.5)) * tmp.ln();
    -tmp + (fl::<T>(2.506_628_274_631_000_5) * ser / x).ln()
}

/// Continued-fraction core of the incomplete beta (modified Lentz).
fn betacf<T: Real>(a: T, b: T, x: T) -> T {
    let max_iter = 300;
    let eps = fl::<T>(1e-15);
    let tiny = fl::<T>(1e-300);

    let qab = a + b;
    let qap = a + T::one();
    let qam = a - T::one();
    let mut c = T::one();
    let mut d = T::one() - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = T::one() / d;
    let mut h = d;
    for m in 1..=max_iter {
        let mf = fl::<T>(m as f64);
        let m2 = mf + mf;
        // even step
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        h = h * d * c;
        // odd step
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let del = d * c;
        h = h * del;
        if (del - T::one()).abs() < eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta<T: Real>(x: T, a: T, b: T) -> Result<T, SpecialFnError> {
    if !(x >= T::zero() && x <= T::one()) || a <= T::zero() || b <= T::zero() {
        return Err(SpecialFnError::BetaDomain {
            x: x.as_f64(),
            a: a.as_f64(),
            b: b.as_f64(),
        });
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x == T::one() {
        return Ok(T::one());
    }
    // Analytic shortcuts keep the boundary identities exact.
    let half = fl::<T>(0.5);
    if a == b && x == half {
        return Ok(half);
    }
    if a == T::one() {
        return Ok(T::one() - (T::one() - x).powf(b));
    }
    if b == T::one() {
        return Ok(x.powf(a));
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (T::one() - x).ln())
    .exp();
    // Continued fraction converges fastest below the split point; use the
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side.
    if x < (a + T::one()) / (a + b + fl::<T>(2.0)) {
        Ok(front * betacf(a, b, x) / a)
    } else {
        Ok(T::one() - front * betacf(b, a, T::one() - x) / b)
    }
}

/// One-sided tail `P(T >= c)` for the cosine `T` between a fixed vector and
/// a uniformly random direction in `dv` dimensions:
/// `(T+1)/2 ~ Beta((dv-1)/2, (dv-1)/2)`.
pub fn cosine_pvalue<T: Real>(c: T, dv: usize) -> Result<T, SpecialFnError> {
    if dv < 2 {
        return Err(SpecialFnError::DimensionTooSmall(dv));
    }
    if c < -T::one() || c > T::one() {
        return Err(SpecialFnError::CosineDomain(c.as_f64()));
    }
    let a = fl::<T>((dv as f64 - 1.0) / 2.0);
    let x = (c + T::one()) / fl::<T>(2.0);
    Ok(T::one() - reg_inc_beta(x, a, a)?)
}

/// Survival function of chi-squared with an even number of degrees of
/// freedom `k = 2s`: `P(X > x) = e^{-x/2} * sum_{j<s} (x/2)^j / j!`.
pub fn chi2_survival_even(x: f64, k: usize) -> f64 {
    assert!(k >= 2 && k % 2 == 0, "even degrees of freedom required");
    if x <= 0.0 {
        return 1.0;
    }
    if !x.is_finite() {
        return 0.0;
    }
    let half = x / 2.0;
    let s = k / 2;
    let mut term = (-half).exp();
    let mut sum = term;
    for j in 1..s {
        term *= half / j as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// Fisher's combination of independent p-values:
/// `X = -2 * sum(ln p_i)` against chi-squared with `2k` degrees of freedom.
pub fn fisher_combine(pvalues: &[f64]) -> f64 {
    assert!(!pvalues.is_empty());
    let stat: f64 = pvalues.iter().map(|&p| -2.0 * p.max(f64::MIN_POSITIVE).ln()).sum();
    chi2_survival_even(stat, 2 * pvalues.len())
}

/// Bonferroni-corrected minimum p-value, the alternative combiner.
pub fn min_p_bonferroni(pvalues: &[f64]) -> f64 {
    assert!(!pvalues.is_empty());
    let min = pvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (min * pvalues.len() as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        // Γ(n) = (n-1)!
        let cases = [(1.0, 1.0), (2.0, 1.0), (3.0, 2.0), (5.0, 24.0), (7.0, 720.0)];
        for (x, fact) in cases {
            assert!((ln_gamma(x) - f64::ln(fact)).abs() < 1e-11, "x={x}");
        }
        // Γ(1/2) = sqrt(pi)
        assert!((ln_gamma(0.5f64) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-11);
    }

    #[test]
    fn beta_uniform_case_is_identity() {
        for &x in &[0.0f64, 0.3, 1.0] {
            assert!((reg_inc_beta(x, 1.0, 1.0).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_symmetric_midpoint_is_half() {
        for &a in &[0.5f64, 2.0, 7.5] {
            assert!((reg_inc_beta(0.5, a, a).unwrap() - 0.5).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn beta_matches_degree_four_polynomial_cdf() {
        // Beta(2,3) CDF expands to 6x^2 - 8x^3 + 3x^4.
        let poly = |x: f64| 6.0 * x * x - 8.0 * x.powi(3) + 3.0 * x.powi(4);
        for &x in &[0.1f64, 0.25, 0.5, 0.8] {
            assert!(
                (reg_inc_beta(x, 2.0, 3.0).unwrap() - poly(x)).abs() < 1e-10,
                "x={x}"
            );
        }
        assert!((reg_inc_beta(0.25f64, 2.0, 3.0).unwrap() - 0.26171875).abs() < 1e-10);
    }

    #[test]
    fn beta_matches_trapezoid_quadrature() {
        // Independent oracle: integrate the Beta(a,b) density directly.
        let quad = |x: f64, a: f64, b: f64| {
            let n = 200_000usize;
            let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
            let f = |t: f64| {
                if t <= 0.0 || t >= 1.0 {
                    0.0
                } else {
                    (ln_norm + (a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln()).exp()
                }
            };
            let h = x / n as f64;
            let mut acc = 0.5 * (f(0.0) + f(x));
            for i in 1..n {
                acc += f(i as f64 * h);
            }
            acc * h
        };
        for &(x, a, b) in &[(0.3f64, 2.5, 4.0), (0.7, 3.0, 1.5), (0.5, 6.0, 6.0)] {
            let got = reg_inc_beta(x, a, b).unwrap();
            let want = quad(x, a, b);
            assert!((got - want).abs() < 1e-7, "x={x} a={a} b={b}: {got} vs {want}");
        }
    }

    #[test]
    fn beta_is_monotone_in_x() {
        let mut prev = 0.0f64;
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let v = reg_inc_beta(x, 3.5, 1.25).unwrap();
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }

    #[test]
    fn beta_rejects_bad_domain() {
        assert!(reg_inc_beta(-0.1f64, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5f64, 0.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5f64, 1.0, -2.0).is_err());
    }

    #[test]
    fn cosine_pvalue_pinned_points() {
        for dv in [2usize, 3, 8, 64, 128] {
            assert!((cosine_pvalue(0.0f64, dv).unwrap() - 0.5).abs() < 1e-12, "dv={dv}");
        }
        assert!(cosine_pvalue(1.0f64, 16).unwrap().abs() < 1e-12);
        assert!((cosine_pvalue(-1.0f64, 16).unwrap() - 1.0).abs() < 1e-12);
        // dv = 3: the cosine is uniform on [-1,1], so P(T >= 0.5) = 0.25.
        assert!((cosine_pvalue(0.5f64, 3).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cosine_pvalue_is_monotone_non_increasing() {
        for dv in [2usize, 3, 17, 64] {
            let mut prev = 1.0f64;
            for i in 0..=200 {
                let c = -1.0 + i as f64 / 100.0;
                let p = cosine_pvalue(c, dv).unwrap();
                assert!(p <= prev + 1e-12, "dv={dv} c={c}");
                prev = p;
            }
        }
    }

    #[test]
    fn cosine_pvalue_rejects_out_of_range() {
        assert_eq!(
            cosine_pvalue(1.5f64, 8).unwrap_err(),
            SpecialFnError::CosineDomain(1.5)
        );
        assert!(cosine_pvalue(0.0f64, 1).is_err());
    }

    #[test]
    fn chi2_survival_two_dof_is_exponential() {
        for &x in &[0.1f64, 1.0, 5.0, 20.0] {
            assert!((chi2_survival_even(x, 2) - (-x / 2.0).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn chi2_survival_matches_simulation() {
        // Sum of k squared normals, empirical tail at a few cut points.
        let mut rng = crate::rng::SeedStream::new(9, crate::rng::streams::DATA_GEN);
        let k = 6usize;
        let n = 40_000usize;
        let draws: Vec<f64> = (0..n)
            .map(|_| (0..k).map(|_| rng.normal::<f64>().powi(2)).sum())
            .collect();
        for &cut in &[2.0f64, 6.0, 12.0] {
            let emp = draws.iter().filter(|&&d| d > cut).count() as f64 / n as f64;
            let ana = chi2_survival_even(cut, k);
            assert!((emp - ana).abs() < 0.01, "cut={cut}: {emp} vs {ana}");
        }
    }

    #[test]
    fn fisher_single_pvalue_is_identity() {
        for &p in &[0.01f64, 0.2, 0.5, 0.9] {
            assert!((fisher_combine(&[p]) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn min_p_bonferroni_clamps_at_one() {
        assert!((min_p_bonferroni(&[0.01, 0.5, 0.9]) - 0.03).abs() < 1e-12);
        assert_eq!(min_p_bonferroni(&[0.9, 0.8]), 1.0);
    }
}
