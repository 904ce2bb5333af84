//! Survival functions for the chi-square and Student t distributions,
//! built on series/continued-fraction evaluations of the regularized
//! incomplete gamma and beta functions (relative error around 1e-10 in
//! `f64`; checked against numerical quadrature in the tests).

use crate::num::Real;

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma<R: Real>(z: R) -> R {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    let half = R::from_f64_lossy(0.5);
    let one = R::one();
    if z < half {
        // reflection formula
        let pi = R::from_f64_lossy(std::f64::consts::PI);
        return (pi / (pi * z).sin()).ln() - ln_gamma(one - z);
    }
    let z = z - one;
    let mut x = R::from_f64_lossy(0.999_999_999_999_809_93);
    for (i, &c) in COEFFS.iter().enumerate() {
        x += R::from_f64_lossy(c) / (z + R::from_f64_lossy((i + 1) as f64));
    }
    let g = R::from_f64_lossy(7.5);
    let t = z + g;
    let ln_sqrt_2pi = R::from_f64_lossy(0.918_938_533_204_672_7);
    ln_sqrt_2pi + (z + half) * t.ln() - t + x.ln()
}

fn fpmin<R: Real>() -> R {
    R::min_positive_value() / R::epsilon()
}

/// Regularized lower incomplete gamma P(a, x) by its power series.
fn gamma_p_series<R: Real>(a: R, x: R) -> R {
    let mut ap = a;
    let mut sum = R::one() / a;
    let mut term = sum;
    for _ in 0..500 {
        ap += R::one();
        term = term * x / ap;
        sum += term;
        if term.abs() < sum.abs() * R::epsilon() {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz's continued
/// fraction.
fn gamma_q_cf<R: Real>(a: R, x: R) -> R {
    let tiny = fpmin::<R>();
    let one = R::one();
    let two = R::from_f64_lossy(2.0);
    let mut b = x + one - a;
    let mut c = one / tiny;
    let mut d = one / b;
    let mut h = d;
    for i in 1..500 {
        let fi = R::from_f64_lossy(i as f64);
        let an = -fi * (fi - a);
        b += two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del - one).abs() < R::epsilon() {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), for a > 0.
pub fn gamma_q<R: Real>(a: R, x: R) -> R {
    if x <= R::zero() {
        return R::one();
    }
    if x < a + R::one() {
        R::one() - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Chi-square survival function: P(X > x) with `df` degrees of freedom.
pub fn chi_square_sf<R: Real>(x: R, df: usize) -> R {
    if x <= R::zero() {
        return R::one();
    }
    let half = R::from_f64_lossy(0.5);
    gamma_q(half * R::from_f64_lossy(df as f64), half * x)
}

/// Continued fraction for the incomplete beta function (Lentz).
fn beta_cf<R: Real>(a: R, b: R, x: R) -> R {
    let tiny = fpmin::<R>();
    let one = R::one();
    let two = R::from_f64_lossy(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..500 {
        let fm = R::from_f64_lossy(m as f64);
        let m2 = two * fm;
        let aa = fm * (b - fm) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + fm) * (qab + fm) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del - one).abs() < R::epsilon() {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta<R: Real>(a: R, b: R, x: R) -> R {
    if x <= R::zero() {
        return R::zero();
    }
    if x >= R::one() {
        return R::one();
    }
    let one = R::one();
    let two = R::from_f64_lossy(2.0);
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (one - x).ln())
    .exp();
    if x < (a + one) / (a + b + two) {
        bt * beta_cf(a, b, x) / a
    } else {
        one - bt * beta_cf(b, a, one - x) / b
    }
}

/// Student t survival function: P(T > t) with `df` degrees of freedom.
pub fn student_t_sf<R: Real>(t: R, df: R) -> R {
    let half = R::from_f64_lossy(0.5);
    let x = df / (df + t * t);
    let tail = half * inc_beta(half * df, half, x);
    if t >= R::zero() {
        tail
    } else {
        R::one() - tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn student_t_two_sided<R: Real>(t: R, df: R) -> R {
    let p = R::from_f64_lossy(2.0) * student_t_sf(t.abs(), df);
    if p > R::one() {
        R::one()
    } else {
        p
    }
}
