//! Scalar special functions with exact derivative relationships:
//! d/dx lnΓ = ψ (digamma) and d/dx ψ = ψ′ (trigamma).
//!
//! Only the positive half-line is supported; that is the domain Dirichlet
//! concentrations live on. Arguments `<= 0` return NaN and callers are
//! expected to reject them first.

use std::f64::consts::PI;

/// Lanczos approximation (g = 7, 9 coefficients).
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < 0.5 {
        // Reflection keeps the Lanczos argument comfortably large.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma ψ(x) for `x > 0`: upward recurrence until the argument reaches 6,
/// then the asymptotic series with terms through x⁻¹⁰.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 6.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // ln z - 1/(2z) - sum B_{2n} / (2n z^{2n})
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2 * (-1.0 / 252.0 + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0)))));
    acc + z.ln() - 0.5 * inv + series
}

/// Trigamma ψ′(x) for `x > 0`, by the same recurrence/series scheme.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 6.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/(2z^2) + sum B_{2n} / z^{2n+1}
    let series = inv
        * inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))));
    acc + inv + 0.5 * inv2 + series
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (diff {})", (a - b).abs());
    }

    #[test]
    fn ln_gamma_reference_values() {
        close(ln_gamma(1.0), 0.0, 1e-13);
        close(ln_gamma(2.0), 0.0, 1e-13);
        close(ln_gamma(0.5), 0.5723649429247001, 1e-12);
        close(ln_gamma(3.7), 1.4280723266653881, 1e-12);
        close(ln_gamma(12.25), 18.115669505710893, 1e-11);
        close(ln_gamma(100.0), 359.1342053695754, 1e-9);
    }

    #[test]
    fn digamma_reference_values() {
        // psi(1) = -euler_gamma
        close(digamma(1.0), -0.5772156649015329, 5e-11);
        close(digamma(0.5), -1.9635100260214235, 5e-11);
        close(digamma(2.0), 0.4227843350984671, 5e-11);
        close(digamma(3.7), 1.1671535393615114, 5e-11);
        close(digamma(50.0), 3.901989673427892, 1e-12);
        close(digamma(0.01), -100.56088545786867, 1e-9);
    }

    #[test]
    fn trigamma_reference_values() {
        // psi'(1) = pi^2 / 6
        close(trigamma(1.0), 1.6449340668482264, 5e-11);
        close(trigamma(0.5), 4.934802200544679, 5e-11);
        close(trigamma(12.25), 0.08505514298816321, 1e-13);
        close(trigamma(0.01), 10001.621213528313, 1e-6);
    }

    #[test]
    fn digamma_recurrence_within_1e10_over_half_to_fifty() {
        // psi(x+1) = psi(x) + 1/x
        let mut x = 0.5;
        while x <= 50.0 {
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "recurrence violated at x={x}: {lhs} vs {rhs}"
            );
            x += 0.107;
        }
    }

    #[test]
    fn trigamma_recurrence() {
        // psi'(x+1) = psi'(x) - 1/x^2
        let mut x = 0.5;
        while x <= 50.0 {
            let lhs = trigamma(x + 1.0);
            let rhs = trigamma(x) - 1.0 / (x * x);
            assert!((lhs - rhs).abs() < 1e-10, "at x={x}: {lhs} vs {rhs}");
            x += 0.13;
        }
    }

    #[test]
    fn nonpositive_arguments_are_nan() {
        assert!(ln_gamma(0.0).is_nan());
        assert!(digamma(-1.0).is_nan());
        assert!(trigamma(0.0).is_nan());
    }

    #[test]
    fn matches_statrs_on_a_grid() {
        // Independent implementation cross-check.
        let mut x = 0.05;
        while x < 80.0 {
            close(ln_gamma(x), statrs::function::gamma::ln_gamma(x), 1e-9);
            close(digamma(x), statrs::function::gamma::digamma(x), 1e-8);
            x *= 1.37;
        }
    }
}
