//! Gamma function and the closed-form dimensional constants used throughout the
//! crate: bubble normalization, sphere and ball measures, Green normalization,
//! the whole-space bubble mass and the four energy-expansion constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
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

/// Natural logarithm of the Gamma function for `x > 0`.
///
/// Lanczos approximation (g = 7, nine terms) with the reflection formula
/// below 1/2.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::NonPositive { name: "x", value: x });
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Gamma(x) Gamma(1 - x) = pi / sin(pi x), and sin(pi x) > 0 on (0, 1/2).
        return (PI / (PI * x).sin()).ln() - log_gamma_unchecked(1.0 - x);
    }
    let z = x - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + series.ln()
}

/// Gamma function for `x > 0`.
pub fn gamma(x: f64) -> Result<f64> {
    log_gamma(x).map(f64::exp)
}

/// Closed-form constants attached to a dimension `n >= 3`.
///
/// Built once per dimension and handed to every consumer; `c2` is the same
/// stored value as `c1` and `c4` is exactly `2 * c3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimConstants {
    pub n: usize,
    /// `(n(n-2))^{(n-2)/4}`
    pub alpha_n: f64,
    /// `|S^{n-1}|`
    pub sphere_measure: f64,
    /// `|B_n|`
    pub ball_volume: f64,
    /// `1 / ((n-2)|S^{n-1}|)`
    pub gamma_n: f64,
    /// `int_{R^n} (1+|y|^2)^{-n} dy`
    pub bubble_mass: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl DimConstants {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Dimension(n));
        }
        let nf = n as f64;
        let half = nf / 2.0;
        let pi_half = PI.powf(half);
        let lg_half = log_gamma_unchecked(half);

        let alpha_n = (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0);
        let sphere_measure = 2.0 * pi_half / lg_half.exp();
        let ball_volume = pi_half / log_gamma_unchecked(half + 1.0).exp();
        let gamma_n = 1.0 / ((nf - 2.0) * sphere_measure);
        let bubble_mass = pi_half * (lg_half - log_gamma_unchecked(nf)).exp();

        let energy_scale = (nf * (nf - 2.0)).powf(half);
        let c1 = energy_scale * bubble_mass / nf;
        let c4 = energy_scale * ball_volume;
        let c3 = c4 / 2.0;

        Ok(Self { n, alpha_n, sphere_measure, ball_volume, gamma_n, bubble_mass, c1, c2: c1, c3, c4 })
    }

    /// Nonlinearity exponent `p = (n+2)/(n-2)`.
    pub fn p(&self) -> f64 {
        let nf = self.n as f64;
        (nf + 2.0) / (nf - 2.0)
    }

    /// Critical Sobolev exponent `p + 1 = 2n/(n-2)`.
    pub fn critical_exponent(&self) -> f64 {
        self.p() + 1.0
    }

    /// `(n(n-2))^{n/2}`, the whole-space value of `int U^{2n/(n-2)}` per unit mass.
    pub fn energy_scale(&self) -> f64 {
        let nf = self.n as f64;
        (nf * (nf - 2.0)).powf(nf / 2.0)
    }
}

/// Constants for dimension `n`; see [`DimConstants`].
pub fn dim_constants(n: usize) -> Result<DimConstants> {
    DimConstants::new(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_interval;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn log_gamma_reference_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-14);
        assert!(close(log_gamma(0.5).unwrap(), 0.5 * PI.ln(), 1e-13));
        assert!(close(log_gamma(5.0).unwrap(), 24f64.ln(), 1e-13));
        assert!(close(log_gamma(1.5).unwrap(), (0.5 * PI.sqrt()).ln(), 1e-13));
    }

    #[test]
    fn log_gamma_factorials_up_to_fifty() {
        let mut log_fact = 0.0f64;
        for k in 1..50u32 {
            // ln Gamma(k + 1) = ln k!
            log_fact += f64::from(k).ln();
            let got = log_gamma(f64::from(k) + 1.0).unwrap();
            assert!(close(got, log_fact, 1e-12), "k = {k}: {got} vs {log_fact}");
        }
    }

    #[test]
    fn log_gamma_half_integers_via_recurrence() {
        // Gamma(x + 1) = x Gamma(x) starting from Gamma(1/2) = sqrt(pi).
        let mut expected = 0.5 * PI.ln();
        let mut x = 0.5;
        while x < 50.0 {
            let got = log_gamma(x).unwrap();
            assert!(close(got, expected, 1e-12), "x = {x}");
            expected += x.ln();
            x += 1.0;
        }
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn small_arguments_use_reflection() {
        // Gamma(0.25) = 3.625609908221908...
        assert!(close(gamma(0.25).unwrap(), 3.625_609_908_221_908, 1e-13));
    }

    #[test]
    fn rejects_low_dimension() {
        assert_eq!(dim_constants(2), Err(Error::Dimension(2)));
    }

    #[test]
    fn four_dimensional_values() {
        let c = dim_constants(4).unwrap();
        assert!(close(c.alpha_n, 2.0 * 2f64.sqrt(), 1e-15));
        assert!(close(c.bubble_mass, PI * PI / 6.0, 1e-14));
        assert!(close(c.ball_volume, PI * PI / 2.0, 1e-14));
        assert!(close(c.c1, 8.0 * PI * PI / 3.0, 1e-14));
        assert!(close(c.c4, 32.0 * PI * PI, 1e-14));
        assert!(close(c.c3, 16.0 * PI * PI, 1e-14));
        assert!((c.c1 - 26.3189).abs() < 1e-4);
        assert!((c.c4 - 315.827).abs() < 1e-3);
    }

    #[test]
    fn expansion_constant_relations_are_exact() {
        for n in 3..=20 {
            let c = dim_constants(n).unwrap();
            assert_eq!(c.c1.to_bits(), c.c2.to_bits());
            assert_eq!((2.0 * c.c3).to_bits(), c.c4.to_bits());
        }
    }

    #[test]
    fn ball_volume_is_sphere_over_n() {
        for n in 3..=10 {
            let c = dim_constants(n).unwrap();
            let expect = c.sphere_measure / n as f64;
            assert!((c.ball_volume - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn bubble_mass_matches_radial_quadrature() {
        for n in 3..=8 {
            let c = dim_constants(n).unwrap();
            let nf = n as f64;
            // r = tan(phi) maps (0, inf) onto (0, pi/2):
            // r^{n-1} (1+r^2)^{-n} dr = sin^{n-1} cos^{n-1} dphi
            let radial = integrate_interval(
                |phi: f64| (phi.sin() * phi.cos()).powf(nf - 1.0),
                0.0,
                PI / 2.0,
                1e-14,
                0.0,
                200_000,
            );
            let quad = c.sphere_measure * radial.value;
            assert!((quad - c.bubble_mass).abs() <= 1e-10 * c.bubble_mass, "n = {n}: {quad} vs {}", c.bubble_mass);
        }
    }
}
