//! Normal and gamma distribution primitives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, computed from the complementary error function so that
/// both tails keep full relative precision.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("std_normal_cdf", format!("non-finite input {x}")));
    }
    Ok(phi(x))
}

#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Rational approximation (relative error about 1e-9) followed by one Halley
/// step against the erfc-based CDF.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(
            "std_normal_quantile",
            format!("probability {u} outside (0, 1)"),
        ));
    }
    Ok(phi_inv(u))
}

pub(crate) fn phi_inv(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if u > 0.5 {
        return -phi_inv(1.0 - u);
    }
    let x = if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement
    let e = phi(x) - u;
    let step = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - step / (1.0 + 0.5 * x * step)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Regularized lower incomplete gamma function P(a, x).
///
/// Series expansion below `a + 1`, Lentz continued fraction for Q(a, x) above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    regularized_gamma_p_with(a, x, ln_gamma(a))
}

pub(crate) fn regularized_gamma_p_with(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x, ln_gamma_a)
    } else {
        1.0 - gamma_continued_fraction(a, x, ln_gamma_a)
    }
}

fn gamma_series(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..100_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma_a).exp().min(1.0)
}

/// Q(a, x) via the modified Lentz algorithm.
fn gamma_continued_fraction(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    ((-x + a * x.ln() - ln_gamma_a).exp() * h).clamp(0.0, 1.0)
}

/// Gamma distribution in the shape/scale parameterization (mean `shape * scale`,
/// variance `shape * scale^2`), with `ln Γ(shape)` cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDist {
    shape: f64,
    scale: f64,
    ln_gamma_shape: f64,
}

impl GammaDist {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(
                "gamma",
                format!("shape {shape} and scale {scale} must be positive and finite"),
            ));
        }
        Ok(Self {
            shape,
            scale,
            ln_gamma_shape: ln_gamma(shape),
        })
    }

    /// Moment matching: shape = mean²/variance, scale = variance/mean.
    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self> {
        Self::new(mean * mean / variance, variance / mean)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * y.ln() - y / self.scale - self.shape * self.scale.ln() - self.ln_gamma_shape
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        regularized_gamma_p_with(self.shape, y / self.scale, self.ln_gamma_shape)
    }

    /// Quantile by safeguarded Newton iteration on the CDF.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::domain(
                "gamma_quantile",
                format!("probability {u} outside [0, 1)"),
            ));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let unit = GammaDist { scale: 1.0, ..*self };
        let a = self.shape;
        // Wilson-Hilferty starting point
        let z = phi_inv(u);
        let wh = a * (1.0 - 1.0 / (9.0 * a) + z / (3.0 * a.sqrt())).powi(3);
        let mut x = if wh > 0.0 {
            wh
        } else {
            (u.ln() + ln_gamma(a + 1.0)).exp().powf(1.0 / a)
        };
        let mut lo = 0.0;
        let mut hi = a.max(1.0);
        while unit.cdf(hi) < u {
            lo = hi;
            hi *= 2.0;
        }
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let f = unit.cdf(x) - u;
            if f.abs() <= 1e-15 {
                break;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let density = unit.pdf(x);
            let newton = x - f / density;
            x = if density > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(x * self.scale)
    }
}

pub fn gamma_cdf(y: f64, shape: f64, scale: f64) -> Result<f64> {
    Ok(GammaDist::new(shape, scale)?.cdf(y))
}

pub fn gamma_quantile(u: f64, shape: f64, scale: f64) -> Result<f64> {
    GammaDist::new(shape, scale)?.quantile(u)
}

/// Normal kernel N(mean, sd²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDist {
    pub mean: f64,
    pub sd: f64,
}

impl NormalDist {
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - LN_SQRT_2PI
    }

    pub fn pdf(&self, y: f64) -> f64 {
        std_normal_pdf((y - self.mean) / self.sd) / self.sd
    }

    pub fn cdf(&self, y: f64) -> f64 {
        phi((y - self.mean) / self.sd)
    }
}
