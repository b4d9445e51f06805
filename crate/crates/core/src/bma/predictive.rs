use super::VariableKind;
use crate::error::{Error, Result};
use crate::numerics::{GammaDist, NormalDist};

const TABLE_SIZE: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
enum Kernels {
    Normal(Vec<NormalDist>),
    Gamma(Vec<GammaDist>),
    /// Gamma kernels for the cube root of positive amounts; `wet_weights` are
    /// `ω_k (1 - P(y = 0 | x_k))`.
    Precip {
        zero_prob: Vec<f64>,
        wet_weights: Vec<f64>,
        cube_root: Vec<GammaDist>,
    },
}

/// Density at a point, split into the continuous part and any discrete mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub density: f64,
    pub point_mass: f64,
}

/// One station-day, one-variable BMA predictive distribution.
///
/// Internally everything is evaluated on the kernel scale `t` (the variable
/// itself, or its cube root for precipitation).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMarginal {
    kind: VariableKind,
    members: Vec<f64>,
    weights: Vec<f64>,
    kernels: Kernels,
    point_mass: f64,
}

impl PredictiveMarginal {
    pub(crate) fn normal_mixture(members: Vec<f64>, weights: Vec<f64>, kernels: Vec<NormalDist>) -> Self {
        Self {
            kind: VariableKind::Gaussian,
            members,
            weights,
            kernels: Kernels::Normal(kernels),
            point_mass: 0.0,
        }
    }

    pub(crate) fn gamma_mixture(members: Vec<f64>, weights: Vec<f64>, kernels: Vec<GammaDist>) -> Self {
        Self {
            kind: VariableKind::Gamma,
            members,
            weights,
            kernels: Kernels::Gamma(kernels),
            point_mass: 0.0,
        }
    }

    pub(crate) fn precip_mixture(
        members: Vec<f64>,
        weights: Vec<f64>,
        zero_prob: Vec<f64>,
        cube_root: Vec<GammaDist>,
    ) -> Self {
        let point_mass = weights.iter().zip(&zero_prob).map(|(w, p)| w * p).sum();
        let wet_weights = weights.iter().zip(&zero_prob).map(|(w, p)| w * (1.0 - p)).collect();
        Self {
            kind: VariableKind::Precipitation,
            members,
            weights,
            kernels: Kernels::Precip {
                zero_prob,
                wet_weights,
                cube_root,
            },
            point_mass,
        }
    }

    pub fn kind(&self) -> VariableKind {
        self.kind
    }

    pub fn members(&self) -> &[f64] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Probability of exactly zero (`α`); zero for continuous variables.
    pub fn point_mass(&self) -> f64 {
        self.point_mass
    }

    /// Per-member probabilities of zero precipitation, if applicable.
    pub fn zero_probabilities(&self) -> Option<&[f64]> {
        match &self.kernels {
            Kernels::Precip { zero_prob, .. } => Some(zero_prob),
            _ => None,
        }
    }

    fn nonnegative(&self) -> bool {
        self.kind != VariableKind::Gaussian
    }

    fn to_t(&self, y: f64) -> f64 {
        match self.kind {
            VariableKind::Precipitation => y.cbrt(),
            _ => y,
        }
    }

    fn from_t(&self, t: f64) -> f64 {
        match self.kind {
            VariableKind::Precipitation => t * t * t,
            _ => t,
        }
    }

    fn cdf_t(&self, t: f64) -> f64 {
        match &self.kernels {
            Kernels::Normal(ks) => self.weights.iter().zip(ks).map(|(w, k)| w * k.cdf(t)).sum(),
            Kernels::Gamma(ks) => {
                if t <= 0.0 {
                    return 0.0;
                }
                self.weights.iter().zip(ks).map(|(w, k)| w * k.cdf(t)).sum()
            }
            Kernels::Precip {
                wet_weights, cube_root, ..
            } => {
                if t < 0.0 {
                    return 0.0;
                }
                let wet: f64 = wet_weights.iter().zip(cube_root).map(|(w, k)| w * k.cdf(t)).sum();
                (self.point_mass + wet).min(1.0)
            }
        }
    }

    fn pdf_t(&self, t: f64) -> f64 {
        match &self.kernels {
            Kernels::Normal(ks) => self.weights.iter().zip(ks).map(|(w, k)| w * k.pdf(t)).sum(),
            Kernels::Gamma(ks) => self.weights.iter().zip(ks).map(|(w, k)| w * k.pdf(t)).sum(),
            Kernels::Precip {
                wet_weights, cube_root, ..
            } => wet_weights.iter().zip(cube_root).map(|(w, k)| w * k.pdf(t)).sum(),
        }
    }

    /// Mean and standard deviation of the mixture on the kernel scale
    /// (continuous part only for precipitation).
    fn moments_t(&self) -> (f64, f64) {
        let parts: Vec<(f64, f64, f64)> = match &self.kernels {
            Kernels::Normal(ks) => self
                .weights
                .iter()
                .zip(ks)
                .map(|(w, k)| (*w, k.mean, k.sd * k.sd))
                .collect(),
            Kernels::Gamma(ks) => self
                .weights
                .iter()
                .zip(ks)
                .map(|(w, k)| (*w, k.mean(), k.variance()))
                .collect(),
            Kernels::Precip {
                wet_weights, cube_root, ..
            } => wet_weights
                .iter()
                .zip(cube_root)
                .map(|(w, k)| (*w, k.mean(), k.variance()))
                .collect(),
        };
        let total: f64 = parts.iter().map(|p| p.0).sum::<f64>().max(f64::MIN_POSITIVE);
        let mean = parts.iter().map(|(w, m, _)| w * m).sum::<f64>() / total;
        let second = parts.iter().map(|(w, m, v)| w * (v + m * m)).sum::<f64>() / total;
        (mean, (second - mean * mean).max(0.0).sqrt())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if self.nonnegative() && y < 0.0 {
            return 0.0;
        }
        self.cdf_t(self.to_t(y))
    }

    /// Left limit `F(y-)`; differs from [`cdf`](Self::cdf) only at the point mass.
    pub fn cdf_left(&self, y: f64) -> f64 {
        if self.nonnegative() && y <= 0.0 {
            return 0.0;
        }
        self.cdf(y)
    }

    /// Mixture density at `y`. For precipitation, `y = 0` reports the point mass
    /// and a zero continuous density.
    pub fn pdf(&self, y: f64) -> Result<Density> {
        if !y.is_finite() || (self.nonnegative() && y < 0.0) {
            return Err(Error::domain("marginal_pdf", format!("{y} outside the support")));
        }
        Ok(match self.kind {
            VariableKind::Precipitation => {
                if y == 0.0 {
                    Density {
                        density: 0.0,
                        point_mass: self.point_mass,
                    }
                } else {
                    let t = y.cbrt();
                    Density {
                        density: self.pdf_t(t) / (3.0 * t * t),
                        point_mass: 0.0,
                    }
                }
            }
            _ => Density {
                density: self.pdf_t(y),
                point_mass: 0.0,
            },
        })
    }

    /// Generalized inverse `sup{y : F(y) <= u}`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(
                "marginal_quantile",
                format!("probability {u} outside (0, 1)"),
            ));
        }
        if u <= self.point_mass {
            return Ok(0.0);
        }
        let (lo, hi) = self.bracket_t(u);
        Ok(self.from_t(self.solve_t(u, lo, hi, None)))
    }

    /// Kernel-scale bracket `[lo, hi]` with `cdf_t(lo) <= u <= cdf_t(hi)`.
    fn bracket_t(&self, u: f64) -> (f64, f64) {
        let (mean, sd) = self.moments_t();
        let width = sd.max(1e-6 * (1.0 + mean.abs()));
        let mut lo = if self.nonnegative() { 0.0 } else { mean - 8.0 * width };
        let mut step = 8.0 * width;
        while self.cdf_t(lo) > u {
            lo -= step;
            step *= 2.0;
        }
        let mut hi = mean + 8.0 * width;
        let mut step = 8.0 * width;
        while self.cdf_t(hi) < u {
            hi += step;
            step *= 2.0;
        }
        (lo, hi)
    }

    /// Safeguarded Newton iteration on the kernel-scale CDF inside a bracket.
    fn solve_t(&self, u: f64, mut lo: f64, mut hi: f64, guess: Option<f64>) -> f64 {
        let mut t = match guess {
            Some(g) if g > lo && g < hi => g,
            _ => 0.5 * (lo + hi),
        };
        for _ in 0..200 {
            let f = self.cdf_t(t) - u;
            if f.abs() <= 1e-13 {
                return t;
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo <= 1e-14 * t.abs().max(1.0) {
                break;
            }
            let d = self.pdf_t(t);
            let newton = t - f / d;
            t = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        t
    }
}

/// Inverse-CDF lookup table on a uniform 2048-point probability grid.
/// Queries start Newton refinement from the bracketing table entries.
#[derive(Debug, Clone)]
pub struct QuantileTable<'a> {
    marginal: &'a PredictiveMarginal,
    /// Kernel-scale quantiles at `u = i / 2048`, `i = 1..2047`; index 0 unused.
    grid: Vec<f64>,
}

impl<'a> QuantileTable<'a> {
    pub fn new(marginal: &'a PredictiveMarginal) -> Self {
        let mut grid = vec![f64::NAN; TABLE_SIZE];
        let last = TABLE_SIZE - 1;
        let (_, hi) = marginal.bracket_t(last as f64 / TABLE_SIZE as f64);
        let mut prev: Option<f64> = None;
        for (i, slot) in grid.iter_mut().enumerate().skip(1) {
            let u = i as f64 / TABLE_SIZE as f64;
            if u <= marginal.point_mass {
                *slot = 0.0;
                continue;
            }
            let t = match prev {
                None => {
                    let (lo, hi) = marginal.bracket_t(u);
                    marginal.solve_t(u, lo, hi, None)
                }
                Some(p) => {
                    let d = marginal.pdf_t(p);
                    let guess = if d > 0.0 { p + (u - marginal.cdf_t(p)) / d } else { p };
                    marginal.solve_t(u, p, hi, Some(guess))
                }
            };
            *slot = t;
            prev = Some(t);
        }
        Self { marginal, grid }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain(
                "marginal_quantile",
                format!("probability {u} outside (0, 1)"),
            ));
        }
        let m = self.marginal;
        if u <= m.point_mass {
            return Ok(0.0);
        }
        let idx = (u * TABLE_SIZE as f64) as usize;
        if idx == 0 || idx + 1 >= TABLE_SIZE {
            return m.quantile(u);
        }
        let (lo, hi) = (self.grid[idx], self.grid[idx + 1]);
        let (u_lo, u_hi) = (idx as f64 / TABLE_SIZE as f64, (idx + 1) as f64 / TABLE_SIZE as f64);
        let lo = if u_lo <= m.point_mass { 0.0 } else { lo };
        let guess = lo + (hi - lo) * (u - u_lo) / (u_hi - u_lo);
        Ok(m.from_t(m.solve_t(u, lo, hi, Some(guess))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::std_normal_pdf;

    fn standard() -> PredictiveMarginal {
        PredictiveMarginal::normal_mixture(vec![5.0], vec![1.0], vec![NormalDist { mean: 5.0, sd: 1.0 }])
    }

    #[test]
    fn standard_normal_peak() {
        let m = standard();
        let d = m.pdf(5.0).unwrap();
        assert!((d.density - std_normal_pdf(0.0)).abs() < 1e-15);
        assert_eq!(d.point_mass, 0.0);
        assert!((m.cdf(5.0) - 0.5).abs() < 1e-15);
        assert!((m.quantile(0.5).unwrap() - 5.0).abs() < 1e-6);
        assert!((m.cdf(1e6) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_members_collapse() {
        let k = NormalDist { mean: 1.0, sd: 2.0 };
        let pair = PredictiveMarginal::normal_mixture(vec![1.0, 1.0], vec![0.5, 0.5], vec![k, k]);
        let single = PredictiveMarginal::normal_mixture(vec![1.0], vec![1.0], vec![k]);
        for y in [-3.0, 0.0, 1.5, 4.0] {
            assert!((pair.pdf(y).unwrap().density - single.pdf(y).unwrap().density).abs() < 1e-15);
        }
    }

    #[test]
    fn precip_point_mass_rule() {
        let g = GammaDist::from_mean_variance(1.2, 0.2).unwrap();
        let m = PredictiveMarginal::precip_mixture(vec![0.0, 3.0], vec![0.5, 0.5], vec![0.8, 0.4], vec![g, g]);
        assert!((m.point_mass() - 0.6).abs() < 1e-15);
        assert_eq!(m.cdf(0.0), m.point_mass());
        assert_eq!(m.cdf_left(0.0), 0.0);
        assert_eq!(m.quantile(0.3).unwrap(), 0.0);
        assert_eq!(m.quantile(0.6).unwrap(), 0.0);
        let q = m.quantile(0.8).unwrap();
        assert!(q > 0.0);
        assert!((m.cdf(q) - 0.8).abs() < 1e-9);
        let d = m.pdf(0.0).unwrap();
        assert_eq!(d.point_mass, m.point_mass());
        assert!(m.pdf(-1.0).is_err());
    }

    #[test]
    fn quantile_domain() {
        let m = standard();
        assert!(m.quantile(0.0).is_err());
        assert!(m.quantile(1.0).is_err());
    }

    #[test]
    fn table_matches_direct_quantile() {
        let g1 = GammaDist::from_mean_variance(1.0, 0.3).unwrap();
        let g2 = GammaDist::from_mean_variance(2.0, 0.5).unwrap();
        let m = PredictiveMarginal::precip_mixture(vec![0.0, 5.0], vec![0.3, 0.7], vec![0.9, 0.2], vec![g1, g2]);
        let table = QuantileTable::new(&m);
        for i in 1..500 {
            let u = i as f64 / 500.0 - 1e-4;
            let a = table.quantile(u).unwrap();
            let b = m.quantile(u).unwrap();
            assert!((a - b).abs() < 1e-8 * (1.0 + b), "u={u} {a} {b}");
        }
    }
}
