use serde::{Deserialize, Serialize};

use super::em::{run_em, EmTrace, KernelFamily};
use super::predictive::PredictiveMarginal;
use super::{check_members, LinearLink, TrainingSet, LINK_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{brent_minimize, ln_gamma, GammaDist};

/// Gamma kernels with mean `b0k + b1k x_k` and variance `c0 + c1 x_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBmaModel {
    pub weights: Vec<f64>,
    pub mean: Vec<LinearLink>,
    pub variance: LinearLink,
}

impl GammaBmaModel {
    pub fn predictive(&self, ensemble: &[f64]) -> Result<PredictiveMarginal> {
        check_members(self.weights.len(), ensemble)?;
        let kernels = self
            .mean
            .iter()
            .zip(ensemble)
            .map(|(m, &x)| gamma_kernel(m.eval(x), self.variance.eval(x)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictiveMarginal::gamma_mixture(
            ensemble.to_vec(),
            self.weights.clone(),
            kernels,
        ))
    }
}

/// Gamma kernel from (possibly negative) link values, clamped at [`LINK_FLOOR`].
pub(crate) fn gamma_kernel(mean: f64, variance: f64) -> Result<GammaDist> {
    GammaDist::from_mean_variance(mean.max(LINK_FLOOR), variance.max(LINK_FLOOR))
}

#[inline]
fn gamma_ln_pdf(y: f64, ln_y: f64, mean: f64, variance: f64) -> f64 {
    let shape = mean * mean / variance;
    let scale = variance / mean;
    (shape - 1.0) * ln_y - y / scale - shape * scale.ln() - ln_gamma(shape)
}

/// Gamma log-likelihood pieces for the variance-link M-step: responses
/// (already on the kernel's scale), fixed means and variance predictors for a
/// subset of training rows.
pub(crate) struct GammaDispersion {
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub ln_y: Vec<f64>,
    pub means: Vec<f64>,
    pub predictors: Vec<f64>,
    pub k: usize,
    upper: LinearLink,
}

impl GammaDispersion {
    pub fn new(rows: Vec<usize>, y: Vec<f64>, means: Vec<f64>, predictors: Vec<f64>, k: usize) -> Self {
        let y: Vec<f64> = y.into_iter().map(|v| v.max(LINK_FLOOR)).collect();
        let ln_y = y.iter().map(|v| v.ln()).collect();
        let means: Vec<f64> = means.into_iter().map(|m| m.max(LINK_FLOOR)).collect();
        let scale = Self::residual_scale(&y, &means, k);
        let mean_x = predictors.iter().map(|x| x.abs()).sum::<f64>() / predictors.len().max(1) as f64;
        let upper = LinearLink {
            intercept: 20.0 * scale + 1e-3,
            slope: (20.0 * scale + 1e-3) / mean_x.max(1e-3),
        };
        Self {
            rows,
            y,
            ln_y,
            means,
            predictors,
            k,
            upper,
        }
    }

    fn residual_scale(y: &[f64], means: &[f64], k: usize) -> f64 {
        if y.is_empty() {
            return LINK_FLOOR;
        }
        let ss: f64 = means
            .chunks_exact(k)
            .zip(y)
            .flat_map(|(row, yi)| row.iter().map(move |m| (yi - m).powi(2)))
            .sum();
        (ss / (y.len() * k) as f64).max(LINK_FLOOR)
    }

    /// Starting point: constant variance equal to the mean squared residual.
    pub fn initial(&self) -> LinearLink {
        LinearLink {
            intercept: Self::residual_scale(&self.y, &self.means, self.k),
            slope: 0.0,
        }
    }

    pub fn ln_pdf(&self, local: usize, k: usize, c: &LinearLink) -> f64 {
        let idx = local * self.k + k;
        let v = c.eval(self.predictors[idx]).max(LINK_FLOOR);
        gamma_ln_pdf(self.y[local], self.ln_y[local], self.means[idx], v)
    }

    fn expected_ll(&self, c: &LinearLink, resp: &[f64]) -> f64 {
        let mut q = 0.0;
        for (local, &row) in self.rows.iter().enumerate() {
            for k in 0..self.k {
                let z = resp[row * self.k + k];
                if z > 1e-300 {
                    q += z * self.ln_pdf(local, k, c);
                }
            }
        }
        q
    }

    /// One coordinate sweep over (c0, c1). Each coordinate first tries a
    /// parabolic step from three nearby evaluations and falls back to a
    /// bounded Brent search; it only moves if the expected log-likelihood
    /// improves.
    pub fn update(&self, current: &LinearLink, resp: &[f64]) -> LinearLink {
        if self.rows.is_empty() {
            return *current;
        }
        let mut c = *current;
        let mut best = self.expected_ll(&c, resp);
        for coord in 0..2 {
            let set = |c: &LinearLink, x: f64| {
                if coord == 0 {
                    LinearLink { intercept: x, ..*c }
                } else {
                    LinearLink { slope: x, ..*c }
                }
            };
            let x = if coord == 0 { c.intercept } else { c.slope };
            let upper = if coord == 0 {
                self.upper.intercept
            } else {
                self.upper.slope
            };
            let q = |v: f64| self.expected_ll(&set(&c, v), resp);
            match parabolic_step(&q, x, best, upper) {
                Step::Improved(x, value) => {
                    c = set(&c, x);
                    best = value;
                }
                Step::AtBound => {}
                Step::Failed => {
                    let (x, _) = brent_minimize(|v| -q(v), 0.0, upper, 1e-6, 60);
                    let value = q(x);
                    if value > best {
                        c = set(&c, x);
                        best = value;
                    }
                }
            }
        }
        c
    }
}

enum Step {
    Improved(f64, f64),
    /// Sitting on a bound with the slope pointing outward.
    AtBound,
    Failed,
}

/// Maximize `q` on `[0, upper]` near `x` (where `q(x) = qx`) with a parabola
/// through three points, backtracking up to three times.
fn parabolic_step(q: &impl Fn(f64) -> f64, x: f64, qx: f64, upper: f64) -> Step {
    let h = 1e-3 * x.abs().max(1e-2 * upper);
    let (a, b) = if x - h < 0.0 {
        (x + h, x + 2.0 * h)
    } else if x + h > upper {
        (x - 2.0 * h, x - h)
    } else {
        (x - h, x + h)
    };
    let mut pts = [(x, qx), (a, q(a)), (b, q(b))];
    pts.sort_by(|l, r| l.0.total_cmp(&r.0));
    let [(x0, f0), (x1, f1), (x2, f2)] = pts;
    // Newton step on the interpolating parabola
    let d01 = (f1 - f0) / (x1 - x0);
    let d12 = (f2 - f1) / (x2 - x1);
    let curvature = (d12 - d01) / (x2 - x0);
    let slope = d01 + curvature * (2.0 * x - x0 - x1);
    if !(curvature < 0.0) || !slope.is_finite() {
        return Step::Failed;
    }
    let mut step = -slope / (2.0 * curvature);
    for _ in 0..4 {
        let target = (x + step).clamp(0.0, upper);
        if target == x {
            return if (x == 0.0 && slope <= 0.0) || (x == upper && slope >= 0.0) {
                Step::AtBound
            } else {
                Step::Failed
            };
        }
        let value = q(target);
        if value > qx {
            return Step::Improved(target, value);
        }
        step *= 0.5;
    }
    Step::Failed
}

struct WindFamily {
    dispersion: GammaDispersion,
}

impl KernelFamily for WindFamily {
    type Dispersion = LinearLink;

    fn pairs(&self) -> usize {
        self.dispersion.y.len()
    }

    fn members(&self) -> usize {
        self.dispersion.k
    }

    fn log_kernels(&self, c: &LinearLink, out: &mut [f64]) {
        let k = self.dispersion.k;
        for (i, row) in out.chunks_exact_mut(k).enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                *o = self.dispersion.ln_pdf(i, j, c);
            }
        }
    }

    fn update_dispersion(&self, current: &LinearLink, resp: &[f64]) -> LinearLink {
        self.dispersion.update(current, resp)
    }
}

pub fn fit_gamma_bma(training: &TrainingSet) -> Result<GammaBmaModel> {
    fit_gamma_bma_traced(training).map(|(m, _)| m)
}

/// Mean links by least squares on the raw scale, then EM over the weights and
/// the shared variance link.
pub fn fit_gamma_bma_traced(training: &TrainingSet) -> Result<(GammaBmaModel, EmTrace)> {
    let y = &training.observations;
    if let Some(v) = y.iter().find(|v| **v < 0.0) {
        return Err(Error::domain(
            "fit_gamma_bma",
            format!("observations must be nonnegative, found {v}"),
        ));
    }
    training.require_pairs("fit_gamma_bma")?;
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::Fit("all observations are zero".into()));
    }
    let k = training.members();
    let mean: Vec<LinearLink> = (0..k)
        .map(|j| LinearLink::least_squares(&training.member_column(j), y))
        .collect();
    let means = training
        .ensembles
        .iter()
        .flat_map(|e| e.iter().zip(&mean).map(|(&x, m)| m.eval(x)))
        .collect();
    let predictors = training.ensembles.iter().flatten().copied().collect();
    let dispersion = GammaDispersion::new((0..y.len()).collect(), y.clone(), means, predictors, k);
    let initial = dispersion.initial();
    let family = WindFamily { dispersion };
    let result = run_em(&family, initial);
    Ok((
        GammaBmaModel {
            weights: result.weights,
            mean,
            variance: result.dispersion,
        },
        result.trace,
    ))
}
