use serde::{Deserialize, Serialize};

use super::em::{run_em, EmTrace, KernelFamily};
use super::gamma::{gamma_kernel, GammaDispersion};
use super::predictive::PredictiveMarginal;
use super::{check_members, LinearLink, TrainingSet};
use crate::error::{Error, Result};

/// Ridge penalty keeping logistic coefficients finite on separable windows.
const LOGISTIC_RIDGE: f64 = 1e-4;

/// `P(y = 0 | x) = logit⁻¹(a0 + a1 x^{1/3} + a2 δ)` with `δ = 1` iff `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticLink {
    pub intercept: f64,
    pub cube_root_slope: f64,
    pub zero_indicator: f64,
}

impl LogisticLink {
    pub fn linear_predictor(&self, x: f64) -> f64 {
        let delta = if x == 0.0 { 1.0 } else { 0.0 };
        self.intercept + self.cube_root_slope * x.max(0.0).cbrt() + self.zero_indicator * delta
    }

    pub fn zero_probability(&self, x: f64) -> f64 {
        logistic(self.linear_predictor(x))
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Two-part precipitation kernels: a logistic point mass at zero per member and
/// gamma densities for the cube root of positive amounts, with mean
/// `b0k + b1k x_k^{1/3}` and variance `c0 + c1 x_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecipBmaModel {
    pub weights: Vec<f64>,
    pub zero: Vec<LogisticLink>,
    pub mean: Vec<LinearLink>,
    pub variance: LinearLink,
}

impl PrecipBmaModel {
    pub fn predictive(&self, ensemble: &[f64]) -> Result<PredictiveMarginal> {
        check_members(self.weights.len(), ensemble)?;
        if ensemble.iter().any(|x| *x < 0.0) {
            return Err(Error::domain("predictive", "negative precipitation member"));
        }
        let zero_prob = self
            .zero
            .iter()
            .zip(ensemble)
            .map(|(z, &x)| z.zero_probability(x))
            .collect();
        let kernels = self
            .mean
            .iter()
            .zip(ensemble)
            .map(|(m, &x)| gamma_kernel(m.eval(x.cbrt()), self.variance.eval(x)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictiveMarginal::precip_mixture(
            ensemble.to_vec(),
            self.weights.clone(),
            zero_prob,
            kernels,
        ))
    }
}

/// Penalized maximum-likelihood logistic regression by Newton's method.
/// Rows of `design` include the intercept column; returns coefficients.
pub fn fit_logistic(design: &[[f64; 3]], response: &[bool]) -> [f64; 3] {
    let mut beta = [0.0; 3];
    let objective = |b: &[f64; 3]| -> f64 {
        let mut ll = 0.0;
        for (row, &r) in design.iter().zip(response) {
            let eta = row[0] * b[0] + row[1] * b[1] + row[2] * b[2];
            // log(1 + e^eta) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += if r { eta - softplus } else { -softplus };
        }
        ll - 0.5 * LOGISTIC_RIDGE * b.iter().map(|v| v * v).sum::<f64>()
    };
    let mut current = objective(&beta);
    for _ in 0..100 {
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (row, &r) in design.iter().zip(response) {
            let p = logistic(row[0] * beta[0] + row[1] * beta[1] + row[2] * beta[2]);
            let resid = if r { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            for a in 0..3 {
                grad[a] += resid * row[a];
                for b in 0..3 {
                    hess[a][b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..3 {
            grad[a] -= LOGISTIC_RIDGE * beta[a];
            hess[a][a] += LOGISTIC_RIDGE;
        }
        let Some(step) = solve3(hess, grad) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial = [beta[0] + t * step[0], beta[1] + t * step[1], beta[2] + t * step[2]];
            let value = objective(&trial);
            if value >= current {
                beta = trial;
                improved = value - current > 1e-13 * current.abs().max(1.0);
                current = value;
                break;
            }
            t *= 0.5;
        }
        let size = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
        if !improved || size < 1e-10 {
            break;
        }
    }
    beta
}

/// Solve a symmetric positive-definite 3×3 system by Cholesky.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        l[j][j] = d.sqrt();
        for i in j + 1..3 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / l[j][j];
        }
    }
    let mut z = [0.0; 3];
    for i in 0..3 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = z[i];
        for k in i + 1..3 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

struct PrecipFamily {
    /// Per-member zero probabilities, n × K.
    zero_prob: Vec<f64>,
    wet: Vec<bool>,
    gamma: GammaDispersion,
    /// Index into `gamma` rows for wet days.
    local: Vec<usize>,
    k: usize,
}

impl KernelFamily for PrecipFamily {
    type Dispersion = LinearLink;

    fn pairs(&self) -> usize {
        self.wet.len()
    }

    fn members(&self) -> usize {
        self.k
    }

    fn log_kernels(&self, c: &LinearLink, out: &mut [f64]) {
        for (i, row) in out.chunks_exact_mut(self.k).enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                let p0 = self.zero_prob[i * self.k + j];
                *o = if self.wet[i] {
                    (1.0 - p0).ln() + self.gamma.ln_pdf(self.local[i], j, c)
                } else {
                    p0.ln()
                };
            }
        }
    }

    fn update_dispersion(&self, current: &LinearLink, resp: &[f64]) -> LinearLink {
        self.gamma.update(current, resp)
    }
}

pub fn fit_precip_bma(training: &TrainingSet) -> Result<PrecipBmaModel> {
    fit_precip_bma_traced(training).map(|(m, _)| m)
}

/// Logistic zero-probability links per member on all pairs; cube-root mean
/// links by least squares on wet days; EM over weights (all days) and the
/// variance link (wet days).
pub fn fit_precip_bma_traced(training: &TrainingSet) -> Result<(PrecipBmaModel, EmTrace)> {
    let y = &training.observations;
    if let Some(v) = y.iter().find(|v| **v < 0.0) {
        return Err(Error::domain(
            "fit_precip_bma",
            format!("observations must be nonnegative, found {v}"),
        ));
    }
    if training.ensembles.iter().flatten().any(|x| *x < 0.0) {
        return Err(Error::domain("fit_precip_bma", "negative ensemble member"));
    }
    training.require_pairs("fit_precip_bma")?;
    if !y.iter().any(|v| *v == 0.0) {
        return Err(Error::Fit(
            "no zero-precipitation observations in the training window".into(),
        ));
    }
    if !y.iter().any(|v| *v > 0.0) {
        return Err(Error::Fit(
            "no positive precipitation observations in the training window".into(),
        ));
    }
    let k = training.members();
    let n = y.len();
    let dry: Vec<bool> = y.iter().map(|v| *v == 0.0).collect();

    let zero: Vec<LogisticLink> = (0..k)
        .map(|j| {
            let design: Vec<[f64; 3]> = training
                .ensembles
                .iter()
                .map(|e| {
                    let x = e[j];
                    [1.0, x.cbrt(), if x == 0.0 { 1.0 } else { 0.0 }]
                })
                .collect();
            let b = fit_logistic(&design, &dry);
            LogisticLink {
                intercept: b[0],
                cube_root_slope: b[1],
                zero_indicator: b[2],
            }
        })
        .collect();

    let wet_rows: Vec<usize> = (0..n).filter(|&i| !dry[i]).collect();
    let wet_y: Vec<f64> = wet_rows.iter().map(|&i| y[i].cbrt()).collect();
    let mean: Vec<LinearLink> = (0..k)
        .map(|j| {
            let x: Vec<f64> = wet_rows.iter().map(|&i| training.ensembles[i][j].cbrt()).collect();
            LinearLink::least_squares(&x, &wet_y)
        })
        .collect();
    let means = wet_rows
        .iter()
        .flat_map(|&i| training.ensembles[i].iter().zip(&mean).map(|(&x, m)| m.eval(x.cbrt())))
        .collect();
    let predictors = wet_rows
        .iter()
        .flat_map(|&i| training.ensembles[i].iter().copied())
        .collect();
    let gamma = GammaDispersion::new(wet_rows.clone(), wet_y, means, predictors, k);
    let initial = gamma.initial();

    let mut local = vec![usize::MAX; n];
    for (l, &i) in wet_rows.iter().enumerate() {
        local[i] = l;
    }
    let zero_prob = training
        .ensembles
        .iter()
        .flat_map(|e| e.iter().zip(&zero).map(|(&x, z)| z.zero_probability(x)))
        .collect();
    let family = PrecipFamily {
        zero_prob,
        wet: dry.iter().map(|d| !d).collect(),
        gamma,
        local,
        k,
    };
    let result = run_em(&family, initial);
    Ok((
        PrecipBmaModel {
            weights: result.weights,
            zero,
            mean,
            variance: result.dispersion,
        },
        result.trace,
    ))
}
