use serde::{Deserialize, Serialize};

use super::em::{run_em, EmTrace, KernelFamily};
use super::predictive::PredictiveMarginal;
use super::{check_members, LinearLink, TrainingSet, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::NormalDist;

/// Gaussian kernels `N(b0k + b1k x_k, σ²)` with a common variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBmaModel {
    pub weights: Vec<f64>,
    pub bias: Vec<LinearLink>,
    pub variance: f64,
}

impl GaussianBmaModel {
    pub fn predictive(&self, ensemble: &[f64]) -> Result<PredictiveMarginal> {
        check_members(self.weights.len(), ensemble)?;
        let sd = self.variance.sqrt();
        let kernels = self
            .bias
            .iter()
            .zip(ensemble)
            .map(|(b, &x)| NormalDist { mean: b.eval(x), sd })
            .collect();
        Ok(PredictiveMarginal::normal_mixture(
            ensemble.to_vec(),
            self.weights.clone(),
            kernels,
        ))
    }
}

struct GaussianFamily<'a> {
    y: &'a [f64],
    /// Bias-corrected member means, row-major n × K.
    means: Vec<f64>,
    k: usize,
}

impl KernelFamily for GaussianFamily<'_> {
    type Dispersion = f64;

    fn pairs(&self) -> usize {
        self.y.len()
    }

    fn members(&self) -> usize {
        self.k
    }

    fn log_kernels(&self, variance: &f64, out: &mut [f64]) {
        let c = -0.5 * (2.0 * std::f64::consts::PI * variance).ln();
        for (i, (row, out)) in self
            .means
            .chunks_exact(self.k)
            .zip(out.chunks_exact_mut(self.k))
            .enumerate()
        {
            for (o, m) in out.iter_mut().zip(row) {
                let r = self.y[i] - m;
                *o = c - r * r / (2.0 * variance);
            }
        }
    }

    fn update_dispersion(&self, _current: &f64, resp: &[f64]) -> f64 {
        let mut ss = 0.0;
        for (i, (row, z)) in self
            .means
            .chunks_exact(self.k)
            .zip(resp.chunks_exact(self.k))
            .enumerate()
        {
            for (m, zi) in row.iter().zip(z) {
                let r = self.y[i] - m;
                ss += zi * r * r;
            }
        }
        (ss / self.y.len() as f64).max(VARIANCE_FLOOR)
    }
}

pub fn fit_gaussian_bma(training: &TrainingSet) -> Result<GaussianBmaModel> {
    fit_gaussian_bma_traced(training).map(|(m, _)| m)
}

/// Member bias regressions by least squares, then EM over weights and the
/// common variance.
pub fn fit_gaussian_bma_traced(training: &TrainingSet) -> Result<(GaussianBmaModel, EmTrace)> {
    training.require_pairs("fit_gaussian_bma")?;
    let y = &training.observations;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if spread <= 1e-12 * (1.0 + mean * mean) {
        return Err(Error::Fit(
            "observations are constant over the training window; use a wider window".into(),
        ));
    }
    let k = training.members();
    let bias: Vec<LinearLink> = (0..k)
        .map(|j| LinearLink::least_squares(&training.member_column(j), y))
        .collect();
    let means: Vec<f64> = training
        .ensembles
        .iter()
        .flat_map(|e| e.iter().zip(&bias).map(|(&x, b)| b.eval(x)))
        .collect();
    let initial = {
        let ss: f64 = means
            .chunks_exact(k)
            .zip(y)
            .flat_map(|(row, yi)| row.iter().map(move |m| (yi - m).powi(2)))
            .sum();
        (ss / (n * k as f64)).max(VARIANCE_FLOOR)
    };
    let family = GaussianFamily { y, means, k };
    let result = run_em(&family, initial);
    Ok((
        GaussianBmaModel {
            weights: result.weights,
            bias,
            variance: result.dispersion,
        },
        result.trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn linear_data(n: usize, seed: u64) -> TrainingSet {
        let mut rng = RngStream::new(seed, 0);
        let mut ens = Vec::new();
        let mut obs = Vec::new();
        for _ in 0..n {
            let x = 10.0 * rng.uniform();
            ens.push(vec![x]);
            obs.push(2.0 + 0.5 * x + rng.standard_normal());
        }
        TrainingSet::new(ens, obs).unwrap()
    }

    #[test]
    fn single_member_recovers_regression() {
        let t = linear_data(500, 3);
        let m = fit_gaussian_bma(&t).unwrap();
        assert_eq!(m.weights, vec![1.0]);
        assert!((m.bias[0].intercept - 2.0).abs() < 0.1 * 2.0 + 0.1);
        assert!((m.bias[0].slope - 0.5).abs() < 0.1);
        assert!((m.variance - 1.0).abs() < 0.15);
    }

    #[test]
    fn constant_observations_rejected() {
        let ens: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let err = fit_gaussian_bma(&TrainingSet::new(ens, vec![3.0; 10]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("wider window"));
    }

    #[test]
    fn too_few_pairs_rejected() {
        let ens: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let obs = (0..5).map(|i| i as f64).collect();
        assert!(fit_gaussian_bma(&TrainingSet::new(ens, obs).unwrap()).is_err());
    }

    #[test]
    fn exact_member_hits_variance_floor() {
        let mut rng = RngStream::new(11, 0);
        let ens: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![5.0 * rng.standard_normal(), rng.standard_normal()])
            .collect();
        let obs = ens.iter().map(|e| e[0]).collect();
        let m = fit_gaussian_bma(&TrainingSet::new(ens, obs).unwrap()).unwrap();
        assert_eq!(m.variance, VARIANCE_FLOOR);
        assert!(m.weights[0] > 0.99);
    }
}
