//! Ensemble Bayesian model averaging marginals.
//!
//! Each ensemble member `x_k` is dressed with a kernel `g_k(y | x_k)` and the
//! predictive density is the weighted mixture `Σ ω_k g_k(y | x_k)`. Three
//! kernel families are supported: Gaussian (temperature, pressure), gamma
//! (wind speed) and a point mass at zero plus a gamma density on the cube-root
//! scale (precipitation).

mod em;
mod gamma;
mod gaussian;
mod precip;
mod predictive;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use em::EmTrace;
pub use gamma::{fit_gamma_bma, fit_gamma_bma_traced, GammaBmaModel};
pub use gaussian::{fit_gaussian_bma, fit_gaussian_bma_traced, GaussianBmaModel};
pub use precip::{fit_logistic, fit_precip_bma, fit_precip_bma_traced, LogisticLink, PrecipBmaModel};
pub use predictive::{Density, PredictiveMarginal, QuantileTable};

/// Floor applied to evaluated gamma mean and variance links.
pub const LINK_FLOOR: f64 = 1e-4;
/// Floor on the common Gaussian kernel variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Kernel family of a weather variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Gaussian,
    Gamma,
    Precipitation,
}

/// Weather variables, declared in the canonical column order
/// maxwsp, precip, mintemp, maxtemp, pressure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Maxwsp,
    Precip,
    Mintemp,
    Maxtemp,
    Pressure,
}

impl Variable {
    pub const ALL: [Variable; 5] = [
        Variable::Maxwsp,
        Variable::Precip,
        Variable::Mintemp,
        Variable::Maxtemp,
        Variable::Pressure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Maxwsp => "maxwsp",
            Variable::Precip => "precip",
            Variable::Mintemp => "mintemp",
            Variable::Maxtemp => "maxtemp",
            Variable::Pressure => "pressure",
        }
    }

    pub fn kind(self) -> VariableKind {
        match self {
            Variable::Maxwsp => VariableKind::Gamma,
            Variable::Precip => VariableKind::Precipitation,
            Variable::Mintemp | Variable::Maxtemp | Variable::Pressure => VariableKind::Gaussian,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Maxwsp => "m/s",
            Variable::Precip => "mm",
            Variable::Mintemp | Variable::Maxtemp => "degC",
            Variable::Pressure => "mb",
        }
    }

    /// Whether values must be nonnegative.
    pub fn nonnegative(self) -> bool {
        self.kind() != VariableKind::Gaussian
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown variable '{s}'")))
    }
}

/// `intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearLink {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearLink {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Ordinary least squares of `y` on `x`. A predictor without spread gets a
    /// zero slope and the mean of `y` as intercept.
    pub fn least_squares(x: &[f64], y: &[f64]) -> LinearLink {
        let n = x.len().min(y.len());
        if n == 0 {
            return LinearLink {
                intercept: 0.0,
                slope: 0.0,
            };
        }
        let nf = n as f64;
        let mx = x[..n].iter().sum::<f64>() / nf;
        let my = y[..n].iter().sum::<f64>() / nf;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (xi, yi) in x.iter().zip(y) {
            sxx += (xi - mx) * (xi - mx);
            sxy += (xi - mx) * (yi - my);
        }
        if sxx <= 1e-12 * nf * (1.0 + mx * mx) {
            return LinearLink {
                intercept: my,
                slope: 0.0,
            };
        }
        let slope = sxy / sxx;
        LinearLink {
            intercept: my - slope * mx,
            slope,
        }
    }
}

/// Training pairs for one variable at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    /// One row per day, `K` member forecasts each.
    pub ensembles: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowMeta>,
}

/// Calendar extent of a rolling training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: usize,
}

impl TrainingSet {
    pub fn new(ensembles: Vec<Vec<f64>>, observations: Vec<f64>) -> Result<Self> {
        if ensembles.is_empty() {
            return Err(Error::Fit("empty training set".into()));
        }
        if ensembles.len() != observations.len() {
            return Err(Error::Dimension {
                expected: ensembles.len(),
                found: observations.len(),
            });
        }
        let k = ensembles[0].len();
        if k == 0 {
            return Err(Error::Fit("ensemble has no members".into()));
        }
        if let Some(bad) = ensembles.iter().find(|e| e.len() != k) {
            return Err(Error::Dimension {
                expected: k,
                found: bad.len(),
            });
        }
        let finite = ensembles.iter().flatten().chain(&observations).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Fit("training data contains non-finite values".into()));
        }
        Ok(Self {
            ensembles,
            observations,
            window: None,
        })
    }

    pub fn with_window(mut self, window: WindowMeta) -> Self {
        self.window = Some(window);
        self
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn members(&self) -> usize {
        self.ensembles.first().map_or(0, Vec::len)
    }

    /// Forecasts of member `k` across all days.
    pub fn member_column(&self, k: usize) -> Vec<f64> {
        self.ensembles.iter().map(|e| e[k]).collect()
    }

    pub(crate) fn require_pairs(&self, op: &str) -> Result<()> {
        let needed = 2 * self.members() + 2;
        if self.len() < needed {
            return Err(Error::Fit(format!(
                "{op}: {} training pairs for {} members, need at least {needed}",
                self.len(),
                self.members()
            )));
        }
        Ok(())
    }
}

/// Fitted BMA parameters for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalModel {
    Gaussian(GaussianBmaModel),
    Gamma(GammaBmaModel),
    Precipitation(PrecipBmaModel),
}

impl MarginalModel {
    pub fn fit(kind: VariableKind, training: &TrainingSet) -> Result<Self> {
        Ok(match kind {
            VariableKind::Gaussian => MarginalModel::Gaussian(fit_gaussian_bma(training)?),
            VariableKind::Gamma => MarginalModel::Gamma(fit_gamma_bma(training)?),
            VariableKind::Precipitation => MarginalModel::Precipitation(fit_precip_bma(training)?),
        })
    }

    pub fn kind(&self) -> VariableKind {
        match self {
            MarginalModel::Gaussian(_) => VariableKind::Gaussian,
            MarginalModel::Gamma(_) => VariableKind::Gamma,
            MarginalModel::Precipitation(_) => VariableKind::Precipitation,
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            MarginalModel::Gaussian(m) => &m.weights,
            MarginalModel::Gamma(m) => &m.weights,
            MarginalModel::Precipitation(m) => &m.weights,
        }
    }

    /// Predictive distribution for one day's ensemble.
    pub fn predictive(&self, ensemble: &[f64]) -> Result<PredictiveMarginal> {
        match self {
            MarginalModel::Gaussian(m) => m.predictive(ensemble),
            MarginalModel::Gamma(m) => m.predictive(ensemble),
            MarginalModel::Precipitation(m) => m.predictive(ensemble),
        }
    }
}

/// A fitted model together with the variable and training window it came from;
/// this is the persisted JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMarginal {
    pub variable: Variable,
    pub model: MarginalModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowMeta>,
}

pub(crate) fn check_members(expected: usize, ensemble: &[f64]) -> Result<()> {
    if ensemble.len() != expected {
        return Err(Error::Dimension {
            expected,
            found: ensemble.len(),
        });
    }
    if ensemble.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("predictive", "non-finite ensemble member"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_names_round_trip() {
        for v in Variable::ALL {
            assert_eq!(v.name().parse::<Variable>().unwrap(), v);
        }
        assert!("humidity".parse::<Variable>().is_err());
        assert_eq!(serde_json::to_string(&Variable::Maxwsp).unwrap(), "\"maxwsp\"");
    }

    #[test]
    fn least_squares_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let l = LinearLink::least_squares(&x, &y);
        assert!((l.intercept - 2.0).abs() < 1e-12);
        assert!((l.slope - 0.5).abs() < 1e-12);
        let flat = LinearLink::least_squares(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(flat.slope, 0.0);
        assert!((flat.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![], vec![]).is_err());
        assert!(TrainingSet::new(vec![vec![1.0, 2.0], vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(TrainingSet::new(vec![vec![1.0]], vec![f64::NAN]).is_err());
        let t = TrainingSet::new(vec![vec![1.0, 2.0]; 3], vec![0.0; 3]).unwrap();
        assert_eq!(t.members(), 2);
        assert!(t.require_pairs("x").is_err());
    }
}
