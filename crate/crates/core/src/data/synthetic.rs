//! Synthetic station-day data with a known Gaussian copula.
//!
//! Each day and variable has a latent signal `w ~ N(0, 1)`. Given the signal,
//! the observation has a known conditional marginal and the vector of
//! observations is joined by the Gaussian copula with the true correlation
//! matrix. Member `k` sees `w + b_k + s_k ε` through the variable's forecast
//! transform, so members are biased and underdispersed.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{Dataset, StationDayRecord};
use crate::bma::{Variable, VariableKind};
use crate::copula::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::numerics::{label_hash, phi, phi_inv, stream_id, GammaDist, RngStream};

const SYNTHETIC_STREAM: u64 = 0x5359_4e54;

const DEFAULT_CORRELATION: [[f64; 5]; 5] = [
    [1.0, -0.016, 0.032, 0.139, -0.123],
    [-0.016, 1.0, -0.001, -0.174, -0.015],
    [0.032, -0.001, 1.0, 0.239, -0.110],
    [0.139, -0.174, 0.239, 1.0, -0.203],
    [-0.123, -0.015, -0.110, -0.203, 1.0],
];

/// Reference correlation matrix restricted to `variables`.
pub fn default_correlation(variables: &[Variable]) -> Vec<Vec<f64>> {
    let idx = |v: &Variable| Variable::ALL.iter().position(|x| x == v).unwrap();
    variables
        .iter()
        .map(|a| variables.iter().map(|b| DEFAULT_CORRELATION[idx(a)][idx(b)]).collect())
        .collect()
}

/// Conditional law of an observation given its latent signal `w`, and the
/// transform turning a perturbed signal into a member forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum MarginalGenerator {
    /// `N(center + seasonal + signal_sd w, obs_sd²)`; the seasonal term is
    /// `-seasonal_amplitude cos(2π day/365.25)`.
    Gaussian {
        center: f64,
        seasonal_amplitude: f64,
        signal_sd: f64,
        obs_sd: f64,
    },
    /// Gamma with mean `scale exp(growth w)` and variance
    /// `var_intercept + var_slope mean`.
    Gamma {
        scale: f64,
        growth: f64,
        var_intercept: f64,
        var_slope: f64,
    },
    /// Zero with probability `logistic(dry_intercept - dry_slope w)`, otherwise
    /// the cube root is gamma with mean `scale exp(growth w)` and variance
    /// `var_intercept + var_slope mean`. Members are dry below `member_dry_below`.
    Precipitation {
        dry_intercept: f64,
        dry_slope: f64,
        scale: f64,
        growth: f64,
        var_intercept: f64,
        var_slope: f64,
        member_dry_below: f64,
    },
}

impl MarginalGenerator {
    pub fn default_for(v: Variable) -> Self {
        match v {
            Variable::Maxwsp => MarginalGenerator::Gamma {
                scale: 6.0,
                growth: 0.35,
                var_intercept: 1.0,
                var_slope: 0.4,
            },
            Variable::Precip => MarginalGenerator::Precipitation {
                dry_intercept: -0.2,
                dry_slope: 1.5,
                scale: 1.2,
                growth: 0.3,
                var_intercept: 0.1,
                var_slope: 0.05,
                member_dry_below: -0.15,
            },
            Variable::Mintemp => MarginalGenerator::Gaussian {
                center: 6.0,
                seasonal_amplitude: 5.0,
                signal_sd: 3.0,
                obs_sd: 1.8,
            },
            Variable::Maxtemp => MarginalGenerator::Gaussian {
                center: 15.0,
                seasonal_amplitude: 8.0,
                signal_sd: 4.0,
                obs_sd: 2.2,
            },
            Variable::Pressure => MarginalGenerator::Gaussian {
                center: 1015.0,
                seasonal_amplitude: 0.0,
                signal_sd: 8.0,
                obs_sd: 3.0,
            },
        }
    }

    fn kind(&self) -> VariableKind {
        match self {
            MarginalGenerator::Gaussian { .. } => VariableKind::Gaussian,
            MarginalGenerator::Gamma { .. } => VariableKind::Gamma,
            MarginalGenerator::Precipitation { .. } => VariableKind::Precipitation,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Synthetic(format!("{name} must be positive, found {x}")))
            }
        };
        match *self {
            MarginalGenerator::Gaussian { signal_sd, obs_sd, .. } => {
                positive("signal_sd", signal_sd)?;
                positive("obs_sd", obs_sd)
            }
            MarginalGenerator::Gamma {
                scale, var_intercept, ..
            }
            | MarginalGenerator::Precipitation {
                scale, var_intercept, ..
            } => {
                positive("scale", scale)?;
                positive("var_intercept", var_intercept)
            }
        }
    }

    fn seasonal(&self, date: NaiveDate) -> f64 {
        match *self {
            MarginalGenerator::Gaussian { seasonal_amplitude, .. } => {
                -seasonal_amplitude * (2.0 * PI * date.ordinal0() as f64 / 365.25).cos()
            }
            _ => 0.0,
        }
    }

    /// Observation at probability level `u` given signal `w`.
    fn observation(&self, u: f64, w: f64, date: NaiveDate, offset: f64) -> Result<f64> {
        let gamma = |scale: f64, growth: f64, c0: f64, c1: f64, u: f64| {
            let mean = scale * (growth * w).exp();
            GammaDist::from_mean_variance(mean, c0 + c1 * mean)?.quantile(u)
        };
        Ok(match *self {
            MarginalGenerator::Gaussian {
                center,
                signal_sd,
                obs_sd,
                ..
            } => center + offset + self.seasonal(date) + signal_sd * w + obs_sd * phi_inv(u),
            MarginalGenerator::Gamma {
                scale,
                growth,
                var_intercept,
                var_slope,
            } => gamma(scale, growth, var_intercept, var_slope, u)?,
            MarginalGenerator::Precipitation {
                dry_intercept,
                dry_slope,
                scale,
                growth,
                var_intercept,
                var_slope,
                ..
            } => {
                let p0 = 1.0 / (1.0 + (dry_slope * w - dry_intercept).exp());
                if u <= p0 {
                    0.0
                } else {
                    let v = ((u - p0) / (1.0 - p0)).min(1.0 - 1e-15);
                    gamma(scale, growth, var_intercept, var_slope, v)?.powi(3)
                }
            }
        })
    }

    /// Member forecast from a perturbed signal `v`.
    fn member(&self, v: f64, date: NaiveDate, offset: f64) -> f64 {
        match *self {
            MarginalGenerator::Gaussian { center, signal_sd, .. } => {
                center + offset + self.seasonal(date) + signal_sd * v
            }
            MarginalGenerator::Gamma { scale, growth, .. } => scale * (growth * v).exp(),
            MarginalGenerator::Precipitation {
                scale,
                growth,
                member_dry_below,
                ..
            } => {
                if v < member_dry_below {
                    0.0
                } else {
                    (scale * (growth * v).exp()).powi(3)
                }
            }
        }
    }
}

fn default_stations() -> usize {
    3
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2007, 1, 1).unwrap()
}
fn default_days() -> usize {
    365
}
fn default_members() -> usize {
    8
}
fn default_window() -> usize {
    40
}
fn default_variables() -> Vec<Variable> {
    Variable::ALL.to_vec()
}

/// Parameters of a synthetic dataset. Stations are named `S01`, `S02`, ...;
/// the calibration period starts at `start_date` and the test period follows
/// it directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_stations")]
    pub stations: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_days")]
    pub calibration_days: usize,
    #[serde(default = "default_days")]
    pub test_days: usize,
    #[serde(default = "default_members")]
    pub members: usize,
    /// Training window the data must accommodate.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_variables")]
    pub variables: Vec<Variable>,
    /// True latent correlation; defaults to the reference matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Per-member signal bias, in signal standard deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_bias: Option<Vec<f64>>,
    /// Per-member noise scale, in signal standard deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_noise: Option<Vec<f64>>,
    /// Probability that a station-day is absent altogether.
    #[serde(default)]
    pub gap_rate: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub generators: BTreeMap<Variable, MarginalGenerator>,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stations: default_stations(),
            start_date: default_start(),
            calibration_days: default_days(),
            test_days: default_days(),
            members: default_members(),
            window: default_window(),
            variables: default_variables(),
            correlation: None,
            member_bias: None,
            member_noise: None,
            gap_rate: 0.0,
            generators: BTreeMap::new(),
        }
    }

    pub fn station_names(&self) -> Vec<String> {
        (1..=self.stations).map(|i| format!("S{i:02}")).collect()
    }

    pub fn test_start(&self) -> NaiveDate {
        self.start_date + Duration::days(self.calibration_days as i64)
    }

    pub fn correlation_matrix(&self) -> Result<CorrelationMatrix> {
        let rows = self
            .correlation
            .clone()
            .unwrap_or_else(|| default_correlation(&self.variables));
        if rows.len() != self.variables.len() {
            return Err(Error::Synthetic(format!(
                "correlation is {}x{}, expected {} variables",
                rows.len(),
                rows.len(),
                self.variables.len()
            )));
        }
        CorrelationMatrix::from_rows(&rows).map_err(|e| Error::Synthetic(format!("correlation: {e}")))
    }

    pub fn bias(&self) -> Vec<f64> {
        self.member_bias.clone().unwrap_or_else(|| self.spread(-0.3, 0.4))
    }

    pub fn noise(&self) -> Vec<f64> {
        self.member_noise.clone().unwrap_or_else(|| self.spread(0.15, 0.5))
    }

    fn spread(&self, lo: f64, hi: f64) -> Vec<f64> {
        let k = self.members;
        (0..k)
            .map(|i| {
                if k == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (k - 1) as f64
                }
            })
            .collect()
    }

    pub fn generator(&self, v: Variable) -> MarginalGenerator {
        self.generators
            .get(&v)
            .copied()
            .unwrap_or_else(|| MarginalGenerator::default_for(v))
    }

    pub fn validate(&self) -> Result<CorrelationMatrix> {
        let fail = |m: String| Err(Error::Synthetic(m));
        if self.stations == 0 || self.members == 0 {
            return fail("need at least one station and one member".into());
        }
        if self.calibration_days < self.window {
            return fail(format!(
                "calibration_days {} shorter than the training window {}",
                self.calibration_days, self.window
            ));
        }
        if !(0.0..1.0).contains(&self.gap_rate) {
            return fail(format!("gap_rate {} outside [0, 1)", self.gap_rate));
        }
        let mut sorted = self.variables.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.variables || sorted.is_empty() {
            return fail("variables must be distinct, nonempty and in canonical order".into());
        }
        if self.bias().len() != self.members || self.noise().len() != self.members {
            return fail("member_bias and member_noise need one entry per member".into());
        }
        if self.noise().iter().any(|s| !(*s >= 0.0)) || self.bias().iter().any(|b| !b.is_finite()) {
            return fail("member noise must be nonnegative and biases finite".into());
        }
        for (v, g) in &self.generators {
            if g.kind() != v.kind() {
                return fail(format!("generator for {v} has the wrong family"));
            }
        }
        for &v in &self.variables {
            self.generator(v).validate()?;
        }
        self.correlation_matrix()
    }
}

/// Draw the full dataset (calibration and test periods).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let c = spec.validate()?;
    let l = c.cholesky()?;
    let p = spec.variables.len();
    let k = spec.members;
    let generators: Vec<MarginalGenerator> = spec.variables.iter().map(|&v| spec.generator(v)).collect();
    let bias = spec.bias();
    let noise = spec.noise();
    let days = spec.calibration_days + spec.test_days;
    let mut records = Vec::with_capacity(spec.stations * days);
    let mut e = vec![0.0; p];
    let mut w = vec![0.0; p];
    for station in spec.station_names() {
        let mut rng = RngStream::new(spec.seed, stream_id(&[label_hash(&station), SYNTHETIC_STREAM]));
        let offsets: Vec<f64> = generators
            .iter()
            .map(|g| match g {
                MarginalGenerator::Gaussian { signal_sd, .. } => 0.3 * signal_sd * rng.standard_normal(),
                _ => 0.0,
            })
            .collect();
        for d in 0..days {
            let date = spec.start_date + Duration::days(d as i64);
            e.iter_mut().for_each(|x| *x = rng.standard_normal());
            w.iter_mut().for_each(|x| *x = rng.standard_normal());
            let mut ensemble = vec![vec![0.0; k]; p];
            for (j, g) in generators.iter().enumerate() {
                for (m, x) in ensemble[j].iter_mut().enumerate() {
                    let v = w[j] + bias[m] + noise[m] * rng.standard_normal();
                    *x = g.member(v, date, offsets[j]);
                }
            }
            let absent = rng.uniform() < spec.gap_rate;
            if absent {
                continue;
            }
            let mut observation = Vec::with_capacity(p);
            for (j, g) in generators.iter().enumerate() {
                let z: f64 = l.row(j)[..=j].iter().zip(&e).map(|(a, b)| a * b).sum();
                let u = phi(z).clamp(1e-15, 1.0 - 1e-15);
                observation.push(g.observation(u, w[j], date, offsets[j])?);
            }
            records.push(StationDayRecord {
                station: station.clone(),
                date,
                ensemble,
                observation,
            });
        }
    }
    Dataset::new(spec.variables.clone(), k, records, 0)
}
