//! Gaussian copula over BMA marginals: latent Gaussian factors from
//! observations, correlation estimation, and joint sampling.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bma::{PredictiveMarginal, QuantileTable, VariableKind};
use crate::error::{Error, Result};
use crate::numerics::{nearest_correlation_repair, phi, phi_inv, std_normal_pdf, Matrix, RngStream};

/// Bounds applied to `F_j(y_j)` before the normal quantile transform.
pub const PROBABILITY_CLAMP: f64 = 1e-12;
/// Sample sizes from which sampling goes through a cached inverse-CDF table.
const TABLE_MIN_SAMPLES: usize = 2048;

/// Symmetric positive-definite matrix with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct CorrelationMatrix {
    matrix: Matrix,
}

impl CorrelationMatrix {
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: Matrix::identity(p),
        }
    }

    /// Validates symmetry, unit diagonal (to 1e-9, then set exactly) and
    /// positive definiteness.
    pub fn new(mut matrix: Matrix) -> Result<Self> {
        if !matrix.is_symmetric(1e-12) {
            return Err(Error::Estimation("correlation matrix is not symmetric".into()));
        }
        for i in 0..matrix.rows() {
            if (matrix[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(Error::Estimation(format!(
                    "diagonal entry {i} is {}, expected 1",
                    matrix[(i, i)]
                )));
            }
            matrix[(i, i)] = 1.0;
        }
        matrix.cholesky()?;
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.to_rows()
    }

    pub fn cholesky(&self) -> Result<Matrix> {
        self.matrix.cholesky()
    }
}

impl TryFrom<Matrix> for CorrelationMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CorrelationMatrix> for Matrix {
    fn from(c: CorrelationMatrix) -> Matrix {
        c.matrix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LatentValue {
    Observed {
        z: f64,
    },
    /// `-∞ < z <= Φ⁻¹(α)`, from a zero observation of a variable with a point
    /// mass `α` at zero.
    Censored {
        upper: f64,
        alpha: f64,
    },
}

impl LatentValue {
    /// Observed value, or the truncated-normal mean `-φ(q)/α` of the censoring
    /// interval.
    pub fn imputed(&self) -> f64 {
        match *self {
            LatentValue::Observed { z } => z,
            LatentValue::Censored { upper, alpha } => -std_normal_pdf(upper) / alpha,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, LatentValue::Censored { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub values: Vec<LatentValue>,
    /// Variables whose CDF value had to be clamped away from 0 or 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
}

impl LatentRecord {
    pub fn with_origin(mut self, station: impl Into<String>, date: NaiveDate) -> Self {
        self.station = Some(station.into());
        self.date = Some(date);
        self
    }
}

fn clamp_probability(u: f64) -> (f64, bool) {
    let c = u.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    (c, c != u)
}

/// Latent Gaussian factors `Φ⁻¹(F_j(y_j))`, or a censoring interval for zero
/// precipitation.
pub fn latent_from_observation(marginals: &[PredictiveMarginal], obs: &[f64]) -> Result<LatentRecord> {
    if marginals.len() != obs.len() {
        return Err(Error::Dimension {
            expected: marginals.len(),
            found: obs.len(),
        });
    }
    let mut values = Vec::with_capacity(obs.len());
    let mut clamped = Vec::new();
    for (j, (m, &y)) in marginals.iter().zip(obs).enumerate() {
        if !y.is_finite() || (m.kind() != VariableKind::Gaussian && y < 0.0) {
            return Err(Error::domain(
                "latent_from_observation",
                format!("observation {y} outside the support of variable {j}"),
            ));
        }
        if m.kind() == VariableKind::Precipitation && y == 0.0 {
            let (alpha, hit) = clamp_probability(m.point_mass());
            if hit {
                clamped.push(j);
            }
            values.push(LatentValue::Censored {
                upper: phi_inv(alpha),
                alpha,
            });
        } else {
            let (u, hit) = clamp_probability(m.cdf(y));
            if hit {
                clamped.push(j);
            }
            values.push(LatentValue::Observed { z: phi_inv(u) });
        }
    }
    Ok(LatentRecord {
        values,
        clamped,
        station: None,
        date: None,
    })
}

/// Sample correlation of the (imputed) latent vectors, repaired to be
/// positive definite.
pub fn estimate_correlation(latents: &[LatentRecord]) -> Result<CorrelationMatrix> {
    let p = latents.first().map_or(0, |r| r.values.len());
    if p == 0 {
        return Err(Error::Estimation("no latent records".into()));
    }
    if let Some(bad) = latents.iter().find(|r| r.values.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            found: bad.values.len(),
        });
    }
    let t = latents.len();
    if t < p + 1 {
        return Err(Error::Estimation(format!(
            "{t} latent records for {p} variables, need at least {}",
            p + 1
        )));
    }
    let columns: Vec<Vec<f64>> = (0..p)
        .map(|j| latents.iter().map(|r| r.values[j].imputed()).collect())
        .collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / t as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for (j, (norm, col)) in norms.iter().zip(&columns).enumerate() {
        let scale = col.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        if *norm <= 1e-12 * scale * (t as f64).sqrt() {
            return Err(Error::Estimation(format!(
                "variable {j} has zero sample variance after imputation"
            )));
        }
    }
    let mut m = Matrix::identity(p);
    for i in 0..p {
        for j in 0..i {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    let mut repaired = nearest_correlation_repair(&m)?;
    for i in 0..p {
        repaired[(i, i)] = 1.0;
    }
    CorrelationMatrix::new(repaired)
}

/// `n` sampled p-vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    p: usize,
    values: Vec<f64>,
}

impl JointSample {
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || values.len() % p != 0 {
            return Err(Error::Dimension {
                expected: p,
                found: values.len(),
            });
        }
        Ok(Self { p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                found: bad.len(),
            });
        }
        Self::new(p, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// First `m` rows.
    pub fn head(&self, m: usize) -> JointSample {
        let m = m.min(self.n());
        JointSample {
            p: self.p,
            values: self.values[..m * self.p].to_vec(),
        }
    }
}

enum Inverse<'a> {
    Direct(&'a PredictiveMarginal),
    Table(QuantileTable<'a>),
}

impl Inverse<'_> {
    fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            Inverse::Direct(m) => m.quantile(u),
            Inverse::Table(t) => t.quantile(u),
        }
    }
}

/// Draw `n` vectors `Ŷ_j = F_j⁻¹(Φ(Z_j))` with `Z ~ N_p(0, C)`.
pub fn sample_joint(
    marginals: &[PredictiveMarginal],
    c: &CorrelationMatrix,
    n: usize,
    rng: &mut RngStream,
) -> Result<JointSample> {
    sample_joint_with_latents(marginals, c, n, rng).map(|(y, _)| y)
}

/// As [`sample_joint`], also returning the Gaussian draws `Z`.
pub fn sample_joint_with_latents(
    marginals: &[PredictiveMarginal],
    c: &CorrelationMatrix,
    n: usize,
    rng: &mut RngStream,
) -> Result<(JointSample, JointSample)> {
    JointSampler::new(marginals, n).sample_with_latents(c, n, rng)
}

/// Inverse marginal CDFs prepared once and reused across correlation
/// matrices, e.g. for the copula and independence draws of one forecast.
pub struct JointSampler<'a> {
    inverses: Vec<Inverse<'a>>,
}

impl<'a> JointSampler<'a> {
    /// Uses cached quantile tables when `n` is large enough to pay for them.
    pub fn new(marginals: &'a [PredictiveMarginal], n: usize) -> Self {
        let inverses = marginals
            .iter()
            .map(|m| {
                if n >= TABLE_MIN_SAMPLES {
                    Inverse::Table(QuantileTable::new(m))
                } else {
                    Inverse::Direct(m)
                }
            })
            .collect();
        Self { inverses }
    }

    pub fn dim(&self) -> usize {
        self.inverses.len()
    }

    pub fn sample(&self, c: &CorrelationMatrix, n: usize, rng: &mut RngStream) -> Result<JointSample> {
        self.sample_with_latents(c, n, rng).map(|(y, _)| y)
    }

    pub fn sample_with_latents(
        &self,
        c: &CorrelationMatrix,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<(JointSample, JointSample)> {
        let p = self.inverses.len();
        if c.dim() != p {
            return Err(Error::Dimension {
                expected: p,
                found: c.dim(),
            });
        }
        if n == 0 || p == 0 {
            return Err(Error::domain(
                "sample_joint",
                "need at least one sample and one variable",
            ));
        }
        let l = c.cholesky()?;
        let mut y = Vec::with_capacity(n * p);
        let mut z = Vec::with_capacity(n * p);
        let mut e = vec![0.0; p];
        for _ in 0..n {
            e.iter_mut().for_each(|v| *v = rng.standard_normal());
            for (i, inv) in self.inverses.iter().enumerate() {
                let zi: f64 = l.row(i)[..=i].iter().zip(&e).map(|(a, b)| a * b).sum();
                let u = phi(zi).clamp(1e-15, 1.0 - 1e-15);
                y.push(inv.quantile(u)?);
                z.push(zi);
            }
        }
        Ok((JointSample { p, values: y }, JointSample { p, values: z }))
    }
}

/// Marginals joined with an identity correlation matrix.
pub fn independence_sample(marginals: &[PredictiveMarginal], n: usize, rng: &mut RngStream) -> Result<JointSample> {
    sample_joint(marginals, &CorrelationMatrix::identity(marginals.len()), n, rng)
}
