//! Multivariate forecast verification: rank histograms, reliability index,
//! determinant sharpness, Euclidean error and the energy score.

use serde::{Deserialize, Serialize};

use crate::copula::JointSample;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Weiszfeld stopping rule.
const MEDIAN_STEP_TOLERANCE: f64 = 1e-9;
const MEDIAN_MAX_ITERATIONS: usize = 500;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn weakly_below(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Rank in `1..=m+1` of `obs` pooled with the `m` forecast vectors under the
/// componentwise pre-rank ordering; ties are broken uniformly at random.
pub fn multivariate_rank(obs: &[f64], forecast: &JointSample, rng: &mut RngStream) -> Result<usize> {
    check_dim(forecast.p(), obs.len())?;
    let pool: Vec<&[f64]> = std::iter::once(obs).chain(forecast.rows()).collect();
    let pre_rank = |v: &[f64]| pool.iter().filter(|u| weakly_below(u, v)).count();
    let own = pre_rank(obs);
    let (mut below, mut ties) = (0usize, 0usize);
    for v in &pool[1..] {
        match pre_rank(v).cmp(&own) {
            std::cmp::Ordering::Less => below += 1,
            std::cmp::Ordering::Equal => ties += 1,
            std::cmp::Ordering::Greater => {}
        }
    }
    let offset = if ties == 0 {
        0
    } else {
        (rng.uniform() * (ties + 1) as f64) as usize
    };
    Ok(1 + below + offset.min(ties))
}

/// Counts of observation ranks `1..=m+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl RankHistogram {
    /// Empty histogram for forecasts of `m` members.
    pub fn new(m: usize) -> Self {
        Self {
            counts: vec![0; m + 1],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::domain("rank histogram", "need at least two bins"));
        }
        let total = counts.iter().sum();
        Ok(Self { counts, total })
    }

    pub fn add(&mut self, rank: usize) -> Result<()> {
        if rank == 0 || rank > self.counts.len() {
            return Err(Error::domain(
                "rank histogram",
                format!("rank {rank} outside 1..={}", self.counts.len()),
            ));
        }
        self.counts[rank - 1] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &RankHistogram) -> Result<()> {
        check_dim(self.counts.len(), other.counts.len())?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total.max(1) as f64)
            .collect()
    }
}

/// `Δ = Σ_j |ζ_j − 1/(m+1)|`. Accumulated in integers so a flat histogram
/// gives exactly zero.
pub fn reliability_index(h: &RankHistogram) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::domain("reliability_index", "empty rank histogram"));
    }
    let bins = h.counts.len() as i128;
    let total = h.total as i128;
    let numerator: i128 = h.counts.iter().map(|&c| (bins * c as i128 - total).abs()).sum();
    Ok(numerator as f64 / (bins * total) as f64)
}

/// Simulated `q`-quantile of Δ for `cases` ranks drawn uniformly from `bins`.
pub fn reliability_null_quantile(
    bins: usize,
    cases: usize,
    q: f64,
    replicates: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if bins < 2 || cases == 0 || replicates == 0 || !(0.0..=1.0).contains(&q) {
        return Err(Error::domain("reliability_null_quantile", "invalid arguments"));
    }
    let mut values = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut h = RankHistogram::new(bins - 1);
        for _ in 0..cases {
            let r = ((rng.uniform() * bins as f64) as usize).min(bins - 1);
            h.add(r + 1)?;
        }
        values.push(reliability_index(&h)?);
    }
    values.sort_by(f64::total_cmp);
    let idx = ((q * replicates as f64).ceil() as usize).clamp(1, replicates) - 1;
    Ok(values[idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    pub value: f64,
    /// Covariance was numerically singular; `value` is 0.
    pub degenerate: bool,
}

/// Sample covariance (divisor `n − 1`) of the rows.
pub fn sample_covariance(points: &JointSample) -> Matrix {
    let (n, p) = (points.n(), points.p());
    let mut mean = vec![0.0; p];
    for r in points.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(p, p);
    for r in points.rows() {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..p {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// `DS = det(Σ)^{1/(2p)}` for the empirical covariance `Σ`.
pub fn determinant_sharpness(points: &JointSample) -> Result<Sharpness> {
    let (n, p) = (points.n(), points.p());
    if n <= p {
        return Err(Error::domain(
            "determinant_sharpness",
            format!("{n} vectors in dimension {p}, need more vectors than dimensions"),
        ));
    }
    let degenerate = Sharpness {
        value: 0.0,
        degenerate: true,
    };
    let cov = sample_covariance(points);
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Ok(degenerate);
    }
    let mut corr = cov.clone();
    for i in 0..p {
        for j in 0..p {
            corr[(i, j)] = cov[(i, j)] / (sd[i] * sd[j]);
        }
    }
    let Ok(l) = corr.cholesky() else {
        return Ok(degenerate);
    };
    let mut log_det = 0.0;
    for i in 0..p {
        let d = l[(i, i)] * l[(i, i)];
        if d < 1e-12 {
            return Ok(degenerate);
        }
        log_det += d.ln() + 2.0 * sd[i].ln();
    }
    Ok(Sharpness {
        value: (log_det / (2.0 * p as f64)).exp(),
        degenerate: false,
    })
}

fn median_objective(points: &JointSample, y: &[f64]) -> f64 {
    points.rows().map(|r| distance(r, y)).sum()
}

/// Geometric median by the Vardi-Zhang modified Weiszfeld iteration.
pub fn geometric_median(points: &JointSample) -> Result<Vec<f64>> {
    geometric_median_traced(points).map(|(m, _)| m)
}

/// As [`geometric_median`], also returning the objective at every iterate.
pub fn geometric_median_traced(points: &JointSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p) = (points.n(), points.p());
    if n == 0 {
        return Err(Error::domain("geometric_median", "no points"));
    }
    let mut y: Vec<f64> = (0..p)
        .map(|j| points.rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut objective = median_objective(points, &y);
    let mut trace = vec![objective];
    if n == 1 {
        return Ok((points.row(0).to_vec(), vec![0.0]));
    }
    let mut num = vec![0.0; p];
    let mut resid = vec![0.0; p];
    for _ in 0..MEDIAN_MAX_ITERATIONS {
        num.iter_mut().for_each(|v| *v = 0.0);
        resid.iter_mut().for_each(|v| *v = 0.0);
        let mut inv_sum = 0.0;
        let mut coincident = 0usize;
        for r in points.rows() {
            let d = distance(r, &y);
            if d <= 1e-14 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                coincident += 1;
                continue;
            }
            inv_sum += 1.0 / d;
            for j in 0..p {
                num[j] += r[j] / d;
                resid[j] += (r[j] - y[j]) / d;
            }
        }
        if inv_sum == 0.0 {
            break;
        }
        let mut next: Vec<f64> = num.iter().map(|v| v / inv_sum).collect();
        if coincident > 0 {
            let r_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r_norm <= coincident as f64 {
                // sitting on a data point that is already optimal
                break;
            }
            let gamma = coincident as f64 / r_norm;
            for (nj, yj) in next.iter_mut().zip(&y) {
                *nj = (1.0 - gamma) * *nj + gamma * yj;
            }
        }
        let step = distance(&next, &y);
        let next_objective = median_objective(points, &next);
        if next_objective > objective {
            break;
        }
        y = next;
        objective = next_objective;
        trace.push(objective);
        if step < MEDIAN_STEP_TOLERANCE {
            break;
        }
    }
    Ok((y, trace))
}

/// `‖median − obs‖` with the geometric median of the forecast vectors.
pub fn euclidean_error(forecast: &JointSample, obs: &[f64]) -> Result<f64> {
    check_dim(forecast.p(), obs.len())?;
    Ok(distance(&geometric_median(forecast)?, obs))
}

/// Energy score of an `m`-member ensemble:
/// `(1/m) Σ ‖x_j − y‖ − (1/(2m²)) Σ_i Σ_j ‖x_i − x_j‖`.
pub fn energy_score_exact(forecast: &JointSample, obs: &[f64]) -> Result<f64> {
    check_dim(forecast.p(), obs.len())?;
    let m = forecast.n();
    if m == 0 {
        return Err(Error::domain("energy_score_exact", "empty forecast"));
    }
    let first: f64 = forecast.rows().map(|r| distance(r, obs)).sum::<f64>() / m as f64;
    let mut pair = 0.0;
    for i in 0..m {
        for j in 0..i {
            pair += distance(forecast.row(i), forecast.row(j));
        }
    }
    Ok(first - pair / (m * m) as f64)
}

/// Energy score from two independent equal-size samples:
/// `(1/n) Σ ‖x_j − y‖ − (1/(2n)) Σ ‖x_j − x′_j‖`.
pub fn energy_score_mc(a: &JointSample, b: &JointSample, obs: &[f64]) -> Result<f64> {
    check_dim(a.p(), obs.len())?;
    check_dim(a.p(), b.p())?;
    check_dim(a.n(), b.n())?;
    let n = a.n();
    if n == 0 {
        return Err(Error::domain("energy_score_mc", "empty sample"));
    }
    let (mut first, mut second) = (0.0, 0.0);
    for (x, x2) in a.rows().zip(b.rows()) {
        first += distance(x, obs);
        second += distance(x, x2);
    }
    Ok(first / n as f64 - second / (2.0 * n as f64))
}

/// One verification case: a forecast sample and the verifying observation.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationCase {
    pub forecast: JointSample,
    pub observation: Vec<f64>,
}

/// Per-variable centering and scaling taken from test-set observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub variables: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormalizationSpec {
    /// Mean and sample standard deviation of each observed variable.
    pub fn from_observations<'a>(
        variables: Vec<String>,
        observations: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        let p = variables.len();
        let mut sum = vec![0.0; p];
        let mut rows: Vec<&[f64]> = Vec::new();
        for o in observations {
            check_dim(p, o.len())?;
            for (s, v) in sum.iter_mut().zip(o) {
                *s += v;
            }
            rows.push(o);
        }
        if rows.len() < 2 {
            return Err(Error::domain("normalization", "need at least two observations"));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let sd: Vec<f64> = (0..p)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            .collect();
        Self::new(variables, mean, sd)
    }

    pub fn new(variables: Vec<String>, mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        check_dim(variables.len(), mean.len())?;
        check_dim(variables.len(), sd.len())?;
        if let Some(j) = sd.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(
                "normalization",
                format!("variable '{}' has zero observed standard deviation", variables[j]),
            ));
        }
        Ok(Self { variables, mean, sd })
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.sd) {
            *x = (*x - m) / s;
        }
    }

    pub fn apply_sample(&self, sample: &mut JointSample) -> Result<()> {
        check_dim(self.sd.len(), sample.p())?;
        let p = sample.p();
        for row in sample.as_mut_slice().chunks_exact_mut(p) {
            self.apply(row);
        }
        Ok(())
    }
}

/// Normalized copies of the cases.
pub fn normalize(cases: &[VerificationCase], spec: &NormalizationSpec) -> Result<Vec<VerificationCase>> {
    cases
        .iter()
        .map(|c| {
            check_dim(spec.sd.len(), c.observation.len())?;
            let mut forecast = c.forecast.clone();
            spec.apply_sample(&mut forecast)?;
            let mut observation = c.observation.clone();
            spec.apply(&mut observation);
            Ok(VerificationCase { forecast, observation })
        })
        .collect()
}

/// Scores of a single case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub es: f64,
    pub ee: f64,
    pub ds: f64,
    pub ds_degenerate: bool,
    pub rank: usize,
}

/// Case-averaged scores for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub es: f64,
    pub ee: f64,
    pub delta: f64,
    pub ds: f64,
    pub cases: usize,
    /// Standard error of the mean energy score.
    pub es_std_error: f64,
    pub ds_degenerate: usize,
}

impl ScoreSummary {
    pub fn from_cases(scores: &[CaseScores], histogram: &RankHistogram) -> Result<Self> {
        let n = scores.len();
        if n == 0 {
            return Err(Error::EmptyReport);
        }
        let nf = n as f64;
        let es = scores.iter().map(|s| s.es).sum::<f64>() / nf;
        let es_var = if n > 1 {
            scores.iter().map(|s| (s.es - es).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            es,
            ee: scores.iter().map(|s| s.ee).sum::<f64>() / nf,
            delta: reliability_index(histogram)?,
            ds: scores.iter().map(|s| s.ds).sum::<f64>() / nf,
            cases: n,
            es_std_error: (es_var / nf).sqrt(),
            ds_degenerate: scores.iter().filter(|s| s.ds_degenerate).count(),
        })
    }
}
