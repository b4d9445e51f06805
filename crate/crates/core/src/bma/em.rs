use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;

pub(crate) const MAX_ITERATIONS: usize = 200;
pub(crate) const RELATIVE_TOLERANCE: f64 = 1e-6;
const RESTARTS: usize = 3;
const JITTER_SEED: u64 = 0x00b0_a5ee_d000_0001;

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Log-likelihood at the starting point and after every iteration.
    pub log_likelihood: Vec<f64>,
    /// Mixture weights matching each `log_likelihood` entry.
    pub weights: Vec<Vec<f64>>,
    pub converged: bool,
    /// Jittered restarts that were run because the first solution fell below
    /// the equal-weight baseline.
    pub restarts: usize,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Kernel family plugged into the shared EM loop. Only the dispersion
/// parameters are estimated inside EM; location links are fixed beforehand.
pub(crate) trait KernelFamily {
    type Dispersion: Clone;

    fn pairs(&self) -> usize;
    fn members(&self) -> usize;

    /// Fill `out[i * K + k]` with `ln g_k(y_i | x_ik)`.
    fn log_kernels(&self, dispersion: &Self::Dispersion, out: &mut [f64]);

    /// Dispersion M-step given responsibilities laid out like `log_kernels`.
    /// Must not decrease the expected complete-data log-likelihood.
    fn update_dispersion(&self, current: &Self::Dispersion, resp: &[f64]) -> Self::Dispersion;
}

pub(crate) struct EmResult<D> {
    pub weights: Vec<f64>,
    pub dispersion: D,
    pub trace: EmTrace,
}

/// Log-likelihood; writes responsibilities into `resp`.
fn e_step(weights: &[f64], log_kernels: &[f64], resp: &mut [f64]) -> f64 {
    let k = weights.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    for (row, out) in log_kernels.chunks_exact(k).zip(resp.chunks_exact_mut(k)) {
        let mut max = f64::NEG_INFINITY;
        for (o, (lk, lw)) in out.iter_mut().zip(row.iter().zip(&log_w)) {
            *o = lk + lw;
            if *o > max {
                max = *o;
            }
        }
        if max == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = 1.0 / k as f64);
            total += f64::NEG_INFINITY;
            continue;
        }
        let sum: f64 = out.iter().map(|o| (o - max).exp()).sum();
        let lse = max + sum.ln();
        out.iter_mut().for_each(|o| *o = (*o - lse).exp());
        total += lse;
    }
    total
}

fn column_means(resp: &[f64], k: usize) -> Vec<f64> {
    let n = resp.len() / k;
    let mut w = vec![0.0; k];
    for row in resp.chunks_exact(k) {
        for (acc, r) in w.iter_mut().zip(row) {
            *acc += r;
        }
    }
    let total: f64 = w.iter().sum();
    let norm = if total > 0.0 { total } else { n as f64 };
    w.iter_mut().for_each(|x| *x /= norm);
    w
}

fn run_from<F: KernelFamily>(family: &F, weights: Vec<f64>, dispersion: F::Dispersion) -> EmResult<F::Dispersion> {
    let (n, k) = (family.pairs(), family.members());
    let mut logk = vec![0.0; n * k];
    let mut resp = vec![0.0; n * k];
    family.log_kernels(&dispersion, &mut logk);
    let mut ll = e_step(&weights, &logk, &mut resp);
    let mut trace = EmTrace {
        log_likelihood: vec![ll],
        weights: vec![weights.clone()],
        ..EmTrace::default()
    };
    let mut weights = weights;
    let mut dispersion = dispersion;
    for _ in 0..MAX_ITERATIONS {
        let new_weights = column_means(&resp, k);
        let new_dispersion = family.update_dispersion(&dispersion, &resp);
        family.log_kernels(&new_dispersion, &mut logk);
        let mut new_resp = vec![0.0; n * k];
        let new_ll = e_step(&new_weights, &logk, &mut new_resp);
        // Guard against round-off making a step look worse than staying put.
        if new_ll < ll {
            trace.converged = true;
            break;
        }
        weights = new_weights;
        dispersion = new_dispersion;
        resp = new_resp;
        trace.log_likelihood.push(new_ll);
        trace.weights.push(weights.clone());
        let change = new_ll - ll;
        ll = new_ll;
        if change <= RELATIVE_TOLERANCE * ll.abs() {
            trace.converged = true;
            break;
        }
    }
    EmResult {
        weights,
        dispersion,
        trace,
    }
}

/// EM from equal weights, with jittered restarts when the solution ends below
/// the equal-weight baseline (equal weights plus one dispersion update).
pub(crate) fn run_em<F: KernelFamily>(family: &F, initial: F::Dispersion) -> EmResult<F::Dispersion> {
    let (n, k) = (family.pairs(), family.members());
    let equal = vec![1.0 / k as f64; k];

    let mut logk = vec![0.0; n * k];
    let mut resp = vec![0.0; n * k];
    family.log_kernels(&initial, &mut logk);
    e_step(&equal, &logk, &mut resp);
    let baseline_dispersion = family.update_dispersion(&initial, &resp);
    family.log_kernels(&baseline_dispersion, &mut logk);
    let baseline = e_step(&equal, &logk, &mut resp);

    let mut best = run_from(family, equal, initial.clone());
    if k > 1 && best.trace.final_log_likelihood() < baseline {
        let mut rng = RngStream::new(JITTER_SEED, (n * k) as u64);
        for r in 0..RESTARTS {
            let raw: Vec<f64> = (0..k).map(|_| (0.5 * rng.standard_normal()).exp()).collect();
            let total: f64 = raw.iter().sum();
            let start = raw.iter().map(|w| w / total).collect();
            let candidate = run_from(family, start, initial.clone());
            if candidate.trace.final_log_likelihood() > best.trace.final_log_likelihood() {
                best = candidate;
            }
            best.trace.restarts = r + 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e_step_normalizes_rows() {
        let weights = [0.25, 0.75];
        let logk = [-1.0, -2.0, -0.5, -0.5];
        let mut resp = [0.0; 4];
        let ll = e_step(&weights, &logk, &mut resp);
        assert!((resp[0] + resp[1] - 1.0).abs() < 1e-15);
        assert!((resp[2] - 0.25).abs() < 1e-15);
        let expected = (0.25 * (-1.0f64).exp() + 0.75 * (-2.0f64).exp()).ln() + (-0.5f64);
        assert!((ll - expected).abs() < 1e-12);
    }
}
