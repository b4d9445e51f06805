//! Library results checked against independent reference computations.

use ensemble_copula::bma::{fit_gamma_bma, fit_logistic, TrainingSet};
use ensemble_copula::copula::JointSample;
use ensemble_copula::numerics::{gamma_cdf, gamma_quantile, std_normal_cdf, std_normal_quantile, GammaDist, RngStream};
use ensemble_copula::verification::{
    energy_score_exact, energy_score_mc, multivariate_rank, reliability_index, reliability_null_quantile, RankHistogram,
};

/// Φ(x) = 1/2 + φ(x) Σ x^(2n+1) / (1·3·…·(2n+1)), summed for x ≥ 0.
fn normal_cdf_series(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - normal_cdf_series(-x);
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 1.0;
    while term.abs() > 1e-17 * sum.abs() {
        term *= x * x / (2.0 * n + 1.0);
        sum += term;
        n += 1.0;
    }
    0.5 + (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * sum
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn normal_cdf_matches_series() {
    for i in -600..=600 {
        let x = i as f64 / 100.0;
        let got = std_normal_cdf(x).unwrap();
        assert!((got - normal_cdf_series(x)).abs() < 1e-13, "x = {x}");
    }
    assert!((std_normal_cdf(1.959963985).unwrap() - 0.975).abs() < 1e-9);
}

#[test]
fn normal_quantile_matches_bisection() {
    let q = bisect(normal_cdf_series, 0.975, 0.0, 5.0);
    assert!((std_normal_quantile(0.975).unwrap() - q).abs() < 1e-8);
    assert!((q - 1.959963985).abs() < 1e-8);
    for i in 1..100 {
        let u = i as f64 / 100.0;
        let q = bisect(normal_cdf_series, u, -6.0, 6.0);
        assert!((std_normal_quantile(u).unwrap() - q).abs() < 1e-9, "u = {u}");
    }
}

/// Adaptive Simpson quadrature started from 64 equal panels.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let h = (b - a) / 64.0;
    (0..64)
        .map(|i| simpson_panel(f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / 64.0))
        .sum()
}

fn simpson_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 30)
}

/// P(shape, x) as a ratio of two quadratures of t^(shape-1) e^(-t). Below
/// shape 1 the substitution t = u^(1/shape) removes the singularity at 0.
fn gamma_p_quadrature(shape: f64, x: f64) -> f64 {
    let top = shape + 60.0 * shape.sqrt() + 60.0;
    let x = x.min(top);
    let integral = |a: f64, b: f64| {
        if shape < 1.0 {
            let f = |u: f64| (-u.powf(1.0 / shape)).exp() / shape;
            simpson(&f, a.powf(shape), b.powf(shape), 1e-13)
        } else {
            // scaled so the peak at t = shape - 1 is 1
            let mode = shape - 1.0;
            let peak = if mode > 0.0 { mode * mode.ln() - mode } else { 0.0 };
            let f = |t: f64| {
                if t > 0.0 {
                    ((shape - 1.0) * t.ln() - t - peak).exp()
                } else if shape == 1.0 {
                    1.0
                } else {
                    0.0
                }
            };
            simpson(&f, a, b, 1e-13)
        }
    };
    let part = integral(0.0, x);
    part / (part + integral(x, top))
}

#[test]
fn gamma_cdf_matches_quadrature() {
    for &shape in &[0.3, 0.8, 1.0, 2.5, 3.0, 7.0, 20.0] {
        for &x in &[0.01, 0.2, 1.0, 2.0, 3.125, 5.0, 12.0, 30.0] {
            let got = gamma_cdf(x, shape, 1.0).unwrap();
            let want = gamma_p_quadrature(shape, x);
            assert!((got - want).abs() < 1e-10, "shape {shape}, x {x}: {got} vs {want}");
        }
    }
    let got = gamma_cdf(2.5, 3.0, 0.8).unwrap();
    assert!((got - gamma_p_quadrature(3.0, 2.5 / 0.8)).abs() < 1e-10);
}

#[test]
fn gamma_quantile_matches_bisection() {
    let q = bisect(|y| gamma_cdf(y, 2.0, 1.5).unwrap(), 0.9, 0.0, 100.0);
    let got = gamma_quantile(0.9, 2.0, 1.5).unwrap();
    assert!((got - q).abs() < 1e-8);
    assert!((gamma_cdf(got, 2.0, 1.5).unwrap() - 0.9).abs() < 1e-8);
    assert!((gamma_quantile(1.0 - (-1.0f64).exp(), 1.0, 1.0).unwrap() - 1.0).abs() < 1e-8);
}

fn nelder_mead(f: impl Fn(&[f64; 2]) -> f64, start: [f64; 2], size: f64) -> ([f64; 2], f64) {
    let mut pts = [start, [start[0] + size, start[1]], [start[0], start[1] + size]];
    let mut vals = pts.map(|p| f(&p));
    for _ in 0..5000 {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (b, m, w) = (idx[0], idx[1], idx[2]);
        if (vals[w] - vals[b]).abs() < 1e-14 * vals[b].abs().max(1.0) {
            break;
        }
        let centroid = [(pts[b][0] + pts[m][0]) / 2.0, (pts[b][1] + pts[m][1]) / 2.0];
        let along = |t: f64| {
            [
                centroid[0] + t * (pts[w][0] - centroid[0]),
                centroid[1] + t * (pts[w][1] - centroid[1]),
            ]
        };
        let r = along(-1.0);
        let fr = f(&r);
        if fr < vals[b] {
            let e = along(-2.0);
            let fe = f(&e);
            (pts[w], vals[w]) = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < vals[m] {
            (pts[w], vals[w]) = (r, fr);
        } else {
            let c = along(0.5);
            let fc = f(&c);
            if fc < vals[w] {
                (pts[w], vals[w]) = (c, fc);
            } else {
                for i in [m, w] {
                    pts[i] = [(pts[i][0] + pts[b][0]) / 2.0, (pts[i][1] + pts[b][1]) / 2.0];
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (pts[best], vals[best])
}

#[test]
fn single_member_gamma_fit_maximizes_likelihood() {
    let mut rng = RngStream::new(8, 8);
    for _ in 0..10 {
        let n = 50;
        let x: Vec<f64> = (0..n).map(|_| 1.0 + 9.0 * rng.uniform()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&s| {
                GammaDist::from_mean_variance(s, 0.5 + 0.4 * s)
                    .unwrap()
                    .quantile(rng.uniform())
                    .unwrap()
            })
            .collect();
        let model = fit_gamma_bma(&TrainingSet::new(x.iter().map(|&v| vec![v]).collect(), y.clone()).unwrap()).unwrap();
        let mean = model.mean[0];
        let neg_ll = |c: &[f64; 2]| -> f64 {
            if c[0] < 0.0 || c[1] < 0.0 {
                return f64::INFINITY;
            }
            -x.iter()
                .zip(&y)
                .map(|(&s, &obs)| {
                    let var = (c[0] + c[1] * s).max(1e-4);
                    GammaDist::from_mean_variance(mean.eval(s).max(1e-4), var)
                        .unwrap()
                        .ln_pdf(obs.max(1e-4))
                })
                .sum::<f64>()
        };
        let fitted = neg_ll(&[model.variance.intercept, model.variance.slope]);
        let (_, best) = nelder_mead(neg_ll, [1.0, 0.1], 0.5);
        assert!(fitted <= best + 1e-4 * best.abs(), "fitted {fitted}, oracle {best}");
    }
}

/// Unpenalized logistic regression by Newton iterations with an explicit
/// 3×3 Gaussian elimination.
fn logistic_newton(design: &[[f64; 3]], response: &[bool]) -> [f64; 3] {
    let mut beta = [0.0; 3];
    for _ in 0..100 {
        let mut a = [[0.0; 4]; 3];
        for (row, &r) in design.iter().zip(response) {
            let p = 1.0 / (1.0 + (-(row[0] * beta[0] + row[1] * beta[1] + row[2] * beta[2])).exp());
            for i in 0..3 {
                a[i][3] += (if r { 1.0 } else { 0.0 } - p) * row[i];
                for j in 0..3 {
                    a[i][j] += p * (1.0 - p) * row[i] * row[j];
                }
            }
        }
        for c in 0..3 {
            let pivot = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, pivot);
            for r in 0..3 {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..4 {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for i in 0..3 {
            beta[i] += a[i][3] / a[i][i];
        }
    }
    beta
}

#[test]
fn logistic_fit_matches_newton_oracle() {
    let mut rng = RngStream::new(12, 0);
    let n = 400;
    let mut design = Vec::new();
    let mut response = Vec::new();
    for _ in 0..n {
        let x = 4.0 * rng.uniform();
        let zero = rng.uniform() < 0.3;
        let row = [1.0, if zero { 0.0 } else { x.cbrt() }, if zero { 1.0 } else { 0.0 }];
        let eta = 0.5 - 1.2 * row[1] + 1.5 * row[2];
        response.push(rng.uniform() < 1.0 / (1.0 + (-eta).exp()));
        design.push(row);
    }
    let got = fit_logistic(&design, &response);
    let want = logistic_newton(&design, &response);
    for i in 0..3 {
        // the library adds a tiny ridge penalty
        assert!(
            (got[i] - want[i]).abs() < 1e-3 * (1.0 + want[i].abs()),
            "{got:?} vs {want:?}"
        );
    }
}

#[test]
fn univariate_rank_is_ordinary_rank() {
    let mut rng = RngStream::new(2, 2);
    for _ in 0..200 {
        let m = 1 + (rng.uniform() * 15.0) as usize;
        let members: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.standard_normal()]).collect();
        let y = rng.standard_normal();
        let expected = 1 + members.iter().filter(|x| x[0] < y).count();
        let got = multivariate_rank(&[y], &JointSample::from_rows(&members).unwrap(), &mut rng).unwrap();
        assert_eq!(got, expected);
    }
}

#[test]
fn energy_score_of_centered_normal_approaches_crps() {
    let mut rng = RngStream::new(21, 0);
    let n = 20_000;
    let draw =
        |rng: &mut RngStream| JointSample::new(1, (0..n).map(|_| 1.5 + rng.standard_normal()).collect()).unwrap();
    let (a, b) = (draw(&mut rng), draw(&mut rng));
    let es = energy_score_mc(&a, &b, &[1.5]).unwrap();
    let crps = (2.0f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
    assert!((es - crps).abs() < 0.01, "{es} vs {crps}");
}

fn correlated(rng: &mut RngStream, rho: f64) -> [f64; 3] {
    let (a, b, c) = (rng.standard_normal(), rng.standard_normal(), rng.standard_normal());
    [a, rho * a + (1.0 - rho * rho).sqrt() * b, c]
}

#[test]
fn self_consistent_forecasts_give_flat_histograms() {
    let mut rng = RngStream::new(77, 1);
    let (cases, m) = (5000, 8);
    let mut hist = RankHistogram::new(m);
    for _ in 0..cases {
        let obs = correlated(&mut rng, 0.6);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| correlated(&mut rng, 0.6).to_vec()).collect();
        hist.add(multivariate_rank(&obs, &JointSample::from_rows(&rows).unwrap(), &mut rng).unwrap())
            .unwrap();
    }
    let delta = reliability_index(&hist).unwrap();
    let null = reliability_null_quantile(m + 1, cases, 0.99, 2000, &mut RngStream::new(77, 2)).unwrap();
    assert!(delta < null, "Delta {delta} above null quantile {null}");
}

#[test]
fn true_distribution_has_lower_energy_score() {
    let mut rng = RngStream::new(5, 5);
    let cases = 5000;
    let mut diffs = Vec::with_capacity(cases);
    for _ in 0..cases {
        let obs = correlated(&mut rng, 0.7);
        let truth: Vec<Vec<f64>> = (0..20).map(|_| correlated(&mut rng, 0.7).to_vec()).collect();
        let wrong: Vec<Vec<f64>> = (0..20)
            .map(|_| correlated(&mut rng, -0.3).map(|v| 1.3 * v).to_vec())
            .collect();
        let good = energy_score_exact(&JointSample::from_rows(&truth).unwrap(), &obs).unwrap();
        let bad = energy_score_exact(&JointSample::from_rows(&wrong).unwrap(), &obs).unwrap();
        diffs.push(bad - good);
    }
    let mean = diffs.iter().sum::<f64>() / cases as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (cases - 1) as f64).sqrt();
    assert!(
        mean > 3.0 * sd / (cases as f64).sqrt(),
        "mean difference {mean}, sd {sd}"
    );
}
