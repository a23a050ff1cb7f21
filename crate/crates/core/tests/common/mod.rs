#![allow(dead_code)]

use std::sync::Arc;

use elmi::dataset::{ColumnKind, Dataset};
use elmi::estfun::{correlation_fn, linreg_fn, logistic_fn, mean_fn, EstimatingFunction, LogisticLayout};
use elmi::imputation::ExtendedSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn chisq_quantile(df: f64, level: f64) -> f64 {
    ChiSquared::new(df).unwrap().inverse_cdf(level)
}

pub fn complete(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Dataset {
    let y: Vec<Option<Vec<f64>>> = y.into_iter().map(Some).collect();
    Dataset::from_rows(&x, &y).unwrap()
}

pub fn extended(d: Dataset) -> ExtendedSample {
    ExtendedSample::complete(Arc::new(d)).unwrap()
}

/// `x = 1 + 2 y + e` with `y`, `e` standard normal.
pub fn linreg_sample(r: &mut ChaCha8Rng, n: usize) -> Dataset {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let y = normal(r);
        xs.push(vec![1.0 + 2.0 * y + normal(r)]);
        ys.push(vec![y]);
    }
    complete(xs, ys)
}

/// Logistic design: `x = (x1, x2, z)` with binary response `z`, `y` a covariate.
pub fn logistic_sample(r: &mut ChaCha8Rng, n: usize) -> Dataset {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = 0.5 * normal(r);
        let x2 = 1.0 + 0.5 * normal(r);
        let y = normal(r);
        let eta = -0.5 + x1 + 0.5 * x2 - 0.8 * y;
        let z = f64::from(u8::from(r.gen::<f64>() < 1.0 / (1.0 + (-eta).exp())));
        xs.push(vec![x1, x2, z]);
        ys.push(vec![y]);
    }
    let y: Vec<Option<Vec<f64>>> = ys.into_iter().map(Some).collect();
    Dataset::from_rows(&xs, &y)
        .unwrap()
        .with_x_kinds(vec![ColumnKind::Continuous, ColumnKind::Continuous, ColumnKind::Binary])
        .unwrap()
}

pub fn builtins() -> Vec<(Box<dyn EstimatingFunction>, usize, usize)> {
    vec![
        (Box::new(mean_fn(1).unwrap()), 1, 1),
        (Box::new(mean_fn(2).unwrap()), 1, 2),
        (Box::new(correlation_fn()), 1, 1),
        (Box::new(linreg_fn()), 1, 1),
        (Box::new(logistic_fn(LogisticLayout::default_for(3, 1).unwrap())), 3, 1),
    ]
}

/// Random `theta` inside the domain of `g`.
pub fn random_theta(r: &mut ChaCha8Rng, g: &dyn EstimatingFunction) -> Vec<f64> {
    let (_, p) = g.dims();
    let mut th: Vec<f64> = (0..p).map(|_| normal(r)).collect();
    if g.name() == "correlation" {
        th[0] = r.gen_range(-0.9..0.9);
        th[3] = r.gen_range(0.2..3.0);
        th[4] = r.gen_range(0.2..3.0);
    }
    th
}

/// Max over entries of `|a - b| / max(|b|, 1)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian (row-major `r x p`) of `f` at `theta`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64], r: usize) -> Vec<f64> {
    let p = theta.len();
    let mut out = vec![0.0; r * p];
    for b in 0..p {
        let h = 1e-6 * theta[b].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[b] += h;
        dn[b] -= h;
        let (fu, fd) = (f(&up), f(&dn));
        for a in 0..r {
            out[a * p + b] = (fu[a] - fd[a]) / (2.0 * h);
        }
    }
    out
}

/// Scalar EL dual by bisection: `sum g_i / (1 + t g_i) = 0` on the interval
/// where every `1 + t g_i > 0`. Returns `(t, sum ln(1 + t g_i))`.
pub fn scalar_el_oracle(g: &[f64]) -> (f64, f64) {
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(gmax > 0.0 && gmin < 0.0);
    let n = g.len() as f64;
    // p_i <= 1 keeps 1 + t g_i >= 1/n at the root
    let (mut lo, mut hi) = ((1.0 / n - 1.0) / gmax, (1.0 / n - 1.0) / gmin);
    let score = |t: f64| g.iter().map(|v| v / (1.0 + t * v)).sum::<f64>();
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1e-300) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    (t, g.iter().map(|v| (1.0 + t * v).ln()).sum())
}

/// Logistic maximum likelihood by Newton-Raphson on the design `s`.
pub fn irls(s: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let p = s[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut grad = nalgebra::DVector::<f64>::zeros(p);
        let mut info = nalgebra::DMatrix::<f64>::zeros(p, p);
        for (si, &zi) in s.iter().zip(z) {
            let eta: f64 = si.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pi = 1.0 / (1.0 + (-eta).exp());
            for a in 0..p {
                grad[a] += si[a] * (zi - pi);
                for b in 0..p {
                    info[(a, b)] += pi * (1.0 - pi) * si[a] * si[b];
                }
            }
        }
        let step = info.lu().solve(&grad).unwrap();
        for a in 0..p {
            beta[a] += step[a];
        }
        if step.norm() < 1e-14 {
            break;
        }
    }
    beta
}

pub mod checks {
    //! Oracle comparisons shared by the oracle tests and the acceptance run.
    //! Each returns the worst error found.

    use super::*;
    use elmi::el::{default_starts, mele, solve_lagrange};
    use elmi::imputation::{impute, imputed_estfun, imputed_estfun_jacobian};
    use elmi::kernel::{conditional_cdf, conditional_law, univariate_kernel, KernelSpec};
    use elmi::linalg::RowMatrix;

    /// 100 random one-equation duals against bisection; worst relative error in `t` and `l`.
    pub fn lagrange_scalar() -> f64 {
        let mut r = rng(11);
        let mut worst = 0.0f64;
        let mut done = 0;
        while done < 100 {
            let n = r.gen_range(5..200);
            let shift = r.gen_range(-0.6..0.6);
            let g: Vec<f64> = (0..n).map(|_| normal(&mut r) + shift).collect();
            if g.iter().all(|&v| v > 0.0) || g.iter().all(|&v| v < 0.0) {
                continue;
            }
            done += 1;
            let sol = solve_lagrange(&RowMatrix::from_vec(n, 1, g.clone())).unwrap();
            if !sol.feasible {
                return f64::INFINITY;
            }
            let (t, l) = scalar_el_oracle(&g);
            worst = worst
                .max((sol.t[0] - t).abs() / t.abs().max(1.0))
                .max((sol.logelr - l).abs() / l.abs().max(1.0));
        }
        worst
    }

    fn fit(d: Dataset, g: &dyn EstimatingFunction) -> Vec<f64> {
        let es = extended(d);
        let f = mele(&es, g, &default_starts(&es, g)).unwrap();
        assert!(f.converged);
        assert!(f.logelr.abs() < 1e-8, "just-identified MELE has l = {}", f.logelr);
        f.theta_hat
    }

    pub fn mele_mean() -> f64 {
        let mut r = rng(21);
        let n = 150;
        let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut r) * 2.0 + 1.0, normal(&mut r).exp()]).collect();
        let xs = vec![vec![0.0]; n];
        let want: Vec<f64> = (0..2).map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / n as f64).collect();
        rel_err(&fit(complete(xs, ys), &mean_fn(2).unwrap()), &want)
    }

    pub fn mele_correlation() -> f64 {
        let mut r = rng(22);
        let n = 200;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let a = normal(&mut r);
            xs.push(vec![1.0 + a]);
            ys.push(vec![0.5 * a + normal(&mut r)]);
        }
        let nf = n as f64;
        let mx = xs.iter().map(|v| v[0]).sum::<f64>() / nf;
        let my = ys.iter().map(|v| v[0]).sum::<f64>() / nf;
        let vx = xs.iter().map(|v| (v[0] - mx).powi(2)).sum::<f64>() / nf;
        let vy = ys.iter().map(|v| (v[0] - my).powi(2)).sum::<f64>() / nf;
        let cxy = xs.iter().zip(&ys).map(|(a, b)| (a[0] - mx) * (b[0] - my)).sum::<f64>() / nf;
        let want = vec![cxy / (vx * vy).sqrt(), mx, my, vx, vy];
        rel_err(&fit(complete(xs, ys), &correlation_fn()), &want)
    }

    pub fn mele_linreg() -> f64 {
        let d = linreg_sample(&mut rng(23), 200);
        let n = d.n() as f64;
        let (mut sx, mut sy, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..d.n() {
            let (x, y) = (d.x_row(i)[0], d.y_row(i)[0]);
            sx += x;
            sy += y;
            sxy += x * y;
            syy += y * y;
        }
        let b = (sxy - sx * sy / n) / (syy - sy * sy / n);
        let want = vec![(sx - b * sy) / n, b];
        rel_err(&fit(d, &linreg_fn()), &want)
    }

    pub fn mele_logistic() -> f64 {
        let d = logistic_sample(&mut rng(24), 300);
        let design: Vec<Vec<f64>> = (0..d.n())
            .map(|i| vec![1.0, d.x_row(i)[0], d.x_row(i)[1], d.y_row(i)[0]])
            .collect();
        let z: Vec<f64> = (0..d.n()).map(|i| d.x_row(i)[2]).collect();
        let want = irls(&design, &z);
        let g = logistic_fn(LogisticLayout::default_for(3, 1).unwrap());
        rel_err(&fit(d, &g), &want)
    }

    /// Three donors and one missing row.
    pub fn three_donor_fixture() -> Dataset {
        let x = vec![vec![0.0], vec![0.7], vec![1.9], vec![0.5]];
        let y = vec![Some(vec![2.0]), Some(vec![-1.0]), Some(vec![0.5]), None];
        Dataset::from_rows(&x, &y).unwrap()
    }

    fn direct_weights(order: u8, h: f64, xs: &[f64], x_star: f64, scale: f64) -> Vec<f64> {
        let raw: Vec<f64> = xs
            .iter()
            .map(|&x| univariate_kernel(order, (x - x_star) / (h * scale)))
            .collect();
        let pos: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
        raw.iter().map(|&v| if v > 0.0 { v / pos } else { 0.0 }).collect()
    }

    /// Weights, cdf and conditional mean against direct summation, orders 2 and 4.
    pub fn conditional_law_direct() -> f64 {
        let d = three_donor_fixture();
        let all = [0.0, 0.7, 1.9, 0.5];
        let m = all.iter().sum::<f64>() / 4.0;
        // continuous x is standardised by its sd over all rows
        let scale = (all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0).sqrt();
        let donors_x = [0.0, 0.7, 1.9];
        let donors_y = [2.0, -1.0, 0.5];
        let mut worst = 0.0f64;
        for order in [2u8, 4] {
            for h in [0.3, 0.8, 2.5] {
                for x_star in [0.5, -0.4, 1.2, 3.0] {
                    let k = KernelSpec::new(order, h).unwrap();
                    let want = direct_weights(order, h, &donors_x, x_star, scale);
                    if want.iter().all(|&w| w == 0.0) {
                        // every fourth-order weight negative: no usable law
                        if conditional_law(&d, &k, &[x_star]).is_ok() {
                            return f64::INFINITY;
                        }
                        continue;
                    }
                    let law = conditional_law(&d, &k, &[x_star]).unwrap();
                    assert_eq!(law.donors(), &[0, 1, 2]);
                    for (a, b) in law.weights().iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                    for yq in [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0] {
                        let direct: f64 = donors_y
                            .iter()
                            .zip(&want)
                            .filter(|(v, _)| **v <= yq)
                            .map(|(_, w)| w)
                            .sum();
                        worst = worst.max((conditional_cdf(&law, &[yq]) - direct).abs());
                    }
                    let mean = law.expect(|_, y| vec![y[0]]);
                    let direct: f64 = donors_y.iter().zip(&want).map(|(v, w)| v * w).sum();
                    worst = worst.max((mean[0] - direct).abs());
                }
            }
        }
        worst
    }

    /// Analytic Jacobians of the built-ins against central differences, 100 points each.
    pub fn builtin_jacobians() -> Vec<(String, f64)> {
        let mut r = rng(31);
        let mut out = Vec::new();
        for (g, dx, dy) in builtins() {
            let (rr, p) = g.dims();
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let x: Vec<f64> = (0..dx).map(|_| normal(&mut r)).collect();
                let y: Vec<f64> = (0..dy).map(|_| normal(&mut r)).collect();
                let th = random_theta(&mut r, g.as_ref());
                let mut an = vec![0.0; rr * p];
                g.jacobian(&x, &y, &th, &mut an);
                let fd = fd_jacobian(
                    |t| {
                        let mut o = vec![0.0; rr];
                        g.eval(&x, &y, t, &mut o);
                        o
                    },
                    &th,
                    rr,
                );
                worst = worst.max(rel_err(&an, &fd));
            }
            out.push((format!("{}/r={rr}", g.name()), worst));
        }
        out
    }

    /// Imputed Jacobian stack against differences of the imputed estimating functions.
    pub fn imputed_jacobians() -> Vec<(String, f64)> {
        let mut r = rng(32);
        let n = 60;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..n {
            let x = normal(&mut r);
            xs.push(vec![x]);
            ys.push((i % 3 != 0).then(|| vec![0.8 * x + normal(&mut r)]));
        }
        let d = Arc::new(Dataset::from_rows(&xs, &ys).unwrap());
        let es = impute(d, &KernelSpec::new(2, 0.5).unwrap(), 5, 7).unwrap();
        let fns: Vec<Box<dyn EstimatingFunction>> =
            vec![Box::new(mean_fn(1).unwrap()), Box::new(correlation_fn()), Box::new(linreg_fn())];
        let mut out = Vec::new();
        for g in &fns {
            let (rr, _) = g.dims();
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let th = random_theta(&mut r, g.as_ref());
                let jac = imputed_estfun_jacobian(&es, g.as_ref(), &th).unwrap();
                // (n r) x p row-major, the same layout as the stacked blocks
                let fd = fd_jacobian(
                    |t| imputed_estfun(&es, g.as_ref(), t).unwrap().as_slice().to_vec(),
                    &th,
                    n * rr,
                );
                let an: Vec<f64> = (0..n).flat_map(|i| jac.block(i).to_vec()).collect();
                worst = worst.max(rel_err(&an, &fd));
            }
            out.push((format!("imputed {}", g.name()), worst));
        }
        out
    }
}
