//! Empirical likelihood: the inner Lagrange dual and the outer maximum
//! empirical likelihood estimator.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estfun::EstimatingFunction;
use crate::imputation::ExtendedSample;
use crate::linalg::{spd_solve, RowMatrix};
use crate::optim::{self, Eval, Options};
use crate::par;
use crate::rng::{substream, Domain};
use rand_distr::{Distribution, StandardNormal};

const INNER_TOL: f64 = 1e-10;
const INNER_MAX_ITER: usize = 200;
/// `|t| * max|G_i|` beyond this means the dual is unbounded.
const DIVERGENCE: f64 = 1e12;

/// Owen's pseudo-logarithm: `ln z` above `eps`, its second-order Taylor
/// continuation below. Returns value, first and second derivative.
fn log_star(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, (2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

#[derive(Debug, Clone)]
pub struct LagrangeSolution {
    pub t: DVector<f64>,
    /// `sum ln(1 + t'G_i)`; `+inf` when infeasible.
    pub logelr: f64,
    pub feasible: bool,
    pub iterations: usize,
    /// `|n^{-1} sum G_i / (1 + t'G_i)|` at the returned `t`.
    pub q1_norm: f64,
    /// `1 + t'G_i`.
    pub z: Vec<f64>,
}

impl LagrangeSolution {
    /// `p_i = 1 / (n (1 + t'G_i))`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.z.len() as f64;
        self.z.iter().map(|z| 1.0 / (n * z)).collect()
    }
}

fn dual(g: &RowMatrix, t: &DVector<f64>, eps: f64, z: &mut [f64]) -> f64 {
    let mut f = 0.0;
    for (i, row) in g.rows_iter().enumerate() {
        let zi = 1.0 + row.iter().zip(t.iter()).map(|(a, b)| a * b).sum::<f64>();
        z[i] = zi;
        f += log_star(zi, eps).0;
    }
    f
}

/// Maximise `sum log*(1 + t'G_i)` over `t`.
pub fn solve_lagrange(g: &RowMatrix) -> Result<LagrangeSolution> {
    solve_lagrange_from(g, None)
}

/// As [`solve_lagrange`], starting the Newton iteration at `t0`.
pub fn solve_lagrange_from(g: &RowMatrix, t0: Option<&DVector<f64>>) -> Result<LagrangeSolution> {
    let (n, r) = (g.nrows(), g.ncols());
    if n <= r {
        return Err(Error::InsufficientData(format!(
            "empirical likelihood needs more rows ({n}) than equations ({r})"
        )));
    }
    let eps = 1.0 / n as f64;
    let gmax = g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut t = match t0 {
        Some(t0) if t0.len() == r && t0.iter().all(|v| v.is_finite()) => t0.clone(),
        _ => DVector::zeros(r),
    };
    let mut z = vec![0.0; n];
    let mut f = dual(g, &t, eps, &mut z);
    if t0.is_some() && f < 0.0 {
        // a warm start worse than the origin
        t.fill(0.0);
        f = dual(g, &t, eps, &mut z);
    }
    let mut ztrial = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut q1_norm;
    let mut polished = false;
    loop {
        let mut grad = DVector::<f64>::zeros(r);
        let mut hess = DMatrix::<f64>::zeros(r, r);
        for (i, row) in g.rows_iter().enumerate() {
            let (_, d1, d2) = log_star(z[i], eps);
            for a in 0..r {
                grad[a] += d1 * row[a];
                for b in a..r {
                    hess[(a, b)] -= d2 * row[a] * row[b];
                }
            }
        }
        crate::linalg::symmetrize_upper(&mut hess);
        q1_norm = grad.norm() / n as f64;
        // sum p_i = 1 - t'Q_n1, which rules out the unbounded direction
        let mass_gap = t.dot(&grad).abs() / n as f64;
        if q1_norm <= INNER_TOL && mass_gap <= INNER_TOL {
            converged = true;
            // one more Newton step takes t to machine precision
            if polished || q1_norm == 0.0 {
                break;
            }
            polished = true;
        }
        if iterations >= INNER_MAX_ITER {
            break;
        }
        iterations += 1;
        let Some(step) = spd_solve(&hess, &grad) else { break };
        let mut s = 1.0;
        let mut moved = false;
        while s > 1e-12 {
            let trial = &t + &step * s;
            let ft = dual(g, &trial, eps, &mut ztrial);
            // near the optimum the gain is below the rounding error of f
            if ft.is_finite() && ft >= f - 1e-14 * (1.0 + f.abs()) {
                moved = true;
                t = trial;
                f = ft;
                std::mem::swap(&mut z, &mut ztrial);
                break;
            }
            s *= 0.5;
        }
        if !moved {
            if converged {
                break;
            }
            // no ascent available at machine precision
            converged = q1_norm <= 1e-8 * gmax.max(1.0) && mass_gap <= 1e-8;
            break;
        }
        if t.norm() * gmax > DIVERGENCE {
            diverged = true;
            break;
        }
    }
    let feasible = converged && !diverged && z.iter().all(|&zi| zi >= eps);
    let logelr = if feasible {
        z.iter().map(|zi| zi.ln()).sum::<f64>().max(0.0)
    } else {
        f64::INFINITY
    };
    Ok(LagrangeSolution {
        t,
        logelr,
        feasible,
        iterations,
        q1_norm,
        z,
    })
}

/// Hessian of the dual objective `sum ln(1 + t'G_i)` at `t`.
pub fn dual_hessian(g: &RowMatrix, t: &DVector<f64>) -> DMatrix<f64> {
    let r = g.ncols();
    let mut h = DMatrix::zeros(r, r);
    for row in g.rows_iter() {
        let gi = DVector::from_column_slice(row);
        let z = 1.0 + gi.dot(t);
        h -= &gi * gi.transpose() / (z * z);
    }
    h
}

/// `l_n(theta) = -log(L_n(theta) / n^{-n})`; `+inf` outside the hull or
/// the domain of `g`.
pub fn el_ratio(es: &ExtendedSample, g: &dyn EstimatingFunction, theta: &[f64]) -> Result<f64> {
    if g.check_theta(theta).is_err() {
        return Ok(f64::INFINITY);
    }
    let gm = es.estfun(g, theta)?;
    Ok(solve_lagrange(&gm)?.logelr)
}

/// The outer objective `l_n(theta) / n` with a cached dual solution for
/// warm starts.
pub(crate) struct Profile<'a> {
    es: &'a ExtendedSample,
    g: &'a dyn EstimatingFunction,
    warm: RefCell<Option<DVector<f64>>>,
}

impl<'a> Profile<'a> {
    pub(crate) fn new(es: &'a ExtendedSample, g: &'a dyn EstimatingFunction) -> Self {
        Self {
            es,
            g,
            warm: RefCell::new(None),
        }
    }

    fn dual_at(&self, theta: &[f64]) -> Option<(RowMatrix, LagrangeSolution)> {
        self.g.check_theta(theta).ok()?;
        let gm = self.es.estfun(self.g, theta).ok()?;
        let sol = solve_lagrange_from(&gm, self.warm.borrow().as_ref()).ok()?;
        if !sol.feasible {
            return None;
        }
        *self.warm.borrow_mut() = Some(sol.t.clone());
        Some((gm, sol))
    }

    pub(crate) fn value(&self, theta: &[f64]) -> Option<f64> {
        self.dual_at(theta).map(|(_, s)| s.logelr / self.es.n() as f64)
    }

    /// Value, gradient `n^{-1} sum J_i't / z_i` and the Hessian of the
    /// profiled objective, omitting the second-derivative-of-g term.
    pub(crate) fn eval(&self, theta: &[f64]) -> Option<Eval> {
        let (gm, sol) = self.dual_at(theta)?;
        let jac = self.es.estfun_jacobian(self.g, theta).ok()?;
        let (r, p) = jac.dims();
        let n = gm.nrows();
        let t = &sol.t;
        let mut grad = DVector::<f64>::zeros(p);
        let mut cross = DMatrix::<f64>::zeros(p, r);
        let mut s = DMatrix::<f64>::zeros(r, r);
        let mut neg = DMatrix::<f64>::zeros(p, p);
        let mut jt = DVector::<f64>::zeros(p);
        for i in 0..n {
            let gi = gm.row(i);
            let ji = jac.block(i);
            let z = sol.z[i];
            jt.fill(0.0);
            for a in 0..r {
                for b in 0..p {
                    jt[b] += ji[a * p + b] * t[a];
                }
            }
            grad.axpy(1.0 / z, &jt, 1.0);
            for b in 0..p {
                for a in 0..r {
                    cross[(b, a)] += ji[a * p + b] / z - jt[b] * gi[a] / (z * z);
                }
                for c in 0..p {
                    neg[(b, c)] += jt[b] * jt[c] / (z * z);
                }
            }
            for a in 0..r {
                for c in 0..r {
                    s[(a, c)] += gi[a] * gi[c] / (z * z);
                }
            }
        }
        let sinv_ct = match nalgebra::Cholesky::new(s.clone()) {
            Some(ch) => ch.solve(&cross.transpose()),
            None => {
                let tol = 1e-14 * s.amax().max(f64::MIN_POSITIVE);
                s.pseudo_inverse(tol).ok()? * cross.transpose()
            }
        };
        let hess = (&cross * sinv_ct - neg) / n as f64;
        Some(Eval {
            value: sol.logelr / n as f64,
            grad: grad / n as f64,
            hess: crate::linalg::symmetrize(&hess),
        })
    }

    pub(crate) fn solution(&self, theta: &[f64]) -> Option<LagrangeSolution> {
        self.dual_at(theta).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    pub logelr: f64,
    pub q2_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ElFit {
    pub theta_hat: Vec<f64>,
    pub t: Vec<f64>,
    pub weights: Vec<f64>,
    pub logelr: f64,
    /// `|Q_n2|` at `theta_hat`.
    pub q2_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub candidates: Vec<Candidate>,
}

/// Minimise `l_n` over the free coordinates from a single start.
pub(crate) fn minimize_from(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    start: &[f64],
    free: &[bool],
) -> Candidate {
    let prof = Profile::new(es, g);
    let out = optim::minimize(
        |th| prof.eval(th),
        |th| prof.value(th),
        start,
        free,
        &Options::default(),
    );
    Candidate {
        start: start.to_vec(),
        logelr: out.value * es.n() as f64,
        theta: out.x,
        q2_norm: out.grad_norm,
        converged: out.converged,
        iterations: out.iterations,
    }
}

/// Maximum empirical likelihood estimate. Every start is run; the
/// converged candidate with the smallest `l_n` wins.
pub fn mele(es: &ExtendedSample, g: &dyn EstimatingFunction, starts: &[Vec<f64>]) -> Result<ElFit> {
    if starts.is_empty() {
        return Err(Error::Config("mele needs at least one start".into()));
    }
    let (r, p) = g.dims();
    if let Some(s) = starts.iter().find(|s| s.len() != p) {
        return Err(Error::Config(format!("start has length {}, expected {p}", s.len())));
    }
    if es.n() <= r {
        return Err(Error::InsufficientData(format!(
            "empirical likelihood needs more rows ({}) than equations ({r})",
            es.n()
        )));
    }
    let free = vec![true; p];
    let candidates = par::map_slice(starts, |s| minimize_from(es, g, s, &free));
    let best = candidates
        .iter()
        .filter(|c| c.converged)
        .min_by(|a, b| a.logelr.total_cmp(&b.logelr));
    let Some(best) = best else {
        if candidates.iter().all(|c| !c.logelr.is_finite()) {
            return Err(Error::Infeasible);
        }
        let c = candidates
            .iter()
            .min_by(|a, b| a.logelr.total_cmp(&b.logelr))
            .expect("non-empty");
        return Err(Error::NonConvergence {
            best_gradient: c.q2_norm,
            best_value: c.logelr,
            best_theta: c.theta.clone(),
        });
    };
    let sol = Profile::new(es, g)
        .solution(&best.theta)
        .ok_or(Error::Infeasible)?;
    Ok(ElFit {
        theta_hat: best.theta.clone(),
        t: sol.t.iter().copied().collect(),
        weights: sol.weights(),
        logelr: sol.logelr,
        q2_norm: best.q2_norm,
        converged: true,
        iterations: candidates.iter().map(|c| c.iterations).sum(),
        candidates,
    })
}

/// Solve `n^{-1} sum g~_i(theta) = 0` in the least-squares sense, starting
/// from the estimating function's own rough value.
pub fn moment_start(es: &ExtendedSample, g: &dyn EstimatingFunction) -> Vec<f64> {
    let x0 = g.initial_theta(es.data());
    let n = es.n() as f64;
    let value = |th: &[f64]| -> Option<f64> {
        g.check_theta(th).ok()?;
        let gm = es.estfun(g, th).ok()?;
        Some(0.5 * gm.column_mean().norm_squared())
    };
    let full = |th: &[f64]| -> Option<Eval> {
        g.check_theta(th).ok()?;
        let gm = es.estfun(g, th).ok()?;
        let jac = es.estfun_jacobian(g, th).ok()?;
        let gbar = gm.column_mean();
        let d = jac.mean();
        Some(Eval {
            value: 0.5 * gbar.norm_squared(),
            grad: d.transpose() * &gbar,
            hess: d.transpose() * &d,
        })
    };
    let opts = Options {
        gtol: 1e-12 / n.max(1.0),
        fallback: false,
        ..Options::default()
    };
    let out = optim::minimize(full, value, &x0, &vec![true; x0.len()], &opts);
    if out.value.is_finite() {
        out.x
    } else {
        x0
    }
}

pub const JITTERED_STARTS: usize = 4;

/// The moment start plus jittered copies. Jitter is Gaussian with scale
/// `0.1 * max(|theta_j|, 0.1)`; copies outside the domain are redrawn.
pub fn default_starts(es: &ExtendedSample, g: &dyn EstimatingFunction) -> Vec<Vec<f64>> {
    let base = moment_start(es, g);
    let mut starts = vec![base.clone()];
    let mut rng = substream(es.seed(), Domain::StartJitter, 0);
    let mut attempts = 0;
    while starts.len() <= JITTERED_STARTS && attempts < 50 * JITTERED_STARTS {
        attempts += 1;
        let s: Vec<f64> = base
            .iter()
            .map(|&b| {
                let z: f64 = StandardNormal.sample(&mut rng);
                b + 0.1 * b.abs().max(0.1) * z
            })
            .collect();
        if g.check_theta(&s).is_ok() {
            starts.push(s);
        }
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::estfun::{linreg_fn, mean_fn};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn column(v: &[f64]) -> RowMatrix {
        RowMatrix::from_vec(v.len(), 1, v.to_vec())
    }

    fn mean_sample(ys: &[f64]) -> ExtendedSample {
        let x: Vec<Vec<f64>> = ys.iter().map(|_| vec![0.0]).collect();
        let y: Vec<Option<Vec<f64>>> = ys.iter().map(|&v| Some(vec![v])).collect();
        ExtendedSample::complete(Arc::new(Dataset::from_rows(&x, &y).unwrap())).unwrap()
    }

    #[test]
    fn centred_rows_give_zero() {
        let s = solve_lagrange(&column(&[-1.0, 0.0, 1.0])).unwrap();
        assert!(s.feasible);
        assert_eq!(s.logelr, 0.0);
        for p in s.weights() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn one_sided_rows_infeasible() {
        let s = solve_lagrange(&column(&[0.5, 1.0, 2.0])).unwrap();
        assert!(!s.feasible);
        assert_eq!(s.logelr, f64::INFINITY);
    }

    #[test]
    fn too_few_rows() {
        assert!(solve_lagrange(&RowMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_balance() {
        let g = RowMatrix::from_rows(&[
            vec![1.0, 0.3],
            vec![-0.4, 1.2],
            vec![-0.9, -0.8],
            vec![0.5, -0.6],
            vec![0.2, 0.4],
        ]);
        let s = solve_lagrange(&g).unwrap();
        assert!(s.feasible);
        let w = s.weights();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        for k in 0..2 {
            let m: f64 = (0..5).map(|i| w[i] * g.get(i, k)).sum();
            assert!(m.abs() < 1e-8);
        }
        let lw: f64 = -w.iter().map(|p| (5.0 * p).ln()).sum::<f64>();
        assert_relative_eq!(lw, s.logelr, epsilon = 1e-10);
        let h = dual_hessian(&g, &s.t);
        assert!(crate::linalg::min_eigenvalue(&-h) >= 0.0);
    }

    #[test]
    fn mean_of_three() {
        let es = mean_sample(&[1.0, 2.0, 3.0]);
        let g = mean_fn(1).unwrap();
        assert_eq!(el_ratio(&es, &g, &[2.0]).unwrap(), 0.0);
        assert!(el_ratio(&es, &g, &[2.5]).unwrap() > 0.0);
        assert_eq!(el_ratio(&es, &g, &[3.5]).unwrap(), f64::INFINITY);
        let fit = mele(&es, &g, &[vec![2.7]]).unwrap();
        assert_relative_eq!(fit.theta_hat[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn exact_line() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![2.0 + 0.5 * i as f64]).collect();
        let ys: Vec<Option<Vec<f64>>> = (0..10).map(|i| Some(vec![i as f64])).collect();
        let es = ExtendedSample::complete(Arc::new(Dataset::from_rows(&xs, &ys).unwrap())).unwrap();
        let g = linreg_fn();
        let fit = mele(&es, &g, &default_starts(&es, &g)).unwrap();
        assert_relative_eq!(fit.theta_hat[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(fit.theta_hat[1], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn shift_equivariance() {
        let base = [0.3, -1.2, 2.2, 0.9, 1.4, -0.2, 0.0, 0.7];
        let g = mean_fn(1).unwrap();
        let a = mele(&mean_sample(&base), &g, &[vec![0.0]]).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 10.0).collect();
        let b = mele(&mean_sample(&shifted), &g, &[vec![10.0]]).unwrap();
        assert_relative_eq!(b.theta_hat[0] - a.theta_hat[0], 10.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_starts_rejected() {
        let es = mean_sample(&[1.0, 2.0, 3.0]);
        assert!(mele(&es, &mean_fn(1).unwrap(), &[]).is_err());
    }
}
