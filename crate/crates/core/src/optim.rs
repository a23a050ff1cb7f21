//! Damped Newton minimiser with a Nelder–Mead fallback.
//!
//! Objectives may be undefined at some points (returned as `None`); the
//! search treats those as `+inf` and retreats.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    /// Approximate Hessian; need not be positive definite.
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iter: usize,
    /// Stop when the Euclidean norm of the free gradient is below this.
    pub gtol: f64,
    /// Stop when a step is shorter than `xtol * (1 + |x|)`.
    pub xtol: f64,
    pub fallback: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-6,
            xtol: 1e-9,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub used_fallback: bool,
    /// The start itself was outside the objective's domain.
    pub infeasible_start: bool,
}

fn free_index(free: &[bool]) -> Vec<usize> {
    free.iter().enumerate().filter(|(_, &f)| f).map(|(j, _)| j).collect()
}

fn restrict(e: &Eval, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let g = DVector::from_iterator(idx.len(), idx.iter().map(|&j| e.grad[j]));
    let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| e.hess[(idx[a], idx[b])]);
    (g, h)
}

/// Minimise over the coordinates flagged in `free`; the rest stay at `x0`.
/// `full` returns value, gradient and Hessian; `value` only the value.
pub fn minimize<F, V>(full: F, value: V, x0: &[f64], free: &[bool], opts: &Options) -> Outcome
where
    F: Fn(&[f64]) -> Option<Eval>,
    V: Fn(&[f64]) -> Option<f64>,
{
    assert_eq!(x0.len(), free.len());
    let idx = free_index(free);
    let Some(first) = full(x0) else {
        return Outcome {
            x: x0.to_vec(),
            value: f64::INFINITY,
            grad_norm: f64::INFINITY,
            converged: false,
            iterations: 0,
            used_fallback: false,
            infeasible_start: true,
        };
    };
    let mut out = damped_newton(&full, &value, x0.to_vec(), first, &idx, opts);
    if !out.converged && opts.fallback && !idx.is_empty() {
        let (xn, _) = nelder_mead(&value, &out.x, &idx, 400 * (idx.len() + 1));
        if let Some(e) = full(&xn) {
            let mut again = damped_newton(&full, &value, xn, e, &idx, opts);
            again.iterations += out.iterations;
            again.used_fallback = true;
            if again.converged || again.value <= out.value {
                out = again;
            }
        }
    }
    out
}

fn damped_newton<F, V>(full: &F, value: &V, mut x: Vec<f64>, mut cur: Eval, idx: &[usize], opts: &Options) -> Outcome
where
    F: Fn(&[f64]) -> Option<Eval>,
    V: Fn(&[f64]) -> Option<f64>,
{
    let mut lambda = 1e-4;
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (g, h) = restrict(&cur, idx);
        grad_norm = g.norm();
        // polish past the acceptance tolerance while steps still help
        if grad_norm <= opts.gtol * 1e-4 {
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let scale = (0..h.nrows()).map(|k| h[(k, k)].abs()).fold(0.0, f64::max).max(1e-12);
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut accepted = None;
        for _ in 0..60 {
            let mut m = h.clone();
            for k in 0..m.nrows() {
                m[(k, k)] += lambda * scale;
            }
            let Some(ch) = nalgebra::Cholesky::new(m) else {
                lambda = (lambda * 10.0).max(1e-8);
                continue;
            };
            let step = -ch.solve(&g);
            if step.norm() <= opts.xtol * (1.0 + xnorm) {
                break;
            }
            let mut trial = x.clone();
            for (a, &j) in idx.iter().enumerate() {
                trial[j] += step[a];
            }
            match value(&trial) {
                Some(v) if v < cur.value => {
                    accepted = Some(trial);
                    lambda = (lambda * 0.2).max(1e-12);
                    break;
                }
                _ => lambda = (lambda * 10.0).max(1e-8),
            }
        }
        let Some(trial) = accepted else {
            break;
        };
        match full(&trial) {
            Some(e) => {
                x = trial;
                cur = e;
            }
            None => break,
        }
    }
    Outcome {
        x,
        value: cur.value,
        grad_norm,
        converged: grad_norm <= opts.gtol,
        iterations,
        used_fallback: false,
        infeasible_start: false,
    }
}

/// Nelder–Mead over the coordinates in `idx`. Undefined points count as `+inf`.
pub fn nelder_mead<V>(value: &V, x0: &[f64], idx: &[usize], max_evals: usize) -> (Vec<f64>, f64)
where
    V: Fn(&[f64]) -> Option<f64>,
{
    let k = idx.len();
    let eval = |v: &DVector<f64>| {
        let mut x = x0.to_vec();
        for (a, &j) in idx.iter().enumerate() {
            x[j] = v[a];
        }
        value(&x).unwrap_or(f64::INFINITY)
    };
    let base = DVector::from_iterator(k, idx.iter().map(|&j| x0[j]));
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((base.clone(), eval(&base)));
    for a in 0..k {
        let mut v = base.clone();
        v[a] += 0.05 * base[a].abs().max(0.1);
        let f = eval(&v);
        simplex.push((v, f));
    }
    let mut evals = k + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[k].1);
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| (v - &simplex[0].0).amax())
            .fold(0.0, f64::max);
        if best.is_finite() && (worst - best).abs() <= 1e-15 * (1.0 + best.abs()) && size <= 1e-10 {
            break;
        }
        if size <= 1e-13 {
            break;
        }
        let centroid = simplex[..k].iter().fold(DVector::zeros(k), |acc, (v, _)| acc + v) / k as f64;
        let xr = &centroid + (&centroid - &simplex[k].0);
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = &centroid + 2.0 * (&centroid - &simplex[k].0);
            let fe = eval(&xe);
            evals += 1;
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let xc = if fr < simplex[k].1 {
                &centroid + 0.5 * (&xr - &centroid)
            } else {
                &centroid + 0.5 * (&simplex[k].0 - &centroid)
            };
            let fc = eval(&xc);
            evals += 1;
            if fc < simplex[k].1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let b = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = &b + 0.5 * (&s.0 - &b);
                    s.1 = eval(&s.0);
                }
                evals += k;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut x = x0.to_vec();
    for (a, &j) in idx.iter().enumerate() {
        x[j] = simplex[0].0[a];
    }
    (x, simplex[0].1)
}
