//! Variance estimation, the quadratic-form limit law and confidence sets:
//! normal intervals, chi-square-mixture thresholds, and the reimputing
//! bootstrap.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::el::{default_starts, el_ratio, mele, minimize_from, ElFit, Profile};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estfun::EstimatingFunction;
use crate::imputation::{impute, ExtendedSample};
use crate::kernel::{estimate_propensity, KernelSpec, Smoother};
use crate::linalg::{spd_inverse, sym_sqrt_clipped, symmetrize};
use crate::par;
use crate::rng::{derive_seed, substream, Domain};
use crate::stats::{normal_quantile, quantile_sorted, sort_values};

/// Plug-in estimates of the limiting covariance quantities.
#[derive(Debug, Clone)]
pub struct AsymptoticEstimates {
    /// `E[p^{-1} Var(g|X) + E(g|X) E(g|X)']`.
    pub gamma: DMatrix<f64>,
    /// `n^{-1} sum g~_i g~_i'`.
    pub gamma_tilde: DMatrix<f64>,
    /// `n^{-1} sum dg~_i/dtheta`, `r x p`.
    pub d: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    /// Negative eigenvalues of `gamma` set to zero before the square root.
    pub clipped_eigenvalues: usize,
    /// Versions with the finite-`kappa` imputation variance added.
    pub fixed_kappa: Option<FixedKappa>,
}

#[derive(Debug, Clone)]
pub struct FixedKappa {
    pub kappa: usize,
    pub gamma: DMatrix<f64>,
    pub gamma_tilde: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

fn sandwich(d: &DMatrix<f64>, gt_inv: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let v = spd_inverse(&(d.transpose() * gt_inv * d), "D' Gamma~^{-1} D")?;
    let a = gt_inv * d * &v;
    let sigma = symmetrize(&(a.transpose() * gamma * &a));
    Ok((v, sigma))
}

/// Kernel plug-in for `Gamma = E[ggT] + E[(1/p - 1) Var(g|X)]`, with
/// `E[ggT]` using observed `g` on complete rows and the kernel second
/// moment on missing ones. Also returns `n^{-1} sum (1 - p_i) Var_i`.
pub fn kernel_gamma(
    data: &Dataset,
    g: &dyn EstimatingFunction,
    theta: &[f64],
    k: &KernelSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (r, _) = g.dims();
    let n = data.n();
    let prop = estimate_propensity(data, k)?;
    let sm = Smoother::new(data);
    let parts = par::map_range(n, |i| {
        let x = data.x_row(i);
        let law = sm.law_with_fallback(k, x);
        let mut m = DVector::<f64>::zeros(r);
        let mut second = DMatrix::<f64>::zeros(r, r);
        let mut buf = vec![0.0; r];
        for (&l, &w) in law.donors().iter().zip(law.weights()) {
            if w == 0.0 {
                continue;
            }
            g.eval(x, data.y_row(l), theta, &mut buf);
            let v = DVector::from_column_slice(&buf);
            m.axpy(w, &v, 1.0);
            second += w * &v * v.transpose();
        }
        let var = symmetrize(&(&second - &m * m.transpose()));
        let egg = if data.is_complete(i) {
            g.eval(x, data.y_row(i), theta, &mut buf);
            let gi = DVector::from_column_slice(&buf);
            &gi * gi.transpose()
        } else {
            second
        };
        let p = prop.eval(x);
        (egg + (1.0 / p - 1.0) * &var, (1.0 - p) * var)
    });
    let mut gamma = DMatrix::zeros(r, r);
    let mut extra = DMatrix::zeros(r, r);
    for (a, b) in &parts {
        gamma += a;
        extra += b;
    }
    if !gamma.iter().all(|v| v.is_finite()) {
        return Err(Error::Conditioning("non-finite kernel Gamma estimate".into()));
    }
    Ok((symmetrize(&(gamma / n as f64)), extra / n as f64))
}

/// Plug-in `Gamma`, `Gamma~`, `D`, `V`, `Sigma` and `Omega` at `theta_hat`.
/// Conditional moments of `g` given `X` use the kernel law of `k`.
pub fn estimate_asymptotics(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    theta_hat: &[f64],
    k: Option<&KernelSpec>,
) -> Result<AsymptoticEstimates> {
    let gm = es.estfun(g, theta_hat)?;
    let gamma_tilde = symmetrize(&gm.second_moment());
    let d = es.estfun_jacobian(g, theta_hat)?.mean();
    let gt_inv = spd_inverse(&gamma_tilde, "Gamma~")?;

    let data = es.data();
    let mut kappa_term = None;
    let gamma = match (data.n_missing(), k.or(es.kernel())) {
        (0, _) | (_, None) => gamma_tilde.clone(),
        (_, Some(k)) => {
            let (gamma, extra) = kernel_gamma(data, g, theta_hat, k)?;
            kappa_term = Some(extra);
            gamma
        }
    };

    let (v, sigma) = sandwich(&d, &gt_inv, &gamma)?;
    let (root, clipped) = sym_sqrt_clipped(&gamma);
    if clipped > 0 {
        log::warn!("{clipped} negative eigenvalue(s) of the Gamma estimate clipped to zero");
    }
    let omega = symmetrize(&(&root * &gt_inv * &d * &v * d.transpose() * &gt_inv * &root));

    let fixed_kappa = match kappa_term {
        Some(extra) => {
            let kinv = 1.0 / es.kappa() as f64;
            let gk = &gamma + kinv * &extra;
            let gtk = &gamma_tilde + kinv * &extra;
            let gtk_inv = spd_inverse(&gtk, "fixed-kappa Gamma~")?;
            let (_, sk) = sandwich(&d, &gtk_inv, &gk)?;
            Some(FixedKappa {
                kappa: es.kappa(),
                gamma: gk,
                gamma_tilde: gtk,
                sigma: sk,
            })
        }
        None => None,
    };

    Ok(AsymptoticEstimates {
        gamma,
        gamma_tilde,
        d,
        v,
        sigma,
        omega,
        clipped_eigenvalues: clipped,
        fixed_kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMethod {
    Normal,
    ChisqMix,
    Bootstrap,
    /// Profile intervals at a threshold supplied by the caller.
    Threshold,
}

impl CalibrationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::ChisqMix => "chisq-mix",
            Self::Bootstrap => "bootstrap",
            Self::Threshold => "threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// The endpoint is where the profile left the convex-hull domain
    /// rather than a crossing of the threshold.
    pub lower_at_boundary: bool,
    pub upper_at_boundary: bool,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self {
            lower: v,
            upper: v,
            lower_at_boundary: false,
            upper_at_boundary: false,
        }
    }
    pub fn undetermined() -> Self {
        Self::point(f64::NAN)
    }
    pub fn is_determined(&self) -> bool {
        !self.lower.is_nan() && !self.upper.is_nan()
    }
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    pub alpha: Option<f64>,
    pub intervals: Vec<Interval>,
    /// Region threshold on `R_n`; absent for normal intervals.
    pub threshold: Option<f64>,
    /// `B` for the bootstrap, `M` for the Monte Carlo mixture.
    pub draws: Option<usize>,
    /// Bootstrap resamples redrawn because they had no complete rows.
    pub redrawn: usize,
    /// Bootstrap resamples whose estimator failed.
    pub discarded: usize,
    /// Bootstrap resamples in which `theta_hat` was outside the hull.
    pub infinite: usize,
    /// Sorted bootstrap statistics.
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    fn new(method: CalibrationMethod, alpha: Option<f64>) -> Self {
        Self {
            method,
            alpha,
            intervals: Vec::new(),
            threshold: None,
            draws: None,
            redrawn: 0,
            discarded: 0,
            infinite: 0,
            values: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Bootstrap `1 - alpha` quantile of the retained statistics.
    pub fn quantile(&self, alpha: f64) -> Option<f64> {
        (!self.values.is_empty()).then(|| quantile_sorted(&self.values, 1.0 - alpha))
    }

    pub fn to_key_value(&self, names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = {}", self.method.as_str());
        if let Some(a) = self.alpha {
            let _ = writeln!(s, "alpha = {a}");
        }
        match self.method {
            CalibrationMethod::Bootstrap => {
                let _ = writeln!(s, "B = {}", self.draws.unwrap_or(0));
            }
            CalibrationMethod::ChisqMix => {
                let _ = writeln!(s, "M = {}", self.draws.unwrap_or(0));
            }
            _ => {}
        }
        if let Some(q) = self.threshold {
            let _ = writeln!(s, "threshold = {q}");
        }
        if self.method == CalibrationMethod::Bootstrap {
            let _ = writeln!(s, "redrawn = {}", self.redrawn);
            let _ = writeln!(s, "discarded = {}", self.discarded);
            let _ = writeln!(s, "outside_hull = {}", self.infinite);
        }
        for (j, iv) in self.intervals.iter().enumerate().filter(|(_, iv)| iv.is_determined()) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("theta{}", j + 1));
            let _ = writeln!(s, "{name}.lower = {}", iv.lower);
            let _ = writeln!(s, "{name}.upper = {}", iv.upper);
            if iv.lower_at_boundary || iv.upper_at_boundary {
                let _ = writeln!(
                    s,
                    "{name}.boundary = {}{}",
                    if iv.lower_at_boundary { "lower" } else { "" },
                    if iv.upper_at_boundary { " upper" } else { "" }
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }
}

/// `theta_j +- z_{1 - alpha/2} sqrt(Sigma_jj / n)`.
pub fn ci_normal(theta: &[f64], sigma: &DMatrix<f64>, n: usize, alpha: f64) -> CalibrationResult {
    let z = normal_quantile(1.0 - alpha / 2.0).max(0.0);
    let mut out = CalibrationResult::new(CalibrationMethod::Normal, Some(alpha));
    out.intervals = theta
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let half = z * (sigma[(j, j)].max(0.0) / n as f64).sqrt();
            Interval {
                lower: t - half,
                upper: t + half,
                lower_at_boundary: false,
                upper_at_boundary: false,
            }
        })
        .collect();
    out
}

const MIX_CHUNK: usize = 4096;
pub const MIN_MIX_DRAWS: usize = 1000;

/// Monte Carlo `1 - alpha` quantile of `Q' Omega Q`, `Q ~ N(0, I_r)`.
pub fn chisq_mix_quantile(omega: &DMatrix<f64>, alpha: f64, m: usize, seed: u64) -> Result<f64> {
    if m < MIN_MIX_DRAWS {
        return Err(Error::Config(format!("need at least {MIN_MIX_DRAWS} Monte Carlo draws, got {m}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let lambda: Vec<f64> = symmetrize(omega)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    let chunks = m.div_ceil(MIX_CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut rng = substream(seed, Domain::ChisqMix, c as u64);
        let len = MIX_CHUNK.min(m - c * MIX_CHUNK);
        (0..len)
            .map(|_| {
                lambda
                    .iter()
                    .map(|&l| {
                        let z: f64 = rng.sample(StandardNormal);
                        l * z * z
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let draws = sort_values(parts.concat());
    Ok(quantile_sorted(&draws, 1.0 - alpha))
}

/// `R_n(theta) = 2 l_n(theta) - 2 l_n(theta_hat)`.
pub fn elr_statistic(es: &ExtendedSample, g: &dyn EstimatingFunction, fit: &ElFit, theta: &[f64]) -> Result<f64> {
    let l = el_ratio(es, g, theta)?;
    Ok((2.0 * (l - fit.logelr)).max(0.0))
}

/// Membership of `theta` in `{R_n <= q}`.
pub fn in_region(es: &ExtendedSample, g: &dyn EstimatingFunction, fit: &ElFit, theta: &[f64], q: f64) -> Result<bool> {
    Ok(elr_statistic(es, g, fit, theta)? <= q)
}

const BISECTION_TOL: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 60;

struct ProfileWalker<'a> {
    es: &'a ExtendedSample,
    g: &'a dyn EstimatingFunction,
    fit: &'a ElFit,
    j: usize,
    free: Vec<bool>,
}

impl ProfileWalker<'_> {
    /// Profile statistic at `theta_j = v`, re-optimising the others from
    /// `warm` (then from `theta_hat`). Returns the optimiser's point too.
    fn eval(&self, v: f64, warm: &[f64]) -> Option<(f64, Vec<f64>)> {
        let p = warm.len();
        let attempt = |base: &[f64]| -> Option<(f64, Vec<f64>)> {
            let mut start = base.to_vec();
            start[self.j] = v;
            if p == 1 {
                let l = el_ratio(self.es, self.g, &start).ok()?;
                return l.is_finite().then_some((l, start));
            }
            let c = minimize_from(self.es, self.g, &start, &self.free);
            c.logelr.is_finite().then_some((c.logelr, c.theta))
        };
        let (l, th) = attempt(warm).or_else(|| attempt(&self.fit.theta_hat))?;
        Some(((2.0 * (l - self.fit.logelr)).max(0.0), th))
    }

    /// Endpoint in direction `dir` and whether it sits at the hull boundary.
    fn endpoint(&self, q: f64, dir: f64, step0: f64) -> (f64, bool) {
        let centre = self.fit.theta_hat[self.j];
        let mut lo = centre;
        let mut warm = self.fit.theta_hat.clone();
        let mut step = step0;
        let mut hi = None;
        let mut hi_infeasible = false;
        for _ in 0..MAX_DOUBLINGS {
            let v = centre + dir * step;
            match self.eval(v, &warm) {
                Some((r, th)) if r <= q => {
                    lo = v;
                    warm = th;
                    step *= 2.0;
                }
                Some(_) => {
                    hi = Some(v);
                    break;
                }
                None => {
                    hi = Some(v);
                    hi_infeasible = true;
                    break;
                }
            }
        }
        let Some(mut hi) = hi else {
            return (dir * f64::INFINITY, false);
        };
        while (hi - lo).abs() > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            match self.eval(mid, &warm) {
                Some((r, th)) if r <= q => {
                    lo = mid;
                    warm = th;
                }
                other => {
                    hi = mid;
                    hi_infeasible = other.is_none();
                }
            }
        }
        if hi_infeasible {
            (lo, true)
        } else {
            (0.5 * (lo + hi), false)
        }
    }
}

/// Profile intervals `{theta_j : min_{theta_-j} R_n(theta) <= q}`.
pub fn ci_elr(es: &ExtendedSample, g: &dyn EstimatingFunction, fit: &ElFit, q: f64) -> Result<CalibrationResult> {
    let all: Vec<usize> = (0..fit.theta_hat.len()).collect();
    ci_elr_for(es, g, fit, q, &all)
}

/// As [`ci_elr`] for the listed coordinates only; the other intervals are
/// left undetermined (NaN).
pub fn ci_elr_for(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    q: f64,
    coords: &[usize],
) -> Result<CalibrationResult> {
    if !(q >= 0.0) {
        return Err(Error::Config(format!("threshold must be nonnegative, got {q}")));
    }
    let p = fit.theta_hat.len();
    let mut out = CalibrationResult::new(CalibrationMethod::Threshold, None);
    out.threshold = Some(q);
    if q == 0.0 {
        out.intervals = fit.theta_hat.iter().map(|&t| Interval::point(t)).collect();
        return Ok(out);
    }
    // R_n ~ (theta_j - theta_hat_j)^2 / (H^{-1})_jj with H the Hessian of l_n
    let hinv = Profile::new(es, g)
        .eval(&fit.theta_hat)
        .and_then(|e| spd_inverse(&(e.hess * es.n() as f64), "profile Hessian").ok());
    let found = par::map_slice(coords, |&j| {
        let walker = ProfileWalker {
            es,
            g,
            fit,
            j,
            free: (0..p).map(|k| k != j).collect(),
        };
        let scale = hinv
            .as_ref()
            .map(|h| h[(j, j)])
            .filter(|v| v.is_finite() && *v > 0.0)
            .map(|v| (q.max(1.0) * v).sqrt())
            .unwrap_or(0.1 * fit.theta_hat[j].abs().max(0.1));
        let step0 = 0.5 * scale;
        let (lower, lb) = walker.endpoint(q, -1.0, step0);
        let (upper, ub) = walker.endpoint(q, 1.0, step0);
        Interval {
            lower,
            upper,
            lower_at_boundary: lb,
            upper_at_boundary: ub,
        }
    });
    out.intervals = vec![Interval::undetermined(); p];
    for (&j, iv) in coords.iter().zip(found) {
        out.intervals[j] = iv;
    }
    Ok(out)
}

pub const MIN_BOOTSTRAP: usize = 100;
const MAX_REDRAWS_PER_RESAMPLE: usize = 10;

enum Resample {
    Value(f64),
    OutsideHull,
    Failed,
    NoComplete,
}

fn resample(es: &ExtendedSample, seed: u64, b: usize) -> (Option<Result<ExtendedSample>>, usize) {
    let data = es.data();
    let n = data.n();
    let mut rng = substream(seed, Domain::Bootstrap, b as u64);
    let mut redrawn = 0;
    let rows = loop {
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        if rows.iter().any(|&i| data.is_complete(i)) {
            break rows;
        }
        redrawn += 1;
        if redrawn > MAX_REDRAWS_PER_RESAMPLE {
            return (None, redrawn);
        }
    };
    let star = match data.select_rows(&rows) {
        Ok(d) => Arc::new(d),
        Err(e) => return (Some(Err(e)), redrawn),
    };
    let es_star = match es.kernel() {
        Some(k) => impute(star, k, es.kappa(), derive_seed(seed, Domain::BootstrapImputation, b as u64)),
        None => ExtendedSample::complete(star),
    };
    (Some(es_star), redrawn)
}

fn bootstrap_one(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    theta_hat: &[f64],
    seed: u64,
    b: usize,
) -> (Resample, usize) {
    let (es_star, redrawn) = resample(es, seed, b);
    let Some(es_star) = es_star else {
        return (Resample::NoComplete, redrawn);
    };
    let Ok(es_star) = es_star else {
        return (Resample::Failed, redrawn);
    };
    let at_hat = match el_ratio(&es_star, g, theta_hat) {
        Ok(v) => v,
        Err(_) => return (Resample::Failed, redrawn),
    };
    if !at_hat.is_finite() {
        return (Resample::OutsideHull, redrawn);
    }
    match mele(&es_star, g, &[theta_hat.to_vec()]) {
        Ok(fit) => (Resample::Value((2.0 * (at_hat - fit.logelr)).max(0.0)), redrawn),
        Err(_) => (Resample::Failed, redrawn),
    }
}

/// Profile statistics `2 min_{theta_-j} l*(theta_hat_j, theta_-j) - 2 l*(theta_hat*)`
/// for each listed coordinate.
fn bootstrap_profile_one(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    theta_hat: &[f64],
    seed: u64,
    b: usize,
    coords: &[usize],
) -> (Vec<Resample>, usize) {
    let (es_star, redrawn) = resample(es, seed, b);
    let fail = |r: fn() -> Resample| coords.iter().map(|_| r()).collect::<Vec<_>>();
    let Some(es_star) = es_star else {
        return (fail(|| Resample::NoComplete), redrawn);
    };
    let Ok(es_star) = es_star else {
        return (fail(|| Resample::Failed), redrawn);
    };
    let fit = mele(&es_star, g, &[theta_hat.to_vec()])
        .or_else(|_| mele(&es_star, g, &default_starts(&es_star, g)));
    let Ok(fit) = fit else {
        return (fail(|| Resample::Failed), redrawn);
    };
    let p = theta_hat.len();
    let out = coords
        .iter()
        .map(|&j| {
            let l = if p == 1 {
                el_ratio(&es_star, g, theta_hat).unwrap_or(f64::NAN)
            } else {
                let free: Vec<bool> = (0..p).map(|k| k != j).collect();
                let mut start = fit.theta_hat.clone();
                start[j] = theta_hat[j];
                let c = minimize_from(&es_star, g, &start, &free);
                if c.logelr.is_finite() {
                    c.logelr
                } else {
                    minimize_from(&es_star, g, theta_hat, &free).logelr
                }
            };
            if l.is_nan() {
                Resample::Failed
            } else if l.is_infinite() {
                Resample::OutsideHull
            } else {
                Resample::Value((2.0 * (l - fit.logelr)).max(0.0))
            }
        })
        .collect();
    (out, redrawn)
}

/// Bootstrap distribution of `R*(theta_hat)`; resampled rows that were
/// imputed are reimputed from the resample's own complete rows.
pub fn bootstrap_distribution(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<CalibrationResult> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::Config(format!("bootstrap needs B >= {MIN_BOOTSTRAP}, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let results = par::map_range(b, |k| bootstrap_one(es, g, &fit.theta_hat, seed, k));
    let mut out = CalibrationResult::new(CalibrationMethod::Bootstrap, Some(alpha));
    out.draws = Some(b);
    let mut values = Vec::with_capacity(b);
    for (r, redrawn) in results {
        out.redrawn += redrawn;
        match r {
            Resample::Value(v) => values.push(v),
            Resample::OutsideHull => {
                out.infinite += 1;
                values.push(f64::INFINITY);
            }
            Resample::Failed | Resample::NoComplete => out.discarded += 1,
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("every bootstrap resample failed".into()));
    }
    if out.discarded * 10 > b {
        let w = format!("{} of {b} bootstrap resamples discarded", out.discarded);
        log::warn!("{w}");
        out.warnings.push(w);
    }
    out.values = sort_values(values);
    out.threshold = out.quantile(alpha);
    Ok(out)
}

/// Bootstrap threshold `q*` plus profile intervals at `q*`.
pub fn bootstrap_calibrate(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<CalibrationResult> {
    let all: Vec<usize> = (0..fit.theta_hat.len()).collect();
    bootstrap_calibrate_for(es, g, fit, b, alpha, seed, &all)
}

/// As [`bootstrap_calibrate`], profiling only the listed coordinates.
pub fn bootstrap_calibrate_for(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    b: usize,
    alpha: f64,
    seed: u64,
    coords: &[usize],
) -> Result<CalibrationResult> {
    let mut out = bootstrap_distribution(es, g, fit, b, alpha, seed)?;
    let q = out.threshold.expect("set by bootstrap_distribution");
    if q.is_finite() {
        out.intervals = ci_elr_for(es, g, fit, q, coords)?.intervals;
    } else {
        out.intervals = vec![Interval::undetermined(); fit.theta_hat.len()];
        for &j in coords {
            out.intervals[j] = Interval {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                lower_at_boundary: true,
                upper_at_boundary: true,
            };
        }
    }
    Ok(out)
}

/// Per-coordinate bootstrap calibration of the profile statistic.
#[derive(Debug, Clone)]
pub struct ProfileBootstrap {
    pub coords: Vec<usize>,
    /// Calibration per listed coordinate; the interval vector holds the
    /// coordinate's own profile interval, the threshold its own `q*_j`.
    pub results: Vec<CalibrationResult>,
    /// Profile intervals for every parameter, undetermined outside `coords`.
    pub intervals: Vec<Interval>,
}

/// Bootstrap of the profile statistic for each listed coordinate with the
/// remaining parameters profiled out, then the profile interval of each
/// coordinate at its own threshold.
pub fn bootstrap_profile_calibrate(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    b: usize,
    alpha: f64,
    seed: u64,
    coords: &[usize],
) -> Result<ProfileBootstrap> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::Config(format!("bootstrap needs B >= {MIN_BOOTSTRAP}, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p = fit.theta_hat.len();
    if let Some(&j) = coords.iter().find(|&&j| j >= p) {
        return Err(Error::Config(format!("coordinate {j} out of range for {p} parameters")));
    }
    let draws = par::map_range(b, |k| bootstrap_profile_one(es, g, &fit.theta_hat, seed, k, coords));
    let mut intervals = vec![Interval::undetermined(); p];
    let mut results = Vec::with_capacity(coords.len());
    for (c, &j) in coords.iter().enumerate() {
        let mut out = CalibrationResult::new(CalibrationMethod::Bootstrap, Some(alpha));
        out.draws = Some(b);
        let mut values = Vec::with_capacity(b);
        for (rs, redrawn) in &draws {
            out.redrawn += redrawn;
            match rs[c] {
                Resample::Value(v) => values.push(v),
                Resample::OutsideHull => {
                    out.infinite += 1;
                    values.push(f64::INFINITY);
                }
                Resample::Failed | Resample::NoComplete => out.discarded += 1,
            }
        }
        if values.is_empty() {
            return Err(Error::InsufficientData("every bootstrap resample failed".into()));
        }
        if out.discarded * 10 > b {
            let w = format!("{} of {b} bootstrap resamples discarded", out.discarded);
            log::warn!("{w}");
            out.warnings.push(w);
        }
        out.values = sort_values(values);
        let q = out.quantile(alpha).expect("values present");
        out.threshold = Some(q);
        let iv = if q.is_finite() {
            ci_elr_for(es, g, fit, q, &[j])?.intervals[j]
        } else {
            Interval {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                lower_at_boundary: true,
                upper_at_boundary: true,
            }
        };
        intervals[j] = iv;
        out.intervals = vec![Interval::undetermined(); p];
        out.intervals[j] = iv;
        results.push(out);
    }
    Ok(ProfileBootstrap {
        coords: coords.to_vec(),
        results,
        intervals,
    })
}

/// Profile intervals at the Monte Carlo mixture threshold.
pub fn chisq_mix_calibrate(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    asym: &AsymptoticEstimates,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    let q = chisq_mix_quantile(&asym.omega, alpha, m, seed)?;
    let mut out = CalibrationResult::new(CalibrationMethod::ChisqMix, Some(alpha));
    out.draws = Some(m);
    out.threshold = Some(q);
    out.intervals = ci_elr(es, g, fit, q)?.intervals;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::el::default_starts;
    use crate::estfun::{linreg_fn, mean_fn};
    use approx::assert_relative_eq;

    fn mean_sample(ys: &[f64]) -> ExtendedSample {
        let x: Vec<Vec<f64>> = ys.iter().map(|_| vec![0.0]).collect();
        let y: Vec<Option<Vec<f64>>> = ys.iter().map(|&v| Some(vec![v])).collect();
        ExtendedSample::complete(Arc::new(Dataset::from_rows(&x, &y).unwrap())).unwrap()
    }

    const TEN: [f64; 10] = [0.3, -1.1, 2.4, 0.8, 1.7, -0.4, 0.0, 0.9, 3.1, -0.7];

    #[test]
    fn normal_interval_widths() {
        let ci = ci_normal(&[0.0, 1.0], &DMatrix::identity(2, 2), 100, 0.05);
        assert_relative_eq!(ci.intervals[0].upper, 0.195_996_398_454_005_4, epsilon = 1e-12);
        let ci = ci_normal(&[0.5], &DMatrix::identity(1, 1), 100, 1.0);
        assert_eq!(ci.intervals[0].length(), 0.0);
    }

    #[test]
    fn mean_collapse() {
        let es = mean_sample(&TEN);
        let g = mean_fn(1).unwrap();
        let fit = mele(&es, &g, &[vec![0.0]]).unwrap();
        let a = estimate_asymptotics(&es, &g, &fit.theta_hat, None).unwrap();
        let m = TEN.iter().sum::<f64>() / 10.0;
        let var = TEN.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 10.0;
        assert_relative_eq!(a.sigma[(0, 0)], var, epsilon = 1e-8);
        assert_relative_eq!(a.omega.trace(), 1.0, epsilon = 1e-6);
        assert!((&a.gamma - &a.gamma_tilde).amax() <= 1e-12);
    }

    #[test]
    fn omega_idempotent_without_missing() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin() + 0.1 * i as f64]).collect();
        let ys: Vec<Option<Vec<f64>>> = (0..40).map(|i| Some(vec![(i as f64 * 0.91).cos() * 2.0])).collect();
        let es = ExtendedSample::complete(Arc::new(Dataset::from_rows(&xs, &ys).unwrap())).unwrap();
        let g = linreg_fn();
        let fit = mele(&es, &g, &default_starts(&es, &g)).unwrap();
        let a = estimate_asymptotics(&es, &g, &fit.theta_hat, None).unwrap();
        assert!((&a.omega * &a.omega - &a.omega).amax() < 1e-6);
        assert_relative_eq!(a.omega.trace(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn mixture_identity_and_scaling() {
        // chi^2_2 95th percentile is -2 ln 0.05
        let q = chisq_mix_quantile(&DMatrix::identity(2, 2), 0.05, 200_000, 3).unwrap();
        let exact = -2.0 * 0.05f64.ln();
        assert!((q / exact - 1.0).abs() < 0.02, "q = {q}");
        let q3 = chisq_mix_quantile(&(DMatrix::identity(2, 2) * 3.0), 0.05, 200_000, 3).unwrap();
        assert_relative_eq!(q3, 3.0 * q, epsilon = 1e-9);
        assert!(chisq_mix_quantile(&DMatrix::identity(2, 2), 0.05, 999, 3).is_err());
    }

    #[test]
    fn profile_interval_matches_grid() {
        let es = mean_sample(&TEN);
        let g = mean_fn(1).unwrap();
        let fit = mele(&es, &g, &[vec![0.0]]).unwrap();
        let q = 3.841_458_820_694_124;
        let ci = ci_elr(&es, &g, &fit, q).unwrap();
        let iv = ci.intervals[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut v = -1.0;
        while v <= 2.5 {
            if elr_statistic(&es, &g, &fit, &[v]).unwrap() <= q {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            v += 1e-4;
        }
        assert!((iv.lower - lo).abs() < 1e-3, "{} vs {lo}", iv.lower);
        assert!((iv.upper - hi).abs() < 1e-3, "{} vs {hi}", iv.upper);
        assert!(iv.contains(fit.theta_hat[0]));
    }

    #[test]
    fn zero_threshold_is_degenerate() {
        let es = mean_sample(&TEN);
        let g = mean_fn(1).unwrap();
        let fit = mele(&es, &g, &[vec![0.0]]).unwrap();
        let ci = ci_elr(&es, &g, &fit, 0.0).unwrap();
        assert_eq!(ci.intervals[0].length(), 0.0);
    }

    #[test]
    fn bootstrap_quantiles_monotone_and_deterministic() {
        let ys: Vec<f64> = (0..60).map(|i| ((i * 37 % 61) as f64 / 61.0 - 0.5) * 3.0).collect();
        let es = mean_sample(&ys);
        let g = mean_fn(1).unwrap();
        let fit = mele(&es, &g, &[vec![0.0]]).unwrap();
        let a = bootstrap_distribution(&es, &g, &fit, 200, 0.05, 8).unwrap();
        let b = bootstrap_distribution(&es, &g, &fit, 200, 0.05, 8).unwrap();
        assert_eq!(a.threshold.unwrap().to_bits(), b.threshold.unwrap().to_bits());
        assert!(a.quantile(0.10).unwrap() <= a.quantile(0.05).unwrap());
        assert!(bootstrap_distribution(&es, &g, &fit, 99, 0.05, 8).is_err());
    }
}
