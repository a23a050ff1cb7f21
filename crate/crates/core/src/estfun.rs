//! Estimating functions `g(x, y, theta)` with analytic Jacobians.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// `r` estimating equations in `p <= r` parameters.
///
/// Jacobians are written row-major into an `r * p` slice.
pub trait EstimatingFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// `(r, p)`.
    fn dims(&self) -> (usize, usize);

    fn eval(&self, x: &[f64], y: &[f64], theta: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64], y: &[f64], theta: &[f64], out: &mut [f64]);

    /// Admissibility of a parameter value.
    fn check_theta(&self, _theta: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Compatibility with a dataset (column counts, binary responses).
    fn check_data(&self, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    /// Rough starting value from the complete rows. Refined by the solvers.
    fn initial_theta(&self, data: &Dataset) -> Vec<f64>;

    /// Names of the parameter coordinates, for reports.
    fn param_names(&self) -> Vec<String> {
        (1..=self.dims().1).map(|j| format!("theta{j}")).collect()
    }
}

fn require_width(name: &str, what: &str, have: usize, need: usize) -> Result<()> {
    if have < need {
        return Err(Error::Domain {
            function: name.to_string(),
            message: format!("needs at least {need} {what} column(s), dataset has {have}"),
        });
    }
    Ok(())
}

fn complete_mean(data: &Dataset, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let rows = data.complete_rows();
    rows.iter()
        .map(|&i| f(data.x_row(i), data.y_row(i)))
        .sum::<f64>()
        / rows.len() as f64
}

/// `g = y - theta`.
#[derive(Debug, Clone)]
pub struct MeanFn {
    dim: usize,
}

pub fn mean_fn(dim: usize) -> Result<MeanFn> {
    if dim == 0 {
        return Err(Error::Config("mean function needs dim >= 1".into()));
    }
    Ok(MeanFn { dim })
}

impl EstimatingFunction for MeanFn {
    fn name(&self) -> &str {
        "mean"
    }
    fn dims(&self) -> (usize, usize) {
        (self.dim, self.dim)
    }
    fn eval(&self, _x: &[f64], y: &[f64], theta: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = y[k] - theta[k];
        }
    }
    fn jacobian(&self, _x: &[f64], _y: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for k in 0..self.dim {
            out[k * self.dim + k] = -1.0;
        }
    }
    fn check_data(&self, data: &Dataset) -> Result<()> {
        require_width("mean", "y", data.dy(), self.dim)
    }
    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        (0..self.dim).map(|k| complete_mean(data, |_, y| y[k])).collect()
    }
    fn param_names(&self) -> Vec<String> {
        if self.dim == 1 {
            vec!["mean".into()]
        } else {
            (1..=self.dim).map(|k| format!("mean{k}")).collect()
        }
    }
}

/// Correlation of `x[0]` and `y[0]` with means and variances as free
/// parameters: `theta = (rho, mu_x, mu_y, var_x, var_y)`.
#[derive(Debug, Clone, Default)]
pub struct CorrelationFn;

pub fn correlation_fn() -> CorrelationFn {
    CorrelationFn
}

impl EstimatingFunction for CorrelationFn {
    fn name(&self) -> &str {
        "correlation"
    }
    fn dims(&self) -> (usize, usize) {
        (5, 5)
    }
    fn eval(&self, x: &[f64], y: &[f64], th: &[f64], out: &mut [f64]) {
        let (rho, mx, my, vx, vy) = (th[0], th[1], th[2], th[3], th[4]);
        let (dx, dy) = (x[0] - mx, y[0] - my);
        out[0] = dx;
        out[1] = dy;
        out[2] = dx * dx - vx;
        out[3] = dy * dy - vy;
        out[4] = dx * dy - rho * vx.sqrt() * vy.sqrt();
    }
    fn jacobian(&self, x: &[f64], y: &[f64], th: &[f64], out: &mut [f64]) {
        let (rho, mx, my, vx, vy) = (th[0], th[1], th[2], th[3], th[4]);
        let (dx, dy) = (x[0] - mx, y[0] - my);
        let (sx, sy) = (vx.sqrt(), vy.sqrt());
        out.fill(0.0);
        // columns: rho, mu_x, mu_y, var_x, var_y
        out[1] = -1.0;
        out[5 + 2] = -1.0;
        out[10 + 1] = -2.0 * dx;
        out[10 + 3] = -1.0;
        out[15 + 2] = -2.0 * dy;
        out[15 + 4] = -1.0;
        out[20] = -sx * sy;
        out[20 + 1] = -dy;
        out[20 + 2] = -dx;
        out[20 + 3] = -rho * sy / (2.0 * sx);
        out[20 + 4] = -rho * sx / (2.0 * sy);
    }
    fn check_theta(&self, th: &[f64]) -> Result<()> {
        if th[3] > 0.0 && th[4] > 0.0 && th.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain {
                function: "correlation".into(),
                message: format!("variances must be positive, got ({}, {})", th[3], th[4]),
            })
        }
    }
    fn check_data(&self, data: &Dataset) -> Result<()> {
        require_width("correlation", "x", data.dx(), 1)?;
        require_width("correlation", "y", data.dy(), 1)
    }
    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        let mx = complete_mean(data, |x, _| x[0]);
        let my = complete_mean(data, |_, y| y[0]);
        let vx = complete_mean(data, |x, _| (x[0] - mx).powi(2));
        let vy = complete_mean(data, |_, y| (y[0] - my).powi(2));
        let cxy = complete_mean(data, |x, y| (x[0] - mx) * (y[0] - my));
        let vx = if vx > 0.0 { vx } else { 1.0 };
        let vy = if vy > 0.0 { vy } else { 1.0 };
        vec![cxy / (vx * vy).sqrt(), mx, my, vx, vy]
    }
    fn param_names(&self) -> Vec<String> {
        ["rho", "mu_x", "mu_y", "var_x", "var_y"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

/// Regression of `x[0]` on `y[0]`: `g = (x - a - b y, x y - a y - b y^2)`.
#[derive(Debug, Clone, Default)]
pub struct LinRegFn;

pub fn linreg_fn() -> LinRegFn {
    LinRegFn
}

impl EstimatingFunction for LinRegFn {
    fn name(&self) -> &str {
        "linreg"
    }
    fn dims(&self) -> (usize, usize) {
        (2, 2)
    }
    fn eval(&self, x: &[f64], y: &[f64], th: &[f64], out: &mut [f64]) {
        let e = x[0] - th[0] - th[1] * y[0];
        out[0] = e;
        out[1] = e * y[0];
    }
    fn jacobian(&self, _x: &[f64], y: &[f64], _th: &[f64], out: &mut [f64]) {
        let y = y[0];
        out[0] = -1.0;
        out[1] = -y;
        out[2] = -y;
        out[3] = -y * y;
    }
    fn check_data(&self, data: &Dataset) -> Result<()> {
        require_width("linreg", "x", data.dx(), 1)?;
        require_width("linreg", "y", data.dy(), 1)
    }
    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        let mx = complete_mean(data, |x, _| x[0]);
        let my = complete_mean(data, |_, y| y[0]);
        let syy = complete_mean(data, |_, y| (y[0] - my).powi(2));
        let sxy = complete_mean(data, |x, y| (x[0] - mx) * (y[0] - my));
        let b = if syy > 0.0 { sxy / syy } else { 0.0 };
        vec![mx - b * my, b]
    }
    fn param_names(&self) -> Vec<String> {
        vec!["intercept".into(), "slope".into()]
    }
}

/// Where a logistic-regression variable lives in the `(x, y)` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    X(usize),
    Y(usize),
}

impl Source {
    #[inline]
    fn get(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Source::X(j) => x[j],
            Source::Y(j) => y[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogisticLayout {
    pub covariates: Vec<Source>,
    pub response: Source,
}

impl LogisticLayout {
    /// Response = last `X` column; covariates = remaining `X` columns then all `Y` columns.
    pub fn default_for(dx: usize, dy: usize) -> Result<Self> {
        if dx == 0 {
            return Err(Error::Config("logistic layout needs an x response column".into()));
        }
        let mut covariates: Vec<Source> = (0..dx - 1).map(Source::X).collect();
        covariates.extend((0..dy).map(Source::Y));
        Ok(Self {
            covariates,
            response: Source::X(dx - 1),
        })
    }
}

/// Logistic score equations `g = S (z - pi(S^T beta))`, `S = (1, covariates)`.
#[derive(Debug, Clone)]
pub struct LogisticFn {
    layout: LogisticLayout,
}

pub fn logistic_fn(layout: LogisticLayout) -> LogisticFn {
    LogisticFn { layout }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticFn {
    fn design(&self, x: &[f64], y: &[f64], s: &mut [f64]) {
        s[0] = 1.0;
        for (o, c) in s[1..].iter_mut().zip(&self.layout.covariates) {
            *o = c.get(x, y);
        }
    }
}

impl EstimatingFunction for LogisticFn {
    fn name(&self) -> &str {
        "logistic"
    }
    fn dims(&self) -> (usize, usize) {
        let p = self.layout.covariates.len() + 1;
        (p, p)
    }
    fn eval(&self, x: &[f64], y: &[f64], beta: &[f64], out: &mut [f64]) {
        self.design(x, y, out);
        let eta: f64 = out.iter().zip(beta).map(|(a, b)| a * b).sum();
        let resid = self.layout.response.get(x, y) - sigmoid(eta);
        for v in out.iter_mut() {
            *v *= resid;
        }
    }
    fn jacobian(&self, x: &[f64], y: &[f64], beta: &[f64], out: &mut [f64]) {
        let p = self.dims().1;
        let mut s = vec![0.0; p];
        self.design(x, y, &mut s);
        let eta: f64 = s.iter().zip(beta).map(|(a, b)| a * b).sum();
        let pi = sigmoid(eta);
        let w = pi * (1.0 - pi);
        for a in 0..p {
            for b in 0..p {
                out[a * p + b] = -s[a] * s[b] * w;
            }
        }
    }
    fn check_data(&self, data: &Dataset) -> Result<()> {
        let in_range = |s: &Source| match *s {
            Source::X(j) => j < data.dx(),
            Source::Y(j) => j < data.dy(),
        };
        if !self.layout.covariates.iter().all(in_range) || !in_range(&self.layout.response) {
            return Err(Error::Domain {
                function: "logistic".into(),
                message: "layout refers to a column the dataset does not have".into(),
            });
        }
        for i in 0..data.n() {
            let z = match (self.layout.response, data.y_opt(i)) {
                (Source::X(j), _) => data.x_row(i)[j],
                (Source::Y(j), Some(y)) => y[j],
                (Source::Y(_), None) => continue,
            };
            if z != 0.0 && z != 1.0 {
                return Err(Error::Domain {
                    function: "logistic".into(),
                    message: format!("response is not binary (value {z} at row {})", i + 1),
                });
            }
        }
        Ok(())
    }
    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        vec![0.0; self.dims().1]
    }
    fn param_names(&self) -> Vec<String> {
        (0..self.dims().1).map(|j| format!("beta{j}")).collect()
    }
}

pub type Constructor = Arc<dyn Fn(&Dataset) -> Result<Arc<dyn EstimatingFunction>> + Send + Sync>;

/// Estimating functions by name, for command-line selection.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, Constructor>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("mean", |d| Ok(Arc::new(mean_fn(d.dy())?)));
        r.register("correlation", |_| Ok(Arc::new(correlation_fn())));
        r.register("linreg", |_| Ok(Arc::new(linreg_fn())));
        r.register("logistic", |d| {
            Ok(Arc::new(logistic_fn(LogisticLayout::default_for(d.dx(), d.dy())?)))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&Dataset) -> Result<Arc<dyn EstimatingFunction>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Arc::new(ctor));
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Build the named function for `data` and check it against the data.
    pub fn build(&self, name: &str, data: &Dataset) -> Result<Arc<dyn EstimatingFunction>> {
        let ctor = self.entries.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown estimating function '{name}' (known: {})",
                self.names().join(", ")
            ))
        })?;
        let g = ctor(data)?;
        g.check_data(data)?;
        Ok(g)
    }
}
