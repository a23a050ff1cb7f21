//! Scenario generators and the Monte Carlo study harness.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use nalgebra::{Cholesky, Matrix2, Matrix3, Vector2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::baselines::{complete_case_sample, weighted_gmm};
use crate::dataset::{ColumnKind, Dataset};
use crate::el::{default_starts, mele, ElFit};
use crate::error::{Error, Result};
use crate::estfun::{correlation_fn, logistic_fn, mean_fn, EstimatingFunction, LogisticLayout};
use crate::imputation::{impute, ExtendedSample, DEFAULT_KAPPA};
use crate::inference::{bootstrap_profile_calibrate, Interval};
use crate::kernel::{cv_bandwidth, select_bandwidth, BandwidthRule, CvTarget, KernelSpec};
use crate::par;
use crate::rng::{derive_seed, substream, Domain, StreamRng};
use crate::stats::pairwise_sum;

/// Population values of the correlation scenarios under the mean-centred
/// skew-t: `(rho, mu_x, mu_y, var_x, var_y)`, from a 4e7-draw Monte Carlo
/// computation (the `var_x` entry is exact).
pub const CORR_TRUTH: [f64; 5] = [0.73007, 0.0, 0.38741, 0.80425, 0.52841];
pub const LOGISTIC_TRUTH: [f64; 4] = [-1.0, 1.0, 1.0, -1.5];
pub const MEAN_MISSING_TRUTH: f64 = 1.0;

/// Missingness mechanisms for the correlation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// `p(x) = (0.3 + 0.175|x|) I(|x| < 4) + I(|x| >= 4)`.
    A,
    /// `p(x) = 0.65`.
    B,
    /// `p(x) = 0.5 I(x > 0) + I(x <= 0)`.
    C,
}

impl Mechanism {
    /// Probability that the response is observed.
    pub fn prob(self, x: f64) -> f64 {
        match self {
            Mechanism::A if x.abs() < 4.0 => 0.3 + 0.175 * x.abs(),
            Mechanism::A => 1.0,
            Mechanism::B => 0.65,
            Mechanism::C if x > 0.0 => 0.5,
            Mechanism::C => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Corr(Mechanism),
    Logistic,
    /// `Y = 1 + X + e`, `X, e ~ N(0, 1)`, missing by mechanism (a); target `E Y`.
    MeanMissing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, n: usize) -> Self {
        Self { kind, n }
    }

    pub fn parse(name: &str, n: usize) -> Result<Self> {
        let kind = match name {
            "corr-a" => ScenarioKind::Corr(Mechanism::A),
            "corr-b" => ScenarioKind::Corr(Mechanism::B),
            "corr-c" => ScenarioKind::Corr(Mechanism::C),
            "logistic" => ScenarioKind::Logistic,
            "mean-missing" => ScenarioKind::MeanMissing,
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario '{other}' (expected corr-a, corr-b, corr-c, logistic or mean-missing)"
                )))
            }
        };
        if n < 10 {
            return Err(Error::Config(format!("scenario size must be at least 10, got {n}")));
        }
        Ok(Self { kind, n })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Corr(Mechanism::A) => "corr-a",
            ScenarioKind::Corr(Mechanism::B) => "corr-b",
            ScenarioKind::Corr(Mechanism::C) => "corr-c",
            ScenarioKind::Logistic => "logistic",
            ScenarioKind::MeanMissing => "mean-missing",
        }
    }

    pub fn truth(&self) -> Vec<f64> {
        match self.kind {
            ScenarioKind::Corr(_) => CORR_TRUTH.to_vec(),
            ScenarioKind::Logistic => LOGISTIC_TRUTH.to_vec(),
            ScenarioKind::MeanMissing => vec![MEAN_MISSING_TRUTH],
        }
    }

    /// Coordinates reported by the study; the correlation scenarios treat
    /// means and variances as nuisance parameters.
    pub fn reported(&self) -> Vec<usize> {
        match self.kind {
            ScenarioKind::Corr(_) => vec![0],
            ScenarioKind::Logistic => (0..4).collect(),
            ScenarioKind::MeanMissing => vec![0],
        }
    }

    pub fn estfun(&self) -> Arc<dyn EstimatingFunction> {
        match self.kind {
            ScenarioKind::Corr(_) => Arc::new(correlation_fn()),
            ScenarioKind::Logistic => {
                Arc::new(logistic_fn(LogisticLayout::default_for(3, 1).expect("valid layout")))
            }
            ScenarioKind::MeanMissing => Arc::new(mean_fn(1).expect("dimension 1")),
        }
    }
}

/// Skew-t parameters: location, dispersion `Omega`, shape `alpha`, df.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewTParams {
    pub location: [f64; 2],
    pub dispersion: [[f64; 2]; 2],
    pub shape: [f64; 2],
    pub df: f64,
}

impl SkewTParams {
    /// `delta = Omega alpha / sqrt(1 + alpha' Omega alpha)`.
    pub fn delta(&self) -> Result<[f64; 2]> {
        let om = Matrix2::from_row_slice(&[
            self.dispersion[0][0],
            self.dispersion[0][1],
            self.dispersion[1][0],
            self.dispersion[1][1],
        ]);
        let a = Vector2::from_row_slice(&self.shape);
        let q = (a.transpose() * om * a)[(0, 0)];
        if !(q >= 0.0) {
            return Err(Error::Config("skew-t dispersion is not positive definite".into()));
        }
        let d = om * a / (1.0 + q).sqrt();
        Ok([d[0], d[1]])
    }

    /// Mean of the standardised skew-t `Z / sqrt(V / df)` per unit `delta`.
    pub fn mean_factor(df: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        (df / std::f64::consts::PI).sqrt() * (ln_gamma((df - 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
    }

    /// Parameters with the location chosen so the mean is `mean`.
    pub fn mean_centred(mean: [f64; 2], dispersion: [[f64; 2]; 2], shape: [f64; 2], df: f64) -> Result<Self> {
        if !(df > 1.0) {
            return Err(Error::Config("the skew-t mean needs df > 1".into()));
        }
        let mut p = Self {
            location: [0.0, 0.0],
            dispersion,
            shape,
            df,
        };
        let d = p.delta()?;
        let b = Self::mean_factor(df);
        p.location = [mean[0] - d[0] * b, mean[1] - d[1] * b];
        Ok(p)
    }

    /// The correlation scenarios' law of `(X, U)`: df 5, shape (4, 1),
    /// unit dispersion with off-diagonal 0.955, mean zero.
    pub fn correlation_scenario() -> Self {
        Self::mean_centred([0.0, 0.0], [[1.0, 0.955], [0.955, 1.0]], [4.0, 1.0], 5.0)
            .expect("valid parameters")
    }
}

struct SkewTSampler {
    chol: Matrix3<f64>,
    chi: ChiSquared<f64>,
    params: SkewTParams,
}

impl SkewTSampler {
    fn new(params: &SkewTParams) -> Result<Self> {
        if !(params.df > 0.0) {
            return Err(Error::Config(format!("skew-t df must be positive, got {}", params.df)));
        }
        let d = params.delta()?;
        let om = &params.dispersion;
        let cov = Matrix3::new(1.0, d[0], d[1], d[0], om[0][0], om[0][1], d[1], om[1][0], om[1][1]);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::Config("skew-t dispersion is not positive definite".into()))?
            .l();
        let chi = ChiSquared::new(params.df).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            chol,
            chi,
            params: params.clone(),
        })
    }

    fn draw(&self, rng: &mut StreamRng) -> [f64; 2] {
        let e = nalgebra::Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let u = self.chol * e;
        let sign = if u[0] > 0.0 { 1.0 } else { -1.0 };
        let w = (self.chi.sample(rng) / self.params.df).sqrt();
        [
            self.params.location[0] + sign * u[1] / w,
            self.params.location[1] + sign * u[2] / w,
        ]
    }
}

/// `m` draws from the bivariate skew-t, via the conditioning representation
/// of the skew normal divided by `sqrt(chi2_df / df)`.
pub fn sample_skew_t(params: &SkewTParams, m: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let s = SkewTSampler::new(params)?;
    let mut rng = substream(seed, Domain::Generator, 0);
    Ok((0..m).map(|_| s.draw(&mut rng)).collect())
}

/// One simulated sample with its response-complete counterpart.
#[derive(Debug, Clone)]
pub struct Generated {
    pub observed: Dataset,
    pub full: Dataset,
}

fn logit_inv(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn generate(s: &Scenario, seed: u64) -> Result<Generated> {
    let mut rng = substream(seed, Domain::Generator, 0);
    let n = s.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    let mut kinds = None;
    match s.kind {
        ScenarioKind::Corr(mech) => {
            let sampler = SkewTSampler::new(&SkewTParams::correlation_scenario())?;
            for _ in 0..n {
                let [xi, ui] = sampler.draw(&mut rng);
                let yi = if xi < 0.0 { ui - 1.2 * xi } else { ui };
                let obs = rng.gen::<f64>() < mech.prob(xi);
                x.push(vec![xi]);
                y.push(vec![yi]);
                observed.push(obs);
            }
        }
        ScenarioKind::Logistic => {
            for _ in 0..n {
                let x1 = 0.5 * rng.sample::<f64, _>(StandardNormal);
                let x2 = 3.0 + 0.5 * rng.sample::<f64, _>(StandardNormal);
                let yi = f64::from(u8::from(rng.gen::<f64>() < logit_inv(-1.0 + x1 + 0.5 * x2)));
                let x3 = f64::from(u8::from(rng.gen::<f64>() < logit_inv(-1.0 + x1 + x2 - 1.5 * yi)));
                let missing = rng.gen::<f64>() >= logit_inv(0.5 + 2.0 * x1 + x2 - 3.0 * x3);
                x.push(vec![x1, x2, x3]);
                y.push(vec![yi]);
                observed.push(!missing);
            }
            kinds = Some(vec![ColumnKind::Continuous, ColumnKind::Continuous, ColumnKind::Binary]);
        }
        ScenarioKind::MeanMissing => {
            for _ in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let obs = rng.gen::<f64>() < Mechanism::A.prob(xi);
                x.push(vec![xi]);
                y.push(vec![1.0 + xi + e]);
                observed.push(obs);
            }
        }
    }
    if !observed.iter().any(|&o| o) {
        // keep the dataset valid; vanishingly rare at the sizes used
        observed[0] = true;
    }
    let y_obs: Vec<Option<Vec<f64>>> = y
        .iter()
        .zip(&observed)
        .map(|(v, &o)| o.then(|| v.clone()))
        .collect();
    let y_full: Vec<Option<Vec<f64>>> = y.into_iter().map(Some).collect();
    let mut obs = Dataset::from_rows(&x, &y_obs)?;
    let mut full = Dataset::from_rows(&x, &y_full)?;
    if let Some(k) = kinds {
        obs = obs.with_x_kinds(k.clone())?;
        full = full.with_x_kinds(k)?;
    }
    Ok(Generated { observed: obs, full })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Full,
    Complete,
    Wgmm,
    NImpute,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Full, Method::Complete, Method::Wgmm, Method::NImpute];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Complete => "complete",
            Method::Wgmm => "wgmm",
            Method::NImpute => "nimpute",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Full => "Full observations",
            Method::Complete => "Complete obs.",
            Method::Wgmm => "Weighted-GMM",
            Method::NImpute => "N. imputation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "complete" => Ok(Method::Complete),
            "wgmm" => Ok(Method::Wgmm),
            "nimpute" => Ok(Method::NImpute),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected nimpute, complete, full or wgmm)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    /// Methods for which confidence intervals are computed.
    pub ci_methods: Vec<Method>,
    pub reps: usize,
    pub b: usize,
    pub kappa: usize,
    pub alpha: f64,
    pub kernel_order: u8,
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(scenario: Scenario, reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            methods: Method::ALL.to_vec(),
            ci_methods: Method::ALL.to_vec(),
            reps,
            b: 400,
            kappa: DEFAULT_KAPPA,
            alpha: 0.05,
            kernel_order: 2,
            seed,
        }
    }
}

/// Failed replications tolerated per method, as a fraction of `reps`.
pub const FAILURE_CAP: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub estimate: Vec<f64>,
    pub intervals: Option<Vec<Interval>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub parameter: usize,
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    /// Standard deviation with denominator `R`.
    pub sd: f64,
    pub mse: f64,
    pub coverage: Option<f64>,
    pub ci_length: Option<f64>,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    pub b: usize,
    pub kappa: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    /// Per method, per replication: `None` for failures.
    pub replicates: Vec<(Method, Vec<Option<Replicate>>)>,
}

fn el_method(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    with_ci: bool,
    b: usize,
    alpha: f64,
    seed: u64,
    coords: &[usize],
) -> Result<Replicate> {
    let fit: ElFit = mele(es, g, &default_starts(es, g))?;
    let intervals = if with_ci {
        Some(bootstrap_profile_calibrate(es, g, &fit, b, alpha, seed, coords)?.intervals)
    } else {
        None
    };
    Ok(Replicate {
        estimate: fit.theta_hat,
        intervals,
    })
}

pub fn run_method_pub(cfg: &StudyConfig, gen: &Generated, method: Method, rep_seed: u64) -> Result<Replicate> {
    run_method(cfg, gen, method, rep_seed)
}

fn run_method(cfg: &StudyConfig, gen: &Generated, method: Method, rep_seed: u64) -> Result<Replicate> {
    let g = cfg.scenario.estfun();
    let g = g.as_ref();
    let with_ci = cfg.ci_methods.contains(&method);
    let coords = cfg.scenario.reported();
    let boot_seed = derive_seed(rep_seed, Domain::Bootstrap, method as u64);
    match method {
        Method::Full => {
            let es = ExtendedSample::complete(Arc::new(gen.full.clone()))?;
            el_method(&es, g, with_ci, cfg.b, cfg.alpha, boot_seed, &coords)
        }
        Method::Complete => {
            let es = complete_case_sample(&gen.observed, g)?;
            el_method(&es, g, with_ci, cfg.b, cfg.alpha, boot_seed, &coords)
        }
        Method::NImpute => {
            let h = select_bandwidth(&gen.observed, cfg.kernel_order, BandwidthRule::HalvedCv)?;
            let k = KernelSpec::new(cfg.kernel_order, h)?;
            let es = impute(Arc::new(gen.observed.clone()), &k, cfg.kappa, rep_seed)?;
            el_method(&es, g, with_ci, cfg.b, cfg.alpha, boot_seed, &coords)
        }
        Method::Wgmm => {
            let h = cv_bandwidth(&gen.observed, CvTarget::Propensity, cfg.kernel_order)?;
            let k = KernelSpec::new(cfg.kernel_order, h)?;
            let w = weighted_gmm(&gen.observed, g, &k, None, None)?;
            let intervals = with_ci.then(|| w.ci(cfg.alpha).intervals);
            Ok(Replicate {
                estimate: w.theta_tilde,
                intervals,
            })
        }
    }
}

/// Run `reps` replications of every configured method.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.reps < 10 {
        return Err(Error::Config(format!("a study needs at least 10 replications, got {}", cfg.reps)));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let per_rep: Vec<Vec<Option<Replicate>>> = par::map_range(cfg.reps, |r| {
        let rep_seed = derive_seed(cfg.seed, Domain::Replication, r as u64);
        let gen = match generate(&cfg.scenario, rep_seed) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("replication {r}: generation failed: {e}");
                return vec![None; cfg.methods.len()];
            }
        };
        cfg.methods
            .iter()
            .map(|&m| match run_method(cfg, &gen, m, rep_seed) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("replication {r}, method {m}: {e}");
                    None
                }
            })
            .collect()
    });
    let cap = (FAILURE_CAP * cfg.reps as f64).floor() as usize;
    let mut replicates = Vec::with_capacity(cfg.methods.len());
    for (k, &m) in cfg.methods.iter().enumerate() {
        let col: Vec<Option<Replicate>> = per_rep.iter().map(|row| row[k].clone()).collect();
        let failed = col.iter().filter(|v| v.is_none()).count();
        if failed > cap {
            return Err(Error::StudyAborted {
                failed,
                total: cfg.reps,
                cap,
            });
        }
        replicates.push((m, col));
    }
    let truth = cfg.scenario.truth();
    let names = cfg.scenario.estfun().param_names();
    let mut rows = Vec::new();
    for (m, col) in &replicates {
        let ok: Vec<&Replicate> = col.iter().flatten().collect();
        for &j in &cfg.scenario.reported() {
            rows.push(summarise(*m, j, &names[j], truth[j], &ok, col.len() - ok.len()));
        }
    }
    Ok(StudyReport {
        scenario: cfg.scenario.name().to_string(),
        n: cfg.scenario.n,
        reps: cfg.reps,
        b: cfg.b,
        kappa: cfg.kappa,
        alpha: cfg.alpha,
        seed: cfg.seed,
        rows,
        replicates,
    })
}

fn summarise(method: Method, j: usize, name: &str, truth: f64, ok: &[&Replicate], failed: usize) -> SummaryRow {
    let r = ok.len() as f64;
    let est: Vec<f64> = ok.iter().map(|v| v.estimate[j]).collect();
    let mean = pairwise_sum(&est) / r;
    let dev: Vec<f64> = est.iter().map(|e| (e - mean).powi(2)).collect();
    let sd = (pairwise_sum(&dev) / r).sqrt();
    let err: Vec<f64> = est.iter().map(|e| (e - truth).powi(2)).collect();
    let mse = pairwise_sum(&err) / r;
    let ivs: Vec<Interval> = ok
        .iter()
        .filter_map(|v| v.intervals.as_ref().map(|iv| iv[j]))
        .collect();
    let (coverage, ci_length) = if ivs.is_empty() {
        (None, None)
    } else {
        let hit = ivs.iter().filter(|iv| iv.contains(truth)).count();
        let len: Vec<f64> = ivs.iter().map(Interval::length).collect();
        (
            Some(hit as f64 / ivs.len() as f64),
            Some(pairwise_sum(&len) / ivs.len() as f64),
        )
    };
    SummaryRow {
        method,
        parameter: j,
        name: name.to_string(),
        truth,
        bias: mean - truth,
        sd,
        mse,
        coverage,
        ci_length,
        ok: ok.len(),
        failed,
    }
}

impl StudyReport {
    pub fn row(&self, method: Method, parameter: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scenario,n,reps,B,kappa,seed,method,parameter,truth,bias,sd,mse,coverage,ci_length,ok,failed\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.scenario,
                self.n,
                self.reps,
                self.b,
                self.kappa,
                self.seed,
                r.method,
                r.name,
                r.truth,
                r.bias,
                r.sd,
                r.mse,
                opt(r.coverage),
                opt(r.ci_length),
                r.ok,
                r.failed
            );
        }
        s
    }

    /// One line per replication and method with the estimates and, where
    /// computed, the interval bounds of the reported parameters.
    pub fn replicates_csv(&self) -> String {
        let coords: Vec<usize> = {
            let mut c: Vec<usize> = self.rows.iter().map(|r| r.parameter).collect();
            c.dedup();
            c
        };
        let names: Vec<&str> = coords
            .iter()
            .map(|&j| self.rows.iter().find(|r| r.parameter == j).expect("present").name.as_str())
            .collect();
        let mut s = String::from("replication,method,status");
        for n in &names {
            let _ = write!(s, ",{n},{n}.lower,{n}.upper");
        }
        s.push('\n');
        for (m, col) in &self.replicates {
            for (r, rep) in col.iter().enumerate() {
                let _ = write!(s, "{r},{m}");
                match rep {
                    None => {
                        s.push_str(",failed");
                        for _ in &coords {
                            s.push_str(",,,");
                        }
                    }
                    Some(v) => {
                        s.push_str(",ok");
                        for &j in &coords {
                            let _ = write!(s, ",{}", v.estimate[j]);
                            match v.intervals.as_ref().map(|iv| iv[j]) {
                                Some(iv) => {
                                    let _ = write!(s, ",{},{}", iv.lower, iv.upper);
                                }
                                None => s.push_str(",,"),
                            }
                        }
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {}  n = {}  R = {}  B = {}  kappa = {}  seed = {}",
            self.scenario, self.n, self.reps, self.b, self.kappa, self.seed
        );
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12}",
            "Methods", "Bias", "Std. dev.", "MSE", "Coverage", "Length", "ok/failed"
        );
        let mut params: Vec<usize> = self.rows.iter().map(|r| r.parameter).collect();
        params.dedup();
        let multi = params.len() > 1;
        for j in params {
            if multi {
                let r = self.rows.iter().find(|r| r.parameter == j).expect("present");
                let _ = writeln!(s, "{} = {}", r.name, r.truth);
            }
            for r in self.rows.iter().filter(|r| r.parameter == j) {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    s,
                    "{:<20} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>10} {:>12}",
                    r.method.label(),
                    r.bias,
                    r.sd,
                    r.mse,
                    f(r.coverage),
                    f(r.ci_length),
                    format!("{}/{}", r.ok, r.failed)
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mechanisms() {
        assert_eq!(Mechanism::A.prob(0.0), 0.3);
        assert_relative_eq!(Mechanism::A.prob(-2.0), 0.65);
        assert_eq!(Mechanism::A.prob(4.0), 1.0);
        assert_eq!(Mechanism::B.prob(7.0), 0.65);
        assert_eq!(Mechanism::C.prob(0.1), 0.5);
        assert_eq!(Mechanism::C.prob(0.0), 1.0);
    }

    #[test]
    fn mean_factor_df5() {
        // sqrt(5 / pi) * Gamma(2) / Gamma(5/2)
        let exact = (5.0 / std::f64::consts::PI).sqrt() / (0.75 * std::f64::consts::PI.sqrt());
        assert_relative_eq!(SkewTParams::mean_factor(5.0), exact, epsilon = 1e-12);
    }

    #[test]
    fn non_pd_dispersion_rejected() {
        let p = SkewTParams {
            location: [0.0, 0.0],
            dispersion: [[1.0, 2.0], [2.0, 1.0]],
            shape: [0.0, 0.0],
            df: 5.0,
        };
        assert!(sample_skew_t(&p, 10, 1).is_err());
    }

    #[test]
    fn mechanism_c_never_drops_nonpositive_x() {
        let g = generate(&Scenario::parse("corr-c", 2000).unwrap(), 4).unwrap();
        for i in 0..g.observed.n() {
            if g.observed.x_row(i)[0] <= 0.0 {
                assert!(g.observed.is_complete(i));
            }
        }
    }

    #[test]
    fn unknown_scenario() {
        assert!(Scenario::parse("corr-d", 100).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = Scenario::parse("logistic", 50).unwrap();
        let a = generate(&s, 9).unwrap();
        let b = generate(&s, 9).unwrap();
        assert_eq!(a.observed.to_csv_string(), b.observed.to_csv_string());
        assert_eq!(a.full.n_missing(), 0);
    }
}
