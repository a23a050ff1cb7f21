//! Command-line front end: `impute`, `fit` and `simulate`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{complete_case_sample, weighted_gmm};
use crate::dataset::{ColumnConfig, Dataset};
use crate::el::{default_starts, mele, ElFit};
use crate::error::{Error, Result};
use crate::estfun::{EstimatingFunction, Registry};
use crate::imputation::{impute, ExtendedSample, ImputationFile, DEFAULT_KAPPA};
use crate::inference::{
    bootstrap_calibrate, bootstrap_profile_calibrate, chisq_mix_calibrate, ci_normal, estimate_asymptotics,
    CalibrationResult, Interval, MIN_BOOTSTRAP, MIN_MIX_DRAWS,
};
use crate::kernel::{cv_bandwidth, select_bandwidth, BandwidthRule, CvTarget, KernelSpec};
use crate::par;
use crate::simulation::{run_study, Method, Scenario, StudyConfig};

#[derive(Debug, Parser)]
#[command(
    name = "elmi",
    version,
    about = "Empirical likelihood with kernel-based nonparametric imputation of missing responses"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the imputations for a dataset and write them to a file.
    Impute(ImputeArgs),
    /// Estimate parameters and confidence intervals.
    Fit(FitArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row; the token NA marks a missing response.
    #[arg(long)]
    pub data: PathBuf,
    /// Column roles, one `name = x|y[, binary]` line per column.
    #[arg(long)]
    pub columns: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Imputations per missing row.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: usize,
    /// `auto` (cross-validation, halved for order 2) or a positive number.
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    #[arg(long = "kernel-order", default_value_t = 2)]
    pub kernel_order: u8,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Nimpute,
    Complete,
    Full,
    Wgmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Calibration {
    /// Per-parameter bootstrap of the profile statistic.
    Bootstrap,
    /// Bootstrap of the statistic for the whole parameter vector.
    BootstrapJoint,
    /// Monte Carlo quantile of the estimated quadratic-form limit.
    ChisqMix,
    /// Normal intervals from the sandwich covariance.
    Normal,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "nimpute")]
    pub method: FitMethod,
    /// Estimating function: mean, correlation, linreg or logistic.
    #[arg(long)]
    pub estfun: String,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Reuse the draws in a file written by `impute`.
    #[arg(long)]
    pub imputation: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bootstrap")]
    pub calibration: Calibration,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "B", default_value_t = 400)]
    pub b: usize,
    #[arg(long = "M", default_value_t = 100_000)]
    pub m: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// corr-a, corr-b, corr-c, logistic or mean-missing.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated subset of full, complete, wgmm, nimpute.
    #[arg(long, default_value = "full,complete,wgmm,nimpute")]
    pub methods: String,
    /// Methods that get confidence intervals; `none` for point estimates only.
    #[arg(long = "ci-methods", default_value = "full,complete,wgmm,nimpute")]
    pub ci_methods: String,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: usize,
    #[arg(long = "kernel-order", default_value_t = 2)]
    pub kernel_order: u8,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "B", default_value_t = 400)]
    pub b: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output prefix: writes `<out>.csv`, `<out>.txt` and `<out>.replicates.csv`.
    /// The text table goes to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_kappa(kappa: usize) -> Result<()> {
    if kappa >= 1 {
        Ok(())
    } else {
        Err(Error::Config("kappa must be at least 1".into()))
    }
}

fn bandwidth_rule(s: &str, order: u8) -> Result<BandwidthRule> {
    if s == "auto" {
        return Ok(if order == 2 { BandwidthRule::HalvedCv } else { BandwidthRule::Cv });
    }
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthRule::Fixed(h)),
        _ => Err(Error::Config(format!("bandwidth must be 'auto' or a positive number, got '{s}'"))),
    }
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    let cfg = ColumnConfig::load(&a.columns)?;
    Dataset::load_csv(&a.data, &cfg)
}

fn kernel_for(d: &Dataset, k: &KernelArgs) -> Result<KernelSpec> {
    let rule = bandwidth_rule(&k.bandwidth, k.kernel_order)?;
    KernelSpec::new(k.kernel_order, 1.0)?;
    let h = select_bandwidth(d, k.kernel_order, rule)?;
    KernelSpec::new(k.kernel_order, h)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_impute(a: &ImputeArgs) -> Result<String> {
    check_kappa(a.kernel.kappa)?;
    let d = Arc::new(load_data(&a.data)?);
    let es = if d.n_missing() == 0 {
        ExtendedSample::complete(d.clone())?
    } else {
        let k = kernel_for(&d, &a.kernel)?;
        impute(d.clone(), &k, a.kernel.kappa, a.seed)?
    };
    let mut s = es.to_file_string(&a.data.data.display().to_string());
    let _ = writeln!(s, "# n = {}, complete = {}", d.n(), d.n_complete());
    if es.fallback_count() > 0 {
        let _ = writeln!(s, "# warning: {} row(s) imputed with a fallback conditional law", es.fallback_count());
    }
    if d.demoted_rows() > 0 {
        let _ = writeln!(s, "# warning: {} row(s) with partly missing responses treated as missing", d.demoted_rows());
    }
    Ok(s)
}

struct FitOutput {
    theta: Vec<f64>,
    logelr: Option<f64>,
    calibration: Option<CalibrationResult>,
    /// Per-parameter thresholds of the profile bootstrap.
    thresholds: Vec<f64>,
    diagnostics: Vec<(String, String)>,
}

fn el_calibration(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    fit: &ElFit,
    kernel: Option<&KernelSpec>,
    a: &FitArgs,
    thresholds: &mut Vec<f64>,
) -> Result<Option<CalibrationResult>> {
    let p = fit.theta_hat.len();
    Ok(match a.calibration {
        Calibration::None => None,
        Calibration::Bootstrap => {
            let all: Vec<usize> = (0..p).collect();
            let pb = bootstrap_profile_calibrate(es, g, fit, a.b, a.alpha, a.seed, &all)?;
            let mut res = pb.results[0].clone();
            res.intervals = pb.intervals.clone();
            res.threshold = None;
            res.values.clear();
            res.discarded = pb.results.iter().map(|r| r.discarded).max().unwrap_or(0);
            res.infinite = pb.results.iter().map(|r| r.infinite).max().unwrap_or(0);
            res.warnings = pb.results.iter().flat_map(|r| r.warnings.clone()).collect();
            res.warnings.dedup();
            *thresholds = pb.results.iter().filter_map(|r| r.threshold).collect();
            Some(res)
        }
        Calibration::BootstrapJoint => Some(bootstrap_calibrate(es, g, fit, a.b, a.alpha, a.seed)?),
        Calibration::ChisqMix => {
            let asym = estimate_asymptotics(es, g, &fit.theta_hat, kernel)?;
            Some(chisq_mix_calibrate(es, g, fit, &asym, a.alpha, a.m, a.seed)?)
        }
        Calibration::Normal => {
            let asym = estimate_asymptotics(es, g, &fit.theta_hat, kernel)?;
            Some(ci_normal(&fit.theta_hat, &asym.sigma, es.n(), a.alpha))
        }
    })
}

fn run_fit(a: &FitArgs) -> Result<FitOutput> {
    check_alpha(a.alpha)?;
    check_kappa(a.kernel.kappa)?;
    match a.calibration {
        Calibration::Bootstrap | Calibration::BootstrapJoint if a.b < MIN_BOOTSTRAP => {
            return Err(Error::Config(format!("bootstrap needs --B >= {MIN_BOOTSTRAP}, got {}", a.b)))
        }
        Calibration::ChisqMix if a.m < MIN_MIX_DRAWS => {
            return Err(Error::Config(format!("need --M >= {MIN_MIX_DRAWS}, got {}", a.m)))
        }
        _ => {}
    }
    let d = Arc::new(load_data(&a.data)?);
    let g = Registry::with_builtins().build(&a.estfun, &d)?;
    let g = g.as_ref();
    let mut diagnostics = vec![
        ("n".to_string(), d.n().to_string()),
        ("n_complete".to_string(), d.n_complete().to_string()),
    ];
    if a.method == FitMethod::Wgmm {
        if !matches!(a.calibration, Calibration::Normal | Calibration::None) {
            return Err(Error::Config("the weighted GMM estimator supports --calibration normal or none".into()));
        }
        let h = match bandwidth_rule(&a.kernel.bandwidth, a.kernel.kernel_order)? {
            BandwidthRule::Fixed(h) => h,
            _ => cv_bandwidth(&d, CvTarget::Propensity, a.kernel.kernel_order)?,
        };
        let k = KernelSpec::new(a.kernel.kernel_order, h)?;
        let w = weighted_gmm(&d, g, &k, None, None)?;
        diagnostics.push(("bandwidth".into(), h.to_string()));
        diagnostics.push(("objective".into(), w.objective.to_string()));
        diagnostics.push(("clamped_fraction".into(), w.clamped_fraction.to_string()));
        for warn in &w.warnings {
            diagnostics.push(("warning".into(), warn.clone()));
        }
        let cal = (a.calibration == Calibration::Normal).then(|| w.ci(a.alpha));
        return Ok(FitOutput {
            theta: w.theta_tilde,
            logelr: None,
            calibration: cal,
            thresholds: Vec::new(),
            diagnostics,
        });
    }
    let (es, kernel) = match a.method {
        FitMethod::Full => {
            if d.n_missing() > 0 {
                return Err(Error::Validation(format!(
                    "--method full needs a fully observed dataset; {} row(s) are missing",
                    d.n_missing()
                )));
            }
            (ExtendedSample::complete(d.clone())?, None)
        }
        FitMethod::Complete => (complete_case_sample(&d, g)?, None),
        FitMethod::Nimpute => {
            if d.n_missing() == 0 {
                (ExtendedSample::complete(d.clone())?, None)
            } else if let Some(path) = &a.imputation {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let file = ImputationFile::parse(&text)?;
                let es = ExtendedSample::from_file(&file, d.clone())?;
                let k = es.kernel().cloned();
                (es, k)
            } else {
                let k = kernel_for(&d, &a.kernel)?;
                let es = impute(d.clone(), &k, a.kernel.kappa, a.seed)?;
                (es, Some(k))
            }
        }
        FitMethod::Wgmm => unreachable!("handled above"),
    };
    if let Some(k) = &kernel {
        diagnostics.push(("bandwidth".into(), k.bandwidth().to_string()));
        diagnostics.push(("kernel_order".into(), k.order().to_string()));
        diagnostics.push(("kappa".into(), es.kappa().to_string()));
        if es.fallback_count() > 0 {
            diagnostics.push((
                "warning".into(),
                format!("{} row(s) imputed with a fallback conditional law", es.fallback_count()),
            ));
        }
    }
    let fit = mele(&es, g, &default_starts(&es, g))?;
    diagnostics.push(("q2_norm".into(), format!("{:e}", fit.q2_norm)));
    diagnostics.push(("iterations".into(), fit.iterations.to_string()));
    let converged = fit.candidates.iter().filter(|c| c.converged).count();
    diagnostics.push(("starts_converged".into(), format!("{converged}/{}", fit.candidates.len())));
    let mut thresholds = Vec::new();
    let cal = el_calibration(&es, g, &fit, kernel.as_ref(), a, &mut thresholds)?;
    Ok(FitOutput {
        theta: fit.theta_hat.clone(),
        logelr: Some(fit.logelr),
        calibration: cal,
        thresholds,
        diagnostics,
    })
}

fn fmt_bound(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "-".into()
    }
}

fn fit_report(a: &FitArgs, names: &[String], out: &FitOutput) -> String {
    let mut s = String::new();
    let method = match a.method {
        FitMethod::Nimpute => "nimpute",
        FitMethod::Complete => "complete",
        FitMethod::Full => "full",
        FitMethod::Wgmm => "wgmm",
    };
    let _ = writeln!(s, "estfun = {}", a.estfun);
    let _ = writeln!(s, "method = {method}");
    let _ = writeln!(s, "seed = {}", a.seed);
    for (k, v) in &out.diagnostics {
        let _ = writeln!(s, "{k} = {v}");
    }
    for (name, v) in names.iter().zip(&out.theta) {
        let _ = writeln!(s, "{name}.estimate = {v}");
    }
    if let Some(l) = out.logelr {
        let _ = writeln!(s, "logelr = {l}");
    }
    if let Some(c) = &out.calibration {
        let mut kv = c.to_key_value(names);
        if matches!(a.calibration, Calibration::Bootstrap) {
            for (name, q) in names.iter().zip(&out.thresholds) {
                let _ = writeln!(kv, "{name}.threshold = {q}");
            }
        }
        for line in kv.lines() {
            if let Some(rest) = line.strip_prefix("method = ") {
                let label = match a.calibration {
                    Calibration::Bootstrap => "bootstrap-profile",
                    _ => rest,
                };
                let _ = writeln!(s, "calibration = {label}");
            } else {
                let _ = writeln!(s, "{line}");
            }
        }
    }
    let _ = writeln!(s);
    let conf = format!("{:.0}% CI", 100.0 * (1.0 - a.alpha));
    let _ = writeln!(s, "{:<16} {:>14} {:>30}", "Parameter", "Estimate", conf);
    let empty = Vec::new();
    let ivs: &Vec<Interval> = out.calibration.as_ref().map(|c| &c.intervals).unwrap_or(&empty);
    for (j, (name, v)) in names.iter().zip(&out.theta).enumerate() {
        let ci = match ivs.get(j) {
            Some(iv) if iv.is_determined() => format!("({}, {})", fmt_bound(iv.lower), fmt_bound(iv.upper)),
            _ => "-".into(),
        };
        let _ = writeln!(s, "{:<16} {:>14.6} {:>30}", name, v, ci);
    }
    s
}

pub fn cmd_fit(a: &FitArgs) -> Result<String> {
    let out = run_fit(a)?;
    let d = load_data(&a.data)?;
    let names = Registry::with_builtins().build(&a.estfun, &d)?.param_names();
    Ok(fit_report(a, &names, &out))
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s == "none" {
        return Ok(Vec::new());
    }
    let mut v = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m = Method::parse(part)?;
        if !v.contains(&m) {
            v.push(m);
        }
    }
    v.sort();
    Ok(v)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(String, String, String)> {
    check_alpha(a.alpha)?;
    check_kappa(a.kappa)?;
    let scenario = Scenario::parse(&a.scenario, a.n)?;
    let mut cfg = StudyConfig::new(scenario, a.reps, a.seed);
    cfg.methods = parse_methods(&a.methods)?;
    cfg.ci_methods = parse_methods(&a.ci_methods)?;
    cfg.kappa = a.kappa;
    cfg.kernel_order = a.kernel_order;
    cfg.alpha = a.alpha;
    cfg.b = a.b;
    let needs_boot = cfg.ci_methods.iter().any(|m| *m != Method::Wgmm && cfg.methods.contains(m));
    if needs_boot && a.b < MIN_BOOTSTRAP {
        return Err(Error::Config(format!("bootstrap needs --B >= {MIN_BOOTSTRAP}, got {}", a.b)));
    }
    let report = run_study(&cfg)?;
    Ok((report.to_text(), report.to_csv(), report.replicates_csv()))
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("EL_MISSING_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Impute(a) => par::with_jobs(a.jobs, || cmd_impute(a)).and_then(|s| emit(a.out.as_deref(), &s)),
        Command::Fit(a) => par::with_jobs(a.jobs, || cmd_fit(a)).and_then(|s| emit(a.out.as_deref(), &s)),
        Command::Simulate(a) => {
            let (text, csv, reps) = par::with_jobs(a.jobs, || cmd_simulate(a))?;
            match &a.out {
                Some(prefix) => {
                    let with = |ext: &str| {
                        let mut p = prefix.clone().into_os_string();
                        p.push(ext);
                        PathBuf::from(p)
                    };
                    emit(Some(&with(".txt")), &text)?;
                    emit(Some(&with(".csv")), &csv)?;
                    emit(Some(&with(".replicates.csv")), &reps)
                }
                None => emit(None, &text),
            }
        }
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonConvergence { best_theta, .. } = &e {
                eprintln!("best candidate: {best_theta:?}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_flag() {
        assert_eq!(bandwidth_rule("auto", 2).unwrap(), BandwidthRule::HalvedCv);
        assert_eq!(bandwidth_rule("auto", 4).unwrap(), BandwidthRule::Cv);
        assert_eq!(bandwidth_rule("0.3", 2).unwrap(), BandwidthRule::Fixed(0.3));
        assert!(bandwidth_rule("-1", 2).is_err());
        assert!(bandwidth_rule("wide", 2).is_err());
    }

    #[test]
    fn methods_list() {
        assert_eq!(parse_methods("nimpute,full").unwrap(), vec![Method::Full, Method::NImpute]);
        assert!(parse_methods("none").unwrap().is_empty());
        assert!(parse_methods("em").is_err());
    }

    #[test]
    fn unknown_scenario_exit_code() {
        assert_eq!(run(["elmi", "simulate", "--scenario", "corr-z", "--seed", "1"]), 2);
    }

    #[test]
    fn usage_error_exit_code() {
        assert_eq!(run(["elmi", "fit", "--estfun", "mean"]), 2);
    }
}
