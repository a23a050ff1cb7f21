//! Repeated hot-deck imputation from the kernel conditional law.
//!
//! Each missing row receives `kappa` donor indices drawn independently from
//! its kernel weights. Donors are stored by index, so every downstream
//! evaluation at any parameter value reuses exactly the same imputed values.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estfun::EstimatingFunction;
use crate::kernel::{KernelSpec, LawFallback, Smoother};
use crate::linalg::{BlockStack, RowMatrix};
use crate::par;
use crate::rng::{substream, Domain};

pub const DEFAULT_KAPPA: usize = 20;

const FILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDraws {
    pub row: usize,
    pub donors: Vec<usize>,
    pub fallback: Option<LawFallback>,
}

/// A dataset plus `kappa` donor draws per missing row.
#[derive(Debug, Clone)]
pub struct ExtendedSample {
    data: Arc<Dataset>,
    kernel: Option<KernelSpec>,
    kappa: usize,
    seed: u64,
    slot: Vec<Option<usize>>,
    draws: Vec<RowDraws>,
}

impl ExtendedSample {
    /// A sample with no missing rows; nothing to impute.
    pub fn complete(data: Arc<Dataset>) -> Result<Self> {
        if data.n_missing() > 0 {
            return Err(Error::Validation(format!(
                "dataset has {} missing rows; impute first",
                data.n_missing()
            )));
        }
        Ok(Self {
            slot: vec![None; data.n()],
            data,
            kernel: None,
            kappa: 1,
            seed: 0,
            draws: Vec::new(),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
    pub fn data_arc(&self) -> &Arc<Dataset> {
        &self.data
    }
    pub fn n(&self) -> usize {
        self.data.n()
    }
    pub fn kappa(&self) -> usize {
        self.kappa
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }
    pub fn draws(&self) -> &[RowDraws] {
        &self.draws
    }
    pub fn draws_for(&self, row: usize) -> Option<&RowDraws> {
        self.slot[row].map(|k| &self.draws[k])
    }
    pub fn pooled_rows(&self) -> Vec<usize> {
        self.draws
            .iter()
            .filter(|d| d.fallback.is_some_and(LawFallback::pooled))
            .map(|d| d.row)
            .collect()
    }
    pub fn fallback_count(&self) -> usize {
        self.draws.iter().filter(|d| d.fallback.is_some()).count()
    }

    /// Imputed estimating functions, one row per observation.
    pub fn estfun(&self, g: &dyn EstimatingFunction, theta: &[f64]) -> Result<RowMatrix> {
        let (r, _) = g.dims();
        let mut out = RowMatrix::zeros(self.n(), r);
        let mut buf = vec![0.0; r];
        for i in 0..self.n() {
            let x = self.data.x_row(i);
            let row = out.row_mut(i);
            match self.slot[i] {
                None => g.eval(x, self.data.y_row(i), theta, row),
                Some(k) => {
                    let donors = &self.draws[k].donors;
                    for &l in donors {
                        g.eval(x, self.data.y_row(l), theta, &mut buf);
                        for (a, b) in row.iter_mut().zip(&buf) {
                            *a += b;
                        }
                    }
                    let inv = 1.0 / donors.len() as f64;
                    row.iter_mut().for_each(|v| *v *= inv);
                }
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { row: i });
            }
        }
        Ok(out)
    }

    /// Imputed Jacobians, one `r x p` block per observation.
    pub fn estfun_jacobian(&self, g: &dyn EstimatingFunction, theta: &[f64]) -> Result<BlockStack> {
        let (r, p) = g.dims();
        let mut out = BlockStack::zeros(self.n(), r, p);
        let mut buf = vec![0.0; r * p];
        for i in 0..self.n() {
            let x = self.data.x_row(i);
            let blk = out.block_mut(i);
            match self.slot[i] {
                None => g.jacobian(x, self.data.y_row(i), theta, blk),
                Some(k) => {
                    let donors = &self.draws[k].donors;
                    for &l in donors {
                        g.jacobian(x, self.data.y_row(l), theta, &mut buf);
                        for (a, b) in blk.iter_mut().zip(&buf) {
                            *a += b;
                        }
                    }
                    let inv = 1.0 / donors.len() as f64;
                    blk.iter_mut().for_each(|v| *v *= inv);
                }
            }
            if blk.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { row: i });
            }
        }
        Ok(out)
    }

    /// Serialise the draws as plain `key = value` text.
    pub fn to_file_string(&self, data_path: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# elmi extended sample; row and donor indices are 0-based data rows");
        let _ = writeln!(s, "format = {FILE_FORMAT_VERSION}");
        let _ = writeln!(s, "data = {data_path}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        if let Some(k) = &self.kernel {
            let _ = writeln!(s, "bandwidth = {}", k.bandwidth());
            let _ = writeln!(s, "kernel_order = {}", k.order());
        }
        let _ = writeln!(s, "n = {}", self.n());
        let _ = writeln!(s, "missing = {}", self.draws.len());
        for d in &self.draws {
            let idx: Vec<String> = d.donors.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "draws.{} = {}", d.row, idx.join(" "));
            if let Some(f) = d.fallback {
                let tag = match f {
                    LawFallback::PooledStrata => "pooled",
                    LawFallback::UniformWeights => "uniform",
                    LawFallback::PooledUniform => "pooled-uniform",
                };
                let _ = writeln!(s, "fallback.{} = {tag}", d.row);
            }
        }
        s
    }

    /// Rebuild an extended sample from its file and the dataset it refers to.
    pub fn from_file(file: &ImputationFile, data: Arc<Dataset>) -> Result<Self> {
        if file.n != data.n() {
            return Err(Error::Validation(format!(
                "imputation file is for n = {}, dataset has n = {}",
                file.n,
                data.n()
            )));
        }
        let mut slot = vec![None; data.n()];
        let mut draws = Vec::with_capacity(file.draws.len());
        for d in &file.draws {
            if d.row >= data.n() || data.is_complete(d.row) {
                return Err(Error::Validation(format!("row {} is not a missing row", d.row)));
            }
            if d.donors.len() != file.kappa {
                return Err(Error::Validation(format!(
                    "row {} has {} draws, expected {}",
                    d.row,
                    d.donors.len(),
                    file.kappa
                )));
            }
            if let Some(&bad) = d.donors.iter().find(|&&l| l >= data.n() || !data.is_complete(l)) {
                return Err(Error::Validation(format!("donor {bad} of row {} is not complete", d.row)));
            }
            slot[d.row] = Some(draws.len());
            draws.push(d.clone());
        }
        if draws.len() != data.n_missing() {
            return Err(Error::Validation(format!(
                "imputation file covers {} of {} missing rows",
                draws.len(),
                data.n_missing()
            )));
        }
        let kernel = match (file.bandwidth, file.kernel_order) {
            (Some(h), Some(q)) => Some(KernelSpec::new(q, h)?),
            _ => None,
        };
        Ok(Self {
            data,
            kernel,
            kappa: file.kappa,
            seed: file.seed,
            slot,
            draws,
        })
    }
}

/// Parsed contents of an extended-sample file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationFile {
    pub data_path: String,
    pub seed: u64,
    pub kappa: usize,
    pub bandwidth: Option<f64>,
    pub kernel_order: Option<u8>,
    pub n: usize,
    pub draws: Vec<RowDraws>,
}

impl ImputationFile {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("imputation file: {m}"));
        let mut data_path = None;
        let (mut seed, mut kappa, mut n, mut missing) = (None, None, None, None);
        let (mut bandwidth, mut kernel_order) = (None, None);
        let mut draws: Vec<RowDraws> = Vec::new();
        let mut fallbacks: Vec<(usize, LawFallback)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("bad integer for {key}: '{v}'")));
            match key {
                "format" => {
                    if num(value)? != u64::from(FILE_FORMAT_VERSION) {
                        return Err(bad(format!("unsupported format {value}")));
                    }
                }
                "data" => data_path = Some(value.to_string()),
                "seed" => seed = Some(num(value)?),
                "kappa" => kappa = Some(num(value)? as usize),
                "n" => n = Some(num(value)? as usize),
                "missing" => missing = Some(num(value)? as usize),
                "bandwidth" => {
                    bandwidth = Some(value.parse::<f64>().map_err(|_| bad(format!("bad bandwidth '{value}'")))?)
                }
                "kernel_order" => kernel_order = Some(num(value)? as u8),
                k if k.starts_with("draws.") => {
                    let row = num(&k["draws.".len()..])? as usize;
                    let donors = value
                        .split_whitespace()
                        .map(|t| num(t).map(|v| v as usize))
                        .collect::<Result<Vec<_>>>()?;
                    draws.push(RowDraws {
                        row,
                        donors,
                        fallback: None,
                    });
                }
                k if k.starts_with("fallback.") => {
                    let row = num(&k["fallback.".len()..])? as usize;
                    let f = match value {
                        "pooled" => LawFallback::PooledStrata,
                        "uniform" => LawFallback::UniformWeights,
                        "pooled-uniform" => LawFallback::PooledUniform,
                        other => return Err(bad(format!("unknown fallback '{other}'"))),
                    };
                    fallbacks.push((row, f));
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        for (row, f) in fallbacks {
            let d = draws
                .iter_mut()
                .find(|d| d.row == row)
                .ok_or_else(|| bad(format!("fallback for row {row} without draws")))?;
            d.fallback = Some(f);
        }
        let missing = missing.ok_or_else(|| bad("missing 'missing' key".into()))?;
        if missing != draws.len() {
            return Err(bad(format!("declares {missing} missing rows but lists {}", draws.len())));
        }
        draws.sort_by_key(|d| d.row);
        Ok(Self {
            data_path: data_path.ok_or_else(|| bad("missing 'data' key".into()))?,
            seed: seed.ok_or_else(|| bad("missing 'seed' key".into()))?,
            kappa: kappa.ok_or_else(|| bad("missing 'kappa' key".into()))?,
            bandwidth,
            kernel_order,
            n: n.ok_or_else(|| bad("missing 'n' key".into()))?,
            draws,
        })
    }
}

/// Draw `kappa` donors for every missing row. Row `i` uses its own random
/// substream keyed by `(seed, i)`.
pub fn impute(data: Arc<Dataset>, k: &KernelSpec, kappa: usize, seed: u64) -> Result<ExtendedSample> {
    if kappa == 0 {
        return Err(Error::Config("kappa must be at least 1".into()));
    }
    let missing = data.missing_rows();
    let draws: Vec<RowDraws> = {
        let sm = Smoother::new(&data);
        par::map_slice(&missing, |&i| {
            let law = sm.law_with_fallback(k, data.x_row(i));
            let mut rng = substream(seed, Domain::Imputation, i as u64);
            let pick = WeightedIndex::new(law.weights())
                .expect("adjusted weights are nonnegative and sum to one");
            let donors = (0..kappa).map(|_| law.donors()[pick.sample(&mut rng)]).collect();
            RowDraws {
                row: i,
                donors,
                fallback: law.fallback(),
            }
        })
    };
    let fallbacks = draws.iter().filter(|d| d.fallback.is_some()).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} missing row(s) imputed with a fallback conditional law");
    }
    let mut slot = vec![None; data.n()];
    for (k, d) in draws.iter().enumerate() {
        slot[d.row] = Some(k);
    }
    Ok(ExtendedSample {
        data,
        kernel: Some(*k),
        kappa,
        seed,
        slot,
        draws,
    })
}

pub fn imputed_estfun(es: &ExtendedSample, g: &dyn EstimatingFunction, theta: &[f64]) -> Result<RowMatrix> {
    es.estfun(g, theta)
}

pub fn imputed_estfun_jacobian(
    es: &ExtendedSample,
    g: &dyn EstimatingFunction,
    theta: &[f64],
) -> Result<BlockStack> {
    es.estfun_jacobian(g, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estfun::mean_fn;
    use approx::assert_relative_eq;

    fn data(xs: &[f64], ys: &[Option<f64>]) -> Arc<Dataset> {
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y: Vec<Option<Vec<f64>>> = ys.iter().map(|v| v.map(|a| vec![a])).collect();
        Arc::new(Dataset::from_rows(&x, &y).unwrap())
    }

    #[test]
    fn nothing_to_impute() {
        let d = data(&[0.0, 1.0], &[Some(1.0), Some(2.0)]);
        let es = impute(d, &KernelSpec::new(2, 1.0).unwrap(), 20, 1).unwrap();
        assert!(es.draws().is_empty());
    }

    #[test]
    fn single_donor_always_drawn() {
        let d = data(&[0.0, 1.0, 2.0], &[Some(5.0), None, None]);
        let es = impute(d, &KernelSpec::new(2, 1.0).unwrap(), 7, 3).unwrap();
        for dr in es.draws() {
            assert_eq!(dr.donors, vec![0; 7]);
        }
    }

    #[test]
    fn kappa_zero_rejected() {
        let d = data(&[0.0, 1.0], &[Some(5.0), None]);
        assert!(impute(d, &KernelSpec::new(2, 1.0).unwrap(), 0, 3).is_err());
    }

    #[test]
    fn uniform_two_donor_frequencies() {
        let d = data(&[1.0, 1.0, 1.0], &[Some(0.0), Some(1.0), None]);
        let es = impute(d, &KernelSpec::new(2, 1.0).unwrap(), 100_000, 11).unwrap();
        let ones = es.draws()[0].donors.iter().filter(|&&l| l == 1).count();
        let freq = ones as f64 / 100_000.0;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn deterministic_given_seed() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 3.0).collect();
        let ys: Vec<Option<f64>> = (0..30).map(|i| (i % 3 != 0).then_some(i as f64)).collect();
        let d = data(&xs, &ys);
        let k = KernelSpec::new(2, 0.4).unwrap();
        let a = impute(d.clone(), &k, 20, 99).unwrap();
        let b = impute(d.clone(), &k, 20, 99).unwrap();
        let c = impute(d, &k, 20, 100).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert_ne!(a.draws(), c.draws());
    }

    #[test]
    fn estfun_averages_donor_values() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let ys: Vec<Option<f64>> = (0..12).map(|i| (i != 4).then_some((i * i) as f64)).collect();
        let d = data(&xs, &ys);
        let es = impute(d.clone(), &KernelSpec::new(2, 0.5).unwrap(), 20, 5).unwrap();
        let g = mean_fn(1).unwrap();
        let gm = es.estfun(&g, &[1.5]).unwrap();
        let donors = &es.draws_for(4).unwrap().donors;
        let oracle = donors.iter().map(|&l| d.y_row(l)[0]).sum::<f64>() / 20.0 - 1.5;
        assert_relative_eq!(gm.get(4, 0), oracle, epsilon = 1e-12);
        assert_eq!(gm.get(3, 0), 9.0 - 1.5);
    }

    #[test]
    fn file_round_trip() {
        let xs: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let ys: Vec<Option<f64>> = (0..15).map(|i| (i % 4 != 1).then_some(i as f64)).collect();
        let d = data(&xs, &ys);
        let k = KernelSpec::new(2, 0.123_456_789_012_345_67).unwrap();
        let es = impute(d.clone(), &k, 5, 42).unwrap();
        let text = es.to_file_string("data.csv");
        let parsed = ImputationFile::parse(&text).unwrap();
        assert_eq!(parsed.bandwidth, Some(k.bandwidth()));
        let back = ExtendedSample::from_file(&parsed, d).unwrap();
        assert_eq!(back.draws(), es.draws());
        assert_eq!(back.to_file_string("data.csv"), text);
    }

    #[test]
    fn file_rejects_complete_donor_mismatch() {
        let d = data(&[0.0, 1.0, 2.0], &[Some(1.0), None, Some(2.0)]);
        let text = "format = 1\ndata = x\nseed = 1\nkappa = 2\nn = 3\nmissing = 1\ndraws.1 = 0 1\n";
        let f = ImputationFile::parse(text).unwrap();
        assert!(ExtendedSample::from_file(&f, d).is_err());
    }
}
