//! Kernel smoothing on the always-observed covariates.
//!
//! Continuous `X` columns are standardised by their sample standard deviation
//! and smoothed with a product Gaussian-based kernel of order 2, 4 or 6 under
//! one scalar bandwidth. Binary `X` columns are never smoothed: they split the
//! sample into strata and only donors in the target's stratum are used.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::dataset::{ColumnKind, Dataset};
use crate::error::{Error, Result};

/// Default lower clamp for estimated propensities.
pub const PROPENSITY_FLOOR: f64 = 1e-3;

const CV_GRID_POINTS: usize = 40;
const CV_GRID_LO: f64 = 0.05;
const CV_GRID_HI: f64 = 5.0;
const CV_MIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    order: u8,
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(order: u8, bandwidth: f64) -> Result<Self> {
        if !matches!(order, 2 | 4 | 6) {
            return Err(Error::Config(format!("kernel order must be 2, 4 or 6, got {order}")));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { order, bandwidth })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn with_bandwidth(self, bandwidth: f64) -> Result<Self> {
        Self::new(self.order, bandwidth)
    }
}

/// Polynomial factor of the order-`q` Gaussian-based kernel: `K_q(u) = P_q(u) phi(u)`.
#[inline]
fn order_poly(order: u8, u: f64) -> f64 {
    let u2 = u * u;
    match order {
        2 => 1.0,
        4 => 0.5 * (3.0 - u2),
        6 => (15.0 - 10.0 * u2 + u2 * u2) / 8.0,
        _ => unreachable!("kernel order validated in KernelSpec::new"),
    }
}

/// Univariate kernel of the given order. Orders 4 and 6 go negative in the tails.
pub fn univariate_kernel(order: u8, u: f64) -> f64 {
    order_poly(order, u) * (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Product kernel at an already-scaled argument `u = (X - x*) / h`.
pub fn kernel_weight(k: &KernelSpec, u: &[f64]) -> f64 {
    u.iter().map(|&v| univariate_kernel(k.order, v)).product()
}

/// Precomputed view of a dataset for smoothing: column split, scales and
/// the complete rows grouped by binary stratum.
#[derive(Debug, Clone)]
pub struct Smoother<'a> {
    data: &'a Dataset,
    continuous: Vec<usize>,
    binary: Vec<usize>,
    scale: Vec<f64>,
    donors: BTreeMap<Vec<u8>, Vec<usize>>,
    all_donors: Vec<usize>,
}

impl<'a> Smoother<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        let (continuous, binary): (Vec<usize>, Vec<usize>) =
            (0..data.dx()).partition(|&j| data.x_kinds()[j] == ColumnKind::Continuous);
        let n = data.n() as f64;
        let scale = continuous
            .iter()
            .map(|&j| {
                let m = (0..data.n()).map(|i| data.x_row(i)[j]).sum::<f64>() / n;
                let ss = (0..data.n())
                    .map(|i| (data.x_row(i)[j] - m).powi(2))
                    .sum::<f64>();
                let sd = if data.n() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let mut me = Self {
            data,
            continuous,
            binary,
            scale,
            donors: BTreeMap::new(),
            all_donors: data.complete_rows(),
        };
        let mut donors: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
        for &i in &me.all_donors {
            donors.entry(me.stratum_key(data.x_row(i))).or_default().push(i);
        }
        me.donors = donors;
        me
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn stratum_key(&self, x: &[f64]) -> Vec<u8> {
        self.binary.iter().map(|&j| u8::from(x[j] != 0.0)).collect()
    }

    pub fn continuous_dims(&self) -> usize {
        self.continuous.len()
    }

    /// Complete rows in the stratum of `key`.
    pub fn stratum_donors(&self, key: &[u8]) -> &[usize] {
        self.donors.get(key).map_or(&[], Vec::as_slice)
    }

    /// Standardised, bandwidth-scaled offsets `(X_l - x*) / (h s)`.
    fn scaled_offsets(&self, k: &KernelSpec, row: usize, x_star: &[f64], out: &mut [f64]) {
        let xl = self.data.x_row(row);
        for (o, (&j, &s)) in out.iter_mut().zip(self.continuous.iter().zip(&self.scale)) {
            *o = (xl[j] - x_star[j]) / (k.bandwidth * s);
        }
    }

    /// Kernel weights of `rows` at `x_star`: the raw weights `W(u)` and a
    /// rescaled copy with identical signs that cannot underflow.
    fn weights_at(&self, k: &KernelSpec, rows: &[usize], x_star: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.continuous.len();
        let mut u = vec![0.0; d];
        let mut sq = Vec::with_capacity(rows.len());
        let mut poly = Vec::with_capacity(rows.len());
        for &l in rows {
            self.scaled_offsets(k, l, x_star, &mut u);
            sq.push(u.iter().map(|v| v * v).sum::<f64>());
            poly.push(u.iter().map(|&v| order_poly(k.order, v)).product::<f64>());
        }
        let norm = (2.0 * PI).powf(-0.5 * d as f64);
        let min_sq = sq.iter().copied().fold(f64::INFINITY, f64::min);
        let raw = sq
            .iter()
            .zip(&poly)
            .map(|(s, p)| p * norm * (-0.5 * s).exp())
            .collect();
        let scaled = sq
            .iter()
            .zip(&poly)
            .map(|(s, p)| p * (-0.5 * (s - min_sq)).exp())
            .collect();
        (raw, scaled)
    }

    /// Estimated conditional law of `Y` at `x_star`. Fails on an empty
    /// stratum or when no kernel weight is positive.
    pub fn law(&self, k: &KernelSpec, x_star: &[f64]) -> Result<ConditionalLaw<'a>> {
        let key = self.stratum_key(x_star);
        let donors = self.stratum_donors(&key).to_vec();
        if donors.is_empty() {
            return Err(Error::NoDonors { stratum: key });
        }
        let (raw, scaled) = self.weights_at(k, &donors, x_star);
        let adjusted = readjust(&scaled).ok_or(Error::DegenerateWeights)?;
        Ok(ConditionalLaw {
            data: self.data,
            x_star: x_star.to_vec(),
            stratum: key,
            donors,
            raw_weights: raw,
            adjusted_weights: adjusted,
            fallback: None,
        })
    }

    /// Like [`Smoother::law`], but an empty stratum pools all complete rows and
    /// degenerate weights fall back to uniform. The fallback is recorded.
    pub fn law_with_fallback(&self, k: &KernelSpec, x_star: &[f64]) -> ConditionalLaw<'a> {
        let key = self.stratum_key(x_star);
        let (donors, pooled) = match self.stratum_donors(&key) {
            [] => (self.all_donors.clone(), true),
            d => (d.to_vec(), false),
        };
        let (raw, scaled) = self.weights_at(k, &donors, x_star);
        let (adjusted, uniform) = match readjust(&scaled) {
            Some(w) => (w, false),
            None => (vec![1.0 / donors.len() as f64; donors.len()], true),
        };
        let fallback = match (pooled, uniform) {
            (false, false) => None,
            (true, false) => Some(LawFallback::PooledStrata),
            (false, true) => Some(LawFallback::UniformWeights),
            (true, true) => Some(LawFallback::PooledUniform),
        };
        if let Some(f) = fallback {
            log::debug!("conditional law at {x_star:?}: {f:?}");
        }
        ConditionalLaw {
            data: self.data,
            x_star: x_star.to_vec(),
            stratum: key,
            donors,
            raw_weights: raw,
            adjusted_weights: adjusted,
            fallback,
        }
    }
}

/// Zero out negative weights and rescale the rest to sum to one.
fn readjust(w: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = w.iter().filter(|&&v| v > 0.0).sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(w.iter().map(|&v| if v > 0.0 { v / total } else { 0.0 }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawFallback {
    /// Stratum had no donors; all complete rows were used.
    PooledStrata,
    /// No positive kernel weight; uniform weights over the stratum.
    UniformWeights,
    PooledUniform,
}

impl LawFallback {
    pub fn pooled(self) -> bool {
        matches!(self, Self::PooledStrata | Self::PooledUniform)
    }
}

/// Discrete estimate of `F(y | x*)` supported on donor `Y` values.
#[derive(Debug, Clone)]
pub struct ConditionalLaw<'a> {
    data: &'a Dataset,
    x_star: Vec<f64>,
    stratum: Vec<u8>,
    donors: Vec<usize>,
    raw_weights: Vec<f64>,
    adjusted_weights: Vec<f64>,
    fallback: Option<LawFallback>,
}

impl<'a> ConditionalLaw<'a> {
    pub fn donors(&self) -> &[usize] {
        &self.donors
    }
    pub fn raw_weights(&self) -> &[f64] {
        &self.raw_weights
    }
    pub fn weights(&self) -> &[f64] {
        &self.adjusted_weights
    }
    pub fn stratum(&self) -> &[u8] {
        &self.stratum
    }
    pub fn target(&self) -> &[f64] {
        &self.x_star
    }
    pub fn fallback(&self) -> Option<LawFallback> {
        self.fallback
    }

    /// `F(y | x*) = sum_l w_l I(Y_l <= y)`, componentwise `<=`.
    pub fn cdf(&self, y: &[f64]) -> f64 {
        self.donors
            .iter()
            .zip(&self.adjusted_weights)
            .filter(|(&l, _)| self.data.y_row(l).iter().zip(y).all(|(a, b)| a <= b))
            .map(|(_, w)| w)
            .sum()
    }

    /// `sum_l w_l f(x*, Y_l)`.
    pub fn expect<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64>,
    {
        let mut acc: Vec<f64> = Vec::new();
        for (&l, &w) in self.donors.iter().zip(&self.adjusted_weights) {
            if w == 0.0 {
                continue;
            }
            let v = f(&self.x_star, self.data.y_row(l));
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, b) in acc.iter_mut().zip(v) {
                *a += w * b;
            }
        }
        acc
    }
}

pub fn conditional_law<'a>(
    d: &'a Dataset,
    k: &KernelSpec,
    x_star: &[f64],
) -> Result<ConditionalLaw<'a>> {
    Smoother::new(d).law(k, x_star)
}

pub fn conditional_cdf(law: &ConditionalLaw<'_>, y: &[f64]) -> f64 {
    law.cdf(y)
}

/// Nadaraya–Watson estimate of `E{f(x*, Y) | X = x*}`.
pub fn nw_conditional_mean<F>(d: &Dataset, k: &KernelSpec, f: F, x_star: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    Ok(conditional_law(d, k, x_star)?.expect(f))
}

/// Kernel regression of the observation indicator on `X`, clamped to `[floor, 1]`.
#[derive(Debug, Clone)]
pub struct PropensityEstimate {
    kernel: KernelSpec,
    floor: f64,
    continuous: Vec<usize>,
    binary: Vec<usize>,
    scale: Vec<f64>,
    /// Standardised continuous coordinates, row-major.
    coords: Vec<f64>,
    keys: Vec<Vec<u8>>,
    delta: Vec<f64>,
}

impl PropensityEstimate {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Unclamped kernel regression of the indicator at `x`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let d = self.continuous.len();
        let key: Vec<u8> = self.binary.iter().map(|&j| u8::from(x[j] != 0.0)).collect();
        let mut rows: Vec<usize> = (0..self.delta.len()).filter(|&i| self.keys[i] == key).collect();
        if rows.is_empty() {
            rows = (0..self.delta.len()).collect();
        }
        let target: Vec<f64> = self
            .continuous
            .iter()
            .zip(&self.scale)
            .map(|(&j, &s)| x[j] / s)
            .collect();
        let h = self.kernel.bandwidth;
        let mut sq = Vec::with_capacity(rows.len());
        let mut poly = Vec::with_capacity(rows.len());
        for &i in &rows {
            let c = &self.coords[i * d..(i + 1) * d];
            let mut s = 0.0;
            let mut p = 1.0;
            for (a, b) in c.iter().zip(&target) {
                let u = (a - b) / h;
                s += u * u;
                p *= order_poly(self.kernel.order, u);
            }
            sq.push(s);
            poly.push(p);
        }
        let min_sq = sq.iter().copied().fold(f64::INFINITY, f64::min);
        let (mut num, mut den) = (0.0, 0.0);
        for ((&i, s), p) in rows.iter().zip(&sq).zip(&poly) {
            let w = p * (-0.5 * (s - min_sq)).exp();
            num += w * self.delta[i];
            den += w;
        }
        if den > 0.0 && den.is_finite() {
            num / den
        } else {
            rows.iter().map(|&i| self.delta[i]).sum::<f64>() / rows.len() as f64
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(self.floor, 1.0)
    }

    pub fn is_clamped(&self, x: &[f64]) -> bool {
        self.raw(x) < self.floor
    }
}

pub fn estimate_propensity(d: &Dataset, k: &KernelSpec) -> Result<PropensityEstimate> {
    estimate_propensity_with_floor(d, k, PROPENSITY_FLOOR)
}

pub fn estimate_propensity_with_floor(
    d: &Dataset,
    k: &KernelSpec,
    floor: f64,
) -> Result<PropensityEstimate> {
    if d.n() < 2 {
        return Err(Error::InsufficientData("propensity estimation needs n >= 2".into()));
    }
    let sm = Smoother::new(d);
    let dims = sm.continuous.len();
    let mut coords = Vec::with_capacity(d.n() * dims);
    for i in 0..d.n() {
        let x = d.x_row(i);
        coords.extend(sm.continuous.iter().zip(&sm.scale).map(|(&j, &s)| x[j] / s));
    }
    Ok(PropensityEstimate {
        kernel: *k,
        floor,
        keys: (0..d.n()).map(|i| sm.stratum_key(d.x_row(i))).collect(),
        continuous: sm.continuous.clone(),
        binary: sm.binary.clone(),
        scale: sm.scale.clone(),
        coords,
        delta: d.delta().iter().map(|&b| f64::from(u8::from(b))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvTarget {
    /// Leave-one-out integrated squared error of the conditional CDF estimate.
    CdfSmoothing,
    /// Leave-one-out squared error of the kernel regression of the indicator.
    Propensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    /// All grid scores equal; the grid midpoint was returned.
    pub flat: bool,
}

/// How the imputation bandwidth is derived from cross-validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Half the CV minimiser, to undersmooth a second-order kernel.
    HalvedCv,
    /// The CV minimiser itself, intended for higher-order kernels.
    Cv,
    Fixed(f64),
}

pub fn halved_bandwidth(h_cv: f64) -> f64 {
    h_cv / 2.0
}

pub fn select_bandwidth(d: &Dataset, order: u8, rule: BandwidthRule) -> Result<f64> {
    match rule {
        BandwidthRule::Fixed(h) => Ok(h),
        BandwidthRule::Cv => cv_bandwidth(d, CvTarget::CdfSmoothing, order),
        BandwidthRule::HalvedCv => {
            cv_bandwidth(d, CvTarget::CdfSmoothing, order).map(halved_bandwidth)
        }
    }
}

pub fn cv_bandwidth(d: &Dataset, target: CvTarget, order: u8) -> Result<f64> {
    cv_bandwidth_report(d, target, order).map(|r| r.bandwidth)
}

/// Log-spaced grid around a normal-reference pilot bandwidth for `m` points in `dims` dimensions.
pub fn cv_grid(m: usize, dims: usize) -> Vec<f64> {
    let dd = dims.max(1) as f64;
    let pilot = (4.0 / (dd + 2.0)).powf(1.0 / (dd + 4.0)) * (m as f64).powf(-1.0 / (dd + 4.0));
    let (lo, hi) = ((CV_GRID_LO * pilot).ln(), (CV_GRID_HI * pilot).ln());
    (0..CV_GRID_POINTS)
        .map(|g| (lo + (hi - lo) * g as f64 / (CV_GRID_POINTS - 1) as f64).exp())
        .collect()
}

pub fn cv_bandwidth_report(d: &Dataset, target: CvTarget, order: u8) -> Result<CvReport> {
    KernelSpec::new(order, 1.0)?;
    let sm = Smoother::new(d);
    let rows: Vec<usize> = match target {
        CvTarget::CdfSmoothing => d.complete_rows(),
        CvTarget::Propensity => (0..d.n()).collect(),
    };
    if rows.len() < CV_MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least {CV_MIN_ROWS} rows, have {}",
            rows.len()
        )));
    }
    let pairs = PairGeometry::new(&sm, &rows);
    let grid = cv_grid(rows.len(), sm.continuous_dims());
    let scores: Vec<f64> = crate::par::map_slice(&grid, |&h| match target {
        CvTarget::CdfSmoothing => cdf_cv_score(d, &pairs, order, h),
        CvTarget::Propensity => propensity_cv_score(d, &pairs, order, h),
    });
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        log::warn!("flat cross-validation criterion; using the grid midpoint");
        return Ok(CvReport {
            bandwidth: grid[grid.len() / 2],
            grid,
            scores,
            flat: true,
        });
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(CvReport {
        bandwidth: grid[best],
        grid,
        scores,
        flat: false,
    })
}

/// Pairwise standardised offsets and stratum membership for a row subset.
struct PairGeometry {
    rows: Vec<usize>,
    dims: usize,
    /// `offsets[(a*m + b)*dims + j]` = standardised `X_b - X_a` on continuous column `j`.
    offsets: Vec<f64>,
    same_stratum: Vec<bool>,
}

impl PairGeometry {
    fn new(sm: &Smoother<'_>, rows: &[usize]) -> Self {
        let m = rows.len();
        let dims = sm.continuous.len();
        let d = sm.data;
        let keys: Vec<Vec<u8>> = rows.iter().map(|&i| sm.stratum_key(d.x_row(i))).collect();
        let mut offsets = vec![0.0; m * m * dims];
        let mut same = vec![false; m * m];
        for a in 0..m {
            let xa = d.x_row(rows[a]);
            for b in 0..m {
                let xb = d.x_row(rows[b]);
                let base = (a * m + b) * dims;
                for (t, (&j, &s)) in sm.continuous.iter().zip(&sm.scale).enumerate() {
                    offsets[base + t] = (xb[j] - xa[j]) / s;
                }
                same[a * m + b] = keys[a] == keys[b];
            }
        }
        Self {
            rows: rows.to_vec(),
            dims,
            offsets,
            same_stratum: same,
        }
    }

    /// Leave-one-out kernel weights of every row as seen from row `a`
    /// (rescaled, signs preserved). Excluded rows get weight zero.
    fn loo_weights(&self, a: usize, order: u8, h: f64, out: &mut [f64]) {
        let m = self.rows.len();
        let mut min_sq = f64::INFINITY;
        let mut sq = vec![f64::INFINITY; m];
        for b in 0..m {
            if b == a || !self.same_stratum[a * m + b] {
                continue;
            }
            let base = (a * m + b) * self.dims;
            let s: f64 = self.offsets[base..base + self.dims]
                .iter()
                .map(|v| (v / h) * (v / h))
                .sum();
            sq[b] = s;
            min_sq = min_sq.min(s);
        }
        for b in 0..m {
            out[b] = if sq[b].is_finite() {
                let base = (a * m + b) * self.dims;
                let p: f64 = self.offsets[base..base + self.dims]
                    .iter()
                    .map(|&v| order_poly(order, v / h))
                    .product();
                p * (-0.5 * (sq[b] - min_sq)).exp()
            } else {
                0.0
            };
        }
    }

    fn loo_members(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.rows.len();
        (0..m).filter(move |&b| b != a && self.same_stratum[a * m + b])
    }
}

fn cdf_cv_score(d: &Dataset, pairs: &PairGeometry, order: u8, h: f64) -> f64 {
    let m = pairs.rows.len();
    let dy = d.dy();
    let mut w = vec![0.0; m];
    let mut total = 0.0;
    for comp in 0..dy {
        let yv: Vec<f64> = pairs.rows.iter().map(|&i| d.y_row(i)[comp]).collect();
        let mut order_idx: Vec<usize> = (0..m).collect();
        order_idx.sort_by(|&a, &b| yv[a].total_cmp(&yv[b]));
        let sorted: Vec<f64> = order_idx.iter().map(|&i| yv[i]).collect();
        // count of values <= y_j, per evaluation point j
        let upto: Vec<usize> = yv
            .iter()
            .map(|&y| sorted.partition_point(|&v| v <= y))
            .collect();
        let mut cum = vec![0.0; m];
        let mut comp_score = 0.0;
        let mut used = 0usize;
        for a in 0..m {
            pairs.loo_weights(a, order, h, &mut w);
            let adjusted = match readjust(&w) {
                Some(v) => v,
                None => {
                    let members: Vec<usize> = pairs.loo_members(a).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let mut v = vec![0.0; m];
                    for b in &members {
                        v[*b] = 1.0 / members.len() as f64;
                    }
                    v
                }
            };
            let mut acc = 0.0;
            for (c, &idx) in cum.iter_mut().zip(&order_idx) {
                acc += adjusted[idx];
                *c = acc;
            }
            let mut s = 0.0;
            for j in 0..m {
                let f = if upto[j] == 0 { 0.0 } else { cum[upto[j] - 1] };
                let ind = if yv[a] <= yv[j] { 1.0 } else { 0.0 };
                s += (ind - f) * (ind - f);
            }
            comp_score += s / m as f64;
            used += 1;
        }
        if used > 0 {
            total += comp_score / used as f64;
        }
    }
    total / dy as f64
}

fn propensity_cv_score(d: &Dataset, pairs: &PairGeometry, order: u8, h: f64) -> f64 {
    let m = pairs.rows.len();
    let delta: Vec<f64> = pairs
        .rows
        .iter()
        .map(|&i| f64::from(u8::from(d.is_complete(i))))
        .collect();
    let overall = delta.iter().sum::<f64>() / m as f64;
    let mut w = vec![0.0; m];
    let mut s = 0.0;
    for a in 0..m {
        pairs.loo_weights(a, order, h, &mut w);
        let den: f64 = w.iter().sum();
        let pred = if den > 0.0 && den.is_finite() {
            w.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>() / den
        } else {
            let members: Vec<usize> = pairs.loo_members(a).collect();
            if members.is_empty() {
                overall
            } else {
                members.iter().map(|&b| delta[b]).sum::<f64>() / members.len() as f64
            }
        };
        s += (delta[a] - pred).powi(2);
    }
    s / m as f64
}
