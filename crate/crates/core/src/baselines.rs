//! Comparator estimators: complete-case EL, full-data EL and the
//! inverse-propensity-weighted GMM estimator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::el::{default_starts, mele, ElFit};
use crate::error::{Error, Result};
use crate::estfun::EstimatingFunction;
use crate::imputation::ExtendedSample;
use crate::inference::{ci_normal, kernel_gamma, CalibrationResult};
use crate::kernel::{estimate_propensity, KernelSpec, PropensityEstimate};
use crate::linalg::{spd_inverse, symmetrize};
use crate::optim::{self, Eval, Options};

/// Warn when more than this fraction of complete rows hit the propensity floor.
pub const CLAMP_WARNING_FRACTION: f64 = 0.2;

/// Extended sample holding only the complete rows.
pub fn complete_case_sample(d: &Dataset, g: &dyn EstimatingFunction) -> Result<ExtendedSample> {
    let (r, _) = g.dims();
    if d.n_complete() <= r {
        return Err(Error::InsufficientData(format!(
            "complete-case analysis needs more than {r} complete rows, have {}",
            d.n_complete()
        )));
    }
    ExtendedSample::complete(Arc::new(d.complete_case()?))
}

/// EL on complete rows only, ignoring rows with missing responses.
pub fn el_complete_case(d: &Dataset, g: &dyn EstimatingFunction, starts: Option<&[Vec<f64>]>) -> Result<ElFit> {
    let es = complete_case_sample(d, g)?;
    match starts {
        Some(s) => mele(&es, g, s),
        None => mele(&es, g, &default_starts(&es, g)),
    }
}

/// EL on a dataset in which every response is observed.
pub fn el_full_data(d_full: &Dataset, g: &dyn EstimatingFunction, starts: Option<&[Vec<f64>]>) -> Result<ElFit> {
    let es = ExtendedSample::complete(Arc::new(d_full.clone()))?;
    match starts {
        Some(s) => mele(&es, g, s),
        None => mele(&es, g, &default_starts(&es, g)),
    }
}

#[derive(Debug, Clone)]
pub struct WeightedGmm {
    pub theta_tilde: Vec<f64>,
    pub a_t: DMatrix<f64>,
    pub n_c: usize,
    pub n: usize,
    pub propensity: PropensityEstimate,
    /// Sandwich covariance of `sqrt(n) (theta_tilde - theta)`.
    pub covariance: DMatrix<f64>,
    pub objective: f64,
    pub clamped_fraction: f64,
    pub warnings: Vec<String>,
}

impl WeightedGmm {
    pub fn ci(&self, alpha: f64) -> CalibrationResult {
        ci_normal(&self.theta_tilde, &self.covariance, self.n, alpha)
    }
}

/// Minimise `gbar_w' A gbar_w` with `gbar_w = n_c^{-1} sum delta_i g_i / p_i`.
/// `a_t` defaults to the identity.
pub fn weighted_gmm(
    d: &Dataset,
    g: &dyn EstimatingFunction,
    k: &KernelSpec,
    a_t: Option<&DMatrix<f64>>,
    starts: Option<&[Vec<f64>]>,
) -> Result<WeightedGmm> {
    let (r, p) = g.dims();
    let n_c = d.n_complete();
    if n_c < p {
        return Err(Error::InsufficientData(format!(
            "weighted GMM needs at least {p} complete rows, have {n_c}"
        )));
    }
    let a = match a_t {
        Some(a) if a.nrows() == r && a.ncols() == r => symmetrize(a),
        Some(a) => {
            return Err(Error::Config(format!(
                "weighting matrix is {}x{}, expected {r}x{r}",
                a.nrows(),
                a.ncols()
            )))
        }
        None => DMatrix::identity(r, r),
    };
    let propensity = estimate_propensity(d, k)?;
    let rows = d.complete_rows();
    let inv_p: Vec<f64> = rows.iter().map(|&i| 1.0 / propensity.eval(d.x_row(i))).collect();
    let clamped = rows.iter().filter(|&&i| propensity.is_clamped(d.x_row(i))).count();
    let clamped_fraction = clamped as f64 / n_c as f64;
    let mut warnings = Vec::new();
    if clamped_fraction > CLAMP_WARNING_FRACTION {
        let w = format!(
            "propensity floor active for {:.1}% of complete rows",
            100.0 * clamped_fraction
        );
        log::warn!("{w}");
        warnings.push(w);
    }

    let moments = |th: &[f64], with_jac: bool| -> Option<(DVector<f64>, DMatrix<f64>)> {
        g.check_theta(th).ok()?;
        let mut gbar = DVector::zeros(r);
        let mut dbar = DMatrix::zeros(r, p);
        let mut buf = vec![0.0; r];
        let mut jbuf = vec![0.0; r * p];
        for (&i, &w) in rows.iter().zip(&inv_p) {
            let (x, y) = (d.x_row(i), d.y_row(i));
            g.eval(x, y, th, &mut buf);
            for a in 0..r {
                gbar[a] += w * buf[a];
            }
            if with_jac {
                g.jacobian(x, y, th, &mut jbuf);
                for a in 0..r {
                    for b in 0..p {
                        dbar[(a, b)] += w * jbuf[a * p + b];
                    }
                }
            }
        }
        let scale = 1.0 / n_c as f64;
        let (gbar, dbar) = (gbar * scale, dbar * scale);
        (gbar.iter().chain(dbar.iter()).all(|v| v.is_finite())).then_some((gbar, dbar))
    };
    let value = |th: &[f64]| moments(th, false).map(|(gb, _)| (gb.transpose() * &a * &gb)[(0, 0)]);
    let full = |th: &[f64]| {
        moments(th, true).map(|(gb, db)| Eval {
            value: (gb.transpose() * &a * &gb)[(0, 0)],
            grad: 2.0 * db.transpose() * &a * &gb,
            hess: 2.0 * db.transpose() * &a * &db,
        })
    };
    let starts: Vec<Vec<f64>> = match starts {
        Some(s) => s.to_vec(),
        None => vec![g.initial_theta(d)],
    };
    let opts = Options::default();
    let outcomes: Vec<optim::Outcome> = starts
        .iter()
        .map(|s| optim::minimize(full, value, s, &vec![true; p], &opts))
        .collect();
    let best = outcomes
        .iter()
        .filter(|o| o.converged)
        .min_by(|x, y| x.value.total_cmp(&y.value));
    let Some(best) = best else {
        let o = outcomes
            .iter()
            .min_by(|x, y| x.value.total_cmp(&y.value))
            .expect("at least one start");
        return Err(Error::NonConvergence {
            best_gradient: o.grad_norm,
            best_value: o.value,
            best_theta: o.x.clone(),
        });
    };
    let theta = best.x.clone();

    // sandwich with D estimated by the weighted Jacobian mean over all n rows
    let (_, dbar) = moments(&theta, true).ok_or(Error::Evaluation { row: 0 })?;
    let dmat = dbar * (n_c as f64 / d.n() as f64);
    let (gamma, _) = kernel_gamma(d, g, &theta, k)?;
    let bread = spd_inverse(&(dmat.transpose() * &a * &dmat), "D' A D")?;
    let meat = dmat.transpose() * &a * gamma * &a * &dmat;
    let covariance = symmetrize(&(&bread * meat * &bread));

    Ok(WeightedGmm {
        theta_tilde: theta,
        a_t: a,
        n_c,
        n: d.n(),
        propensity,
        covariance,
        objective: best.value,
        clamped_fraction,
        warnings,
    })
}
