//! Coefficient recovery: uncertainty-weighted Bayesian linear regression with
//! evidence-maximized hyperparameters, the sequential dynamic-threshold loop
//! built on it, and the ordinary-least-squares variant.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::library::{uncertainty_weights, DerivativeLibrary};
use crate::pde::DynamicsError;

pub const MAX_EVIDENCE_ITERATIONS: usize = 300;
pub const EVIDENCE_TOLERANCE: f64 = 1e-6;
/// Residual floor relative to `‖y‖²`, keeping the noise precision finite on exact data.
const RESIDUAL_FLOOR: f64 = 1e-24;

/// Gaussian posterior `N(mean, covariance)` over coefficients.
#[derive(Clone, Debug)]
pub struct BlrPosterior {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// `θ̃`, in the units of the `γ`-weighted targets.
    pub noise_std: f64,
    /// `ζ̃`.
    pub prior_std: f64,
    pub log_evidence: f64,
    pub iterations: usize,
    /// False when the fixed point hit the iteration cap.
    pub converged: bool,
}

impl BlrPosterior {
    pub fn variances(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }
}

fn to_weighted(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, gamma: ArrayView1<'_, f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, p) = x.dim();
    if y.len() != n || gamma.len() != n {
        return Err(Error::Dimension(format!(
            "X has {n} rows, y {}, gamma {}",
            y.len(),
            gamma.len()
        )));
    }
    if p == 0 || n == 0 {
        return Err(Error::Domain("regression needs at least one row and one column".into()));
    }
    if gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::Domain("row weights must be positive and finite".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite regression input".into()));
    }
    let a = DMatrix::from_fn(n, p, |i, j| x[[i, j]] / gamma[i]);
    let b = DVector::from_fn(n, |i, _| y[i] / gamma[i]);
    Ok((a, b))
}

struct Eigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    /// `Vᵀ Aᵀ b`
    projected: DVector<f64>,
}

fn eigen_of(a: &DMatrix<f64>, b: &DVector<f64>) -> Eigen {
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let values = eig.eigenvalues.map(|v| v.max(0.0));
    let projected = eig.eigenvectors.transpose() * (a.transpose() * b);
    Eigen {
        values,
        vectors: eig.eigenvectors,
        projected,
    }
}

fn posterior_for(a: &DMatrix<f64>, b: &DVector<f64>, e: &Eigen, alpha: f64, beta: f64) -> (DVector<f64>, DMatrix<f64>, f64, f64) {
    let p = e.values.len();
    let n = b.len() as f64;
    let denom = e.values.map(|l| beta * l + alpha);
    let m_eig = DVector::from_fn(p, |i, _| beta * e.projected[i] / denom[i]);
    let mean = &e.vectors * &m_eig;
    let inv = DMatrix::from_diagonal(&denom.map(|v| 1.0 / v));
    let cov = &e.vectors * inv * e.vectors.transpose();
    let rss = (b - a * &mean).norm_squared();
    let log_ev = 0.5 * p as f64 * alpha.ln() + 0.5 * n * beta.ln()
        - 0.5 * beta * rss
        - 0.5 * alpha * mean.norm_squared()
        - 0.5 * denom.iter().map(|v| v.ln()).sum::<f64>()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    (mean, cov, rss, log_ev)
}

/// Posterior for fixed prior precision `alpha = 1/ζ²` and noise precision `beta = 1/θ²`.
pub fn blr_fixed(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    gamma: ArrayView1<'_, f64>,
    alpha: f64,
    beta: f64,
) -> Result<BlrPosterior> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain("precisions must be positive".into()));
    }
    let (a, b) = to_weighted(x, y, gamma)?;
    let e = eigen_of(&a, &b);
    let (mean, covariance, _, log_evidence) = posterior_for(&a, &b, &e, alpha, beta);
    Ok(BlrPosterior {
        mean: mean.iter().copied().collect(),
        covariance,
        noise_std: beta.powf(-0.5),
        prior_std: alpha.powf(-0.5),
        log_evidence,
        iterations: 0,
        converged: true,
    })
}

/// Bayesian linear regression on rows scaled by `1/γ`, with `ζ̃, θ̃` chosen by
/// fixed-point maximization of the marginal likelihood.
pub fn blr_fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, gamma: ArrayView1<'_, f64>) -> Result<BlrPosterior> {
    let (a, b) = to_weighted(x, y, gamma)?;
    let n = b.len() as f64;
    let p = a.ncols();
    let bb = b.norm_squared();
    if bb == 0.0 {
        return Ok(BlrPosterior {
            mean: vec![0.0; p],
            covariance: DMatrix::identity(p, p),
            noise_std: 1.0,
            prior_std: 1.0,
            log_evidence: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let e = eigen_of(&a, &b);
    // Scale-equivariant starting point.
    let aa = a.norm_squared();
    let mut alpha = if aa > 0.0 { aa / bb } else { 1.0 };
    let mut beta = n / bb;
    let mut converged = false;
    let mut iterations = 0;
    let mut best: Option<(f64, f64, f64)> = None;
    for it in 0..MAX_EVIDENCE_ITERATIONS {
        iterations = it + 1;
        let (mean, _, rss, log_ev) = posterior_for(&a, &b, &e, alpha, beta);
        if best.is_none_or(|(ev, _, _)| log_ev > ev) {
            best = Some((log_ev, alpha, beta));
        }
        let g: f64 = e.values.iter().map(|l| beta * l / (beta * l + alpha)).sum();
        let mm = mean.norm_squared();
        let rss = rss.max(RESIDUAL_FLOOR * bb);
        let new_alpha = if mm > 0.0 { (g / mm).max(f64::MIN_POSITIVE) } else { alpha };
        let new_beta = ((n - g).max(f64::EPSILON) / rss).max(f64::MIN_POSITIVE);
        let change = ((new_alpha - alpha) / alpha).abs().max(((new_beta - beta) / beta).abs());
        alpha = new_alpha;
        beta = new_beta;
        if !alpha.is_finite() || !beta.is_finite() {
            break;
        }
        if change < EVIDENCE_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("evidence maximization did not converge in {MAX_EVIDENCE_ITERATIONS} iterations");
        if let Some((_, a0, b0)) = best {
            alpha = a0;
            beta = b0;
        }
    }
    let (mean, covariance, _, log_evidence) = posterior_for(&a, &b, &e, alpha, beta);
    Ok(BlrPosterior {
        mean: mean.iter().copied().collect(),
        covariance,
        noise_std: beta.powf(-0.5),
        prior_std: alpha.powf(-0.5),
        log_evidence,
        iterations,
        converged,
    })
}

/// Minimum-norm least-squares solution.
pub fn least_squares(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    let ones = Array1::ones(y.len());
    let (a, b) = to_weighted(x, y, ones.view())?;
    let dim = a.nrows().max(a.ncols()) as f64;
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * dim;
    let sol = svd
        .solve(&b, tol)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok(sol.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stblr,
    Stols,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stblr" => Ok(Method::Stblr),
            "stols" => Ok(Method::Stols),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Stblr => "STBLR",
            Method::Stols => "STOLS",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStep {
    pub iteration: usize,
    pub delta: f64,
    pub removed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredPde {
    pub method: Method,
    pub coefficients: Vec<Coefficient>,
    pub active_set: Vec<String>,
    pub threshold_history: Vec<ThresholdStep>,
    /// Every candidate was pruned.
    pub trivial: bool,
    pub noise_std: Option<f64>,
    pub prior_std: Option<f64>,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub e_c: Option<f64>,
    #[serde(default)]
    pub e_l: Option<DynamicsError>,
}

impl DiscoveredPde {
    /// Coefficient means in candidate order (zero for pruned terms).
    pub fn means(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.mean).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.mean)
    }

    /// Fixed-width table in candidate order.
    pub fn table(&self) -> String {
        let mut out = format!("{:<12} {:>14} {:>14}  active\n", "candidate", "mean", "variance");
        for c in &self.coefficients {
            out.push_str(&format!(
                "{:<12} {:>14.6} {:>14.3e}  {}\n",
                c.name,
                c.mean,
                c.variance,
                if c.active { "yes" } else { "-" }
            ));
        }
        if self.trivial {
            out.push_str("TRIVIAL PDE: every candidate was pruned\n");
        }
        out
    }
}

struct Fit {
    mean: Vec<f64>,
    variance: Vec<f64>,
    noise_std: Option<f64>,
    prior_std: Option<f64>,
    warning: Option<String>,
}

fn sequential<F>(candidates: &CandidateSet, delta: f64, method: Method, mut fit: F) -> Result<DiscoveredPde>
where
    F: FnMut(&[usize]) -> Result<Fit>,
{
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("threshold must be positive, got {delta}")));
    }
    let n_c = candidates.len();
    let mut active: Vec<usize> = (0..n_c).collect();
    let mut delta_k = delta;
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let mut last: Option<Fit> = None;
    for k in 0..=n_c {
        let f = fit(&active)?;
        if let Some(w) = &f.warning {
            warnings.push(format!("iteration {k}: {w}"));
        }
        let (keep, removed): (Vec<(usize, usize)>, Vec<(usize, usize)>) = active
            .iter()
            .copied()
            .enumerate()
            .partition(|&(pos, _)| f.mean[pos].abs() >= delta_k);
        history.push(ThresholdStep {
            iteration: k,
            delta: delta_k,
            removed: removed.iter().map(|&(_, j)| candidates.get(j).name()).collect(),
        });
        if removed.is_empty() {
            last = Some(f);
            break;
        }
        active = keep.into_iter().map(|(_, j)| j).collect();
        delta_k *= 2.0;
        if active.is_empty() {
            break;
        }
    }
    let mut coefficients: Vec<Coefficient> = candidates
        .iter()
        .map(|c| Coefficient {
            name: c.name(),
            mean: 0.0,
            variance: 0.0,
            active: false,
        })
        .collect();
    let (mut noise_std, mut prior_std) = (None, None);
    if let Some(f) = &last {
        for (pos, &j) in active.iter().enumerate() {
            coefficients[j].mean = f.mean[pos];
            coefficients[j].variance = f.variance[pos];
            coefficients[j].active = true;
        }
        noise_std = f.noise_std;
        prior_std = f.prior_std;
    } else {
        active.clear();
    }
    let trivial = active.is_empty();
    if trivial {
        log::warn!("{method}: every candidate was pruned");
    }
    Ok(DiscoveredPde {
        method,
        active_set: active.iter().map(|&j| candidates.get(j).name()).collect(),
        coefficients,
        threshold_history: history,
        trivial,
        noise_std,
        prior_std,
        warnings,
        e_c: None,
        e_l: None,
    })
}

fn select_columns(x: ArrayView2<'_, f64>, cols: &[usize]) -> ndarray::Array2<f64> {
    x.select(ndarray::Axis(1), cols)
}

/// Sequential threshold Bayesian linear regression with a doubling threshold.
///
/// `γ̃` is recomputed from the surviving columns of `Z̃` before every fit.
pub fn stblr(lib: &DerivativeLibrary, delta: f64) -> Result<DiscoveredPde> {
    sequential(&lib.candidates, delta, Method::Stblr, |active| {
        let x = select_columns(lib.x.view(), active);
        let z = select_columns(lib.z.view(), active);
        let gamma = uncertainty_weights(z.view());
        let post = blr_fit(x.view(), lib.y.view(), gamma.view())?;
        Ok(Fit {
            variance: post.variances(),
            noise_std: Some(post.noise_std),
            prior_std: Some(post.prior_std),
            warning: (!post.converged).then(|| "evidence maximization did not converge".to_string()),
            mean: post.mean,
        })
    })
}

/// Sequential threshold least squares (uniform row weights, same doubling rule).
pub fn stols(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    candidates: &CandidateSet,
    delta: f64,
) -> Result<DiscoveredPde> {
    if x.ncols() != candidates.len() {
        return Err(Error::Dimension(format!(
            "{} columns for {} candidates",
            x.ncols(),
            candidates.len()
        )));
    }
    sequential(candidates, delta, Method::Stols, |active| {
        let xs = select_columns(x, active);
        let mean = least_squares(xs.view(), y)?;
        Ok(Fit {
            variance: vec![0.0; mean.len()],
            noise_std: None,
            prior_std: None,
            warning: None,
            mean,
        })
    })
}

/// Run the requested method on a library.
pub fn discover(lib: &DerivativeLibrary, method: Method, delta: f64) -> Result<DiscoveredPde> {
    match method {
        Method::Stblr => stblr(lib, delta),
        Method::Stols => stols(lib.x.view(), lib.y.view(), &lib.candidates, delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn zero_targets_give_zero_mean() {
        let x = array![[1.0, 2.0], [3.0, 1.0], [0.5, 0.2]];
        let y = Array1::zeros(3);
        let g = Array1::ones(3);
        let post = blr_fit(x.view(), y.view(), g.view()).unwrap();
        assert_eq!(post.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn single_column_equal_to_target() {
        let x = array![[1.0], [2.0], [-3.0]];
        let y = array![1.0, 2.0, -3.0];
        let set = CandidateSet::parse(&["u"]).unwrap();
        let d = stols(x.view(), y.view(), &set, 0.1).unwrap();
        assert_eq!(d.means(), vec![1.0]);
        assert_eq!(d.active_set, vec!["u"]);
    }

    #[test]
    fn duplicate_columns_min_norm() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]];
        let y = array![2.0, 4.0, 1.0];
        let c = least_squares(x.view(), y.view()).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let x = Array2::<f64>::zeros((3, 0));
        let y = Array1::zeros(3);
        assert!(blr_fit(x.view(), y.view(), y.view()).is_err());
        let x = Array2::<f64>::zeros((3, 2));
        assert!(blr_fit(x.view(), y.view(), Array1::ones(2).view()).is_err());
    }

    #[test]
    fn huge_threshold_prunes_everything() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y = array![1.0, 2.0, 3.0];
        let set = CandidateSet::parse(&["u", "u_x"]).unwrap();
        let d = stols(x.view(), y.view(), &set, 100.0).unwrap();
        assert!(d.trivial);
        assert_eq!(d.threshold_history.len(), 1);
        assert_eq!(d.threshold_history[0].removed.len(), 2);
        assert!(d.means().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn method_parse() {
        assert_eq!("STBLR".parse::<Method>().unwrap(), Method::Stblr);
        assert!("lasso".parse::<Method>().is_err());
    }
}
