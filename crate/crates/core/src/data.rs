//! Space-time domains and sensor measurement records.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangle `[t_min, t_max] × [x_min, x_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl Domain {
    pub fn new(t_min: f64, t_max: f64, x_min: f64, x_max: f64) -> Result<Self> {
        let d = Domain {
            t_min,
            t_max,
            x_min,
            x_max,
        };
        d.validate()?;
        Ok(d)
    }

    /// The reference square `[-1, 1]²` the surrogate works in.
    pub fn unit() -> Self {
        Domain {
            t_min: -1.0,
            t_max: 1.0,
            x_min: -1.0,
            x_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_min, self.t_max, self.x_min, self.x_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.t_max <= self.t_min || self.x_max <= self.x_min {
            return Err(Error::Domain(format!("degenerate domain {self:?}")));
        }
        Ok(())
    }

    pub fn t_span(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn x_span(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        let tol_t = 1e-12 * self.t_span().max(1.0);
        let tol_x = 1e-12 * self.x_span().max(1.0);
        t >= self.t_min - tol_t
            && t <= self.t_max + tol_t
            && x >= self.x_min - tol_x
            && x <= self.x_max + tol_x
    }
}

/// Sensor records `{(t_i, x_i), y_i}`.
///
/// Inputs are stored as an `n × 2` matrix with columns `(t, x)` so that the
/// surrogate can consume them as a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementDataset {
    inputs: Array2<f64>,
    targets: Array1<f64>,
    domain: Domain,
}

impl MeasurementDataset {
    pub fn new(inputs: Array2<f64>, targets: Array1<f64>, domain: Domain) -> Result<Self> {
        domain.validate()?;
        if inputs.ncols() != 2 {
            return Err(Error::Dimension(format!(
                "dataset inputs need 2 columns (t, x), got {}",
                inputs.ncols()
            )));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} input points but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        for (i, row) in inputs.outer_iter().enumerate() {
            if !domain.contains(row[0], row[1]) {
                return Err(Error::Domain(format!(
                    "point {i} ({}, {}) lies outside {domain:?}",
                    row[0], row[1]
                )));
            }
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite target value".into()));
        }
        Ok(MeasurementDataset {
            inputs,
            targets,
            domain,
        })
    }

    /// Builds a dataset from `(t, x)` pairs.
    pub fn from_points(points: &[(f64, f64)], targets: Vec<f64>, domain: Domain) -> Result<Self> {
        let mut inputs = Array2::zeros((points.len(), 2));
        for (i, &(t, x)) in points.iter().enumerate() {
            inputs[[i, 0]] = t;
            inputs[[i, 1]] = x;
        }
        Self::new(inputs, Array1::from(targets), domain)
    }

    pub fn empty(domain: Domain) -> Self {
        MeasurementDataset {
            inputs: Array2::zeros((0, 2)),
            targets: Array1::zeros(0),
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.targets.view()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Rows in a new order; `order` must be a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::Dimension("permutation length".into()));
        }
        let inputs = self.inputs.select(ndarray::Axis(0), order);
        let targets = self.targets.select(ndarray::Axis(0), order);
        Ok(MeasurementDataset {
            inputs,
            targets,
            domain: self.domain,
        })
    }
}

/// `n × 2` matrix from `(t, x)` pairs.
pub fn points_matrix(points: &[(f64, f64)]) -> Array2<f64> {
    let mut m = Array2::zeros((points.len(), 2));
    for (i, &(t, x)) in points.iter().enumerate() {
        m[[i, 0]] = t;
        m[[i, 1]] = x;
    }
    m
}

/// `n` i.i.d. uniform `(t, x)` draws on `domain`, as an `n × 2` matrix.
pub fn sample_uniform(domain: &Domain, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::zeros((n, 2));
    for i in 0..n {
        m[[i, 0]] = rng.random_range(domain.t_min..=domain.t_max);
        m[[i, 1]] = rng.random_range(domain.x_min..=domain.x_max);
    }
    m
}
