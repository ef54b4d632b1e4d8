//! Posterior-averaged derivative libraries: `X̃` (expected candidates),
//! `Z̃` (their variances), `ỹ` (expected `u_t`) and the row weights `γ̃`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::data::{sample_uniform, Domain};
use crate::error::{Error, Result};
use crate::net::{self, Scaling, WeightVector};
use crate::pde::GridSolution;

/// Floor applied to every `γ̃` entry.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Collocation points per evaluation chunk.
const CHUNK_ROWS: usize = 256;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LibraryMeta {
    pub d: usize,
    pub n_c: usize,
    pub seed: Option<u64>,
    pub thinning: usize,
    /// Weight samples actually evaluated after thinning.
    pub samples_used: usize,
    pub source: String,
}

#[derive(Clone, Debug)]
pub struct DerivativeLibrary {
    /// `d × n_c` expected candidate values.
    pub x: Array2<f64>,
    /// `d × n_c` population variances.
    pub z: Array2<f64>,
    /// Expected `u_t`.
    pub y: Array1<f64>,
    pub gamma: Array1<f64>,
    /// `d × 2` collocation coordinates `(t, x)`.
    pub points: Array2<f64>,
    pub candidates: CandidateSet,
    pub meta: LibraryMeta,
}

impl DerivativeLibrary {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Assemble from precomputed parts, checking shapes and signs.
    pub fn from_parts(
        x: Array2<f64>,
        z: Array2<f64>,
        y: Array1<f64>,
        points: Array2<f64>,
        candidates: CandidateSet,
        meta: LibraryMeta,
    ) -> Result<Self> {
        let d = y.len();
        let n_c = candidates.len();
        if x.dim() != (d, n_c) || z.dim() != (d, n_c) || points.dim() != (d, 2) {
            return Err(Error::Dimension(format!(
                "library parts: X {:?}, Z {:?}, y {d}, points {:?}, {n_c} candidates",
                x.dim(),
                z.dim(),
                points.dim()
            )));
        }
        if z.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("variances must be non-negative".into()));
        }
        let gamma = uncertainty_weights(z.view());
        Ok(DerivativeLibrary {
            x,
            z,
            y,
            gamma,
            points,
            candidates,
            meta,
        })
    }

    /// CSV: `t, x, y, gamma, X_<term>..., Z_<term>...`, one row per point.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let names = self.candidates.names();
        let mut header = vec!["t".to_string(), "x".into(), "y".into(), "gamma".into()];
        header.extend(names.iter().map(|n| format!("X_{n}")));
        header.extend(names.iter().map(|n| format!("Z_{n}")));
        let csv_err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![self.points[[i, 0]], self.points[[i, 1]], self.y[i], self.gamma[i]];
            row.extend(self.x.row(i).iter());
            row.extend(self.z.row(i).iter());
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// JSON sidecar with [`LibraryMeta`] plus `extra` fields merged in.
    pub fn write_meta(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut v = serde_json::to_value(&self.meta).expect("plain struct");
        v["candidates"] = serde_json::to_value(self.candidates.names()).expect("strings");
        if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            obj.extend(more);
        }
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer_pretty(&mut f, &v).map_err(|e| Error::format(path, e.to_string()))?;
        f.flush().map_err(|e| Error::io(path, e))
    }
}

/// `d` i.i.d. uniform collocation points on `domain`.
pub fn sample_collocation(domain: &Domain, d: usize, seed: u64) -> Result<Array2<f64>> {
    domain.validate()?;
    if d == 0 {
        return Err(Error::Domain("need at least one collocation point".into()));
    }
    Ok(sample_uniform(domain, d, seed))
}

/// `γ̃`: columns of `z` divided by their maxima, summed per row, floored at [`GAMMA_FLOOR`].
///
/// Columns whose maximum is zero contribute nothing.
pub fn uncertainty_weights(z: ArrayView2<'_, f64>) -> Array1<f64> {
    let mut gamma = Array1::zeros(z.nrows());
    for col in z.axis_iter(Axis(1)) {
        let max = col.iter().fold(0.0f64, |m, v| m.max(*v));
        if max > 0.0 {
            gamma.zip_mut_with(&col, |g, v| *g += v / max);
        }
    }
    gamma.mapv_inplace(|g: f64| g.max(GAMMA_FLOOR));
    gamma
}

/// Per-sample candidate values (`n × n_c`) and `u_t` (`n`) in physical units.
fn sample_values(
    w: &WeightVector,
    scaling: &Scaling,
    scaled_points: ArrayView2<'_, f64>,
    candidates: &CandidateSet,
) -> (Array2<f64>, Array1<f64>) {
    let order = candidates.max_order();
    let mut jets = net::jet_rows(&w.arch(), w.values(), scaled_points, order);
    scaling.jets_to_physical(&mut jets);
    let n = scaled_points.nrows();
    let mut vals = Array2::zeros((n, candidates.len()));
    let mut d = [0.0; 5];
    for i in 0..n {
        for (k, dk) in d.iter_mut().enumerate().take(order + 1) {
            *dk = jets.x_derivs[k][i];
        }
        for (j, c) in candidates.iter().enumerate() {
            vals[[i, j]] = c.evaluate(&d);
        }
    }
    (vals, jets.f_t)
}

/// Library from weight samples (a single sample gives the deterministic path with `Z̃ = 0`).
///
/// Samples are visited with stride `thinning`. Means and population variances
/// use a two-pass scheme in fixed sample order.
pub fn build_library(
    samples: &[WeightVector],
    scaling: &Scaling,
    points: ArrayView2<'_, f64>,
    candidates: &CandidateSet,
    thinning: usize,
) -> Result<DerivativeLibrary> {
    if samples.is_empty() {
        return Err(Error::Domain("library needs at least one weight sample".into()));
    }
    if thinning == 0 {
        return Err(Error::Config("thinning stride must be at least 1".into()));
    }
    if points.ncols() != 2 {
        return Err(Error::Dimension(format!("points need 2 columns, got {}", points.ncols())));
    }
    let used: Vec<&WeightVector> = samples.iter().step_by(thinning).collect();
    let n_s = used.len() as f64;
    let d = points.nrows();
    let n_c = candidates.len();
    let scaled = scaling.inputs(points);
    let mut x = Array2::zeros((d, n_c));
    let mut z = Array2::zeros((d, n_c));
    let mut y = Array1::zeros(d);

    let mut start = 0;
    while start < d {
        let end = (start + CHUNK_ROWS).min(d);
        let chunk = scaled.slice(s![start..end, ..]);
        let per_sample: Vec<(Array2<f64>, Array1<f64>)> = used
            .par_iter()
            .map(|w| sample_values(w, scaling, chunk, candidates))
            .collect();
        let mut mean = Array2::<f64>::zeros((end - start, n_c));
        let mut ymean = Array1::<f64>::zeros(end - start);
        for (v, ft) in &per_sample {
            mean += v;
            ymean += ft;
        }
        mean /= n_s;
        ymean /= n_s;
        let mut var = Array2::<f64>::zeros((end - start, n_c));
        for (v, _) in &per_sample {
            ndarray::Zip::from(&mut var)
                .and(v)
                .and(&mean)
                .for_each(|s, &a, &m| *s += (a - m) * (a - m));
        }
        var /= n_s;
        x.slice_mut(s![start..end, ..]).assign(&mean);
        z.slice_mut(s![start..end, ..]).assign(&var);
        y.slice_mut(s![start..end]).assign(&ymean);
        start = end;
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite derivative in library".into()));
    }
    let meta = LibraryMeta {
        d,
        n_c,
        seed: None,
        thinning,
        samples_used: used.len(),
        source: if samples.len() == 1 {
            "point-estimate".into()
        } else {
            "posterior".into()
        },
    };
    DerivativeLibrary::from_parts(x, z, y, points.to_owned(), candidates.clone(), meta)
}

/// Library read off a numerical solution by finite differences (deterministic, `Z̃ = 0`).
pub fn library_from_solution(
    sol: &GridSolution,
    points: ArrayView2<'_, f64>,
    candidates: &CandidateSet,
) -> Result<DerivativeLibrary> {
    let order = candidates.max_order();
    let (ut, fields) = sol.derivative_grids(order)?;
    let d = points.nrows();
    let mut x = Array2::zeros((d, candidates.len()));
    let mut y = Array1::zeros(d);
    let mut dv = [0.0; 5];
    for (i, p) in points.outer_iter().enumerate() {
        for (k, f) in fields.iter().enumerate() {
            dv[k] = sol.interpolate_field(f, p[0], p[1]);
        }
        for (j, c) in candidates.iter().enumerate() {
            x[[i, j]] = c.evaluate(&dv);
        }
        y[i] = sol.interpolate_field(&ut, p[0], p[1]);
    }
    let meta = LibraryMeta {
        d,
        n_c: candidates.len(),
        seed: None,
        thinning: 1,
        samples_used: 0,
        source: "solver".into(),
    };
    let z = Array2::zeros((d, candidates.len()));
    DerivativeLibrary::from_parts(x, z, y, points.to_owned(), candidates.clone(), meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn gamma_hand_example() {
        let z = array![[1.0, 2.0], [2.0, 4.0]];
        let g = uncertainty_weights(z.view());
        assert_eq!(g, array![1.0, 2.0]);
    }

    #[test]
    fn gamma_equal_entries() {
        let z = Array2::from_elem((4, 11), 0.3);
        assert!(uncertainty_weights(z.view()).iter().all(|g| (*g - 11.0).abs() < 1e-12));
    }

    #[test]
    fn gamma_zero_columns_floor() {
        let z = Array2::zeros((3, 5));
        assert!(uncertainty_weights(z.view()).iter().all(|g| *g == GAMMA_FLOOR));
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let arch = Architecture::new(2, 6, true).unwrap();
        let vals = (0..arch.n_params()).map(|i| (i as f64).cos() * 0.5).collect();
        let w = WeightVector::new(arch, vals).unwrap();
        let dom = Domain::new(0.0, 1.0, -1.0, 1.0).unwrap();
        let pts = sample_collocation(&dom, 20, 1).unwrap();
        let lib = build_library(
            std::slice::from_ref(&w),
            &Scaling::identity(),
            pts.view(),
            &CandidateSet::default(),
            1,
        )
        .unwrap();
        assert!(lib.z.iter().all(|v| *v == 0.0));
        let j = net::jet(&w, pts[[3, 0]], pts[[3, 1]], 4).unwrap();
        assert_relative_eq!(lib.y[3], j.f_t, epsilon = 1e-12);
        assert_relative_eq!(lib.x[[3, 5]], j.f * j.f_x, epsilon = 1e-12);
    }

    #[test]
    fn empty_samples_rejected() {
        let pts = Array2::zeros((1, 2));
        assert!(build_library(&[], &Scaling::identity(), pts.view(), &CandidateSet::default(), 1).is_err());
    }

    #[test]
    fn collocation_in_domain_and_seeded() {
        let dom = Domain::new(0.0, 10.0, -8.0, 8.0).unwrap();
        let a = sample_collocation(&dom, 500, 4).unwrap();
        assert_eq!(a, sample_collocation(&dom, 500, 4).unwrap());
        assert!(a.outer_iter().all(|p| dom.contains(p[0], p[1])));
        assert!(sample_collocation(&dom, 0, 4).is_err());
    }
}
