//! PCA of embedding sets down to 2 or 3 dimensions for plotting.
//!
//! Components come from power iteration with deflation on the sample
//! covariance (divisor m − 1). Each component is flipped so its
//! largest-magnitude entry is positive.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 10_000;
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-length principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Symmetric matrix-vector product on a packed row-major `n × n` matrix.
fn mat_vec(mat: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in mat.chunks_exact(n).zip(out.iter_mut()) {
        *o = dot(row, v);
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Sample covariance of `rows` around `mean`, row-major `dim × dim`.
fn covariance<R: AsRef<[f64]>>(rows: &[R], mean: &[f64]) -> Vec<f64> {
    let dim = mean.len();
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for row in rows {
        centered.iter_mut().zip(row.as_ref()).zip(mean).for_each(|((c, x), m)| *c = x - m);
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let line = &mut cov[i * dim..i * dim + i + 1];
            line.iter_mut().zip(&centered[..=i]).for_each(|(c, x)| *c += ci * x);
        }
    }
    let scale = 1.0 / (rows.len() - 1) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] * scale;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    cov
}

/// Fits the top `d` principal components of `rows`.
pub fn fit_pca<R: AsRef<[f64]>>(rows: &[R], d: usize) -> Result<PcaModel> {
    let m = rows.len();
    if d == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    if m < d + 1 {
        return Err(Error::InvalidInput(format!(
            "{m} points cannot fit {d} components (need at least {})",
            d + 1
        )));
    }
    let dim = rows[0].as_ref().len();
    if dim < d {
        return Err(Error::InvalidInput(format!("cannot extract {d} components from {dim}-D data")));
    }
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::Contract(format!(
            "ragged input: row of length {} in {dim}-D data",
            bad.as_ref().len()
        )));
    }
    if rows.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("non-finite value in PCA input".into()));
    }

    let mut mean = vec![0.0; dim];
    for row in rows {
        mean.iter_mut().zip(row.as_ref()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);

    let mut cov = covariance(rows, &mean);
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    let tolerance = RESIDUAL_TOLERANCE * trace.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    let mut cv = vec![0.0; dim];
    for _ in 0..d {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, &components);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);

        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITERATIONS {
            mat_vec(&cov, dim, &v, &mut cv);
            lambda = dot(&v, &cv);
            residual = cv.iter().zip(&v).map(|(c, x)| (c - lambda * x).powi(2)).sum::<f64>().sqrt();
            if residual <= tolerance {
                break;
            }
            orthogonalize(&mut cv, &components);
            let n = norm(&cv);
            if n <= tolerance {
                // remaining spectrum is numerically zero; any orthogonal v works
                lambda = 0.0;
                residual = 0.0;
                break;
            }
            v.iter_mut().zip(&cv).for_each(|(x, c)| *x = c / n);
        }
        if residual > tolerance {
            return Err(Error::Numerical { residual });
        }
        orthogonalize(&mut v, &components);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        fix_sign(&mut v);
        let lambda = lambda.max(0.0);
        // deflate: C ← C − λ v vᵀ
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// Coordinates of each row in the model's component basis.
pub fn project<R: AsRef<[f64]>>(rows: &[R], model: &PcaModel) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|row| {
            let row = row.as_ref();
            if row.len() != model.dim() {
                return Err(Error::Contract(format!(
                    "row of dim {} projected with a {}-D model",
                    row.len(),
                    model.dim()
                )));
            }
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
            Ok(model.components.iter().map(|c| dot(&centered, c)).collect())
        })
        .collect()
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Writes `agent,x,y[,z]` CSV with 9 significant digits; returns the row count.
pub fn export_plot_data(points: &[Vec<f64>], labels: &[String], dims: usize, path: &Path) -> Result<usize> {
    if !(2..=3).contains(&dims) {
        return Err(Error::InvalidInput(format!("plot dims must be 2 or 3, got {dims}")));
    }
    if points.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dims) {
        return Err(Error::InvalidInput(format!("point with {} coordinates, expected {dims}", p.len())));
    }
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["agent"];
    header.extend(&AXES[..dims]);
    w.write_record(&header).map_err(io)?;
    for (point, label) in points.iter().zip(labels) {
        let mut record = vec![label.clone()];
        record.extend(point.iter().map(|v| format!("{v:.8e}")));
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(points.len())
}
