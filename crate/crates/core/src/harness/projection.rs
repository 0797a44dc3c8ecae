use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::representation::FeatureVector;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub source: String,
}

/// Principal axes of the features: the centering mean and the top two
/// covariance eigenvectors. Each axis has its largest-magnitude component
/// made positive so the result does not depend on the eigensolver's sign.
#[derive(Clone, Debug)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub variances: [f64; 2],
}

impl Pca2 {
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        if features.len() < 3 {
            return Err(Error::contract("projection needs at least three feature vectors"));
        }
        let d = features[0].dim();
        if d < 2 || features.iter().any(|f| f.dim() != d) {
            return Err(Error::contract("feature vectors must share a dimension of at least 2"));
        }
        if features.iter().any(|f| f.0.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                context: "projection input".into(),
            });
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(&f.0) {
                *m += v / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for f in features {
            for i in 0..d {
                let a = f.0[i] - mean[i];
                for j in 0..d {
                    cov[(i, j)] += a * (f.0[j] - mean[j]) / n;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let axis = |k: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(Self {
            mean,
            axes: [axis(0), axis(1)],
            variances: [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]],
        })
    }

    pub fn project(&self, f: &FeatureVector) -> (f64, f64) {
        let dot = |axis: &[f64]| -> f64 { f.0.iter().zip(&self.mean).zip(axis).map(|((v, m), a)| (v - m) * a).sum() };
        (dot(&self.axes[0]), dot(&self.axes[1]))
    }
}

/// Projects `features` onto their first two principal axes. `sources` labels
/// each point (for example `real` or `synthetic`).
pub fn project(features: &[FeatureVector], weights: &[f64], sources: &[&str]) -> Result<Vec<ProjectedPoint>> {
    if weights.len() != features.len() || sources.len() != features.len() {
        return Err(Error::contract("one weight and one source label per feature vector"));
    }
    let pca = Pca2::fit(features)?;
    Ok(features
        .iter()
        .zip(weights)
        .zip(sources)
        .map(|((f, &weight), source)| {
            let (x, y) = pca.project(f);
            ProjectedPoint {
                x,
                y,
                weight,
                source: source.to_string(),
            }
        })
        .collect())
}

/// Writes the projection as CSV with columns `x,y,weight,source`.
pub fn export_projection(features: &[FeatureVector], weights: &[f64], sources: &[&str], path: &Path) -> Result<Vec<ProjectedPoint>> {
    let points = project(features, weights, sources)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "weight", "source"])?;
    for p in &points {
        w.write_record([
            crate::ft_engine::report::format_float(p.x),
            crate::ft_engine::report::format_float(p.y),
            crate::ft_engine::report::format_float(p.weight),
            p.source.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(points)
}
