//! Two-component PCA of hidden states for task-similarity plots.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::*;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample variance (divisor n - 1) along each axis.
    pub explained_variance: Vec<f64>,
}

/// Relative eigenvalue floor below which a direction counts as rank-deficient.
const RANK_TOL: f64 = 1e-12;

/// Principal axes from the eigendecomposition of the sample covariance.
///
/// When there are fewer rows than columns the smaller Gram matrix of the
/// centered rows is decomposed instead; both give the same axes. Each axis
/// is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(x: &Matrix, n_components: usize) -> Result<PcaModel> {
    let (n, p) = (x.rows(), x.cols());
    if n_components == 0 || n_components > p {
        return Err(Error::invalid(format!(
            "n_components = {n_components} must be in 1..={p}"
        )));
    }
    if n <= n_components {
        return Err(Error::invalid(format!(
            "need more than {n_components} rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; p];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |r, c| x.get(r, c) - mean[c]);
    let denom = (n - 1) as f64;

    let (values, axes): (Vec<f64>, Vec<Vec<f64>>) = if p <= n {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        order
            .iter()
            .take(n_components)
            .map(|&i| {
                (
                    eig.eigenvalues[i].max(0.0),
                    eig.eigenvectors.column(i).iter().copied().collect(),
                )
            })
            .unzip()
    } else {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        order
            .iter()
            .take(n_components)
            .map(|&i| {
                let lambda = eig.eigenvalues[i].max(0.0);
                let u = eig.eigenvectors.column(i);
                let mut v: Vec<f64> = (centered.transpose() * u).iter().copied().collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                (lambda, v)
            })
            .unzip()
    };

    let top = values.first().copied().unwrap_or(0.0);
    let rank = values
        .iter()
        .filter(|&&v| v > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    if top <= 0.0 || rank == 0 {
        return Err(Error::RankDeficient {
            rank: 0,
            needed: n_components,
        });
    }

    let components = axes.into_iter().map(sign_fix).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance: values,
    })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn sign_fix(mut v: Vec<f64>) -> Vec<f64> {
    let pivot = v
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map_or(1.0, |(_, x)| x);
    if pivot < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
    v
}

impl PcaModel {
    /// `(x - mean) . components` for each row.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let k = self.components.len();
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|r| {
                let row = x.row(r);
                self.components
                    .iter()
                    .map(|c| {
                        row.iter()
                            .zip(&self.mean)
                            .zip(c)
                            .map(|((v, m), w)| (v - m) * w)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let data = rows.into_iter().flatten().collect();
        Matrix::from_vec(x.rows(), k, data)
    }
}

/// One projected sample for `pca.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaPoint {
    pub dataset: String,
    pub sample_id: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Fits two components on the pooled `layer` states of all bundles and
/// projects every sample, in bundle then sample order.
pub fn project_datasets(bundles: &[&DatasetBundle], layer: usize) -> Result<Vec<PcaPoint>> {
    let blocks = bundles
        .iter()
        .map(|b| b.slice_layer(layer))
        .collect::<Result<Vec<_>>>()?;
    let x = Matrix::vstack(&blocks)?;
    let proj = fit_pca(&x, 2)?.transform(&x)?;
    let owners = bundles
        .iter()
        .flat_map(|b| b.signals.iter().map(move |s| (b.name(), s.id.as_str())));
    Ok(owners
        .enumerate()
        .map(|(i, (dataset, sample_id))| PcaPoint {
            dataset: dataset.to_string(),
            sample_id: sample_id.to_string(),
            pc1: proj.get(i, 0),
            pc2: proj.get(i, 1),
        })
        .collect())
}

pub fn write_pca_csv(points: &[PcaPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "dataset,sample_id,pc1,pc2")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{}",
            crate::fmt::csv_field(&p.dataset),
            crate::fmt::csv_field(&p.sample_id),
            crate::fmt::sig6(p.pc1),
            crate::fmt::sig6(p.pc2)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_in_plane() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = fit_pca(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        let c = &m.components[0];
        let s = 5f64.sqrt();
        assert!((c[0] - 1.0 / s).abs() < 1e-12 && (c[1] - 2.0 / s).abs() < 1e-12);
        assert!(m.explained_variance[1].abs() <= 1e-8);
    }

    #[test]
    fn isotropic_square() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let m = fit_pca(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        assert!((m.explained_variance[0] - m.explained_variance[1]).abs() < 1e-12);
    }

    #[test]
    fn transform_of_mean_is_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_vec(30, 4, (0..120).map(|_| rng.random::<f64>()).collect()).unwrap();
        let m = fit_pca(&x, 2).unwrap();
        let t = m
            .transform(&Matrix::from_vec(1, 4, m.mean.clone()).unwrap())
            .unwrap();
        assert!(t.as_slice().iter().all(|v| v.abs() < 1e-12));
        assert!(m.transform(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn constant_data_rejected() {
        let x = Matrix::from_vec(5, 3, vec![2.0; 15]).unwrap();
        assert!(matches!(fit_pca(&x, 2), Err(Error::RankDeficient { .. })));
        assert!(fit_pca(&Matrix::zeros(2, 3), 2).is_err());
    }

    #[test]
    fn wide_data_uses_gram_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_vec(6, 20, (0..120).map(|_| rng.random::<f64>()).collect()).unwrap();
        let m = fit_pca(&x, 2).unwrap();
        let t = m.transform(&x).unwrap();
        for k in 0..2 {
            let col = t.column(k);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 5.0;
            assert!((var - m.explained_variance[k]).abs() < 1e-10);
            let norm: f64 = m.components[k].iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }
}
