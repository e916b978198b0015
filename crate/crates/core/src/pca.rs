//! Two-component PCA for plotting embeddings, plus cosine nearest neighbours.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as rows.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    linalg::check_dim(n, a.cols())?;
    if !a.is_finite() {
        return Err(Error::NonFinite("eigen input"));
    }
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + linalg::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / linalg::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.get(b, b).total_cmp(&m.get(a, a)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(r, k, v.get(k, i));
        }
    }
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    /// One (pc1, pc2) pair per input row.
    pub coords: Vec<[f64; 2]>,
    /// Unit principal directions.
    pub components: [Vec<f64>; 2],
    /// Variances along the two components (population normalisation, 1/n).
    pub variances: [f64; 2],
    pub mean: Vec<f64>,
    /// Set when the second component carries (numerically) no variance.
    pub degenerate: bool,
}

/// Projects the rows of `points` onto their top two principal components.
///
/// The covariance (or, when there are fewer rows than columns, the Gram
/// matrix of the centred rows) is diagonalised exactly with Jacobi rotations.
pub fn pca_2d(points: &Matrix) -> Result<Pca2> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "PCA needs at least 2 points of dimension >= 2, got {n}x{d}"
        )));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("PCA input"));
    }
    let mut mean = vec![0.0; d];
    for row in points.iter_rows() {
        linalg::axpy(1.0 / n as f64, row, &mut mean);
    }
    let mut centred = points.clone();
    for i in 0..n {
        for (x, m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *x -= m;
        }
    }

    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let variances: [f64; 2];
    if n >= d {
        let mut cov = Matrix::zeros(d, d);
        for row in centred.iter_rows() {
            for a in 0..d {
                let ra = row[a] / n as f64;
                if ra != 0.0 {
                    linalg::axpy(ra, row, cov.row_mut(a));
                }
            }
        }
        let (values, vectors) = symmetric_eigen(&cov)?;
        for c in 0..2 {
            components[c].copy_from_slice(vectors.row(c));
        }
        variances = [values[0].max(0.0), values[1].max(0.0)];
    } else {
        // Gram route: G = X Xᵀ / n shares its non-zero spectrum with the
        // covariance, and Xᵀu/‖Xᵀu‖ is the matching principal direction.
        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let g = linalg::dot(centred.row(i), centred.row(j)) / n as f64;
                gram.set(i, j, g);
                gram.set(j, i, g);
            }
        }
        let (values, vectors) = symmetric_eigen(&gram)?;
        for c in 0..2 {
            let mut dir = vec![0.0; d];
            centred.transpose_mul_vec(vectors.row(c), &mut dir);
            if let Some(unit) = linalg::normalized(&dir) {
                components[c] = unit;
            }
        }
        variances = [values[0].max(0.0), values[1].max(0.0)];
    }
    for c in components.iter_mut() {
        canonical_sign(c);
    }
    let coords = centred
        .iter_rows()
        .map(|r| [linalg::dot(r, &components[0]), linalg::dot(r, &components[1])])
        .collect();
    let degenerate = variances[1] <= 1e-12 * variances[0].max(f64::MIN_POSITIVE);
    Ok(Pca2 {
        coords,
        components,
        variances,
        mean,
        degenerate,
    })
}

/// Indices of the `k` rows most cosine-similar to row `probe`, excluding the
/// probe itself. Ties go to the lower index.
pub fn nearest_neighbors(points: &Matrix, probe: usize, k: usize) -> Result<Vec<usize>> {
    if probe >= points.rows() {
        return Err(Error::InvalidArgument("probe index out of range".into()));
    }
    let q = points.row(probe);
    let mut sims = Vec::with_capacity(points.rows());
    for (i, row) in points.iter_rows().enumerate() {
        if i != probe {
            sims.push((i, linalg::cosine(q, row)?));
        }
    }
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sims.into_iter().take(k).map(|(i, _)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn two_dimensional_input_is_rotated_only() {
        let mut rng = rng_from_seed(1);
        let mut rows: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mean: Vec<f64> = (0..2).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / 12.0).collect();
        for r in rows.iter_mut() {
            r[0] -= mean[0];
            r[1] -= mean[1];
        }
        let pca = pca_2d(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let before = dist(&rows[i], &rows[j]);
                let after = dist(&pca.coords[i], &pca.coords[j]);
                assert!((before - after).abs() < 1e-9);
            }
        }
        assert!(!pca.degenerate);
    }

    #[test]
    fn collinear_points_are_flagged() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let pca = pca_2d(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!(pca.degenerate);
        assert!(pca.variances[1].abs() < 1e-12);
        assert!(pca_2d(&Matrix::from_rows(&rows[..1]).unwrap()).is_err());
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        let mut rng = rng_from_seed(2);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let wide = pca_2d(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..8).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let mut cov = Matrix::zeros(8, 8);
        for r in &rows {
            for a in 0..8 {
                for b in 0..8 {
                    cov.set(a, b, cov.get(a, b) + (r[a] - mean[a]) * (r[b] - mean[b]) / n);
                }
            }
        }
        let (values, _) = symmetric_eigen(&cov).unwrap();
        assert!((wide.variances[0] - values[0]).abs() < 1e-10);
        assert!((wide.variances[1] - values[1]).abs() < 1e-10);
        for c in 0..2 {
            let var: f64 = wide.coords.iter().map(|p| p[c] * p[c]).sum::<f64>() / n;
            assert!((var - values[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenvectors_diagonalise() {
        let mut rng = rng_from_seed(3);
        let n = 6;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x = rng.random_range(-1.0..1.0);
                a.set(i, j, x);
                a.set(j, i, x);
            }
        }
        let (values, vectors) = symmetric_eigen(&a).unwrap();
        for (r, &lambda) in values.iter().enumerate() {
            let v = vectors.row(r);
            let mut av = vec![0.0; n];
            a.mul_vec(v, &mut av);
            for k in 0..n {
                assert!((av[k] - lambda * v[k]).abs() < 1e-10);
            }
        }
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn neighbours_by_cosine() {
        let m = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![1.0, 0.05],
        ])
        .unwrap();
        assert_eq!(nearest_neighbors(&m, 0, 2).unwrap(), vec![3, 1]);
        assert_eq!(nearest_neighbors(&m, 2, 10).unwrap().len(), 3);
    }
}
