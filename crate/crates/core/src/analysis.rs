//! Embedding capacity diagnostics.
//!
//! PCA explained variance, the interpolated dimension retaining 99% of the
//! variance, average absolute pairwise correlation between embedding
//! dimensions, 2-D principal-component projection for scatter plots, and
//! accuracy aggregation over the five evaluation splits. Everything here is
//! a pure function over an immutable matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// n x d matrix of embeddings (row per graph), optionally labeled per row.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<EmbeddingMatrix> {
        if rows < 2 {
            return Err(Error::Domain(format!(
                "embedding matrix needs at least 2 rows, got {rows}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Domain(format!(
                "{} values do not fill {rows} x {cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("embedding matrix contains non-finite entries".into()));
        }
        Ok(EmbeddingMatrix {
            rows,
            cols,
            values,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<EmbeddingMatrix> {
        if labels.len() != self.rows {
            return Err(Error::Domain(format!(
                "{} labels for {} rows",
                labels.len(),
                self.rows
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                means[j] += self.at(i, j);
            }
        }
        means.iter_mut().for_each(|m| *m /= self.rows as f64);
        means
    }

    /// Sample covariance matrix (n - 1 denominator), column-centered.
    fn covariance(&self) -> Vec<f64> {
        let d = self.cols;
        let means = self.column_means();
        let mut cov = vec![0.0; d * d];
        for i in 0..self.rows {
            for a in 0..d {
                let xa = self.at(i, a) - means[a];
                for b in a..d {
                    cov[a * d + b] += xa * (self.at(i, b) - means[b]);
                }
            }
        }
        let denom = (self.rows - 1) as f64;
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] /= denom;
                cov[b * d + a] = cov[a * d + b];
            }
        }
        cov
    }
}

/// Cumulative explained-variance curve V(1..d), plus a degeneracy flag for
/// inputs with zero total variance (all rows identical), where V is defined
/// as identically 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Eigenvalues (descending) and eigenvectors (columns, matching order) of a
/// symmetric matrix via cyclic Jacobi rotations. Deterministic: fixed sweep
/// order, descending sort with index tie-break.
fn symmetric_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                s += a[p * d + q] * a[p * d + q];
            }
        }
        s
    };
    let scale: f64 = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-30 * scale * scale;
    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| {
        a[y * d + y]
            .partial_cmp(&a[x * d + x])
            .unwrap()
            .then(x.cmp(&y))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut eigenvectors = vec![0.0; d * d];
    for (col, &i) in order.iter().enumerate() {
        for k in 0..d {
            eigenvectors[k * d + col] = v[k * d + i];
        }
    }
    (eigenvalues, eigenvectors)
}

fn clamped_eigenvalues(e: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>) {
    let (mut eigenvalues, eigenvectors) = symmetric_eigen(&e.covariance(), e.cols());
    for ev in &mut eigenvalues {
        if *ev < 0.0 {
            *ev = 0.0; // roundoff
        }
    }
    (eigenvalues, eigenvectors)
}

/// Cumulative explained variance V(i) = (sum of i largest eigenvalues of
/// the covariance) / trace, for i = 1..d.
pub fn pca_explained_variance(e: &EmbeddingMatrix) -> Result<VarianceCurve> {
    let (eigenvalues, _) = clamped_eigenvalues(e);
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Ok(VarianceCurve {
            values: vec![1.0; e.cols()],
            degenerate: true,
        });
    }
    let mut values = Vec::with_capacity(e.cols());
    let mut acc = 0.0;
    for ev in &eigenvalues {
        acc += ev;
        values.push(acc / total);
    }
    Ok(VarianceCurve {
        values,
        degenerate: false,
    })
}

/// The interpolated dimension retaining 99% of the variance: with the
/// convention V(0) = 0, find j with V(j) <= 0.99 <= V(j+1) and return
/// j + (0.99 - V(j)) / (V(j+1) - V(j)).
pub fn intrinsic_dimension(curve: &VarianceCurve) -> Result<f64> {
    const TARGET: f64 = 0.99;
    let v = &curve.values;
    if v.is_empty() {
        return Err(Error::Domain("empty variance curve".into()));
    }
    for w in v.windows(2) {
        if w[1] < w[0] - 1e-9 {
            return Err(Error::Domain(format!(
                "variance curve is not non-decreasing: {} then {}",
                w[0], w[1]
            )));
        }
    }
    let last = *v.last().unwrap();
    if (last - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "variance curve does not reach 1 (got {last})"
        )));
    }
    let mut prev = 0.0; // V(0)
    for (i, &cur) in v.iter().enumerate() {
        if cur >= TARGET {
            let j = i as f64; // prev is V(j), cur is V(j+1)
            let gap = cur - prev;
            if gap <= 0.0 {
                return Ok(j + 1.0);
            }
            return Ok(j + (TARGET - prev) / gap);
        }
        prev = cur;
    }
    Ok(v.len() as f64)
}

/// Mean over all unordered column pairs of |Pearson correlation|. A pair
/// involving a zero-variance column contributes 0: a constant dimension
/// carries no redundant information.
pub fn avg_abs_correlation(e: &EmbeddingMatrix) -> Result<f64> {
    let d = e.cols();
    if d < 2 {
        return Err(Error::Domain(format!(
            "correlation needs at least 2 dimensions, got {d}"
        )));
    }
    let n = e.rows();
    let means = e.column_means();
    let mut centered = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            centered[i * d + j] = e.at(i, j) - means[j];
        }
    }
    let mut norms = vec![0.0; d];
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..n {
            s += centered[i * d + j] * centered[i * d + j];
        }
        norms[j] = s.sqrt();
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..d {
        for b in (a + 1)..d {
            pairs += 1;
            if norms[a] == 0.0 || norms[b] == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for i in 0..n {
                dot += centered[i * d + a] * centered[i * d + b];
            }
            sum += (dot / (norms[a] * norms[b])).abs();
        }
    }
    Ok(sum / pairs as f64)
}

/// Rows projected onto the top-2 principal components, labels passed
/// through. Sign convention: within each component, the largest-magnitude
/// loading (lowest index on ties) is made positive, so the projection is
/// reproducible bit for bit.
pub fn export_scatter_2d(e: &EmbeddingMatrix) -> Result<Vec<(f64, f64, usize)>> {
    if e.cols() < 2 {
        return Err(Error::Domain(format!(
            "2-D projection needs at least 2 dimensions, got {}",
            e.cols()
        )));
    }
    let labels = e
        .labels()
        .ok_or_else(|| Error::Domain("scatter export requires row labels".into()))?;
    let d = e.cols();
    let (_, eigenvectors) = clamped_eigenvalues(e);
    let means = e.column_means();
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for (c, comp) in components.iter_mut().enumerate() {
        for k in 0..d {
            comp[k] = eigenvectors[k * d + c];
        }
        let mut lead = 0;
        for k in 1..d {
            if comp[k].abs() > comp[lead].abs() {
                lead = k;
            }
        }
        if comp[lead] < 0.0 {
            comp.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut out = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        let mut pc = [0.0; 2];
        for (c, comp) in components.iter().enumerate() {
            for k in 0..d {
                pc[c] += (e.at(i, k) - means[k]) * comp[k];
            }
        }
        out.push((pc[0], pc[1], labels[i]));
    }
    Ok(out)
}

/// Mean and sample standard deviation (n - 1) of exactly five split
/// accuracies.
pub fn aggregate_runs(accuracies: &[f64]) -> Result<(f64, f64)> {
    if accuracies.len() != 5 {
        return Err(Error::Domain(format!(
            "expected exactly 5 split results, got {}",
            accuracies.len()
        )));
    }
    Ok(mean_and_sample_std(accuracies))
}

/// Arithmetic mean and sample (n - 1) standard deviation; std is 0 for a
/// single value.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ratio of mean inter-class to mean intra-class squared distance; larger
/// means classes sit in better-separated clusters.
pub fn class_separation_ratio(e: &EmbeddingMatrix) -> Result<f64> {
    let labels = e
        .labels()
        .ok_or_else(|| Error::Domain("separation ratio requires row labels".into()))?;
    let n = e.rows();
    let d = e.cols();
    let (mut inter, mut intra) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dist = 0.0;
            for k in 0..d {
                let diff = e.at(i, k) - e.at(j, k);
                dist += diff * diff;
            }
            if labels[i] == labels[j] {
                intra.0 += dist;
                intra.1 += 1;
            } else {
                inter.0 += dist;
                inter.1 += 1;
            }
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(Error::Domain(
            "separation ratio needs both intra- and inter-class pairs".into(),
        ));
    }
    let intra_mean = (intra.0 / intra.1 as f64).max(1e-300);
    Ok((inter.0 / inter.1 as f64) / intra_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rank_one_data_explains_everything_in_one_component() {
        // rows on a line embedded in d = 64
        let d = 64;
        let mut rng = Rng::seed_from_u64(1);
        let dir: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let n = 40;
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            let t = rng.uniform_in(-2.0, 2.0);
            values.extend(dir.iter().map(|x| t * x));
        }
        let e = EmbeddingMatrix::new(n, d, values).unwrap();
        let curve = pca_explained_variance(&e).unwrap();
        assert!(close(curve.values[0], 1.0, 1e-9), "V(1) = {}", curve.values[0]);
        assert!(close(intrinsic_dimension(&curve).unwrap(), 0.99, 1e-9));
    }

    #[test]
    fn two_equal_orthogonal_directions_split_evenly() {
        // +/-1 in two separate coordinates: exactly equal variance
        let d = 6;
        let mut values = Vec::new();
        for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let mut row = vec![0.0; d];
            row[0] = a;
            row[3] = b;
            values.extend(row);
        }
        let e = EmbeddingMatrix::new(4, d, values).unwrap();
        let curve = pca_explained_variance(&e).unwrap();
        assert!(close(curve.values[0], 0.5, 1e-6), "V(1) = {}", curve.values[0]);
        assert!(close(curve.values[1], 1.0, 1e-9));
    }

    #[test]
    fn intrinsic_dimension_hand_cases() {
        let curve = VarianceCurve {
            values: vec![0.5, 1.0],
            degenerate: false,
        };
        assert!(close(intrinsic_dimension(&curve).unwrap(), 1.98, 1e-12));

        // isotropic closed form: V(i) = i/d -> 0.99 d
        for d in [5usize, 16, 64] {
            let curve = VarianceCurve {
                values: (1..=d).map(|i| i as f64 / d as f64).collect(),
                degenerate: false,
            };
            assert!(close(
                intrinsic_dimension(&curve).unwrap(),
                0.99 * d as f64,
                1e-6
            ));
        }
    }

    #[test]
    fn non_monotone_curve_is_rejected() {
        let curve = VarianceCurve {
            values: vec![0.8, 0.6, 1.0],
            degenerate: false,
        };
        assert!(intrinsic_dimension(&curve).is_err());
    }

    #[test]
    fn degenerate_input_is_flagged() {
        let e = EmbeddingMatrix::new(3, 4, vec![2.0; 12]).unwrap();
        let curve = pca_explained_variance(&e).unwrap();
        assert!(curve.degenerate);
        assert!(curve.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let n = 20;
        let mut rng = Rng::seed_from_u64(9);
        let col: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut values = Vec::new();
        for &x in &col {
            values.extend(std::iter::repeat(x).take(5));
        }
        let e = EmbeddingMatrix::new(n, 5, values).unwrap();
        assert!(close(avg_abs_correlation(&e).unwrap(), 1.0, 1e-9));
    }

    #[test]
    fn anticorrelated_pair_scores_one() {
        let n = 16;
        let mut rng = Rng::seed_from_u64(10);
        let mut values = Vec::new();
        for _ in 0..n {
            let x = rng.normal();
            values.extend([x, -x]);
        }
        let e = EmbeddingMatrix::new(n, 2, values).unwrap();
        assert!(close(avg_abs_correlation(&e).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn independent_columns_decorrelate() {
        let n = 10_000;
        let mut rng = Rng::seed_from_u64(123);
        let values: Vec<f64> = (0..n * 5).map(|_| rng.normal()).collect();
        let e = EmbeddingMatrix::new(n, 5, values).unwrap();
        let c = avg_abs_correlation(&e).unwrap();
        assert!(c < 0.05, "avg abs correlation {c}");
    }

    #[test]
    fn zero_variance_column_contributes_zero() {
        // col0 constant, col1 = col2: pairs (0,1) and (0,2) contribute 0,
        // (1,2) contributes 1 -> average 1/3
        let values = vec![
            5.0, 1.0, 1.0, //
            5.0, 2.0, 2.0, //
            5.0, 3.0, 3.0,
        ];
        let e = EmbeddingMatrix::new(3, 3, values).unwrap();
        assert!(close(avg_abs_correlation(&e).unwrap(), 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn scatter_projects_axis_aligned_data_onto_itself() {
        let values = vec![
            2.0, 0.0, //
            -2.0, 0.0, //
            0.0, 1.0, //
            0.0, -1.0,
        ];
        let e = EmbeddingMatrix::new(4, 2, values)
            .unwrap()
            .with_labels(vec![0, 0, 1, 1])
            .unwrap();
        let pts = export_scatter_2d(&e).unwrap();
        // first component is the x axis (larger variance), positive sign
        assert!(close(pts[0].0, 2.0, 1e-9) && close(pts[0].1, 0.0, 1e-9));
        assert!(close(pts[2].1, 1.0, 1e-9));
        assert_eq!(pts[2].2, 1, "label passes through");
    }

    #[test]
    fn projected_variance_matches_top_two_eigenvalues() {
        let n = 60;
        let d = 8;
        let mut rng = Rng::seed_from_u64(42);
        let values: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let e = EmbeddingMatrix::new(n, d, values)
            .unwrap()
            .with_labels(vec![0; n])
            .unwrap();
        let (eigenvalues, _) = clamped_eigenvalues(&e);
        let pts = export_scatter_2d(&e).unwrap();
        let (m1, m2) = (
            pts.iter().map(|p| p.0).sum::<f64>() / n as f64,
            pts.iter().map(|p| p.1).sum::<f64>() / n as f64,
        );
        let v1 = pts.iter().map(|p| (p.0 - m1) * (p.0 - m1)).sum::<f64>() / (n - 1) as f64;
        let v2 = pts.iter().map(|p| (p.1 - m2) * (p.1 - m2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            close(v1 + v2, eigenvalues[0] + eigenvalues[1], 1e-8),
            "{} vs {}",
            v1 + v2,
            eigenvalues[0] + eigenvalues[1]
        );
    }

    #[test]
    fn aggregate_runs_cases() {
        let (m, s) = aggregate_runs(&[0.8; 5]).unwrap();
        assert_eq!((m, s), (0.8, 0.0));
        let (m, s) = aggregate_runs(&[0.70, 0.72, 0.74, 0.76, 0.78]).unwrap();
        assert!(close(m, 0.74, 1e-12));
        assert!(close(s, 0.0316227766016838, 1e-12));
        assert!(aggregate_runs(&[0.7, 0.8]).is_err(), "arity contract");
    }

    #[test]
    fn separation_ratio_prefers_separated_classes() {
        // two tight clusters far apart vs interleaved points
        let tight = EmbeddingMatrix::new(
            4,
            2,
            vec![0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0],
        )
        .unwrap()
        .with_labels(vec![0, 0, 1, 1])
        .unwrap();
        let mixed = EmbeddingMatrix::new(
            4,
            2,
            vec![0.0, 0.0, 10.0, 0.0, 0.1, 0.0, 10.1, 0.0],
        )
        .unwrap()
        .with_labels(vec![0, 0, 1, 1])
        .unwrap();
        assert!(
            class_separation_ratio(&tight).unwrap() > class_separation_ratio(&mixed).unwrap()
        );
    }
}
