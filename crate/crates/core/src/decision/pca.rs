use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::scalar::Real;

/// Principal components of a data matrix (rows are observations).
#[derive(Clone, Debug, PartialEq)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// Component variances, non-increasing.
    pub values: Vec<T>,
    /// Unit loadings, one column per component.
    pub vectors: Matrix<T>,
    /// Centered data projected on the components, `rows x values.len()`.
    pub scores: Matrix<T>,
}

impl<T: Real> Pca<T> {
    /// Components with variance above round-off level.
    pub fn rank(&self) -> usize {
        let total: T = self.values.iter().map(|v| v.max(T::zero())).sum();
        let floor = total * T::epsilon() * T::lit(1e3);
        self.values.iter().take_while(|&&v| v > floor && v > T::zero()).count()
    }

    /// Smallest number of components whose cumulative share of variance reaches `share`.
    pub fn dims_for(&self, share: T) -> usize {
        let rank = self.rank();
        let total: T = self.values[..rank].iter().copied().sum();
        if rank == 0 {
            return 0;
        }
        let mut acc = T::zero();
        for (d, &v) in self.values[..rank].iter().enumerate() {
            acc += v;
            if acc >= share * total {
                return d + 1;
            }
        }
        rank
    }
}

/// Sample PCA (divisor `n - 1`). Uses the Gram matrix when there are more columns than rows.
pub fn pca<T: Real>(m: &Matrix<T>) -> Result<Pca<T>> {
    let (n, p) = (m.rows(), m.cols());
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least two rows".into()));
    }
    let nt = T::from_usize_lossy(n);
    let mean: Vec<T> = (0..p).map(|j| (0..n).map(|i| m[(i, j)]).sum::<T>() / nt).collect();
    let mut xc = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            xc[(i, j)] = m[(i, j)] - mean[j];
        }
    }
    let denom = T::from_usize_lossy(n - 1);
    let (values, vectors) = if p <= n {
        let mut cov = xc.transpose().matmul(&xc);
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] /= denom;
            }
        }
        symmetric_eigen(&cov)
    } else {
        let mut gram = xc.matmul(&xc.transpose());
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] /= denom;
            }
        }
        let (vals, u) = symmetric_eigen(&gram);
        // Loadings v = X^T u / sqrt((n-1) lambda) for the non-null part.
        let mut v = Matrix::zeros(p, n);
        for c in 0..n {
            let lam = vals[c];
            if lam <= T::zero() {
                continue;
            }
            let s = T::one() / (denom * lam).sqrt();
            for j in 0..p {
                let mut acc = T::zero();
                for i in 0..n {
                    acc += xc[(i, j)] * u[(i, c)];
                }
                v[(j, c)] = acc * s;
            }
        }
        (vals, v)
    };
    let values: Vec<T> = values.into_iter().map(|v| v.max(T::zero())).collect();
    let scores = xc.matmul(&vectors);
    Ok(Pca { mean, values, vectors, scores })
}

/// Percentage contributions of each row to the first two principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Contributions<T> {
    /// `per_component[c][i]`, each component summing to 100.
    pub per_component: Vec<Vec<T>>,
    /// Variance-weighted fusion of the components.
    pub combined: Vec<T>,
}

/// Row contributions `score^2 / sum score^2 * 100` to the first two components
/// of the re-centered sub-matrix, fused by component variance.
pub fn pca_contributions<T: Real>(sub: &Matrix<T>) -> Result<Contributions<T>> {
    let n = sub.rows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "contributions need at least two rows".into(),
        ));
    }
    let fit = pca(sub)?;
    let hundred = T::lit(100.0);
    let used = fit.rank().min(2);
    if used == 0 {
        let uniform = vec![hundred / T::from_usize_lossy(n); n];
        return Ok(Contributions {
            per_component: vec![uniform.clone()],
            combined: uniform,
        });
    }
    let mut per_component = Vec::with_capacity(used);
    for c in 0..used {
        let sq: Vec<T> = (0..n).map(|i| fit.scores[(i, c)] * fit.scores[(i, c)]).collect();
        let total: T = sq.iter().copied().sum();
        per_component.push(sq.into_iter().map(|s| s / total * hundred).collect::<Vec<T>>());
    }
    let lam = &fit.values[..used];
    let lam_sum: T = lam.iter().copied().sum();
    let combined = (0..n)
        .map(|i| (0..used).map(|c| lam[c] * per_component[c][i]).sum::<T>() / lam_sum)
        .collect();
    Ok(Contributions { per_component, combined })
}
