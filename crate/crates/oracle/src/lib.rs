//! Brute-force reference implementations for checking the solvers in `mabr`.
//!
//! Everything here works on plain arrays with explicit loops and shares no
//! code with the main crate. Sizes are meant to stay small (a few hundred
//! unknowns at most).

use std::fmt;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    Empty,
    Shape(String),
    RankDeficient { column: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::Empty => write!(f, "empty input"),
            OracleError::Shape(s) => write!(f, "shape mismatch: {s}"),
            OracleError::RankDeficient { column } => write!(f, "rank deficient at column {column}"),
        }
    }
}

impl std::error::Error for OracleError {}

pub type OracleResult<T> = Result<T, OracleError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> OracleResult<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(OracleError::Shape("ragged rows".into()));
        }
        Ok(Dense {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Dense {
        let mut t = Dense::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        let mut out = Dense::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..other.cols {
                    out.add(r, c, a * other.get(k, c));
                }
            }
        }
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Dense) -> OracleResult<Dense> {
        if self.cols != other.cols {
            return Err(OracleError::Shape(format!("{} vs {} columns", self.cols, other.cols)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Dense {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, s: f64) -> Dense {
        Dense {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Least-squares solution of `A x ≈ b` by Householder QR.
///
/// A column whose reduced diagonal falls below `1e-12` times the largest
/// column norm counts as rank deficient.
pub fn dense_lsq(a: &Dense, b: &[f64]) -> OracleResult<Vec<f64>> {
    let (m, n) = (a.rows, a.cols);
    if n == 0 || m == 0 {
        return Err(OracleError::Empty);
    }
    if b.len() != m {
        return Err(OracleError::Shape(format!("b has {} rows, A has {m}", b.len())));
    }
    if m < n {
        return Err(OracleError::RankDeficient { column: m });
    }
    let mut r = a.clone();
    let mut y = b.to_vec();
    let scale = (0..n)
        .map(|c| (0..m).map(|i| a.get(i, c).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    for k in 0..n {
        let norm = (k..m).map(|i| r.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale {
            return Err(OracleError::RankDeficient { column: k });
        }
        let alpha = if r.get(k, k) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r.get(i, k)).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for c in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r.get(i, c)).sum();
            let f = 2.0 * dot / vv;
            for i in k..m {
                r.add(i, c, -f * v[i - k]);
            }
        }
        let dot: f64 = (k..m).map(|i| v[i - k] * y[i]).sum();
        let f = 2.0 * dot / vv;
        for i in k..m {
            y[i] -= f * v[i - k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|c| r.get(k, c) * x[c]).sum();
        x[k] = (y[k] - s) / r.get(k, k);
    }
    Ok(x)
}

/// `‖A x − b‖²`.
pub fn lsq_objective(a: &Dense, b: &[f64], x: &[f64]) -> f64 {
    a.mul_vec(x).iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Index of the point nearest to `query`; ties go to the lowest index.
pub fn linear_nn(points: &[Point], query: &Point) -> OracleResult<usize> {
    if points.is_empty() {
        return Err(OracleError::Empty);
    }
    let mut best = 0;
    let mut best_d = dist2(&points[0], query);
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = dist2(p, query);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations, sorted by
/// descending eigenvalue. Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(m: &Dense) -> OracleResult<(Vec<f64>, Dense)> {
    let n = m.rows;
    if n != m.cols {
        return Err(OracleError::Shape("matrix is not square".into()));
    }
    if n == 0 {
        return Err(OracleError::Empty);
    }
    let mut a = m.clone();
    let mut v = Dense::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        let total: f64 = a.data.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
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
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Dense::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    Ok((values, vectors))
}

/// All principal components of `samples` (one observation per row), from the
/// full sample covariance with the `n − 1` normalization.
pub fn full_pca(samples: &Dense) -> OracleResult<(Vec<f64>, Vec<f64>, Dense)> {
    let (n, d) = (samples.rows, samples.cols);
    if n < 2 || d == 0 {
        return Err(OracleError::Empty);
    }
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|r| samples.get(r, c)).sum::<f64>() / n as f64).collect();
    let mut cov = Dense::zeros(d, d);
    for r in 0..n {
        for i in 0..d {
            let di = samples.get(r, i) - mean[i];
            for j in 0..d {
                cov.add(i, j, di * (samples.get(r, j) - mean[j]) / (n - 1) as f64);
            }
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    Ok((mean, values, vectors))
}

/// `Σ_edges Σ_r g_r² ‖X_a[r] − X_b[r]‖²` with `g = (1, 1, 1, γ_e)` and each
/// `X` a 4×3 affine stored by rows.
pub fn edge_sum_stiffness(edges: &[(usize, usize)], gamma: &[f64], x: &[[[f64; 3]; 4]]) -> f64 {
    let mut total = 0.0;
    for (&(a, b), &g) in edges.iter().zip(gamma) {
        for r in 0..4 {
            let w = if r == 3 { g * g } else { 1.0 };
            for c in 0..3 {
                total += w * (x[a][r][c] - x[b][r][c]).powi(2);
            }
        }
    }
    total
}

/// Half the sum of the mean nearest distances in both directions.
pub fn brute_chamfer(a: &[Point], b: &[Point]) -> OracleResult<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(OracleError::Empty);
    }
    let one_way = |from: &[Point], to: &[Point]| {
        from.iter()
            .map(|p| to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min).sqrt())
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// `√(Σ ‖p_i − q_i‖² / n)`.
pub fn brute_rms(a: &[Point], b: &[Point]) -> OracleResult<f64> {
    if a.len() != b.len() {
        return Err(OracleError::Shape(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(OracleError::Empty);
    }
    Ok((a.iter().zip(b).map(|(p, q)| dist2(p, q)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Points with `‖p − center‖ ≤ radius`.
pub fn in_sphere_count(points: &[Point], center: &Point, radius: f64) -> usize {
    points.iter().filter(|p| dist2(p, center) <= radius * radius).count()
}

/// The single 4×3 affine `X` minimizing `Σ ‖[p_i 1] X − q_i‖²`.
pub fn global_affine_fit(src: &[Point], dst: &[Point]) -> OracleResult<[[f64; 3]; 4]> {
    if src.len() != dst.len() {
        return Err(OracleError::Shape(format!("{} vs {} points", src.len(), dst.len())));
    }
    let mut a = Dense::zeros(src.len(), 4);
    for (i, p) in src.iter().enumerate() {
        for c in 0..3 {
            a.set(i, c, p[c]);
        }
        a.set(i, 3, 1.0);
    }
    let mut x = [[0.0; 3]; 4];
    for c in 0..3 {
        let b: Vec<f64> = dst.iter().map(|q| q[c]).collect();
        let col = dense_lsq(&a, &b)?;
        for r in 0..4 {
            x[r][c] = col[r];
        }
    }
    Ok(x)
}

/// Minimizer of `Σ_i w_i ‖x_i − t_i‖²` over `x = B c + m`, where point `i`
/// occupies rows `3i..3i+3` of `basis` (`3n × k`) and `mean` (`3n`).
///
/// Zero-weight points contribute no rows.
pub fn weighted_subspace_fit(basis: &Dense, mean: &[f64], targets: &[Point], weights: &[f64]) -> OracleResult<Vec<f64>> {
    let n = targets.len();
    if basis.rows != 3 * n || mean.len() != 3 * n || weights.len() != n {
        return Err(OracleError::Shape("basis, mean, targets and weights disagree".into()));
    }
    let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    let mut a = Dense::zeros(3 * active.len(), basis.cols);
    let mut b = vec![0.0; 3 * active.len()];
    for (row, &i) in active.iter().enumerate() {
        let s = weights[i].sqrt();
        for axis in 0..3 {
            for c in 0..basis.cols {
                a.set(3 * row + axis, c, s * basis.get(3 * i + axis, c));
            }
            b[3 * row + axis] = s * (targets[i][axis] - mean[3 * i + axis]);
        }
    }
    dense_lsq(&a, &b)
}
