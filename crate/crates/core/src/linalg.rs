//! Dense vectors, row-major matrices and a Cholesky factor with rank-one updates.
//!
//! Everything here is plain `f64` storage. The solvers only ever need
//! matrix-vector products, Gram accumulation and SPD solves, so there is no
//! general-purpose BLAS layer.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `‖a - b‖ / ‖b‖`, or the absolute difference when `b` is zero.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = norm2(&sub(a, b));
    let nb = norm2(b);
    if nb > 0.0 {
        d / nb
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::dims("DenseMatrix::from_row_major", nrows * ncols, data.len()));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::dims("DenseMatrix::from_rows", ncols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::dims("DenseMatrix::matmul", self.ncols, other.nrows));
        }
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            let orow = &mut out.data[i * other.ncols..(i + 1) * other.ncols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), orow);
                }
            }
        }
        Ok(out)
    }

    /// `AᵀA`
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.ncols, self.ncols);
        for i in 0..self.nrows {
            g.add_outer(1.0, self.row(i));
        }
        g
    }

    /// `self += alpha * v vᵀ`, kept exactly symmetric.
    pub fn add_outer(&mut self, alpha: f64, v: &[f64]) {
        let n = self.ncols;
        for i in 0..n {
            let s = alpha * v[i];
            if s == 0.0 {
                continue;
            }
            for j in i..n {
                let val = s * v[j];
                self.data[i * n + j] += val;
                if i != j {
                    self.data[j * n + i] += val;
                }
            }
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseMatrix) {
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.nrows.min(self.ncols)).map(|i| self[(i, i)]).sum()
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Lower-triangular Cholesky factor `G = C Cᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    factor: DenseMatrix,
}

impl Cholesky {
    pub fn factor(g: &DenseMatrix) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::dims("Cholesky::factor", n, g.ncols()));
        }
        let mut c = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = g[(j, j)];
            for k in 0..j {
                d -= c[(j, k)] * c[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NumericalBreakdown(format!(
                    "matrix not positive definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            c[(j, j)] = djj;
            for i in j + 1..n {
                let s = g[(i, j)] - dot(&c.row(i)[..j], &c.row(j)[..j]);
                c[(i, j)] = s / djj;
            }
        }
        Ok(Self { factor: c })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.factor
    }

    /// Rank-one update so the factor represents `G + v vᵀ`.
    pub fn update(&mut self, v: &[f64]) {
        let n = self.dim();
        let mut w = v.to_vec();
        let c = &mut self.factor;
        for k in 0..n {
            let ckk = c[(k, k)];
            let r = ckk.hypot(w[k]);
            let cos = r / ckk;
            let sin = w[k] / ckk;
            c[(k, k)] = r;
            for i in k + 1..n {
                let cik = (c[(i, k)] + sin * w[i]) / cos;
                w[i] = cos * w[i] - sin * cik;
                c[(i, k)] = cik;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let c = &self.factor;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&c.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / c[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= c[(k, i)] * y[k];
            }
            y[i] = s / c[(i, i)];
        }
        y
    }

    /// Reassembles `C Cᵀ`; used to audit factor consistency.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        let c = &self.factor;
        DenseMatrix::from_fn(n, n, |i, j| {
            let m = i.min(j) + 1;
            dot(&c.row(i)[..m], &c.row(j)[..m])
        })
    }
}
