//! Dense row-major linear algebra and tensor shapes.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. All reductions sum in ascending
//! index order so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MasoError, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = MasoError;

    fn try_from(m: RawMatrix) -> Result<Self> {
        Matrix::from_vec(m.rows, m.cols, m.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("matrix data length", rows * cols, data.len())?;
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(MasoError::InvalidParam(format!(
                "matrix entry {bad} is not finite"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("matrix row length", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Matrix-vector product `self · v`.
    pub fn gemv(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("gemv", self.cols, v.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// Vector-matrix product `vᵀ · self`, summing over rows in ascending order.
    pub fn gemv_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("gemv_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.row(r)) {
                *o += vr * m;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, a) in self.row(r).iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("matrix add rows", self.rows, other.rows)?;
        check_dim("matrix add cols", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// Gram matrix `self · selfᵀ` of the rows.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                g.data[i * self.rows + j] = dot(self.row(i), self.row(j));
            }
        }
        g
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

/// Free-function form of [`Matrix::gemv`].
pub fn gemv(m: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    m.gemv(v)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Channel × height × width layout of a feature map, flattened as
/// `k = c·H·W + i·W + j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(MasoError::InvalidParam(format!(
                "shape {channels}x{height}x{width} has a zero extent"
            )));
        }
        Ok(Shape3 {
            channels,
            height,
            width,
        })
    }

    /// Flat vector shape `D×1×1`.
    pub fn flat(dim: usize) -> Self {
        Shape3 {
            channels: dim,
            height: 1,
            width: 1,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        c * self.height * self.width + i * self.width + j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_examples() {
        let v = Matrix::identity(3).gemv(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
        let v = Matrix::zeros(2, 2).gemv(&[5.0, 7.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.gemv(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn gemv_dim_mismatch() {
        let err = Matrix::zeros(2, 3).gemv(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, MasoError::DimMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn gemv_t_matches_transpose() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let v = [0.5, -1.0];
        assert_eq!(m.gemv_t(&v).unwrap(), m.transpose().gemv(&v).unwrap());
    }

    #[test]
    fn matmul_and_gram() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = a.matmul(&Matrix::identity(2)).unwrap();
        assert_eq!(p, a);
        let g = a.gram();
        assert_eq!(g.get(0, 1), 11.0);
        assert_eq!(g.get(1, 1), 25.0);
    }

    #[test]
    fn shape_indexing() {
        let s = Shape3::new(2, 3, 4).unwrap();
        assert_eq!(s.dim(), 24);
        assert_eq!(s.index(1, 2, 3), 12 + 8 + 3);
        assert!(Shape3::new(0, 1, 1).is_err());
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn deserialization_checks_shape() {
        let m: Matrix = serde_json::from_str(r#"{"rows":1,"cols":2,"data":[1.0,2.0]}"#).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}
