//! Small dense row-major matrices: Gaussian elimination and helpers backing
//! the direct solver and the multigrid transfer algebra.

use crate::alloc_track;

use super::SolveError;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc_track::alloc_components(rows * cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        alloc_track::record(data.len());
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transposed(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Solves `self * X = rhs` by Gaussian elimination with partial pivoting,
    /// consuming the matrix. `rhs` holds one or more right-hand-side columns
    /// (as a rows x k matrix) and is overwritten with the solution.
    ///
    /// A pivot below `1e-12` times the largest entry of its row signals a
    /// singular system.
    pub fn solve_in_place(mut self, mut rhs: Mat) -> Result<Mat, SolveError> {
        assert_eq!(self.rows, self.cols, "system matrix must be square");
        assert_eq!(rhs.rows, self.rows);
        let n = self.rows;
        let k = rhs.cols;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| {
                    self.get(a, col)
                        .abs()
                        .partial_cmp(&self.get(b, col).abs())
                        .unwrap()
                })
                .unwrap();
            let pivot = self.get(pivot_row, col);
            let row_scale = (0..n)
                .map(|j| self.get(pivot_row, j).abs())
                .fold(0.0f64, f64::max);
            if pivot == 0.0 || pivot.abs() < 1e-12 * row_scale {
                return Err(SolveError::SingularSystem { column: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    self.data.swap(pivot_row * n + j, col * n + j);
                }
                for j in 0..k {
                    rhs.data.swap(pivot_row * k + j, col * k + j);
                }
            }
            let inv = 1.0 / self.get(col, col);
            for row in col + 1..n {
                let factor = self.get(row, col) * inv;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = self.get(col, j);
                    self.data[row * n + j] -= factor * v;
                }
                for j in 0..k {
                    let v = rhs.get(col, j);
                    rhs.data[row * k + j] -= factor * v;
                }
            }
        }
        for col in (0..n).rev() {
            let inv = 1.0 / self.get(col, col);
            for j in 0..k {
                let mut acc = rhs.get(col, j);
                for p in col + 1..n {
                    acc -= self.get(col, p) * rhs.get(p, j);
                }
                rhs.set(col, j, acc * inv);
            }
        }
        Ok(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Mat::from_rows(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let b = Mat::from_rows(2, 1, vec![3.0, 3.0]);
        let x = a.solve_in_place(b).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((x.get(1, 0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = Mat::from_rows(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let b = Mat::from_rows(2, 1, vec![5.0, 7.0]);
        let x = a.solve_in_place(b).unwrap();
        assert_eq!(x.get(0, 0), 7.0);
        assert_eq!(x.get(1, 0), 5.0);
    }

    #[test]
    fn singular_system_detected() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        let b = Mat::from_rows(2, 1, vec![1.0, 2.0]);
        assert!(matches!(
            a.solve_in_place(b).unwrap_err(),
            SolveError::SingularSystem { .. }
        ));
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = Mat::identity(3);
        let b = Mat::from_rows(3, 1, vec![1.0, -2.0, 3.0]);
        let x = a.solve_in_place(b.clone()).unwrap();
        assert_eq!(x, b);
    }
}
