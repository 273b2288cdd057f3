use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

/// Dense row-major tensor. Every op in this crate works on rank-2 tensors;
/// vectors are represented as `[1, n]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A `[1, n]` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::row(vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
        assert_eq!(t.get(1, 2), 5.0);
    }

    #[test]
    fn matmul_kernels_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut out = vec![0.0; 8];
        matmul_acc(&a, &b, &mut out, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((out[i * 4 + j] - naive).abs() < 1e-12);
            }
        }
        // g (2x4) * b^T (4x3) -> 2x3
        let mut gb = vec![0.0; 6];
        matmul_bt_acc(&out, &b, &mut gb, 2, 3, 4);
        for i in 0..2 {
            for p in 0..3 {
                let naive: f64 = (0..4).map(|j| out[i * 4 + j] * b[p * 4 + j]).sum();
                assert!((gb[i * 3 + p] - naive).abs() < 1e-12);
            }
        }
        // a^T (3x2) * out (2x4) -> 3x4
        let mut ag = vec![0.0; 12];
        matmul_at_acc(&a, &out, &mut ag, 2, 3, 4);
        for p in 0..3 {
            for j in 0..4 {
                let naive: f64 = (0..2).map(|i| a[i * 3 + p] * out[i * 4 + j]).sum();
                assert!((ag[p * 4 + j] - naive).abs() < 1e-12);
            }
        }
    }
}
