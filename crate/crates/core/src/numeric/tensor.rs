//! Dense 64-bit float tensors with row-major storage.

use serde::{Deserialize, Serialize};

/// A dense tensor of `f64` values.
///
/// Shapes up to rank 2 are used throughout: `[]` is a scalar, `[n]` a
/// vector, `[r, c]` a matrix. Storage is contiguous row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
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

    /// Scalar value; panics if the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Interpret the tensor as a matrix: `[]` is 1x1, `[n]` is 1xn.
    pub fn view_2d(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("tensor of rank {} has no 2-d view", self.shape.len()),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.view_2d();
        self.data[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, c) = self.view_2d();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other * scale`, shapes must carry the same element count.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }
}

/// Row-major matrix multiply: (m x k) * (k x n) -> (m x n).
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.view_2d();
    let (kb, n) = b.view_2d();
    assert_eq!(k, kb, "matmul inner dims {} vs {}", k, kb);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Transposed-A multiply: (k x m)^T * (k x n) -> (m x n).
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = a.view_2d();
    let (kb, n) = b.view_2d();
    assert_eq!(k, kb, "matmul_tn inner dims {} vs {}", k, kb);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for p in 0..k {
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Transposed-B multiply: (m x k) * (n x k)^T -> (m x n).
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.view_2d();
    let (n, kb) = b.view_2d();
    assert_eq!(k, kb, "matmul_nt inner dims {} vs {}", k, kb);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 5.0, -6.0]);
        let b = Tensor::matrix(2, 3, vec![7.0, 8.0, -9.0, 1.0, 2.0, 3.0]);
        // a^T * b via matmul_tn equals explicit transpose.
        let at = Tensor::matrix(3, 2, vec![1.0, 0.5, -2.0, 5.0, 3.0, -6.0]);
        assert_eq!(matmul_tn(&a, &b), matmul(&at, &b));
        // a * b^T via matmul_nt equals explicit transpose.
        let bt = Tensor::matrix(3, 2, vec![7.0, 1.0, 8.0, 2.0, -9.0, 3.0]);
        assert_eq!(matmul_nt(&a, &b), matmul(&a, &bt));
    }

    #[test]
    fn vector_views() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(v.view_2d(), (1, 2));
        let s = Tensor::scalar(3.0);
        assert_eq!(s.view_2d(), (1, 1));
        assert_eq!(s.item(), 3.0);
    }
}
