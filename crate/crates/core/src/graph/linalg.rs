//! Matrix product, row softmax, and the causal attention mask.

use alloc::vec;

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::math;

/// C[m,n] = alpha * op(A)op(B) + beta * C, row-major buffers. `ta`/`tb`
/// treat the respective buffer as the transpose of the stored matrix.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: A buffer size");
    assert_eq!(b.len(), k * n, "gemm: B buffer size");
    assert_eq!(c.len(), m * n, "gemm: C buffer size");
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    fn matrix_dims(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let shape = &self.nodes[id.0].shape;
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                left: shape.clone(),
                right: vec![0, 0],
            });
        }
        Ok((shape[0], shape[1]))
    }

    /// Standard matrix product of 2-D nodes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.matrix_dims("matmul", a)?;
        let (kb, n) = self.matrix_dims("matmul", b)?;
        if ka != kb {
            return Err(Error::MatmulDimMismatch {
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            ka,
            n,
            &self.nodes[a.0].data,
            false,
            &self.nodes[b.0].data,
            false,
            0.0,
            &mut out,
        );
        let req = self.any_requires(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), req))
    }

    /// Row-wise softmax of a 2-D node. Entries of -inf contribute exactly
    /// zero mass; a row that is entirely -inf is rejected.
    pub fn softmax_rows(&mut self, w: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.matrix_dims("softmax_rows", w)?;
        let src = &self.nodes[w.0].data;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyAttentionRow { row: r });
            }
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                // exp(-inf - max) underflows to exactly 0.
                let e = math::exp(x - max);
                *d = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let req = self.nodes[w.0].requires_grad;
        Ok(self.push(vec![rows, cols], out, Op::SoftmaxRows(w), req))
    }

    /// Keeps W(i, j) for j <= i and sets every entry above the main
    /// diagonal to -inf, so later softmax assigns future frames zero mass.
    pub fn mask_causal(&mut self, w: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.matrix_dims("mask_causal", w)?;
        if rows != cols {
            return Err(Error::ShapeMismatch {
                op: "mask_causal",
                left: self.nodes[w.0].shape.clone(),
                right: vec![rows, rows],
            });
        }
        let mut out = self.nodes[w.0].data.clone();
        for i in 0..rows {
            for j in (i + 1)..cols {
                out[i * cols + j] = f64::NEG_INFINITY;
            }
        }
        let req = self.nodes[w.0].requires_grad;
        Ok(self.push(vec![rows, cols], out, Op::MaskCausal(w), req))
    }

    pub(super) fn backward_matmul(&mut self, a: NodeId, b: NodeId, gout: &[f64]) {
        let m = self.nodes[a.0].shape[0];
        let k = self.nodes[a.0].shape[1];
        let n = self.nodes[b.0].shape[1];
        if self.nodes[a.0].requires_grad {
            // dA = dC * B^T
            let mut ga = self.take_grad(a);
            gemm(m, n, k, gout, false, &self.nodes[b.0].data, true, 1.0, &mut ga);
            self.put_grad(a, ga);
        }
        if self.nodes[b.0].requires_grad {
            // dB = A^T * dC
            let mut gb = self.take_grad(b);
            gemm(k, m, n, &self.nodes[a.0].data, true, gout, false, 1.0, &mut gb);
            self.put_grad(b, gb);
        }
    }

    pub(super) fn backward_softmax_rows(&mut self, idx: usize, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let rows = self.nodes[idx].shape[0];
        let cols = self.nodes[idx].shape[1];
        let s = &self.nodes[idx].data;
        let mut da = vec![0.0; rows * cols];
        for r in 0..rows {
            let srow = &s[r * cols..(r + 1) * cols];
            let grow = &gout[r * cols..(r + 1) * cols];
            let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
            for ((d, &si), &gi) in da[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(srow)
                .zip(grow)
            {
                *d = si * (gi - dot);
            }
        }
        self.accumulate(a, &da);
    }

    pub(super) fn backward_mask_causal(&mut self, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let rows = self.nodes[a.0].shape[0];
        let cols = self.nodes[a.0].shape[1];
        let mut da = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..=i.min(cols - 1) {
                da[i * cols + j] = gout[i * cols + j];
            }
        }
        self.accumulate(a, &da);
    }
}
