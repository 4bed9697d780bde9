//! Elementwise arithmetic, scalar variants, and full reductions.

use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::math;

impl Graph {
    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    fn binary_map(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.any_requires(&[a, b]);
        self.push(shape, data, op, req)
    }

    fn unary_map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.nodes[a.0].requires_grad;
        self.push(shape, data, op, req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        Ok(self.binary_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        Ok(self.binary_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        Ok(self.binary_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary_map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sub_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.add_scalar(a, -c)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary_map(a, Op::MulScalar(a, c), |x| x * c)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary_map(a, Op::Abs(a), math::abs)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary_map(a, Op::Square(a), |x| x * x)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let req = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], Op::SumAll(a), req)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let req = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s / n], Op::MeanAll(a), req)
    }

    pub(super) fn backward_add(&mut self, a: NodeId, b: NodeId, gout: &[f64]) {
        self.accumulate(a, gout);
        self.accumulate(b, gout);
    }

    pub(super) fn backward_sub(&mut self, a: NodeId, b: NodeId, gout: &[f64]) {
        self.accumulate(a, gout);
        if self.nodes[b.0].requires_grad {
            let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
            self.accumulate(b, &neg);
        }
    }

    pub(super) fn backward_mul(&mut self, a: NodeId, b: NodeId, gout: &[f64]) {
        if self.nodes[a.0].requires_grad {
            let da: Vec<f64> = gout
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(g, y)| g * y)
                .collect();
            self.accumulate(a, &da);
        }
        if self.nodes[b.0].requires_grad {
            let db: Vec<f64> = gout
                .iter()
                .zip(&self.nodes[a.0].data)
                .map(|(g, x)| g * x)
                .collect();
            self.accumulate(b, &db);
        }
    }

    pub(super) fn backward_mul_scalar(&mut self, a: NodeId, c: f64, gout: &[f64]) {
        if self.nodes[a.0].requires_grad {
            let da: Vec<f64> = gout.iter().map(|g| g * c).collect();
            self.accumulate(a, &da);
        }
    }

    pub(super) fn backward_abs(&mut self, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        // Subgradient 0 at the kink.
        let da: Vec<f64> = gout
            .iter()
            .zip(&self.nodes[a.0].data)
            .map(|(g, &x)| {
                if x > 0.0 {
                    *g
                } else if x < 0.0 {
                    -*g
                } else {
                    0.0
                }
            })
            .collect();
        self.accumulate(a, &da);
    }

    pub(super) fn backward_square(&mut self, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let da: Vec<f64> = gout
            .iter()
            .zip(&self.nodes[a.0].data)
            .map(|(g, &x)| 2.0 * x * g)
            .collect();
        self.accumulate(a, &da);
    }

    pub(super) fn backward_sum_all(&mut self, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let da = vec![gout[0]; self.nodes[a.0].data.len()];
        self.accumulate(a, &da);
    }

    pub(super) fn backward_mean_all(&mut self, a: NodeId, gout: &[f64]) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let n = self.nodes[a.0].data.len();
        let da = vec![gout[0] / n as f64; n];
        self.accumulate(a, &da);
    }
}
