//! Dense layers and residual blocks with hand-written forward, backward and
//! forward-tangent (JVP) passes.
//!
//! Activations are batched as column matrices (`features × batch`). The
//! tangent passes exist for the gradient penalty, which differentiates the
//! critic's input gradient a second time; with piecewise-linear activations
//! the second derivative of the activation vanishes, so the combined reverse
//! pass only needs the tangent ops (and biases receive no penalty gradient).

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;

/// Elementwise leaky ReLU.
pub fn leaky_relu(z: &Mat, slope: f64) -> Mat {
    z.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Elementwise derivative of the leaky ReLU, evaluated from the
/// pre-activation (the subgradient at zero is taken from the positive side).
pub fn leaky_relu_deriv(z: &Mat, slope: f64) -> Mat {
    z.map(|v| if v >= 0.0 { 1.0 } else { slope })
}

/// Fully connected layer `z = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: DVector<f64>,
}

impl Linear {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Linear {
            w: Mat::zeros(outputs, inputs),
            b: DVector::zeros(outputs),
        }
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut z = &self.w * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z
    }

    /// Tangent of the forward map: `ż = W·ẋ` (the bias drops out).
    pub fn jvp(&self, x_tangent: &Mat) -> Mat {
        &self.w * x_tangent
    }

    /// Accumulates `dW += dz·xᵀ`, `db += Σ_batch dz` into `grad` and returns
    /// the input gradient `Wᵀ·dz`.
    pub fn backward(&self, x: &Mat, dz: &Mat, grad: &mut Linear) -> Mat {
        grad.w.gemm(1.0, dz, &x.transpose(), 1.0);
        for col in dz.column_iter() {
            grad.b += col;
        }
        self.w.tr_mul(dz)
    }

    /// Reverse pass through the tangent op `ż = W·ẋ`: accumulates
    /// `dW += dż·ẋᵀ` (no bias term) and returns `Wᵀ·dż`.
    pub fn backward_tangent(&self, x_tangent: &Mat, dz_tangent: &Mat, grad: &mut Linear) -> Mat {
        grad.w.gemm(1.0, dz_tangent, &x_tangent.transpose(), 1.0);
        self.w.tr_mul(dz_tangent)
    }
}

/// Residual block: `out = lrelu(L2(lrelu(L1(u)))) + u`. With zero weights the
/// block is the identity on its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub l1: Linear,
    pub l2: Linear,
}

pub struct ResBlockCache {
    pub input: Mat,
    pub z1: Mat,
    pub a1: Mat,
    pub z2: Mat,
}

pub struct ResBlockTangent {
    pub input: Mat,
    pub z1: Mat,
    pub a1: Mat,
    pub z2: Mat,
}

impl ResBlock {
    pub fn zeros(width: usize) -> Self {
        ResBlock {
            l1: Linear::zeros(width, width),
            l2: Linear::zeros(width, width),
        }
    }

    pub fn forward(&self, u: &Mat, slope: f64) -> (Mat, ResBlockCache) {
        let z1 = self.l1.forward(u);
        let a1 = leaky_relu(&z1, slope);
        let z2 = self.l2.forward(&a1);
        let out = leaky_relu(&z2, slope) + u;
        (
            out,
            ResBlockCache {
                input: u.clone(),
                z1,
                a1,
                z2,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ResBlockCache,
        d_out: &Mat,
        slope: f64,
        grad: &mut ResBlock,
    ) -> Mat {
        let dz2 = leaky_relu_deriv(&cache.z2, slope).component_mul(d_out);
        let da1 = self.l2.backward(&cache.a1, &dz2, &mut grad.l2);
        let dz1 = leaky_relu_deriv(&cache.z1, slope).component_mul(&da1);
        let du_stack = self.l1.backward(&cache.input, &dz1, &mut grad.l1);
        du_stack + d_out
    }

    /// Tangent forward; activation derivatives come from the primal cache.
    pub fn jvp(&self, cache: &ResBlockCache, u_tangent: &Mat, slope: f64) -> (Mat, ResBlockTangent) {
        let z1 = self.l1.jvp(u_tangent);
        let a1 = leaky_relu_deriv(&cache.z1, slope).component_mul(&z1);
        let z2 = self.l2.jvp(&a1);
        let out = leaky_relu_deriv(&cache.z2, slope).component_mul(&z2) + u_tangent;
        (
            out,
            ResBlockTangent {
                input: u_tangent.clone(),
                z1,
                a1,
                z2: cache.z2.clone(),
            },
        )
    }

    /// Reverse pass over the tangent graph of the block.
    pub fn backward_tangent(
        &self,
        cache: &ResBlockCache,
        tangent: &ResBlockTangent,
        d_out: &Mat,
        slope: f64,
        grad: &mut ResBlock,
    ) -> Mat {
        let dz2 = leaky_relu_deriv(&cache.z2, slope).component_mul(d_out);
        let da1 = self.l2.backward_tangent(&tangent.a1, &dz2, &mut grad.l2);
        let dz1 = leaky_relu_deriv(&cache.z1, slope).component_mul(&da1);
        let du_stack = self.l1.backward_tangent(&tangent.input, &dz1, &mut grad.l1);
        du_stack + d_out
    }
}

/// Appends `rhs` below `lhs` (feature concatenation per batch column).
pub fn vstack(lhs: &Mat, rhs: &Mat) -> Mat {
    debug_assert_eq!(lhs.ncols(), rhs.ncols());
    let mut out = Mat::zeros(lhs.nrows() + rhs.nrows(), lhs.ncols());
    out.view_mut((0, 0), (lhs.nrows(), lhs.ncols())).copy_from(lhs);
    out.view_mut((lhs.nrows(), 0), (rhs.nrows(), rhs.ncols()))
        .copy_from(rhs);
    out
}

/// Splits a stacked feature matrix back into `(top, bottom)` parts.
pub fn vsplit(m: &Mat, top_rows: usize) -> (Mat, Mat) {
    let top = m.view((0, 0), (top_rows, m.ncols())).into_owned();
    let bottom = m
        .view((top_rows, 0), (m.nrows() - top_rows, m.ncols()))
        .into_owned();
    (top, bottom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_res_block_is_identity() {
        let block = ResBlock::zeros(8);
        let u = Mat::from_fn(8, 3, |r, c| (r * 3 + c) as f64 * 0.3 - 2.0);
        let (out, _) = block.forward(&u, 0.2);
        assert_relative_eq!(out, u, epsilon = 1e-15);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut lin = Linear::zeros(3, 4);
        for (i, v) in lin.w.iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin();
        }
        for (i, v) in lin.b.iter_mut().enumerate() {
            *v = i as f64 * 0.1 - 0.2;
        }
        let x = Mat::from_fn(4, 2, |r, c| ((r + 2 * c) as f64 * 0.9).cos());
        // scalar objective: sum of squares of outputs
        let objective = |l: &Linear| -> f64 { l.forward(&x).iter().map(|v| v * v).sum() };
        let z = lin.forward(&x);
        let dz = z.map(|v| 2.0 * v);
        let mut grad = Linear::zeros(3, 4);
        let dx = lin.backward(&x, &dz, &mut grad);

        let step = 1e-6;
        for i in 0..12 {
            let mut plus = lin.clone();
            plus.w.as_mut_slice()[i] += step;
            let mut minus = lin.clone();
            minus.w.as_mut_slice()[i] -= step;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
            assert_relative_eq!(grad.w.as_slice()[i], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
        for i in 0..3 {
            let mut plus = lin.clone();
            plus.b[i] += step;
            let mut minus = lin.clone();
            minus.b[i] -= step;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
            assert_relative_eq!(grad.b[i], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
        // input gradient
        for i in 0..8 {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += step;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= step;
            let f = |m: &Mat| -> f64 { lin.forward(m).iter().map(|v| v * v).sum() };
            let fd = (f(&xp) - f(&xm)) / (2.0 * step);
            assert_relative_eq!(dx.as_slice()[i], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn res_block_backward_matches_finite_differences() {
        let mut block = ResBlock::zeros(5);
        for (i, v) in block.l1.w.iter_mut().enumerate() {
            *v = ((i * 7 % 13) as f64 - 6.0) * 0.11;
        }
        for (i, v) in block.l2.w.iter_mut().enumerate() {
            *v = ((i * 5 % 11) as f64 - 5.0) * 0.13;
        }
        for (i, v) in block.l1.b.iter_mut().enumerate() {
            *v = i as f64 * 0.05;
        }
        let u = Mat::from_fn(5, 2, |r, c| ((r + c) as f64 * 1.3).sin());
        let slope = 0.2;
        let objective = |b: &ResBlock, input: &Mat| -> f64 {
            b.forward(input, slope).0.iter().map(|v| v * v).sum()
        };

        let (out, cache) = block.forward(&u, slope);
        let d_out = out.map(|v| 2.0 * v);
        let mut grad = ResBlock::zeros(5);
        let du = block.backward(&cache, &d_out, slope, &mut grad);

        let step = 1e-6;
        for i in 0..25 {
            let mut plus = block.clone();
            plus.l1.w.as_mut_slice()[i] += step;
            let mut minus = block.clone();
            minus.l1.w.as_mut_slice()[i] -= step;
            let fd = (objective(&plus, &u) - objective(&minus, &u)) / (2.0 * step);
            assert_relative_eq!(grad.l1.w.as_slice()[i], fd, max_relative = 1e-5, epsilon = 1e-8);
        }
        for i in 0..10 {
            let mut up = u.clone();
            up.as_mut_slice()[i] += step;
            let mut um = u.clone();
            um.as_mut_slice()[i] -= step;
            let fd = (objective(&block, &up) - objective(&block, &um)) / (2.0 * step);
            assert_relative_eq!(du.as_slice()[i], fd, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn jvp_matches_directional_finite_difference() {
        let mut block = ResBlock::zeros(4);
        for (i, v) in block.l1.w.iter_mut().enumerate() {
            *v = ((i * 3 % 7) as f64 - 3.0) * 0.21;
        }
        for (i, v) in block.l2.w.iter_mut().enumerate() {
            *v = ((i * 11 % 9) as f64 - 4.0) * 0.17;
        }
        let u = Mat::from_fn(4, 3, |r, c| ((2 * r + c) as f64 * 0.7).cos());
        let dir = Mat::from_fn(4, 3, |r, c| ((r + 3 * c) as f64 * 1.1).sin());
        let slope = 0.2;
        let (_, cache) = block.forward(&u, slope);
        let (jvp, _) = block.jvp(&cache, &dir, slope);

        let step = 1e-6;
        let plus = block.forward(&(&u + &dir * step), slope).0;
        let minus = block.forward(&(&u - &dir * step), slope).0;
        let fd = (plus - minus) / (2.0 * step);
        for (a, b) in jvp.iter().zip(fd.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn stack_and_split_round_trip() {
        let a = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let b = Mat::from_fn(4, 3, |r, c| (r * 3 + c) as f64 + 100.0);
        let stacked = vstack(&a, &b);
        let (top, bottom) = vsplit(&stacked, 2);
        assert_eq!(top, a);
        assert_eq!(bottom, b);
    }
}
