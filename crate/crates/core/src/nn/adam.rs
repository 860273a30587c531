use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mlp::{Grads, Mlp};

/// Bias-corrected Adam moments for a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state for blocks of the given lengths with the usual defaults.
    pub fn new(block_lens: &[usize]) -> Self {
        Self {
            m: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn for_mlp(net: &Mlp<T>) -> Self {
        let lens: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Self::new(&lens)
    }

    /// One update over raw parameter blocks. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state has {} blocks, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(format!("adam block {i} length mismatch")));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient passed to adam".into()));
        }
        self.t += 1;
        let t = T::from_u64(self.t).expect("step count fits scalar");
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, net: &mut Mlp<T>, grads: &Grads<T>, lr: T) -> Result<()> {
        if grads.layers.len() != net.layers().len() {
            return Err(Error::shape("gradient layer count differs from network"));
        }
        let g = grads.slices();
        let mut p = net.param_slices_mut();
        self.step(&mut p, &g, lr)
    }
}
