use super::matrix::Matrix;
use super::mlp::Mlp;
use crate::error::Result;
use crate::scalar::Scalar;

/// Scalar loss used to drive a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckLoss {
    /// `L = sum of all outputs`
    Sum,
    /// `L = 0.5 * sum of squared outputs` (regression to a zero target)
    Mse,
}

impl CheckLoss {
    fn value<T: Scalar>(self, y: &Matrix<T>) -> T {
        match self {
            CheckLoss::Sum => y.as_slice().iter().copied().sum(),
            CheckLoss::Mse => y.as_slice().iter().map(|&v| v * v).sum::<T>() * T::lit(0.5),
        }
    }

    fn grad<T: Scalar>(self, y: &Matrix<T>) -> Matrix<T> {
        match self {
            CheckLoss::Sum => y.map(|_| T::one()),
            CheckLoss::Mse => y.clone(),
        }
    }
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-6;

/// Largest relative error between backprop and central finite differences
/// over every parameter. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, loss: CheckLoss) -> Result<T> {
    grad_check_with_step(net, x, loss, T::lit(FD_STEP))
}

/// [`grad_check`] with an explicit finite-difference step.
pub fn grad_check_with_step<T: Scalar>(
    net: &Mlp<T>,
    x: &Matrix<T>,
    loss: CheckLoss,
    h: T,
) -> Result<T> {
    let (y, cache) = net.forward(x)?;
    let grads = net.backward(&cache, &loss.grad(&y))?;
    let analytic: Vec<T> = grads.slices().into_iter().flatten().copied().collect();

    let floor = T::lit(1e-6);
    let mut probe = net.clone();
    let mut worst = T::zero();
    let mut flat = 0;
    let n_blocks = net.param_slices().len();
    for b in 0..n_blocks {
        let len = net.param_slices()[b].len();
        for j in 0..len {
            let orig = probe.param_slices()[b][j];
            probe.param_slices_mut()[b][j] = orig + h;
            let plus = loss.value(&probe.predict(x)?);
            probe.param_slices_mut()[b][j] = orig - h;
            let minus = loss.value(&probe.predict(x)?);
            probe.param_slices_mut()[b][j] = orig;
            let numeric = (plus - minus) / (h + h);
            let a = analytic[flat];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
            flat += 1;
        }
    }
    Ok(worst)
}
