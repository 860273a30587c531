use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Element-wise regression loss. Huber uses a unit threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
    Huber,
}

impl Loss {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(Loss::Mse),
            "huber" => Ok(Loss::Huber),
            other => Err(Error::UnknownKey(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::Mse => "mse",
            Loss::Huber => "huber",
        }
    }

    /// Loss of one prediction and its derivative with respect to the prediction.
    pub fn value_grad<T: Scalar>(self, pred: T, target: T) -> (T, T) {
        let e = pred - target;
        match self {
            Loss::Mse => (e * e, T::lit(2.0) * e),
            Loss::Huber => {
                if e.abs() <= T::one() {
                    (T::lit(0.5) * e * e, e)
                } else {
                    (e.abs() - T::lit(0.5), e.signum())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_central_differences() {
        for loss in [Loss::Mse, Loss::Huber] {
            for &(p, t) in &[(0.3f64, -0.1f64), (2.5, 0.0), (-4.0, 1.0), (0.0, 0.7)] {
                let h = 1e-6;
                let fd = (loss.value_grad(p + h, t).0 - loss.value_grad(p - h, t).0) / (2.0 * h);
                assert!(
                    (fd - loss.value_grad(p, t).1).abs() < 1e-6,
                    "{loss:?} at {p}"
                );
            }
        }
        assert_eq!(Loss::Huber.value_grad(3.0, 0.0).0, 2.5);
        assert!(Loss::from_name("l1").is_err());
    }
}
