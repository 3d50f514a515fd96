use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default bound on `|C_j|`, in CAM cells.
pub const DEFAULT_BN_CAP: i32 = 64;

/// Per-neuron batch normalization applied to the integer XNOR sum `y`:
/// `gamma * (y + bias - mu) / sqrt(sigma2 + epsilon) + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams<T> {
    pub gamma: T,
    pub beta: T,
    pub mu: T,
    pub sigma2: T,
    pub epsilon: T,
    pub bias: T,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(gamma: T, beta: T, mu: T, sigma2: T, epsilon: T, bias: T) -> Result<Self> {
        let p = Self {
            gamma,
            beta,
            mu,
            sigma2,
            epsilon,
            bias,
        };
        if [gamma, beta, mu, sigma2, epsilon, bias].iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite batch-norm parameter".into()));
        }
        if !(sigma2 + epsilon > T::zero()) {
            return Err(Error::Numeric(format!(
                "sigma2 + epsilon must be positive, got {}",
                sigma2 + epsilon
            )));
        }
        Ok(p)
    }

    pub fn normalized(&self, y: T) -> T {
        self.gamma * (y + self.bias - self.mu) / (self.sigma2 + self.epsilon).sqrt() + self.beta
    }

    /// Real-valued offset `t` with `sign(normalized(y)) = sign(y + t)` for `gamma > 0`.
    pub fn offset(&self) -> T {
        self.beta * (self.sigma2 + self.epsilon).sqrt() / self.gamma - self.mu + self.bias
    }
}

/// Integer constant `C` plus the row negation needed when `gamma < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedBn {
    pub constant: i32,
    pub negate_row: bool,
    /// `true` when the rounded constant exceeded the cap and was clamped.
    pub clamped: bool,
}

/// Folds batch norm into `sign(±y + C)`.
///
/// For `gamma > 0` the neuron fires when `y + t > 0`, with `t` the real
/// offset; `C = round(t)`. For `gamma < 0` the comparison flips, so the weight
/// row is negated (turning `y` into `-y`) and `C = round(-t)`.
pub fn fold_batch_norm<T: Real>(p: &BatchNormParams<T>, cap: i32) -> Result<FoldedBn> {
    if p.gamma == T::zero() {
        return Err(Error::DegenerateBn);
    }
    let negate_row = p.gamma < T::zero();
    let t = if negate_row { -p.offset() } else { p.offset() };
    let r = t.round();
    let cap_t = T::from_i32(cap).expect("cap representable");
    let clamped = r.abs() > cap_t;
    let constant = r
        .max(-cap_t)
        .min(cap_t)
        .to_i32()
        .ok_or_else(|| Error::Numeric(format!("folded constant {r} not representable")))?;
    Ok(FoldedBn {
        constant,
        negate_row,
        clamped,
    })
}
