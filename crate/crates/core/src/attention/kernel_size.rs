use serde::{Deserialize, Serialize};

use crate::error::{Result, SemError};

/// Hyper-parameters of the adaptive kernel-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcaHyper {
    pub gamma: u32,
    pub b: u32,
}

impl Default for EcaHyper {
    fn default() -> Self {
        Self { gamma: 2, b: 1 }
    }
}

/// Odd 1-D kernel length for `channels`: `t = (log2 C + b) / γ`, truncated,
/// bumped to the next odd number when even, and at least 1.
pub fn eca_kernel_size(channels: usize, hyper: EcaHyper) -> Result<usize> {
    if channels < 1 {
        return Err(SemError::domain(
            "eca_kernel_size needs at least one channel",
        ));
    }
    if hyper.gamma < 1 {
        return Err(SemError::domain("eca gamma must be >= 1"));
    }
    let t = ((channels as f64).log2() + f64::from(hyper.b)) / f64::from(hyper.gamma);
    let k = t.abs().floor() as usize;
    let k = if k % 2 == 1 { k } else { k + 1 };
    Ok(k.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_channels() {
        let h = EcaHyper::default();
        for (c, k) in [(2, 1), (16, 3), (64, 3), (256, 5), (1024, 5)] {
            assert_eq!(eca_kernel_size(c, h).unwrap(), k, "C={c}");
        }
        assert_eq!(eca_kernel_size(1, h).unwrap(), 1);
        assert!(eca_kernel_size(0, h).is_err());
        assert!(eca_kernel_size(8, EcaHyper { gamma: 0, b: 1 }).is_err());
    }
}
