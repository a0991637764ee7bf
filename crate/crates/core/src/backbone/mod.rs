//! Pre-activation bottleneck ResNet for 32×32 inputs with a per-block attention hook.

mod assign;
mod model;

pub use assign::{assign_random_operators, AttentionAssignment};
pub use model::{build_network, BlockAttention, BlockInfo, ForwardOptions, ForwardOutput, Model};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{Baseline, DecisionMode, EcaHyper, OperatorSet, DEFAULT_REDUCTION};
use crate::error::{Result, SemError};
use crate::kernels::Activation;

/// Base channels of the three stages; bottleneck outputs are 4× wider.
pub const STAGE_WIDTHS: [usize; 3] = [16, 32, 64];
pub const EXPANSION: usize = 4;
pub const STEM_CHANNELS: usize = 16;

/// Blocks per stage for a bottleneck depth `9n + 2`.
pub fn depth_to_blocks(depth: usize) -> Result<usize> {
    if depth >= 11 && (depth - 2).is_multiple_of(9) {
        return Ok((depth - 2) / 9);
    }
    let below = depth.saturating_sub(2) / 9;
    let mut nearest: Vec<usize> = [below, below + 1]
        .into_iter()
        .filter(|&n| n >= 1)
        .map(|n| 9 * n + 2)
        .collect();
    nearest.dedup();
    let listed: Vec<String> = nearest.iter().map(ToString::to_string).collect();
    Err(SemError::domain(format!(
        "depth {depth} is not of the form 9n+2 (n >= 1); nearest valid depths: {}",
        listed.join(", ")
    )))
}

/// Which attention module each residual block carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    None,
    Baseline(Baseline),
    Sem,
    /// One operator per block, drawn uniformly with this seed.
    RandomSingle(u64),
    /// One unordered pair per block, drawn uniformly with this seed.
    RandomDouble(u64),
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionMode::None => f.write_str("none"),
            AttentionMode::Baseline(b) => write!(f, "{b}"),
            AttentionMode::Sem => f.write_str("sem"),
            AttentionMode::RandomSingle(s) => write!(f, "random_single:{s}"),
            AttentionMode::RandomDouble(s) => write!(f, "random_double:{s}"),
        }
    }
}

impl FromStr for AttentionMode {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, seed) =
            match s.split_once(':') {
                Some((h, seed)) => (
                    h,
                    Some(seed.parse::<u64>().map_err(|_| {
                        SemError::usage(format!("bad seed in attention mode '{s}'"))
                    })?),
                ),
                None => (s.as_str(), None),
            };
        match (head, seed) {
            ("none", None) => Ok(AttentionMode::None),
            ("sem", None) => Ok(AttentionMode::Sem),
            ("random_single", seed) => Ok(AttentionMode::RandomSingle(seed.unwrap_or(0))),
            ("random_double", seed) => Ok(AttentionMode::RandomDouble(seed.unwrap_or(0))),
            (other, None) => other
                .parse::<Baseline>()
                .map(AttentionMode::Baseline)
                .map_err(|_| SemError::usage(format!("unknown attention mode '{s}'"))),
            _ => Err(SemError::usage(format!("unknown attention mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub num_classes: usize,
    pub attention: AttentionMode,
    /// Operators of every `Sem` layer.
    pub operator_set: OperatorSet,
    pub reduction: usize,
    pub switch_activation: Activation,
    pub decision: DecisionMode,
    pub eca: EcaHyper,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 20,
            num_classes: 10,
            attention: AttentionMode::None,
            operator_set: OperatorSet::full(),
            reduction: DEFAULT_REDUCTION,
            switch_activation: Activation::Sigmoid,
            decision: DecisionMode::Learned,
            eca: EcaHyper::default(),
        }
    }
}

impl NetworkConfig {
    pub fn new(depth: usize, num_classes: usize, attention: AttentionMode) -> Self {
        Self {
            depth,
            num_classes,
            attention,
            ..Self::default()
        }
    }

    pub fn blocks_per_stage(&self) -> Result<usize> {
        depth_to_blocks(self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks_per_stage()?;
        if self.num_classes == 0 {
            return Err(SemError::domain("num_classes must be positive"));
        }
        if self.reduction == 0 {
            return Err(SemError::domain("reduction ratio must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_depths() {
        assert_eq!(depth_to_blocks(164).unwrap(), 18);
        assert_eq!(depth_to_blocks(47).unwrap(), 5);
        assert_eq!(depth_to_blocks(20).unwrap(), 2);
        assert_eq!(depth_to_blocks(272).unwrap(), 30);
        assert_eq!(depth_to_blocks(362).unwrap(), 40);
    }

    #[test]
    fn invalid_depth_lists_neighbours() {
        let err = depth_to_blocks(50).unwrap_err().to_string();
        assert!(err.contains("47") && err.contains("56"), "{err}");
        let err = depth_to_blocks(2).unwrap_err().to_string();
        assert!(err.contains("11"), "{err}");
    }

    #[test]
    fn attention_mode_parsing() {
        for mode in [
            AttentionMode::None,
            AttentionMode::Sem,
            AttentionMode::Baseline(Baseline::Eca),
            AttentionMode::RandomDouble(42),
        ] {
            assert_eq!(mode.to_string().parse::<AttentionMode>().unwrap(), mode);
        }
        assert_eq!(
            "random_single".parse::<AttentionMode>().unwrap(),
            AttentionMode::RandomSingle(0)
        );
        assert!("cbam".parse::<AttentionMode>().is_err());
        assert!("sem:3".parse::<AttentionMode>().is_err());
    }
}
