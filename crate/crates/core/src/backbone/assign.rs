use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Operator, OperatorSet};
use crate::error::{Result, SemError};
use crate::rng::RngState;

/// Per-block operator choice for the random-assignment experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionAssignment {
    pub arity: usize,
    pub blocks: Vec<OperatorSet>,
}

impl AttentionAssignment {
    /// Compact form such as `fc,cnn+ie,ie`.
    pub fn describe(&self) -> String {
        self.blocks
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Uniform i.i.d. choice per block among the three operators (arity 1) or
/// the three unordered pairs (arity 2).
pub fn assign_random_operators(
    n_blocks: usize,
    arity: usize,
    seed: u64,
) -> Result<AttentionAssignment> {
    let choices: Vec<OperatorSet> = match arity {
        1 => Operator::ALL
            .iter()
            .map(|&op| OperatorSet::single(op))
            .collect(),
        2 => OperatorSet::pairs().to_vec(),
        _ => {
            return Err(SemError::domain(format!(
                "operator arity must be 1 or 2, got {arity}"
            )))
        }
    };
    let mut rng = RngState::new(seed, 0xA5516).rng();
    let blocks = (0..n_blocks)
        .map(|_| choices[rng.random_range(0..choices.len())].clone())
        .collect();
    Ok(AttentionAssignment { arity, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = assign_random_operators(30, 1, 9).unwrap();
        let b = assign_random_operators(30, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, assign_random_operators(30, 1, 10).unwrap());
    }

    #[test]
    fn pairs_only() {
        let a = assign_random_operators(200, 2, 1).unwrap();
        assert!(a.blocks.iter().all(|s| s.len() == 2));
        assert!(assign_random_operators(3, 3, 1).is_err());
        assert!(assign_random_operators(3, 0, 1).is_err());
    }
}
