use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemError};

/// One of the three excitation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    /// Two-layer bottleneck (SE style).
    Fc,
    /// Shared 1-D convolution across channels (ECA style).
    Cnn,
    /// Scalar affine map of the channel descriptor (instance enhance).
    Ie,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Fc, Operator::Cnn, Operator::Ie];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Fc => "fc",
            Operator::Cnn => "cnn",
            Operator::Ie => "ie",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fc" | "se" => Ok(Operator::Fc),
            "cnn" | "eca" => Ok(Operator::Cnn),
            "ie" => Ok(Operator::Ie),
            other => Err(SemError::usage(format!(
                "unknown excitation operator '{other}'"
            ))),
        }
    }
}

/// Non-empty, duplicate-free subset of the operators, always ordered FC, CNN, IE.
///
/// Decision-vector column `i` belongs to `members()[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OperatorSet {
    members: Vec<Operator>,
}

impl OperatorSet {
    pub fn new(ops: &[Operator]) -> Result<Self> {
        let mut members = ops.to_vec();
        members.sort_unstable();
        let len = members.len();
        members.dedup();
        if members.is_empty() {
            return Err(SemError::domain("operator set must not be empty"));
        }
        if members.len() != len {
            return Err(SemError::domain(format!("duplicate operators in {ops:?}")));
        }
        Ok(Self { members })
    }

    pub fn full() -> Self {
        Self {
            members: Operator::ALL.to_vec(),
        }
    }

    pub fn single(op: Operator) -> Self {
        Self { members: vec![op] }
    }

    pub fn members(&self) -> &[Operator] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, op: Operator) -> bool {
        self.members.contains(&op)
    }

    pub fn index_of(&self, op: Operator) -> Option<usize> {
        self.members.iter().position(|&o| o == op)
    }

    /// All seven non-empty subsets: singles, then pairs, then the full set.
    pub fn all_subsets() -> Vec<OperatorSet> {
        use Operator::*;
        [
            &[Fc][..],
            &[Cnn],
            &[Ie],
            &[Fc, Cnn],
            &[Fc, Ie],
            &[Cnn, Ie],
            &[Fc, Cnn, Ie],
        ]
        .iter()
        .map(|ops| OperatorSet::new(ops).expect("valid subset"))
        .collect()
    }

    /// The three unordered pairs.
    pub fn pairs() -> [OperatorSet; 3] {
        use Operator::*;
        [
            OperatorSet::new(&[Fc, Cnn]).expect("pair"),
            OperatorSet::new(&[Fc, Ie]).expect("pair"),
            OperatorSet::new(&[Cnn, Ie]).expect("pair"),
        ]
    }
}

impl fmt::Display for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.members.iter().map(|o| o.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for OperatorSet {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        let ops = s
            .split(['+', ',', '|'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Operator>>>()?;
        OperatorSet::new(&ops)
    }
}

impl TryFrom<String> for OperatorSet {
    type Error = SemError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OperatorSet> for String {
    fn from(set: OperatorSet) -> String {
        set.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_validation() {
        let set = OperatorSet::new(&[Operator::Ie, Operator::Fc]).unwrap();
        assert_eq!(set.members(), &[Operator::Fc, Operator::Ie]);
        assert_eq!(set.index_of(Operator::Ie), Some(1));
        assert!(OperatorSet::new(&[]).is_err());
        assert!(OperatorSet::new(&[Operator::Cnn, Operator::Cnn]).is_err());
    }

    #[test]
    fn parse_and_display() {
        let set: OperatorSet = "ie,cnn".parse().unwrap();
        assert_eq!(set.to_string(), "cnn+ie");
        assert_eq!(
            "fc+cnn+ie".parse::<OperatorSet>().unwrap(),
            OperatorSet::full()
        );
        assert!("fc+xyz".parse::<OperatorSet>().is_err());
    }

    #[test]
    fn seven_subsets() {
        let all = OperatorSet::all_subsets();
        assert_eq!(all.len(), 7);
        let lens: Vec<usize> = all.iter().map(OperatorSet::len).collect();
        assert_eq!(lens, [1, 1, 1, 2, 2, 2, 3]);
    }
}
