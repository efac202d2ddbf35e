use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::spec::NetworkSpec;

/// Filter stages whose parameters receive no updates. Stage 0 is the
/// classifier head.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub frozen_stages: BTreeSet<usize>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Every stage including the head; nothing trains.
    pub fn everything(net: &NetworkSpec) -> Self {
        Self {
            frozen_stages: (0..=net.num_stages()).collect(),
        }
    }

    pub fn is_frozen(&self, stage: usize) -> bool {
        self.frozen_stages.contains(&stage)
    }
}

/// Freezes filter stages `1..=k`; the head always stays trainable.
pub fn freeze_stages(net: &NetworkSpec, k: usize) -> Result<FreezeMask> {
    let stages = net.num_stages();
    if k > stages {
        return Err(Error::config(format!(
            "cannot freeze {k} stages of a network with {stages}"
        )));
    }
    Ok(FreezeMask {
        frozen_stages: (1..=k).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_deep, build_vanilla};

    #[test]
    fn freeze_counts() {
        let net = build_deep(3).unwrap();
        assert_eq!(freeze_stages(&net, 5).unwrap().frozen_stages, (1..=5).collect());
        assert_eq!(freeze_stages(&net, 1).unwrap().frozen_stages, [1].into());
        assert!(freeze_stages(&net, 0).unwrap().frozen_stages.is_empty());
        assert!(freeze_stages(&net, 6).is_err());
        assert!(!freeze_stages(&net, 5).unwrap().is_frozen(0));
    }

    #[test]
    fn vanilla_has_one_stage() {
        let net = build_vanilla(227).unwrap();
        assert!(freeze_stages(&net, 1).is_ok());
        assert!(freeze_stages(&net, 2).is_err());
        assert_eq!(FreezeMask::everything(&net).frozen_stages, [0, 1].into());
    }
}
