//! Model configuration and the two standard presets.

use super::{Fiber, NetError};
use serde::{Deserialize, Serialize};

/// Architecture and geometry-gradient settings.
///
/// The two presets share every width, so their parameter counts match
/// exactly (verified programmatically): the single-pass model is one block
/// of 12 layers, the iterative model three blocks of 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub layers_per_block: usize,
    /// Hidden fiber between layers and between blocks.
    pub hidden: Fiber,
    /// Attention heads; only 1 is supported.
    pub heads: usize,
    /// Propagate gradients through bases and radial inputs of blocks >= 2.
    pub basis_gradients: bool,
    /// Neighborhood size; None means fully connected (K = n - 1).
    pub k: Option<usize>,
    /// Hidden width of the two-layer radial networks.
    pub radial_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::iterative()
    }
}

impl ModelConfig {
    pub fn single_pass() -> Self {
        ModelConfig {
            n_blocks: 1,
            layers_per_block: 12,
            hidden: Fiber::new([(0, 4), (1, 4), (2, 4)]).unwrap(),
            heads: 1,
            basis_gradients: true,
            k: None,
            radial_hidden: 32,
        }
    }

    pub fn iterative() -> Self {
        ModelConfig {
            n_blocks: 3,
            layers_per_block: 4,
            ..Self::single_pass()
        }
    }

    /// Input fiber: one constant type-0 channel per node; all geometry
    /// enters through relative positions and edge parameters.
    pub fn input_fiber() -> Fiber {
        Fiber::scalar(1)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.n_blocks == 0 || self.layers_per_block == 0 {
            return Err(NetError::Config("need at least one block and layer".into()));
        }
        if self.heads != 1 {
            return Err(NetError::Config(format!(
                "only single-head attention is supported, got {}",
                self.heads
            )));
        }
        if self.radial_hidden == 0 {
            return Err(NetError::Config("radial_hidden must be positive".into()));
        }
        if self.hidden.max_type() * 2 > crate::so3::J_MAX {
            return Err(NetError::Config(format!(
                "hidden fiber max type {} needs harmonics above degree {}",
                self.hidden.max_type(),
                crate::so3::J_MAX
            )));
        }
        if !self.hidden.contains(1) {
            return Err(NetError::Config(
                "hidden fiber needs type-1 features for position updates".into(),
            ));
        }
        if self.k == Some(0) {
            return Err(NetError::Config("neighborhood size must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::single_pass().validate().unwrap();
        ModelConfig::iterative().validate().unwrap();
        assert_eq!(ModelConfig::single_pass().layers_per_block, 12);
        assert_eq!(ModelConfig::iterative().n_blocks, 3);
    }

    #[test]
    fn config_round_trips() {
        let c = ModelConfig::iterative();
        let s = serde_json::to_string(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        // unknown keys rejected
        let with_extra = s.replace("{", "{\"bogus\": 1, ");
        assert!(serde_json::from_str::<ModelConfig>(&with_extra).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::single_pass();
        c.heads = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::single_pass();
        c.k = Some(0);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::single_pass();
        c.hidden = Fiber::new([(0, 4), (1, 4), (3, 4)]).unwrap();
        assert!(c.validate().is_err(), "type 3 needs degree-6 harmonics");
    }
}
