use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Sum,
    Concat,
    Attention,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::Attention => "attention",
        })
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "concat" => Ok(FusionMode::Concat),
            "attention" => Ok(FusionMode::Attention),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Architecture and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Width of every hidden Bipar-GCN layer (all but the last).
    pub layer1_dim: usize,
    pub output_dim: usize,
    pub num_gcn_layers: usize,
    /// Per-hop neighbour sample sizes, hop 1 first. Only the first
    /// `num_gcn_layers` entries are used.
    pub sample_sizes: Vec<usize>,
    pub fusion: FusionMode,
    pub dropout_rate: f64,
    /// Weight-matrix L2 coefficient.
    pub lambda: f64,
    /// Fused-embedding L2 coefficient.
    pub beta: f64,
    pub use_bipar: bool,
    pub use_mge: bool,
    pub use_skip: bool,
    /// Put the initial embedding tables under the `lambda` penalty too.
    pub regularize_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 512,
            layer1_dim: 128,
            output_dim: 64,
            num_gcn_layers: 2,
            sample_sizes: vec![15, 10],
            fusion: FusionMode::Sum,
            dropout_rate: 0.2,
            lambda: 0.01,
            beta: 0.02,
            use_bipar: true,
            use_mge: true,
            use_skip: true,
            regularize_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layer1_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("embedding dimensions must be at least 1".into()));
        }
        if self.num_gcn_layers == 0 {
            return Err(Error::Config("num_gcn_layers must be at least 1".into()));
        }
        if self.use_bipar {
            if self.sample_sizes.len() < self.num_gcn_layers {
                return Err(Error::Config(format!(
                    "{} GCN layers need {} sample sizes, got {:?}",
                    self.num_gcn_layers, self.num_gcn_layers, self.sample_sizes
                )));
            }
            if self.sample_sizes.contains(&0) {
                return Err(Error::Config("sample sizes must be at least 1".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("regularisation coefficients must be non-negative".into()));
        }
        if self.active_branches() == 0 {
            return Err(Error::Config(
                "at least one of the bipartite, multi-graph and skip branches must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., output_dim]`, one entry per GCN layer boundary.
    pub fn layer_dims(&self) -> Vec<usize> {
        let k = self.num_gcn_layers;
        (0..=k)
            .map(|i| match i {
                0 => self.input_dim,
                i if i == k => self.output_dim,
                _ => self.layer1_dim,
            })
            .collect()
    }

    pub fn active_branches(&self) -> usize {
        [self.use_bipar, self.use_mge, self.use_skip]
            .iter()
            .filter(|b| **b)
            .count()
    }

    /// Width of the fused embedding `e*`.
    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            FusionMode::Concat => self.active_branches() * self.output_dim,
            FusionMode::Sum | FusionMode::Attention => self.output_dim,
        }
    }

    /// Short row label such as `bipar2+mge+skip/sum`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_bipar {
            parts.push(format!("bipar{}", self.num_gcn_layers));
        }
        if self.use_mge {
            parts.push("mge".to_string());
        }
        if self.use_skip {
            parts.push("skip".to_string());
        }
        format!("{}/{}", parts.join("+"), self.fusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layer_dims(), vec![512, 128, 64]);
        assert_eq!(c.fused_dim(), 64);
    }

    #[test]
    fn concat_triples_width() {
        let c = ModelConfig {
            fusion: FusionMode::Concat,
            ..Default::default()
        };
        assert_eq!(c.fused_dim(), 192);
        let c = ModelConfig {
            use_mge: false,
            ..c
        };
        assert_eq!(c.fused_dim(), 128);
    }

    #[test]
    fn single_layer_goes_straight_to_output() {
        let c = ModelConfig {
            num_gcn_layers: 1,
            ..Default::default()
        };
        assert_eq!(c.layer_dims(), vec![512, 64]);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ModelConfig { num_gcn_layers: 0, ..Default::default() },
            ModelConfig { num_gcn_layers: 3, ..Default::default() },
            ModelConfig { output_dim: 0, ..Default::default() },
            ModelConfig { dropout_rate: 1.0, ..Default::default() },
            ModelConfig { use_bipar: false, use_mge: false, use_skip: false, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn fusion_round_trips_through_str() {
        for m in [FusionMode::Sum, FusionMode::Concat, FusionMode::Attention] {
            assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
        }
        assert!("mean".parse::<FusionMode>().is_err());
    }
}
