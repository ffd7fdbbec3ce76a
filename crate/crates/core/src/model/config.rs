use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{Att2DAMode, SelfAttVariant};
use crate::error::{Error, Result};

/// Which attention block sits in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttentionKind {
    #[default]
    None,
    TwoD(Att2DAMode),
    SelfAttention(SelfAttVariant),
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 7] = [
        AttentionKind::None,
        AttentionKind::TwoD(Att2DAMode::Input),
        AttentionKind::TwoD(Att2DAMode::Codeword),
        AttentionKind::TwoD(Att2DAMode::Temporal),
        AttentionKind::SelfAttention(SelfAttVariant::CodewordTemporal),
        AttentionKind::SelfAttention(SelfAttVariant::Codeword),
        AttentionKind::SelfAttention(SelfAttVariant::Temporal),
    ];
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::None => f.write_str("none"),
            AttentionKind::TwoD(mode) => write!(f, "2da-{mode}"),
            AttentionKind::SelfAttention(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(AttentionKind::None);
        }
        if let Some(mode) = s.strip_prefix("2da-") {
            return Ok(AttentionKind::TwoD(mode.parse()?));
        }
        s.parse()
            .map(AttentionKind::SelfAttention)
            .map_err(|_| Error::InvalidConfig(format!(
                "unknown attention `{s}` (expected none, 2da-input, 2da-codeword, 2da-temporal, ctsa, csa or tsa)"
            )))
    }
}

impl TryFrom<String> for AttentionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttentionKind> for String {
    fn from(k: AttentionKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrontendConfig {
    #[default]
    None,
    /// Same-length zero-padded 1D convolution over time followed by ReLU.
    TemporalConv { width: usize, channels: usize },
}

fn default_codewords() -> usize {
    32
}

fn default_latent_dim() -> usize {
    32
}

fn default_heads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub frontend: FrontendConfig,
    /// Feature dimension `D` of the raw input.
    pub input_dim: usize,
    /// Sequence length `N` the attention weights are sized for.
    pub seq_len: usize,
    #[serde(default = "default_codewords")]
    pub codewords: usize,
    #[serde(default)]
    pub attention: AttentionKind,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub dropout: f64,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: K = 32, d = 32, one head, no dropout.
    pub fn desk(input_dim: usize, seq_len: usize, classes: usize, attention: AttentionKind) -> Self {
        ModelConfig {
            frontend: FrontendConfig::None,
            input_dim,
            seq_len,
            codewords: default_codewords(),
            attention,
            latent_dim: default_latent_dim(),
            heads: default_heads(),
            dropout: 0.0,
            classes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
            ("codewords", self.codewords),
            ("latent_dim", self.latent_dim),
            ("heads", self.heads),
            ("classes", self.classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let FrontendConfig::TemporalConv { width, channels } = self.frontend {
            if width.is_multiple_of(2) {
                return Err(Error::InvalidConfig(format!(
                    "frontend kernel width must be odd, got {width}"
                )));
            }
            if channels == 0 {
                return Err(Error::InvalidConfig("frontend channels must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Feature dimension seen by the codebook.
    pub fn feature_dim(&self) -> usize {
        match self.frontend {
            FrontendConfig::None => self.input_dim,
            FrontendConfig::TemporalConv { channels, .. } => channels,
        }
    }

    /// Histogram length fed to the classifier.
    pub fn classifier_width(&self) -> usize {
        match self.attention {
            AttentionKind::SelfAttention(_) => self.heads * self.codewords,
            _ => self.codewords,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_names_round_trip() {
        for kind in AttentionKind::ALL {
            assert_eq!(kind.to_string().parse::<AttentionKind>().unwrap(), kind);
        }
        assert!("2da-diagonal".parse::<AttentionKind>().is_err());
        assert!("transformer".parse::<AttentionKind>().is_err());
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::desk(4, 8, 3, AttentionKind::None);
        c.validate().unwrap();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.2;
        c.frontend = FrontendConfig::TemporalConv { width: 4, channels: 3 };
        assert!(c.validate().is_err());
        c.frontend = FrontendConfig::TemporalConv { width: 3, channels: 5 };
        c.validate().unwrap();
        assert_eq!(c.feature_dim(), 5);
        c.classes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn classifier_width_scales_with_heads_for_self_attention() {
        let mut c = ModelConfig::desk(4, 8, 3, AttentionKind::TwoD(Att2DAMode::Temporal));
        c.heads = 4;
        assert_eq!(c.classifier_width(), 32);
        c.attention = AttentionKind::SelfAttention(SelfAttVariant::Codeword);
        assert_eq!(c.classifier_width(), 128);
    }
}
