//! Encoder shape configuration, named presets, and parameter counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where layer normalization sits relative to each residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// Norm after each residual add (original transformer ordering).
    Post,
    /// Norm before each sublayer, with one final norm after the stack.
    Pre,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_size: usize,
    pub intermediate: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub norm_placement: NormPlacement,
    /// Share the MLM output projection with the token embedding matrix.
    pub tied_head: bool,
}

impl EncoderConfig {
    /// Shape-complete constructor with the defaults the rest of the crate
    /// assumes: 4x MLP width, tied head, post-norm.
    pub fn new(layers: usize, hidden: usize, heads: usize, head_size: usize, vocab: usize, max_seq: usize) -> Self {
        EncoderConfig {
            layers,
            hidden,
            heads,
            head_size,
            intermediate: 4 * hidden,
            vocab,
            max_seq,
            norm_placement: NormPlacement::Post,
            tied_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads * self.head_size != self.hidden {
            return Err(Error::config(format!(
                "heads ({}) x head_size ({}) must equal hidden ({})",
                self.heads, self.head_size, self.hidden
            )));
        }
        for (name, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_size", self.head_size),
            ("intermediate", self.intermediate),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.max_seq < 2 {
            return Err(Error::config("max_seq must be >= 2"));
        }
        Ok(())
    }

    /// (total, non-embedding) parameter counts. Non-embedding excludes the
    /// token and position embedding matrices; the tied MLM head adds only its
    /// bias, an untied head adds a full vocab x hidden projection.
    pub fn count_params(&self) -> (u64, u64) {
        let h = self.hidden as u64;
        let v = self.vocab as u64;
        let s = self.max_seq as u64;
        let i = self.intermediate as u64;
        let l = self.layers as u64;

        let embeddings = v * h + s * h;
        let attn = 4 * (h * h + h);
        let mlp = (h * i + i) + (i * h + h);
        let norms = 2 * (2 * h);
        let per_layer = attn + mlp + norms;
        let extra_norm = 2 * h;
        let head = if self.tied_head { v } else { v * h + v };

        let non_embedding = l * per_layer + extra_norm + head;
        (embeddings + non_embedding, non_embedding)
    }
}

/// Named model scales. The largest runs unstable with post-norm, so its
/// preset switches to pre-norm; the others keep the original ordering.
pub fn preset(name: &str) -> Result<EncoderConfig> {
    let mut cfg = match name {
        "124M" => EncoderConfig::new(12, 768, 12, 64, 50_265, 512),
        "354M" => EncoderConfig::new(24, 1024, 16, 64, 50_265, 512),
        "757M" => EncoderConfig::new(24, 1536, 16, 96, 50_265, 512),
        "1.5B" => EncoderConfig::new(32, 1920, 20, 96, 50_265, 512),
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
                available: "124M, 354M, 757M, 1.5B".to_string(),
            })
        }
    };
    if name == "1.5B" {
        cfg.norm_placement = NormPlacement::Pre;
    }
    Ok(cfg)
}
