//! Transformer shapes and their parameter/compute accounting.
//!
//! The parameter count is the dense decoder convention
//!
//! ```text
//! N = 12·D·W²  (attention + MLP blocks)
//!   + 2·V·W    (input embedding and untied output head)
//!   + P·W      (learned positional table)
//!   + 4·D·W    (two layer-norm gain/bias pairs per block)
//!   + 2·W      (final layer norm)
//! ```
//!
//! All counts are exact `u128` integers; FLOP estimates are `f64`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB: u64 = 50_257;
pub const DEFAULT_CONTEXT: u64 = 1_024;

/// A decoder-only transformer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    depth: u64,
    width: u64,
    vocab: u64,
    context: u64,
}

impl Architecture {
    /// Shape with the default GPT-2 vocabulary and 1024-token positional table.
    pub fn new(depth: u64, width: u64) -> Result<Self> {
        Self::with_embedding(depth, width, DEFAULT_VOCAB, DEFAULT_CONTEXT)
    }

    pub fn with_embedding(depth: u64, width: u64, vocab: u64, context: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidInput("depth must be at least 1".into()));
        }
        if width == 0 {
            return Err(Error::InvalidInput("width must be at least 1".into()));
        }
        Ok(Self {
            depth,
            width,
            vocab,
            context,
        })
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn vocab(&self) -> u64 {
        self.vocab
    }

    pub fn context(&self) -> u64 {
        self.context
    }

    /// Block parameters only, 12·D·W².
    pub fn core_params(&self) -> u128 {
        12 * self.depth as u128 * (self.width as u128).pow(2)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}L×{}W", self.depth, self.width)
    }
}

/// Itemised parameter count, as printed by `--explain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub blocks: u128,
    pub embeddings: u128,
    pub positional: u128,
    pub block_norms: u128,
    pub final_norm: u128,
}

impl ParamBreakdown {
    pub fn of(arch: &Architecture) -> Self {
        let d = arch.depth as u128;
        let w = arch.width as u128;
        Self {
            blocks: arch.core_params(),
            embeddings: 2 * arch.vocab as u128 * w,
            positional: arch.context as u128 * w,
            block_norms: 4 * d * w,
            final_norm: 2 * w,
        }
    }

    pub fn total(&self) -> u128 {
        self.blocks + self.embeddings + self.positional + self.block_norms + self.final_norm
    }

    pub fn lines(&self) -> Vec<(&'static str, &'static str, u128)> {
        vec![
            ("blocks", "12·D·W²", self.blocks),
            ("embeddings", "2·V·W", self.embeddings),
            ("positional", "P·W", self.positional),
            ("block layer norms", "4·D·W", self.block_norms),
            ("final layer norm", "2·W", self.final_norm),
        ]
    }
}

/// Total parameter count.
pub fn count_params(arch: &Architecture) -> u128 {
    ParamBreakdown::of(arch).total()
}

/// Training FLOPs, 6·N·T.
pub fn compute_flops(arch: &Architecture, tokens: f64) -> Result<f64> {
    if !(tokens > 0.0) || !tokens.is_finite() {
        return Err(Error::InvalidInput(format!(
            "tokens must be positive and finite, got {tokens}"
        )));
    }
    Ok(6.0 * count_params(arch) as f64 * tokens)
}

/// Tokens affordable at a FLOP budget, C / (6·N).
pub fn tokens_for_compute(arch: &Architecture, flops: f64) -> Result<f64> {
    if !(flops > 0.0) || !flops.is_finite() {
        return Err(Error::InvalidInput(format!(
            "compute budget must be positive and finite, got {flops}"
        )));
    }
    Ok(flops / (6.0 * count_params(arch) as f64))
}

/// Token count paired with its compute cost for a given architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingBudget {
    pub tokens: f64,
    pub compute: f64,
}

impl TrainingBudget {
    pub fn from_tokens(arch: &Architecture, tokens: f64) -> Result<Self> {
        Ok(Self {
            tokens,
            compute: compute_flops(arch, tokens)?,
        })
    }

    pub fn from_compute(arch: &Architecture, compute: f64) -> Result<Self> {
        Ok(Self {
            tokens: tokens_for_compute(arch, compute)?,
            compute,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScaleGroup {
    Baseline,
    OneB,
    ThreeB,
    SevenB,
}

impl ScaleGroup {
    pub const ALL: [ScaleGroup; 4] = [
        ScaleGroup::Baseline,
        ScaleGroup::OneB,
        ScaleGroup::ThreeB,
        ScaleGroup::SevenB,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScaleGroup::Baseline => "Baseline",
            ScaleGroup::OneB => "OneB",
            ScaleGroup::ThreeB => "ThreeB",
            ScaleGroup::SevenB => "SevenB",
        }
    }
}

impl fmt::Display for ScaleGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScaleGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(ScaleGroup::Baseline),
            "oneb" | "1b" => Ok(ScaleGroup::OneB),
            "threeb" | "3b" => Ok(ScaleGroup::ThreeB),
            "sevenb" | "7b" => Ok(ScaleGroup::SevenB),
            other => Err(Error::InvalidInput(format!("unknown scale group `{other}`"))),
        }
    }
}

/// Relative tolerance between a printed parameter count and [`count_params`].
pub const PARAMS_REPORTED_TOLERANCE: f64 = 0.02;

/// One trained-model observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub arch: Architecture,
    /// Training tokens; `None` where the source does not state them.
    pub tokens: Option<f64>,
    /// Loss in nats.
    pub loss: f64,
    pub params_reported: Option<u128>,
    pub scale_group: ScaleGroup,
}

impl LossRecord {
    pub fn new(
        arch: Architecture,
        tokens: Option<f64>,
        loss: f64,
        params_reported: Option<u128>,
        scale_group: ScaleGroup,
    ) -> Result<Self> {
        let rec = Self {
            arch,
            tokens,
            loss,
            params_reported,
            scale_group,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss > 0.0) || !self.loss.is_finite() {
            return Err(Error::InvalidInput(format!(
                "loss must be positive, got {}",
                self.loss
            )));
        }
        if let Some(t) = self.tokens {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "tokens must be positive, got {t}"
                )));
            }
        }
        if let Some(reported) = self.params_reported {
            let counted = count_params(&self.arch);
            let rel = (reported as f64 - counted as f64).abs() / reported as f64;
            if rel > PARAMS_REPORTED_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "{}: reported {} params but the count formula gives {} ({:.2}% off)",
                    self.arch,
                    reported,
                    counted,
                    rel * 100.0
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_16x512_matches_printed_total() {
        let n = count_params(&Architecture::new(16, 512).unwrap()) as f64;
        assert_eq!(n, 102_352_896.0);
        assert!((n - 102.2e6).abs() / 102.2e6 < 0.005);
        assert!((n - 102.1e6).abs() / 102.1e6 < 0.005);
    }

    #[test]
    fn unit_shape_core_term_is_twelve() {
        let arch = Architecture::with_embedding(1, 1, 0, 0).unwrap();
        assert_eq!(arch.core_params(), 12);
        // plus 4 block-norm and 2 final-norm params
        assert_eq!(count_params(&arch), 18);
    }

    #[test]
    fn two_layer_256_matches_printed_total() {
        let n = count_params(&Architecture::new(2, 256).unwrap()) as f64;
        assert!((n - 27.5e6).abs() / 27.5e6 < 0.005, "{n}");
    }

    #[test]
    fn zero_depth_or_width_rejected() {
        assert!(Architecture::new(0, 512).is_err());
        assert!(Architecture::new(4, 0).is_err());
    }

    #[test]
    fn flops_is_six_n_t() {
        let arch = Architecture::new(16, 512).unwrap();
        let n = count_params(&arch) as f64;
        assert_eq!(compute_flops(&arch, 1.0).unwrap(), 6.0 * n);
        let c = compute_flops(&arch, 6.4e9).unwrap();
        assert!((c - 3.92e18).abs() / 3.92e18 < 0.01, "{c:e}");
        assert!(compute_flops(&arch, 0.0).is_err());
    }

    #[test]
    fn seven_b_tokens_from_footnote_budget() {
        let arch = Architecture::new(32, 4096).unwrap();
        let t = tokens_for_compute(&arch, 5.89e21).unwrap();
        assert!((t - 1.43e11).abs() / 1.43e11 < 0.005, "{t:e}");
        let b = TrainingBudget::from_compute(&arch, 5.89e21).unwrap();
        assert!((compute_flops(&arch, b.tokens).unwrap() - 5.89e21).abs() / 5.89e21 < 1e-12);
    }

    #[test]
    fn flops_no_overflow_at_extremes() {
        let arch = Architecture::new(10_000, 1_000_000).unwrap();
        let c = compute_flops(&arch, 1e15).unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert_eq!(arch.core_params(), 12 * 10_000 * 1_000_000u128 * 1_000_000);
    }

    #[test]
    fn record_validation() {
        let arch = Architecture::new(16, 512).unwrap();
        assert!(LossRecord::new(arch, Some(6.4e9), -1.0, None, ScaleGroup::Baseline).is_err());
        assert!(LossRecord::new(arch, Some(0.0), 3.0, None, ScaleGroup::Baseline).is_err());
        assert!(
            LossRecord::new(arch, None, 3.4, Some(102_200_000), ScaleGroup::Baseline).is_ok()
        );
        let err =
            LossRecord::new(arch, None, 3.4, Some(90_000_000), ScaleGroup::Baseline).unwrap_err();
        assert!(err.to_string().contains("90000000"), "{err}");
    }

    #[test]
    fn scale_group_parses() {
        assert_eq!("Baseline".parse::<ScaleGroup>().unwrap(), ScaleGroup::Baseline);
        assert_eq!("7b".parse::<ScaleGroup>().unwrap(), ScaleGroup::SevenB);
        assert!("huge".parse::<ScaleGroup>().is_err());
    }
}
