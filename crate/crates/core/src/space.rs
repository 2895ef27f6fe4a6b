//! Genome encoding and the block-structured search space.
//!
//! A genome is an ordered list of `(block type, kernel count)` pairs. Its
//! canonical text form is a comma-separated list of `TYPE/k` tokens without
//! whitespace, e.g. `VGG/16,RES/32,MVGG/64`. The JSON form is
//! `{"blocks":[{"type":"VGG","k":16},...]}`; deserialization accepts either.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};

/// Number of draws [`sample_valid`] makes before giving up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockType {
    /// Two 3x3 convs, ReLU, 2x2 max-pool.
    #[serde(rename = "VGG")]
    Vgg,
    /// VGG block without the pooling layer.
    #[serde(rename = "MVGG")]
    Mvgg,
    /// Residual pair of 3x3 convs with batch norm and a 1x1 conv shortcut.
    #[serde(rename = "RES")]
    Res,
}

impl BlockType {
    pub const ALL: [BlockType; 3] = [BlockType::Vgg, BlockType::Mvgg, BlockType::Res];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::Vgg => "VGG",
            BlockType::Mvgg => "MVGG",
            BlockType::Res => "RES",
        }
    }

    /// Whether the block halves the spatial dimensions.
    pub fn downsamples(self) -> bool {
        matches!(self, BlockType::Vgg)
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "VGG" => Ok(BlockType::Vgg),
            "MVGG" => Ok(BlockType::Mvgg),
            "RES" => Ok(BlockType::Res),
            other => Err(format!("unknown block type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(rename = "type")]
    pub block_type: BlockType,
    /// Number of conv filters in every conv layer of the block.
    #[serde(rename = "k")]
    pub kernels: u32,
}

impl BlockSpec {
    pub fn new(block_type: BlockType, kernels: u32) -> Self {
        Self {
            block_type,
            kernels,
        }
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.block_type, self.kernels)
    }
}

/// The searched architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ArchGenome {
    pub blocks: Vec<BlockSpec>,
}

impl ArchGenome {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        Self { blocks }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Canonical text form, `TYPE/k` tokens joined by commas.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    /// Parses the canonical text form without checking space membership.
    pub fn decode(text: &str) -> Result<Self, DecodeError> {
        text.parse()
    }

    /// Stable content hash: first 16 hex digits of SHA-256 over the canonical text.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.encode().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses either the compact text form or the JSON object form.
    pub fn parse_any(input: &str) -> Result<Self> {
        let trimmed = input.trim();
        if trimmed.starts_with('{') || trimmed.starts_with('"') {
            Ok(serde_json::from_str(trimmed)?)
        } else {
            Ok(trimmed.parse()?)
        }
    }

    pub fn count_type(&self, block_type: BlockType) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.block_type == block_type)
            .count()
    }
}

impl fmt::Display for ArchGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{block}")?;
        }
        Ok(())
    }
}

/// Syntax error in the compact genome text form.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("genome decode error at byte {position}: {message}")]
pub struct DecodeError {
    /// Byte offset of the offending token.
    pub position: usize,
    pub message: String,
}

impl FromStr for ArchGenome {
    type Err = DecodeError;

    fn from_str(text: &str) -> std::result::Result<Self, Self::Err> {
        if text.is_empty() {
            return Err(DecodeError {
                position: 0,
                message: "empty genome".into(),
            });
        }
        let mut blocks = Vec::new();
        let mut offset = 0;
        for token in text.split(',') {
            let err = |position: usize, message: String| DecodeError { position, message };
            let (ty, k) = token
                .split_once('/')
                .ok_or_else(|| err(offset, format!("expected TYPE/k, found {token:?}")))?;
            let block_type = ty.parse::<BlockType>().map_err(|m| err(offset, m))?;
            let k_pos = offset + ty.len() + 1;
            if k.is_empty() || !k.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(k_pos, format!("kernel count {k:?} is not an integer")));
            }
            let kernels: u32 = k
                .parse()
                .map_err(|e| err(k_pos, format!("kernel count {k:?}: {e}")))?;
            if kernels == 0 {
                return Err(err(k_pos, "kernel count must be positive".into()));
            }
            blocks.push(BlockSpec::new(block_type, kernels));
            offset += token.len() + 1;
        }
        Ok(ArchGenome { blocks })
    }
}

impl<'de> Deserialize<'de> for ArchGenome {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Object { blocks: Vec<BlockSpec> },
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(text) => text.parse().map_err(serde::de::Error::custom),
            Repr::Object { blocks } => Ok(ArchGenome { blocks }),
        }
    }
}

/// Serializes a genome as its compact text form.
pub mod genome_text {
    use super::ArchGenome;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(g: &ArchGenome, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&g.encode())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ArchGenome, D::Error> {
        ArchGenome::deserialize(d)
    }
}

/// Spatial input shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl InputShape {
    pub fn new(channels: u32, height: u32, width: u32) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl FromStr for InputShape {
    type Err = String;

    /// Parses `CxHxW`, e.g. `3x32x32`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let dims: Vec<u32> = s
            .split('x')
            .map(|d| d.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("bad input shape {s:?}: {e}"))?;
        match dims[..] {
            [c, h, w] if c >= 1 && h >= 1 && w >= 1 => Ok(InputShape::new(c, h, w)),
            _ => Err(format!("input shape must be CxHxW with positive dims, got {s:?}")),
        }
    }
}

/// Why a genome was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidRule {
    Depth { depth: usize, min: usize, max: usize },
    BlockType(BlockType),
    Kernels(u32),
    /// Pooling would shrink a spatial dimension to zero.
    SpatialCollapse { height: u32, width: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct Invalid {
    /// Zero-based offending block; `None` for whole-genome rules.
    pub block: Option<usize>,
    pub rule: InvalidRule,
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(b) = self.block {
            write!(f, "block {}: ", b + 1)?;
        }
        match &self.rule {
            InvalidRule::Depth { depth, min, max } => {
                write!(f, "depth {depth} outside [{min}, {max}]")
            }
            InvalidRule::BlockType(t) => write!(f, "block type {t} not in the space"),
            InvalidRule::Kernels(k) => write!(f, "kernel count {k} not in the space"),
            InvalidRule::SpatialCollapse { height, width } => write!(
                f,
                "2x2 pooling of a {height}x{width} feature map leaves a zero dimension"
            ),
        }
    }
}

/// Checks only the pooling rule: every VGG block floor-halves height and
/// width, and neither may reach zero.
pub fn check_spatial(genome: &ArchGenome, input: InputShape) -> std::result::Result<(), Invalid> {
    let (mut h, mut w) = (input.height, input.width);
    for (i, block) in genome.blocks.iter().enumerate() {
        if block.block_type.downsamples() {
            if h / 2 == 0 || w / 2 == 0 {
                return Err(Invalid {
                    block: Some(i),
                    rule: InvalidRule::SpatialCollapse {
                        height: h,
                        width: w,
                    },
                });
            }
            h /= 2;
            w /= 2;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub depth_min: usize,
    pub depth_max: usize,
    pub allowed_types: Vec<BlockType>,
    pub allowed_kernels: Vec<u32>,
}

impl Default for SearchSpace {
    /// 3 to 8 blocks, all three block types, kernels 16..=256 in powers of two.
    fn default() -> Self {
        Self {
            depth_min: 3,
            depth_max: 8,
            allowed_types: BlockType::ALL.to_vec(),
            allowed_kernels: vec![16, 32, 64, 128, 256],
        }
    }
}

impl SearchSpace {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.depth_min < 1 {
            return bad("depth_min must be >= 1");
        }
        if self.depth_max < self.depth_min {
            return bad("depth_max must be >= depth_min");
        }
        if self.allowed_types.is_empty() || self.allowed_kernels.is_empty() {
            return bad("allowed_types and allowed_kernels must be non-empty");
        }
        if self.allowed_types.iter().collect::<BTreeSet<_>>().len() != self.allowed_types.len()
            || self.allowed_kernels.iter().collect::<BTreeSet<_>>().len()
                != self.allowed_kernels.len()
        {
            return bad("allowed_types and allowed_kernels must not repeat values");
        }
        if self.allowed_kernels.contains(&0) {
            return bad("kernel counts must be positive");
        }
        Ok(())
    }

    pub fn depths(&self) -> std::ops::RangeInclusive<usize> {
        self.depth_min..=self.depth_max
    }

    /// Membership in the space, spatial rule excluded.
    pub fn check_membership(&self, genome: &ArchGenome) -> std::result::Result<(), Invalid> {
        for (i, b) in genome.blocks.iter().enumerate() {
            if !self.allowed_types.contains(&b.block_type) {
                return Err(Invalid {
                    block: Some(i),
                    rule: InvalidRule::BlockType(b.block_type),
                });
            }
            if !self.allowed_kernels.contains(&b.kernels) {
                return Err(Invalid {
                    block: Some(i),
                    rule: InvalidRule::Kernels(b.kernels),
                });
            }
        }
        let depth = genome.depth();
        if !self.depths().contains(&depth) {
            return Err(Invalid {
                block: None,
                rule: InvalidRule::Depth {
                    depth,
                    min: self.depth_min,
                    max: self.depth_max,
                },
            });
        }
        Ok(())
    }

    pub fn contains(&self, genome: &ArchGenome) -> bool {
        self.check_membership(genome).is_ok()
    }

    /// Full validity: membership plus the pooling rule for `input`.
    pub fn validate(
        &self,
        genome: &ArchGenome,
        input: InputShape,
    ) -> std::result::Result<(), Invalid> {
        self.check_membership(genome)?;
        check_spatial(genome, input)
    }

    /// Decodes compact text and rejects genomes outside the space.
    pub fn decode(&self, text: &str) -> Result<ArchGenome> {
        let genome: ArchGenome = text.parse()?;
        self.check_membership(&genome)?;
        Ok(genome)
    }

    /// Number of distinct genomes, `sum over depth d of (|types| * |kernels|)^d`,
    /// without applying the pooling rule.
    pub fn count_configurations(&self) -> BigUint {
        let per_block = BigUint::from(self.allowed_types.len() * self.allowed_kernels.len());
        self.depths()
            .map(|d| per_block.pow(d as u32))
            .sum()
    }

    /// Draws depth, then every block's type and kernels, uniformly and independently.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ArchGenome {
        let depth = rng.gen_range(self.depths());
        let blocks = (0..depth)
            .map(|_| {
                let t = self.allowed_types[rng.gen_range(0..self.allowed_types.len())];
                let k = self.allowed_kernels[rng.gen_range(0..self.allowed_kernels.len())];
                BlockSpec::new(t, k)
            })
            .collect();
        ArchGenome { blocks }
    }

    /// [`Self::sample_uniform`] with rejection of genomes that over-pool `input`.
    pub fn sample_valid<R: Rng + ?Sized>(&self, input: InputShape, rng: &mut R) -> Result<ArchGenome> {
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let genome = self.sample_uniform(rng);
            if check_spatial(&genome, input).is_ok() {
                return Ok(genome);
            }
        }
        Err(Error::NoValidGenome {
            attempts: MAX_SAMPLE_ATTEMPTS,
        })
    }
}
