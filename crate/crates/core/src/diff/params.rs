use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Uniform { lo: f64, hi: f64 },
    Constant(f64),
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub init: InitKind,
}

/// Ordered block table; the order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: InitKind) -> usize {
        let offset = self.len();
        let len = shape.iter().product();
        self.blocks.push(ParamBlock {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
            init,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Sum of block lengths over blocks whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.name.starts_with(prefix))
            .map(|b| b.len)
            .sum()
    }

    /// Checks contiguity and that block sizes match their shapes.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for b in &self.blocks {
            if b.offset != next || b.len != b.shape.iter().product::<usize>() {
                return Err(Error::Validation(format!(
                    "parameter block {} is not laid out contiguously",
                    b.name
                )));
            }
            next += b.len;
        }
        Ok(())
    }

    /// The block containing flat index `i`.
    pub fn block_at(&self, i: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| (b.offset..b.offset + b.len).contains(&i))
    }

    /// Seeded initialization, block by block in layout order.
    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            match b.init {
                InitKind::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    out.extend((0..b.len).map(|_| rng.gen_range(-limit..=limit)));
                }
                InitKind::Uniform { lo, hi } => out.extend((0..b.len).map(|_| rng.gen_range(lo..=hi))),
                InitKind::Constant(c) => out.extend(std::iter::repeat(c).take(b.len)),
            }
        }
        out
    }
}

/// Flat weights together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        Error::check_dim("parameter vector", layout.len(), values.len())?;
        Ok(ParamVector { layout, values })
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .block(name)
            .map(|b| &self.values[b.offset..b.offset + b.len])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.layout.block(name)?.clone();
        Some(&mut self.values[b.offset..b.offset + b.len])
    }
}
