//! IP generalization hierarchy: prefix masks, flow keys and ancestor relations.
//!
//! A hierarchy is parameterized by a [`Granularity`]: bit- or byte-level
//! aggregation over keys of up to 32 bits. Layer 0 holds fully specified
//! keys, layer `d` the fully generalized wildcard `*`. The prefix length of
//! a key shrinks by one unit (1 bit or 8 bits) per layer.
//!
//! Keys are canonicalized at construction: every bit below the retained
//! prefix is zero, so equality is a plain integer compare everywhere else in
//! the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregation unit of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityKind {
    Bit,
    Byte,
}

/// A prefix hierarchy over keys of `width_bits` bits (at most 32).
///
/// Reduced widths (e.g. 8-bit keys) are supported so that small instances
/// can be tested exhaustively. Values live in the low `width_bits` bits of a
/// `u32`; the prefix occupies the high-order side of that window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Granularity {
    kind: GranularityKind,
    width_bits: u8,
    masks: PrefixMaskTable,
}

/// Per-layer bitmasks: `masks[0]` keeps everything, `masks[d]` nothing, and
/// each step removes one unit of low-order coverage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixMaskTable {
    masks: Vec<u32>,
}

impl PrefixMaskTable {
    fn build(width_bits: u8, unit: u8, depth: u8) -> Self {
        let full = if width_bits == 32 {
            u32::MAX
        } else {
            (1u32 << width_bits) - 1
        };
        let masks = (0..=depth)
            .map(|layer| {
                let cleared = u32::from(layer) * u32::from(unit);
                if cleared >= u32::from(width_bits) {
                    0
                } else {
                    (full >> cleared) << cleared
                }
            })
            .collect();
        PrefixMaskTable { masks }
    }

    pub fn mask(&self, layer: u8) -> u32 {
        self.masks[usize::from(layer)]
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// A full or prefix-generalized key. `layer` 0 is fully specified; larger
/// layers retain shorter prefixes. Bits below the prefix are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    bits: u32,
    layer: u8,
}

impl FlowKey {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn layer(&self) -> u8 {
        self.layer
    }
}

impl Ord for FlowKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.layer, self.bits).cmp(&(other.layer, other.bits))
    }
}

impl PartialOrd for FlowKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}@{}", self.bits, self.layer)
    }
}

impl Granularity {
    pub fn new(kind: GranularityKind, width_bits: u8) -> Result<Self> {
        if width_bits == 0 || width_bits > 32 {
            return Err(Error::InvalidGranularity(format!(
                "width_bits must be in 1..=32, got {width_bits}"
            )));
        }
        if kind == GranularityKind::Byte && !width_bits.is_multiple_of(8) {
            return Err(Error::InvalidGranularity(format!(
                "byte granularity needs width divisible by 8, got {width_bits}"
            )));
        }
        let unit = match kind {
            GranularityKind::Bit => 1,
            GranularityKind::Byte => 8,
        };
        let depth = width_bits / unit;
        Ok(Granularity {
            kind,
            width_bits,
            masks: PrefixMaskTable::build(width_bits, unit, depth),
        })
    }

    pub fn bit(width_bits: u8) -> Result<Self> {
        Self::new(GranularityKind::Bit, width_bits)
    }

    pub fn byte(width_bits: u8) -> Result<Self> {
        Self::new(GranularityKind::Byte, width_bits)
    }

    /// 32-bit source IP hierarchy at bit granularity (d = 32).
    pub fn ipv4_bit() -> Self {
        Self::bit(32).expect("static config")
    }

    /// 32-bit source IP hierarchy at byte granularity (d = 4).
    pub fn ipv4_byte() -> Self {
        Self::byte(32).expect("static config")
    }

    pub fn kind(&self) -> GranularityKind {
        self.kind
    }

    pub fn width_bits(&self) -> u8 {
        self.width_bits
    }

    /// Bits removed per layer step.
    pub fn unit_bits(&self) -> u8 {
        match self.kind {
            GranularityKind::Bit => 1,
            GranularityKind::Byte => 8,
        }
    }

    /// Number of generalization steps `d`; valid layers are `0..=d`.
    pub fn depth(&self) -> u8 {
        self.width_bits / self.unit_bits()
    }

    pub fn mask(&self, layer: u8) -> u32 {
        self.masks.mask(layer)
    }

    pub fn mask_table(&self) -> &PrefixMaskTable {
        &self.masks
    }

    /// Retained prefix length of a key at `layer`, in bits.
    pub fn prefix_len(&self, key: FlowKey) -> u8 {
        self.width_bits - key.layer * self.unit_bits()
    }

    /// Layer whose keys have the given prefix length in bits.
    pub fn layer_for_prefix_len(&self, prefix_len: u8) -> Result<u8> {
        if prefix_len > self.width_bits {
            return Err(Error::InvalidGranularity(format!(
                "prefix length {prefix_len} exceeds width {}",
                self.width_bits
            )));
        }
        let removed = self.width_bits - prefix_len;
        if !removed.is_multiple_of(self.unit_bits()) {
            return Err(Error::InvalidGranularity(format!(
                "prefix length {prefix_len} is not on a {}-bit unit boundary",
                self.unit_bits()
            )));
        }
        Ok(removed / self.unit_bits())
    }

    /// Canonicalized key at `layer`; bits below the prefix are masked away.
    pub fn key(&self, bits: u32, layer: u8) -> Result<FlowKey> {
        if layer > self.depth() {
            return Err(Error::LayerOutOfRange {
                layer,
                max: self.depth(),
            });
        }
        Ok(FlowKey {
            bits: bits & self.mask(layer),
            layer,
        })
    }

    /// Fully specified key (layer 0).
    pub fn full_key(&self, bits: u32) -> FlowKey {
        FlowKey {
            bits: bits & self.mask(0),
            layer: 0,
        }
    }

    /// Generalize `key` up to `target_layer`. Rejects specialization.
    pub fn generalize(&self, key: FlowKey, target_layer: u8) -> Result<FlowKey> {
        if target_layer > self.depth() {
            return Err(Error::LayerOutOfRange {
                layer: target_layer,
                max: self.depth(),
            });
        }
        if target_layer < key.layer {
            return Err(Error::CannotSpecialize {
                from: key.layer,
                to: target_layer,
            });
        }
        Ok(FlowKey {
            bits: key.bits & self.mask(target_layer),
            layer: target_layer,
        })
    }

    /// True iff `q` generalizes `p` (reflexive: every key is its own ancestor).
    pub fn is_ancestor(&self, q: FlowKey, p: FlowKey) -> bool {
        q.layer >= p.layer && p.bits & self.mask(q.layer) == q.bits
    }

    /// Render as `a.b.c.d/p` for 32-bit keys, `v/p` otherwise.
    pub fn render(&self, key: FlowKey) -> String {
        let plen = self.prefix_len(key);
        if self.width_bits == 32 {
            let b = key.bits.to_be_bytes();
            format!("{}.{}.{}.{}/{}", b[0], b[1], b[2], b[3], plen)
        } else {
            format!("{}/{}", key.bits, plen)
        }
    }

    /// Parse the textual form produced by [`Granularity::render`].
    pub fn parse(&self, s: &str) -> Result<FlowKey> {
        let (addr, plen) = s
            .split_once('/')
            .ok_or_else(|| Error::KeyParse(format!("missing '/' in {s:?}")))?;
        let plen: u8 = plen
            .parse()
            .map_err(|_| Error::KeyParse(format!("bad prefix length in {s:?}")))?;
        let layer = self.layer_for_prefix_len(plen)?;
        let bits = if self.width_bits == 32 {
            let mut parts = [0u8; 4];
            let mut n = 0;
            for part in addr.split('.') {
                if n == 4 {
                    return Err(Error::KeyParse(format!("too many octets in {s:?}")));
                }
                parts[n] = part
                    .parse()
                    .map_err(|_| Error::KeyParse(format!("bad octet {part:?} in {s:?}")))?;
                n += 1;
            }
            if n != 4 {
                return Err(Error::KeyParse(format!("expected 4 octets in {s:?}")));
            }
            u32::from_be_bytes(parts)
        } else {
            addr.parse()
                .map_err(|_| Error::KeyParse(format!("bad key value in {s:?}")))?
        };
        self.key(bits, layer)
    }
}
