//! Residual blocks: one level's unbiased key/value store.
//!
//! A block stores `(key, value, locked)` cells and supports the update
//! cases of the insertion pipeline:
//!
//! * Case 1 — key present: add the value (and apply a pending residual
//!   decrement, clamped at zero).
//! * Case 2 — key absent, an empty cell exists: store it there.
//! * Case 3 — key absent, all candidate cells occupied: bump the minimum
//!   unlocked cell and replace its key with probability
//!   `v / (v + min_value)` (emulated PPS sampling, which is what keeps the
//!   estimates unbiased).
//!
//! Two interchangeable implementations exist: [`CocoBlock`] (g hashed
//! arrays of b buckets) and [`UssBlock`] (a stream summary of at most b
//! entries, g = 1). Locked cells are never chosen as replacement victims;
//! if every candidate is locked and none matches, the update is dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{FlowKey, Granularity};

/// One non-empty cell as reported by `drain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub key: FlowKey,
    pub value: u64,
    pub locked: bool,
}

/// Which block implementation backs a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Coco,
    Uss,
}

/// Geometry and seeding of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    /// Number of hashed arrays (1 for USS).
    pub g: usize,
    /// Buckets per array (total capacity for USS).
    pub b: usize,
    pub seed: u64,
}

impl BlockConfig {
    pub fn coco(g: usize, b: usize, seed: u64) -> Self {
        BlockConfig {
            kind: BlockKind::Coco,
            g,
            b,
            seed,
        }
    }

    pub fn uss(b: usize, seed: u64) -> Self {
        BlockConfig {
            kind: BlockKind::Uss,
            g: 1,
            b,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 1 || self.b < 1 {
            return Err(Error::InvalidBlockConfig(format!(
                "g and b must be >= 1, got g={} b={}",
                self.g, self.b
            )));
        }
        if self.kind == BlockKind::Uss && self.g != 1 {
            return Err(Error::InvalidBlockConfig(format!(
                "uss blocks require g == 1, got g={}",
                self.g
            )));
        }
        Ok(())
    }
}

/// What an update did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// Case 1: key was present, its cell absorbed the value.
    Matched,
    /// Case 2: key stored into an empty cell.
    Inserted,
    /// Case 3: minimum cell bumped; the key may or may not have won it.
    Displaced,
    /// All candidates locked and none matched: nothing mutated.
    DroppedLocked,
}

/// Result of [`ResidualBlock::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    /// Value of the cell now associated with the key, or 0 on the
    /// replacement/drop paths.
    pub count_after: u64,
    /// The matched cell's value before this update (0 otherwise). Lets the
    /// pipeline detect threshold crossings without a second lookup.
    pub value_before: u64,
    /// Whether the matched cell was already locked before this update.
    pub locked_before: bool,
    pub kind: UpdateKind,
}

impl UpdateOutcome {
    /// True when the key's own count is reflected in `count_after`
    /// (Cases 1 and 2).
    pub fn matched(&self) -> bool {
        matches!(self.kind, UpdateKind::Matched | UpdateKind::Inserted)
    }
}

/// SplitMix64: the per-block PRNG and the base of the bucket hash family.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform draw in `0..n` without modulo bias (widening multiply with
    /// rejection).
    pub fn gen_range(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded avalanche hash of a key into `0..b`.
#[inline]
fn bucket_index(seed: u64, bits: u32, b: usize) -> usize {
    (mix64(seed ^ u64::from(bits)) % b as u64) as usize
}

/// Decide a Case-3 replacement: succeed with probability `v / value_after`.
#[inline]
fn replacement_wins(rng: &mut SplitMix64, v: u64, value_after: u64) -> bool {
    rng.gen_range(value_after) < v
}

/// One stored cell: 13 payload bytes (value, key bits, lock flag), padded
/// to 16 by alignment. Memory budgeting counts these.
#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    value: u64,
    bits: u32,
    locked: bool,
}

/// Bytes one cell costs against a memory budget.
pub fn cell_bytes() -> usize {
    std::mem::size_of::<Cell>()
}

/// Coco-style block: `g` hashed arrays of `b` buckets each.
#[derive(Debug, Clone)]
pub struct CocoBlock {
    layer: u8,
    g: usize,
    b: usize,
    seed: u64,
    seeds: Vec<u64>,
    slots: Vec<Cell>,
    rng: SplitMix64,
    displaced: u64,
    dropped: u64,
}

impl CocoBlock {
    pub fn new(layer: u8, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != BlockKind::Coco {
            return Err(Error::InvalidBlockConfig("expected coco config".into()));
        }
        let mut seed_rng = SplitMix64::new(cfg.seed);
        let seeds = (0..cfg.g).map(|_| seed_rng.next_u64()).collect();
        Ok(CocoBlock {
            layer,
            g: cfg.g,
            b: cfg.b,
            seed: cfg.seed,
            seeds,
            slots: vec![Cell::default(); cfg.g * cfg.b],
            rng: SplitMix64::new(cfg.seed ^ 0xA076_1D64_78BD_642F),
            displaced: 0,
            dropped: 0,
        })
    }

    #[inline]
    fn slot_of(&self, j: usize, bits: u32) -> usize {
        j * self.b + bucket_index(self.seeds[j], bits, self.b)
    }

    fn check_layer(&self, key: FlowKey) -> Result<()> {
        if key.layer() != self.layer {
            return Err(Error::LayerMismatch {
                got: key.layer(),
                expected: self.layer,
            });
        }
        Ok(())
    }

    pub fn update(&mut self, key: FlowKey, v: u64, decrement: u64) -> Result<UpdateOutcome> {
        self.check_layer(key)?;
        if v == 0 {
            return Err(Error::ZeroValue);
        }
        let mut empty_slot = None;
        let mut min_slot = None;
        let mut min_value = u64::MAX;
        for j in 0..self.g {
            let idx = self.slot_of(j, key.bits());
            let cell = &self.slots[idx];
            if cell.value > 0 && cell.bits == key.bits() {
                // Case 1.
                let before = cell.value;
                let locked_before = cell.locked;
                let mut after = before + v;
                if decrement > 0 {
                    after = after.saturating_sub(decrement);
                }
                let cell = &mut self.slots[idx];
                if after == 0 {
                    // Fully compensated by the residual decrement: the cell
                    // becomes empty again.
                    cell.value = 0;
                    cell.locked = false;
                } else {
                    cell.value = after;
                }
                return Ok(UpdateOutcome {
                    count_after: after,
                    value_before: before,
                    locked_before,
                    kind: UpdateKind::Matched,
                });
            }
            if cell.value == 0 {
                empty_slot.get_or_insert(idx);
            } else if !cell.locked && cell.value < min_value {
                min_value = cell.value;
                min_slot = Some(idx);
            }
        }
        if let Some(idx) = empty_slot {
            // Case 2.
            self.slots[idx] = Cell {
                value: v,
                bits: key.bits(),
                locked: false,
            };
            return Ok(UpdateOutcome {
                count_after: v,
                value_before: 0,
                locked_before: false,
                kind: UpdateKind::Inserted,
            });
        }
        match min_slot {
            Some(idx) => {
                // Case 3: bump the minimum, then the probabilistic key test.
                let cell = &mut self.slots[idx];
                cell.value += v;
                if replacement_wins(&mut self.rng, v, cell.value) {
                    cell.bits = key.bits();
                }
                self.displaced += 1;
                Ok(UpdateOutcome {
                    count_after: 0,
                    value_before: 0,
                    locked_before: false,
                    kind: UpdateKind::Displaced,
                })
            }
            None => {
                self.dropped += 1;
                Ok(UpdateOutcome {
                    count_after: 0,
                    value_before: 0,
                    locked_before: false,
                    kind: UpdateKind::DroppedLocked,
                })
            }
        }
    }

    pub fn decrement(&mut self, key: FlowKey, amount: u64) -> bool {
        if key.layer() != self.layer {
            return false;
        }
        for j in 0..self.g {
            let idx = self.slot_of(j, key.bits());
            let cell = &mut self.slots[idx];
            if cell.value > 0 && cell.bits == key.bits() {
                cell.value = cell.value.saturating_sub(amount);
                if cell.value == 0 {
                    cell.locked = false;
                }
                return true;
            }
        }
        false
    }

    pub fn lock(&mut self, key: FlowKey) -> bool {
        if key.layer() != self.layer {
            return false;
        }
        for j in 0..self.g {
            let idx = self.slot_of(j, key.bits());
            let cell = &mut self.slots[idx];
            if cell.value > 0 && cell.bits == key.bits() {
                cell.locked = true;
                return true;
            }
        }
        false
    }

    pub fn estimate(&self, key: FlowKey) -> u64 {
        if key.layer() != self.layer {
            return 0;
        }
        for j in 0..self.g {
            let idx = self.slot_of(j, key.bits());
            let cell = &self.slots[idx];
            if cell.value > 0 && cell.bits == key.bits() {
                return cell.value;
            }
        }
        0
    }

    pub fn drain(&self, gran: &Granularity) -> Vec<Bucket> {
        let mut out: Vec<_> = self
            .slots
            .iter()
            .filter(|c| c.value > 0)
            .map(|c| Bucket {
                key: gran.key(c.bits, self.layer).expect("stored keys valid"),
                value: c.value,
                locked: c.locked,
            })
            .collect();
        out.sort_unstable_by_key(|b| b.key);
        out
    }

    /// Empty all cells and rewind the PRNG: a cleared block replays a trace
    /// exactly like a freshly constructed one.
    pub fn clear(&mut self) {
        for cell in &mut self.slots {
            cell.value = 0;
            cell.locked = false;
        }
        self.rng = SplitMix64::new(self.seed ^ 0xA076_1D64_78BD_642F);
        self.displaced = 0;
        self.dropped = 0;
    }
}

/// Stream-summary entry bookkeeping for [`UssBlock`].
#[derive(Debug, Clone, Copy)]
struct SummaryEntry {
    value: u64,
    locked: bool,
}

/// USS-style block: a stream summary holding at most `b` entries. The
/// global minimum unlocked entry is the Case-3 victim.
#[derive(Debug, Clone)]
pub struct UssBlock {
    layer: u8,
    capacity: usize,
    seed: u64,
    entries: HashMap<u32, SummaryEntry>,
    by_value: BTreeMap<u64, BTreeSet<u32>>,
    rng: SplitMix64,
    displaced: u64,
    dropped: u64,
}

impl UssBlock {
    pub fn new(layer: u8, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != BlockKind::Uss {
            return Err(Error::InvalidBlockConfig("expected uss config".into()));
        }
        Ok(UssBlock {
            layer,
            capacity: cfg.b,
            seed: cfg.seed,
            entries: HashMap::new(),
            by_value: BTreeMap::new(),
            rng: SplitMix64::new(cfg.seed ^ 0xA076_1D64_78BD_642F),
            displaced: 0,
            dropped: 0,
        })
    }

    fn index_remove(&mut self, value: u64, bits: u32) {
        if let Some(set) = self.by_value.get_mut(&value) {
            set.remove(&bits);
            if set.is_empty() {
                self.by_value.remove(&value);
            }
        }
    }

    fn index_insert(&mut self, value: u64, bits: u32) {
        self.by_value.entry(value).or_default().insert(bits);
    }

    fn set_value(&mut self, bits: u32, old: u64, new: u64) {
        self.index_remove(old, bits);
        if new == 0 {
            self.entries.remove(&bits);
        } else {
            self.entries
                .get_mut(&bits)
                .expect("entry present")
                .value = new;
            self.index_insert(new, bits);
        }
    }

    /// Smallest-value unlocked entry, ties broken by key, deterministically.
    fn min_unlocked(&self) -> Option<(u32, u64)> {
        for (&value, set) in &self.by_value {
            for &bits in set {
                if !self.entries[&bits].locked {
                    return Some((bits, value));
                }
            }
        }
        None
    }

    fn check_layer(&self, key: FlowKey) -> Result<()> {
        if key.layer() != self.layer {
            return Err(Error::LayerMismatch {
                got: key.layer(),
                expected: self.layer,
            });
        }
        Ok(())
    }

    pub fn update(&mut self, key: FlowKey, v: u64, decrement: u64) -> Result<UpdateOutcome> {
        self.check_layer(key)?;
        if v == 0 {
            return Err(Error::ZeroValue);
        }
        let bits = key.bits();
        if let Some(entry) = self.entries.get(&bits).copied() {
            let mut after = entry.value + v;
            if decrement > 0 {
                after = after.saturating_sub(decrement);
            }
            // set_value removes the entry (lock included) when it hits zero.
            self.set_value(bits, entry.value, after);
            return Ok(UpdateOutcome {
                count_after: after,
                value_before: entry.value,
                locked_before: entry.locked,
                kind: UpdateKind::Matched,
            });
        }
        if self.entries.len() < self.capacity {
            self.entries.insert(
                bits,
                SummaryEntry {
                    value: v,
                    locked: false,
                },
            );
            self.index_insert(v, bits);
            return Ok(UpdateOutcome {
                count_after: v,
                value_before: 0,
                locked_before: false,
                kind: UpdateKind::Inserted,
            });
        }
        match self.min_unlocked() {
            Some((victim, min_value)) => {
                let after = min_value + v;
                self.set_value(victim, min_value, after);
                if replacement_wins(&mut self.rng, v, after) {
                    let entry = self.entries.remove(&victim).expect("victim present");
                    self.index_remove(after, victim);
                    self.entries.insert(bits, entry);
                    self.index_insert(after, bits);
                }
                self.displaced += 1;
                Ok(UpdateOutcome {
                    count_after: 0,
                    value_before: 0,
                    locked_before: false,
                    kind: UpdateKind::Displaced,
                })
            }
            None => {
                self.dropped += 1;
                Ok(UpdateOutcome {
                    count_after: 0,
                    value_before: 0,
                    locked_before: false,
                    kind: UpdateKind::DroppedLocked,
                })
            }
        }
    }

    pub fn decrement(&mut self, key: FlowKey, amount: u64) -> bool {
        if key.layer() != self.layer {
            return false;
        }
        let bits = key.bits();
        match self.entries.get(&bits).copied() {
            Some(entry) => {
                self.set_value(bits, entry.value, entry.value.saturating_sub(amount));
                true
            }
            None => false,
        }
    }

    pub fn lock(&mut self, key: FlowKey) -> bool {
        if key.layer() != self.layer {
            return false;
        }
        match self.entries.get_mut(&key.bits()) {
            Some(entry) => {
                entry.locked = true;
                true
            }
            None => false,
        }
    }

    pub fn estimate(&self, key: FlowKey) -> u64 {
        if key.layer() != self.layer {
            return 0;
        }
        self.entries.get(&key.bits()).map_or(0, |e| e.value)
    }

    pub fn drain(&self, gran: &Granularity) -> Vec<Bucket> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .map(|(&bits, e)| Bucket {
                key: gran.key(bits, self.layer).expect("stored keys valid"),
                value: e.value,
                locked: e.locked,
            })
            .collect();
        out.sort_unstable_by_key(|b| b.key);
        out
    }

    /// Empty the summary and rewind the PRNG.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.by_value.clear();
        self.rng = SplitMix64::new(self.seed ^ 0xA076_1D64_78BD_642F);
        self.displaced = 0;
        self.dropped = 0;
    }
}

/// A level's block, either implementation behind one interface.
#[derive(Debug, Clone)]
pub enum ResidualBlock {
    Coco(CocoBlock),
    Uss(UssBlock),
}

impl ResidualBlock {
    pub fn new(layer: u8, cfg: &BlockConfig, _gran: &Granularity) -> Result<Self> {
        match cfg.kind {
            BlockKind::Coco => Ok(ResidualBlock::Coco(CocoBlock::new(layer, cfg)?)),
            BlockKind::Uss => Ok(ResidualBlock::Uss(UssBlock::new(layer, cfg)?)),
        }
    }

    pub fn update(&mut self, key: FlowKey, v: u64, decrement: u64) -> Result<UpdateOutcome> {
        match self {
            ResidualBlock::Coco(b) => b.update(key, v, decrement),
            ResidualBlock::Uss(b) => b.update(key, v, decrement),
        }
    }

    pub fn decrement(&mut self, key: FlowKey, amount: u64) -> bool {
        match self {
            ResidualBlock::Coco(b) => b.decrement(key, amount),
            ResidualBlock::Uss(b) => b.decrement(key, amount),
        }
    }

    pub fn lock(&mut self, key: FlowKey) -> bool {
        match self {
            ResidualBlock::Coco(b) => b.lock(key),
            ResidualBlock::Uss(b) => b.lock(key),
        }
    }

    pub fn estimate(&self, key: FlowKey) -> u64 {
        match self {
            ResidualBlock::Coco(b) => b.estimate(key),
            ResidualBlock::Uss(b) => b.estimate(key),
        }
    }

    /// All non-empty cells, sorted by key. The block is left unmodified.
    pub fn drain(&self, gran: &Granularity) -> Vec<Bucket> {
        match self {
            ResidualBlock::Coco(b) => b.drain(gran),
            ResidualBlock::Uss(b) => b.drain(gran),
        }
    }

    pub fn clear(&mut self) {
        match self {
            ResidualBlock::Coco(b) => b.clear(),
            ResidualBlock::Uss(b) => b.clear(),
        }
    }

    /// Case-3 updates seen so far (replacement lotteries run).
    pub fn displaced_count(&self) -> u64 {
        match self {
            ResidualBlock::Coco(b) => b.displaced,
            ResidualBlock::Uss(b) => b.displaced,
        }
    }

    /// Updates dropped because all candidates were locked.
    pub fn dropped_count(&self) -> u64 {
        match self {
            ResidualBlock::Coco(b) => b.dropped,
            ResidualBlock::Uss(b) => b.dropped,
        }
    }

    pub fn layer(&self) -> u8 {
        match self {
            ResidualBlock::Coco(b) => b.layer,
            ResidualBlock::Uss(b) => b.layer,
        }
    }

    /// Drained state as JSON lines, for debugging fixtures.
    pub fn drain_jsonl(&self, gran: &Granularity) -> String {
        let mut out = String::new();
        for cell in self.drain(gran) {
            out.push_str(
                &serde_json::json!({
                    "key": gran.render(cell.key),
                    "prefix_len": gran.prefix_len(cell.key),
                    "value": cell.value,
                    "locked": cell.locked,
                })
                .to_string(),
            );
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gran8() -> Granularity {
        Granularity::bit(8).unwrap()
    }

    fn key8(g: &Granularity, bits: u32) -> FlowKey {
        g.full_key(bits)
    }

    #[test]
    fn single_insert_then_estimate() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(2, 8, 7), &g).unwrap();
        let k = key8(&g, 3);
        let out = b.update(k, 5, 0).unwrap();
        assert_eq!(out.count_after, 5);
        assert_eq!(out.kind, UpdateKind::Inserted);
        assert_eq!(b.estimate(k), 5);
        assert_eq!(b.estimate(key8(&g, 4)), 0);
    }

    #[test]
    fn wrong_layer_rejected() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(1, 4, 7), &g).unwrap();
        let k = g.key(0xF0, 4).unwrap();
        assert!(matches!(
            b.update(k, 1, 0),
            Err(Error::LayerMismatch { got: 4, expected: 0 })
        ));
    }

    #[test]
    fn absent_key_installed_when_empty_cell_exists() {
        // Empty candidate means the key always lands (the would-be P = v/(v+0) = 1 path).
        let g = gran8();
        for seed in 0..32u64 {
            let mut b = ResidualBlock::new(0, &BlockConfig::coco(1, 4, seed), &g).unwrap();
            let k = key8(&g, 9);
            let out = b.update(k, 2, 0).unwrap();
            assert!(out.matched());
            assert_eq!(b.estimate(k), 2);
        }
    }

    #[test]
    fn replacement_probability_matches_fig4_one_fifth() {
        // Min bucket holds 4, new item arrives with v=1: replacement wins
        // with probability 1/(1+4) = 1/5.
        let g = gran8();
        let a = key8(&g, 1);
        let d = key8(&g, 2);
        let trials = 50_000u32;
        let mut wins = 0u32;
        for seed in 0..trials {
            let mut b = ResidualBlock::new(0, &BlockConfig::uss(1, u64::from(seed)), &g).unwrap();
            b.update(a, 4, 0).unwrap();
            let out = b.update(d, 1, 0).unwrap();
            assert_eq!(out.kind, UpdateKind::Displaced);
            assert_eq!(out.count_after, 0);
            assert_eq!(b.drain(&g)[0].value, 5, "min bucket always absorbs the value");
            if b.estimate(d) > 0 {
                wins += 1;
            }
        }
        let p = f64::from(wins) / f64::from(trials);
        assert!((p - 0.2).abs() < 0.015, "empirical P = {p}, want ~0.2");
    }

    #[test]
    fn decrement_clamps_and_empties() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(2, 8, 3), &g).unwrap();
        let k = key8(&g, 11);
        b.update(k, 7, 0).unwrap();

        // Zero decrement: match reported, value untouched.
        assert!(b.decrement(k, 0));
        assert_eq!(b.estimate(k), 7);

        // Over-decrement clamps at zero and the cell becomes empty.
        assert!(b.decrement(k, 10));
        assert_eq!(b.estimate(k), 0);
        assert!(b.drain(&g).is_empty());

        // Missing key is a legal no-op.
        assert!(!b.decrement(key8(&g, 12), 5));
    }

    #[test]
    fn matched_update_with_decrement_empties_cell() {
        // The ancestor-compensation path: value 49, +1, -50 leaves an empty cell.
        let g = gran8();
        let mut b = ResidualBlock::new(4, &BlockConfig::uss(4, 9), &g).unwrap();
        let anc = g.key(0xA0, 4).unwrap();
        b.update(anc, 49, 0).unwrap();
        let out = b.update(anc, 1, 50).unwrap();
        assert_eq!(out.count_after, 0);
        assert_eq!(out.value_before, 49);
        assert!(out.matched());
        assert!(b.drain(&g).is_empty());
    }

    #[test]
    fn lock_on_absent_key_is_noop() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(2, 8, 5), &g).unwrap();
        assert!(!b.lock(key8(&g, 1)));
        assert!(b.drain(&g).is_empty());
    }

    #[test]
    fn locked_key_never_evicted() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::uss(2, 42), &g).unwrap();
        let hh = key8(&g, 200);
        b.update(hh, 3, 0).unwrap();
        b.update(key8(&g, 201), 1, 0).unwrap();
        assert!(b.lock(hh));
        for i in 0..10_000u32 {
            b.update(key8(&g, i % 64), 1, 0).unwrap();
        }
        assert!(b.estimate(hh) >= 3, "locked key must survive");
        let locked: Vec<_> = b.drain(&g).into_iter().filter(|c| c.locked).collect();
        assert_eq!(locked.len(), 1);
        assert_eq!(locked[0].key, hh);
    }

    #[test]
    fn min_selection_skips_locked_exhaustively() {
        // g=2, one locked and one unlocked candidate: the unlocked cell is
        // always the victim, whatever the value pair.
        let g = gran8();
        for va in 1..=16u64 {
            for vb in 1..=16u64 {
                let cfg = BlockConfig::coco(2, 1, 77);
                let mut b = CocoBlock::new(0, &cfg).unwrap();
                // b=1 pins each array to a single bucket.
                let ka = key8(&g, 1);
                b.update(ka, va, 0).unwrap(); // lands in array 0 (first empty)
                let kb = key8(&g, 2);
                // Fill the other array's bucket via a key that maps there.
                let out = b.update(kb, vb, 0).unwrap();
                assert!(out.matched());
                b.lock(ka);
                let before_b = b.estimate(kb);
                let newcomer = key8(&g, 3);
                let out = b.update(newcomer, 1, 0).unwrap();
                assert_eq!(out.kind, UpdateKind::Displaced);
                assert_eq!(b.estimate(ka), va, "locked cell untouched");
                assert_eq!(
                    b.drain(&g).iter().map(|c| c.value).sum::<u64>(),
                    va + before_b + 1
                );
            }
        }
    }

    #[test]
    fn all_locked_drops_update() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::uss(1, 5), &g).unwrap();
        let k = key8(&g, 1);
        b.update(k, 4, 0).unwrap();
        b.lock(k);
        let out = b.update(key8(&g, 2), 1, 0).unwrap();
        assert_eq!(out.kind, UpdateKind::DroppedLocked);
        assert_eq!(b.estimate(k), 4, "no mutation on the drop path");
        assert_eq!(b.dropped_count(), 1);
    }

    #[test]
    fn drain_empty_and_two_entries() {
        let g = gran8();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(2, 8, 1), &g).unwrap();
        assert!(b.drain(&g).is_empty());
        b.update(key8(&g, 10), 2, 0).unwrap();
        b.update(key8(&g, 20), 3, 0).unwrap();
        let drained = b.drain(&g);
        assert_eq!(drained.len(), 2);
        assert_eq!(
            drained[0],
            Bucket {
                key: key8(&g, 10),
                value: 2,
                locked: false
            }
        );
        assert_eq!(
            drained[1],
            Bucket {
                key: key8(&g, 20),
                value: 3,
                locked: false
            }
        );
    }

    /// Shadow-ledger conservation: drained sum equals inserted value minus
    /// effective decrements minus dropped updates.
    #[test]
    fn conservation_ledger_random_ops() {
        let g = gran8();
        for seed in 0..1000u64 {
            let mut rng = SplitMix64::new(seed.wrapping_mul(0x9E37_79B9) + 1);
            let kind = if seed % 2 == 0 {
                BlockConfig::coco(2, 2, seed)
            } else {
                BlockConfig::uss(4, seed)
            };
            let mut b = ResidualBlock::new(0, &kind, &g).unwrap();
            let mut ledger: i128 = 0;
            for _ in 0..200 {
                let op = rng.gen_range(10);
                let k = key8(&g, rng.gen_range(16) as u32);
                match op {
                    0..=6 => {
                        let v = 1 + rng.gen_range(5);
                        let dec = if rng.gen_range(4) == 0 {
                            rng.gen_range(8)
                        } else {
                            0
                        };
                        let out = b.update(k, v, dec).unwrap();
                        match out.kind {
                            UpdateKind::Matched => {
                                // Effective change: bounded below by the clamp.
                                ledger += i128::from(out.count_after) - i128::from(out.value_before);
                            }
                            UpdateKind::Inserted => ledger += i128::from(v),
                            UpdateKind::Displaced => ledger += i128::from(v),
                            UpdateKind::DroppedLocked => {}
                        }
                    }
                    7..=8 => {
                        let before = b.estimate(k);
                        let amount = rng.gen_range(6);
                        if b.decrement(k, amount) {
                            ledger -= i128::from(before.min(amount));
                        }
                    }
                    _ => {
                        b.lock(k);
                    }
                }
                let total: u64 = b.drain(&g).iter().map(|c| c.value).sum();
                assert_eq!(i128::from(total), ledger, "seed {seed}");
            }
        }
    }

    #[test]
    fn determinism_same_seed_same_state() {
        let g = gran8();
        for kind in [BlockConfig::coco(2, 4, 123), BlockConfig::uss(6, 123)] {
            let mut b1 = ResidualBlock::new(0, &kind, &g).unwrap();
            let mut b2 = ResidualBlock::new(0, &kind, &g).unwrap();
            let mut rng = SplitMix64::new(99);
            for _ in 0..5_000 {
                let k = key8(&g, rng.gen_range(40) as u32);
                let v = 1 + rng.gen_range(3);
                b1.update(k, v, 0).unwrap();
                b2.update(k, v, 0).unwrap();
            }
            assert_eq!(b1.drain(&g), b2.drain(&g));
        }
    }

    /// Step-by-step reference simulation of a g=1 coco block, used as the
    /// deterministic replay oracle. It mirrors the published update rules
    /// over an explicit array, independent of the production data layout.
    #[test]
    fn estimates_match_reference_replay() {
        let g = gran8();
        let cfg = BlockConfig::coco(1, 4, 2024);
        let mut block = CocoBlock::new(0, &cfg).unwrap();

        // Reference state: same hash, same RNG draws, flat array.
        let mut seed_rng = SplitMix64::new(cfg.seed);
        let hash_seed = seed_rng.next_u64();
        let mut ref_rng = SplitMix64::new(cfg.seed ^ 0xA076_1D64_78BD_642F);
        let mut ref_cells: Vec<(Option<u32>, u64)> = vec![(None, 0); 4];

        let mut trace_rng = SplitMix64::new(55);
        for _ in 0..2_000 {
            let bits = trace_rng.gen_range(24) as u32;
            let v = 1 + trace_rng.gen_range(2);
            block.update(key8(&g, bits), v, 0).unwrap();

            let idx = bucket_index(hash_seed, bits, 4);
            let cell = &mut ref_cells[idx];
            match cell.0 {
                Some(k) if k == bits => cell.1 += v,
                _ if cell.1 == 0 => *cell = (Some(bits), v),
                _ => {
                    cell.1 += v;
                    if ref_rng.gen_range(cell.1) < v {
                        cell.0 = Some(bits);
                    }
                }
            }
        }
        for bits in 0..24u32 {
            let expect = ref_cells
                .iter()
                .find(|(k, _)| *k == Some(bits))
                .map_or(0, |(_, v)| *v);
            assert_eq!(block.estimate(key8(&g, bits)), expect, "key {bits}");
        }
    }

    #[test]
    fn uss_and_coco_agree_on_g1_fixture() {
        // A single-cell block where the summary minimum and the array
        // minimum necessarily coincide: the two implementations must make
        // identical decisions given the same seed.
        let g = gran8();
        for seed in 0..200u64 {
            let mut coco = ResidualBlock::new(0, &BlockConfig::coco(1, 1, seed), &g).unwrap();
            let mut uss = ResidualBlock::new(0, &BlockConfig::uss(1, seed), &g).unwrap();
            let mut rng = SplitMix64::new(seed ^ 7);
            for _ in 0..200 {
                let k = key8(&g, rng.gen_range(5) as u32);
                let v = 1 + rng.gen_range(4);
                let oc = coco.update(k, v, 0).unwrap();
                let ou = uss.update(k, v, 0).unwrap();
                assert_eq!(oc.count_after, ou.count_after);
                assert_eq!(oc.kind, ou.kind);
            }
            assert_eq!(coco.drain(&g), uss.drain(&g));
        }
    }

    #[test]
    fn jsonl_debug_dump_shape() {
        let g = Granularity::ipv4_bit();
        let mut b = ResidualBlock::new(0, &BlockConfig::coco(1, 4, 1), &g).unwrap();
        b.update(g.full_key(0xC0A8_0001), 3, 0).unwrap();
        let line = b.drain_jsonl(&g);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["key"], "192.168.0.1/32");
        assert_eq!(v["prefix_len"], 32);
        assert_eq!(v["value"], 3);
        assert_eq!(v["locked"], false);
    }

    #[test]
    fn uss_requires_g_equal_one() {
        let bad = BlockConfig {
            kind: BlockKind::Uss,
            g: 2,
            b: 4,
            seed: 1,
        };
        assert!(bad.validate().is_err());
    }
}
