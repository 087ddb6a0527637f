//! The multi-level sketch: insertion pipeline with residual connections and
//! end-of-window HHH extraction.
//!
//! Insertion walks the levels bottom-up. A fully specified key is
//! generalized to each level's layer and applied to that level's block.
//! When a key's count crosses its level threshold, the key is locked at
//! that level and the crossed threshold is subtracted from its ancestors at
//! every level above (riding along with the same insert), so upper levels
//! retain none of the locked subtree's mass. Once a flow matches a locked
//! cell, it stops propagating upward: upper levels hold only residual
//! counts.
//!
//! Extraction rebuilds per-layer aggregates bottom-up. Each level seeds its
//! starting layer with its drained cells plus a restoration term: every
//! locked key below contributes its (recursively restored) count to its
//! ancestor, compensating both the subtracted thresholds and the traffic
//! withheld after locking; the pending mass cascades across level
//! boundaries until a locked ancestor absorbs it. Within a level,
//! candidates at or above the threshold are tested with conditional counts
//! against the already-found HHH set, and all mass is merged one layer up
//! at a time. At a level boundary the merged mass is dropped: the next
//! level's own cells already measure all unlocked traffic, and restoration
//! re-injects the locked part.
//!
//! A sketch is single-writer on the insert path; extraction takes `&self`
//! and can run on a detached clone at a window boundary.

use std::collections::BTreeMap;

use crate::block::{BlockConfig, ResidualBlock};
use crate::error::{Error, Result};
use crate::hierarchy::{FlowKey, Granularity};

/// Threshold value meaning "residual connection disabled at this level".
pub const THRESHOLD_DISABLED: u64 = u64::MAX;

/// One level: the hierarchy layer it stores, its residual threshold, and
/// its block geometry.
#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub layer: u8,
    /// Count at which a key is locked and stops propagating upward.
    /// [`THRESHOLD_DISABLED`] turns the residual connection off.
    pub threshold: u64,
    pub block: BlockConfig,
}

/// Ordered stack of levels over a granularity.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    granularity: Granularity,
    levels: Vec<LevelSpec>,
}

impl LevelPlan {
    pub fn new(granularity: Granularity, levels: Vec<LevelSpec>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidPlan("at least one level required".into()));
        }
        if levels.len() > usize::from(granularity.depth()) {
            return Err(Error::InvalidPlan(format!(
                "{} levels exceed hierarchy depth {}",
                levels.len(),
                granularity.depth()
            )));
        }
        if levels[0].layer != 0 {
            return Err(Error::InvalidPlan(
                "bottom level must store fully specified keys (layer 0)".into(),
            ));
        }
        for pair in levels.windows(2) {
            if pair[1].layer <= pair[0].layer {
                return Err(Error::InvalidPlan(
                    "level layers must be strictly increasing".into(),
                ));
            }
        }
        let top = levels.last().expect("non-empty").layer;
        if top > granularity.depth() {
            return Err(Error::InvalidPlan(format!(
                "layer {top} out of range for depth {}",
                granularity.depth()
            )));
        }
        for level in &levels {
            level.block.validate()?;
        }
        Ok(LevelPlan {
            granularity,
            levels,
        })
    }

    pub fn granularity(&self) -> &Granularity {
        &self.granularity
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }
}

/// One reported hierarchical heavy hitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HHHEntry {
    pub key: FlowKey,
    /// Conditional count: the key's estimate after discounting the HHHs
    /// already found below it.
    pub estimated_count: u64,
    pub layer: u8,
}

/// Conditional count of `p` given the HHHs found so far: the estimate of
/// `p` minus the estimates of set members that are maximal descendants of
/// `p` (members generalized by another member are already covered and are
/// not subtracted again). Estimates are looked up in `layer_estimates`,
/// which maps every relevant key (including `p`) to its raw estimate at
/// discovery time; a member missing from the map falls back to its recorded
/// conditional count. Clamped at zero.
pub fn conditional_count(
    gran: &Granularity,
    p: FlowKey,
    hhh_so_far: &[HHHEntry],
    layer_estimates: &BTreeMap<FlowKey, u64>,
) -> u64 {
    let raw = layer_estimates.get(&p).copied().unwrap_or(0);
    let discount = descendant_discount(gran, p, hhh_so_far, layer_estimates);
    raw.saturating_sub(discount)
}

/// Sum of raw estimates of maximal HHH descendants of `p`.
pub(crate) fn descendant_discount(
    gran: &Granularity,
    p: FlowKey,
    hhh_so_far: &[HHHEntry],
    layer_estimates: &BTreeMap<FlowKey, u64>,
) -> u64 {
    let mut discount = 0u64;
    for q in hhh_so_far {
        if q.key == p || !gran.is_ancestor(p, q.key) {
            continue;
        }
        let is_maximal = !hhh_so_far.iter().any(|r| {
            r.key != q.key && r.key != p && r.layer > q.layer && gran.is_ancestor(r.key, q.key)
        });
        if is_maximal {
            let raw = layer_estimates
                .get(&q.key)
                .copied()
                .unwrap_or(q.estimated_count);
            discount += raw;
        }
    }
    discount
}

/// Bottom-up HHH accumulator shared by the sketch extraction and the
/// single-block aggregation path.
struct HhhScan<'a> {
    gran: &'a Granularity,
    threshold: f64,
    members: Vec<HHHEntry>,
    member_raw: BTreeMap<FlowKey, u64>,
}

impl<'a> HhhScan<'a> {
    fn new(gran: &'a Granularity, threshold: f64) -> Self {
        HhhScan {
            gran,
            threshold,
            members: Vec::new(),
            member_raw: BTreeMap::new(),
        }
    }

    /// Scan working counts from `from_layer` through `to_layer` inclusive,
    /// admitting members and merging all mass one layer up at each step.
    fn scan(&mut self, mut working: BTreeMap<u32, u64>, from_layer: u8, to_layer: u8) {
        let mut layer = from_layer;
        loop {
            for (&bits, &count) in &working {
                if (count as f64) < self.threshold {
                    continue;
                }
                let key = self.gran.key(bits, layer).expect("layer in range");
                let cc = count.saturating_sub(descendant_discount(
                    self.gran,
                    key,
                    &self.members,
                    &self.member_raw,
                ));
                if cc as f64 >= self.threshold {
                    self.members.push(HHHEntry {
                        key,
                        estimated_count: cc,
                        layer,
                    });
                    self.member_raw.insert(key, count);
                }
            }
            if layer >= to_layer {
                break;
            }
            let mask = self.gran.mask(layer + 1);
            let mut next = BTreeMap::new();
            for (bits, count) in working {
                *next.entry(bits & mask).or_insert(0u64) += count;
            }
            working = next;
            layer += 1;
        }
    }
}

/// Run the within-level aggregation over a single working set, from
/// `from_layer` all the way to the hierarchy apex. This is exactly what a
/// one-level sketch does at extraction time, exposed so a bare block can be
/// queried through the same path. `total` is the window mass the threshold
/// fraction applies to.
pub fn hhh_from_working(
    gran: &Granularity,
    working: BTreeMap<u32, u64>,
    from_layer: u8,
    theta: f64,
    total: u64,
) -> Result<Vec<HHHEntry>> {
    let threshold = check_threshold(theta, total)?;
    let mut scan = HhhScan::new(gran, threshold);
    scan.scan(working, from_layer, gran.depth());
    Ok(scan.members)
}

fn check_threshold(theta: f64, total: u64) -> Result<f64> {
    let threshold = theta * total as f64;
    if !(theta > 0.0 && theta < 1.0) || threshold < 1.0 {
        return Err(Error::ThresholdTooSmall { theta, n: total });
    }
    Ok(threshold)
}

/// The L-level residual sketch.
#[derive(Debug, Clone)]
pub struct ResidualSketch {
    plan: LevelPlan,
    blocks: Vec<ResidualBlock>,
    packets: u64,
    value_seen: u64,
    connection_enabled: bool,
    level_updates: Vec<u64>,
}

impl ResidualSketch {
    pub fn new(plan: LevelPlan) -> Result<Self> {
        Self::with_connection(plan, true)
    }

    /// `connection_enabled = false` turns off locking, residual decrements
    /// and the forwarding stop: every insert touches every level. Used for
    /// the ablation benchmark.
    pub fn with_connection(plan: LevelPlan, connection_enabled: bool) -> Result<Self> {
        let gran = plan.granularity().clone();
        let blocks = plan
            .levels()
            .iter()
            .map(|level| ResidualBlock::new(level.layer, &level.block, &gran))
            .collect::<Result<Vec<_>>>()?;
        let level_updates = vec![0; plan.level_count()];
        Ok(ResidualSketch {
            plan,
            blocks,
            packets: 0,
            value_seen: 0,
            connection_enabled,
            level_updates,
        })
    }

    pub fn plan(&self) -> &LevelPlan {
        &self.plan
    }

    pub fn granularity(&self) -> &Granularity {
        self.plan.granularity()
    }

    /// Packets inserted in the current window.
    pub fn n(&self) -> u64 {
        self.packets
    }

    /// Total value inserted in the current window.
    pub fn value_seen(&self) -> u64 {
        self.value_seen
    }

    pub fn connection_enabled(&self) -> bool {
        self.connection_enabled
    }

    /// Block updates issued per level so far (instrumentation).
    pub fn level_update_counts(&self) -> &[u64] {
        &self.level_updates
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// Insert one record. The key must be fully specified (layer 0).
    pub fn insert(&mut self, full_key: FlowKey, v: u64) -> Result<()> {
        if full_key.layer() != 0 {
            return Err(Error::NotFullySpecified(full_key.layer()));
        }
        if v == 0 {
            return Err(Error::ZeroValue);
        }
        let plan = &self.plan;
        let blocks = &mut self.blocks;
        let level_updates = &mut self.level_updates;
        let gran = plan.granularity();
        let connection = self.connection_enabled;
        // Thresholds of the levels this flow crossed during this walk. The
        // subtracted amount rides along to every higher level, so a locked
        // subtree nets to zero everywhere above its lock and the extraction
        // restoration can simply re-add the locked cell's value.
        let mut pending_dec = 0u64;
        let mut prev_locked = false;
        for i in 0..blocks.len() {
            let level = &plan.levels()[i];
            // Stop once the flow matched a locked cell below: its mass is
            // retained there and must not be recorded again upstream. The
            // lock flag is the only truthful stop signal; a raw count
            // comparison would also fire on cells inflated by replacement
            // bumps, silently starving upper levels with nothing for the
            // restoration step to repay.
            if i > 0 && connection && prev_locked {
                break;
            }
            let decrement = if i > 0 && connection { pending_dec } else { 0 };
            let key = gran.generalize(full_key, level.layer)?;
            let out = blocks[i].update(key, v, decrement)?;
            level_updates[i] += 1;
            let crossed = connection
                && level.threshold != THRESHOLD_DISABLED
                && out.matched()
                && !out.locked_before
                && out.value_before < level.threshold
                && out.count_after >= level.threshold;
            if crossed {
                blocks[i].lock(key);
                pending_dec += level.threshold;
            }
            prev_locked = out.matched() && out.locked_before;
        }
        self.packets += 1;
        self.value_seen += v;
        Ok(())
    }

    /// Insert by raw source address with layer 0 implied.
    pub fn insert_ip(&mut self, ip: u32, v: u64) -> Result<()> {
        let key = self.plan.granularity().full_key(ip);
        self.insert(key, v)
    }

    /// Point estimate for a key at any layer: the covering level's cells
    /// descending from it, plus every locked key below it (whose mass was
    /// withheld from upper levels).
    pub fn estimate(&self, key: FlowKey) -> u64 {
        let gran = self.plan.granularity();
        let covering = self
            .plan
            .levels()
            .iter()
            .rposition(|level| level.layer <= key.layer());
        let Some(covering) = covering else { return 0 };
        let mut total = 0u64;
        for cell in self.blocks[covering].drain(gran) {
            if gran.is_ancestor(key, cell.key) {
                total += cell.value;
            }
        }
        for block in &self.blocks[..covering] {
            for cell in block.drain(gran) {
                if cell.locked && gran.is_ancestor(key, cell.key) {
                    total += cell.value;
                }
            }
        }
        total
    }

    /// End-of-window HHH extraction at fraction `theta`. The threshold is
    /// `theta` times the window's total mass in the unit being counted
    /// (equal to N for unit-value streams).
    pub fn extract_hhh(&self, theta: f64) -> Result<Vec<HHHEntry>> {
        if self.packets == 0 {
            return Err(Error::EmptyWindow);
        }
        let threshold = check_threshold(theta, self.value_seen)?;
        let gran = self.plan.granularity();
        let depth = gran.depth();
        let mut scan = HhhScan::new(gran, threshold);
        // Locked keys from lower levels whose mass was withheld upstream,
        // with their restored counts.
        let mut restored_below: Vec<(FlowKey, u64)> = Vec::new();
        for (i, level) in self.plan.levels().iter().enumerate() {
            let from_layer = level.layer;
            let to_layer = match self.plan.levels().get(i + 1) {
                Some(next) => next.layer - 1,
                None => depth,
            };
            let mut working: BTreeMap<u32, u64> = BTreeMap::new();
            let drained = self.blocks[i].drain(gran);
            for cell in &drained {
                *working.entry(cell.key.bits()).or_insert(0) += cell.value;
            }
            // Restoration: locked keys below were decremented by their
            // level's threshold when they crossed and withheld afterwards;
            // their current counts make their ancestors whole again.
            for (locked_key, restored) in &restored_below {
                let ancestor = gran.generalize(*locked_key, from_layer)?;
                *working.entry(ancestor.bits()).or_insert(0) += restored;
            }
            // Carry the withheld mass across the level boundary: this
            // level's locked cells cascade with their restored working
            // counts (absorbing any lower locked keys under them); locked
            // keys whose ancestor cell here is unlocked stay pending, since
            // the next level never saw their mass either.
            let locked_bits: std::collections::BTreeSet<u32> = drained
                .iter()
                .filter(|cell| cell.locked)
                .map(|cell| cell.key.bits())
                .collect();
            let mut carried: Vec<(FlowKey, u64)> = drained
                .iter()
                .filter(|cell| cell.locked)
                .map(|cell| (cell.key, working[&cell.key.bits()]))
                .collect();
            for (locked_key, restored) in &restored_below {
                let ancestor = gran.generalize(*locked_key, from_layer)?;
                if !locked_bits.contains(&ancestor.bits()) {
                    carried.push((*locked_key, *restored));
                }
            }
            restored_below = carried;
            scan.scan(working, from_layer, to_layer);
        }
        Ok(scan.members)
    }

    /// Clear all blocks and counters for the next window.
    pub fn reset_window(&mut self) {
        for block in &mut self.blocks {
            block.clear();
        }
        self.packets = 0;
        self.value_seen = 0;
        for counter in &mut self.level_updates {
            *counter = 0;
        }
    }
}

/// Render an HHH report as sorted CSV lines `key,prefix_len,count`.
pub fn hhh_csv(gran: &Granularity, entries: &[HHHEntry]) -> String {
    let mut rows: Vec<&HHHEntry> = entries.iter().collect();
    rows.sort_by_key(|e| e.key);
    let mut out = String::from("key,prefix_len,conditional_count\n");
    for e in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            gran.render(e.key),
            gran.prefix_len(e.key),
            e.estimated_count
        ));
    }
    out
}
