//! Exact ground truth: full per-key counting and brute-force HHH sets.
//!
//! Counting is memory-unbounded; a configurable cardinality cap guards
//! against accidentally feeding it an enormous trace.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::hierarchy::{FlowKey, Granularity};
use crate::sketch::HHHEntry;
use crate::trace::PacketRecord;

const DEFAULT_CARDINALITY_CAP: usize = 10_000_000;

/// Exact per-key counts over one window.
#[derive(Debug, Clone)]
pub struct ExactCounts {
    gran: Granularity,
    counts: HashMap<u32, u64>,
    n: u64,
    value_total: u64,
    cap: usize,
}

impl ExactCounts {
    pub fn new(gran: Granularity) -> Self {
        Self::with_cap(gran, DEFAULT_CARDINALITY_CAP)
    }

    pub fn with_cap(gran: Granularity, cap: usize) -> Self {
        ExactCounts {
            gran,
            counts: HashMap::new(),
            n: 0,
            value_total: 0,
            cap,
        }
    }

    pub fn granularity(&self) -> &Granularity {
        &self.gran
    }

    pub fn observe(&mut self, ip: u32, v: u64) -> Result<()> {
        let bits = self.gran.full_key(ip).bits();
        if !self.counts.contains_key(&bits) && self.counts.len() >= self.cap {
            return Err(Error::CardinalityCap { cap: self.cap });
        }
        *self.counts.entry(bits).or_insert(0) += v;
        self.n += 1;
        self.value_total += v;
        Ok(())
    }

    pub fn observe_record(&mut self, rec: &PacketRecord) -> Result<()> {
        self.observe(rec.src_ip, u64::from(rec.value))
    }

    pub fn from_records(gran: Granularity, records: &[PacketRecord]) -> Result<Self> {
        let mut counts = Self::new(gran);
        for rec in records {
            counts.observe_record(rec)?;
        }
        Ok(counts)
    }

    /// Number of observe calls.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn value_total(&self) -> u64 {
        self.value_total
    }

    pub fn distinct_keys(&self) -> usize {
        self.counts.len()
    }

    pub fn count_of(&self, ip: u32) -> u64 {
        let bits = self.gran.full_key(ip).bits();
        self.counts.get(&bits).copied().unwrap_or(0)
    }

    /// Exact aggregate per key at `layer`, computed by a fresh group-by
    /// over the layer-0 counts.
    pub fn aggregate_layer(&self, layer: u8) -> Result<BTreeMap<u32, u64>> {
        if layer > self.gran.depth() {
            return Err(Error::LayerOutOfRange {
                layer,
                max: self.gran.depth(),
            });
        }
        let mask = self.gran.mask(layer);
        let mut agg = BTreeMap::new();
        for (&bits, &count) in &self.counts {
            *agg.entry(bits & mask).or_insert(0u64) += count;
        }
        Ok(agg)
    }

    /// Keys at `layer` whose exact aggregate reaches `theta` times the
    /// total mass (same unit as the observed values).
    pub fn exact_layer_hh(&self, theta: f64, layer: u8) -> Result<Vec<FlowKey>> {
        let threshold = theta * self.value_total as f64;
        let mut out = Vec::new();
        for (bits, count) in self.aggregate_layer(layer)? {
            if count as f64 >= threshold {
                out.push(self.gran.key(bits, layer)?);
            }
        }
        Ok(out)
    }

    /// Exact hierarchical heavy hitters, bottom-up: per layer, keys whose
    /// conditional count against the members found so far reaches
    /// `theta * N`. Entries carry exact conditional counts; the discount
    /// subtracts maximal members' raw aggregates, mirroring the sketch.
    pub fn exact_hhh(&self, theta: f64) -> Result<Vec<HHHEntry>> {
        if self.n == 0 {
            return Err(Error::EmptyWindow);
        }
        let threshold = theta * self.value_total as f64;
        if !(theta > 0.0 && theta < 1.0) || threshold < 1.0 {
            return Err(Error::ThresholdTooSmall {
                theta,
                n: self.value_total,
            });
        }
        let mut members: Vec<HHHEntry> = Vec::new();
        let mut member_raw: BTreeMap<FlowKey, u64> = BTreeMap::new();
        for layer in 0..=self.gran.depth() {
            for (bits, raw) in self.aggregate_layer(layer)? {
                if (raw as f64) < threshold {
                    continue;
                }
                let key = self.gran.key(bits, layer)?;
                let discount =
                    crate::sketch::descendant_discount(&self.gran, key, &members, &member_raw);
                let cc = raw.saturating_sub(discount);
                if cc as f64 >= threshold {
                    members.push(HHHEntry {
                        key,
                        estimated_count: cc,
                        layer,
                    });
                    member_raw.insert(key, raw);
                }
            }
        }
        Ok(members)
    }

    /// True conditional counts of the exact HHH set, keyed for metric
    /// computation.
    pub fn true_conditional_counts(&self, theta: f64) -> Result<BTreeMap<FlowKey, u64>> {
        Ok(self
            .exact_hhh(theta)?
            .into_iter()
            .map(|e| (e.key, e.estimated_count))
            .collect())
    }
}
