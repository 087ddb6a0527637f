//! Trace ingestion and synthetic generation.
//!
//! Records are `(src_ip, value)` tuples. On disk a trace is either CSV
//! (`src_ip_dotted,value` per line) or packed little-endian binary
//! (`u32 ip, u32 value` pairs). Generators ship with the crate; real
//! dataset conversions are ingested through the same two formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trace record: a source address and a value (1 for packet counting,
/// or a byte size).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub src_ip: u32,
    pub value: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Bin,
}

fn dotted(ip: u32) -> String {
    let b = ip.to_be_bytes();
    format!("{}.{}.{}.{}", b[0], b[1], b[2], b[3])
}

fn parse_dotted(s: &str) -> Option<u32> {
    let mut parts = [0u8; 4];
    let mut n = 0;
    for part in s.split('.') {
        if n == 4 {
            return None;
        }
        parts[n] = part.parse().ok()?;
        n += 1;
    }
    (n == 4).then(|| u32::from_be_bytes(parts))
}

/// Streaming trace reader; yields records in file order.
pub enum TraceReader {
    Csv { lines: BufReader<File>, line_no: usize },
    Bin { file: BufReader<File>, offset: u64 },
}

impl TraceReader {
    pub fn open(path: &Path, format: TraceFormat) -> Result<Self> {
        let file = File::open(path)?;
        Ok(match format {
            TraceFormat::Csv => TraceReader::Csv {
                lines: BufReader::new(file),
                line_no: 0,
            },
            TraceFormat::Bin => TraceReader::Bin {
                file: BufReader::new(file),
                offset: 0,
            },
        })
    }
}

impl Iterator for TraceReader {
    type Item = Result<PacketRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            TraceReader::Csv { lines, line_no } => {
                let mut buf = String::new();
                loop {
                    buf.clear();
                    match lines.read_line(&mut buf) {
                        Ok(0) => return None,
                        Ok(_) => {}
                        Err(e) => return Some(Err(e.into())),
                    }
                    *line_no += 1;
                    let line = buf.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let parse = || -> Option<PacketRecord> {
                        let (ip, value) = line.split_once(',')?;
                        Some(PacketRecord {
                            src_ip: parse_dotted(ip.trim())?,
                            value: value.trim().parse().ok()?,
                        })
                    };
                    return Some(parse().ok_or_else(|| Error::TraceParse {
                        line: *line_no,
                        msg: format!("expected 'a.b.c.d,value', got {line:?}"),
                    }));
                }
            }
            TraceReader::Bin { file, offset } => {
                let mut buf = [0u8; 8];
                let mut read = 0;
                while read < 8 {
                    match file.read(&mut buf[read..]) {
                        Ok(0) => {
                            return if read == 0 {
                                None
                            } else {
                                Some(Err(Error::TraceTruncated {
                                    offset: *offset + read as u64,
                                }))
                            };
                        }
                        Ok(n) => read += n,
                        Err(e) => return Some(Err(e.into())),
                    }
                }
                *offset += 8;
                Some(Ok(PacketRecord {
                    src_ip: u32::from_le_bytes(buf[0..4].try_into().unwrap()),
                    value: u32::from_le_bytes(buf[4..8].try_into().unwrap()),
                }))
            }
        }
    }
}

pub fn read_trace(path: &Path, format: TraceFormat) -> Result<Vec<PacketRecord>> {
    TraceReader::open(path, format)?.collect()
}

pub fn write_trace(path: &Path, format: TraceFormat, records: &[PacketRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Csv => {
            for rec in records {
                writeln!(out, "{},{}", dotted(rec.src_ip), rec.value)?;
            }
        }
        TraceFormat::Bin => {
            for rec in records {
                out.write_all(&rec.src_ip.to_le_bytes())?;
                out.write_all(&rec.value.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Zipf stream over a fixed key space, ranks mapped to pseudo-random
/// distinct addresses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZipfSpec {
    /// Skew exponent s > 0.
    pub skew: f64,
    /// Key-space size K.
    pub keys: u64,
    /// Records to generate.
    pub length: u64,
    pub seed: u64,
}

/// Deterministic distinct address per rank.
///
/// Addresses come from a multiplicative cascade: the key population is
/// recursively split between the two halves of the address space with a
/// random proportion per node, so keys cluster at every prefix scale the
/// way real allocations do (a uniform spray would create an unrealistic
/// fuzzy band of near-threshold aggregates at one fixed depth). Rank
/// order is then decoupled from address order by a shuffle.
fn rank_addresses(keys: u64, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5EED_ADD2);
    let mut out = Vec::with_capacity(keys as usize);
    let mut stack = vec![(0u32, 0u8, keys)];
    while let Some((prefix, depth, count)) = stack.pop() {
        if count == 0 {
            continue;
        }
        if depth == 32 {
            out.push(prefix);
            continue;
        }
        let half_capacity = 1u64 << (31 - depth);
        // Depth-dependent split shares: moderate clustering of wide
        // regions, strongly lopsided selection of active blocks around the
        // /16../24 range, dense fill inside a block. Mirrors how address
        // space is allocated in practice: few active blocks, many hosts
        // per block.
        let u: f64 = rng.random();
        let share = match depth {
            0..=15 => u.powi(3) / (u.powi(3) + (1.0 - u).powi(3)),
            16..=23 => u.powi(9) / (u.powi(9) + (1.0 - u).powi(9)),
            _ => u,
        };
        let left = ((count as f64 * share).round() as u64)
            .clamp(count.saturating_sub(half_capacity), count.min(half_capacity));
        stack.push((prefix | 1u32 << (31 - depth), depth + 1, count - left));
        stack.push((prefix, depth + 1, left));
    }
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i);
        out.swap(i, j);
    }
    out
}

pub fn gen_zipf(spec: &ZipfSpec) -> Result<Vec<PacketRecord>> {
    if spec.skew <= 0.0 || spec.keys < 1 {
        return Err(Error::InvalidTraceSpec(format!(
            "zipf needs skew > 0 and keys >= 1, got s={} K={}",
            spec.skew, spec.keys
        )));
    }
    let dist = Zipf::new(spec.keys as f64, spec.skew)
        .map_err(|e| Error::InvalidTraceSpec(format!("zipf: {e}")))?;
    let addresses = rank_addresses(spec.keys, spec.seed);
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let records = (0..spec.length)
        .map(|_| {
            let rank = dist.sample(&mut rng) as u64;
            PacketRecord {
                src_ip: addresses[(rank - 1) as usize],
                value: 1,
            }
        })
        .collect();
    Ok(records)
}

/// Skew-modification of a base stream: re-weight so the top-k keys carry a
/// target share of total value, then remap each of those keys onto a fan of
/// fresh addresses under a flow-specific random prefix, so they aggregate
/// into heavy hitters only at prefix lengths inside `agg_prefix_range`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthSpec {
    pub top_k: usize,
    /// Target share of total value carried by the top-k keys, in (0, 1].
    pub mass_fraction: f64,
    /// Inclusive prefix-length range where the replaced aggregates live.
    pub agg_prefix_min: u8,
    pub agg_prefix_max: u8,
    /// Distinct suffix addresses per replaced flow.
    pub fan_out: u32,
    /// When the top-k keys hold more than `mass_fraction`, the excess is
    /// shed onto this many next-heaviest keys. Keeping the shed
    /// concentrated preserves a realistic population of heavy individual
    /// flows instead of diluting the excess into unlockable dust.
    #[serde(default = "default_shed_targets")]
    pub shed_targets: usize,
    pub seed: u64,
}

fn default_shed_targets() -> usize {
    256
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            top_k: 1000,
            mass_fraction: 0.3,
            agg_prefix_min: 20,
            agg_prefix_max: 24,
            fan_out: 64,
            shed_targets: default_shed_targets(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidTraceSpec("top_k must be >= 1".into()));
        }
        if !(self.mass_fraction > 0.0 && self.mass_fraction <= 1.0) {
            return Err(Error::InvalidTraceSpec(format!(
                "mass_fraction must be in (0,1], got {}",
                self.mass_fraction
            )));
        }
        if self.agg_prefix_min < 1
            || self.agg_prefix_min > self.agg_prefix_max
            || self.agg_prefix_max > 32
        {
            return Err(Error::InvalidTraceSpec(format!(
                "bad aggregation prefix range {}..={}",
                self.agg_prefix_min, self.agg_prefix_max
            )));
        }
        if self.fan_out < 1 {
            return Err(Error::InvalidTraceSpec("fan_out must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn skew_modify(base: Vec<PacketRecord>, spec: &SynthSpec) -> Result<Vec<PacketRecord>> {
    spec.validate()?;
    let mut records = base;
    let mut mass: std::collections::HashMap<u32, u64> = std::collections::HashMap::new();
    let mut total: u64 = 0;
    for rec in &records {
        *mass.entry(rec.src_ip).or_insert(0) += u64::from(rec.value);
        total += u64::from(rec.value);
    }
    if mass.len() < spec.top_k {
        return Err(Error::InvalidTraceSpec(format!(
            "top_k={} exceeds {} distinct keys",
            spec.top_k,
            mass.len()
        )));
    }
    let mut by_mass: Vec<(u32, u64)> = mass.iter().map(|(&k, &v)| (k, v)).collect();
    by_mass.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<u32> = by_mass[..spec.top_k].iter().map(|&(k, _)| k).collect();
    let top_set: std::collections::HashSet<u32> = top.iter().copied().collect();
    let mut top_mass: u64 = by_mass[..spec.top_k].iter().map(|&(_, v)| v).sum();

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ 0x17AC_E5EED);
    let target = (spec.mass_fraction * total as f64).round() as u64;

    // Re-weight by reassigning record keys until the top-k share meets the
    // target. Values never change, so N and total value are conserved.
    if top_mass < target {
        let mut cycle = 0usize;
        for rec in records.iter_mut() {
            if top_mass >= target {
                break;
            }
            if !top_set.contains(&rec.src_ip) {
                top_mass += u64::from(rec.value);
                rec.src_ip = top[cycle % top.len()];
                cycle += 1;
            }
        }
    } else if top_mass > target {
        // Shed excess mass onto the next-heaviest cold keys, round-robin.
        if spec.top_k >= by_mass.len() || spec.shed_targets == 0 {
            return Err(Error::InvalidTraceSpec(
                "cannot lower top-k mass share: no cold keys to absorb it".into(),
            ));
        }
        let end = (spec.top_k + spec.shed_targets).min(by_mass.len());
        let cold: Vec<u32> = by_mass[spec.top_k..end].iter().map(|&(k, _)| k).collect();
        let mut cycle = 0usize;
        for rec in records.iter_mut() {
            if top_mass <= target {
                break;
            }
            if top_set.contains(&rec.src_ip) && top_mass - u64::from(rec.value) >= target {
                top_mass -= u64::from(rec.value);
                rec.src_ip = cold[cycle % cold.len()];
                cycle += 1;
            }
        }
    }

    // Draw a non-nesting aggregation prefix per replaced flow and a fan of
    // distinct suffixes under it.
    let range_len = u64::from(spec.agg_prefix_max - spec.agg_prefix_min) + 1;
    let mut chosen: Vec<(u32, u8)> = Vec::with_capacity(top.len());
    let mut suffix_map: std::collections::HashMap<u32, Vec<u32>> =
        std::collections::HashMap::with_capacity(top.len());
    for &flow in &top {
        let mut attempts = 0u32;
        let (prefix, plen) = loop {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidTraceSpec(
                    "could not draw non-nesting aggregation prefixes; range too small for top_k"
                        .into(),
                ));
            }
            let plen = spec.agg_prefix_min + rng.random_range(0..range_len) as u8;
            let mask = u32::MAX << (32 - plen);
            let prefix: u32 = rng.random::<u32>() & mask;
            let nests = chosen.iter().any(|&(p, l)| {
                let short_mask = u32::MAX << (32 - l.min(plen));
                (p & short_mask) == (prefix & short_mask)
            });
            if !nests {
                break (prefix, plen);
            }
        };
        chosen.push((prefix, plen));
        let host_bits = 32 - plen;
        // A short prefix cannot host more distinct suffixes than it covers.
        let fan = u64::from(spec.fan_out).min(1u64 << host_bits) as usize;
        let mut suffixes = Vec::with_capacity(fan);
        let mut seen = std::collections::HashSet::new();
        while suffixes.len() < fan {
            let host = if host_bits == 32 {
                rng.random::<u32>()
            } else {
                rng.random::<u32>() & ((1u32 << host_bits) - 1)
            };
            let ip = prefix | host;
            if seen.insert(ip) {
                suffixes.push(ip);
            }
        }
        suffix_map.insert(flow, suffixes);
    }

    // Remap every record of a replaced flow, spreading occurrences across
    // the fan-out round-robin.
    let mut occurrence: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    for rec in records.iter_mut() {
        if let Some(suffixes) = suffix_map.get(&rec.src_ip) {
            let n = occurrence.entry(rec.src_ip).or_insert(0);
            let new_ip = suffixes[*n as usize % suffixes.len()];
            *n += 1;
            rec.src_ip = new_ip;
        }
    }
    Ok(records)
}

/// Provenance record written next to every generated trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format: TraceFormat,
    pub records: u64,
    pub total_value: u64,
    pub zipf: Option<ZipfSpec>,
    pub synth: Option<SynthSpec>,
}

impl TraceManifest {
    pub fn describe(
        records: &[PacketRecord],
        format: TraceFormat,
        zipf: Option<ZipfSpec>,
        synth: Option<SynthSpec>,
    ) -> Self {
        TraceManifest {
            format,
            records: records.len() as u64,
            total_value: records.iter().map(|r| u64::from(r.value)).sum(),
            zipf,
            synth,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        file.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}
