//! On-chip memory levels, the MRAM weight port's half-rate dual-cut
//! streaming model, and the two-branch L1 interconnect with deficit
//! round-robin priority arbitration.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemError {
    #[error("invalid arbiter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryLevelKind {
    L1Tcdm,
    MramWeight,
    TileSram,
    L2,
    L3Flash,
}

/// Static description of one memory level.
#[derive(Debug, Clone)]
pub struct MemoryLevel {
    pub kind: MemoryLevelKind,
    pub capacity: usize,
    /// Bits transferable per cluster cycle on its widest port.
    pub port_width: usize,
    pub banks: usize,
    /// Memory clock as a fraction of the cluster clock.
    pub clock_divider: f64,
    /// First-word latency in cluster cycles.
    pub read_latency: u64,
    pub writable_at_runtime: bool,
    pub read_energy_per_bit: f64,
    pub write_energy_per_bit: f64,
}

pub const KIB: usize = 1024;
pub const MIB: usize = 1024 * 1024;

/// The fixed memory levels of the cluster. The MRAM weight macro is
/// read-only at runtime; each of its banks pairs two 512 KiB cuts read in
/// parallel at half the cluster clock, interleaved back to one 256-bit
/// word per cluster cycle.
pub fn default_levels() -> Vec<MemoryLevel> {
    vec![
        MemoryLevel {
            kind: MemoryLevelKind::L1Tcdm,
            capacity: 256 * KIB,
            // The accelerator-side shallow branch loads/stores up to a
            // 288-bit unaligned window per cycle.
            port_width: 288,
            banks: 16,
            clock_divider: 1.0,
            read_latency: 1,
            writable_at_runtime: true,
            read_energy_per_bit: 1.0e-12,
            write_energy_per_bit: 1.0e-12,
        },
        MemoryLevel {
            kind: MemoryLevelKind::MramWeight,
            capacity: 4 * MIB,
            port_width: 256,
            banks: 4,
            clock_divider: 0.5,
            read_latency: 9,
            writable_at_runtime: false,
            read_energy_per_bit: 0.75e-12,
            write_energy_per_bit: f64::INFINITY,
        },
        MemoryLevel {
            kind: MemoryLevelKind::TileSram,
            capacity: 4 * MIB,
            port_width: 64,
            banks: 8,
            clock_divider: 1.0,
            read_latency: 2,
            writable_at_runtime: true,
            read_energy_per_bit: 0.8e-12,
            write_energy_per_bit: 0.8e-12,
        },
        MemoryLevel {
            kind: MemoryLevelKind::L2,
            capacity: 2 * MIB,
            port_width: 64,
            banks: 4,
            clock_divider: 1.0,
            read_latency: 6,
            writable_at_runtime: true,
            read_energy_per_bit: 2.0e-12,
            write_energy_per_bit: 2.0e-12,
        },
        MemoryLevel {
            kind: MemoryLevelKind::L3Flash,
            capacity: 64 * MIB,
            port_width: 8,
            banks: 1,
            clock_divider: 1.0,
            read_latency: 100,
            writable_at_runtime: false,
            read_energy_per_bit: 116e-12,
            write_energy_per_bit: f64::INFINITY,
        },
    ]
}

pub fn level(kind: MemoryLevelKind) -> MemoryLevel {
    default_levels().into_iter().find(|l| l.kind == kind).unwrap()
}

/// Streaming read from the weight MRAM over the dedicated 256-bit port:
/// first word after 9 cluster cycles, then one 256-bit beat per cluster
/// cycle (two half-rate cuts interleaved).
pub fn mram_stream(length_bytes: usize) -> (u64, u64) {
    assert!(length_bytes > 0, "mram_stream needs a non-empty transfer");
    let beats = (length_bytes * 8).div_ceil(256) as u64;
    (256, 9 + beats)
}

/// Uniform port cost: first-word latency plus width-limited beats.
pub fn port_cycles(level: &MemoryLevel, bytes: usize) -> u64 {
    level.read_latency + (bytes * 8).div_ceil(level.port_width) as u64
}

// ---------------------------------------------------------------------------
// L1 interconnect arbitration.
// ---------------------------------------------------------------------------

/// Which interconnect branch a master sits on: the shallow branch
/// (accelerator, wide access) or the logarithmic branch (cores and DMA).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Shallow,
    Logarithmic,
}

/// Minimum bank-bandwidth shares guaranteed to each branch. The silicon
/// documents only the guarantees (configurable minimum share, no
/// starvation); the deficit round-robin below is our mechanism for them.
#[derive(Debug, Clone, Copy)]
pub struct ArbiterConfig {
    pub min_share_shallow: f64,
    pub min_share_log: f64,
}

impl Default for ArbiterConfig {
    fn default() -> Self {
        ArbiterConfig { min_share_shallow: 0.75, min_share_log: 0.25 }
    }
}

impl ArbiterConfig {
    pub fn validate(&self) -> Result<(), MemError> {
        if self.min_share_shallow < 0.0
            || self.min_share_log < 0.0
            || self.min_share_shallow + self.min_share_log > 1.0 + 1e-12
        {
            return Err(MemError::InvalidConfig(format!(
                "shares {} + {} exceed 1",
                self.min_share_shallow, self.min_share_log
            )));
        }
        Ok(())
    }
}

/// One word request of a master: earliest issue cycle and target bank.
#[derive(Debug, Clone, Copy)]
pub struct BankRequest {
    pub issue: u64,
    pub bank: usize,
}

/// A master's in-order request stream (one outstanding request at a time).
#[derive(Debug, Clone)]
pub struct MasterStream {
    pub branch: Branch,
    pub requests: Vec<BankRequest>,
}

#[derive(Debug, Clone, Default)]
pub struct MasterStats {
    pub served: usize,
    pub stall_cycles: u64,
    /// Grant cycle of each served request, in order.
    pub grant_cycles: Vec<u64>,
}

/// Cycle-by-cycle simulation of the banked L1 arbitration: per bank and
/// cycle at most one grant; round-robin among the masters of a branch;
/// deficit round-robin between the two branches whenever both contend,
/// crediting each branch its configured share per contended cycle.
pub fn simulate_banks(
    n_banks: usize,
    masters: &[MasterStream],
    arb: ArbiterConfig,
    horizon: u64,
) -> Result<Vec<MasterStats>, MemError> {
    arb.validate()?;
    let n = masters.len();
    let mut next_req = vec![0usize; n];
    let mut stats: Vec<MasterStats> = vec![MasterStats::default(); n];
    // Per-bank state: deficit counters and a round-robin pointer per branch.
    let mut credit_sh = vec![0.0f64; n_banks];
    let mut credit_log = vec![0.0f64; n_banks];
    let mut rr = vec![[0usize; 2]; n_banks];

    for cycle in 0..horizon {
        // Pending request per master, if any.
        let mut pending: Vec<Option<usize>> = vec![None; n]; // bank
        for m in 0..n {
            if let Some(req) = masters[m].requests.get(next_req[m]) {
                if req.issue <= cycle {
                    pending[m] = Some(req.bank);
                }
            }
        }
        for bank in 0..n_banks {
            let cands = |branch: Branch| -> Vec<usize> {
                (0..n)
                    .filter(|&m| masters[m].branch == branch && pending[m] == Some(bank))
                    .collect()
            };
            let sh = cands(Branch::Shallow);
            let log = cands(Branch::Logarithmic);
            let branch = match (sh.is_empty(), log.is_empty()) {
                (true, true) => continue,
                (false, true) => Branch::Shallow,
                (true, false) => Branch::Logarithmic,
                (false, false) => {
                    // Both branches contend: accrue credits, grant the
                    // larger deficit, shallow priority on ties.
                    credit_sh[bank] += arb.min_share_shallow;
                    credit_log[bank] += arb.min_share_log;
                    if credit_log[bank] > credit_sh[bank] {
                        credit_log[bank] -= 1.0;
                        Branch::Logarithmic
                    } else {
                        credit_sh[bank] -= 1.0;
                        Branch::Shallow
                    }
                }
            };
            let group = if branch == Branch::Shallow { &sh } else { &log };
            let bi = if branch == Branch::Shallow { 0 } else { 1 };
            // Round-robin among the branch's masters.
            let ptr = rr[bank][bi];
            let m = *group
                .iter()
                .min_by_key(|&&m| (m + n - ptr % n) % n)
                .unwrap();
            rr[bank][bi] = (m + 1) % n;
            stats[m].served += 1;
            stats[m].grant_cycles.push(cycle);
            next_req[m] += 1;
            pending[m] = None;
        }
        for m in 0..n {
            if pending[m].is_some() {
                stats[m].stall_cycles += 1;
            }
        }
    }
    Ok(stats)
}

/// A 3-dimensionally strided word-access pattern of one master.
#[derive(Debug, Clone)]
pub struct AccessTrace {
    pub id: usize,
    pub branch: Branch,
    /// Start byte address.
    pub start: usize,
    /// Byte strides, outermost first.
    pub strides: [usize; 3],
    /// Iteration counts, outermost first.
    pub counts: [usize; 3],
    /// Cycle the first access becomes ready.
    pub issue: u64,
}

impl AccessTrace {
    /// Expand to per-word bank requests (bank = (byte/4) mod banks).
    pub fn expand(&self, banks: usize) -> Vec<BankRequest> {
        let mut out = Vec::with_capacity(self.counts.iter().product());
        for i0 in 0..self.counts[0] {
            for i1 in 0..self.counts[1] {
                for i2 in 0..self.counts[2] {
                    let addr = self.start
                        + i0 * self.strides[0]
                        + i1 * self.strides[1]
                        + i2 * self.strides[2];
                    out.push(BankRequest { issue: self.issue, bank: (addr / 4) % banks });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StreamStats {
    pub id: usize,
    pub served_words: usize,
    pub stall_cycles: u64,
}

/// Contention between strided streams on the 16-bank word-interleaved
/// TCDM under the configured arbiter.
pub fn tcdm_contention(
    traces: &[AccessTrace],
    arb: ArbiterConfig,
    horizon: u64,
) -> Result<Vec<StreamStats>, MemError> {
    let banks = 16;
    let masters: Vec<MasterStream> = traces
        .iter()
        .map(|t| MasterStream { branch: t.branch, requests: t.expand(banks) })
        .collect();
    let stats = simulate_banks(banks, &masters, arb, horizon)?;
    Ok(traces
        .iter()
        .zip(stats)
        .map(|(t, s)| StreamStats { id: t.id, served_words: s.served, stall_cycles: s.stall_cycles })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_invariants() {
        let l1 = level(MemoryLevelKind::L1Tcdm);
        assert_eq!(l1.banks, 16);
        let mram = level(MemoryLevelKind::MramWeight);
        assert_eq!(mram.read_latency, 9);
        assert!(!mram.writable_at_runtime);
        assert_eq!(mram.clock_divider, 0.5);
    }

    #[test]
    fn mram_single_beat() {
        assert_eq!(mram_stream(32), (256, 10)); // 9 + 1
    }

    #[test]
    fn mram_dense_benchmark_weights() {
        // 580,608 bits of benchmark weights -> 9 + 2268 cycles.
        let bytes = 580_608 / 8;
        assert_eq!(mram_stream(bytes).1, 9 + 2268);
    }

    #[test]
    fn port_cycles_examples() {
        let l1 = level(MemoryLevelKind::L1Tcdm);
        assert_eq!(port_cycles(&l1, 0), 1); // latency only
        assert_eq!(port_cycles(&l1, 36), 2); // 288-bit window: 1 + 1
        let mram = level(MemoryLevelKind::MramWeight);
        assert_eq!(port_cycles(&mram, 1024), 9 + 32);
    }

    #[test]
    fn single_stream_never_stalls() {
        let t = AccessTrace {
            id: 0,
            branch: Branch::Logarithmic,
            start: 0,
            strides: [64, 16, 4],
            counts: [4, 4, 4],
            issue: 0,
        };
        let s = tcdm_contention(&[t], ArbiterConfig::default(), 256).unwrap();
        assert_eq!(s[0].served_words, 64);
        assert_eq!(s[0].stall_cycles, 0);
    }

    #[test]
    fn eight_streams_one_bank_round_robin() {
        // 8 core streams hammering bank 0: each is served exactly every
        // 8th cycle.
        let traces: Vec<AccessTrace> = (0..8)
            .map(|id| AccessTrace {
                id,
                branch: Branch::Logarithmic,
                start: 0,
                strides: [64, 0, 0],
                counts: [8, 1, 1],
                issue: 0,
            })
            .collect();
        let masters: Vec<MasterStream> = traces
            .iter()
            .map(|t| MasterStream { branch: t.branch, requests: t.expand(16) })
            .collect();
        let stats = simulate_banks(16, &masters, ArbiterConfig::default(), 64).unwrap();
        for s in &stats {
            assert_eq!(s.served, 8);
            for w in s.grant_cycles.windows(2) {
                assert_eq!(w[1] - w[0], 8);
            }
        }
    }

    #[test]
    fn invalid_shares_rejected() {
        let arb = ArbiterConfig { min_share_shallow: 0.8, min_share_log: 0.3 };
        assert!(simulate_banks(2, &[], arb, 1).is_err());
    }

    #[test]
    fn work_conservation() {
        // A bank with pending work grants exactly once per cycle: two
        // saturating streams on one bank are served at one word/cycle total.
        let mk = |id, branch| AccessTrace {
            id,
            branch,
            start: 0,
            strides: [64, 0, 0],
            counts: [50, 1, 1],
            issue: 0,
        };
        let s = tcdm_contention(
            &[mk(0, Branch::Shallow), mk(1, Branch::Logarithmic)],
            ArbiterConfig::default(),
            100,
        )
        .unwrap();
        assert_eq!(s[0].served_words + s[1].served_words, 100);
    }
}
