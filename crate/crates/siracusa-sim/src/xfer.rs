//! DMA link cost model: time and energy of every data-movement path
//! between memory levels. Links are memoryless cost functions; the
//! double-buffering policy lives in the tile scheduler.

use thiserror::Error;

use crate::cal::CalibrationSet;
use crate::timing::OperatingPoint;

#[derive(Debug, Error)]
pub enum XferError {
    #[error("unknown link: {0}")]
    UnknownLink(String),
}

/// Every modeled data-movement path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkId {
    /// IO-DMA from off-chip Flash over HyperBus into L2.
    OffchipToL2,
    /// On-chip L3 MRAM into L2.
    L3MramToL2,
    /// Cluster-DMA between the IO-domain L2 and L1, through the 64-bit
    /// AXI clock-domain crossing.
    L2ToL1,
    /// Cluster-DMA between the in-cluster tile SRAM and L1 (no CDC).
    TileToL1,
    /// The 32-bit AXI CDC path used for 4 MiB page swaps.
    AxiCdc32,
    /// Dedicated 256-bit weight port from the MRAM macro into the
    /// accelerator.
    MramPort,
}

impl LinkId {
    pub fn name(self) -> &'static str {
        match self {
            LinkId::OffchipToL2 => "offchip_l2",
            LinkId::L3MramToL2 => "l3mram_l2",
            LinkId::L2ToL1 => "l2_l1",
            LinkId::TileToL1 => "tile_l1",
            LinkId::AxiCdc32 => "axi_cdc32",
            LinkId::MramPort => "mram_port",
        }
    }
}

/// One link: sustained bandwidth quoted at the nominal 360 MHz cluster
/// clock, per-transfer setup, and per-bit energy (read + transport +
/// write).
#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    /// Sustained bits/s at the nominal operating point.
    pub sustained_bw: f64,
    pub setup_cycles: u64,
    pub energy_per_bit: f64,
    /// On-chip links scale with the cluster clock; the off-chip HyperBus
    /// does not.
    pub scales_with_freq: bool,
}

pub const NOMINAL_FREQ: f64 = 360e6;

/// Build the link table from the calibration set.
pub fn link_table(cal: &CalibrationSet) -> Vec<Link> {
    let setup = cal.dma_setup_cycles() as u64;
    vec![
        Link {
            id: LinkId::OffchipToL2,
            sustained_bw: cal.offchip_bw(),
            setup_cycles: setup,
            energy_per_bit: cal.e_offchip(),
            scales_with_freq: false,
        },
        Link {
            id: LinkId::L3MramToL2,
            sustained_bw: cal.l3mram_port_bits() * NOMINAL_FREQ,
            setup_cycles: setup,
            energy_per_bit: cal.e_l3m_l2(),
            scales_with_freq: true,
        },
        Link {
            id: LinkId::L2ToL1,
            sustained_bw: 64.0 * cal.dma_eff_cdc() * NOMINAL_FREQ,
            setup_cycles: setup,
            energy_per_bit: cal.e_l2_l1(),
            scales_with_freq: true,
        },
        Link {
            id: LinkId::TileToL1,
            sustained_bw: 64.0 * cal.dma_eff_tile() * NOMINAL_FREQ,
            setup_cycles: setup,
            energy_per_bit: cal.e_tile_l1(),
            scales_with_freq: true,
        },
        Link {
            id: LinkId::AxiCdc32,
            sustained_bw: 32.0 * NOMINAL_FREQ,
            setup_cycles: setup,
            energy_per_bit: cal.e_l2_l1(),
            scales_with_freq: true,
        },
        Link {
            id: LinkId::MramPort,
            sustained_bw: 256.0 * NOMINAL_FREQ,
            setup_cycles: 9,
            energy_per_bit: cal.e_mram_read(),
            scales_with_freq: true,
        },
    ]
}

pub fn link(cal: &CalibrationSet, id: LinkId) -> Link {
    link_table(cal).into_iter().find(|l| l.id == id).unwrap()
}

/// Transfer time in seconds: setup plus width-limited streaming, with
/// on-chip bandwidth scaled to the operating point's cluster clock.
pub fn transfer_time(link: &Link, bytes: usize, opp: &OperatingPoint) -> f64 {
    let bw = if link.scales_with_freq {
        link.sustained_bw * opp.cluster_freq / NOMINAL_FREQ
    } else {
        link.sustained_bw
    };
    link.setup_cycles as f64 / opp.cluster_freq + bytes as f64 * 8.0 / bw
}

/// Transfer energy in joules (frequency-independent per bit).
pub fn transfer_energy(link: &Link, bytes: usize) -> f64 {
    bytes as f64 * 8.0 * link.energy_per_bit
}

/// Published bandwidth identities at a given cluster clock.
pub fn mram_port_peak(freq: f64) -> f64 {
    256.0 * freq
}

pub fn l1_aggregate_peak(freq: f64) -> f64 {
    16.0 * 32.0 * freq
}

pub fn cluster_dma_peak(freq: f64) -> f64 {
    64.0 * freq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cal::CalibrationSet;
    use crate::timing::OperatingPoint;

    fn setup() -> (CalibrationSet, OperatingPoint) {
        let cal = CalibrationSet::default();
        let opp = OperatingPoint::nominal(&cal);
        (cal, opp)
    }

    #[test]
    fn bandwidth_identities_at_nominal() {
        assert_eq!(mram_port_peak(360e6), 92.16e9);
        assert_eq!(l1_aggregate_peak(360e6), 184.32e9);
        assert_eq!(cluster_dma_peak(360e6), 23.04e9);
    }

    #[test]
    fn zero_bytes_costs_setup_only() {
        let (cal, opp) = setup();
        for l in link_table(&cal) {
            let t = transfer_time(&l, 0, &opp);
            assert_eq!(t, l.setup_cycles as f64 / opp.cluster_freq, "{:?}", l.id);
            assert_eq!(transfer_energy(&l, 0), 0.0);
        }
    }

    #[test]
    fn time_linearity_beyond_setup() {
        let (cal, opp) = setup();
        let l = link(&cal, LinkId::L2ToL1);
        let n = 4096;
        let t1 = transfer_time(&l, n, &opp);
        let t2 = transfer_time(&l, 2 * n, &opp);
        let bw = l.sustained_bw;
        assert!((t2 - t1 - n as f64 * 8.0 / bw).abs() < 1e-15);
    }

    #[test]
    fn energy_additivity() {
        let (cal, _) = setup();
        let l = link(&cal, LinkId::OffchipToL2);
        let e = |b| transfer_energy(&l, b);
        assert!((e(1000 + 2345) - (e(1000) + e(2345))).abs() < 1e-18);
    }

    #[test]
    fn offchip_time_is_frequency_independent() {
        let (cal, nom) = setup();
        let lp = OperatingPoint::low_power(&cal);
        let off = link(&cal, LinkId::OffchipToL2);
        let on = link(&cal, LinkId::L2ToL1);
        let n = 1 << 20;
        // Ignore setup for the comparison.
        let stream = |l: &Link, o: &OperatingPoint| transfer_time(l, n, o) - l.setup_cycles as f64 / o.cluster_freq;
        assert_eq!(stream(&off, &nom), stream(&off, &lp));
        let ratio = stream(&on, &lp) / stream(&on, &nom);
        assert!((ratio - 360.0 / 210.0).abs() < 1e-9);
    }

    #[test]
    fn cluster_dma_mib_example() {
        let (cal, opp) = setup();
        let l = link(&cal, LinkId::L2ToL1);
        let t = transfer_time(&l, 1 << 20, &opp) - l.setup_cycles as f64 / opp.cluster_freq;
        // 8.389e6 bits over the (efficiency-derated) 23.04 Gbit/s DMA
        // ceiling: within [365 us, 365 us / 0.8].
        assert!(t >= 8.389e6 / 23.04e9 && t <= 8.389e6 / 23.04e9 / cal.dma_eff_cdc() * 1.001, "{t}");
    }
}
